"""Private training loops.

Every step:

1. Poisson-sample a batch, each example kept with probability ``q = B/N``.
2. Per example and per trainable layer, compute the gradient (spectral for
   block-circulant and conv layers in ``spectral_dp`` mode), clip it to
   ``C_l``, and sum over the batch.
3. Add Gaussian noise with standard deviation ``sigma * C``,
   ``C = sqrt(sum_l C_l^2)``, to every real coordinate (real and imaginary
   parts count separately).
4. Low-pass filter each block / filter spectrum, invert, take the real part,
   and take a gradient step ``W -= lr / B * g``.

``dp_sgd`` runs the same loop on real signal-domain gradients without
filtering; ``non_private`` skips the noise (and, unless
``clip_non_private`` is set, the clipping).

Per-example work is split into fixed-size chunks that may run on a thread
pool.  Chunk boundaries do not depend on the worker count and partial sums
are reduced in chunk order, so results are bit-identical for any number of
workers.
"""

from __future__ import annotations

import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np

from . import accountant
from .data import Dataset
from .layers import softmax_cross_entropy
from .mechanism import clip_factor, complex_noise
from .model import SIGNAL, SPECTRAL, Model, ModelSpec
from .rng import PURPOSE_NOISE, PURPOSE_SAMPLING, NoiseStream

logger = logging.getLogger(__name__)

MODES = ("spectral_dp", "dp_sgd", "non_private")


class NumericFailure(ArithmeticError):
    """Non-finite gradient or parameter encountered during training."""

    def __init__(self, message: str, step: Optional[int] = None, layer: Optional[int] = None):
        super().__init__(message)
        self.step = step
        self.layer = layer


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 500
    epochs: float = 1.0
    learning_rate: float = 0.01
    clip: object = 0.1  # float, or one float per trainable layer
    sigma: Optional[float] = None
    target_epsilon: Optional[float] = None
    delta: float = 1e-5
    rho_conv: float = 0.5
    rho_fc: float = 0.75
    seed: int = 0
    mode: str = "spectral_dp"
    chunk_size: int = 256
    workers: int = 1
    clip_non_private: bool = False
    dataset_size: Optional[int] = None

    def validate(self, n: Optional[int] = None) -> None:
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        n = self.dataset_size if n is None else n
        if n is not None and self.batch_size > n:
            raise ValueError(f"batch_size {self.batch_size} exceeds dataset size {n}")
        if not self.epochs > 0:
            raise ValueError("epochs must be > 0")
        if not self.learning_rate >= 0:
            raise ValueError("learning_rate must be >= 0")
        clips = [self.clip] if np.isscalar(self.clip) else list(self.clip)
        if any(not (c is not None and c > 0) for c in clips):
            raise ValueError(f"clipping norms must be > 0, got {self.clip}")
        for name in ("rho_conv", "rho_fc"):
            if not 0 <= getattr(self, name) < 1:
                raise ValueError(f"{name} must lie in [0, 1)")
        if self.sigma is not None and not self.sigma >= 0:
            raise ValueError("sigma must be >= 0")
        if self.mode != "non_private" and self.sigma is None and self.target_epsilon is None:
            raise ValueError("private modes need sigma or target_epsilon")
        if not 0 < self.delta < 1:
            raise ValueError("delta must lie in (0, 1)")
        if self.chunk_size < 1 or self.workers < 1:
            raise ValueError("chunk_size and workers must be >= 1")

    def layer_clips(self, n_layers: int) -> list:
        if np.isscalar(self.clip):
            return [float(self.clip)] * n_layers
        clips = [float(c) for c in self.clip]
        if len(clips) != n_layers:
            raise ValueError(f"{len(clips)} clipping norms for {n_layers} trainable layers")
        return clips

    @property
    def domain(self) -> str:
        return SIGNAL if self.mode == "dp_sgd" else SPECTRAL


@dataclass(frozen=True)
class MetricsRecord:
    epoch: int
    loss: float
    accuracy: Optional[float]
    epsilon: Optional[float]
    delta: float
    seconds: Optional[float]
    step: int

    def to_dict(self) -> dict:
        """The published metrics fields (``step`` is kept internal)."""
        d = asdict(self)
        d.pop("step")
        return d


@dataclass
class TrainState:
    params: list
    step: int = 0
    ledger: list = field(default_factory=list)  # one (q, sigma) entry per noise event


# --------------------------------------------------------------------------
# spec-level building blocks
# --------------------------------------------------------------------------


def sgm_sample_batch(n: int, q: float, stream: NoiseStream) -> np.ndarray:
    """Indices of a Poisson sample: each of ``n`` examples kept with probability ``q``."""
    if not 0 < q <= 1:
        raise ValueError(f"sampling rate must lie in (0, 1], got {q}")
    return np.flatnonzero(stream.uniform(n) < q)


def _layer_rhos(model: Model, cfg: TrainConfig) -> list:
    return [cfg.rho_conv if l.kind == "conv" else cfg.rho_fc for l in model.param_layers]


def per_sample_clipped_spectral_grads(model: Model, params, example, clips: Sequence[float], domain: str = SPECTRAL):
    """Clipped gradient of one ``(image, label)`` pair, one list of arrays per layer.

    Each layer's gradient is rescaled to norm at most ``clips[l]``.
    """
    image, label = example
    _, grads = model.loss_and_grads(np.asarray(image)[None], np.asarray([label]), params, domain)
    out = []
    for l, (g, c) in enumerate(zip(grads, clips)):
        g = [a[0] for a in g]
        norm = math.sqrt(sum(float(np.sum(np.abs(a) ** 2)) for a in g))
        if not math.isfinite(norm):
            raise NumericFailure(f"non-finite gradient in trainable layer {l}", layer=l)
        f = float(clip_factor(norm, c))
        out.append([a * f for a in g])
    return out


def _noise_like(arr_shape, is_complex: bool, std: float, stream: NoiseStream) -> np.ndarray:
    if is_complex:
        return complex_noise(arr_shape, std, stream)
    return std * stream.normal(arr_shape)


def _perturb(summed, complex_flags, std: float, seed: int, step: int):
    out = []
    for l, (group, cplx) in enumerate(zip(summed, complex_flags)):
        noisy = []
        for a_idx, a in enumerate(group):
            stream = NoiseStream(seed).child(PURPOSE_NOISE, step, l * 8 + a_idx)
            noisy.append(a + _noise_like(a.shape, cplx, std, stream))
        out.append(noisy)
    return out


def aggregate_and_perturb(per_sample, C: float, sigma: float, seed: int, step: int = 0, template=None):
    """Sum clipped per-sample gradient sets and add ``N(0, sigma^2 C^2)`` noise.

    ``per_sample`` is a list (over examples) of per-layer lists of arrays.
    For an empty batch pass ``template`` (same structure, any values): the
    result is then pure noise.
    """
    if per_sample:
        first = per_sample[0]
        summed = [[np.array(a, copy=True) for a in g] for g in first]
        for s in per_sample[1:]:
            for gs, gn in zip(summed, s):
                for a, b in zip(gs, gn):
                    a += b
    else:
        if template is None:
            raise ValueError("empty batch needs a template for the gradient structure")
        logger.info("empty batch at step %d: releasing pure noise", step)
        summed = [[np.zeros_like(a) for a in g] for g in template]
    flags = [any(np.iscomplexobj(a) for a in g) for g in summed]
    return _perturb(summed, flags, sigma * C, seed, step)


def filter_invert_step(model: Model, noisy, rhos: Sequence[float], params, lr: float, batch_size: int, domain: str = SPECTRAL):
    """Filter, invert and apply ``W -= lr / B * g`` for each trainable layer."""
    new = []
    for layer, rep, rho, group in zip(model.param_layers, noisy, rhos, params):
        grads = layer.to_update(rep, rho, domain)
        with np.errstate(over="ignore", invalid="ignore"):  # callers check finiteness
            new.append([w - (lr / batch_size) * g for w, g in zip(group, grads)])
    return new


# --------------------------------------------------------------------------
# trainer
# --------------------------------------------------------------------------


def _epoch_end_step(epoch: int, n: int, b: int) -> int:
    return accountant.steps_for_epochs(epoch, n, b)


class Trainer:
    """Stateful driver of the training loop.  ``state`` may come from a checkpoint."""

    def __init__(self, config: TrainConfig, spec: ModelSpec, train_set: Dataset, test_set: Optional[Dataset] = None, state: Optional[TrainState] = None):
        config.validate(len(train_set))
        self.cfg = config
        self.spec = spec
        self.model = Model(spec)
        self.train_set = train_set
        self.test_set = test_set
        self.n = len(train_set)
        self.q = config.batch_size / self.n
        self.total_steps = accountant.steps_for_epochs(config.epochs, self.n, config.batch_size)
        self.clips = config.layer_clips(len(self.model.param_layers))
        self.C = math.sqrt(sum(c * c for c in self.clips))
        self.rhos = _layer_rhos(self.model, config)
        self.sigma = self._resolve_sigma()
        self.x_all = self.model.prepare(train_set.images)
        self.state = state if state is not None else TrainState(self.model.init_params(config.seed))
        self._flags = [l.is_complex(config.domain) for l in self.model.param_layers]
        self._shapes = [l.grad_shapes(config.domain) for l in self.model.param_layers]

    def _resolve_sigma(self) -> float:
        cfg = self.cfg
        if cfg.mode == "non_private":
            return 0.0
        if cfg.sigma is not None:
            return float(cfg.sigma)
        sigma = accountant.sigma_for_target(cfg.target_epsilon, cfg.delta, self.q, self.total_steps)
        logger.info("sigma=%.4f meets epsilon=%g over %d steps", sigma, cfg.target_epsilon, self.total_steps)
        return sigma

    # -- one chunk of examples -------------------------------------------
    def _chunk(self, idx: np.ndarray, params):
        x = self.x_all[idx]
        y = self.train_set.labels[idx]
        logits, caches = self.model.forward(x, params)
        loss, dlogits = softmax_cross_entropy(logits, y)
        gcaches = self.model.backward(dlogits, caches)
        clip = self.cfg.mode != "non_private" or self.cfg.clip_non_private
        sums = []
        for l, (layer, g, c) in enumerate(zip(self.model.param_layers, gcaches, self.clips)):
            norms = np.sqrt(layer.norms_sq(g, self.cfg.domain))
            if not np.all(np.isfinite(norms)):
                raise NumericFailure(f"non-finite gradient in trainable layer {l}", self.state.step, l)
            factors = clip_factor(norms, c) if clip else np.ones_like(norms)
            sums.append(layer.clipped_sum(g, factors, self.cfg.domain))
        return float(np.sum(loss)), sums

    def step(self):
        """One training step; returns ``(summed loss, realised batch size)``."""
        cfg, state = self.cfg, self.state
        t = state.step
        idx = sgm_sample_batch(self.n, self.q, NoiseStream(cfg.seed).child(PURPOSE_SAMPLING, t))
        chunks = [idx[s : s + cfg.chunk_size] for s in range(0, idx.size, cfg.chunk_size)]
        params = state.params
        if cfg.workers > 1 and len(chunks) > 1:
            with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
                results = list(pool.map(lambda c: self._chunk(c, params), chunks))
        else:
            results = [self._chunk(c, params) for c in chunks]

        loss = 0.0
        if results:
            summed = results[0][1]
            loss = results[0][0]
            for part_loss, part in results[1:]:
                loss += part_loss
                summed = [[a + b for a, b in zip(ga, gb)] for ga, gb in zip(summed, part)]
        else:
            logger.info("empty batch at step %d", t)
            summed = [[np.zeros(s, dtype=complex if f else float) for s in shapes] for shapes, f in zip(self._shapes, self._flags)]

        if cfg.mode == "non_private":
            noisy, rhos = summed, [0.0] * len(summed)
        else:
            noisy = _perturb(summed, self._flags, self.sigma * self.C, cfg.seed, t)
            rhos = self.rhos if cfg.mode == "spectral_dp" else [0.0] * len(summed)
            state.ledger.append((self.q, self.sigma))
        new = filter_invert_step(self.model, noisy, rhos, params, cfg.learning_rate, cfg.batch_size, cfg.domain)
        for l, group in enumerate(new):
            if not all(np.all(np.isfinite(a)) for a in group):
                raise NumericFailure(f"non-finite parameters after update in trainable layer {l}", t, l)
        state.params = new
        state.step = t + 1
        return loss, idx.size

    def epsilon(self) -> Optional[float]:
        if self.cfg.mode == "non_private" or self.sigma == 0:
            return None
        return ledger_epsilon(self.state.ledger, self.cfg.delta)

    def evaluate(self) -> Optional[float]:
        if self.test_set is None:
            return None
        return evaluate(self.state.params, self.spec, self.test_set)

    def fit(self, on_epoch: Optional[Callable[[MetricsRecord], None]] = None, timing: bool = True) -> list:
        records = []
        epoch = 0
        while _epoch_end_step(epoch + 1, self.n, self.cfg.batch_size) <= self.state.step and self.state.step > 0:
            epoch += 1
        while self.state.step < self.total_steps:
            epoch += 1
            end = min(_epoch_end_step(epoch, self.n, self.cfg.batch_size), self.total_steps)
            t0 = time.perf_counter()
            loss_sum, count = 0.0, 0
            while self.state.step < end:
                l, c = self.step()
                loss_sum += l
                count += c
            rec = MetricsRecord(
                epoch=epoch,
                loss=loss_sum / max(count, 1),
                accuracy=self.evaluate(),
                epsilon=self.epsilon(),
                delta=self.cfg.delta,
                seconds=(time.perf_counter() - t0) if timing else None,
                step=self.state.step,
            )
            logger.info("epoch %d: %s", epoch, rec)
            records.append(rec)
            if on_epoch is not None:
                on_epoch(rec)
        return records


def ledger_epsilon(ledger, delta: float) -> float:
    """Epsilon spent by a list of ``(q, sigma)`` sampled-Gaussian events."""
    if not ledger:
        return accountant.budget_for_run(accountant.SgmParams(1.0, 1.0, 0), delta).epsilon
    groups = {}
    for ev in ledger:
        groups[ev] = groups.get(ev, 0) + 1
    total = None
    for (q, sigma), count in sorted(groups.items()):
        c = accountant.compose(accountant.rdp_curve(q, sigma), count)
        total = c if total is None else total + c
    return accountant.rdp_to_dp(total, delta).epsilon


def train(config: TrainConfig, spec: ModelSpec, dataset: Dataset, test_set: Optional[Dataset] = None, timing: bool = True):
    """Run the configured number of epochs; returns ``(params, metrics)``."""
    trainer = Trainer(config, spec, dataset, test_set)
    records = trainer.fit(timing=timing)
    return trainer.state.params, records


def train_dpsgd_baseline(config: TrainConfig, spec: ModelSpec, dataset: Dataset, test_set: Optional[Dataset] = None, timing: bool = True):
    """DP-SGD: signal-domain clipping and noise, no filtering, same accountant."""
    return train(replace(config, mode="dp_sgd"), spec, dataset, test_set, timing)


def evaluate(params, spec: ModelSpec, testset: Dataset) -> float:
    """Fraction of ``testset`` classified correctly."""
    model = Model(spec)
    if len(testset) == 0:
        raise ValueError("empty test set")
    logits = model.logits(model.prepare(testset.images), params)
    return float(np.mean(np.argmax(logits, axis=1) == testset.labels))
