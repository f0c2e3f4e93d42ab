"""Fast invariant checks runnable without a test framework."""

from __future__ import annotations

from dataclasses import replace
from typing import Callable

import numpy as np

from . import accountant, layers, mechanism, spectral
from .data import SyntheticSpec, make_blobs
from .model import blob_mlp
from .rng import PURPOSE_CHECK, NoiseStream
from .trainer import TrainConfig, Trainer


def _rng(index: int) -> np.random.Generator:
    return NoiseStream(12345).child(PURPOSE_CHECK, index=index).generator()


def check_unitary() -> str:
    g = _rng(1)
    x = g.standard_normal(37)
    X = spectral.dft1(x)
    err = max(abs(np.linalg.norm(X) - np.linalg.norm(x)), np.max(np.abs(spectral.idft1(X) - x)))
    assert err < 1e-12, err
    y = g.standard_normal((6, 10))
    err2 = np.max(np.abs(spectral.idft2(spectral.dft2(y)) - y))
    assert err2 < 1e-12, err2
    return f"round-trip error {max(err, err2):.1e}"


def check_block_circulant() -> str:
    g = _rng(2)
    worst = 0.0
    for _ in range(20):
        p, q = (int(v) for v in g.integers(1, 5, 2))
        d = int(g.integers(2, 17))
        w = g.standard_normal((p, q, d))
        x = g.standard_normal(q * d)
        dense = np.block([[layers.circulant_matrix(w[i, j]) for j in range(q)] for i in range(p)])
        worst = max(worst, float(np.max(np.abs(layers.block_fc_forward(x, w) - dense @ x))))
    assert worst < 1e-10, worst
    return f"max deviation {worst:.1e}"


def check_clip_bound() -> str:
    g = _rng(3)
    for _ in range(50):
        F = g.standard_normal(16) + 1j * g.standard_normal(16)
        S = float(g.uniform(0.01, 5))
        assert np.linalg.norm(mechanism.clip_l2(F, S)) <= S + 1e-12
    return "50 vectors within bound"


def check_noise_law() -> str:
    rep = mechanism.noise_check(8, 4, trials=20_000, seed=7)
    assert rep.relative_error < 0.05, rep.relative_error
    return f"variance {rep.empirical:.4f} vs {rep.predicted:.4f}"


def check_accountant() -> str:
    for sigma in (0.7, 2.0):
        for alpha in (2.0, 7.0, 2.5):
            want = alpha / (2 * sigma**2)
            assert abs(accountant.rdp_sgm(1.0, sigma, alpha) - want) <= 1e-9 * want
    a = accountant.rdp_sgm(0.05, 1.1, 3.0)
    b = accountant._log_a_numeric(0.05, 1.1, 3.0) / 2.0
    assert abs(a - b) <= 1e-6 * a, (a, b)
    e1 = accountant.budget_for_run(accountant.SgmParams(0.01, 1.0, 100), 1e-5).epsilon
    e2 = accountant.budget_for_run(accountant.SgmParams(0.01, 1.0, 200), 1e-5).epsilon
    assert e2 >= e1
    return "q=1 closed form, integer/numeric agreement, monotone"


def check_degenerate_training() -> str:
    data = make_blobs(SyntheticSpec(samples_per_class=40, dim=8))
    base = TrainConfig(batch_size=16, epochs=1, learning_rate=0.5, clip=0.5, sigma=0.0, rho_fc=0.0, seed=3)
    a = Trainer(replace(base, mode="spectral_dp"), blob_mlp(8, 2), data)
    b = Trainer(replace(base, mode="non_private", clip_non_private=True), blob_mlp(8, 2), data)
    for _ in range(10):
        a.step()
        b.step()
    same = all(np.array_equal(x, y) for ga, gb in zip(a.state.params, b.state.params) for x, y in zip(ga, gb))
    assert same, "trajectories diverged"
    return "10 steps bit-identical"


CHECKS: dict[str, Callable[[], str]] = {
    "unitary transforms": check_unitary,
    "block-circulant product": check_block_circulant,
    "clipping bound": check_clip_bound,
    "filtered noise variance": check_noise_law,
    "accountant": check_accountant,
    "degenerate pipeline": check_degenerate_training,
}


def run_all():
    """Yields ``(name, passed, detail)`` for every check."""
    for name, fn in CHECKS.items():
        try:
            yield name, True, fn()
        except AssertionError as exc:
            yield name, False, f"assertion failed: {exc}"
        except Exception as exc:  # a crash is a failure too
            yield name, False, f"{type(exc).__name__}: {exc}"
