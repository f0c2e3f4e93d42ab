"""Command-line interface: ``spectral-dp {train,eval,account,noise-check,bench,selftest}``.

Exit codes: 0 success, 1 numeric or invariant failure, 2 I/O or schema failure.
"""

from __future__ import annotations

import argparse
import copy
import json
import logging
import math
import sys
import time
from pathlib import Path

import jsonschema

from . import accountant, checkpoint, data, layers, mechanism, model, selftest
from .rng import PURPOSE_CHECK, NoiseStream
from .trainer import MODES, NumericFailure, TrainConfig, Trainer, evaluate

EXIT_OK = 0
EXIT_NUMERIC = 1
EXIT_IO = 2

logger = logging.getLogger("spectral_dp")

PRESETS = {
    "model1": model.model1,
    "model1_dense": model.model1_dense,
    "small_convnet": lambda: model.small_convnet(hw=28),
}

DEFAULT_CONFIG = {
    "model": "model1",
    "train": {
        "batch_size": 500,
        "epochs": 15,
        "learning_rate": 0.01,
        "clip": 0.5,
        "target_epsilon": 2.0,
        "rho_conv": 0.5,
        "rho_fc": 0.75,
        "seed": 0,
        "chunk_size": 256,
        "workers": 1,
    },
    "data": {"kind": "mnist", "dir": None, "train_subset": 10000, "test_subset": None, "normalize": True},
    "delta": 1e-5,
    "mode": "spectral_dp",
    "out": "runs/default",
}

_pos_int = {"type": "integer", "minimum": 1}
_ratio = {"type": "number", "minimum": 0, "exclusiveMaximum": 1}

LAYER_SCHEMA = {
    "type": "object",
    "required": ["kind"],
    "properties": {
        "kind": {"enum": list(model.ALL_KINDS)},
        "out": _pos_int,
        "block": _pos_int,
        "bias": {"type": "boolean"},
        "out_channels": _pos_int,
        "kernel": _pos_int,
        "padding": {"type": "integer", "minimum": 0},
    },
    "additionalProperties": False,
}

CONFIG_SCHEMA = {
    "type": "object",
    "properties": {
        "model": {
            "oneOf": [
                {"enum": sorted(PRESETS)},
                {
                    "type": "object",
                    "required": ["input_shape", "layers", "classes"],
                    "properties": {
                        "input_shape": {"type": "array", "items": _pos_int, "minItems": 3, "maxItems": 3},
                        "layers": {"type": "array", "items": LAYER_SCHEMA, "minItems": 1},
                        "classes": _pos_int,
                    },
                    "additionalProperties": False,
                },
            ]
        },
        "train": {
            "type": "object",
            "properties": {
                "batch_size": _pos_int,
                "epochs": {"type": "number", "exclusiveMinimum": 0},
                "learning_rate": {"type": "number", "minimum": 0},
                "clip": {
                    "oneOf": [
                        {"type": "number", "exclusiveMinimum": 0},
                        {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0}, "minItems": 1},
                    ]
                },
                "sigma": {"type": ["number", "null"], "minimum": 0},
                "target_epsilon": {"type": ["number", "null"], "exclusiveMinimum": 0},
                "rho_conv": _ratio,
                "rho_fc": _ratio,
                "seed": {"type": "integer", "minimum": 0},
                "chunk_size": _pos_int,
                "workers": _pos_int,
                "clip_non_private": {"type": "boolean"},
            },
            "additionalProperties": False,
        },
        "data": {
            "type": "object",
            "properties": {
                "kind": {"enum": ["mnist", "blobs"]},
                "dir": {"type": ["string", "null"]},
                "train_subset": {"type": ["integer", "null"], "minimum": 1},
                "test_subset": {"type": ["integer", "null"], "minimum": 1},
                "normalize": {"type": "boolean"},
                "classes": _pos_int,
                "samples_per_class": _pos_int,
                "dim": _pos_int,
                "separation": {"type": "number", "exclusiveMinimum": 0},
                "seed": {"type": "integer", "minimum": 0},
                "test_fraction": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
            },
            "additionalProperties": False,
        },
        "delta": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
        "mode": {"enum": list(MODES)},
        "out": {"type": "string"},
    },
    "additionalProperties": False,
}


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


# --------------------------------------------------------------------------
# config handling
# --------------------------------------------------------------------------


def _merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def _path_of(err: jsonschema.ValidationError) -> str:
    parts = []
    for p in err.absolute_path:
        parts.append(f"[{p}]" if isinstance(p, int) else (("." if parts else "") + str(p)))
    return "".join(parts) or "<root>"


def validate_config(cfg: dict) -> None:
    validator = jsonschema.Draft7Validator(CONFIG_SCHEMA)
    errors = sorted(validator.iter_errors(cfg), key=lambda e: list(e.absolute_path))
    if errors:
        err = errors[0]
        raise CliError(f"config error at {_path_of(err)}: {err.message}", EXIT_IO)


def load_config(path, args) -> dict:
    raw = {}
    if path is not None:
        try:
            raw = json.loads(Path(path).read_text(encoding="utf-8"))
        except OSError as exc:
            raise CliError(f"cannot read config {path}: {exc}", EXIT_IO) from exc
        except json.JSONDecodeError as exc:
            raise CliError(f"config {path} is not valid JSON: {exc}", EXIT_IO) from exc
        if not isinstance(raw, dict):
            raise CliError("config error at <root>: expected an object", EXIT_IO)
        validate_config(raw)
    cfg = _merge(DEFAULT_CONFIG, raw)
    if raw.get("data", {}).get("kind") == "blobs":
        # mnist-only defaults do not carry over to synthetic data
        for key in ("train_subset", "test_subset"):
            cfg["data"][key] = raw["data"].get(key)
    if "train" in raw and ("sigma" in raw["train"]) and "target_epsilon" not in raw["train"]:
        cfg["train"]["target_epsilon"] = None
    if getattr(args, "seed", None) is not None:
        cfg["train"]["seed"] = args.seed
    if getattr(args, "workers", None) is not None:
        cfg["train"]["workers"] = args.workers
    if getattr(args, "delta", None) is not None:
        cfg["delta"] = args.delta
    if getattr(args, "mode", None) is not None:
        cfg["mode"] = args.mode
    if getattr(args, "out", None) is not None:
        cfg["out"] = args.out
    validate_config(cfg)
    return cfg


def build_spec(cfg: dict) -> model.ModelSpec:
    m = cfg["model"]
    try:
        spec = PRESETS[m]() if isinstance(m, str) else model.ModelSpec.from_dict(m)
        model.Model(spec)
    except ValueError as exc:
        raise CliError(f"config error at model: {exc}", EXIT_IO) from exc
    return spec


def train_config(cfg: dict, n: int) -> TrainConfig:
    t = dict(cfg["train"])
    clip = t.pop("clip")
    tc = TrainConfig(clip=tuple(clip) if isinstance(clip, list) else clip, delta=cfg["delta"], mode=cfg["mode"], dataset_size=n, **t)
    try:
        tc.validate(n)
    except ValueError as exc:
        raise CliError(f"config error at train: {exc}", EXIT_IO) from exc
    return tc


def load_data(cfg: dict, split: str) -> data.Dataset:
    d = cfg["data"]
    if d.get("kind", "mnist") == "blobs":
        fields = {k: d[k] for k in ("classes", "samples_per_class", "dim", "separation", "seed") if k in d}
        tr, te = data.train_test_split(data.make_blobs(data.SyntheticSpec(**fields)), d.get("test_fraction", 0.25))
        ds = tr if split == "train" else te
    else:
        try:
            ds = data.load_mnist(d.get("dir"), split)
        except FileNotFoundError as exc:
            raise CliError(
                f"{exc}; put the four MNIST IDX files there or set ${data.DATA_DIR_ENV}", EXIT_IO
            ) from exc
        except (OSError, data.IdxParseError) as exc:
            raise CliError(f"cannot read MNIST: {exc}", EXIT_IO) from exc
        limit = d.get("train_subset" if split == "train" else "test_subset")
        if limit is not None:
            ds = ds.head(limit)
        if d.get("normalize", True):
            ds = data.normalize(ds, data.MNIST_MEAN, data.MNIST_STD)
    return ds


def _json_line(obj) -> str:
    return json.dumps(obj, sort_keys=False, allow_nan=False) + "\n"


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------


def cmd_train(args) -> int:
    cfg = load_config(args.config, args)
    spec = build_spec(cfg)
    train_set = load_data(cfg, "train")
    test_set = load_data(cfg, "test")
    tc = train_config(cfg, len(train_set))
    out = Path(cfg["out"])
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise CliError(f"cannot create output directory {out}: {exc}", EXIT_IO) from exc

    state = None
    if args.resume is not None:
        try:
            ck_spec, state, _ = checkpoint.load(args.resume)
        except (OSError, checkpoint.CheckpointError) as exc:
            raise CliError(f"cannot load checkpoint {args.resume}: {exc}", EXIT_IO) from exc
        if ck_spec != spec:
            raise CliError("checkpoint model does not match the configured model", EXIT_IO)

    trainer = Trainer(tc, spec, train_set, test_set, state)
    metrics_path = out / "metrics.jsonl"
    ckpt_path = out / "checkpoint.ckpt"
    lines = []

    def on_epoch(rec):
        lines.append(_json_line(rec.to_dict()))
        print(lines[-1], end="", flush=True)
        checkpoint.save(ckpt_path, spec, trainer.state, cfg)

    try:
        records = trainer.fit(on_epoch=on_epoch, timing=args.timing)
    except NumericFailure as exc:
        print(f"numeric failure at step {exc.step}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    checkpoint.atomic_write(metrics_path, "".join(lines).encode("utf-8"))
    checkpoint.atomic_write(out / "config.json", (json.dumps(cfg, indent=2, sort_keys=True) + "\n").encode("utf-8"))
    final = records[-1] if records else None
    summary = {
        "summary": True,
        "steps": trainer.state.step,
        "accuracy": final.accuracy if final else trainer.evaluate(),
        "epsilon": trainer.epsilon(),
        "delta": tc.delta,
        "sigma": trainer.sigma,
    }
    print(_json_line(summary), end="")
    return EXIT_OK


def cmd_eval(args) -> int:
    try:
        spec, state, saved = checkpoint.load(args.checkpoint)
    except (OSError, checkpoint.CheckpointError) as exc:
        raise CliError(f"cannot load checkpoint {args.checkpoint}: {exc}", EXIT_IO) from exc
    cfg = load_config(args.config, args) if args.config else _merge(DEFAULT_CONFIG, saved or {})
    if args.data_dir is not None:
        cfg["data"]["dir"] = args.data_dir
    test_set = load_data(cfg, "test")
    acc = evaluate(state.params, spec, test_set)
    print(f"{acc:.6f}")
    return EXIT_OK


def cmd_account(args) -> int:
    if args.steps is not None:
        steps = args.steps
        q = args.q
    else:
        if None in (args.epochs, args.batch_size, args.dataset_size):
            raise CliError("give --steps, or all of --epochs, --batch-size and --dataset-size", EXIT_IO)
        steps = accountant.steps_for_epochs(args.epochs, args.dataset_size, args.batch_size)
        q = args.q if args.q is not None else args.batch_size / args.dataset_size
    if q is None:
        raise CliError("sampling rate --q is required with --steps", EXIT_IO)
    delta = args.delta if args.delta is not None else 1e-5
    try:
        accountant.SgmParams(q, args.sigma, steps)
        if not 0 < delta < 1:
            raise ValueError("delta must lie in (0, 1)")
    except ValueError as exc:
        raise CliError(str(exc), EXIT_IO) from exc
    orders = accountant.DEFAULT_ORDERS
    if steps:
        curve = accountant.compose(accountant.rdp_curve(q, args.sigma, orders), steps)
    else:
        curve = accountant.RdpCurve(orders, tuple(0.0 for _ in orders))
    print(f"q={q:g} sigma={args.sigma:g} steps={steps} delta={delta:g}")
    print(f"{'alpha':>8} {'rdp':>14} {'epsilon':>14}")
    log_inv = math.log(1.0 / delta)
    for a, e in zip(curve.orders, curve.eps):
        print(f"{a:>8g} {e:>14.6g} {e + log_inv / (a - 1):>14.6g}")
    best = accountant.rdp_to_dp(curve, delta)
    print(f"epsilon={best.epsilon:.6g} delta={delta:g} order={best.order:g}")
    return EXIT_OK


def cmd_noise_check(args) -> int:
    if not 1 <= args.k <= args.n:
        raise CliError("need 1 <= K <= N", EXIT_IO)
    if args.dims not in (1, 2):
        raise CliError("dims must be 1 or 2", EXIT_IO)
    if args.trials < 1 or args.sigma <= 0 or args.sensitivity <= 0:
        raise CliError("trials, sigma and S must be positive", EXIT_IO)
    rep = mechanism.noise_check(args.n, args.k, args.sigma, args.sensitivity, args.trials, args.dims, args.seed)
    for line in rep.lines():
        print(line)
    if args.trials >= 100_000 and rep.relative_error > 0.05:
        print("FAIL: relative error above 5%", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


def _time(fn, repeats: int) -> float:
    best = math.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def cmd_bench(args) -> int:
    g = NoiseStream(args.seed).child(PURPOSE_CHECK).generator()
    d = args.kernel
    print(f"kernel={d} channels={args.channels} batch={args.batch} (best of {args.repeats})")
    print(f"{'n':>6} {'direct_s':>12} {'fft_s':>12} {'faster':>8}")
    crossover = None
    for n in args.sizes:
        X = g.standard_normal((args.batch, args.channels, n, n))
        W = g.standard_normal((args.channels, args.channels, d, d))
        pad = d // 2
        t_direct = _time(lambda: layers.conv2d_forward(X, W, pad), args.repeats)
        t_fft = _time(lambda: layers.conv2d_forward_fft(X, W, pad), args.repeats)
        winner = "fft" if t_fft < t_direct else "direct"
        if winner == "fft" and crossover is None:
            crossover = n
        print(f"{n:>6} {t_direct:>12.6f} {t_fft:>12.6f} {winner:>8}")
    print(f"crossover: {'n=' + str(crossover) if crossover else 'none in the tested range'} (log n vs d^2 = {d * d})")
    return EXIT_OK


def cmd_selftest(args) -> int:
    failed = 0
    for name, ok, detail in selftest.run_all():
        print(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
        failed += not ok
    return EXIT_NUMERIC if failed else EXIT_OK


# --------------------------------------------------------------------------
# entry point
# --------------------------------------------------------------------------


def _sizes(text: str):
    try:
        sizes = [int(s) for s in text.split(",") if s]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad size list {text!r}") from exc
    if not sizes or min(sizes) < 1:
        raise argparse.ArgumentTypeError("sizes must be positive integers")
    return sizes


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="spectral-dp", description="Private training with Fourier-domain noise and filtering, plus privacy accounting.")
    p.add_argument("--defaults", action="store_true", help="print the default run config and exit")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress at INFO level")
    sub = p.add_subparsers(dest="command")

    def common(sp):
        sp.add_argument("--config", help="JSON run config")
        sp.add_argument("--seed", type=int, help="override train.seed")
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--workers", type=int, help="threads for per-sample gradients (results do not depend on it)")
        sp.add_argument("--delta", type=float, help="override delta")
        sp.add_argument("--mode", choices=MODES)

    t = sub.add_parser("train", help="train a model and write metrics and a checkpoint")
    common(t)
    t.add_argument("--resume", help="continue from this checkpoint")
    t.add_argument("--timing", action="store_true", help="record wall time per epoch in the metrics")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="accuracy of a checkpoint on the test split")
    e.add_argument("checkpoint")
    common(e)
    e.add_argument("--data-dir", help="MNIST directory (default: config or $SPECTRAL_DP_DATA)")
    e.set_defaults(func=cmd_eval)

    a = sub.add_parser("account", help="privacy spent by a sampled Gaussian run")
    a.add_argument("--q", type=float, help="sampling rate; or give --batch-size and --dataset-size")
    a.add_argument("--sigma", type=float, required=True, help="noise multiplier")
    a.add_argument("--steps", type=int, help="number of steps; or give --epochs")
    a.add_argument("--epochs", type=float)
    a.add_argument("--batch-size", type=int)
    a.add_argument("--dataset-size", type=int)
    a.add_argument("--delta", type=float)
    a.set_defaults(func=cmd_account)

    n = sub.add_parser("noise-check", help="Monte-Carlo check of the filtered noise variance")
    n.add_argument("--n", "-N", type=int, default=8)
    n.add_argument("--k", "-K", type=int, default=4)
    n.add_argument("--sigma", type=float, default=1.0)
    n.add_argument("--sensitivity", "-S", type=float, default=1.0)
    n.add_argument("--trials", type=int, default=100_000)
    n.add_argument("--dims", type=int, default=1, help="1 or 2")
    n.add_argument("--seed", type=int, default=0)
    n.set_defaults(func=cmd_noise_check)

    b = sub.add_parser("bench", help="time FFT-based against direct convolution")
    b.add_argument("--sizes", type=_sizes, default=[4, 8, 16, 32, 64, 128], help="comma-separated input sides")
    b.add_argument("--kernel", type=int, default=3)
    b.add_argument("--channels", type=int, default=4)
    b.add_argument("--batch", type=int, default=8)
    b.add_argument("--repeats", type=int, default=3)
    b.add_argument("--seed", type=int, default=0)
    b.set_defaults(func=cmd_bench)

    s = sub.add_parser("selftest", help="run the built-in invariant checks")
    s.set_defaults(func=cmd_selftest)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    if args.defaults:
        print(json.dumps(DEFAULT_CONFIG, indent=2))
        return EXIT_OK
    if args.command is None:
        parser.print_help()
        return EXIT_IO
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except NumericFailure as exc:
        print(f"numeric failure at step {exc.step}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
