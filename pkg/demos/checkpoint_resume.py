"""Stopping and resuming a private run without changing its trajectory.

Noise and batch sampling are keyed by (seed, step), so a checkpoint only
needs the weights, the step counter and the privacy ledger.
"""

import tempfile
from pathlib import Path

import numpy as np

from spectral_dp import SyntheticSpec, TrainConfig, Trainer, make_blobs
from spectral_dp import checkpoint
from spectral_dp.model import blob_mlp

data = make_blobs(SyntheticSpec(samples_per_class=200, dim=8))
spec = blob_mlp(8, 2)
cfg = TrainConfig(batch_size=50, epochs=2, learning_rate=1.0, clip=1.0, sigma=1.0, rho_fc=0.25, seed=5)

straight = Trainer(cfg, spec, data)
for _ in range(12):
    straight.step()

first = Trainer(cfg, spec, data)
for _ in range(5):
    first.step()
with tempfile.TemporaryDirectory() as tmp:
    path = Path(tmp) / "run.ckpt"
    checkpoint.save(path, spec, first.state)
    print(f"checkpoint: {path.stat().st_size} bytes at step {first.state.step}")
    _, state, _ = checkpoint.load(path)

resumed = Trainer(cfg, spec, data, state=state)
for _ in range(7):
    resumed.step()

same = all(np.array_equal(a, b) for ga, gb in zip(straight.state.params, resumed.state.params) for a, b in zip(ga, gb))
print(f"resumed run identical to uninterrupted run: {same}")
print(f"epsilon after 12 steps: {resumed.epsilon():.4f}")
