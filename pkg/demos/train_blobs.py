"""Private training on a small synthetic problem.

Three trainings of the same block-circulant network on Gaussian blobs: no
privacy, DP-SGD (noise on the weights' gradients), and Spectral-DP (noise on
their Fourier coefficients followed by a low-pass filter).  Both private runs
are calibrated to the same (epsilon, delta).
"""

from dataclasses import replace

from spectral_dp import SyntheticSpec, TrainConfig, make_blobs, train
from spectral_dp.data import train_test_split
from spectral_dp.model import blob_mlp

data = make_blobs(SyntheticSpec(classes=4, samples_per_class=500, dim=16, seed=3))
train_set, test_set = train_test_split(data)
spec = blob_mlp(16, 4, hidden=32, block=8)

base = TrainConfig(batch_size=100, epochs=10, learning_rate=2.0, clip=1.0, target_epsilon=2.0, rho_fc=0.25, seed=0)
for mode in ("non_private", "dp_sgd", "spectral_dp"):
    _, records = train(replace(base, mode=mode), spec, train_set, test_set, timing=False)
    last = records[-1]
    eps = "n/a" if last.epsilon is None else f"{last.epsilon:.3f}"
    print(f"{mode:12s} test accuracy {last.accuracy:.3f}  epsilon {eps}")
