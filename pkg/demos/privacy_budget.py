"""Choosing a noise multiplier for a training run.

Poisson sampling with rate q = B/N, T steps, and a target (epsilon, delta).
The accountant composes Renyi-DP of the sampled Gaussian over all steps and
converts to (epsilon, delta) at the best order.
"""

from spectral_dp.accountant import (
    SgmParams,
    budget_for_run,
    calibrate_sigma,
    steps_for_epochs,
    sigma_for_target,
)

N, B, delta = 10_000, 500, 1e-5
q = B / N
for epochs in (5, 15, 30):
    T = steps_for_epochs(epochs, N, B)
    sigma = sigma_for_target(2.0, delta, q, T)
    got = budget_for_run(SgmParams(q, sigma, T), delta)
    print(f"{epochs:2d} epochs = {T:3d} steps: sigma={sigma:.3f} gives eps={got.epsilon:.4f} at delta={delta:g}")

# For comparison, one un-subsampled Gaussian release calibrated the classic way.
print(f"single release at eps=0.5: sigma={calibrate_sigma(0.5, delta):.4f}")

# Budget grows with the number of steps at fixed noise.
sigma = 1.0
for T in (0, 50, 100, 200, 400):
    print(f"sigma=1, q={q}: {T:3d} steps -> eps={budget_for_run(SgmParams(q, sigma, T), delta).epsilon:.3f}")
