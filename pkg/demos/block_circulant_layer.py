"""A block-circulant fully connected layer, computed two ways.

Each d x d block of the weight matrix is circulant, so it is described by
one length-d vector and multiplies an input block through an FFT.  This
script builds the dense matrix explicitly and checks that both routes agree,
then shows the parameter saving.
"""

import numpy as np

from spectral_dp.layers import block_fc_forward, block_fc_spectral_weight_grads, circulant_matrix
from spectral_dp.spectral import idft1, real_part

rng = np.random.default_rng(0)
p, q, d = 3, 4, 8
w = rng.standard_normal((p, q, d))
x = rng.standard_normal(q * d)

dense = np.block([[circulant_matrix(w[i, j]) for j in range(q)] for i in range(p)])
fast = block_fc_forward(x, w)
print("first circulant block:\n", np.round(circulant_matrix(w[0, 0])[:4, :4], 2))
print(f"max |FFT path - dense| = {np.max(np.abs(fast - dense @ x)):.2e}")
print(f"parameters: dense {dense.size}, circulant {w.size} ({dense.size // w.size}x fewer)")

# The weight gradient for an upstream gradient g is also a per-block product
# in the Fourier domain.  Back in the signal domain it equals the gradient of
# g . (W x) with respect to each defining vector.
g = rng.standard_normal(p * d)
G_hat = block_fc_spectral_weight_grads(g[None], x[None], d)[0]
grad_w = real_part(idft1(G_hat))
eps = 1e-6
w2 = w.copy()
w2[1, 2, 5] += eps
numeric = (g @ block_fc_forward(x, w2) - g @ fast) / eps
print(f"d/dw[1,2,5]: spectral {grad_w[1, 2, 5]:.6f}, finite difference {numeric:.6f}")
