"""Measure the spectral norm of the denoiser residual Jacobian.

The solvers rely on ||Hess g|| <= L < 1. For the analytic denoisers L is
certified; here power iteration measures it on noisy images, the same way
one would audit a learned denoiser.

Run: python3 demos/jacobian_norms.py
"""

import numpy as np

from proxpnp.core import synthetic_image
from proxpnp.denoiser import make_denoiser
from proxpnp.spectral import JacobianProbe, max_spectral_over_corpus, power_iteration, spectral_table_csv

images = [synthetic_image(48, seed=s) for s in range(3)]
sigmas = [2.55 / 255, 7.65 / 255, 12.75 / 255]
table = {kind: max_spectral_over_corpus(lambda s, shape, kind=kind: make_denoiser(kind, s, shape),
                                        images, sigmas, iters=50)
         for kind in ("pointwise", "linear")}
print(spectral_table_csv(table))

# convergence of the estimate itself
D = make_denoiser("linear", 0.03, (48, 48))
est, hist = power_iteration(JacobianProbe(D, images[0]), iters=None, history=True)
print(f"linear: certified L = {D.lipschitz:.6f}, estimate {est:.6f} after {len(hist)} iterations")
print("first estimates:", np.round(hist[:5], 4))
