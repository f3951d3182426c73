"""A gradient-step denoiser is the proximal map of an explicit regularizer.

We build the two analytic denoisers, evaluate the regularizer phi through
the inverse of D, and check by brute force on a 2-D grid that D(y) really
minimizes 0.5 ||y - z||^2 + phi(z).

Run: python3 demos/denoiser_is_a_prox.py
"""

import numpy as np

from proxpnp.core import ConvKernel
from proxpnp.denoiser import LinearGSDenoiser, PointwiseGSDenoiser, apply_denoiser, eval_phi, grad_phi
from proxpnp.oracle import batched_phi, refined_prox

rng = np.random.default_rng(0)

denoisers = {
    # psi(t) = L s^2 (1 - cos(t / s)): nonconvex, curvature in [-L, L]
    "pointwise": PointwiseGSDenoiser(amplitude=0.5, scale=0.2),
    # quadratic g built from a 1x1 filter, so everything is scalar per pixel
    "linear": LinearGSDenoiser(ConvKernel(np.array([[0.4]])), (1, 2), scale=0.8),
}

for name, D in denoisers.items():
    print(f"--- {name} denoiser, L = {D.lipschitz:.3f}")
    phi = batched_phi(D, (1, 2))
    for y in rng.uniform(0, 1, (3, 2)):
        d = apply_denoiser(D, y.reshape(1, 2)).ravel()
        z = refined_prox(phi, y, [-1.0, -1.0], [2.0, 2.0], 1e-4)
        print(f"y = {y.round(4)}  D(y) = {d.round(6)}  grid argmin = {z.round(6)}  "
              f"gap = {np.linalg.norm(z - d):.1e}")

# the Moreau identity grad phi(D(x)) = x - D(x) on a full image
D = PointwiseGSDenoiser.from_noise_level(0.05)
x = rng.uniform(0, 1, (32, 32))
d = apply_denoiser(D, x)
print("Moreau residual on a 32x32 image:", np.linalg.norm(grad_phi(D, d) + d - x))
print("phi(D(x)) =", eval_phi(D, d))
