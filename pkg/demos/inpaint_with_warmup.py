"""Inpainting half of the pixels with PnP-DRS.

The data term is the indicator of agreement on observed pixels, which has
no gradient, so only the denoiser-first DRS applies. A few iterations at a
large noise level fill the holes before the main run.

Run: python3 demos/inpaint_with_warmup.py [output_dir]
"""

import sys
from pathlib import Path

from proxpnp.cli import INPAINT_DEFAULTS
from proxpnp.core import psnr, synthetic_image, write_image
from proxpnp.denoiser import make_denoiser
from proxpnp.fidelity import synthesize
from proxpnp.solver import SolverConfig, solve

out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_out/inpaint")
out.mkdir(parents=True, exist_ok=True)

x_true = synthetic_image(128, seed=0)
m = synthesize("mask", x_true, 0.0, seed=1, p=0.5)
x0 = m.initial_guess()
write_image(out / "masked.png", x0)
print(f"masked input PSNR {psnr(x0, x_true):.2f} dB")

lam = INPAINT_DEFAULTS["lam"]
warm = SolverConfig("drs", lam=lam, sigma=INPAINT_DEFAULTS["warmup_sigma"], alpha=0.5,
                    max_iter=INPAINT_DEFAULTS["warmup_iters"], override=True)
_, tw = solve(warm, make_denoiser("linear", warm.sigma, m.shape), m, x0)

cfg = SolverConfig("drs", lam=lam, sigma=INPAINT_DEFAULTS["sigma"], alpha=0.5, max_iter=INPAINT_DEFAULTS["max_iter"])
x, trace = solve(cfg, make_denoiser("linear", cfg.sigma, m.shape), m, tw.state, x_true)
print(f"{trace.stop_reason} after {len(trace)} iterations, restored PSNR {psnr(x, x_true):.2f} dB")
write_image(out / "restored.png", x)
