"""Plug-and-play splitting with gradient-step denoisers and an explicit regularizer."""

from .core import ConvKernel, conv_circular, make_kernel, psnr, synthetic_image
from .denoiser import (
    LinearGSDenoiser,
    PointwiseGSDenoiser,
    QuadraticGSDenoiser,
    RelaxedDenoiser,
    apply_denoiser,
    apply_relaxed,
    eval_phi,
    grad_phi,
    invert_denoiser,
    make_denoiser,
)
from .fidelity import BlurModel, DownsampleModel, MaskModel, synthesize
from .solver import SolverConfig, pnp_admm, pnp_drs, pnp_drs_diff, pnp_pgd, solve, validate

__version__ = "0.1.0"
