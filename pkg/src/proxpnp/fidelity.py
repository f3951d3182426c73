"""Data-fidelity terms ``f`` for deblurring, super-resolution and inpainting.

Quadratic models use ``f(x) = ||A x - y||^2 / (2 nu^2)`` with ``A`` diagonal
in the Fourier domain (blur) or a blur followed by decimation (super-
resolution). Inpainting uses the indicator of ``{x : M x = y}``. Every model
exposes ``apply``, ``adjoint``, ``eval_f``, ``grad_f``, ``lipschitz_f`` and
``prox_f``; the last one is exact in all three cases.
"""

from __future__ import annotations

import math

import numpy as np

from .core import ConvKernel, DimensionError, add_gaussian_noise, bernoulli_mask, conv_circular, kernel_symbol

__all__ = [
    "UnsupportedOperation",
    "DegradationModel",
    "BlurModel",
    "DownsampleModel",
    "MaskModel",
    "eval_f",
    "grad_f",
    "lipschitz_f",
    "prox_f",
    "synthesize",
    "model_from_dict",
]

MASK_ATOL = 1e-12


class UnsupportedOperation(TypeError):
    """The model does not provide this surface (e.g. a gradient of an indicator)."""


def _expand(symbol, x):
    return symbol.reshape(symbol.shape + (1,) * (x.ndim - 2))


def _finite(x, name="input"):
    x = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise FloatingPointError(f"{name} contains non-finite values")
    return x


class DegradationModel:
    """Shared surface of the three degradation models."""

    kind = "abstract"
    differentiable = True

    def __init__(self, y, nu):
        self.y = _finite(y, "observation")
        self.nu = float(nu)

    def residual(self, x):
        return self.apply(x) - self.y

    def eval_f(self, x):
        r = self.residual(_finite(x))
        return float(np.vdot(r, r)) / (2.0 * self.nu**2)

    def grad_f(self, x):
        return self.adjoint(self.residual(_finite(x))) / self.nu**2

    def initial_guess(self):
        return self.y.copy()


class BlurModel(DegradationModel):
    """Circular convolution ``A = H`` with Gaussian noise of level ``nu``."""

    kind = "blur"

    def __init__(self, kernel, y, nu):
        if nu <= 0:
            raise ValueError(f"noise level must be > 0 for a quadratic fidelity, got {nu}")
        super().__init__(y, nu)
        self.kernel = kernel
        self._symbol = kernel_symbol(kernel, self.y.shape)
        self._y_hat = np.fft.fft2(self.y, axes=(0, 1))

    @property
    def shape(self):
        return self.y.shape

    def _check(self, x):
        if x.shape != self.y.shape:
            raise DimensionError(f"expected image of shape {self.y.shape}, got {x.shape}")

    def apply(self, x):
        x = np.asarray(x, dtype=np.float64)
        self._check(x)
        return np.fft.ifft2(_expand(self._symbol, x) * np.fft.fft2(x, axes=(0, 1)), axes=(0, 1)).real

    def adjoint(self, z):
        z = np.asarray(z, dtype=np.float64)
        self._check(z)
        return np.fft.ifft2(_expand(np.conj(self._symbol), z) * np.fft.fft2(z, axes=(0, 1)), axes=(0, 1)).real

    def lipschitz_f(self):
        return float(np.max(np.abs(self._symbol) ** 2)) / self.nu**2

    def prox_f(self, tau_lam, x):
        """Per-frequency solve of ``(c H^T H + I) z = c H^T y + x`` with ``c = tau_lam / nu^2``."""
        if tau_lam <= 0:
            raise ValueError(f"prox parameter must be > 0, got {tau_lam}")
        x = _finite(x)
        self._check(x)
        c = tau_lam / self.nu**2
        h = _expand(self._symbol, x)
        num = c * np.conj(h) * self._y_hat + np.fft.fft2(x, axes=(0, 1))
        return np.fft.ifft2(num / (c * np.abs(h) ** 2 + 1.0), axes=(0, 1)).real

    def to_dict(self):
        return {"variant": "blur", "kernel": self.kernel.taps.tolist(), "nu": self.nu}


class DownsampleModel(DegradationModel):
    """``A = S H``: blur, then keep every ``scale``-th pixel starting at ``(0, 0)``.

    ``y`` lives on the low-resolution grid; the high-resolution grid is
    ``scale`` times larger along both spatial axes.
    """

    kind = "downsample"

    def __init__(self, kernel, scale, y, nu):
        if nu <= 0:
            raise ValueError(f"noise level must be > 0 for a quadratic fidelity, got {nu}")
        if int(scale) != scale or scale < 2:
            raise ValueError(f"scale must be an integer >= 2, got {scale}")
        super().__init__(y, nu)
        self.kernel = kernel
        self.scale = int(scale)
        s = self.scale
        self.hr_shape = (self.y.shape[0] * s, self.y.shape[1] * s) + self.y.shape[2:]
        self._symbol = kernel_symbol(kernel, self.hr_shape)
        # eigenvalues of S H H^T S^T on the low-resolution grid
        self._folded_power = self._fold(np.abs(self._symbol) ** 2)
        self._sty_hat = np.fft.fft2(self.upsample_zero(self.y), axes=(0, 1))

    @property
    def shape(self):
        return self.hr_shape

    def _fold(self, spec):
        """Low-resolution spectrum of ``S v`` from the high-resolution spectrum of ``v``."""
        s = self.scale
        h, w = spec.shape[0] // s, spec.shape[1] // s
        return spec.reshape((s, h, s, w) + spec.shape[2:]).sum(axis=(0, 2)) / s**2

    def _replicate(self, spec):
        """High-resolution spectrum of ``S^T w`` from the low-resolution spectrum of ``w``."""
        reps = (self.scale, self.scale) + (1,) * (spec.ndim - 2)
        return np.tile(spec, reps)

    def decimate(self, x):
        return x[:: self.scale, :: self.scale]

    def upsample_zero(self, z):
        """``S^T``: put ``z`` on the sampled sites and zeros elsewhere."""
        out = np.zeros((z.shape[0] * self.scale, z.shape[1] * self.scale) + z.shape[2:])
        out[:: self.scale, :: self.scale] = z
        return out

    def _check(self, x):
        if x.shape != self.hr_shape:
            raise DimensionError(f"expected image of shape {self.hr_shape}, got {x.shape}")

    def _conv(self, x, symbol):
        return np.fft.ifft2(_expand(symbol, x) * np.fft.fft2(x, axes=(0, 1)), axes=(0, 1)).real

    def apply(self, x):
        x = np.asarray(x, dtype=np.float64)
        self._check(x)
        return self.decimate(self._conv(x, self._symbol))

    def adjoint(self, z):
        z = np.asarray(z, dtype=np.float64)
        if z.shape != self.y.shape:
            raise DimensionError(f"expected low-resolution image of shape {self.y.shape}, got {z.shape}")
        return self._conv(self.upsample_zero(z), np.conj(self._symbol))

    def lipschitz_f(self):
        return float(np.max(self._folded_power)) / self.nu**2

    def prox_f(self, tau_lam, x):
        """Solve ``(c H^T S^T S H + I) z = x + c H^T S^T y`` with one division per aliasing class.

        By the Woodbury identity the inverse equals
        ``I - c H^T S^T (I + c S H H^T S^T)^{-1} S H``, and ``S H H^T S^T`` is
        diagonal on the low-resolution grid with entries
        ``(1/s^2) sum_aliases |H|^2``.
        """
        if tau_lam <= 0:
            raise ValueError(f"prox parameter must be > 0, got {tau_lam}")
        x = _finite(x)
        self._check(x)
        c = tau_lam / self.nu**2
        h = _expand(self._symbol, x)
        r_hat = np.fft.fft2(x, axes=(0, 1)) + c * np.conj(h) * self._sty_hat
        q = self._fold(h * r_hat) / (1.0 + c * _expand(self._folded_power, x))
        z_hat = r_hat - c * np.conj(h) * self._replicate(q)
        return np.fft.ifft2(z_hat, axes=(0, 1)).real

    def initial_guess(self):
        """Nearest-neighbour upsampling of the observation."""
        return np.repeat(np.repeat(self.y, self.scale, axis=0), self.scale, axis=1)

    def to_dict(self):
        return {"variant": "downsample", "kernel": self.kernel.taps.tolist(), "scale": self.scale,
                "nu": self.nu}


class MaskModel(DegradationModel):
    """Inpainting: ``f`` is the indicator of ``{x : x = y on observed pixels}``.

    ``eval_f`` returns 0 or ``inf`` instead of raising so that envelopes
    stay computable. ``nu`` is carried as metadata only.
    """

    kind = "mask"
    differentiable = False

    def __init__(self, mask, y, nu=0.0):
        if nu < 0:
            raise ValueError(f"noise level must be >= 0, got {nu}")
        mask = np.asarray(mask, dtype=np.float64)
        if not np.all((mask == 0.0) | (mask == 1.0)):
            raise ValueError("mask entries must be exactly 0 or 1")
        y = np.asarray(y, dtype=np.float64)
        if mask.shape != y.shape[:2]:
            raise DimensionError(f"mask {mask.shape} does not match observation {y.shape}")
        super().__init__(y, nu)
        self.mask = mask
        self._m = _expand(mask, y)
        self.y = self._m * self.y

    @property
    def shape(self):
        return self.y.shape

    def apply(self, x):
        return self._m * np.asarray(x, dtype=np.float64)

    def adjoint(self, z):
        return self.apply(z)

    def eval_f(self, x):
        gap = np.abs(self.apply(_finite(x)) - self.y)
        return 0.0 if gap.size == 0 or float(gap.max()) <= MASK_ATOL else math.inf

    def grad_f(self, x):
        raise UnsupportedOperation("the inpainting fidelity is an indicator and has no gradient")

    def lipschitz_f(self):
        raise UnsupportedOperation("the inpainting fidelity is an indicator and has no Lipschitz gradient")

    def prox_f(self, tau_lam, x):
        """Projection: observed pixels from ``y``, the rest from ``x``."""
        x = _finite(x)
        if x.shape != self.y.shape:
            raise DimensionError(f"expected image of shape {self.y.shape}, got {x.shape}")
        return self.y + (1.0 - self._m) * x

    def to_dict(self):
        return {"variant": "mask", "nu": self.nu, "observed_fraction": float(self.mask.mean())}


def eval_f(m, x):
    return m.eval_f(x)


def grad_f(m, x):
    return m.grad_f(x)


def lipschitz_f(m):
    return m.lipschitz_f()


def prox_f(m, tau_lam, x):
    return m.prox_f(tau_lam, x)


def synthesize(variant, x_true, nu, seed=0, kernel=None, scale=2, p=0.5):
    """Degrade a ground-truth image and return the matching model.

    Parameters
    ----------
    variant : {"blur", "downsample", "mask"}
    x_true : ndarray
        Clean image on the high-resolution grid.
    nu : float
        Noise standard deviation (``0`` allowed for ``"mask"``).
    seed : int
        Seeds both the noise and, for ``"mask"``, the Bernoulli pattern.
    """
    x_true = np.asarray(x_true, dtype=np.float64)
    rng = np.random.default_rng(seed)
    noise_seed, mask_seed = rng.integers(0, 2**63 - 1, size=2)
    if variant == "blur":
        y = add_gaussian_noise(conv_circular(x_true, kernel), nu, noise_seed)
        return BlurModel(kernel, y, nu)
    if variant == "downsample":
        blurred = conv_circular(x_true, kernel)[::scale, ::scale]
        return DownsampleModel(kernel, scale, add_gaussian_noise(blurred, nu, noise_seed), nu)
    if variant == "mask":
        mask = bernoulli_mask(x_true.shape, p, mask_seed)
        y = add_gaussian_noise(x_true, nu, noise_seed)
        return MaskModel(mask, y, nu)
    raise ValueError(f"unknown degradation variant {variant!r}")


def model_from_dict(data, y, mask=None):
    """Rebuild a model from its JSON description and the observation image."""
    variant = data["variant"]
    if variant == "blur":
        return BlurModel(ConvKernel(np.asarray(data["kernel"])), y, data["nu"])
    if variant == "downsample":
        return DownsampleModel(ConvKernel(np.asarray(data["kernel"])), data["scale"], y, data["nu"])
    if variant == "mask":
        if mask is None:
            raise ValueError("mask model needs the mask image")
        return MaskModel(mask, y, data.get("nu", 0.0))
    raise ValueError(f"unknown degradation variant {variant!r}")
