"""Gradient-step denoisers ``D = Id - grad g`` and the regularizer they are the prox of.

A denoiser here is anything exposing a potential ``g``, its gradient and a
certified Lipschitz bound ``L < 1`` on that gradient. From those three
surfaces the module derives the denoiser itself, its exact inverse (a
contraction fixed point), and the function ``phi`` for which the denoiser is
the proximity operator::

    phi(x) = g(u) - 0.5 * ||u - x||^2,   u = D^{-1}(x)
    grad phi(x) = D^{-1}(x) - x

All instances are immutable; every method is a pure function of its inputs.
"""

from __future__ import annotations

import math
from abc import ABC, abstractmethod

import numpy as np

from .core import ConvKernel, DimensionError, kernel_symbol, make_kernel

__all__ = [
    "ConfigError",
    "NonConvergenceError",
    "GradientStepDenoiser",
    "QuadraticGSDenoiser",
    "LinearGSDenoiser",
    "PointwiseGSDenoiser",
    "RelaxedDenoiser",
    "PenalizedDenoiser",
    "CoercivityPenalty",
    "apply_denoiser",
    "apply_relaxed",
    "invert_denoiser",
    "eval_phi",
    "grad_phi",
    "eval_penalty",
    "grad_penalty",
    "denoiser_from_dict",
    "make_denoiser",
]

INVERT_TOL = 1e-10
INVERT_MAX_ITER = 10_000


class ConfigError(ValueError):
    """Invalid parameter combination."""


class NonConvergenceError(RuntimeError):
    """An inner fixed-point loop ran out of iterations.

    The last residual is kept on the exception so callers can decide whether
    the point is outside the denoiser image or the budget was just too small.
    """

    def __init__(self, message, residual, iterations):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class GradientStepDenoiser(ABC):
    """Contract for ``D = Id - grad g`` with ``grad g`` certified ``L``-Lipschitz, ``L < 1``.

    Subclasses provide :meth:`energy` (a per-entry density summing to ``g``),
    :meth:`grad_g` and :meth:`hvp`. ``lower_bound`` is a declared lower bound
    of ``g``; ``global_bound`` says whether ``lipschitz`` holds on all of
    R^n, in which case ``h = 0.5||x||^2 - g`` is strongly convex everywhere
    and ``D`` maps R^n onto R^n.
    """

    sigma: float = 0.0
    lower_bound: float = 0.0
    global_bound: bool = True

    @property
    @abstractmethod
    def lipschitz(self) -> float:
        """Certified Lipschitz constant of ``grad g``."""

    @abstractmethod
    def energy(self, x: np.ndarray) -> np.ndarray:
        """Per-entry density whose sum is ``g(x)``."""

    @abstractmethod
    def grad_g(self, x: np.ndarray) -> np.ndarray:
        ...

    @abstractmethod
    def hvp(self, x: np.ndarray, v: np.ndarray) -> np.ndarray:
        """Hessian of ``g`` at ``x`` applied to ``v``."""

    @abstractmethod
    def to_dict(self) -> dict:
        ...

    def g(self, x) -> float:
        return float(np.sum(self.energy(np.asarray(x, dtype=np.float64))))

    def __call__(self, x):
        return apply_denoiser(self, x)

    def relaxed(self, alpha):
        return RelaxedDenoiser(self, alpha)

    def h(self, x) -> float:
        x = np.asarray(x, dtype=np.float64)
        return 0.5 * float(np.vdot(x, x)) - self.g(x)

    def __repr__(self):
        return f"{type(self).__name__}(L={self.lipschitz:.6g}, sigma={self.sigma:.6g})"


class QuadraticGSDenoiser(GradientStepDenoiser):
    """``g(x) = a/2 ||x||^2`` so that ``D(x) = (1 - a) x``; the closed-form test case."""

    def __init__(self, a, sigma=0.0):
        if not 0.0 <= a < 1.0:
            raise ConfigError(f"quadratic weight must lie in [0, 1), got {a}")
        self.a = float(a)
        self.sigma = float(sigma)

    @property
    def lipschitz(self):
        return self.a

    def energy(self, x):
        return 0.5 * self.a * x**2

    def grad_g(self, x):
        return self.a * np.asarray(x, dtype=np.float64)

    def hvp(self, x, v):
        return self.a * np.asarray(v, dtype=np.float64)

    def to_dict(self):
        return {"kind": "quadratic", "a": self.a, "sigma": self.sigma, "lipschitz": self.lipschitz}


class LinearGSDenoiser(GradientStepDenoiser):
    """Linear filter denoiser with ``g(x) = 0.5 ||x - W x||^2``.

    ``W = (1 - s) Id + s K`` for a convolution filter ``K`` and a scale
    ``s`` in (0, 1], so the residual operator is ``R = s (Id - K)`` and
    ``grad g = R^T R``. The certified constant is the exact spectral norm
    of ``R^T R`` on the ``shape`` grid, read off the FFT symbol.

    Parameters
    ----------
    filter : ConvKernel
        Convolution filter ``K``. Must fit inside ``shape``.
    shape : tuple of int
        Spatial grid ``(H, W)`` the denoiser acts on.
    scale : float
        Residual scale ``s``.
    sigma : float
        Noise level the denoiser is meant for (metadata).
    """

    def __init__(self, filter, shape, scale=1.0, sigma=0.0):
        if not 0.0 < scale <= 1.0:
            raise ConfigError(f"scale must lie in (0, 1], got {scale}")
        self.filter = filter if isinstance(filter, ConvKernel) else ConvKernel(filter)
        self.shape = (int(shape[0]), int(shape[1]))
        self.scale = float(scale)
        self.sigma = float(sigma)
        symbol = kernel_symbol(self.filter, self.shape)
        self._residual_symbol = self.scale * (1.0 - symbol)
        self._gram_symbol = np.abs(self._residual_symbol) ** 2
        self._lipschitz = float(self._gram_symbol.max())
        if self._lipschitz >= 1.0:
            raise ConfigError(
                f"||grad g||_Lip = {self._lipschitz:.6g} >= 1; lower the scale"
            )

    @classmethod
    def smoothing(cls, kernel, shape, lipschitz=0.9, sigma=0.0):
        """Pick the scale so that the certified constant equals ``lipschitz`` (capped at ``s = 1``)."""
        if not 0.0 < lipschitz < 1.0:
            raise ConfigError(f"target Lipschitz constant must lie in (0, 1), got {lipschitz}")
        peak = float(np.max(np.abs(1.0 - kernel_symbol(kernel, shape)) ** 2))
        scale = 1.0 if peak == 0.0 else min(1.0, math.sqrt(lipschitz / peak))
        return cls(kernel, shape, scale=scale, sigma=sigma)

    @classmethod
    def from_noise_level(cls, sigma, shape, lipschitz=0.9, width_per_sigma=20.0):
        """Gaussian smoothing denoiser whose filter width grows with ``sigma``."""
        std = max(0.5, width_per_sigma * float(sigma))
        size = 2 * int(math.ceil(3 * std)) + 1
        limit = min(shape[0], shape[1])
        size = min(size, limit if limit % 2 else limit - 1)
        return cls.smoothing(make_kernel("gaussian", std=std, size=size), shape, lipschitz, sigma)

    @property
    def lipschitz(self):
        return self._lipschitz

    def _check(self, x):
        if x.shape[:2] != self.shape:
            raise DimensionError(f"denoiser built for {self.shape}, got image {x.shape}")

    def _apply_symbol(self, symbol, x):
        x = np.asarray(x, dtype=np.float64)
        self._check(x)
        sym = symbol.reshape(symbol.shape + (1,) * (x.ndim - 2))
        return np.fft.ifft2(sym * np.fft.fft2(x, axes=(0, 1)), axes=(0, 1)).real

    def residual(self, x):
        """``R x = x - W x``."""
        return self._apply_symbol(self._residual_symbol, x)

    def energy(self, x):
        return 0.5 * self.residual(x) ** 2

    def grad_g(self, x):
        return self._apply_symbol(self._gram_symbol, x)

    def hvp(self, x, v):
        return self._apply_symbol(self._gram_symbol, v)

    @property
    def gram_symbol(self):
        """Eigenvalues of ``grad^2 g`` as the FFT symbol on the grid."""
        return self._gram_symbol.copy()

    def to_dict(self):
        return {
            "kind": "linear",
            "filter": self.filter.taps.tolist(),
            "shape": list(self.shape),
            "scale": self.scale,
            "sigma": self.sigma,
            "lipschitz": self.lipschitz,
        }


class PointwiseGSDenoiser(GradientStepDenoiser):
    """Separable nonconvex potential ``g(x) = sum_i psi(x_i)``.

    ``psi(t) = L s^2 (1 - cos(t / s))`` so ``psi''(t) = L cos(t / s)``: the
    Hessian is diagonal with entries in ``[-L, L]`` and ``g`` is nonconvex.
    """

    def __init__(self, amplitude=0.9, scale=1.0, sigma=0.0):
        if not 0.0 < amplitude < 1.0:
            raise ConfigError(f"amplitude must lie in (0, 1), got {amplitude}")
        if scale <= 0:
            raise ConfigError(f"scale must be positive, got {scale}")
        self.amplitude = float(amplitude)
        self.scale = float(scale)
        self.sigma = float(sigma)

    @classmethod
    def from_noise_level(cls, sigma, amplitude=0.9):
        if sigma <= 0:
            raise ConfigError(f"noise level must be positive, got {sigma}")
        return cls(amplitude=amplitude, scale=float(sigma), sigma=float(sigma))

    @property
    def lipschitz(self):
        return self.amplitude

    def energy(self, x):
        s = self.scale
        return self.amplitude * s * s * (1.0 - np.cos(np.asarray(x) / s))

    def grad_g(self, x):
        s = self.scale
        return self.amplitude * s * np.sin(np.asarray(x, dtype=np.float64) / s)

    def hvp(self, x, v):
        return self.amplitude * np.cos(np.asarray(x) / self.scale) * v

    def to_dict(self):
        return {
            "kind": "pointwise",
            "amplitude": self.amplitude,
            "scale": self.scale,
            "sigma": self.sigma,
            "lipschitz": self.lipschitz,
        }


class RelaxedDenoiser(GradientStepDenoiser):
    """``alpha D + (1 - alpha) Id``: again a gradient-step denoiser, for ``alpha g``."""

    def __init__(self, base, alpha):
        if not 0.0 < alpha <= 1.0:
            raise ConfigError(f"relaxation alpha must lie in (0, 1], got {alpha}")
        if alpha * base.lipschitz >= 1.0:
            raise ConfigError(f"alpha * L = {alpha * base.lipschitz:.6g} must be < 1")
        self.base = base
        self.alpha = float(alpha)
        self.sigma = base.sigma
        self.lower_bound = self.alpha * base.lower_bound
        self.global_bound = base.global_bound

    @property
    def lipschitz(self):
        return self.alpha * self.base.lipschitz

    def energy(self, x):
        return self.alpha * self.base.energy(x)

    def grad_g(self, x):
        return self.alpha * self.base.grad_g(x)

    def hvp(self, x, v):
        return self.alpha * self.base.hvp(x, v)

    def to_dict(self):
        return {"kind": "relaxed", "alpha": self.alpha, "base": self.base.to_dict(),
                "lipschitz": self.lipschitz}


class CoercivityPenalty:
    """``gamma * rho(||x - a||^2 - r)`` with ``rho(t) = max(t, 0)^3``.

    The center defaults to 1/2 everywhere and ``r`` to ``sqrt(n)``; both are
    resolved against the input size when left as ``None``.
    """

    def __init__(self, gamma=0.0, center=0.5, radius=None):
        if gamma < 0:
            raise ConfigError(f"penalty strength must be >= 0, got {gamma}")
        self.gamma = float(gamma)
        self.center = center
        self.radius = radius

    def _excess(self, x):
        d = np.asarray(x, dtype=np.float64) - self.center
        r = math.sqrt(d.size) if self.radius is None else self.radius
        return d, float(np.vdot(d, d)) - r

    def value(self, x):
        _, t = self._excess(x)
        return self.gamma * max(t, 0.0) ** 3

    def grad(self, x):
        d, t = self._excess(x)
        return 6.0 * self.gamma * max(t, 0.0) ** 2 * d

    def hvp(self, x, v):
        d, t = self._excess(x)
        t = max(t, 0.0)
        return 6.0 * self.gamma * (t * t * v + 4.0 * t * float(np.vdot(d, v)) * d)

    def curvature_bound(self, n, margin):
        """Sup of the Hessian norm over ``||x - a||^2 <= r + margin``."""
        r = math.sqrt(n) if self.radius is None else self.radius
        return 6.0 * self.gamma * (margin**2 + 4.0 * margin * (r + margin))

    def to_dict(self):
        return {"gamma": self.gamma, "center": self.center, "radius": self.radius}


class PenalizedDenoiser(GradientStepDenoiser):
    """``g + p`` for a coercivity penalty ``p``.

    The penalty Hessian grows without bound, so the certified constant only
    holds on the region ``||x - a||^2 <= r + margin`` and ``global_bound``
    is False. ``n`` is the number of entries the denoiser will act on.
    """

    def __init__(self, base, penalty, n, margin=1.0):
        self.base = base
        self.penalty = penalty
        self.n = int(n)
        self.margin = float(margin)
        self.sigma = base.sigma
        self.lower_bound = base.lower_bound
        self.global_bound = penalty.gamma == 0.0 and base.global_bound
        self._lipschitz = base.lipschitz + penalty.curvature_bound(self.n, self.margin)
        if self._lipschitz >= 1.0:
            raise ConfigError(f"penalized Lipschitz bound {self._lipschitz:.6g} >= 1")

    @property
    def lipschitz(self):
        return self._lipschitz

    def energy(self, x):
        e = np.array(self.base.energy(x), dtype=np.float64)
        e.flat[0] += self.penalty.value(x)
        return e

    def grad_g(self, x):
        return self.base.grad_g(x) + self.penalty.grad(x)

    def hvp(self, x, v):
        return self.base.hvp(x, v) + self.penalty.hvp(x, v)

    def to_dict(self):
        return {"kind": "penalized", "base": self.base.to_dict(), "penalty": self.penalty.to_dict(),
                "n": self.n, "margin": self.margin, "lipschitz": self.lipschitz}


# --------------------------------------------------------------------------
# operations
# --------------------------------------------------------------------------


def apply_denoiser(D, x):
    """``D(x) = x - grad g(x)``."""
    x = np.asarray(x, dtype=np.float64)
    grad = D.grad_g(x)
    if not np.all(np.isfinite(grad)):
        raise FloatingPointError("denoiser gradient is not finite")
    return x - grad


def apply_relaxed(D, alpha, x):
    """``alpha D(x) + (1 - alpha) x``, i.e. ``x - alpha grad g(x)``."""
    return apply_denoiser(RelaxedDenoiser(D, alpha), x)


def invert_denoiser(D, y, tol=INVERT_TOL, max_iter=INVERT_MAX_ITER):
    """Solve ``D(u) = y`` by the contraction ``u <- y + grad g(u)``.

    This is gradient descent with unit step on the strongly convex map
    ``u -> h(u) - <y, u>``; the iteration contracts at rate ``L``. The
    returned ``u`` satisfies ``||D(u) - y|| <= tol`` and therefore lies
    within ``tol / (1 - L)`` of the true preimage.

    Raises
    ------
    NonConvergenceError
        If ``max_iter`` iterations do not reach ``tol``.
    """
    y = np.asarray(y, dtype=np.float64)
    u = y.copy()
    res = math.inf
    for it in range(max_iter + 1):
        step = D.grad_g(u) + y
        res = float(np.linalg.norm(u - step))
        if not math.isfinite(res):
            raise NonConvergenceError("inversion diverged", res, it)
        if res <= tol:
            return u
        u = step
    raise NonConvergenceError(
        f"denoiser inversion stopped at residual {res:.3e} after {max_iter} iterations", res, max_iter
    )


def eval_phi(D, x, tol=INVERT_TOL, max_iter=INVERT_MAX_ITER):
    """Regularizer whose prox is ``D``: ``g(u) - 0.5 ||u - x||^2`` with ``u = D^{-1}(x)``.

    Inversion failures propagate as :class:`NonConvergenceError`; treating
    them as ``+inf`` is left to the caller.
    """
    x = np.asarray(x, dtype=np.float64)
    u = invert_denoiser(D, x, tol, max_iter)
    return phi_from_preimage(D, u, x)


def phi_from_preimage(D, u, x):
    """``phi(x)`` when a preimage ``u`` with ``D(u) = x`` is already known."""
    d = u - x
    return D.g(u) - 0.5 * float(np.vdot(d, d))


def grad_phi(D, x, tol=INVERT_TOL, max_iter=INVERT_MAX_ITER):
    """``grad phi(x) = D^{-1}(x) - x``."""
    x = np.asarray(x, dtype=np.float64)
    return invert_denoiser(D, x, tol, max_iter) - x


def eval_penalty(p, x):
    return p.value(x)


def grad_penalty(p, x):
    return p.grad(x)


def denoiser_from_dict(data):
    """Rebuild a denoiser serialized by ``to_dict``; the stored Lipschitz value is re-checked."""
    kind = data["kind"]
    if kind == "quadratic":
        D = QuadraticGSDenoiser(data["a"], data.get("sigma", 0.0))
    elif kind == "linear":
        D = LinearGSDenoiser(ConvKernel(np.asarray(data["filter"])), data["shape"],
                             data["scale"], data.get("sigma", 0.0))
    elif kind == "pointwise":
        D = PointwiseGSDenoiser(data["amplitude"], data["scale"], data.get("sigma", 0.0))
    elif kind == "relaxed":
        D = RelaxedDenoiser(denoiser_from_dict(data["base"]), data["alpha"])
    elif kind == "penalized":
        pen = data["penalty"]
        D = PenalizedDenoiser(denoiser_from_dict(data["base"]),
                              CoercivityPenalty(pen["gamma"], pen["center"], pen["radius"]),
                              data["n"], data["margin"])
    else:
        raise ConfigError(f"unknown denoiser kind {kind!r}")
    stored = data.get("lipschitz")
    if stored is not None and not math.isclose(stored, D.lipschitz, rel_tol=1e-9, abs_tol=1e-12):
        raise ConfigError(f"stored Lipschitz {stored} disagrees with recomputed {D.lipschitz}")
    return D


def make_denoiser(kind, sigma, shape=None, lipschitz=0.9):
    """Noise-level-indexed factory for the analytic instances.

    ``"pointwise"`` uses ``scale = sigma``; ``"linear"`` uses a Gaussian
    filter whose width grows with ``sigma`` and needs the spatial ``shape``.
    """
    if kind == "pointwise":
        return PointwiseGSDenoiser.from_noise_level(sigma, amplitude=lipschitz)
    if kind == "linear":
        if shape is None:
            raise ConfigError("linear denoiser needs the image shape")
        return LinearGSDenoiser.from_noise_level(sigma, shape[:2], lipschitz=lipschitz)
    raise ConfigError(f"unknown denoiser kind {kind!r}")
