"""Matrix-free spectral norm of the residual Jacobian ``J_(Id - D) = grad^2 g``.

The Hessian is symmetric, so the power method applied to it converges to
the eigenvalue of largest magnitude. The readout is ``||A v||`` for the
current unit vector ``v``: it never exceeds ``||A||`` and, by
Cauchy-Schwarz, does not decrease from one iteration to the next.
"""

from __future__ import annotations

import csv
import io
import math

import numpy as np

__all__ = [
    "JacobianProbe",
    "power_iteration",
    "max_spectral_over_corpus",
    "along_trajectory_check",
    "spectral_table_csv",
]

CONVERGENCE_TOL = 1e-10
CONVERGENCE_MAX_ITER = 10_000


class JacobianProbe:
    """Hessian-vector products of ``g`` at a fixed point ``x``.

    Parameters
    ----------
    D : GradientStepDenoiser
    x : ndarray
        Point where the Jacobian is taken.
    mode : {"analytic", "fd"}
        ``"analytic"`` calls ``D.hvp``; ``"fd"`` uses central differences
        of ``grad_g`` along the normalized direction with step ``h``.
    h : float
    """

    def __init__(self, D, x, mode="analytic", h=1e-4):
        if mode not in ("analytic", "fd"):
            raise ValueError(f"unknown probe mode {mode!r}")
        if h <= 0:
            raise ValueError(f"finite-difference step must be > 0, got {h}")
        x = np.asarray(x, dtype=np.float64)
        if not np.all(np.isfinite(x)):
            raise FloatingPointError("probe point is not finite")
        self.D = D
        self.x = x
        self.mode = mode
        self.h = float(h)

    @property
    def shape(self):
        return self.x.shape

    def __call__(self, v):
        v = np.asarray(v, dtype=np.float64)
        if self.mode == "analytic":
            return self.D.hvp(self.x, v)
        nv = float(np.linalg.norm(v))
        if nv == 0.0:
            return np.zeros_like(v)
        d = v / nv
        gp = self.D.grad_g(self.x + self.h * d)
        gm = self.D.grad_g(self.x - self.h * d)
        return (gp - gm) * (nv / (2.0 * self.h))


def power_iteration(probe, iters=50, seed=0, tol=CONVERGENCE_TOL, max_iter=CONVERGENCE_MAX_ITER,
                    history=False):
    """Estimate the spectral norm of the symmetric operator ``probe``.

    Parameters
    ----------
    probe : callable
        Linear map acting on arrays of ``probe.shape``.
    iters : int or None
        Fixed number of iterations; ``None`` runs until two successive
        estimates differ by less than ``tol`` (or ``max_iter`` iterations).
    seed : int
        Seeds the Gaussian starting vector.
    history : bool
        Also return the list of per-iteration estimates.

    Returns
    -------
    float or (float, list)
    """
    if iters is not None and iters < 1:
        raise ValueError(f"iters must be >= 1, got {iters}")
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(probe.shape)
    while not np.any(v):
        v = rng.standard_normal(probe.shape)
    v /= np.linalg.norm(v)
    budget = max_iter if iters is None else iters
    est = 0.0
    hist = []
    for _ in range(budget):
        w = probe(v)
        if not np.all(np.isfinite(w)):
            raise FloatingPointError("probe returned non-finite values")
        prev, est = est, float(np.linalg.norm(w))
        hist.append(est)
        if est == 0.0:
            break
        v = w / est
        if iters is None and len(hist) > 1 and abs(est - prev) < tol:
            break
    return (est, hist) if history else est


def max_spectral_over_corpus(D, images, noise_levels, iters=50, seed=0, mode="analytic"):
    """Per noise level, the largest Jacobian norm over noisy versions of ``images``.

    ``D`` is either a fixed denoiser or a callable ``(sigma, shape) -> denoiser``.
    Each image is perturbed by white noise of the given level (seeded per
    image and level) before probing.

    Returns
    -------
    dict
        ``{sigma: max estimate}``.
    """
    images = list(images)
    if not images:
        raise ValueError("corpus is empty")
    table = {}
    for j, sigma in enumerate(noise_levels):
        best = 0.0
        for i, img in enumerate(images):
            img = np.asarray(img, dtype=np.float64)
            den = D(sigma, img.shape) if callable(D) and not hasattr(D, "grad_g") else D
            noisy = img + sigma * np.random.default_rng([seed, i, j]).standard_normal(img.shape)
            est = power_iteration(JacobianProbe(den, noisy, mode), iters, seed=seed)
            best = max(best, est)
        table[float(sigma)] = best
    return table


def along_trajectory_check(points, D, iters=50, seed=0, mode="analytic", threshold=1.0):
    """Largest Jacobian norm over iterate snapshots; passes iff below ``threshold``.

    An empty snapshot list passes vacuously with status ``"no data"``.
    """
    points = list(points)
    if not points:
        return {"status": "no data", "passed": True, "count": 0, "max": None}
    worst = -math.inf
    for p in points:
        worst = max(worst, power_iteration(JacobianProbe(D, p, mode), iters, seed=seed))
    ok = worst < threshold
    return {"status": "pass" if ok else "fail", "passed": ok, "count": len(points), "max": worst}


def spectral_table_csv(rows):
    """CSV with one row per denoiser variant and one column per noise level.

    ``rows`` maps a variant name to ``{sigma: value}``; all rows must share
    the same noise levels.
    """
    names = list(rows)
    sigmas = sorted(rows[names[0]]) if names else []
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["denoiser"] + [f"{s:.6g}" for s in sigmas])
    for name in names:
        w.writerow([name] + [repr(float(rows[name][s])) for s in sigmas])
    return buf.getvalue()
