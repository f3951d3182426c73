"""Independent checks: grid-search prox, finite differences, and trace audits.

Nothing here reuses the solver or denoiser code paths it checks beyond the
public ``energy``/``grad_g`` surfaces of a denoiser. The batched regularizer
used by the grid search has its own inversion loop.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .denoiser import NonConvergenceError, grad_phi

__all__ = [
    "GridSpec",
    "batched_phi",
    "brute_force_prox",
    "refined_prox",
    "finite_diff_check",
    "descent_audit",
    "loglog_slope",
    "pgd_rate_audit",
    "stationarity_audit",
    "equivalence_audit",
]

MAX_GRID_POINTS = 10**7
RESIDUAL_FLOOR = 1e-24


@dataclass(frozen=True)
class GridSpec:
    """Regular grid on a box in dimension ``n <= 3``.

    ``lower`` and ``upper`` are per-coordinate bounds; ``delta`` the spacing.
    """

    lower: tuple
    upper: tuple
    delta: float

    def __post_init__(self):
        lo = tuple(float(v) for v in np.atleast_1d(self.lower))
        hi = tuple(float(v) for v in np.atleast_1d(self.upper))
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)
        if len(lo) != len(hi) or not 1 <= len(lo) <= 3:
            raise ValueError(f"grid dimension must be 1, 2 or 3 with matching bounds, got {lo}, {hi}")
        if self.delta <= 0:
            raise ValueError(f"grid spacing must be > 0, got {self.delta}")
        if any(h < l for l, h in zip(lo, hi)):
            raise ValueError("upper bounds must not be below lower bounds")
        if self.size > MAX_GRID_POINTS:
            raise ValueError(f"grid has {self.size} points, more than {MAX_GRID_POINTS}")

    @property
    def n(self):
        return len(self.lower)

    def axes(self):
        return [l + self.delta * np.arange(int(math.floor((h - l) / self.delta + 1e-9)) + 1)
                for l, h in zip(self.lower, self.upper)]

    @property
    def size(self):
        return int(np.prod([math.floor((h - l) / self.delta + 1e-9) + 1
                            for l, h in zip(self.lower, self.upper)]))

    def points(self):
        """All grid points as an array of shape ``(n, N)``."""
        mesh = np.meshgrid(*self.axes(), indexing="ij")
        return np.stack([m.ravel() for m in mesh])


def batched_phi(D, layout, tol=1e-12, max_iter=10_000):
    """Vectorized regularizer for grid search.

    ``layout`` is the image shape the denoiser expects for one point (its
    size must equal the grid dimension). Points arrive as ``(n, N)``; they
    are stacked along a trailing axis, inverted jointly by the contraction
    ``u <- y + grad g(u)``, and ``phi = g(u) - 0.5 ||u - y||^2`` is returned
    per point. Points whose inversion does not converge get ``+inf``.
    """
    layout = tuple(layout)

    def phi(pts):
        pts = np.asarray(pts, dtype=np.float64)
        N = pts.shape[1]
        y = pts.reshape(layout + (N,))
        u = y.copy()
        axes = tuple(range(len(layout)))
        res = np.full(N, np.inf)
        for _ in range(max_iter):
            step = y + D.grad_g(u)
            res = np.sqrt(np.sum((step - u) ** 2, axis=axes))
            u = step
            if np.all(res <= tol):
                break
        energy = np.sum(D.energy(u), axis=axes)
        out = energy - 0.5 * np.sum((u - y) ** 2, axis=axes)
        out[~(res <= tol * 10)] = np.inf
        return out

    return phi


def brute_force_prox(phi, y, grid):
    """Grid argmin of ``0.5 ||y - z||^2 + phi(z)``.

    ``phi`` maps an ``(n, N)`` array of points to ``N`` values; ``+inf``
    marks points outside its domain.

    Raises
    ------
    ValueError
        If every grid point is infeasible.
    """
    y = np.asarray(y, dtype=np.float64).ravel()
    if y.size != grid.n:
        raise ValueError(f"query point has {y.size} coordinates, grid has {grid.n}")
    pts = grid.points()
    obj = 0.5 * np.sum((pts - y[:, None]) ** 2, axis=0) + phi(pts)
    if not np.any(np.isfinite(obj)):
        raise ValueError("no feasible grid point")
    return pts[:, int(np.argmin(obj))]


def refined_prox(phi, y, lower, upper, delta, factor=4, width=3):
    """Grid search that zooms in until the spacing reaches ``delta``.

    Starts at spacing ``delta * factor**j`` with the smallest ``j`` keeping
    the first grid within :data:`MAX_GRID_POINTS` (capped at 10**6 for speed),
    then repeatedly searches a box of ``width`` old cells around the current
    best point with a ``factor`` times finer grid. Sound when the prox
    objective has a single basin wider than one coarse cell, which holds for
    the strongly convex objectives produced by gradient-step denoisers: with
    ``L <= 0.6`` a grid argmin lies within ``sqrt(n)`` cells of the minimizer,
    inside the default window.
    """
    lower = np.atleast_1d(np.asarray(lower, dtype=np.float64))
    upper = np.atleast_1d(np.asarray(upper, dtype=np.float64))
    n = lower.size
    j = 0
    while np.prod((upper - lower) / (delta * factor**j) + 1) > 10**6:
        j += 1
    h = delta * factor**j
    best = brute_force_prox(phi, y, GridSpec(tuple(lower), tuple(upper), h))
    while j > 0:
        j -= 1
        h_new = delta * factor**j
        # snap the window onto multiples of the new spacing relative to the box origin
        lo = np.maximum(lower, best - width * h)
        lo = lower + np.floor((lo - lower) / h_new + 1e-9) * h_new
        hi = np.minimum(upper, best + width * h)
        best = brute_force_prox(phi, y, GridSpec(tuple(lo), tuple(hi), h_new))
        h = h_new
    return best.reshape(n)


def finite_diff_check(fn, grad_fn, points, h=1e-6, directions=4, seed=0):
    """Largest relative gap between ``grad_fn`` and central differences of ``fn``.

    Small inputs (at most 64 entries) are differenced coordinate-wise and
    compared in norm; larger ones along ``directions`` random unit vectors,
    with the gap scaled by ``||grad||``.
    """
    rng = np.random.default_rng(seed)
    worst = 0.0
    for x in points:
        x = np.asarray(x, dtype=np.float64)
        g = np.asarray(grad_fn(x), dtype=np.float64)
        gnorm = float(np.linalg.norm(g))
        if x.size <= 64:
            fd = np.empty(x.size)
            for i in range(x.size):
                e = np.zeros(x.size)
                e[i] = h
                e = e.reshape(x.shape)
                fd[i] = (fn(x + e) - fn(x - e)) / (2 * h)
            scale = max(gnorm, float(np.linalg.norm(fd)))
            err = 0.0 if scale == 0 else float(np.linalg.norm(fd - g.ravel())) / scale
        else:
            err = 0.0
            for _ in range(directions):
                v = rng.standard_normal(x.shape)
                v /= np.linalg.norm(v)
                fd = (fn(x + h * v) - fn(x - h * v)) / (2 * h)
                an = float(np.vdot(g, v))
                scale = max(gnorm, abs(fd))
                err = max(err, 0.0 if scale == 0 else abs(fd - an) / scale)
        worst = max(worst, err)
    return worst


def loglog_slope(values, floor=RESIDUAL_FLOOR):
    """Least-squares slope of ``log values[t-1]`` against ``log t`` over ``t`` in the final decade.

    ``values[i]`` belongs to iteration ``t = i + 1``. Entries at or below
    ``floor`` are dropped; returns ``(slope, note)`` where ``slope`` is
    ``None`` when the run had already reached the floor.
    """
    v = np.asarray(values, dtype=np.float64)
    T = v.size
    if T == 0:
        return None, "empty"
    t = np.arange(1, T + 1, dtype=np.float64)
    window = t >= max(1.0, T / 10.0)
    keep = window & (v > floor)
    if keep.sum() < 2:
        return None, "converged to floor"
    slope = np.polyfit(np.log(t[keep]), np.log(v[keep]), 1)[0]
    return float(slope), "fit"


def descent_audit(trace, tol=1e-9, slope_max=-0.9, check_slope=True):
    """Monotonicity of the monitored value and decay rate of the running-min residual.

    Returns a JSON-ready dict with ``monotone``, ``max_violation``,
    ``slope``, ``slope_pass`` and ``passed``.
    """
    vals = trace.monitored
    worst = 0.0
    monotone = True
    bad_k = None
    for k in range(1, vals.size):
        prev, cur = vals[k - 1], vals[k]
        if not math.isfinite(prev):
            continue
        excess = cur - prev - tol * (1.0 + abs(prev))
        if excess > 0 or math.isnan(cur):
            monotone = False
            if bad_k is None:
                bad_k = k
        worst = max(worst, cur - prev)
    rep = {"monitor": trace.monitor, "records": int(vals.size), "monotone": monotone,
           "max_increase": float(worst), "first_violation": bad_k}
    if check_slope:
        slope, note = loglog_slope(trace.column("min_residual_sq"))
        rep["slope"] = slope
        rep["slope_note"] = note
        rep["slope_pass"] = slope is None or slope <= slope_max
    else:
        rep["slope_pass"] = True
    rep["passed"] = bool(monotone and rep["slope_pass"])
    return rep


def pgd_rate_audit(trace):
    """Check ``K min_k ||x_{k+1} - x_k||^2 <= 2 (F_0 - min F) / (1 - lam L_f)`` on a gradient trace."""
    F = trace.column("F")
    res = trace.column("residual_sq")
    K = res.size
    lhs = K * float(res.min())
    rhs = 2.0 * (F[0] - F.min()) / (1.0 - trace.lam_lf)
    # equality with zero on both sides is allowed up to round-off
    ok = lhs <= rhs + 1e-12 * (1.0 + abs(F[0]))
    return {"lhs": lhs, "rhs": rhs, "passed": bool(ok)}


def stationarity_audit(x, cfg, D, m):
    """First-order residual of ``lam f + phi`` at ``x`` and the fixed-point gap of one step.

    ``D`` must be the denoiser the run applied (see
    :func:`proxpnp.solver.effective_denoiser`). Returns ``stationarity =
    ||lam grad f(x) + grad phi(x)|| / (1 + ||x||)`` and ``fixed_point =
    ||D(x - lam grad f(x)) - x||``.
    """
    x = np.asarray(x, dtype=np.float64)
    g_f = cfg.lam * m.grad_f(x)
    rep = {}
    try:
        gp = grad_phi(D, x)
    except NonConvergenceError as exc:
        return {"stationarity": None, "fixed_point": None, "error": str(exc), "passed": False}
    rep["stationarity"] = float(np.linalg.norm(g_f + gp)) / (1.0 + float(np.linalg.norm(x)))
    z = x - g_f
    rep["fixed_point"] = float(np.linalg.norm(z - D.grad_g(z) - x))
    return rep


def equivalence_audit(admm_trace, drs_trace, tol=1e-9):
    """Largest sup-norm gap between the stored iterates of two runs.

    Both traces must have been produced with ``keep_iterates``; a length
    mismatch fails structurally.
    """
    a, b = admm_trace.iterates, drs_trace.iterates
    if not a or len(a) != len(b):
        return {"passed": False, "reason": "length mismatch", "lengths": [len(a), len(b)]}
    dev = max(float(np.max(np.abs(p - q))) for p, q in zip(a, b))
    return {"passed": bool(dev <= tol), "max_deviation": dev, "iterations": len(a)}
