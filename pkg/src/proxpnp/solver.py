"""Plug-and-play splitting schemes with objective and envelope monitoring.

Four schemes share the unit stepsize and use ``lam`` as the trade-off knob:

``pgd``       ``z = x - lam grad f(x)``, ``x+ = D(z)``
``drs_diff``  ``y = prox_{lam f}(x)``, ``z = D(2y - x)``, ``x+ = x + z - y``
``drs``       ``y = D(x)``, ``z = prox_{lam f}(2y - x)``, ``x+ = x + z - y``
``admm``      the scaled ADMM whose variables map onto ``drs_diff``

Every point where the regularizer ``phi`` is needed during an iteration is
an output of the denoiser whose input is at hand, so ``phi`` is evaluated
there as ``g(u) - 0.5 ||u - D(u)||^2`` without any inversion.

Record ``k`` of a trace describes the current iterate ``x_k``: its objective
or envelope, and the squared step ``||x_{k+1} - x_k||^2`` that leaves it.
"""

from __future__ import annotations

import csv
import io
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .denoiser import (
    CoercivityPenalty,
    NonConvergenceError,
    PenalizedDenoiser,
    RelaxedDenoiser,
    eval_phi,
    phi_from_preimage,
)
from .fidelity import UnsupportedOperation

__all__ = [
    "ALGORITHMS",
    "SolverConfig",
    "TraceRecord",
    "ConvergenceTrace",
    "HypothesisReport",
    "HypothesisError",
    "NumericAbort",
    "validate",
    "stopping_rule",
    "effective_denoiser",
    "pnp_pgd",
    "pnp_drs_diff",
    "pnp_drs",
    "pnp_admm",
    "solve",
]

ALGORITHMS = ("pgd", "drs_diff", "drs", "admm")
STOP_GUARD = 1e-12
CSV_COLUMNS = ("k", "F", "envelope", "residual_sq", "min_residual_sq", "yz_gap_sq", "psnr")


@dataclass
class SolverConfig:
    """Algorithm choice and budget.

    ``alpha`` relaxes the denoiser to ``x - alpha grad g(x)``; ``gamma``
    switches on the coercivity penalty; ``override`` lets a run proceed
    although a checked hypothesis failed.
    """

    algorithm: str = "pgd"
    lam: float = 1.0
    sigma: float = 0.0
    alpha: float = 1.0
    max_iter: int = 1000
    rel_tol: float = 1e-8
    gamma: float = 0.0
    seed: int = 0
    override: bool = False
    snapshot_every: int = 0
    keep_iterates: bool = False

    def __post_init__(self):
        self.algorithm = self.algorithm.lower().replace("-", "_")
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"unknown algorithm {self.algorithm!r}; expected one of {ALGORITHMS}")
        if not self.lam > 0:
            raise ValueError(f"lam must be > 0, got {self.lam}")
        if self.sigma < 0:
            raise ValueError(f"sigma must be >= 0, got {self.sigma}")
        if not 0.0 < self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in (0, 1], got {self.alpha}")
        if self.max_iter < 1:
            raise ValueError(f"max_iter must be >= 1, got {self.max_iter}")
        if self.gamma < 0:
            raise ValueError(f"gamma must be >= 0, got {self.gamma}")

    def to_dict(self):
        return asdict(self)


@dataclass
class TraceRecord:
    k: int
    F: float
    envelope: float
    residual_sq: float
    min_residual_sq: float
    yz_gap_sq: float
    psnr: float
    wall: float


@dataclass
class ConvergenceTrace:
    """Per-iteration history of one solver run.

    ``monitor`` names the column the stopping rule watches: ``"F"`` for
    gradient schemes, ``"envelope"`` for the Douglas-Rachford family.
    ``snapshots`` holds denoiser inputs (every ``snapshot_every``
    iterations) and ``iterates`` the governing variable when requested.
    """

    algorithm: str
    monitor: str = "F"
    records: list = field(default_factory=list)
    snapshots: list = field(default_factory=list)
    iterates: list = field(default_factory=list)
    stop_reason: str = ""
    state: np.ndarray | None = None
    lam_lf: float = math.nan
    hypotheses: HypothesisReport | None = None

    def __len__(self):
        return len(self.records)

    def append(self, rec):
        self.records.append(rec)

    def column(self, name):
        return np.array([getattr(r, name) for r in self.records], dtype=np.float64)

    @property
    def monitored(self):
        return self.column(self.monitor)

    def to_csv(self):
        """CSV text with the fixed column order; floats written with ``repr`` precision."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in self.records:
            w.writerow([r.k] + [_fmt(getattr(r, c)) for c in CSV_COLUMNS[1:]])
        return buf.getvalue()

    def summary(self):
        last = self.records[-1] if self.records else None
        return {
            "algorithm": self.algorithm,
            "iterations": len(self.records),
            "stop_reason": self.stop_reason,
            "final_F": None if last is None else _json_float(last.F),
            "final_envelope": None if last is None else _json_float(last.envelope),
            "final_residual_sq": None if last is None else _json_float(last.residual_sq),
            "min_residual_sq": None if last is None else _json_float(last.min_residual_sq),
        }


def _fmt(v):
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if math.isnan(v):
        return ""
    return repr(float(v))


def _json_float(v):
    if math.isnan(v):
        return None
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return float(v)


class HypothesisError(RuntimeError):
    """A checked convergence hypothesis failed and no override was given."""

    def __init__(self, report):
        failed = ", ".join(item["name"] for item in report.items if item["status"] == "fail")
        super().__init__(f"hypothesis check failed: {failed}")
        self.report = report


class NumericAbort(FloatingPointError):
    """Iterates stopped being finite; the partial trace is attached."""

    def __init__(self, message, trace):
        super().__init__(message)
        self.trace = trace


# --------------------------------------------------------------------------
# hypotheses
# --------------------------------------------------------------------------


@dataclass
class HypothesisReport:
    """Checked quantities plus the assumptions that cannot be checked at runtime.

    Each item has ``name``, ``status`` in ``{"pass", "fail", "implied",
    "assumption"}``, and optionally ``value`` and ``threshold``.
    """

    algorithm: str
    items: list = field(default_factory=list)

    @property
    def passed(self):
        return all(item["status"] != "fail" for item in self.items)

    def add(self, name, status, value=None, threshold=None, note=""):
        item = {"name": name, "status": status}
        if value is not None:
            item["value"] = value
        if threshold is not None:
            item["threshold"] = threshold
        if note:
            item["note"] = note
        self.items.append(item)

    def to_dict(self):
        return {"algorithm": self.algorithm, "passed": self.passed, "items": list(self.items)}


def effective_denoiser(cfg, D, n=None):
    """The denoiser a run actually applies: relaxed by ``alpha``, penalized by ``gamma``."""
    out = D
    if cfg.gamma > 0:
        if n is None:
            raise ValueError("the penalty needs the number of unknowns")
        out = PenalizedDenoiser(out, CoercivityPenalty(cfg.gamma), n)
    if cfg.alpha < 1.0:
        out = RelaxedDenoiser(out, cfg.alpha)
    return out


def validate(cfg, D, m):
    """Check the convergence hypotheses of ``cfg.algorithm`` for ``D`` and ``m``.

    Never raises on a failed hypothesis; inspect ``report.passed``.
    """
    rep = HypothesisReport(cfg.algorithm)
    try:
        Deff = effective_denoiser(cfg, D, int(np.prod(m.shape)))
    except ValueError as exc:
        rep.add("effective denoiser is a gradient step with L < 1", "fail", note=str(exc))
        return rep
    L = Deff.lipschitz
    rep.add("L < 1", "pass" if L < 1.0 else "fail", value=L, threshold=1.0)
    rep.add("g bounded below", "pass", value=Deff.lower_bound)
    if cfg.algorithm in ("pgd", "drs_diff", "admm"):
        try:
            lam_lf = cfg.lam * m.lipschitz_f()
        except UnsupportedOperation:
            rep.add("f has a Lipschitz gradient", "fail", note=f"{m.kind} fidelity is not differentiable")
        else:
            rep.add("lam * L_f < 1", "pass" if lam_lf < 1.0 else "fail", value=lam_lf, threshold=1.0)
    else:
        rep.add("alpha * L < 1/2", "pass" if L < 0.5 else "fail", value=L, threshold=0.5)
        if Deff.global_bound:
            rep.add("Im(D) convex", "implied",
                    note="L < 1 on all of R^n makes D onto R^n")
        else:
            rep.add("Im(D) convex", "assumption", note="Lipschitz bound is only local")
    if not Deff.global_bound:
        rep.add("iterates stay where the local bound holds", "assumption")
    rep.add("Kurdyka-Lojasiewicz property of the objective", "assumption")
    return rep


def _check_hypotheses(cfg, D, m):
    rep = validate(cfg, D, m)
    if not rep.passed and not cfg.override:
        raise HypothesisError(rep)
    return rep


# --------------------------------------------------------------------------
# stopping
# --------------------------------------------------------------------------


def stopping_rule(trace, rel_tol=1e-8, max_iter=1000):
    """Relative change of the monitored value below ``rel_tol`` or the iteration cap reached.

    The relative test compares records ``k`` and ``k - 1`` for ``k >= 2``;
    the cap counts completed iterations, ``k + 1``.
    """
    if not trace.records:
        return False
    k = trace.records[-1].k
    if k + 1 >= max_iter:
        trace.stop_reason = "max_iter"
        return True
    if k < 2:
        return False
    cur = getattr(trace.records[-1], trace.monitor)
    prev = getattr(trace.records[-2], trace.monitor)
    if not (math.isfinite(cur) and math.isfinite(prev)):
        return False
    if abs(cur - prev) / (abs(prev) + STOP_GUARD) < rel_tol:
        trace.stop_reason = "rel_tol"
        return True
    return False


# --------------------------------------------------------------------------
# schemes
# --------------------------------------------------------------------------


class _Recorder:
    def __init__(self, cfg, trace, x_true):
        self.cfg = cfg
        self.trace = trace
        self.x_true = x_true
        self.best = math.inf
        self.t0 = time.perf_counter()

    def psnr(self, x):
        if self.x_true is None:
            return math.nan
        mse = float(np.mean((x - self.x_true) ** 2))
        return math.inf if mse == 0.0 else 10.0 * math.log10(1.0 / mse)

    def snapshot(self, k, u):
        every = self.cfg.snapshot_every
        if every and k % every == 0:
            self.trace.snapshots.append(u.copy())

    def record(self, k, F, env, res, gap, x_psnr):
        # F and the envelope may be +inf (indicator fidelity); NaN never is legitimate
        if math.isnan(F) or (env is not None and math.isnan(env)) or not math.isfinite(res):
            raise NumericAbort(f"monitored values became non-finite at iteration {k}", self.trace)
        env = math.nan if env is None else env
        gap = math.nan if gap is None else gap
        self.best = min(self.best, res)
        self.trace.append(TraceRecord(k, F, env, res, self.best, gap, self.psnr(x_psnr),
                                      time.perf_counter() - self.t0))
        return stopping_rule(self.trace, self.cfg.rel_tol, self.cfg.max_iter)


def _sq(v):
    return float(np.vdot(v, v))


def _guard(arr, k, trace):
    if not np.all(np.isfinite(arr)):
        raise NumericAbort(f"iterate became non-finite at iteration {k}", trace)


def _safe_f(m, x):
    try:
        return m.eval_f(x)
    except FloatingPointError:
        return math.inf


def pnp_pgd(cfg, D, m, x0, x_true=None):
    """Plug-and-play proximal gradient descent.

    The objective ``F = lam f + phi`` at ``x_k = D(z_k)`` is
    ``lam f(x_k) + g(z_k) - 0.5 ||z_k - x_k||^2``; at ``k = 0`` the
    preimage of ``x_0`` is computed by inversion.

    Returns
    -------
    x : ndarray
        Last iterate, an output of the denoiser.
    trace : ConvergenceTrace
    """
    rep = _check_hypotheses(cfg, D, m)
    Dn = effective_denoiser(cfg, D, int(np.prod(m.shape)))
    lam = cfg.lam
    trace = ConvergenceTrace("pgd", monitor="F")
    trace.lam_lf = _lam_lf(cfg, m)
    trace.hypotheses = rep
    rec = _Recorder(cfg, trace, x_true)
    x = np.array(x0, dtype=np.float64)
    _guard(x, 0, trace)
    try:
        phi = eval_phi(Dn, x)
    except NonConvergenceError:
        phi = math.inf
    k = 0
    while True:
        if cfg.keep_iterates:
            trace.iterates.append(x.copy())
        F = lam * m.eval_f(x) + phi
        z = x - lam * m.grad_f(x)
        rec.snapshot(k, z)
        x_new = z - Dn.grad_g(z)
        _guard(x_new, k + 1, trace)
        phi = phi_from_preimage(Dn, z, x_new)
        stop = rec.record(k, F, None, _sq(x_new - x), None, x)
        x = x_new
        if stop:
            break
        k += 1
    trace.state = x
    return x, trace


def _lam_lf(cfg, m):
    try:
        return cfg.lam * m.lipschitz_f()
    except UnsupportedOperation:
        return math.nan


def _drs_terms(lam, m, x, y, z):
    d = y - z
    return lam * _safe_f(m, y), float(np.vdot(y - x, d)) + 0.5 * _sq(d), _sq(d)


def pnp_drs_diff(cfg, D, m, x0, x_true=None):
    """Douglas-Rachford with the prox of ``lam f`` first and the denoiser second.

    The envelope recorded at ``x_k`` is
    ``phi(z) + lam f(y) + <y - x, y - z> + 0.5 ||y - z||^2`` for the
    half-steps ``y, z`` taken from ``x_k``; ``phi(z)`` uses the denoiser
    input ``2y - x_k``. The F column holds ``lam f(z) + phi(z)``.

    Returns ``z`` from the last step, which lies in the image of ``D``.
    """
    rep = _check_hypotheses(cfg, D, m)
    Dn = effective_denoiser(cfg, D, int(np.prod(m.shape)))
    lam = cfg.lam
    trace = ConvergenceTrace("drs_diff", monitor="envelope")
    trace.lam_lf = _lam_lf(cfg, m)
    trace.hypotheses = rep
    rec = _Recorder(cfg, trace, x_true)
    x = np.array(x0, dtype=np.float64)
    _guard(x, 0, trace)
    k = 0
    while True:
        if cfg.keep_iterates:
            trace.iterates.append(x.copy())
        y = m.prox_f(lam, x)
        u = 2.0 * y - x
        rec.snapshot(k, u)
        z = u - Dn.grad_g(u)
        _guard(z, k, trace)
        phi_z = phi_from_preimage(Dn, u, z)
        lf_y, cross, gap = _drs_terms(lam, m, x, y, z)
        env = phi_z + lf_y + cross
        F = lam * _safe_f(m, z) + phi_z
        x_new = x + z - y
        stop = rec.record(k, F, env, _sq(x_new - x), gap, z)
        x = x_new
        if stop:
            break
        k += 1
    trace.state = x
    return z, trace


def pnp_drs(cfg, D, m, x0, x_true=None):
    """Douglas-Rachford with the denoiser first, valid for nonsmooth ``f``.

    Needs ``alpha * L < 1/2``; ``cfg.alpha < 1`` relaxes the denoiser. The
    envelope at ``x_k`` is ``phi(y) + lam f(z) + <y - x, y - z> + 0.5 ||y - z||^2``
    with ``phi(y) = g(x_k) - 0.5 ||x_k - y||^2``. The F column holds
    ``lam f(y) + phi(y)``, which is ``inf`` for an indicator ``f`` until
    ``y`` satisfies the constraint.

    Returns ``y`` from the last step, which lies in the image of ``D``.
    """
    rep = _check_hypotheses(cfg, D, m)
    Dn = effective_denoiser(cfg, D, int(np.prod(m.shape)))
    lam = cfg.lam
    trace = ConvergenceTrace("drs", monitor="envelope")
    trace.lam_lf = _lam_lf(cfg, m)
    trace.hypotheses = rep
    rec = _Recorder(cfg, trace, x_true)
    x = np.array(x0, dtype=np.float64)
    _guard(x, 0, trace)
    k = 0
    while True:
        if cfg.keep_iterates:
            trace.iterates.append(x.copy())
        rec.snapshot(k, x)
        y = x - Dn.grad_g(x)
        _guard(y, k, trace)
        phi_y = phi_from_preimage(Dn, x, y)
        z = m.prox_f(lam, 2.0 * y - x)
        d = y - z
        env = phi_y + lam * _safe_f(m, z) + float(np.vdot(y - x, d)) + 0.5 * _sq(d)
        F = lam * _safe_f(m, y) + phi_y
        x_new = x + z - y
        stop = rec.record(k, F, env, _sq(x_new - x), _sq(d), y)
        x = x_new
        if stop:
            break
        k += 1
    trace.state = x
    return y, trace


def pnp_admm(cfg, D, m, x0, x_true=None):
    """Scaled ADMM with unit penalty, denoiser block first.

    State ``(z, u)`` starts at ``(x0, 0)``; one iteration is::

        y = prox_{lam f}(z + u)
        u = u + z - y
        z = D(y - u)

    With ``x = z + u`` this is step for step the ``drs_diff`` recursion, and
    the trace stores that mapped ``x`` (plus the same envelope) so the two
    runs can be compared record by record. The loop is written out
    independently of :func:`pnp_drs_diff` on purpose.
    """
    rep = _check_hypotheses(cfg, D, m)
    Dn = effective_denoiser(cfg, D, int(np.prod(m.shape)))
    lam = cfg.lam
    trace = ConvergenceTrace("admm", monitor="envelope")
    trace.lam_lf = _lam_lf(cfg, m)
    trace.hypotheses = rep
    rec = _Recorder(cfg, trace, x_true)
    z = np.array(x0, dtype=np.float64)
    _guard(z, 0, trace)
    u = np.zeros_like(z)
    k = 0
    while True:
        x_map = z + u
        if cfg.keep_iterates:
            trace.iterates.append(x_map.copy())
        y = m.prox_f(lam, x_map)
        u_new = u + z - y
        w = y - u_new
        rec.snapshot(k, w)
        z_new = w - Dn.grad_g(w)
        _guard(z_new, k, trace)
        phi_z = phi_from_preimage(Dn, w, z_new)
        lf_y, cross, gap = _drs_terms(lam, m, x_map, y, z_new)
        env = phi_z + lf_y + cross
        F = lam * _safe_f(m, z_new) + phi_z
        res = _sq(z_new + u_new - x_map)
        stop = rec.record(k, F, env, res, gap, z_new)
        z, u = z_new, u_new
        if stop:
            break
        k += 1
    trace.state = z + u
    return z, trace


_SOLVERS = {"pgd": pnp_pgd, "drs_diff": pnp_drs_diff, "drs": pnp_drs, "admm": pnp_admm}


def solve(cfg, D, m, x0, x_true=None):
    """Dispatch on ``cfg.algorithm``."""
    return _SOLVERS[cfg.algorithm](cfg, D, m, x0, x_true)
