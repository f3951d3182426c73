import math

import numpy as np
import pytest
from scipy.optimize import brentq

from proxpnp.core import ConvKernel, make_kernel, psnr, synthetic_image
from proxpnp.denoiser import (
    LinearGSDenoiser,
    PointwiseGSDenoiser,
    QuadraticGSDenoiser,
    apply_denoiser,
    eval_phi,
)
from proxpnp.fidelity import BlurModel, MaskModel, synthesize
from proxpnp.oracle import descent_audit, pgd_rate_audit, stationarity_audit
from proxpnp.solver import (
    ConvergenceTrace,
    HypothesisError,
    NumericAbort,
    SolverConfig,
    TraceRecord,
    effective_denoiser,
    pnp_admm,
    pnp_drs,
    pnp_drs_diff,
    pnp_pgd,
    solve,
    stopping_rule,
    validate,
)

NU = 7.65 / 255


def identity_denoiser(shape):
    return LinearGSDenoiser(ConvKernel.delta(1), shape)


@pytest.fixture(scope="module")
def deblur():
    x_true = synthetic_image(32, seed=3)
    m = synthesize("blur", x_true, NU, seed=4, kernel=make_kernel("gaussian", std=1.6))
    return x_true, m


def well_conditioned_kernel():
    # symbol 0.6 + 0.2 (cos w1 + cos w2) stays >= 0.2
    return ConvKernel(np.array([[0, 0.1, 0], [0.1, 0.6, 0.1], [0, 0.1, 0]]))


def table_pgd_cfg(**kw):
    return SolverConfig("pgd", lam=0.99 * NU**2, **kw)


# -------------------------------------------------------------- PGD


def test_pgd_trivial_fixed_point():
    y = np.random.default_rng(0).random((6, 6))
    m = BlurModel(ConvKernel.delta(1), y, 1.0)
    x, tr = pnp_pgd(SolverConfig("pgd", lam=0.5), identity_denoiser((6, 6)), m, y)
    np.testing.assert_allclose(x, y, atol=1e-15)
    assert tr.records[0].residual_sq == pytest.approx(0.0, abs=1e-28)


def test_pgd_scalar_fixed_point_against_root_finder():
    a, lam, yv = 0.5, 0.5, 0.8
    m = BlurModel(ConvKernel.delta(1), np.array([[yv]]), 1.0)
    x, _ = pnp_pgd(SolverConfig("pgd", lam=lam, rel_tol=0.0, max_iter=200), QuadraticGSDenoiser(a), m,
                   np.array([[0.0]]))
    # phi(x) = a / (2 (1 - a)) x^2 so phi'(x) = a x / (1 - a)
    root = brentq(lambda t: lam * (t - yv) + a * t / (1 - a), -10, 10, xtol=1e-15)
    assert abs(x[0, 0] - root) < 1e-8


def test_pgd_descent_margin_rate_stationarity(deblur):
    x_true, m = deblur
    D = PointwiseGSDenoiser.from_noise_level(0.5 * NU)
    cfg = table_pgd_cfg()
    x, tr = pnp_pgd(cfg, D, m, m.y, x_true)
    F = tr.column("F")
    res = tr.column("residual_sq")
    margin = 0.5 * (1 - tr.lam_lf)
    for k in range(len(F) - 1):
        assert F[k + 1] <= F[k] - margin * res[k] + 1e-9 * (1 + abs(F[k]))
    assert pgd_rate_audit(tr)["passed"]
    st = stationarity_audit(x, cfg, D, m)
    assert st["stationarity"] <= 1e-5
    assert np.all(np.diff(tr.column("min_residual_sq")) <= 0)
    assert len(tr) <= cfg.max_iter + 1


def test_pgd_objective_matches_inversion(deblur):
    # the inversion-free F must agree with lam f + phi computed through D^{-1}
    x_true, m = deblur
    D = PointwiseGSDenoiser.from_noise_level(0.5 * NU)
    cfg = table_pgd_cfg(max_iter=5, keep_iterates=True)
    _, tr = pnp_pgd(cfg, D, m, m.y)
    for rec, x in zip(tr.records[1:], tr.iterates[1:]):
        assert rec.F == pytest.approx(cfg.lam * m.eval_f(x) + eval_phi(D, x), rel=1e-9)


def test_pgd_step_lipschitz_bound(deblur):
    _, m = deblur
    D = PointwiseGSDenoiser.from_noise_level(0.5 * NU)
    lam = 0.99 * NU**2
    bound = (1 + lam * m.lipschitz_f()) * (1 + D.lipschitz)
    rng = np.random.default_rng(5)

    def T(x):
        return apply_denoiser(D, x - lam * m.grad_f(x))

    for _ in range(20):
        a, b = rng.random((2,) + m.shape)
        assert np.linalg.norm(T(a) - T(b)) <= bound * np.linalg.norm(a - b) * (1 + 1e-6)


# -------------------------------------------------------------- DRS family


def test_drs_diff_without_regularizer_is_proximal_point():
    y = np.random.default_rng(1).random((8, 8))
    m = BlurModel(well_conditioned_kernel(), y, 0.1)
    z, tr = pnp_drs_diff(SolverConfig("drs_diff", lam=0.0099, rel_tol=0.0, max_iter=600),
                         identity_denoiser((8, 8)), m, np.zeros((8, 8)))
    # minimizers of f satisfy H^T (H z - y) = 0
    assert np.linalg.norm(m.grad_f(z)) * m.nu**2 < 1e-6


def test_drs_diff_matches_pgd_objective_for_convex_regularizer(deblur):
    x_true, m = deblur
    D = LinearGSDenoiser.from_noise_level(0.05, m.shape)
    kw = dict(lam=0.99 * NU**2, rel_tol=1e-12, max_iter=3000)
    _, tp = pnp_pgd(SolverConfig("pgd", **kw), D, m, m.y)
    _, td = pnp_drs_diff(SolverConfig("drs_diff", **kw), D, m, m.y)
    Fp, Fd = tp.records[-1].F, td.records[-1].F
    assert abs(Fd - Fp) <= 1e-3 * abs(Fp)


def test_drs_diff_envelope_and_residual_identity(deblur):
    x_true, m = deblur
    D = PointwiseGSDenoiser.from_noise_level(0.5 * NU)
    cfg = SolverConfig("drs_diff", lam=0.99 * NU**2, keep_iterates=True)
    z, tr = pnp_drs_diff(cfg, D, m, m.y, x_true)
    aud = descent_audit(tr)
    assert aud["passed"], aud
    # x_{k+1} - x_k = z_{k+1} - y_{k+1}
    np.testing.assert_allclose(tr.column("residual_sq"), tr.column("yz_gap_sq"), rtol=1e-9, atol=1e-20)
    # recompute the envelope from x_k alone
    lam = cfg.lam
    for rec, x in list(zip(tr.records, tr.iterates))[::7]:
        y = m.prox_f(lam, x)
        u = 2 * y - x
        zz = apply_denoiser(D, u)
        phi = D.g(u) - 0.5 * np.sum((u - zz) ** 2)
        env = phi + lam * m.eval_f(y) + np.vdot(y - x, y - zz) + 0.5 * np.sum((y - zz) ** 2)
        assert rec.envelope == pytest.approx(env, abs=1e-10 * (1 + abs(env)))
    assert stationarity_audit(z, cfg, D, m)["stationarity"] <= 1e-5


def test_drs_table_parameters_envelope(deblur):
    x_true, m = deblur
    D = PointwiseGSDenoiser.from_noise_level(1.0 * NU)
    cfg = SolverConfig("drs", lam=1.5 * NU**2, alpha=0.5, keep_iterates=True)
    y, tr = pnp_drs(cfg, D, m, m.y, x_true)
    assert descent_audit(tr)["passed"]
    Deff = effective_denoiser(cfg, D)
    lam = cfg.lam
    for rec, x in list(zip(tr.records, tr.iterates))[::9]:
        yy = apply_denoiser(Deff, x)
        phi = Deff.g(x) - 0.5 * np.sum((x - yy) ** 2)
        zz = m.prox_f(lam, 2 * yy - x)
        env = phi + lam * m.eval_f(zz) + np.vdot(yy - x, yy - zz) + 0.5 * np.sum((yy - zz) ** 2)
        assert rec.envelope == pytest.approx(env, abs=1e-10 * (1 + abs(env)))


def test_drs_mask_without_regularizer_one_step():
    rng = np.random.default_rng(2)
    mask = (rng.random((8, 8)) < 0.5) * 1.0
    m = MaskModel(mask, rng.random((8, 8)))
    x0 = rng.random((8, 8))
    y, tr = pnp_drs(SolverConfig("drs", lam=2.0, max_iter=5), identity_denoiser((8, 8)), m, x0)
    np.testing.assert_allclose(y, m.prox_f(1.0, x0), atol=1e-15)
    assert tr.records[1].residual_sq < 1e-28


def test_drs_inpainting_envelope_and_rate():
    x_true = synthetic_image(48, seed=2)
    m = synthesize("mask", x_true, 0.0, seed=8)
    warm = LinearGSDenoiser.from_noise_level(50 / 255, m.shape)
    D = LinearGSDenoiser.from_noise_level(15 / 255, m.shape)
    _, tw = pnp_drs(SolverConfig("drs", lam=2.0, alpha=0.5, max_iter=10), warm, m, m.y)
    y, tr = pnp_drs(SolverConfig("drs", lam=2.0, alpha=0.5, max_iter=200), D, m, tw.state, x_true)
    assert descent_audit(tr)["passed"]
    assert tr.records[-1].psnr > psnr(m.y, x_true) + 10


def test_admm_matches_drs_diff(deblur):
    _, m = deblur
    D = PointwiseGSDenoiser.from_noise_level(0.5 * NU)
    kw = dict(lam=0.99 * NU**2, max_iter=50, rel_tol=0.0, keep_iterates=True)
    za, ta = pnp_admm(SolverConfig("admm", **kw), D, m, m.y)
    zd, td = pnp_drs_diff(SolverConfig("drs_diff", **kw), D, m, m.y)
    assert np.max(np.abs(za - zd)) <= 1e-9
    for a, b in zip(ta.iterates, td.iterates):
        assert np.max(np.abs(a - b)) <= 1e-10
    np.testing.assert_allclose(ta.column("envelope"), td.column("envelope"), rtol=1e-10)


def test_admm_without_regularizer_minimizes_f():
    y = np.random.default_rng(4).random((8, 8))
    m = BlurModel(well_conditioned_kernel(), y, 0.1)
    z, _ = pnp_admm(SolverConfig("admm", lam=0.0099, rel_tol=0.0, max_iter=600), identity_denoiser((8, 8)), m,
                    np.zeros((8, 8)))
    assert np.linalg.norm(m.grad_f(z)) * m.nu**2 < 1e-6


# -------------------------------------------------------------- validation and control


def test_validate_examples():
    nu = 0.02
    m = BlurModel(ConvKernel(np.array([[math.sqrt(0.99)]])), np.zeros((4, 4)), nu)
    assert m.lipschitz_f() == pytest.approx(0.99 / nu**2)
    D = PointwiseGSDenoiser(0.9, 0.1)
    rep = validate(SolverConfig("pgd", lam=nu**2), D, m)
    assert rep.passed
    assert any(i["name"] == "lam * L_f < 1" and i["value"] == pytest.approx(0.99) for i in rep.items)
    assert not validate(SolverConfig("drs", lam=1.0, alpha=1.0), D, m).passed
    rep = validate(SolverConfig("drs", lam=1.0, alpha=0.5), D, m)
    assert rep.passed
    statuses = {i["name"]: i["status"] for i in rep.items}
    assert statuses["Im(D) convex"] == "implied"
    assert statuses["Kurdyka-Lojasiewicz property of the objective"] == "assumption"
    assert not validate(SolverConfig("pgd", lam=2 * nu**2), D, m).passed
    mask = MaskModel(np.ones((4, 4)), np.zeros((4, 4)))
    assert not validate(SolverConfig("pgd", lam=1.0), D, mask).passed


def test_refuses_without_override(deblur):
    _, m = deblur
    D = PointwiseGSDenoiser.from_noise_level(NU)
    with pytest.raises(HypothesisError):
        pnp_pgd(SolverConfig("pgd", lam=1.5 * NU**2), D, m, m.y)
    _, tr = pnp_pgd(SolverConfig("pgd", lam=1.5 * NU**2, override=True, max_iter=3), D, m, m.y)
    assert not tr.hypotheses.passed


def test_numeric_abort_carries_trace(deblur):
    _, m = deblur
    D = PointwiseGSDenoiser.from_noise_level(NU)
    cfg = SolverConfig("pgd", lam=400 * NU**2, override=True, rel_tol=0.0)
    with np.errstate(all="ignore"), pytest.raises(NumericAbort) as err:
        pnp_pgd(cfg, D, m, m.y)
    assert isinstance(err.value.trace, ConvergenceTrace)
    assert len(err.value.trace) > 0


def test_penalty_enabled_run(deblur):
    x_true, m = deblur
    D = PointwiseGSDenoiser(0.5, 0.5 * NU)
    cfg = table_pgd_cfg(gamma=1e-6)
    rep = validate(cfg, D, m)
    assert rep.passed
    assert any(i["status"] == "assumption" and "local" in i["name"] for i in rep.items)
    _, tr = pnp_pgd(cfg, D, m, m.y)
    assert descent_audit(tr)["monotone"]


def _trace_with(values, monitor="F"):
    tr = ConvergenceTrace("pgd", monitor=monitor)
    stops = []
    for k, v in enumerate(values):
        tr.append(TraceRecord(k, v, v, 1.0, 1.0, math.nan, math.nan, 0.0))
        stops.append(stopping_rule(tr, 1e-8, 1000))
    return stops


def test_stopping_rule_examples():
    assert _trace_with([3.0] * 5).index(True) == 2
    assert _trace_with([1 + 2.0**-k for k in range(40)]).index(True) == 27
    tr = ConvergenceTrace("pgd")
    for k in range(10):
        tr.append(TraceRecord(k, float(-k), 0, 1, 1, 0, 0, 0))
    assert stopping_rule(tr, 1e-8, max_iter=10)
    assert tr.stop_reason == "max_iter"


def test_solvers_deterministic_and_csv(deblur):
    x_true, m = deblur
    D = PointwiseGSDenoiser.from_noise_level(0.5 * NU)
    for algo in ("pgd", "drs_diff", "admm"):
        cfg = SolverConfig(algo, lam=0.99 * NU**2, max_iter=30)
        a = solve(cfg, D, m, m.y, x_true)
        b = solve(cfg, D, m, m.y, x_true)
        assert np.array_equal(a[0], b[0])
        assert a[1].to_csv() == b[1].to_csv()
    header = a[1].to_csv().splitlines()[0]
    assert header == "k,F,envelope,residual_sq,min_residual_sq,yz_gap_sq,psnr"


def test_config_validation():
    with pytest.raises(ValueError):
        SolverConfig("fista")
    with pytest.raises(ValueError):
        SolverConfig("pgd", lam=0.0)
    with pytest.raises(ValueError):
        SolverConfig("pgd", alpha=1.5)
    assert SolverConfig("DRS-diff").algorithm == "drs_diff"
