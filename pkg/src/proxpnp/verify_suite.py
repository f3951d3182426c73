"""Small-instance oracle suite behind ``proxpnp verify``.

Each check returns ``{"name", "passed", ...evidence}``. The instances are
kept small so the whole suite runs in seconds; ``quick=False`` enlarges
the sample counts.
"""

from __future__ import annotations

import math

import numpy as np

from .core import ConvKernel, make_kernel, synthetic_image
from .denoiser import (
    LinearGSDenoiser,
    PointwiseGSDenoiser,
    QuadraticGSDenoiser,
    apply_denoiser,
    eval_phi,
    grad_phi,
)
from .fidelity import synthesize
from .oracle import (
    batched_phi,
    descent_audit,
    equivalence_audit,
    finite_diff_check,
    pgd_rate_audit,
    refined_prox,
    stationarity_audit,
)
from .solver import SolverConfig, effective_denoiser, pnp_admm, pnp_drs_diff, pnp_pgd
from .spectral import JacobianProbe, power_iteration


def _check(name, passed, **evidence):
    return {"name": name, "passed": bool(passed), **evidence}


def check_closed_form_phi(rng, count):
    D = QuadraticGSDenoiser(0.5)
    err = max(abs(eval_phi(D, x) - 0.5 * float(np.vdot(x, x))) for x in rng.standard_normal((count, 4, 4)))
    return _check("closed-form phi of the quadratic instance", err <= 1e-8, max_error=err)


def check_grid_prox(rng, count):
    worst = 0.0
    instances = {
        "pointwise": (PointwiseGSDenoiser(0.5, 0.2), (1, 2)),
        "linear": (LinearGSDenoiser(ConvKernel(np.array([[0.4]])), (1, 2), scale=0.8), (1, 2)),
    }
    for D, layout in instances.values():
        phi = batched_phi(D, layout)
        for y in rng.uniform(0, 1, (count, 2)):
            z = refined_prox(phi, y, [-1.0, -1.0], [2.0, 2.0], 1e-4)
            worst = max(worst, float(np.linalg.norm(z - apply_denoiser(D, y.reshape(layout)).ravel())))
    bound = math.sqrt(2) * 1e-4
    return _check("grid prox agrees with the denoiser", worst <= bound, max_gap=worst, bound=bound)


def check_moreau(rng, count, size):
    worst = 0.0
    for D in (PointwiseGSDenoiser(0.9, 0.1), LinearGSDenoiser.from_noise_level(0.05, (size, size))):
        for _ in range(count):
            x = rng.uniform(0, 1, (size, size))
            d = apply_denoiser(D, x)
            worst = max(worst, float(np.linalg.norm(grad_phi(D, d) + d - x)) / (1 + np.linalg.norm(x)))
    return _check("grad phi(D(x)) + D(x) = x", worst <= 1e-6, max_relative=worst)


def check_lipschitz(rng, count, size):
    worst = 0.0
    D = PointwiseGSDenoiser(0.9, 0.1)
    bound = D.lipschitz / (1 - D.lipschitz)
    for _ in range(count):
        u, v = rng.uniform(0, 1, (2, size, size))
        x, y = apply_denoiser(D, u), apply_denoiser(D, v)
        ratio = np.linalg.norm(grad_phi(D, x) - grad_phi(D, y)) / np.linalg.norm(x - y)
        worst = max(worst, float(ratio) / bound)
    return _check("grad phi Lipschitz bound", worst <= 1 + 1e-6, max_ratio_over_bound=worst)


def check_gradients(rng):
    D = PointwiseGSDenoiser(0.9, 0.1)
    pts = [rng.uniform(0, 1, (4, 4)) for _ in range(3)]
    err = finite_diff_check(D.g, D.grad_g, pts, h=1e-5)
    return _check("grad g matches finite differences", err <= 1e-5, max_relative=err)


def check_pgd(size, seed):
    x_true = synthetic_image(size, seed=seed)
    nu = 7.65 / 255
    m = synthesize("blur", x_true, nu, seed=seed, kernel=make_kernel("gaussian", std=1.6))
    D = PointwiseGSDenoiser.from_noise_level(0.5 * nu)
    cfg = SolverConfig("pgd", lam=0.99 * nu**2, max_iter=1000)
    x, tr = pnp_pgd(cfg, D, m, m.y)
    aud = descent_audit(tr)
    rate = pgd_rate_audit(tr)
    st = stationarity_audit(x, cfg, effective_denoiser(cfg, D), m)
    ok = aud["passed"] and rate["passed"] and st["stationarity"] <= 1e-5
    return _check("PGD descent, rate and stationarity", ok, audit=aud, rate=rate, stationarity=st)


def check_equivalence(size, seed):
    x_true = synthetic_image(size, seed=seed)
    nu = 7.65 / 255
    m = synthesize("blur", x_true, nu, seed=seed, kernel=make_kernel("uniform", size=9))
    D = PointwiseGSDenoiser.from_noise_level(0.5 * nu)
    kw = dict(lam=0.99 * nu**2, max_iter=50, rel_tol=0.0, keep_iterates=True)
    _, ta = pnp_admm(SolverConfig("admm", **kw), D, m, m.y)
    _, td = pnp_drs_diff(SolverConfig("drs_diff", **kw), D, m, m.y)
    rep = equivalence_audit(ta, td)
    return _check("ADMM matches DRSdiff", rep.pop("passed"), **rep)


def check_power(seed):
    D = LinearGSDenoiser.from_noise_level(0.05, (12, 12))
    est = power_iteration(JacobianProbe(D, np.zeros((12, 12))), iters=None, seed=seed)
    return _check("power iteration reaches the certified norm", abs(est - D.lipschitz) <= 1e-6,
                  estimate=est, exact=D.lipschitz)


def run_all(seed=0, quick=True):
    rng = np.random.default_rng(seed)
    n = 5 if quick else 20
    checks = [
        check_closed_form_phi(rng, 20 if quick else 100),
        check_grid_prox(rng, n),
        check_moreau(rng, n, 16 if quick else 32),
        check_lipschitz(rng, 50 if quick else 1000, 8),
        check_gradients(rng),
        check_pgd(32 if quick else 64, seed),
        check_equivalence(32, seed),
        check_power(seed),
    ]
    return {"seed": seed, "quick": quick, "checks": checks}
