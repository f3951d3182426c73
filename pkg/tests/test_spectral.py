import numpy as np
import pytest

from proxpnp.core import ConvKernel, synthetic_image
from proxpnp.denoiser import LinearGSDenoiser, PointwiseGSDenoiser, make_denoiser
from proxpnp.spectral import (
    JacobianProbe,
    along_trajectory_check,
    max_spectral_over_corpus,
    power_iteration,
    spectral_table_csv,
)

RNG = np.random.default_rng(11)


def dense_hessian(D, x):
    n = x.size
    return np.array([D.hvp(x, e.reshape(x.shape)).ravel() for e in np.eye(n)]).T


class ScaledIdentity:
    """Stand-in whose Hessian is ``c I``."""

    def __init__(self, c):
        self.c = c

    def hvp(self, x, v):
        return self.c * v

    def grad_g(self, x):
        return self.c * x


# 1 - K^ = 0.4 - 0.2 cos a - 0.2 cos b peaks only at (pi, pi) on even grids
PLUS = ConvKernel(np.array([[0.0, 0.1, 0.0], [0.1, 0.6, 0.1], [0.0, 0.1, 0.0]]))


def test_linear_estimate_matches_symbol():
    D = LinearGSDenoiser(PLUS, (16, 16))
    assert D.lipschitz == pytest.approx(0.64)
    est = power_iteration(JacobianProbe(D, np.zeros((16, 16))), iters=None, seed=3)
    assert abs(est - 0.64) <= 1e-6


def test_pointwise_at_zero():
    D = PointwiseGSDenoiser(0.7, 0.2)
    assert power_iteration(JacobianProbe(D, np.zeros((8, 8))), iters=5) == pytest.approx(0.7, abs=1e-12)


def test_zero_operator():
    D = LinearGSDenoiser(ConvKernel.delta(1), (8, 8))
    assert power_iteration(JacobianProbe(D, RNG.random((8, 8))), iters=20) == 0.0


def test_monotone_history_and_dense_bound():
    # pointwise: curvature peaks where x = 0 and is well separated elsewhere
    xp = np.full((12, 12), 0.5)
    xp[3, 4] = 0.0
    for D, x in ((LinearGSDenoiser(PLUS, (12, 12)), RNG.random((12, 12))), (PointwiseGSDenoiser(0.9, 0.05), xp)):
        true = np.abs(np.linalg.eigvalsh(dense_hessian(D, x))).max()
        est, hist = power_iteration(JacobianProbe(D, x), iters=None, seed=1, history=True)
        assert max(hist) <= true + 1e-8
        assert np.all(np.diff(hist) >= -1e-12)
        assert abs(est - true) <= 1e-6


def test_finite_difference_probe():
    D = LinearGSDenoiser.from_noise_level(0.05, (12, 12))
    x = RNG.random((12, 12))
    v = RNG.standard_normal((12, 12))
    fd = JacobianProbe(D, x, mode="fd", h=1e-4)(v)
    an = JacobianProbe(D, x)(v)
    assert np.linalg.norm(fd - an) <= 1e-5 * np.linalg.norm(an)
    P = PointwiseGSDenoiser(0.9, 0.3)
    probe = JacobianProbe(P, x, mode="fd")
    w = RNG.standard_normal((12, 12))
    lhs = probe(2.0 * v + 3.0 * w)
    rhs = 2.0 * probe(v) + 3.0 * probe(w)
    assert np.linalg.norm(lhs - rhs) <= 1e-6 * np.linalg.norm(rhs)


def test_corpus_table():
    images = [synthetic_image(16, seed=s) for s in range(2)]
    table = max_spectral_over_corpus(lambda s, shape: make_denoiser("pointwise", s), images, [0.01, 0.05], iters=30)
    assert set(table) == {0.01, 0.05}
    assert all(v <= 0.9 * (1 + 1e-4) for v in table.values())
    zero = LinearGSDenoiser(ConvKernel.delta(1), (16, 16))
    assert all(v == 0.0 for v in max_spectral_over_corpus(zero, images, [0.01], iters=10).values())
    csv = spectral_table_csv({"pointwise": table})
    lines = csv.splitlines()
    assert lines[0] == "denoiser,0.01,0.05"
    assert lines[1].startswith("pointwise,")
    with pytest.raises(ValueError):
        max_spectral_over_corpus(zero, [], [0.01])


def test_along_trajectory():
    D = PointwiseGSDenoiser(0.9, 0.05)
    rep = along_trajectory_check([RNG.random((8, 8)) for _ in range(3)], D, iters=30)
    assert rep["passed"] and rep["max"] <= 0.9 + 1e-12
    bad = along_trajectory_check([np.zeros((4, 4))], ScaledIdentity(1.2), iters=5)
    assert not bad["passed"] and bad["max"] == pytest.approx(1.2)
    empty = along_trajectory_check([], D)
    assert empty["passed"] and empty["status"] == "no data"


def test_probe_errors():
    with pytest.raises(ValueError):
        JacobianProbe(ScaledIdentity(1.0), np.zeros(3), mode="lanczos")
    with pytest.raises(FloatingPointError):
        JacobianProbe(ScaledIdentity(1.0), np.array([np.nan]))
    with pytest.raises(ValueError):
        power_iteration(JacobianProbe(ScaledIdentity(1.0), np.zeros(3)), iters=0)
