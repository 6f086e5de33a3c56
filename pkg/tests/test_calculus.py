import numpy as np
import pytest

from hardy_lp.calculus import (
    DegeneratePointError,
    FDConfig,
    Profile,
    ScalarField,
    harmonicity_scan,
    horizontal_gradient,
    horizontal_hessian,
    lp_fd_error,
    lp_operator,
    lp_operator_batch,
    radial_lp_formula,
)
from hardy_lp.geometry import EuclideanPartial, Grushin, Heisenberg
from hardy_lp.norms import GreinerNorm, GrushinNorm, euclidean_norm
from hardy_lp.quadrature import HomAnnulus

H1 = Heisenberg(1)


def test_gradient_examples():
    t = ScalarField(lambda P: P[:, 2], name="t")
    np.testing.assert_allclose(horizontal_gradient(H1, t, [1.0, 2.0, 0.0]), [4.0, -2.0], atol=1e-9)
    y = ScalarField(lambda P: P[:, 1], name="y")
    np.testing.assert_allclose(horizontal_gradient(Grushin(1, 1, 1), y, [3.0, 0.0]), [0.0, 3.0], atol=1e-9)
    c = ScalarField(lambda P: np.full(len(P), 3.0), name="c")
    np.testing.assert_array_equal(horizontal_gradient(H1, c, [0.3, 0.1, 2.0]), [0.0, 0.0])


def test_gradient_exact_on_quadratics():
    A = np.array([[1.0, 0.5, -0.2], [0.5, 2.0, 0.1], [-0.2, 0.1, 0.3]])
    b = np.array([0.3, -1.0, 2.0])
    u = ScalarField(lambda P: np.einsum("ij,jk,ik->i", P, A, P) + P @ b, name="q")
    P = np.random.default_rng(0).normal(size=(10, 3))
    fd = horizontal_gradient(H1, u, P, FDConfig(h_rel=1e-3))
    exact = np.einsum("mij,mj->mi", H1.mu(P), 2 * P @ A + b)
    np.testing.assert_allclose(fd, exact, rtol=1e-10, atol=1e-10)


def test_analytic_gradient_preferred():
    calls = []
    u = ScalarField(lambda P: np.sum(P, axis=1), egrad=lambda P: calls.append(1) or np.ones_like(P), name="s")
    horizontal_gradient(H1, u, [1.0, 1.0, 1.0])
    assert calls


def test_laplacian_of_square_norm():
    g = EuclideanPartial(3, 3)
    u = ScalarField(lambda P: np.sum(P**2, axis=1), name="r2")
    assert lp_operator(g, 2, u, [0.3, -0.7, 1.1]) == pytest.approx(6.0, rel=1e-6)


def test_grushin_gamma2_harmonic():
    g = Grushin(1, 1, 1)
    N = GrushinNorm(g)
    u = ScalarField(lambda P: N(P) ** -1.0, name="G2")
    xi = np.array([0.6, 0.0])
    xi[1] = np.sqrt((1 - xi[0] ** 4) / 4)
    assert N(xi) == pytest.approx(1.0)
    assert abs(lp_operator(g, 2, u, xi)) < 1e-5


def test_heisenberg_p4_polarizable_example():
    N = GreinerNorm(H1)
    assert lp_operator(H1, 4, N, [1.0, 0.0, 0.0]) == pytest.approx(3.0, rel=1e-5)


def test_degenerate_point_error():
    u = ScalarField(lambda P: np.sum(P**2, axis=1), name="r2")
    with pytest.raises(DegeneratePointError) as e:
        lp_operator(EuclideanPartial(2, 2), 3, u, [0.0, 0.0])
    assert e.value.xi.tolist() == [0.0, 0.0]


def test_batch_flags_degenerate_points():
    u = ScalarField(lambda P: np.sum(P**2, axis=1), name="r2")
    P = np.array([[0.0, 0.0], [1.0, 0.0]])
    vals, bad = lp_operator_batch(EuclideanPartial(2, 2), 3, u, P)
    assert bad.tolist() == [True, False]
    assert np.isfinite(vals[1])


def test_hessian_shape_and_symmetric_part():
    u = ScalarField(lambda P: P[:, 0] ** 2 * P[:, 1], name="x2y")
    Hs = horizontal_hessian(EuclideanPartial(2, 2), u, [1.0, 2.0], FDConfig(h_rel=1e-4))
    np.testing.assert_allclose(Hs, [[4.0, 2.0], [2.0, 0.0]], atol=1e-6)


S = Profile(lambda s: s, lambda s: np.ones_like(s), lambda s: np.zeros_like(s), "s")
S2 = Profile(lambda s: s**2, lambda s: 2 * s, lambda s: np.full_like(s, 2.0), "s^2")
EXP = Profile(np.exp, np.exp, np.exp, "exp")


def test_radial_formula_examples():
    g3 = EuclideanPartial(3, 3)
    r = euclidean_norm(3)
    assert radial_lp_formula(g3, 2, -1.0, r, S2, [1.0, 0.0, 0.0]) == pytest.approx(6.0, rel=1e-9)
    assert radial_lp_formula(g3, 3, 1.0, r, S, [0.2, 0.5, 0.1]) == 0.0


def test_radial_formula_rejects_flat_profile():
    flat = Profile(lambda s: np.ones_like(s), lambda s: np.zeros_like(s), lambda s: np.zeros_like(s))
    with pytest.raises(ValueError):
        radial_lp_formula(H1, 2, -2.0, GreinerNorm(H1), flat, [1.0, 0.0, 0.0])


@pytest.mark.parametrize("geom,norm", [(H1, GreinerNorm(H1)), (Grushin(1, 1, 1), GrushinNorm(Grushin(1, 1, 1)))])
def test_radial_formula_matches_fd(geom, norm):
    """100 random (point, profile) draws: closed-form L_p v(N) against the FD operator."""
    rng = np.random.default_rng(11)
    Q = geom.Q
    cfg = FDConfig(h_rel=1e-5)
    count = 0
    while count < 100:
        xi = rng.normal(size=geom.N)
        if np.linalg.norm(xi[: geom.m]) < 0.2 or not 0.5 < norm(xi) < 2:
            continue
        p = float(rng.choice([2.0, 3.0, 4.0]))
        v = [S, S2, EXP][count % 3]
        alpha = (p - Q) / (p - 1)
        u = ScalarField(lambda P, v=v: v.v(norm(P)), name=v.name)
        closed = radial_lp_formula(geom, p, alpha, norm, v, xi)
        fd = lp_operator(geom, p, u, xi, cfg)
        err = lp_fd_error(geom, p, u, xi[None, :], cfg)[0]
        assert abs(closed - fd) <= 5 * err + 1e-6 * abs(closed), (xi, p, v.name)
        count += 1


def test_harmonicity_scan_euclidean_log():
    g = EuclideanPartial(2, 2)
    r = euclidean_norm(2)
    u = ScalarField(lambda P: np.log(r(P)), name="log")
    res = harmonicity_scan(g, 2, u, HomAnnulus(r, 0.5, 2.0), grid=12, cfg=FDConfig(h_rel=1e-4))
    assert res.max_residual < 1e-5
    assert res.grid_points_skipped == 0


def test_fd_config_validation():
    with pytest.raises(ValueError):
        FDConfig(h_rel=0)
    assert FDConfig(h_rel=1e-6).h2 == 1e-4
    assert FDConfig(h_rel=1e-3).h2 == 1e-3
