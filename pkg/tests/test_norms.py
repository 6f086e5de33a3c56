import math

import numpy as np
import pytest

from hardy_lp.calculus import FDConfig, horizontal_gradient
from hardy_lp.geometry import EuclideanPartial, Greiner, Grushin, Heisenberg, HType
from hardy_lp.norms import (
    FirstLayerEuclid,
    GreinerNorm,
    GrushinNorm,
    HTypeGauge,
    NormError,
    NSNorm,
    euclidean_norm,
    gamma_profile,
    make_norm,
    norm_gradient_magnitude,
    norm_value,
)

J = [[0.0, 1.0], [-1.0, 0.0]]


def test_norm_value_examples():
    N = GrushinNorm(Grushin(1, 1, 1))
    assert norm_value(N, [1.0, 0.0]) == pytest.approx(1.0, abs=1e-15)
    assert norm_value(N, [0.0, 1.0]) == pytest.approx(math.sqrt(2.0), rel=1e-15)
    assert norm_value(HTypeGauge(HType(2, 1, [J])), [0.0, 0.0, 1.0]) == pytest.approx(2.0, rel=1e-15)


def test_gradient_magnitude_examples():
    N = GrushinNorm(Grushin(1, 1, 1))
    assert norm_gradient_magnitude(N, [1.0, 0.0]) == pytest.approx(1.0)
    assert norm_gradient_magnitude(N, [0.0, 1.0]) == 0.0
    assert norm_gradient_magnitude(HTypeGauge(Heisenberg(1)), [1.0, 0.0, 0.0]) == pytest.approx(1.0)


def test_gradient_magnitude_singular_point():
    with pytest.raises(NormError):
        norm_gradient_magnitude(GrushinNorm(Grushin(1, 1, 1)), [0.0, 0.0])


@pytest.mark.parametrize("p,Q,s,expected", [(2, 4, 2.0, 0.25), (4, 4, 1.0, 0.0), (2, 3, 4.0, 0.25)])
def test_gamma_profile_examples(p, Q, s, expected):
    assert gamma_profile(p, Q, s) == pytest.approx(expected, abs=1e-15)


def test_gamma_profile_errors():
    with pytest.raises(ValueError):
        gamma_profile(2, 3, 0.0)
    with pytest.raises(ValueError):
        gamma_profile(1.0, 3, 1.0)


def test_gamma_profile_exponent_exact():
    assert gamma_profile(3.0, 6.0, 2.0) == 2.0 ** (-1.5)


NORMS = [
    GrushinNorm(Grushin(1, 1, 1)),
    GrushinNorm(Grushin(2, 1, 2)),
    GreinerNorm(Greiner(1, 2)),
    GreinerNorm(Heisenberg(1)),
    HTypeGauge(HType(2, 1, [J])),
    NSNorm(Heisenberg(1)),
]


@pytest.mark.parametrize("N", NORMS, ids=lambda n: f"{n.name}-{n.geom!r}")
def test_dilation_homogeneity(N):
    rng = np.random.default_rng(3)
    P = rng.normal(size=(50, N.geom.N))
    for lam in (1e-2, 0.3, 7.0, 1e2):
        lhs = N(N.geom.dilate(lam, P))
        np.testing.assert_allclose(lhs, lam * N(P), rtol=1e-12)


@pytest.mark.parametrize("N", NORMS[:5], ids=lambda n: f"{n.name}-{n.geom!r}")
def test_closed_gradient_matches_fd(N):
    rng = np.random.default_rng(4)
    P = rng.normal(size=(200, N.geom.N))
    P = P[np.linalg.norm(P[:, : N.geom.m], axis=1) > 0.1][:50]
    closed = N.closed_grad_mag(P)
    fd = np.linalg.norm(horizontal_gradient(N.geom, N, P, FDConfig(h_rel=1e-6), analytic=False), axis=1)
    np.testing.assert_allclose(closed, fd, rtol=1e-6)


def test_grushin_gradient_bounded_by_one():
    N = GrushinNorm(Grushin(1, 2, 1.5))
    P = np.random.default_rng(5).normal(size=(500, 3))
    assert np.all(N.grad_mag(P) <= 1.0 + 1e-15)


def test_gauge_and_ns_equivalent():
    g = Heisenberg(1)
    ns, gauge = NSNorm(g), GreinerNorm(g)
    P = np.random.default_rng(6).normal(size=(1000, 3))
    P = P * (1.0 / ns(P))[:, None] ** g.exponents
    np.testing.assert_allclose(ns(P), 1.0, rtol=1e-12)
    r = gauge(P)
    assert np.all(np.isfinite(r)) and r.min() > 0
    assert r.max() / r.min() < 10


def test_first_layer_gradient_is_one():
    g = Grushin(2, 1, 1)
    z = FirstLayerEuclid(g)
    P = np.random.default_rng(7).normal(size=(20, 3))
    fd = np.linalg.norm(horizontal_gradient(g, z, P, FDConfig(h_rel=1e-6), analytic=False), axis=1)
    np.testing.assert_allclose(fd, 1.0, rtol=1e-8)
    assert norm_gradient_magnitude(z, P[0]) == 1.0
    assert z.Qeff == 2 and not z.full


def test_zero_set():
    assert GrushinNorm(Grushin(1, 1, 1))([0.0, 0.0]) == 0.0
    z = FirstLayerEuclid(Heisenberg(1))
    assert z([0.0, 0.0, 5.0]) == 0.0


def test_make_norm_and_errors():
    assert isinstance(make_norm("heisenberg", Heisenberg(1)), GreinerNorm)
    assert isinstance(make_norm("first_layer", Heisenberg(1), m=1), FirstLayerEuclid)
    with pytest.raises(NormError):
        make_norm("nope", Heisenberg(1))
    with pytest.raises(NormError):
        GrushinNorm(Heisenberg(1))
    with pytest.raises(NormError):
        FirstLayerEuclid(Heisenberg(1), m=3)


def test_euclidean_norm():
    n = euclidean_norm(3)
    assert n([3.0, 4.0, 0.0]) == pytest.approx(5.0)
    assert n.full
    assert isinstance(n.geom, EuclideanPartial)
