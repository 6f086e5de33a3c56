"""Randomized invariants checked with hypothesis."""
import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from hardy_lp.geometry import Greiner, Grushin, Heisenberg, dilate
from hardy_lp.inequality import ggm_check, make_instance, radial_bump, rayleigh_ratio
from hardy_lp.norms import GreinerNorm, GrushinNorm, HTypeGauge
from hardy_lp.quadrature import Box, QuadratureScheme, integrate

coord = st.floats(-3, 3, allow_nan=False)
lam = st.floats(0.05, 20)

NORMS = [
    (Grushin(1, 1, 1), GrushinNorm),
    (Grushin(2, 1, 0.5), GrushinNorm),
    (Greiner(1, 2), GreinerNorm),
    (Heisenberg(1), HTypeGauge),
]


@pytest.mark.parametrize("geom,cls", NORMS, ids=lambda x: getattr(x, "__name__", type(x).__name__))
@settings(max_examples=50, deadline=None, suppress_health_check=[HealthCheck.function_scoped_fixture])
@given(data=st.data(), lam=lam)
def test_norm_is_dilation_homogeneous(geom, cls, data, lam):
    xi = np.array(data.draw(st.lists(coord, min_size=geom.N, max_size=geom.N)))
    N = cls(geom)
    assert N(dilate(geom, lam, xi)[None, :])[0] == pytest.approx(lam * N(xi[None, :])[0], rel=1e-10, abs=1e-300)


@settings(max_examples=300, deadline=None)
@given(x=st.floats(1e-3, 50), gap=st.floats(1e-6, 100), s=st.floats(1, 6))
def test_ggm_holds_whenever_x_exceeds_eta(x, gap, s):
    assert ggm_check(x, x - gap, s)


INST = make_instance("GRUSHIN", Grushin(1, 1, 1), {"p": 2, "beta": -2})


@settings(max_examples=15, deadline=None)
@given(a=st.floats(0.05, 3), w=st.floats(0.05, 3))
def test_random_bumps_respect_lower_bound(a, w):
    r = rayleigh_ratio(INST, radial_bump(INST.d, a, a + w))
    assert r.ratio >= INST.constant - r.floor_slack


@settings(max_examples=40, deadline=None)
@given(q=st.integers(2, 12), coeffs=st.lists(st.floats(-5, 5), min_size=1, max_size=24))
def test_gauss_rule_exact_for_low_degree(q, coeffs):
    c = np.array(coeffs[: 2 * q])
    sch = QuadratureScheme(order=q)
    r = integrate(lambda P: np.polynomial.polynomial.polyval(P[:, 0], c), Box([0.0], [1.0]), sch)
    exact = float(np.sum(c / np.arange(1, len(c) + 1)))
    assert r.value == pytest.approx(exact, rel=1e-11, abs=1e-11)
