import numpy as np
import pytest

from hardy_lp.estimator import (
    BumpFamily,
    ExtremizerFamily,
    FamilyError,
    FixedTrial,
    OptimizerConfig,
    RadialSpline,
    make_family,
    minimize_ratio,
)
from hardy_lp.geometry import EuclideanPartial, Grushin
from hardy_lp.inequality import make_instance, radial_bump, rayleigh_ratio


@pytest.fixture(scope="module")
def hardy_1d():
    return make_instance("SPEC", EuclideanPartial(1, 1), {"p": 2, "beta": -2})


@pytest.fixture(scope="module")
def grushin():
    return make_instance("GRUSHIN", Grushin(1, 1, 1), {"p": 2, "beta": -2})


def test_spline_approaches_sharp_constant_1d(hardy_1d):
    res = minimize_ratio(hardy_1d, RadialSpline(hardy_1d), OptimizerConfig(max_evals=150, restarts=2, seed=1))
    assert 0.25 <= res.best_ratio <= 0.2625
    assert res.floor_ok


def test_fixed_trial_returns_its_ratio(hardy_1d):
    u = radial_bump(hardy_1d.d, 1.0, 2.0)
    res = minimize_ratio(hardy_1d, FixedTrial(u))
    assert res.best_ratio == pytest.approx(rayleigh_ratio(hardy_1d, u).ratio, rel=1e-12)
    assert len(res.trace) == 1


def test_extremizer_family_grushin_within_ten_percent(grushin):
    res = minimize_ratio(grushin, ExtremizerFamily(grushin), OptimizerConfig(max_evals=30, restarts=1))
    assert res.floor_ok
    assert res.best_ratio <= 1.1 * grushin.constant


def test_trace_is_monotone_and_complete(hardy_1d):
    opt = OptimizerConfig(max_evals=40, restarts=2, seed=3)
    res = minimize_ratio(hardy_1d, BumpFamily(hardy_1d), opt)
    best = [r.best_so_far for r in res.trace]
    assert all(b1 <= b0 for b0, b1 in zip(best, best[1:]))
    assert best[-1] == res.best_ratio
    assert 0 < len(res.trace) <= opt.max_evals
    assert [r.index for r in res.trace] == list(range(len(res.trace)))


def test_same_seed_same_trace(hardy_1d):
    opt = OptimizerConfig(max_evals=25, restarts=3, seed=7)
    a = minimize_ratio(hardy_1d, BumpFamily(hardy_1d), opt)
    b = minimize_ratio(hardy_1d, BumpFamily(hardy_1d), opt)
    assert [r.ratio for r in a.trace] == [r.ratio for r in b.trace]


def test_poincare_box_bump():
    inst = make_instance("POINCARE", Grushin(1, 1, 1), {"p": 2, "M": 1})
    res = minimize_ratio(inst, BumpFamily(inst), OptimizerConfig(max_evals=20, restarts=1))
    assert res.best_ratio >= inst.constant
    assert set(res.best_params) == {"center", "half_width"}


def test_family_errors():
    box = make_instance("POINCARE", Grushin(1, 1, 1), {"p": 2, "M": 1})
    with pytest.raises(FamilyError):
        RadialSpline(box)
    with pytest.raises(FamilyError):
        ExtremizerFamily(box)
    strip = make_instance("COS_STRIP", EuclideanPartial(2, 2), {"p": 2})
    with pytest.raises(FamilyError):
        RadialSpline(strip)
    with pytest.raises(FamilyError):
        make_family("simplex", strip)


def test_optimizer_config_validation():
    with pytest.raises(ValueError):
        OptimizerConfig(max_evals=0)
    with pytest.raises(ValueError):
        OptimizerConfig(restarts=0)


def test_extremizer_truncates_only_when_needed(grushin):
    assert not ExtremizerFamily(grushin).truncate
    strip = make_instance("COS_STRIP", EuclideanPartial(2, 2), {"p": 2})
    fam = ExtremizerFamily(strip)
    assert fam.truncate and len(fam.x0) == 2
    assert set(fam.describe(fam.x0)) == {"epsilon", "R_out"}


def test_spline_describe_has_zero_endpoints(hardy_1d):
    fam = RadialSpline(hardy_1d, knots=6)
    info = fam.describe(fam.x0)
    assert info["values"][0] == 0.0 and info["values"][-1] == 0.0
    assert np.all(np.diff(info["knots"]) > 0)
