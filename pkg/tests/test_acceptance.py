"""Acceptance criteria; one PASS/FAIL line each is printed in the terminal summary."""
from pathlib import Path

import numpy as np
import pytest

from hardy_lp.calculus import FDConfig, horizontal_gradient
from hardy_lp.cli import emit, load_config, run
from hardy_lp.estimator import ExtremizerFamily, OptimizerConfig, RadialSpline, minimize_ratio
from hardy_lp.geometry import EuclideanPartial, Greiner, Grushin, Heisenberg, HType
from hardy_lp.inequality import (
    ggm_violations,
    make_instance,
    near_extremizer,
    rayleigh_ratio,
    sharpness_sweep,
    standard_bump,
)
from hardy_lp.norms import GreinerNorm, GrushinNorm, HTypeGauge

CONFIGS = Path(__file__).resolve().parent.parent / "configs"
J = [[0.0, 1.0], [-1.0, 0.0]]
EPS = [0.4, 0.2, 0.1, 0.05]


def _closed_1d(eps):
    # v_eps in one dimension: x^(1/2+eps/2) on (0,1), x^-(1/2+eps/4) beyond
    ce, ch = 0.5 + eps / 2, 0.5 + eps / 4
    a, b = 1 / eps, 1 / (2 + eps / 2)
    return (ce**2 * a + ch**2 * b) / (a + b)


def _shell_points(norm, rng, n=100, away=0.1):
    geom = norm.geom
    out = []
    while len(out) < n:
        P = rng.standard_normal((4 * n, geom.N))
        P = dilate_rows(geom, 1.0 / norm(P), P)
        P = dilate_rows(geom, rng.uniform(0.5, 2.0, len(P)), P)
        keep = np.linalg.norm(P[:, : geom.m], axis=1) >= away
        out.extend(P[keep])
    return np.array(out[:n])


def dilate_rows(geom, lam, P):
    return P * np.asarray(lam)[:, None] ** geom.exponents


def _run(data):
    return run(load_config(data=data))


@pytest.mark.criterion(1, "closed-form gradient magnitudes match finite differences")
def test_criterion_01_gradient_magnitudes(record_property):
    rng = np.random.default_rng(42)
    norms = [GrushinNorm(Grushin(1, 1, 1)), GrushinNorm(Grushin(1, 1, 2)), GreinerNorm(Greiner(1, 2)),
             GreinerNorm(Heisenberg(1)), HTypeGauge(HType(2, 1, [J]))]
    worst = {}
    for N in norms:
        P = _shell_points(N, rng)
        nv = N(P)
        assert np.all((nv >= 0.5 - 1e-12) & (nv <= 2 + 1e-12))
        closed = N.closed_grad_mag(P)
        fd = np.linalg.norm(horizontal_gradient(N.geom, N, P, FDConfig(h_rel=1e-6), analytic=False), axis=1)
        worst[f"{N.name}/{type(N.geom).__name__}"] = float(np.max(np.abs(closed - fd) / closed))
    w = max(worst.values())
    record_property("detail", f"max rel err {w:.2e} <= 1e-6 over {len(norms)} norms x 100 points")
    assert w <= 1e-6, worst


@pytest.mark.criterion(2, "Gamma_p harmonicity residuals converge at order 2")
def test_criterion_02_harmonicity(record_property):
    cases = [({"type": "grushin", "n": 1, "k": 1, "gamma": 1}, 2),
             ({"type": "heisenberg", "n": 1}, 2),
             ({"type": "heisenberg", "n": 1}, 4)]
    details, ok = [], True
    for geom, p in cases:
        rep = _run({"experiment": "harmonicity", "geometry": geom,
                    "harmonicity": {"target": "gamma", "p": p, "steps": [1e-3, 5e-4, 2.5e-4], "tol": 1e-3}})
        ok &= rep.summary.passed
        order = [c.detail for c in rep.summary.checks if c.name.endswith("fd order")][0]
        details.append(f"{geom['type']} p={p}: order {order.split()[0]}, finest {rep.rows[-1].ratio:.1e}")
    record_property("detail", "; ".join(details))
    assert ok


@pytest.mark.criterion(3, "polarizability identity within 5x the FD error estimate")
def test_criterion_03_polarizability(record_property):
    details, ok = [], True
    for geom, norm in [({"type": "heisenberg", "n": 1}, None),
                       ({"type": "htype", "l": 2, "k": 1, "U": [J]}, "htype")]:
        rep = _run({"experiment": "harmonicity", "seed": 42, "geometry": geom,
                    "harmonicity": {"target": "polar", "norm": norm, "ps": [2, 3, 4], "points": 100,
                                    "exclude": 0.1, "factor": 5}})
        ok &= rep.summary.passed
        worst = max(r.extra["worst_resid_over_err"] for r in rep.rows)
        details.append(f"{geom['type']}: max resid/err {worst:.2g}")
    record_property("detail", "; ".join(details))
    assert ok


CATALOG = [
    ("GENERAL_H", Grushin(1, 1, 1), {"p": 2, "beta": -2}),
    ("MAIN", Heisenberg(1), {"p": 2, "alpha": -2, "beta": -2}),
    ("MAIN_PART", EuclideanPartial(3, 3), {"p": 2, "alpha": -1}),
    ("SPEC", EuclideanPartial(1, 1), {"p": 2, "beta": -2}),
    ("SPEC", Heisenberg(1), {"p": 3, "beta": 0, "m": 2}),
    ("SPEC_LOG", EuclideanPartial(2, 3), {"p": 2, "beta": -2, "R": 1}),
    ("POINCARE", Grushin(1, 1, 1), {"p": 2, "M": 1}),
    ("COS_STRIP", EuclideanPartial(2, 2), {"p": 2}),
    ("GRUSHIN", Grushin(1, 1, 1), {"p": 2, "beta": -2}),
    ("GRUSHIN", Grushin(1, 1, 2), {"p": 3, "beta": 0, "R": 2}),
    ("GRUSHIN_LOG", Grushin(1, 1, 1), {"p": 3, "beta": -2, "R": 1}),
    ("GRUSHIN_Z", Grushin(1, 1, 1), {"p": 2, "beta": -0.5}),
    ("GREINER", Greiner(1, 2), {"p": 2, "beta": -2}),
    ("GREINER_Z", Greiner(1, 1), {"p": 2, "beta": -1}),
    ("CARNOT", HType(2, 1, [J]), {"p": 2, "beta": -2}),
    ("CARNOT_Z", HType(2, 1, [J]), {"p": 2, "beta": -2}),
    ("BOUNDARY", Heisenberg(1), {"p": 2, "R": 1}),
    ("EXTERIOR", Grushin(1, 1, 1), {"p": 4, "R": 1}),
    ("DAVIES_HINZ", EuclideanPartial(3, 3), {"p": 2}),
    ("DAVIES_HINZ", EuclideanPartial(3, 3), {"p": 1.5}),
    ("DH_PLUS", Heisenberg(1), {"p": 2}),
]


@pytest.mark.criterion(4, "hard floor for the standard bump across the catalog")
def test_criterion_04_catalog_floor(record_property):
    bad = []
    for tid, geom, prm in CATALOG:
        inst = make_instance(tid, geom, prm)
        r = rayleigh_ratio(inst, standard_bump(inst))
        if not r.ratio >= inst.constant - r.floor_slack:
            bad.append((tid, r.ratio, inst.constant))
    ids = {c[0] for c in CATALOG}
    record_property("detail", f"{len(bad)} violations over {len(CATALOG)} instances ({len(ids)} theorem ids)")
    assert not bad and len(ids) == 18


@pytest.mark.criterion(5, "one-dimensional Hardy: v_eps ratios match the closed form")
def test_criterion_05_closed_form_sharpness(record_property):
    inst = make_instance("SPEC", EuclideanPartial(1, 1), {"p": 2, "beta": -2})
    res = sharpness_sweep(inst, EPS)
    rel = max(abs(r.ratio - _closed_1d(e)) / _closed_1d(e) for e, r in zip(EPS, res.rows))
    final = res.rows[-1].gap
    record_property("detail", f"max rel err {rel:.1e} <= 1e-6, gap(0.05) = {final:.5f} <= 0.03")
    assert rel <= 1e-6 and final <= 0.03


@pytest.mark.criterion(6, "degenerate sharpness on Grushin and Greiner")
def test_criterion_06_degenerate_sharpness(record_property):
    details, ok = [], True
    for tid, geom in [("GRUSHIN", Grushin(1, 1, 1)), ("GREINER", Greiner(1, 2))]:
        inst = make_instance(tid, geom, {"p": 2, "beta": -2})
        res = sharpness_sweep(inst, EPS)
        gaps = [r.gap for r in res.rows]
        good = res.strictly_decreasing() and gaps[-1] <= 0.1 * inst.constant
        ok &= good and all(r.gap >= -r.floor_slack for r in res.rows)
        details.append(f"{tid}: final gap {gaps[-1]:.4g} vs {0.1 * inst.constant:g}")
    record_property("detail", "; ".join(details))
    assert ok


@pytest.mark.criterion(7, "cos-strip truncated near-extremizer within 0.05 of 1/4")
def test_criterion_07_cos_strip(record_property):
    inst = make_instance("COS_STRIP", EuclideanPartial(2, 2), {"p": 2})
    r = rayleigh_ratio(inst, near_extremizer(inst, 0.05, R_out=100.0))
    gap = r.ratio - 0.25
    record_property("detail", f"ratio - 1/4 = {gap:.5f}")
    assert -r.floor_slack <= gap <= 0.05


@pytest.mark.criterion(8, "Poincare floor on 20 seeded bumps")
def test_criterion_08_poincare(record_property):
    rep = run(load_config(CONFIGS / "poincare.yaml"))
    lo = min(r.ratio for r in rep.rows)
    record_property("detail", f"{len(rep.rows)} trials, min ratio {lo:.4g} >= 0.25")
    assert rep.summary.passed and len(rep.rows) == 20 and rep.rows[0].constant == pytest.approx(0.25)


@pytest.mark.criterion(9, "ggm inequality on 1e5 seeded draws")
def test_criterion_09_ggm(record_property):
    n, _ = ggm_violations(np.random.default_rng(42), 100_000, (1.0, 6.0))
    record_property("detail", f"{n} violations")
    assert n == 0


@pytest.mark.criterion(10, "decomposition lower bound on Euclidean R^3 and Heisenberg")
def test_criterion_10_decomposition(record_property):
    details, ok = [], True
    for geom, alpha in [({"type": "euclidean", "m": 3, "N": 3}, -1), ({"type": "heisenberg", "n": 1}, -2)]:
        rep = _run({"experiment": "decomposition", "seed": 42, "geometry": geom,
                    "instance": {"theorem_id": "MAIN_PART", "params": {"p": 2, "alpha": alpha}},
                    "decomposition": {"trials": 10}})
        ok &= rep.summary.passed and len(rep.rows) == 10
        details.append(f"{geom['type']}: {sum(not r.passed for r in rep.rows)} of 10 fail")
    record_property("detail", "; ".join(details))
    assert ok


@pytest.mark.criterion(11, "estimator brackets the sharp constant")
def test_criterion_11_estimator(record_property):
    h1 = make_instance("SPEC", EuclideanPartial(1, 1), {"p": 2, "beta": -2})
    a = minimize_ratio(h1, RadialSpline(h1), OptimizerConfig(max_evals=60, seed=42))
    g = make_instance("GRUSHIN", Grushin(1, 1, 1), {"p": 2, "beta": -2})
    b = minimize_ratio(g, ExtremizerFamily(g), OptimizerConfig(max_evals=30, restarts=1, seed=42))
    record_property("detail", f"1-D best {a.best_ratio:.5f}, Grushin best {b.best_ratio:.5f}")
    assert 0.25 - a.best_err <= a.best_ratio <= 0.2625
    assert abs(b.best_ratio - 0.25) <= 0.025


@pytest.mark.criterion(12, "acceptance suite CSV is byte-identical across runs with seed 42")
def test_criterion_12_determinism(record_property):
    cfg = load_config(CONFIGS / "acceptance.yaml")
    assert cfg.seed == 42
    first = run(cfg)
    second = run(load_config(CONFIGS / "acceptance.yaml"))
    a, b = emit(first, "csv"), emit(second, "csv")
    record_property("detail", f"{len(first.rows)} rows, {len(a)} bytes, suite pass = {first.summary.passed}")
    assert a == b and first.summary.passed
