"""Catalog of Hardy and Poincare inequalities, Rayleigh ratios and sharpness sweeps.

Every inequality is stored in the normalised form

    constant * int |u|^p w_den  <=  int |grad_L u|^p w_num

so that the Rayleigh ratio ``num / den`` of any admissible trial function
is bounded below by ``constant``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .calculus import FDConfig, ScalarField, lp_operator_batch
from .geometry import EuclideanPartial, Geometry, Greiner, Grushin, HType, Step2
from .norms import (
    FirstLayerEuclid,
    GreinerNorm,
    GrushinNorm,
    HomogeneousNorm,
    HTypeGauge,
    NSNorm,
    make_norm,
)
from .quadrature import (
    INF,
    Box,
    Domain,
    Exterior,
    HomAnnulus,
    IntegralResult,
    QuadratureScheme,
    Slab,
    integrability_predicate,
    integrate_many,
)

__all__ = [
    "THEOREM_IDS",
    "InstanceError",
    "Predicate",
    "Distance",
    "InequalityInstance",
    "TrialFunction",
    "RatioResult",
    "SweepRow",
    "SweepResult",
    "Decomposition",
    "make_instance",
    "natural_norm",
    "c_alpha_beta",
    "near_extremizer",
    "standard_bump",
    "ball_bump",
    "box_bump",
    "radial_bump",
    "dilate_trial",
    "rayleigh_ratio",
    "sharpness_sweep",
    "converse_holds",
    "ggm_check",
    "ggm_violations",
    "achieve_decomposition",
]

THEOREM_IDS = (
    "GENERAL_H", "MAIN", "MAIN_PART", "SPEC", "SPEC_LOG", "POINCARE", "COS_STRIP",
    "GRUSHIN", "GRUSHIN_LOG", "GRUSHIN_Z", "GREINER", "GREINER_Z", "CARNOT", "CARNOT_Z",
    "BOUNDARY", "EXTERIOR", "DAVIES_HINZ", "DH_PLUS",
)


class InstanceError(ValueError):
    """Raised when a theorem cannot be instantiated; ``predicate`` names the failing check."""

    def __init__(self, predicate: str, detail: str):
        self.predicate = predicate
        super().__init__(f"{predicate}: {detail}")


@dataclass(frozen=True)
class Predicate:
    name: str
    ok: bool
    detail: str = ""


def c_alpha_beta(alpha: float, beta: float, p: float) -> float:
    return abs((alpha - 1.0) * (p - 1.0) - beta - 1.0) / p


# ---------------------------------------------------------------------------
# distance functions


class Distance(ScalarField):
    """A positive function d with analytic gradient and |grad_L d|.

    ``dim0`` and ``dim_inf`` are the effective dimensions governing
    integrability of powers of d where d -> 0 and d -> infinity (None when
    that end is not reached inside the domain).  When d = phi(N) for a
    monotone phi, ``level_map`` sends a level of d to the corresponding
    level of the norm so that kinks can be aligned with quadrature shells.
    """

    def __init__(self, f, egrad, grad_mag, name, *, dim0, dim_inf=None, base=None, level_map=None, d_max=INF):
        super().__init__(f, egrad=egrad, name=name)
        self.grad_mag = grad_mag
        self.d_max = float(d_max)
        self.dim0, self.dim_inf = dim0, dim_inf
        self.base, self.level_map = base, level_map

    def interface(self, level: float):
        if self.base is not None and self.level_map is not None:
            return (self.base, float(self.level_map(level)))
        return (self, float(level))

    @classmethod
    def of_norm(cls, norm: HomogeneousNorm, d_max: float = INF):
        return cls(norm, norm.egrad, norm.grad_mag, norm.name, dim0=norm.Qeff,
                   dim_inf=norm.Qeff if d_max == INF else None, base=norm, level_map=lambda c: c, d_max=d_max)

    @classmethod
    def mapped(cls, norm: HomogeneousNorm, phi, dphi, inv, name, *, dim0, dim_inf=None, d_max=INF):
        return cls(
            lambda P: phi(norm(P)),
            lambda P: dphi(norm(P))[:, None] * norm.egrad(P),
            lambda P: np.abs(dphi(norm(P))) * norm.grad_mag(P),
            name, dim0=dim0, dim_inf=dim_inf, base=norm, level_map=inv, d_max=d_max,
        )


def _cos_distance() -> Distance:
    def f(P):
        return np.exp(P[:, 1]) * np.cos(P[:, 0])

    def eg(P):
        e = np.exp(P[:, 1])
        return np.column_stack([-e * np.sin(P[:, 0]), e * np.cos(P[:, 0])])

    return Distance(f, eg, lambda P: np.exp(P[:, 1]), "exp(y)cos(x)", dim0=1)


# ---------------------------------------------------------------------------
# instances


@dataclass(frozen=True)
class InequalityInstance:
    theorem_id: str
    geom: Geometry
    params: dict
    p: float
    constant: float
    w_num: Callable
    w_den: Callable
    dom: Domain
    admissibility: tuple
    d: Distance | None = None
    c0: float | None = None
    beta_eff: float | None = None
    alpha: float | None = None
    sharp: bool = False
    cutoff: str = "distance"
    notes: str = ""

    @property
    def c(self) -> float:
        return self.constant ** (1.0 / self.p)

    def record(self) -> dict:
        g = self.geom
        return {
            "theorem_id": self.theorem_id,
            "p": self.p,
            "alpha": self.alpha,
            "beta": self.params.get("beta"),
            "gamma": getattr(g, "gamma", None),
            "n": getattr(g, "n", None),
            "k": getattr(g, "k", None),
            "m": self.params.get("m", g.m),
            "R": self.params.get("R"),
        }


def natural_norm(geom: Geometry) -> HomogeneousNorm:
    """The gauge each geometry ships with."""
    if isinstance(geom, Grushin):
        return GrushinNorm(geom)
    if isinstance(geom, Greiner) or geom.kind == "heisenberg":
        return GreinerNorm(geom)
    if isinstance(geom, HType):
        return HTypeGauge(geom)
    if isinstance(geom, Step2):
        return NSNorm(geom)
    if isinstance(geom, EuclideanPartial):
        if geom.m != geom.N:
            raise InstanceError("norm", "EuclideanPartial with m < N has no full gauge; use a first-layer theorem")
        return FirstLayerEuclid(geom, geom.N)
    raise InstanceError("norm", f"no natural norm for {geom!r}")


def _polarizable(norm: HomogeneousNorm) -> bool:
    """N^((p-Q)/(p-1)) is L_p-harmonic off the singular set for every p."""
    if isinstance(norm, (GrushinNorm, GreinerNorm)):
        return True
    if isinstance(norm, HTypeGauge):
        return isinstance(norm.geom, HType)
    if isinstance(norm, FirstLayerEuclid):
        return True  # |z| depends on the first block only, where grad_L acts as grad_z
    return False


def _sign_of_power(norm: HomogeneousNorm, alpha: float, p: float, origin_in: bool):
    """Sign of -L_p(N^alpha) on the domain: +1, -1, 0 (harmonic) or None (indefinite)."""
    Q = norm.Qeff
    if _polarizable(norm) and p != Q:
        a0 = (p - Q) / (p - 1.0)
        off = -alpha * (alpha - a0)
        s_off = 0 if abs(off) < 1e-14 else int(np.sign(off))
        # point mass of the fundamental solution sits at the singular set
        s_mass = int(np.sign(Q - p)) if (s_off == 0 and origin_in) else 0
        signs = {s for s in (s_off, s_mass) if s != 0}
        if len(signs) > 1:
            return None, "changes sign"
        return (signs.pop() if signs else 0), "closed form via the radial L_p formula"
    # no closed form: sample -L_p(N^alpha) on a unit annulus
    u = ScalarField(lambda P: norm(P) ** alpha, egrad=lambda P: (alpha * norm(P) ** (alpha - 1))[:, None] * norm.egrad(P))
    pts = HomAnnulus(norm, 0.5, 2.0).grid_points(6) if norm.full else None
    if pts is None:
        return None, "sampling needs a full norm"
    vals, bad = lp_operator_batch(norm.geom, p, u, pts, FDConfig())
    v = -vals[~bad]
    scale = np.max(np.abs(v)) if len(v) else 0.0
    tol = 1e-5 * max(scale, 1e-300)
    if np.all(np.abs(v) <= max(tol, 1e-8)):
        return 0, "sampled, harmonic to FD accuracy"
    if np.all(v >= -tol):
        return 1, "sampled on 0.5 < N < 2"
    if np.all(v <= tol):
        return -1, "sampled on 0.5 < N < 2"
    return None, "sampled sign changes"


def _gate(preds: list):
    for pr in preds:
        if not pr.ok:
            raise InstanceError(pr.name, pr.detail)
    return tuple(preds)


def _main_predicates(d_norm: HomogeneousNorm, alpha, beta, p, origin_in) -> list:
    """(h1), (h3), (h4), (h5) for d a homogeneous norm (or |z|)."""
    Q = d_norm.Qeff
    preds = []
    sgn, how = _sign_of_power(d_norm, alpha, p, origin_in)
    cval = alpha * ((alpha - 1.0) * (p - 1.0) - beta - 1.0)
    if sgn is None:
        preds.append(Predicate("h3", False, f"-L_p(d^alpha) has no sign ({how})"))
    elif sgn == 0:
        preds.append(Predicate("h3", cval != 0, f"d^alpha harmonic, c = {cval:g} ({how})"))
    else:
        ok = sgn * cval > 0
        kind = "super" if sgn > 0 else "sub"
        preds.append(Predicate("h3", ok, f"d^alpha {kind}-harmonic, c = {cval:g} ({how})"))
    if origin_in:
        for name, deg in (("h1", (alpha - 1.0) * (p - 1.0)), ("h4", beta), ("h5", beta + p)):
            ok = integrability_predicate(deg, Q, "origin")
            preds.append(Predicate(name, ok, f"weight degree {deg:g} vs -{Q:g} at the singular set"))
    else:
        for name in ("h1", "h4", "h5"):
            preds.append(Predicate(name, True, "singular set outside the domain"))
    return preds


def _homogeneous_domain(norm, prm, *, contains_singular_ok=True):
    r0 = float(prm.get("r0", 0.0) or 0.0)
    R = prm.get("R")
    r1 = INF if R is None else float(R)
    dom = HomAnnulus(norm, r0, r1)
    origin_in = r0 == 0 and not prm.get("punctured", False)
    return dom, origin_in


def _require(cond: bool, name: str, detail: str):
    if not cond:
        raise InstanceError(name, detail)


def _get(prm, key, default=None, required=False):
    v = prm.get(key, default)
    if required and v is None:
        raise InstanceError("params", f"missing parameter {key!r}")
    return v


def make_instance(theorem_id: str, geom: Geometry, params: dict | None = None) -> InequalityInstance:
    """Build a fully populated instance, raising InstanceError on failed admissibility."""
    tid = theorem_id.upper()
    if tid not in THEOREM_IDS:
        raise InstanceError("theorem_id", f"unknown theorem {theorem_id!r}")
    prm = dict(params or {})
    p = float(_get(prm, "p", 2.0))
    _require(p > 1, "params", "p must exceed 1")
    prm["p"] = p
    return _BUILDERS[tid](tid, geom, prm, p)


def _weighted(d: Distance, beta: float, p: float, scale_den=1.0, scale_num=1.0):
    def w_den(P):
        return scale_den * d(P) ** beta * d.grad_mag(P) ** p

    def w_num(P):
        return scale_num * d(P) ** (beta + p)

    return w_num, w_den


def _build_main(tid, geom, prm, p):
    """MAIN, MAIN_PART and GENERAL_H with d a homogeneous norm or |z|."""
    norm_name = prm.get("norm")
    if norm_name is None:
        norm = natural_norm(geom)
    else:
        norm = make_norm(norm_name, geom, m=prm.get("m"))
    if not norm.full:
        raise InstanceError("norm", "MAIN-type instances need a full norm; use SPEC for |z|")
    Q = norm.Qeff
    alpha = prm.get("alpha")
    if alpha is None:
        _require(p != Q, "params", "alpha defaults to (p-Q)/(p-1), undefined for p = Q")
        alpha = (p - Q) / (p - 1.0)
    alpha = float(alpha)
    _require(alpha != 0, "params", "alpha must be non-zero")
    beta = -p if tid == "MAIN_PART" else float(_get(prm, "beta", -p))
    prm["alpha"], prm["beta"] = alpha, beta
    dom, origin_in = _homogeneous_domain(norm, prm)
    d = Distance.of_norm(norm, dom.r1)
    preds = _main_predicates(norm, alpha, beta, p, origin_in)
    c = c_alpha_beta(alpha, beta, p)
    if tid == "GENERAL_H":
        cc = abs(alpha * ((alpha - 1.0) * (p - 1.0) - beta - 1.0))
        # h = -alpha d^(beta+1) |grad d|^(p-2) grad d, A_h = c d^beta |grad d|^p
        w_num, w_den = _weighted(d, beta, p, scale_den=cc, scale_num=abs(alpha) ** p * cc ** (1.0 - p))
        preds.append(Predicate("A_h <= div h", True, "equality for this choice of h"))
        constant = p ** (-p)
    else:
        w_num, w_den = _weighted(d, beta, p)
        constant = c ** p
    preds = _gate(preds)
    return InequalityInstance(tid, geom, prm, p, constant, w_num, w_den, dom, preds, d=d, c0=c,
                              beta_eff=beta, alpha=alpha, sharp=origin_in or dom.r0 == 0)


def _build_norm_family(tid, geom, prm, p):
    """GRUSHIN, GREINER and CARNOT: d = N, alpha = (p-Q)/(p-1), constant (|Q+beta|/p)^p."""
    if tid == "GRUSHIN":
        _require(isinstance(geom, Grushin), "geometry", "GRUSHIN needs a Grushin geometry")
    elif tid == "GREINER":
        _require(isinstance(geom, Greiner), "geometry", "GREINER needs a Greiner geometry")
    else:
        _require(isinstance(geom, Step2), "geometry", "CARNOT needs a step-two geometry")
    norm = natural_norm(geom)
    _require(_polarizable(norm), "polarizable", f"Gamma_p of {norm.name} is not known to be L_p-harmonic")
    Q = norm.Qeff
    beta = float(_get(prm, "beta", -p))
    prm["beta"] = beta
    dom, origin_in = _homogeneous_domain(norm, prm)
    preds = []
    if origin_in:
        preds.append(Predicate("beta+Q", beta + Q > 0, f"beta + Q = {beta + Q:g}; 0 must lie outside the domain when negative"))
    if p != Q:
        alpha = (p - Q) / (p - 1.0)
        preds += _main_predicates(norm, alpha, beta, p, origin_in)
    else:
        alpha = None
        preds.append(Predicate("h3", beta + Q != 0, "p = Q endpoint, limit of sub-harmonic powers"))
        if origin_in:
            preds.append(Predicate("h4", beta > -Q, f"weight degree {beta:g}"))
    prm["alpha"] = alpha
    preds = _gate(preds)
    d = Distance.of_norm(norm, dom.r1)
    w_num, w_den = _weighted(d, beta, p)
    c = abs(Q + beta) / p
    return InequalityInstance(tid, geom, prm, p, c ** p, w_num, w_den, dom, preds, d=d, c0=c, beta_eff=beta,
                              alpha=alpha, sharp=dom.r0 == 0)


def _build_log(tid, geom, prm, p):
    """GRUSHIN_LOG: p = Q on the ball N < R with d = ln(R/N)."""
    _require(isinstance(geom, Grushin), "geometry", "GRUSHIN_LOG needs a Grushin geometry")
    norm = natural_norm(geom)
    Q = norm.Qeff
    _require(abs(p - Q) < 1e-12, "p=Q", f"logarithmic form needs p = Q = {Q:g}, got p = {p:g}")
    beta = float(_get(prm, "beta", -2.0))
    R = float(_get(prm, "R", 1.0))
    prm.update(beta=beta, R=R, alpha=1.0)
    preds = _gate([
        Predicate("beta<-1", beta < -1, f"beta = {beta:g}"),
        Predicate("h1", True, "weight degree 1-Q > -Q"),
        Predicate("h3", True, "ln(R/N) is Q-superharmonic and c = -beta-1 > 0"),
    ])
    dom = HomAnnulus(norm, 0.0, R, grade_hi=True)
    d = Distance.mapped(norm, lambda s: np.log(R / s), lambda s: -1.0 / s, lambda c: R * math.exp(-c),
                        f"ln({R:g}/N)", dim0=1, dim_inf=1)
    w_num, w_den = _weighted(d, beta, p)
    c = abs(beta + 1.0) / p
    return InequalityInstance(tid, geom, prm, p, c ** p, w_num, w_den, dom, preds, d=d, c0=c, beta_eff=beta,
                              alpha=1.0, sharp=True, cutoff="none")


def _build_z(tid, geom, prm, p):
    """SPEC, GRUSHIN_Z, GREINER_Z, CARNOT_Z: weights in |z| on a slab."""
    if tid == "GRUSHIN_Z":
        _require(isinstance(geom, Grushin), "geometry", "GRUSHIN_Z needs a Grushin geometry")
    elif tid == "GREINER_Z":
        _require(isinstance(geom, Greiner), "geometry", "GREINER_Z needs a Greiner geometry")
    elif tid == "CARNOT_Z":
        _require(isinstance(geom, Step2), "geometry", "CARNOT_Z needs a step-two geometry")
    m = int(_get(prm, "m", geom.m))
    if tid == "GREINER_Z":
        _require(m == geom.m, "m", "GREINER_Z uses z = (x, y)")
    _require(1 <= m <= geom.m, "matspec", f"need 1 <= m <= {geom.m}")
    beta = float(_get(prm, "beta", -p))
    R = _get(prm, "R")
    tau = float(_get(prm, "tau", 1.0))
    prm.update(m=m, beta=beta, tau=tau)
    alpha = (p - m) / (p - 1.0)
    prm["alpha"] = alpha
    zn = FirstLayerEuclid(geom, m)
    n_tau = geom.N - m
    dom = Slab(geom, m, INF if R is None else float(R), [-tau] * n_tau, [tau] * n_tau, radial_field=zn)
    preds = [Predicate("matspec", True, f"mu = (I_{m} | mu_1) block form"),
             Predicate("m+beta", True, f"m + beta = {m + beta:g}; the slab excludes z = 0")]
    if p != m:
        preds += _main_predicates(zn, alpha, beta, p, origin_in=False)
    preds = _gate(preds)
    d = Distance.of_norm(zn, INF if R is None else float(R))
    w_num, w_den = _weighted(d, beta, p)
    c = abs(m + beta) / p
    return InequalityInstance(tid, geom, prm, p, c ** p, w_num, w_den, dom, preds, d=d, c0=c, beta_eff=beta,
                              alpha=alpha, sharp=True,
                              cutoff="slab")


def _build_spec_log(tid, geom, prm, p):
    m = int(_get(prm, "m", geom.m))
    _require(1 <= m <= geom.m, "matspec", f"need 1 <= m <= {geom.m}")
    _require(abs(p - m) < 1e-12, "p=m", f"logarithmic form needs p = m = {m}")
    beta = float(_get(prm, "beta", -2.0))
    R = float(_get(prm, "R", 1.0))
    tau = float(_get(prm, "tau", 1.0))
    prm.update(m=m, beta=beta, R=R, tau=tau, alpha=1.0)
    preds = _gate([Predicate("beta<-1", beta < -1, f"beta = {beta:g}"),
                   Predicate("matspec", True, f"mu = (I_{m} | mu_1) block form")])
    zn = FirstLayerEuclid(geom, m)
    n_tau = geom.N - m
    dom = Slab(geom, m, R, [-tau] * n_tau, [tau] * n_tau, grade_hi=True, radial_field=zn)
    d = Distance.mapped(zn, lambda s: np.log(R / s), lambda s: -1.0 / s, lambda c: R * math.exp(-c),
                        f"ln({R:g}/|z|)", dim0=1, dim_inf=1)
    w_num, w_den = _weighted(d, beta, p)
    c = abs(beta + 1.0) / p
    return InequalityInstance(tid, geom, prm, p, c ** p, w_num, w_den, dom, preds, d=d, c0=c, beta_eff=beta,
                              alpha=1.0, sharp=True, cutoff="slab")


def _build_poincare(tid, geom, prm, p):
    M = float(_get(prm, "M", 1.0))
    _require(M > 0, "params", "M must be positive")
    L = float(_get(prm, "L", 1.0))
    prm.update(M=M, L=L)
    lo = np.full(geom.N, -L)
    hi = np.full(geom.N, L)
    lo[0], hi[0] = -M, M
    dom = Box(lo, hi)
    preds = _gate([Predicate("matspec", True, "mu = (I_m | mu_1) block form"),
                   Predicate("bounded", True, f"|xi_1| <= {M:g} on the domain")])
    one = lambda P: np.ones(len(P))  # noqa: E731
    return InequalityInstance(tid, geom, prm, p, (1.0 / (p * M)) ** p, one, one, dom, preds, cutoff="none")


def _build_cos(tid, geom, prm, p):
    _require(isinstance(geom, EuclideanPartial) and geom.m == geom.N == 2, "geometry",
             "COS_STRIP lives on R^2 with the full gradient")
    _require(p == 2, "params", "COS_STRIP is stated for p = 2")
    Y = float(_get(prm, "Y", 8.0))
    prm.update(Y=Y, alpha=1.0, beta=-2.0)
    h = math.pi / 2
    dom = Box([-h, -Y - 1.0], [h, Y + 1.0], singular_faces=[(0, 0), (0, 1)], inner_axis=0,
              breaks={1: (-Y, Y)})
    preds = _gate([Predicate("h3", True, "e^y cos x is harmonic and c = 1"),
                   Predicate("h4", True, "1/cos^2 x is locally integrable in the open strip")])
    d = _cos_distance()

    def w_den(P):
        return 1.0 / np.cos(P[:, 0]) ** 2

    return InequalityInstance(tid, geom, prm, 2.0, 0.25, lambda P: np.ones(len(P)), w_den, dom, preds,
                              d=d, c0=0.5, beta_eff=-2.0, alpha=1.0, sharp=True,
                              cutoff="strip")


def _build_boundary(tid, geom, prm, p):
    norm = natural_norm(geom)
    _require(_polarizable(norm), "polarizable", "needs L_p N = (Q-1)|grad N|^p / N")
    R = float(_get(prm, "R", 1.0))
    prm.update(R=R, alpha=1.0, beta=-p)
    preds = _gate([Predicate("h3", True, "-L_p(R - N) = (Q-1)|grad N|^p / N >= 0"),
                   Predicate("h1", True, "|grad N|^(p-1) bounded")])
    dom = HomAnnulus(norm, 0.0, R, grade_lo=False, grade_hi=True)
    d = Distance.mapped(norm, lambda s: R - s, lambda s: -np.ones_like(s), lambda c: R - c, f"{R:g}-N", dim0=1, d_max=R)
    w_num, w_den = _weighted(d, -p, p)
    c = (p - 1.0) / p
    return InequalityInstance(tid, geom, prm, p, c ** p, w_num, w_den, dom, preds, d=d, c0=c, beta_eff=-p,
                              alpha=1.0, sharp=True, cutoff="none")


def _build_exterior(tid, geom, prm, p):
    norm = natural_norm(geom)
    _require(_polarizable(norm), "polarizable", "needs an L_p-harmonic Gamma_p")
    Q = norm.Qeff
    _require(p > Q, "p>Q", f"exterior inequality needs p > Q = {Q:g}")
    R = float(_get(prm, "R", 1.0))
    prm.update(R=R, beta=-p, alpha=1.0)
    preds = _gate([Predicate("p>Q", True, f"p = {p:g} > Q = {Q:g}"),
                   Predicate("h3", True, "N^a - R^a is L_p-harmonic and positive for a = (p-Q)/(p-1)")])
    dom = Exterior(norm, R)
    d = Distance.mapped(norm, lambda s: s - R, lambda s: np.ones_like(s), lambda c: R + c, f"N-{R:g}",
                        dim0=1, dim_inf=Q)
    w_num, w_den = _weighted(d, -p, p)
    c = abs(p - Q) / p
    return InequalityInstance(tid, geom, prm, p, c ** p, w_num, w_den, dom, preds, d=d, c0=c, beta_eff=-p,
                              alpha=1.0, sharp=True)


def _build_dh(tid, geom, prm, p):
    """Davies-Hinz type instances with V a function of a polarizable gauge."""
    norm = natural_norm(geom)
    _require(_polarizable(norm), "polarizable", "L V is only explicit for polarizable gauges")
    Q = norm.Qeff
    _require(p < Q, "p<Q", f"needs p < Q = {Q:g}")
    prm.update(beta=-p)
    dom, origin_in = _homogeneous_domain(norm, prm)
    if tid == "DAVIES_HINZ":
        if p == 2:
            vdesc = "V = ln N"
            # L V = (Q-2)|grad N|^2 / N^2, |grad V| = |grad N| / N
            def w_den(P):
                return (Q - 2.0) * norm.grad_mag(P) ** 2 / norm(P) ** 2

            def w_num(P):
                return np.full(len(P), 1.0 / (Q - 2.0))
        else:
            vdesc = "V = sign(2-p) N^(2-p)"
            # L V = |2-p|(Q-p)|grad N|^2 N^(-p), |grad V| = |2-p| N^(1-p) |grad N|
            def w_den(P):
                return abs(2.0 - p) * (Q - p) * norm.grad_mag(P) ** 2 * norm(P) ** (-p)

            def w_num(P):
                return abs(2.0 - p) * (Q - p) ** (1.0 - p) * norm.grad_mag(P) ** (2.0 - p)
    else:
        vdesc = "V = ln N, h = |grad V|^(p-2) grad V"
        # L_p V = (Q-p) |grad N|^p N^(-p)

        def w_den(P):
            return (Q - p) * norm.grad_mag(P) ** p * norm(P) ** (-p)

        def w_num(P):
            return np.full(len(P), (Q - p) ** (1.0 - p))
    preds = [Predicate("LV>0", True, f"{vdesc}, Q = {Q:g}")]
    if origin_in:
        preds.append(Predicate("h4", integrability_predicate(-p, Q), f"|L V| has degree {-p:g}"))
    preds = _gate(preds)
    d = Distance.of_norm(norm, dom.r1)
    return InequalityInstance(tid, geom, prm, p, p ** (-p), w_num, w_den, dom, preds, d=d, c0=(Q - p) / p,
                              beta_eff=-p, sharp=True, notes=vdesc)


_BUILDERS = {
    "GENERAL_H": _build_main,
    "MAIN": _build_main,
    "MAIN_PART": _build_main,
    "GRUSHIN": _build_norm_family,
    "GREINER": _build_norm_family,
    "CARNOT": _build_norm_family,
    "GRUSHIN_LOG": _build_log,
    "SPEC": _build_z,
    "GRUSHIN_Z": _build_z,
    "GREINER_Z": _build_z,
    "CARNOT_Z": _build_z,
    "SPEC_LOG": _build_spec_log,
    "POINCARE": _build_poincare,
    "COS_STRIP": _build_cos,
    "BOUNDARY": _build_boundary,
    "EXTERIOR": _build_exterior,
    "DAVIES_HINZ": _build_dh,
    "DH_PLUS": _build_dh,
}


# ---------------------------------------------------------------------------
# trial functions


class TrialFunction(ScalarField):
    """Piecewise C^1 trial function with analytic Euclidean gradient."""

    def __init__(self, f, egrad, name, interfaces=(), meta=None):
        super().__init__(f, egrad=egrad, name=name, interfaces=interfaces)
        self.meta = dict(meta or {})


def _smoothstep_down(t):
    """1 for t <= 0, 0 for t >= 1, C^2 quintic in between; returns value and derivative."""
    t = np.clip(t, 0.0, 1.0)
    s = t * t * t * (10.0 - 15.0 * t + 6.0 * t * t)
    ds = 30.0 * t * t * (1.0 - t) ** 2
    return 1.0 - s, -ds


def _bump1(t):
    """(1 - t)^3 on [0, 1), zero beyond; value and derivative in t."""
    s = np.clip(1.0 - t, 0.0, None)
    return s ** 3, -3.0 * s ** 2


def near_extremizer(inst: InequalityInstance, eps: float, R_out: float | None = None) -> TrialFunction:
    """d^c(eps) for d <= 1 and d^-c(eps/2) for d > 1, with c(eps) = c0 + eps/p.

    ``R_out`` multiplies by a C^2 cutoff: in d over [R_out, 2 R_out] for
    distance-type instances, in the transverse variables for slabs and in
    |y| over [R_out, R_out + 1] for the cosine strip (which always needs it).
    """
    if inst.d is None or inst.c0 is None:
        raise InstanceError("near_extremizer", f"{inst.theorem_id} has no near-extremizer family")
    if not eps > 0:
        raise InstanceError("int:sharp", "eps must be positive")
    d, p = inst.d, inst.p
    ce = inst.c0 + eps / p
    ch = inst.c0 + eps / (2 * p)
    ok, detail = _int_sharp(inst, eps, R_out)
    if not ok:
        raise InstanceError("int:sharp", detail)
    if inst.cutoff == "strip" and R_out is None:
        R_out = float(inst.params["Y"])

    def prof(P):
        s = d(P)
        inner = s <= 1.0
        with np.errstate(divide="ignore", over="ignore"):
            v = np.where(inner, s ** ce, s ** (-ch))
            dv = np.where(inner, ce * s ** (ce - 1.0), -ch * s ** (-ch - 1.0))
        return v, dv

    def cut(P):
        if R_out is None:
            return None
        if inst.cutoff == "distance":
            t = (d(P) - R_out) / R_out
            c, dc = _smoothstep_down(t)
            return c, (dc / R_out)[:, None] * d.egrad(P)
        if inst.cutoff == "strip":
            y = P[:, 1]
            c, dc = _smoothstep_down(np.abs(y) - R_out)
            g = np.zeros_like(P)
            g[:, 1] = dc * np.sign(y)
            return c, g
        if inst.cutoff == "slab":
            return _slab_cut(inst, P, R_out)
        return None

    def f(P):
        v, _ = prof(P)
        c = cut(P)
        return v if c is None else v * c[0]

    def eg(P):
        v, dv = prof(P)
        g = dv[:, None] * d.egrad(P)
        c = cut(P)
        if c is None:
            return g
        return g * c[0][:, None] + v[:, None] * c[1]

    ifaces = [d.interface(1.0)]
    if R_out is not None and inst.cutoff == "distance":
        ifaces += [d.interface(R_out), d.interface(2 * R_out)]
    return TrialFunction(f, eg, f"v_eps({eps:g})", ifaces,
                         meta={"epsilon": eps, "c_eps": ce, "c_half": ch, "R_out": R_out})


def _slab_cut(inst, P, R_out):
    """Product cutoff: |z| over [R_out, 2 R_out] and each tau coordinate near the box faces."""
    dom = inst.dom
    m = dom.m
    r = np.linalg.norm(P[:, :m], axis=1)
    c, dc = _smoothstep_down((r - R_out) / R_out)
    g = np.zeros_like(P)
    with np.errstate(invalid="ignore", divide="ignore"):
        g[:, :m] = np.where(r[:, None] > 0, (dc / R_out / np.where(r > 0, r, 1))[:, None] * P[:, :m], 0.0)
    tau_half = float(inst.params.get("tau", 1.0))
    for j in range(m, inst.geom.N):
        x = np.abs(P[:, j]) / tau_half
        cj, dcj = _smoothstep_down((x - 0.5) / 0.5)
        g = g * cj[:, None]
        g[:, j] += c * dcj * np.sign(P[:, j]) / (0.5 * tau_half)
        c = c * cj
    return c, g


def _int_sharp(inst, eps, R_out):
    """Finiteness and positivity of the inner and outer power integrals of v_eps."""
    d, p, b = inst.d, inst.p, inst.beta_eff
    ce = inst.c0 + eps / p
    ch = inst.c0 + eps / (2 * p)
    deg0 = ce * p + b
    if d.dim0 is not None and not deg0 > -d.dim0:
        return False, f"inner degree {deg0:g} <= -{d.dim0:g}"
    if d.dim_inf is not None and R_out is None and inst.cutoff != "strip":
        deg1 = -ch * p + b
        if not deg1 < -d.dim_inf:
            return False, f"outer degree {deg1:g} >= -{d.dim_inf:g}"
    return True, "ok"


def ball_bump(center, radius, name="bump") -> TrialFunction:
    """(1 - |xi - c|^2 / r^2)^3 inside the Euclidean ball, zero outside."""
    c = np.asarray(center, float)
    r2 = float(radius) ** 2

    def f(P):
        t = np.sum((P - c) ** 2, axis=1) / r2
        return _bump1(t)[0]

    def eg(P):
        D = P - c
        t = np.sum(D * D, axis=1) / r2
        return (_bump1(t)[1] * 2.0 / r2)[:, None] * D

    sphere = ScalarField(lambda P: np.sum((P - c) ** 2, axis=1), name="|xi-c|^2")
    return TrialFunction(f, eg, name, [(sphere, r2)], meta={"center": c.tolist(), "radius": float(radius)})


def box_bump(lo, hi, name="box_bump") -> TrialFunction:
    """prod_j (1 - ((x_j - c_j) / h_j)^2)^3 on the box [lo, hi], zero outside."""
    lo, hi = np.asarray(lo, float), np.asarray(hi, float)
    c, h = 0.5 * (lo + hi), 0.5 * (hi - lo)

    def parts(P):
        t = ((P - c) / h) ** 2
        v, dv = _bump1(t)
        return v, dv * 2.0 * (P - c) / h ** 2

    def f(P):
        return np.prod(parts(P)[0], axis=1)

    def eg(P):
        v, dv = parts(P)
        out = np.empty_like(P)
        for j in range(P.shape[1]):
            out[:, j] = dv[:, j] * np.prod(np.delete(v, j, axis=1), axis=1)
        return out

    return TrialFunction(f, eg, name, meta={"box": (lo.tolist(), hi.tolist())})


def standard_bump(inst: InequalityInstance) -> TrialFunction:
    """A C^2 bump compactly supported in the domain and aligned with its quadrature coordinates."""
    dom = inst.dom
    if isinstance(dom, HomAnnulus):
        N = dom.norm
        if dom.r0 == 0:
            rho = 1.0 if dom.r1 == INF else 0.5 * dom.r1
            prof = _bump_profile(rho)
            return TrialFunction(lambda P: prof(N(P))[0], lambda P: prof(N(P))[1][:, None] * N.egrad(P),
                                 "standard_bump", [(N, rho)], meta={"a": 0.0, "b": rho, "support": (N, 0.0, rho)})
        hi = dom.r1 if dom.r1 < INF else 3.0 * dom.r0
        a, b = dom.r0 + 0.25 * (hi - dom.r0), dom.r0 + 0.75 * (hi - dom.r0)
        return radial_bump(N, a, b)
    if isinstance(dom, Slab):
        zn = dom.radial_field
        a, b = (0.5, 1.5) if dom.R == INF else (0.25 * dom.R, 0.75 * dom.R)
        rb = radial_bump(zn, a, b)
        m, T = dom.m, dom.hi

        def tb(P):
            v, dv = _bump1((P[:, m:] / T) ** 2)
            return v, dv * 2.0 * P[:, m:] / T ** 2

        def f(P):
            return rb(P) * np.prod(tb(P)[0], axis=1)

        def eg(P):
            v, dv = tb(P)
            prod = np.prod(v, axis=1)
            out = rb.egrad(P) * prod[:, None]
            r = rb(P)
            for j in range(v.shape[1]):
                out[:, m + j] += r * dv[:, j] * np.prod(np.delete(v, j, axis=1), axis=1)
            return out

        return TrialFunction(f, eg, "standard_bump", rb.interfaces, meta=rb.meta)
    if isinstance(dom, Box):
        c = 0.5 * (dom.lo + dom.hi)
        h = 0.375 * (dom.hi - dom.lo)
        return box_bump(c - h, c + h, "standard_bump")
    raise InstanceError("bump", f"no standard bump for {dom!r}")  # pragma: no cover


def _bump_profile(rho):
    def prof(s):
        v, dv = _bump1((s / rho) ** 2)
        return v, dv * 2.0 * s / rho ** 2
    return prof


def radial_bump(d: ScalarField, a: float, b: float, power: int = 3) -> TrialFunction:
    """((s-a)(b-s))^power / scale as a function of s = d(xi), supported in a < d < b."""
    if not 0 <= a < b:
        raise ValueError("need 0 <= a < b")
    scale = ((b - a) / 2.0) ** (2 * power)

    def prof(s):
        q = np.where((s > a) & (s < b), (s - a) * (b - s), 0.0)
        dq = np.where((s > a) & (s < b), (a + b) - 2 * s, 0.0)
        return q ** power / scale, power * q ** (power - 1) * dq / scale

    iface = getattr(d, "interface", None)
    ifaces = [iface(a), iface(b)] if iface else [(d, a), (d, b)]
    meta = {"a": a, "b": b}
    if ifaces[0][0] is ifaces[1][0]:
        lv = sorted((ifaces[0][1], ifaces[1][1]))
        meta["support"] = (ifaces[0][0], lv[0], lv[1])
    if a == 0:
        ifaces = ifaces[1:]
    return TrialFunction(lambda P: prof(d(P))[0], lambda P: prof(d(P))[1][:, None] * d.egrad(P),
                         f"radial_bump({a:g},{b:g})", ifaces, meta=meta)


def dilate_trial(u: TrialFunction, geom: Geometry, lam: float) -> TrialFunction:
    """u o delta_lam with interfaces pulled back along the dilation."""
    E = geom.exponents
    sc = lam ** E

    def pull(g):
        return ScalarField(lambda P: g(P * sc), name=f"{g.name}o(delta)")

    meta = {k: v for k, v in u.meta.items() if k not in ("support", "box")}
    sup = u.meta.get("support")
    if sup is not None and isinstance(sup[0], HomogeneousNorm) and sup[0].geom is geom:
        # level sets of a homogeneous norm move by 1/lam
        meta["support"] = (sup[0], sup[1] / lam, sup[2] / lam)
    if "box" in u.meta:
        lo, hi = u.meta["box"]
        meta["box"] = (np.asarray(lo) / sc, np.asarray(hi) / sc)
    meta["lam"] = lam
    return TrialFunction(lambda P: u(P * sc), lambda P: u.egrad(P * sc) * sc, f"{u.name}o(delta_{lam:g})",
                         [(pull(g), c) for g, c in u.interfaces], meta=meta)


# ---------------------------------------------------------------------------
# ratios and sweeps


@dataclass(frozen=True)
class RatioResult:
    ratio: float
    num: float
    den: float
    num_err: float  # absolute
    den_err: float  # absolute

    @property
    def floor_slack(self) -> float:
        """Allowed deficit below the constant under the lower-bound law."""
        return (self.num_err + self.den_err) / self.den


def _hgrad_norm(geom, u, P):
    g = np.einsum("mij,mj->mi", geom._mu(P), u.egrad(P))
    return np.sqrt(np.sum(g * g, axis=1))


def _support_domain(dom: Domain, u) -> Domain:
    """Shrink the domain to the support of a tensor bump or a gauge-radial bump."""
    meta = getattr(u, "meta", {})
    sup = meta.get("support")
    if sup is not None and isinstance(dom, HomAnnulus) and sup[0] is dom.radial_field:
        lo, hi = max(dom.r0, sup[1]), min(dom.r1, sup[2])
        if lo == 0:
            return HomAnnulus(dom.norm, 0.0, hi)
        return HomAnnulus(dom.norm, lo, hi, grade_lo=lo == dom.r0 and dom.grade_lo,
                          grade_hi=hi == dom.r1 and dom.grade_hi)
    box = meta.get("box")
    if box is None or not isinstance(dom, Box):
        return dom
    lo = np.maximum(dom.lo, box[0])
    hi = np.minimum(dom.hi, box[1])
    faces = [(a, s) for a, s in dom.faces if (dom.lo if s == 0 else dom.hi)[a] == (lo if s == 0 else hi)[a]]
    return Box(lo, hi, singular_faces=faces, inner_axis=dom.inner_axis,
               breaks={k: [x for x in v if lo[k] < x < hi[k]] for k, v in dom.breaks.items()})


def rayleigh_ratio(inst: InequalityInstance, u: ScalarField, scheme: QuadratureScheme | None = None,
                   dom: Domain | None = None) -> RatioResult:
    """num / den for ``u`` with both integrals computed on one shared rule."""
    geom, p = inst.geom, inst.p
    dom = dom or _support_domain(inst.dom, u)

    def f(P):
        out = np.empty((len(P), 2))
        out[:, 0] = _hgrad_norm(geom, u, P) ** p * inst.w_num(P)
        out[:, 1] = np.abs(u(P)) ** p * inst.w_den(P)
        return out

    num, den = integrate_many(f, dom, scheme, 2, interfaces=u.interfaces)
    if not den.value > den.abs_err:
        raise InstanceError("admissible", "trial function outside admissible family: denominator not above its error")
    return RatioResult(num.value / den.value, num.value, den.value, num.abs_err, den.abs_err)


@dataclass(frozen=True)
class SweepRow:
    epsilon: float
    ratio: float
    gap: float
    num_err: float
    den_err: float
    converse: bool | None = None
    floor_slack: float = 0.0


@dataclass
class SweepResult:
    instance: InequalityInstance
    rows: list = field(default_factory=list)

    def gaps(self) -> np.ndarray:
        return np.array([r.gap for r in self.rows])

    def strictly_decreasing(self) -> bool:
        g = self.gaps()
        return bool(np.all(np.diff(g) < 0))


def converse_holds(inst: InequalityInstance, eps: float, res: RatioResult) -> bool:
    """Untruncated v_eps satisfies num < c(eps)^p den (ratio sits strictly below c(eps)^p)."""
    ce = inst.c0 + eps / inst.p
    return bool(res.num < ce ** inst.p * res.den + res.num_err + ce ** inst.p * res.den_err)


def sharpness_sweep(inst: InequalityInstance, eps_list: Sequence[float], scheme: QuadratureScheme | None = None,
                    R_out: float | None = None) -> SweepResult:
    eps = [float(e) for e in eps_list]
    if any(e <= 0 for e in eps) or any(b >= a for a, b in zip(eps, eps[1:])):
        raise ValueError("eps_list must be positive and strictly decreasing")
    out = SweepResult(inst)
    for e in eps:
        u = near_extremizer(inst, e, R_out)
        r = rayleigh_ratio(inst, u, scheme)
        conv = converse_holds(inst, e, r) if (R_out is None and inst.cutoff != "strip") else None
        out.rows.append(SweepRow(e, r.ratio, r.ratio - inst.constant, r.num_err, r.den_err, conv, r.floor_slack))
    return out


# ---------------------------------------------------------------------------
# the elementary inequality behind the non-achievement argument


def ggm_check(x: float, eta: float, s: float) -> bool:
    """(x - eta)^s >= x^s - s eta x^(s-1) within 1e-12 relative slack."""
    if not (x > 0 and x > eta and s >= 1):
        raise ValueError("need x > 0, x > eta and s >= 1")
    lhs = (x - eta) ** s
    a, b = x ** s, s * eta * x ** (s - 1)
    return lhs >= a - b - 1e-12 * (abs(a) + abs(b))


def ggm_violations(rng: np.random.Generator, n: int, s_range=(1.0, 6.0)) -> tuple[int, np.ndarray]:
    """Vectorised random test; returns the violation count and the offending rows."""
    x = np.exp(rng.uniform(-5, 3, n))
    eta = x - np.exp(rng.uniform(-8, 4, n))
    s = rng.uniform(*s_range, n)
    lhs = (x - eta) ** s
    a, b = x ** s, s * eta * x ** (s - 1)
    bad = lhs < a - b - 1e-12 * (np.abs(a) + np.abs(b))
    return int(bad.sum()), np.column_stack([x, eta, s])[bad]


# ---------------------------------------------------------------------------
# decomposition I >= I_1 + I_2


@dataclass(frozen=True)
class Decomposition:
    I: float
    I1: float
    I2: float
    lower_bound: float
    err: float  # absolute error on I - lower_bound

    @property
    def holds(self) -> bool:
        return self.I >= self.lower_bound - self.err


def achieve_decomposition(inst: InequalityInstance, u: ScalarField,
                          scheme: QuadratureScheme | None = None) -> Decomposition:
    """Evaluate I(u), I_1(v), I_2(v) and the lower bound with v = d^(-gamma) u."""
    if inst.theorem_id not in ("MAIN_PART", "MAIN") or inst.beta_eff != -inst.p:
        raise InstanceError("decomposition", "needs a MAIN_PART instance (beta = -p)")
    p, alpha, d, geom = inst.p, inst.alpha, inst.d, inst.geom
    if p < 2:
        raise InstanceError("decomposition", "the argument needs p >= 2")
    g = alpha * (p - 1.0) / p
    K = inst.constant
    e1 = (alpha - 1.0) * (p - 1.0)

    def f(P):
        mu = geom._mu(P)
        uu = u(P)
        gu = np.einsum("mij,mj->mi", mu, u.egrad(P))
        dd = d(P)
        gd = np.einsum("mij,mj->mi", mu, d.egrad(P))
        nd = np.sqrt(np.sum(gd * gd, axis=1))
        v = dd ** (-g) * uu
        gv = dd[:, None] ** (-g) * gu - (g * dd ** (-g - 1.0) * uu)[:, None] * gd
        av = np.abs(v)
        out = np.empty((len(P), 5))
        out[:, 0] = np.sum(gu * gu, axis=1) ** (p / 2)
        out[:, 1] = np.abs(uu) ** p * dd ** (-p) * nd ** p
        out[:, 2] = (p * abs(g) ** (p - 2) * g * av ** (p - 2) * v * dd ** e1 * nd ** (p - 2)
                     * np.sum(gd * gv, axis=1))
        out[:, 3] = 0.5 * p * abs(g) ** (p - 2) * av ** (p - 2) * dd ** (e1 + 1) * nd ** (p - 2) * np.sum(gv * gv, axis=1)
        # |grad |v|^(p/2)|^2 = (p/2)^2 |v|^(p-2) |grad v|^2
        out[:, 4] = (2.0 / p) * abs(g) ** (p - 2) * dd ** (e1 + 1) * nd ** (p - 2) * (p / 2) ** 2 * av ** (p - 2) \
            * np.sum(gv * gv, axis=1)
        return out

    res: list[IntegralResult] = integrate_many(f, _support_domain(inst.dom, u), scheme, 5, interfaces=u.interfaces)
    A, B, I1, I2, LB = res
    I = A.value - K * B.value
    err = A.abs_err + K * B.abs_err + LB.abs_err
    return Decomposition(I, I1.value, I2.value, LB.value, err)
