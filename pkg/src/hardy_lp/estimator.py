"""Upper estimates of best constants by derivative-free minimisation of Rayleigh ratios."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.optimize import minimize

from .inequality import (
    InequalityInstance,
    InstanceError,
    _int_sharp,
    TrialFunction,
    box_bump,
    near_extremizer,
    radial_bump,
    rayleigh_ratio,
)
from .quadrature import INF, Box, IntegrationError, QuadratureScheme

__all__ = [
    "FamilyError",
    "OptimizerConfig",
    "TrialFamily",
    "ExtremizerFamily",
    "RadialSpline",
    "BumpFamily",
    "FixedTrial",
    "TraceRow",
    "EstimateResult",
    "make_family",
    "minimize_ratio",
]


class FamilyError(RuntimeError):
    """No parameter point of the family produced an admissible trial function."""


@dataclass(frozen=True)
class OptimizerConfig:
    max_evals: int = 60
    restarts: int = 3
    init_scale: float = 0.5
    tol: float = 1e-4
    seed: int = 0
    method: str = "Nelder-Mead"

    def __post_init__(self):
        if self.max_evals <= 0:
            raise ValueError("max_evals must be positive")
        if self.restarts < 1:
            raise ValueError("need at least one start")


class TrialFamily:
    """Maps an unconstrained parameter vector to a trial function.

    Subclasses clip parameters into their bounds inside ``build`` so that
    every point of R^n yields an admissible trial function.
    """

    name = "family"
    x0: np.ndarray

    def build(self, x) -> TrialFunction:  # pragma: no cover - abstract
        raise NotImplementedError

    def describe(self, x) -> dict:  # pragma: no cover - abstract
        raise NotImplementedError


def _clip(v, lo, hi):
    return float(min(max(v, lo), hi))


def _d_max(inst: InequalityInstance) -> float:
    return float(getattr(inst.d, "d_max", INF))


class ExtremizerFamily(TrialFamily):
    """v_eps with log-scale parameters: (log eps) or (log eps, log R_out).

    With ``truncate=None`` the cutoff radius is a free parameter only when
    the untruncated v_eps is inadmissible or the instance always needs a
    cutoff.  Truncating at R_out costs roughly 1/ln(R_out) in the ratio, so
    the untruncated profile (with its extrapolated tail) is preferred.
    """

    name = "extremizer"

    def __init__(self, inst: InequalityInstance, eps_bounds=(1e-3, 1.0), rout_bounds=(2.0, 1e6),
                 truncate: bool | None = None):
        if inst.d is None or inst.c0 is None:
            raise FamilyError(f"{inst.theorem_id} has no near-extremizer family")
        self.inst = inst
        if truncate is None:
            truncate = inst.cutoff == "strip" or not _int_sharp(inst, eps_bounds[0], None)[0]
        if truncate and inst.cutoff not in ("distance", "slab", "strip"):
            raise FamilyError(f"{inst.theorem_id} has no cutoff to truncate with")
        self.truncate = bool(truncate)
        self.lb = [math.log(eps_bounds[0])]
        self.ub = [math.log(eps_bounds[1])]
        x0 = [math.log(0.1)]
        if self.truncate:
            self.lb.append(math.log(rout_bounds[0]))
            self.ub.append(math.log(rout_bounds[1]))
            x0.append(math.log(100.0))
        self.x0 = np.array(x0)

    def _params(self, x):
        eps = math.exp(_clip(x[0], self.lb[0], self.ub[0]))
        rout = math.exp(_clip(x[1], self.lb[1], self.ub[1])) if self.truncate else None
        return eps, rout

    def build(self, x):
        eps, rout = self._params(x)
        return near_extremizer(self.inst, eps, rout)

    def describe(self, x):
        eps, rout = self._params(x)
        return {"epsilon": eps, "R_out": rout}


class RadialSpline(TrialFamily):
    """d^c0 * w(ln d) with w a cubic spline on log-spaced knots, zero at both ends.

    Parameters are the log of the knot span followed by the interior knot
    values.  The support is the d-interval spanned by the knots.
    """

    name = "spline"

    def __init__(self, inst: InequalityInstance, knots: int = 8, span_bounds=(1.0, 40.0), span0: float = 30.0):
        if inst.d is None or inst.c0 is None:
            raise FamilyError(f"{inst.theorem_id} has no distance function for a radial family")
        if inst.cutoff == "strip":
            raise FamilyError("level sets of the strip distance are not compact; use the extremizer family")
        if knots < 3:
            raise ValueError("need at least three knots")
        self.inst, self.knots = inst, int(knots)
        self.lb, self.ub = math.log(span_bounds[0]), math.log(span_bounds[1])
        s = np.linspace(0.0, 1.0, self.knots)[1:-1]
        self.x0 = np.concatenate([[math.log(span0)], np.sin(np.pi * s)])

    def _layout(self, x):
        L = math.exp(_clip(x[0], self.lb, self.ub))
        top = min(L / 2.0, math.log(_d_max(self.inst)) - 1e-3)
        t = np.linspace(top - L, top, self.knots)
        y = np.concatenate([[0.0], np.asarray(x[1:], float), [0.0]])
        return t, y

    def build(self, x):
        inst = self.inst
        d, c0 = inst.d, inst.c0
        t, y = self._layout(x)
        sp = CubicSpline(t, y, bc_type="natural")
        dsp = sp.derivative()
        a, b = t[0], t[-1]

        def prof(P):
            s = d(P)
            with np.errstate(divide="ignore"):
                lt = np.log(s)
            inside = (lt > a) & (lt < b)
            lt = np.where(inside, lt, 0.5 * (a + b))
            w = np.where(inside, sp(lt), 0.0)
            dw = np.where(inside, dsp(lt), 0.0)
            sc = np.where(inside, s, 1.0) ** c0
            v = sc * w
            dv = np.where(inside, sc * (c0 * w + dw) / np.where(inside, s, 1.0), 0.0)
            return v, dv

        ifaces = [d.interface(math.exp(tj)) for tj in t]
        return TrialFunction(lambda P: prof(P)[0], lambda P: prof(P)[1][:, None] * d.egrad(P), "radial_spline",
                             ifaces, meta={"support": (ifaces[0][0], *sorted((ifaces[0][1], ifaces[-1][1])))}
                             if ifaces[0][0] is ifaces[-1][0] else {})

    def describe(self, x):
        t, y = self._layout(x)
        return {"knots": np.exp(t).tolist(), "values": y.tolist()}


class BumpFamily(TrialFamily):
    """Radial bump in d on [center - width, center + width] (log-scale parameters).

    Instances without a distance function (the Poincare box) use a cube
    bump with free center and log half-width instead.
    """

    name = "bump"

    def __init__(self, inst: InequalityInstance):
        self.inst = inst
        self.box = inst.d is None
        if self.box:
            if not isinstance(inst.dom, Box):
                raise FamilyError("box bumps need a box domain")
            self.x0 = np.concatenate([0.5 * (inst.dom.lo + inst.dom.hi), [math.log(0.5)]])
        else:
            self.x0 = np.array([0.0, math.log(0.5)])

    def _params(self, x):
        if self.box:
            lo, hi = self.inst.dom.lo, self.inst.dom.hi
            h = math.exp(_clip(x[-1], -8.0, 0.0)) * 0.5 * float(np.min(hi - lo))
            c = np.clip(np.asarray(x[:-1], float), lo + h * 1.0001, hi - h * 1.0001)
            return c, h
        center = math.exp(_clip(x[0], -10.0, 10.0))
        dmax = _d_max(self.inst)
        if center * 1.0001 >= dmax:
            center = dmax / 2.0
        width = center * (1.0 / (1.0 + math.exp(-_clip(x[1], -20.0, 20.0))))
        width = min(width, (dmax - center) / 1.0001) if dmax < INF else width
        return center, width

    def build(self, x):
        if self.box:
            c, h = self._params(x)
            return box_bump(c - h, c + h)
        c, w = self._params(x)
        return radial_bump(self.inst.d, c - w, c + w)

    def describe(self, x):
        c, w = self._params(x)
        if self.box:
            return {"center": np.asarray(c).tolist(), "half_width": w}
        return {"center": c, "width": w}


class FixedTrial(TrialFamily):
    """One-point family: a single trial function with no free parameters."""

    name = "fixed"

    def __init__(self, u: TrialFunction):
        self.u = u
        self.x0 = np.zeros(0)

    def build(self, x):
        return self.u

    def describe(self, x):
        return {"trial": self.u.name}


def make_family(name: str, inst: InequalityInstance, **kw) -> TrialFamily:
    name = name.lower()
    if name in ("extremizer", "extremizerfamily"):
        return ExtremizerFamily(inst, **kw)
    if name in ("spline", "radialspline"):
        return RadialSpline(inst, **kw)
    if name in ("bump", "bumpfamily"):
        return BumpFamily(inst, **kw)
    raise FamilyError(f"unknown family {name!r}")


@dataclass(frozen=True)
class TraceRow:
    index: int
    restart: int
    params: dict
    ratio: float
    err: float
    best_so_far: float


@dataclass
class EstimateResult:
    best_ratio: float
    best_err: float
    best_params: dict
    trace: list = field(default_factory=list)
    constant: float = 0.0

    @property
    def floor_ok(self) -> bool:
        """The theorem is a hard floor: a ratio below it signals a quadrature or weight bug."""
        return self.best_ratio + self.best_err >= self.constant


def minimize_ratio(inst: InequalityInstance, family: TrialFamily, opt: OptimizerConfig | None = None,
                   scheme: QuadratureScheme | None = None) -> EstimateResult:
    """Nelder-Mead over the family with jittered restarts; every evaluation is traced."""
    opt = opt or OptimizerConfig()
    rng = np.random.default_rng(opt.seed)
    trace: list[TraceRow] = []
    best = [INF, INF, None]
    budget = [opt.max_evals]

    def objective(x, restart):
        if budget[0] <= 0:
            return best[0] if best[0] < INF else 1e300
        budget[0] -= 1
        x = np.asarray(x, float)
        try:
            r = rayleigh_ratio(inst, family.build(x), scheme)
            val, err = r.ratio, r.floor_slack
        except (InstanceError, IntegrationError, FloatingPointError):
            val, err = INF, INF
        if val < best[0]:
            best[:] = [val, err, x.copy()]
        trace.append(TraceRow(len(trace), restart, family.describe(x), float(val), float(err), float(best[0])))
        return val if math.isfinite(val) else 1e300

    per_start = max(1, opt.max_evals // opt.restarts)
    x_start = np.asarray(family.x0, float)
    if x_start.size == 0:
        objective(x_start, 0)
    for k in range(opt.restarts if x_start.size else 0):
        if budget[0] <= 0:
            break
        if k == 0:
            x_init = x_start
        else:
            base = best[2] if best[2] is not None else x_start
            x_init = base + opt.init_scale * rng.standard_normal(len(base))
        n = len(x_init)
        simplex = np.vstack([x_init] + [x_init + opt.init_scale * np.eye(n)[i] for i in range(n)])
        minimize(objective, x_init, args=(k,), method=opt.method,
                 options={"maxfev": min(per_start, budget[0]), "initial_simplex": simplex,
                          "xatol": 1e-6, "fatol": opt.tol})
    if best[2] is None:
        raise FamilyError("every evaluation was inadmissible")
    return EstimateResult(float(best[0]), float(best[1]), family.describe(best[2]), trace, inst.constant)
