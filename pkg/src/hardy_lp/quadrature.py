"""Quadrature for weighted functionals with singular and degenerate weights.

Every domain is integrated as an iterated rule: a tensor Gauss-Legendre
rule over "outer" coordinates (sphere angles, box axes) and, along each
outer node, a composite Gauss-Legendre rule over one "inner" coordinate
(the homogeneous radius for annuli, |eta| for slabs, one axis for boxes).

Along the inner coordinate the cells are graded geometrically toward
singular ends.  The part of the line beyond the last graded cell is not
sampled; its contribution is extrapolated from the last two graded levels,
whose sums form a geometric sequence whenever the integrand behaves like a
power there (this is exact for homogeneous integrands on annuli).  Cells
never straddle declared interfaces: global radii are inserted as
breakpoints and level sets of other fields are located per line by
bisection.

The change of variables on homogeneous annuli uses the Euclidean sphere:
a direction s is pushed along its dilation orbit to the level rho of the
norm, xi = delta_{rho / N(s)}(s), with

    d xi = rho^(D-1) <E s, s> N(s)^(-D) d rho d sigma(s),

where E holds the dilation exponents and D is their sum.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np

from .calculus import ScalarField, horizontal_gradient
from .geometry import Geometry

__all__ = [
    "QuadratureScheme",
    "IntegralResult",
    "IntegrationError",
    "Domain",
    "Box",
    "HomAnnulus",
    "Slab",
    "PuncturedBox",
    "Exterior",
    "integrate",
    "integrate_many",
    "integrability_predicate",
    "functional_value",
]

INF = math.inf


class IntegrationError(ArithmeticError):
    """Non-finite integrand or a divergent singularity detected."""

    def __init__(self, msg, point=None):
        self.point = None if point is None else np.asarray(point, dtype=float)
        if point is not None:
            msg = f"{msg} at {self.point.tolist()}"
        super().__init__(msg)


@dataclass(frozen=True)
class QuadratureScheme:
    """Rule parameters.

    ``shells`` geometric levels (ratio ``ratio``) are placed toward each
    singular end of the inner coordinate; every cell is split into ``sub``
    equal parts and carries an ``order``-point Gauss rule.  Outer box axes
    use ``panels`` uniform panels; sphere angles use panels of width pi/2
    graded ``ang_levels`` times toward both ends.
    """

    order: int = 8
    shells: int = 40
    ratio: float = 2.0
    sub: int = 1
    ang_order: int = 6
    ang_levels: int = 2
    panels: int = 4
    # when set, refine again (at most max_refinements times) until every
    # component's estimated relative error is below it
    target_rel_err: float | None = None
    max_refinements: int = 2
    interfaces: tuple = ()
    estimate_error: bool = True
    chunk_points: int = 1 << 17

    def __post_init__(self):
        if self.order < 2 or self.ang_order < 2:
            raise ValueError("Gauss orders must be at least 2")
        if not self.ratio > 1:
            raise ValueError("grading ratio must exceed 1")
        if self.shells < 3:
            raise ValueError("need at least 3 graded shells for tail extrapolation")
        if self.sub < 1 or self.panels < 1:
            raise ValueError("sub and panels must be positive")
        if self.target_rel_err is not None and not self.target_rel_err > 0:
            raise ValueError("target_rel_err must be positive")
        if self.max_refinements < 0:
            raise ValueError("max_refinements must be non-negative")

    def refined(self) -> "QuadratureScheme":
        """The refinement used for the error estimate."""
        return replace(self, order=self.order + 4, sub=2 * self.sub, ang_order=self.ang_order + 2,
                       panels=2 * self.panels, estimate_error=False)

    def doubled(self) -> "QuadratureScheme":
        """Double shells and every rule order (used to audit the error estimate)."""
        return replace(self, order=2 * self.order, shells=2 * self.shells, sub=2 * self.sub,
                       ang_order=2 * self.ang_order, ang_levels=self.ang_levels + 1,
                       panels=2 * self.panels, estimate_error=False)


@dataclass(frozen=True)
class IntegralResult:
    value: float
    err_bound: float  # relative
    truncation_bound: float = 0.0  # absolute, from tail extrapolation

    @property
    def abs_err(self) -> float:
        return self.err_bound * abs(self.value) + self.truncation_bound


@lru_cache(maxsize=None)
def _gauss(q: int):
    x, w = np.polynomial.legendre.leggauss(q)
    return (x + 1.0) / 2.0, w / 2.0


def _composite(breaks: np.ndarray, q: int):
    x, w = _gauss(q)
    a, b = breaks[:-1], breaks[1:]
    L = b - a
    nodes = (a[:, None] + L[:, None] * x[None, :]).ravel()
    weights = (L[:, None] * w[None, :]).ravel()
    return nodes, weights


def _graded_panel(a: float, b: float, levels: int, r: float) -> list:
    """Breakpoints of [a, b] graded toward both ends, remainder cells included."""
    mid = 0.5 * (a + b)
    half = mid - a
    lo = [a] + [a + half * r ** (-k) for k in range(levels, 0, -1)]
    hi = [b - half * r ** (-k) for k in range(1, levels + 1)] + [b]
    return lo + [mid] + sorted(hi)


def _subdivide(breaks: np.ndarray, sub: int) -> np.ndarray:
    if sub == 1:
        return breaks
    a, b = breaks[:-1], breaks[1:]
    frac = np.arange(sub) / sub
    pts = (a[:, None] + (b - a)[:, None] * frac[None, :]).ravel()
    return np.append(pts, breaks[-1])


def _sphere_rule(d: int, order: int, levels: int, ratio: float):
    """Nodes on S^{d-1} (first coordinate is the polar axis) and weights."""
    if d == 1:
        return np.array([[1.0], [-1.0]]), np.array([1.0, 1.0])
    rules = []
    for i in range(d - 1):
        top = math.pi if i < d - 2 else 2 * math.pi
        npan = 2 if i < d - 2 else 4
        br = []
        for j in range(npan):
            a, b = j * math.pi / 2, (j + 1) * math.pi / 2
            seg = _graded_panel(a, b, levels, ratio)
            br.extend(seg if not br else seg[1:])
        br = np.array(br)
        assert abs(br[-1] - top) < 1e-12
        rules.append(_composite(br, order))
    grids = np.meshgrid(*[r[0] for r in rules], indexing="ij")
    wgrids = np.meshgrid(*[r[1] for r in rules], indexing="ij")
    phi = np.stack([g.ravel() for g in grids], axis=1)
    w = np.prod(np.stack([g.ravel() for g in wgrids], axis=1), axis=1)
    for i in range(d - 2):
        w = w * np.sin(phi[:, i]) ** (d - 2 - i)
    S = np.empty((len(phi), d))
    prod = np.ones(len(phi))
    for i in range(d - 1):
        S[:, i] = prod * np.cos(phi[:, i])
        prod = prod * np.sin(phi[:, i])
    S[:, d - 1] = prod
    return S, w


def _place_pole(S: np.ndarray, pole: int) -> np.ndarray:
    d = S.shape[1]
    order = [pole] + [j for j in range(d) if j != pole]
    out = np.empty_like(S)
    out[:, order] = S
    return out


@dataclass(frozen=True)
class _Inner:
    a: float
    b: float
    grade_lo: bool
    grade_hi: bool
    anchors: tuple = ()


@dataclass
class _Tail:
    """Edges of the three outermost graded levels at one end of a line."""

    edges: tuple  # (e0, e1, e2, e3), e0 is the end of the sampled part
    lo: bool


def _segment_breaks(a, b, lo, hi, K, r):
    """Breakpoints of one segment and tail descriptors (graded ends are open)."""
    tails = []
    if b == INF:
        if not a > 0:
            raise ValueError("an unbounded segment needs a positive start")
        pts = [a * r**k for k in range(K + 1)]
        tails.append(_Tail((pts[-1], pts[-2], pts[-3], pts[-4]), lo=False))
        if lo:
            raise ValueError("cannot grade both ends of an unbounded segment")
        return np.array(pts), tails
    if lo and hi:
        mid = 0.5 * (a + b)
        p1, t1 = _segment_breaks(a, mid, True, False, K, r)
        p2, t2 = _segment_breaks(mid, b, False, True, K, r)
        return np.concatenate([p1, p2[1:]]), t1 + t2
    L = b - a
    if lo:
        pts = [a + L * r ** (-k) for k in range(K, -1, -1)]
        tails.append(_Tail((pts[0], pts[1], pts[2], pts[3]), lo=True))
        return np.array(pts), tails
    if hi:
        pts = [b - L * r ** (-k) for k in range(0, K + 1)]
        tails.append(_Tail((pts[-1], pts[-2], pts[-3], pts[-4]), lo=False))
        return np.array(pts), tails
    # interior segments: geometric cells of ratio at most sqrt(r), at least two
    if a > 0:
        n = max(2, int(math.ceil(2.0 * math.log(b / a) / math.log(r))))
        return a * (b / a) ** (np.arange(n + 1) / n), tails
    return np.linspace(a, b, 3), tails


def _inner_layout(spec: _Inner, scheme: QuadratureScheme):
    a, b = spec.a, spec.b
    anchors = sorted({float(x) for x in spec.anchors if a < x < b})
    if b == INF and not anchors:
        # an unbounded line needs a bounded first segment
        anchors = [1.0] if a == 0 else [2.0 * a]
    pts = [a] + anchors + [b]
    all_br, tails = [], []
    nseg = len(pts) - 1
    for i in range(nseg):
        lo = spec.grade_lo and i == 0
        hi = (spec.grade_hi or pts[i + 1] == INF) and i == nseg - 1
        br, tl = _segment_breaks(pts[i], pts[i + 1], lo, hi, scheme.shells, scheme.ratio)
        br = _subdivide(br, scheme.sub)
        all_br.append(br if not all_br else br[1:])
        tails.extend(tl)
    return np.concatenate(all_br), tails


class Domain:
    """Base class.  Subclasses define the outer rule, inner coordinate and map."""

    N: int
    radial_field = None  # ScalarField equal to the inner coordinate, if any

    def contains(self, P) -> np.ndarray:
        raise NotImplementedError

    def grid_points(self, res: int) -> np.ndarray:
        raise NotImplementedError

    def intrinsic_interfaces(self) -> tuple:
        return ()

    def mask(self, P) -> np.ndarray | None:
        return None

    def _outer(self, scheme):
        raise NotImplementedError

    def _inner(self) -> _Inner:
        raise NotImplementedError

    def _map(self, U, t):
        raise NotImplementedError


class HomAnnulus(Domain):
    """{r0 < N(xi) < r1} for a full homogeneous norm N; r0 = 0 and r1 = inf allowed."""

    def __init__(self, norm, r0: float, r1: float, grade_lo: bool | None = None, grade_hi: bool = False):
        if not getattr(norm, "full", False):
            raise ValueError("HomAnnulus needs a full homogeneous norm")
        if not (0 <= r0 < r1):
            raise ValueError(f"need 0 <= r0 < r1, got {r0}, {r1}")
        self.norm, self.r0, self.r1 = norm, float(r0), float(r1)
        self.geom: Geometry = norm.geom
        self.N = self.geom.N
        self.grade_lo = (r0 == 0) if grade_lo is None else bool(grade_lo)
        self.grade_hi = bool(grade_hi) or r1 == INF
        self.radial_field = norm
        self._E = self.geom.exponents
        self._D = self.geom.dilation_sum

    def __repr__(self):
        return f"HomAnnulus({self.norm.name}, {self.r0}, {self.r1})"

    def contains(self, P):
        v = self.norm(np.atleast_2d(P))
        return (v > self.r0) & (v < self.r1)

    def _directions(self, order, levels, ratio):
        S, w = _sphere_rule(self.N, order, levels, ratio)
        return _place_pole(S, self.geom.pole_axis), w

    def grid_points(self, res):
        d = self.N
        if d == 1:
            S = np.array([[1.0], [-1.0]])
        else:
            axes = []
            for i in range(d - 1):
                top = math.pi if i < d - 2 else 2 * math.pi
                axes.append((np.arange(res) + 0.5) * top / res)
            grids = np.meshgrid(*axes, indexing="ij")
            phi = np.stack([g.ravel() for g in grids], axis=1)
            S = np.empty((len(phi), d))
            prod = np.ones(len(phi))
            for i in range(d - 1):
                S[:, i] = prod * np.cos(phi[:, i])
                prod = prod * np.sin(phi[:, i])
            S[:, -1] = prod
            S = _place_pole(S, self.geom.pole_axis)
        r1 = self.r1 if self.r1 < INF else 2 * max(self.r0, 1.0)
        rho = self.r0 + (np.arange(res) + 0.5) * (r1 - self.r0) / res
        U = self._prep(S)
        P, _ = self._map(U, np.broadcast_to(rho, (len(S), res)))
        return P.reshape(-1, self.N)

    def _prep(self, S):
        ns = self.norm(S)
        es = np.sum(self._E * S * S, axis=1)
        return np.column_stack([S, ns, es])

    def _outer(self, scheme):
        S, w = self._directions(scheme.ang_order, scheme.ang_levels, scheme.ratio)
        return self._prep(S), w

    def _inner(self):
        return _Inner(self.r0, self.r1, self.grade_lo, self.grade_hi)

    def _map(self, U, t):
        S, ns, es = U[:, : self.N], U[:, self.N], U[:, self.N + 1]
        lam = t / ns[:, None]
        P = S[:, None, :] * lam[..., None] ** self._E
        jac = t ** (self._D - 1.0) * (es * ns ** (-self._D))[:, None]
        return P, jac


class Exterior(HomAnnulus):
    """{N(xi) > R}, truncated at R_out (inf: extrapolated tail), graded toward N = R."""

    def __init__(self, norm, R: float, R_out: float = INF):
        if not R > 0:
            raise ValueError("R must be positive")
        super().__init__(norm, R, R_out, grade_lo=True)
        self.R, self.R_out = float(R), float(R_out)


class Slab(Domain):
    """{|eta| < R} x box in tau, with eta the leading m coordinates."""

    def __init__(self, geom: Geometry, m: int, R: float, lo: Sequence[float], hi: Sequence[float],
                 grade_hi: bool = False, radial_field=None):
        m = int(m)
        if not R > 0:
            raise ValueError("R must be positive")
        lo, hi = np.asarray(lo, float), np.asarray(hi, float)
        if lo.shape != (geom.N - m,) or hi.shape != lo.shape or np.any(hi <= lo):
            raise ValueError("tau box must have N - m coordinates with lo < hi")
        self.geom, self.m, self.R = geom, m, float(R)
        self.lo, self.hi = lo, hi
        self.N = geom.N
        self.grade_hi = bool(grade_hi)
        self.radial_field = radial_field

    def __repr__(self):
        return f"Slab(m={self.m}, R={self.R})"

    def contains(self, P):
        P = np.atleast_2d(P)
        r = np.linalg.norm(P[:, : self.m], axis=1)
        tau = P[:, self.m:]
        return (r > 0) & (r < self.R) & np.all((tau > self.lo) & (tau < self.hi), axis=1)

    def _tau_rule(self, q, panels):
        rules = [_composite(np.linspace(a, b, panels + 1), q) for a, b in zip(self.lo, self.hi)]
        if not rules:
            return np.zeros((1, 0)), np.ones(1)
        grids = np.meshgrid(*[r[0] for r in rules], indexing="ij")
        wgrids = np.meshgrid(*[r[1] for r in rules], indexing="ij")
        T = np.stack([g.ravel() for g in grids], axis=1)
        w = np.prod(np.stack([g.ravel() for g in wgrids], axis=1), axis=1)
        return T, w

    def grid_points(self, res):
        S, _ = _sphere_rule(self.m, 2, 0, 2.0)
        rho = (np.arange(res) + 0.5) * self.R / res
        taus = [self.lo[j] + (np.arange(res) + 0.5) * (self.hi[j] - self.lo[j]) / res for j in range(len(self.lo))]
        T = np.stack([g.ravel() for g in np.meshgrid(*taus, indexing="ij")], axis=1) if taus else np.zeros((1, 0))
        pts = []
        for s in S:
            for r in rho:
                pts.append(np.column_stack([np.broadcast_to(r * s, (len(T), self.m)), T]))
        return np.concatenate(pts)

    def _outer(self, scheme):
        S, ws = _sphere_rule(self.m, scheme.ang_order, scheme.ang_levels, scheme.ratio)
        T, wt = self._tau_rule(scheme.order, scheme.panels)
        U = np.concatenate([np.repeat(S, len(T), axis=0), np.tile(T, (len(S), 1))], axis=1)
        w = np.repeat(ws, len(T)) * np.tile(wt, len(S))
        return U, w

    def _inner(self):
        return _Inner(0.0, self.R, True, self.grade_hi)

    def _map(self, U, t):
        S, T = U[:, : self.m], U[:, self.m:]
        eta = S[:, None, :] * t[..., None]
        tau = np.broadcast_to(T[:, None, :], t.shape + (T.shape[1],))
        P = np.concatenate([eta, tau], axis=2)
        jac = t ** (self.m - 1.0)
        return P, jac


class Box(Domain):
    """Axis-aligned box.

    ``singular_faces`` lists ``(axis, side)`` pairs (side 0 = lo, 1 = hi)
    toward which cells are graded; ``breaks`` maps an axis to extra
    breakpoints.  The inner axis carries tail extrapolation and per-line
    interface alignment.
    """

    def __init__(self, lo, hi, singular_faces=(), inner_axis: int | None = None, breaks=None):
        lo, hi = np.asarray(lo, float), np.asarray(hi, float)
        if lo.shape != hi.shape or lo.ndim != 1 or np.any(hi <= lo):
            raise ValueError("Box needs lo < hi per coordinate")
        self.lo, self.hi = lo, hi
        self.N = len(lo)
        self.faces = tuple((int(a), int(s)) for a, s in singular_faces)
        if inner_axis is None:
            inner_axis = self.faces[0][0] if self.faces else self.N - 1
        self.inner_axis = int(inner_axis)
        self.breaks = {int(k): tuple(float(x) for x in v) for k, v in (breaks or {}).items()}

    def __repr__(self):
        return f"Box({self.lo.tolist()}, {self.hi.tolist()})"

    def contains(self, P):
        P = np.atleast_2d(P)
        return np.all((P > self.lo) & (P < self.hi), axis=1)

    def grid_points(self, res):
        axes = [self.lo[j] + (np.arange(res) + 0.5) * (self.hi[j] - self.lo[j]) / res for j in range(self.N)]
        return np.stack([g.ravel() for g in np.meshgrid(*axes, indexing="ij")], axis=1)

    def _graded_points(self, j) -> tuple:
        """Interior points of axis j toward which cells are graded from both sides."""
        return ()

    def _axis_rule(self, j, scheme):
        a, b = self.lo[j], self.hi[j]
        pts = set(np.linspace(a, b, scheme.panels + 1).tolist())
        pts.update(x for x in self.breaks.get(j, ()) if a < x < b)
        for c in self._graded_points(j):
            if a < c < b:
                pts.add(c)
                for k in range(1, min(scheme.shells, 24) + 1):
                    for x in (c - (c - a) * scheme.ratio ** (-k), c + (b - c) * scheme.ratio ** (-k)):
                        pts.add(x)
        for ax, side in self.faces:
            if ax == j:
                L = (b - a) / 2
                for k in range(1, scheme.shells + 1):
                    pts.add(a + L * scheme.ratio ** (-k) if side == 0 else b - L * scheme.ratio ** (-k))
        br = _subdivide(np.array(sorted(pts)), scheme.sub)
        return _composite(br, scheme.order)

    def _outer(self, scheme):
        axes = [j for j in range(self.N) if j != self.inner_axis]
        if not axes:
            return np.zeros((1, 0)), np.ones(1)
        rules = [self._axis_rule(j, scheme) for j in axes]
        grids = np.meshgrid(*[r[0] for r in rules], indexing="ij")
        wgrids = np.meshgrid(*[r[1] for r in rules], indexing="ij")
        U = np.stack([g.ravel() for g in grids], axis=1)
        w = np.prod(np.stack([g.ravel() for g in wgrids], axis=1), axis=1)
        return U, w

    def _inner(self):
        j = self.inner_axis
        lo = (j, 0) in self.faces
        hi = (j, 1) in self.faces
        return _Inner(self.lo[j], self.hi[j], lo, hi, self.breaks.get(j, ()))

    def _map(self, U, t):
        j = self.inner_axis
        Mc, n = t.shape
        P = np.empty((Mc, n, self.N))
        others = [k for k in range(self.N) if k != j]
        P[:, :, others] = U[:, None, :]
        P[:, :, j] = t
        return P, np.ones_like(t)


class PuncturedBox(Box):
    """Box minus the homogeneous ball {N < r0}; the sphere N = r0 is an interface."""

    def __init__(self, lo, hi, norm, r0: float, **kw):
        if not r0 > 0:
            raise ValueError("excision radius must be positive")
        super().__init__(lo, hi, **kw)
        self.norm, self.r0 = norm, float(r0)

    def contains(self, P):
        return super().contains(P) & (self.norm(np.atleast_2d(P)) > self.r0)

    def intrinsic_interfaces(self):
        return ((self.norm, self.r0),)

    def mask(self, P):
        return self.norm(P) > self.r0

    def _graded_points(self, j):
        # lines along the inner axis become tangent to the excised sphere at the
        # ball's extent along j (on the axis, since the norms grow in each |xi_j|);
        # the outer integrand has a square-root singularity there
        e = np.zeros((1, self.N))
        e[0, j] = 1.0
        ext = (self.r0 / float(self.norm(e)[0])) ** float(self.norm.geom.exponents[j])
        return (-ext, ext)


def integrability_predicate(weight_degree: float, Qeff: float, at: str = "origin") -> bool:
    """Whether a homogeneous weight of the given degree is integrable near 0 or near infinity."""
    if at == "origin":
        return weight_degree > -Qeff
    if at == "infinity":
        return weight_degree < -Qeff
    raise ValueError("at must be 'origin' or 'infinity'")


# ---------------------------------------------------------------------------
# engine


def _find_crossings(dom: Domain, U, breaks, interfaces, max_cross=4, iters=64):
    """Per-line parameters where any interface field crosses its level."""
    Mc = len(U)
    # sample at breakpoints and cell midpoints
    mids = 0.5 * (breaks[:-1] + breaks[1:])
    samp = np.sort(np.concatenate([breaks, mids]))
    found = []
    for g, c in interfaces:
        T = np.broadcast_to(samp, (Mc, len(samp)))
        P, _ = dom._map(U, T)
        h = g(P.reshape(-1, dom.N)).reshape(Mc, len(samp)) - c
        # zeros count as positive so a crossing sitting on a sample is still found
        sgn = np.where(h >= 0, 1, -1)
        change = sgn[:, :-1] != sgn[:, 1:]
        rows, cols = np.nonzero(change)
        if len(rows) == 0:
            continue
        a = samp[cols].copy()
        b = samp[cols + 1].copy()
        ha = h[rows, cols]
        Ur = U[rows]
        for _ in range(iters):
            m = 0.5 * (a + b)
            Pm, _ = dom._map(Ur, m[:, None])
            hm = g(Pm.reshape(-1, dom.N)) - c
            left = (hm >= 0) == (ha >= 0)
            a = np.where(left, m, a)
            ha = np.where(left, hm, ha)
            b = np.where(left, b, m)
        found.append((rows, 0.5 * (a + b)))
    out = np.full((Mc, max_cross * max(1, len(interfaces))), np.nan)
    fill = np.zeros(Mc, dtype=int)
    for rows, x in found:
        for r, v in zip(rows, x):
            if fill[r] < out.shape[1]:
                out[r, fill[r]] = v
                fill[r] += 1
    return out


def _line_breaks(breaks, cross):
    """Merge global breakpoints with per-line crossings (NaN = none)."""
    Mc = cross.shape[0]
    B = np.broadcast_to(breaks, (Mc, len(breaks)))
    # padding with the first breakpoint yields zero-length cells
    C = np.where(np.isnan(cross), breaks[0], cross)
    return np.sort(np.concatenate([B, C], axis=1), axis=1)


def _tail_sums(t, contrib, tail: _Tail):
    e0, e1, e2, e3 = tail.edges
    lo1, hi1 = min(e0, e1), max(e0, e1)
    lo2, hi2 = min(e1, e2), max(e1, e2)
    lo3, hi3 = min(e2, e3), max(e2, e3)
    m0 = (t > lo1) & (t < hi1)
    m1 = (t > lo2) & (t < hi2)
    m2 = (t > lo3) & (t < hi3)
    S0 = np.einsum("mn,mnc->mc", m0.astype(float), contrib)
    S1 = np.einsum("mn,mnc->mc", m1.astype(float), contrib)
    S2 = np.einsum("mn,mnc->mc", m2.astype(float), contrib)
    return S0, S1, S2


def _geometric_tail(S0, S1):
    """Sum of S0*q + S0*q^2 + ... with q = S0/S1 (0 where undetermined)."""
    with np.errstate(divide="ignore", invalid="ignore"):
        q = np.where(S1 != 0, S0 / S1, 0.0)
    ok = (q > 0) & (q < 1)
    tail = np.where(ok, S0 * q / np.where(ok, 1 - q, 1.0), 0.0)
    return tail, q


def _run(f, dom: Domain, scheme: QuadratureScheme, interfaces, ncomp):
    U, wout = dom._outer(scheme)
    spec = dom._inner()
    anchors = list(spec.anchors) + [float(x) for x in scheme.interfaces]
    line_ifaces = []
    for g, c in tuple(interfaces) + tuple(dom.intrinsic_interfaces()):
        if dom.radial_field is not None and g is dom.radial_field:
            anchors.append(c)
        else:
            line_ifaces.append((g, c))
    spec = replace(spec, anchors=tuple(anchors))
    breaks, tails = _inner_layout(spec, scheme)
    xg, wg = _gauss(scheme.order)
    n_line = (len(breaks) - 1 + 4 * len(line_ifaces)) * scheme.order
    lines_per_chunk = max(1, scheme.chunk_points // max(n_line, 1))
    total = np.zeros(ncomp)
    abssum = np.zeros(ncomp)
    trunc = np.zeros(ncomp)
    N = dom.N
    for start in range(0, len(U), lines_per_chunk):
        Uc = U[start: start + lines_per_chunk]
        Mc = len(Uc)
        if line_ifaces:
            cross = _find_crossings(dom, Uc, breaks, line_ifaces)
            br = _line_breaks(breaks, cross)
        else:
            br = np.broadcast_to(breaks, (Mc, len(breaks)))
        a, b = br[:, :-1], br[:, 1:]
        L = b - a
        t = a[..., None] + L[..., None] * xg
        if line_ifaces:
            # zero-length padding cells: move their nodes to a harmless interior point
            k = len(breaks) // 2
            t = np.where((L == 0)[..., None], 0.5 * (breaks[k - 1] + breaks[k]), t)
        t = t.reshape(Mc, -1)
        wt = (L[..., None] * wg).reshape(Mc, -1)
        P, jac = dom._map(Uc, t)
        flat = P.reshape(-1, N)
        vals = np.asarray(f(flat), dtype=float).reshape(Mc, t.shape[1], ncomp)
        m = dom.mask(flat)
        if m is not None:
            vals = vals * m.reshape(Mc, -1, 1)
        contrib = vals * (jac * wt)[..., None]
        if not np.all(np.isfinite(contrib)):
            bad = np.argwhere(~np.isfinite(contrib))[0]
            raise IntegrationError("non-finite integrand", P[bad[0], bad[1]])
        line = contrib.sum(axis=1)
        for tl in tails:
            S0, S1, S2 = _tail_sums(t, contrib, tl)
            tail, q = _geometric_tail(S0, S1)
            scale = np.abs(line) + np.abs(S0)
            diverge = (q >= 1) & (np.abs(S0) > 1e-10 * scale)
            if np.any(diverge):
                r = np.argwhere(diverge)[0][0]
                raise IntegrationError("integrand not integrable toward the end of a graded line",
                                       P[r, 0 if tl.lo else -1])
            tail1, _ = _geometric_tail(S1, S2)
            bound = np.abs(S0 + tail - tail1)
            line = line + tail
            trunc += np.abs(wout[start: start + Mc]) @ bound
        total += wout[start: start + Mc] @ line
        abssum += np.abs(wout[start: start + Mc]) @ np.abs(contrib).sum(axis=1)
    return total, abssum, trunc


def integrate_many(f: Callable, dom: Domain, scheme: QuadratureScheme | None = None, ncomp: int = 1,
                   interfaces=()) -> list[IntegralResult]:
    """Integrate a vector-valued integrand ``f(P) -> (M, ncomp)`` component-wise."""
    scheme = scheme or QuadratureScheme()

    def g(P):
        return np.asarray(f(P), dtype=float).reshape(len(P), ncomp)

    base, absb, trb = _run(g, dom, scheme, interfaces, ncomp)
    if not scheme.estimate_error:
        return [IntegralResult(float(v), 64 * np.finfo(float).eps * float(a) / max(abs(v), 1e-300), float(tr))
                for v, a, tr in zip(base, absb, trb)]
    cur = scheme.refined()
    ref, absr, trr = _run(g, dom, cur, interfaces, ncomp)
    for _ in range(scheme.max_refinements if scheme.target_rel_err is not None else 0):
        rel = _rel_errors(base, ref, absr)
        if np.all(rel <= scheme.target_rel_err):
            break
        base, cur = ref, cur.refined()
        ref, absr, trr = _run(g, dom, cur, interfaces, ncomp)
    rel = _rel_errors(base, ref, absr)
    return [IntegralResult(float(v1), float(e), float(tr)) for v1, e, tr in zip(ref, rel, trr)]


def _rel_errors(v0, v1, a1):
    err = 2.0 * np.abs(v1 - v0) + 64 * np.finfo(float).eps * a1
    with np.errstate(divide="ignore", invalid="ignore"):
        rel = np.where(v1 != 0, err / np.abs(v1), np.where(err == 0, 0.0, INF))
    return rel


def integrate(f: Callable, dom: Domain, scheme: QuadratureScheme | None = None, interfaces=()) -> IntegralResult:
    """Integrate a scalar integrand ``f(P) -> (M,)`` over ``dom``."""
    return integrate_many(f, dom, scheme, 1, interfaces)[0]


def functional_value(kind: str, u: ScalarField, geom: Geometry, dom: Domain, scheme: QuadratureScheme | None = None,
                     p: float = 2.0, w: Callable | None = None) -> IntegralResult:
    """Integral of |u|^p w (``u_power_weight``) or |grad_L u|^p w (``grad_power_weight``)."""
    if kind == "u_power_weight":
        def f(P):
            val = np.abs(u(P)) ** p
            return val if w is None else val * w(P)
    elif kind == "grad_power_weight":
        def f(P):
            g = horizontal_gradient(geom, u, P)
            val = np.linalg.norm(g, axis=1) ** p
            return val if w is None else val * w(P)
    else:
        raise ValueError(f"unknown functional kind {kind!r}")
    return integrate(f, dom, scheme, interfaces=getattr(u, "interfaces", ()))
