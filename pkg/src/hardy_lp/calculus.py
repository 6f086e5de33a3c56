"""Horizontal differential operators by central finite differences.

The horizontal gradient is mu(xi) applied to the Euclidean gradient.
Second horizontal derivatives X_i X_j u are obtained by nesting the
first-order stencil of X_i over the field X_j u, since the X_i do not
commute in general.  For all catalogued geometries the rows of mu are
divergence free, so L_2 u = sum_i X_i X_i u and

    L_p u = (p - 2) |grad_L u|^(p-4) Delta_inf u + |grad_L u|^(p-2) L_2 u,

with Delta_inf u = <H grad_L u, grad_L u> for the symmetrised horizontal
Hessian H.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .geometry import Geometry, as_points

__all__ = [
    "FDConfig",
    "ScalarField",
    "Profile",
    "DegeneratePointError",
    "horizontal_gradient",
    "horizontal_hessian",
    "lp_operator",
    "lp_operator_batch",
    "lp_fd_error",
    "radial_lp_formula",
    "harmonicity_scan",
    "ScanResult",
    "fd_steps",
]

EPS = np.finfo(float).eps


class DegeneratePointError(ArithmeticError):
    """The horizontal gradient vanishes where a singular prefactor is needed."""

    def __init__(self, xi, grad_norm):
        self.xi = np.asarray(xi, dtype=float)
        self.grad_norm = float(grad_norm)
        super().__init__(f"degenerate point {self.xi.tolist()}: |grad_L u| = {grad_norm:.3e}")


@dataclass(frozen=True)
class FDConfig:
    h_rel: float = 1e-5
    richardson: bool = False
    grad_threshold: float = 1e-8
    # step for nested second-order stencils; None means max(h_rel, 1e-4),
    # since eps / h^2 rounding dominates below that
    h_second: float | None = None

    def __post_init__(self):
        if not self.h_rel > 0:
            raise ValueError("h_rel must be positive")
        if self.h_second is not None and not self.h_second > 0:
            raise ValueError("h_second must be positive")

    @property
    def h2(self) -> float:
        return self.h_second if self.h_second is not None else max(self.h_rel, 1e-4)


class ScalarField:
    """A real function on R^N, vectorised over rows of an ``(M, N)`` array.

    ``egrad`` (Euclidean gradient) and ``hgrad`` (horizontal gradient, needs
    the geometry) are optional analytic derivatives.  ``interfaces`` is a
    sequence of ``(field, level)`` pairs: level sets across which the field
    is only piecewise C^1.  ``support`` optionally names a quadrature domain
    containing the support.
    """

    def __init__(
        self,
        f: Callable[[np.ndarray], np.ndarray],
        egrad: Callable[[np.ndarray], np.ndarray] | None = None,
        hgrad: Callable[[Geometry, np.ndarray], np.ndarray] | None = None,
        name: str = "u",
        interfaces: tuple = (),
        support=None,
    ):
        self._f = f
        self._egrad = egrad
        self._hgrad = hgrad
        self.name = name
        self.interfaces = tuple((g, float(c)) for g, c in interfaces)
        self.support = support

    def __call__(self, xi) -> np.ndarray:
        P = np.asarray(xi, dtype=float)
        if P.ndim == 1:
            return float(self._f(P[None, :])[0])
        return self._f(P)

    @property
    def has_egrad(self) -> bool:
        return self._egrad is not None

    @property
    def has_hgrad(self) -> bool:
        return self._hgrad is not None or self._egrad is not None

    def egrad(self, P: np.ndarray) -> np.ndarray:
        if self._egrad is None:
            raise AttributeError(f"{self.name} has no analytic gradient")
        return self._egrad(P)

    def hgrad(self, geom: Geometry, P: np.ndarray) -> np.ndarray:
        if self._hgrad is not None:
            return self._hgrad(geom, P)
        return np.einsum("mij,mj->mi", geom._mu(P), self.egrad(P))

    def __repr__(self):
        return f"ScalarField({self.name})"


@dataclass(frozen=True)
class Profile:
    """One-variable profile v with first and second derivatives (vectorised)."""

    v: Callable[[np.ndarray], np.ndarray]
    dv: Callable[[np.ndarray], np.ndarray]
    d2v: Callable[[np.ndarray], np.ndarray]
    name: str = "v"


def fd_steps(P: np.ndarray, h_rel: float) -> np.ndarray:
    """Per-point step h = h_rel * max(1, |xi|)."""
    return h_rel * np.maximum(1.0, np.linalg.norm(P, axis=1))


def _fd_egrad(u, P: np.ndarray, h: np.ndarray) -> np.ndarray:
    M, N = P.shape
    E = np.eye(N)
    shifts = h[:, None, None] * E[None]  # (M, N, N)
    fp = u(np.reshape(P[:, None, :] + shifts, (-1, N))).reshape(M, N)
    fm = u(np.reshape(P[:, None, :] - shifts, (-1, N))).reshape(M, N)
    return (fp - fm) / (2.0 * h[:, None])


def _fd_hgrad(geom: Geometry, u, P, h):
    return np.einsum("mij,mj->mi", geom._mu(P), _fd_egrad(u, P, h))


def horizontal_gradient(geom: Geometry, u, xi, cfg: FDConfig | None = None, analytic: bool = True):
    """grad_L u = mu(xi) grad u at one point or a batch of points."""
    cfg = cfg or FDConfig()
    P, single = as_points(xi, geom.N)
    if analytic and isinstance(u, ScalarField) and u.has_hgrad:
        g = u.hgrad(geom, P)
    else:
        h = fd_steps(P, cfg.h_rel)
        g = _fd_hgrad(geom, u, P, h)
        if cfg.richardson:
            g = (4.0 * _fd_hgrad(geom, u, P, h / 2) - g) / 3.0
    return g[0] if single else g


def _nested_hessian(geom: Geometry, u, P: np.ndarray, h: np.ndarray):
    """Return (grad_L u, H) with H[m, i, j] = X_i (X_j u) at P[m]."""
    M, N = P.shape
    E = np.eye(N)
    # outer stencil points xi +- h e_a, shape (M, 2N, N)
    outer = np.concatenate([P[:, None, :] + h[:, None, None] * E, P[:, None, :] - h[:, None, None] * E], axis=1)
    flat = outer.reshape(-1, N)
    hh = np.repeat(h, 2 * N)
    G = _fd_hgrad(geom, u, flat, hh).reshape(M, 2 * N, geom.l)  # X_j u at outer points
    dG = (G[:, :N, :] - G[:, N:, :]) / (2.0 * h[:, None, None])  # d_a (X_j u), shape (M, N, l)
    mu = geom._mu(P)
    H = np.einsum("mia,maj->mij", mu, dG)
    grad = _fd_hgrad(geom, u, P, h)
    return grad, H


def horizontal_hessian(geom: Geometry, u, xi, cfg: FDConfig | None = None) -> np.ndarray:
    """Nested finite-difference matrix X_i X_j u (not symmetrised)."""
    cfg = cfg or FDConfig()
    P, single = as_points(xi, geom.N)
    _, H = _nested_hessian(geom, u, P, fd_steps(P, cfg.h2))
    return H[0] if single else H


def _lp_from_parts(p: float, grad: np.ndarray, H: np.ndarray):
    g2 = np.sum(grad * grad, axis=1)
    gn = np.sqrt(g2)
    L2 = np.trace(H, axis1=1, axis2=2)
    Hs = 0.5 * (H + np.transpose(H, (0, 2, 1)))
    dinf = np.einsum("mi,mij,mj->m", grad, Hs, grad)
    if p == 2:
        return L2, gn
    with np.errstate(divide="ignore", invalid="ignore"):
        val = (p - 2.0) * gn ** (p - 4.0) * dinf + gn ** (p - 2.0) * L2
    return val, gn


def _needs_threshold(p: float) -> bool:
    return p != 2 and p < 4


def lp_operator_batch(geom: Geometry, p: float, u, P, cfg: FDConfig | None = None):
    """Vectorised L_p u.  Returns ``(values, degenerate_mask)``; degenerate entries are NaN."""
    cfg = cfg or FDConfig()
    P, _ = as_points(P, geom.N)
    h = fd_steps(P, cfg.h2)
    grad, H = _nested_hessian(geom, u, P, h)
    val, gn = _lp_from_parts(p, grad, H)
    if cfg.richardson:
        grad2, H2 = _nested_hessian(geom, u, P, h / 2)
        val2, _ = _lp_from_parts(p, grad2, H2)
        val = (4.0 * val2 - val) / 3.0
    bad = (gn <= cfg.grad_threshold) if _needs_threshold(p) else np.zeros(len(gn), bool)
    val = np.where(bad, np.nan, val)
    return val, bad


def lp_operator(geom: Geometry, p: float, u, xi, cfg: FDConfig | None = None) -> float:
    """L_p u at a single point; raises DegeneratePointError on a vanishing gradient."""
    cfg = cfg or FDConfig()
    P, _ = as_points(xi, geom.N)
    val, bad = lp_operator_batch(geom, p, u, P, cfg)
    if bad[0]:
        g = horizontal_gradient(geom, u, P, cfg, analytic=False)
        raise DegeneratePointError(P[0], np.linalg.norm(g))
    return float(val[0])


def lp_fd_error(geom: Geometry, p: float, u, P, cfg: FDConfig | None = None):
    """Estimated absolute FD error of L_p u at the second-order step ``cfg.h2``.

    Step-halving estimate (4/3)|L(h) - L(h/2)| for a second-order scheme,
    plus a rounding floor proportional to eps |u| / h^2.
    """
    cfg = cfg or FDConfig()
    P, _ = as_points(P, geom.N)
    h2 = cfg.h2
    plain = FDConfig(h_rel=h2, grad_threshold=cfg.grad_threshold, h_second=h2)
    half = FDConfig(h_rel=h2 / 2, grad_threshold=cfg.grad_threshold, h_second=h2 / 2)
    a, _ = lp_operator_batch(geom, p, u, P, plain)
    b, _ = lp_operator_batch(geom, p, u, P, half)
    h = fd_steps(P, h2)
    mu_scale = 1.0 + np.max(np.abs(geom._mu(P)), axis=(1, 2))
    g = horizontal_gradient(geom, u, P, plain, analytic=False)
    gn = np.linalg.norm(g, axis=1)
    prefactor = np.maximum(1.0, gn ** (p - 2.0)) if p != 2 else 1.0
    floor = 64.0 * EPS * (1.0 + np.abs(u(P))) * mu_scale**2 / h**2 * prefactor
    return 4.0 / 3.0 * np.abs(a - b) + floor


def radial_lp_formula(geom: Geometry, p: float, alpha: float, g: ScalarField, v: Profile, xi,
                      cfg: FDConfig | None = None) -> np.ndarray | float:
    """Closed form of L_p(v(g)) valid when L_p(g^alpha) = 0.

    (p-1) |grad_L g|^p |v'(g)|^(p-2) [v''(g) + (1-alpha) v'(g)/g]
    """
    P, single = as_points(xi, geom.N)
    s = g(P)
    if np.any(s <= 0):
        raise ValueError("radial formula needs g > 0")
    d1 = v.dv(s)
    if np.any(d1 == 0):
        raise ValueError("radial formula needs v'(g) != 0")
    gg = np.linalg.norm(horizontal_gradient(geom, g, P, cfg), axis=1)
    out = (p - 1.0) * gg**p * np.abs(d1) ** (p - 2.0) * (v.d2v(s) + (1.0 - alpha) * d1 / s)
    return float(out[0]) if single else out


@dataclass(frozen=True)
class ScanResult:
    max_residual: float
    grid_points_skipped: int
    n_points: int
    h_rel: float


def harmonicity_scan(geom: Geometry, p: float, u, region, grid: int = 16,
                     cfg: FDConfig | None = None) -> ScanResult:
    """Max |L_p u| over a grid of ``region`` (anything with ``grid_points(resolution)``)."""
    cfg = cfg or FDConfig()
    P = region.grid_points(grid)
    vals, bad = lp_operator_batch(geom, p, u, P, cfg)
    good = ~bad & np.isfinite(vals)
    mx = float(np.max(np.abs(vals[good]))) if np.any(good) else float("nan")
    return ScanResult(max_residual=mx, grid_points_skipped=int(np.sum(~good)),
                      n_points=len(P), h_rel=cfg.h2)
