"""Homogeneous norms, their horizontal gradient magnitudes, and Gamma_p profiles."""
from __future__ import annotations

import numpy as np

from .calculus import FDConfig, ScalarField, horizontal_gradient
from .geometry import EuclideanPartial, Geometry, Greiner, Grushin, HType, Step2, as_points

__all__ = [
    "HomogeneousNorm",
    "GrushinNorm",
    "GreinerNorm",
    "HTypeGauge",
    "NSNorm",
    "FirstLayerEuclid",
    "NormError",
    "make_norm",
    "norm_value",
    "norm_gradient_magnitude",
    "gamma_profile",
    "euclidean_norm",
]


class NormError(ValueError):
    pass


class HomogeneousNorm(ScalarField):
    """Degree-one homogeneous function with analytic Euclidean gradient.

    ``full`` is False for norms vanishing on a subspace (FirstLayerEuclid);
    ``Qeff`` is the dimension governing local integrability of its powers.
    """

    name = "norm"
    full = True

    def __init__(self, geom: Geometry):
        self.geom = geom
        self._last = (None, None)
        super().__init__(self._cached_value, egrad=self._egrad_impl, name=self.name)

    def _cached_value(self, P):
        # quadrature integrands evaluate N several times on the same batch
        last_P, last_v = self._last
        if last_P is P:
            return last_v
        v = self._value(P)
        self._last = (P, v)
        return v

    @property
    def Qeff(self) -> float:
        return self.geom.Q

    def _value(self, P):  # pragma: no cover - abstract
        raise NotImplementedError

    def _egrad_impl(self, P):  # pragma: no cover - abstract
        raise NotImplementedError

    def closed_grad_mag(self, P) -> np.ndarray | None:
        """Closed-form |grad_L N|, or None when not available for this geometry."""
        return None

    def grad_mag(self, P) -> np.ndarray:
        c = self.closed_grad_mag(P)
        if c is not None:
            return c
        return np.linalg.norm(self.hgrad(self.geom, P), axis=1)

    def singular(self, P) -> np.ndarray:
        return self._value(P) == 0.0

    def record(self) -> dict:
        return {"norm": self.name}


class GrushinNorm(HomogeneousNorm):
    """(|x|^(2+2g) + (1+g)^2 |y|^2)^(1/(2+2g)) with |grad N| = |x|^g / N^g."""

    name = "grushin"

    def __init__(self, geom: Grushin):
        if not isinstance(geom, Grushin):
            raise NormError("GrushinNorm needs a Grushin geometry")
        super().__init__(geom)
        self.n, self.g = geom.n, geom.gamma

    def _parts(self, P):
        x, y = P[:, : self.n], P[:, self.n:]
        return np.einsum("ij,ij->i", x, x), np.einsum("ij,ij->i", y, y)

    def _value(self, P):
        x2, y2 = self._parts(P)
        g = self.g
        return (x2 ** (1 + g) + (1 + g) ** 2 * y2) ** (1.0 / (2 + 2 * g))

    def _egrad_impl(self, P):
        x2, _ = self._parts(P)
        g = self.g
        N = self(P)
        c = N ** (-1.0 - 2 * g)
        out = np.empty_like(P)
        out[:, : self.n] = (c * x2**g)[:, None] * P[:, : self.n]
        out[:, self.n:] = (c * (1 + g))[:, None] * P[:, self.n:]
        return out

    def closed_grad_mag(self, P):
        x2, _ = self._parts(P)
        return (np.sqrt(x2) / self(P)) ** self.g


class GreinerNorm(HomogeneousNorm):
    """((|x|^2+|y|^2)^(2g) + t^2)^(1/(4g)); for g = 1 this is the Heisenberg gauge."""

    name = "greiner"

    def __init__(self, geom: Geometry, gamma: float | None = None):
        if isinstance(geom, Greiner):
            g = geom.gamma
        elif isinstance(geom, Step2) and geom.kind == "heisenberg":
            g = 1.0
        else:
            raise NormError("GreinerNorm needs a Greiner or Heisenberg geometry")
        if gamma is not None and gamma != g:
            raise NormError("gamma must match the geometry")
        super().__init__(geom)
        self.g = g

    def _r2(self, P):
        x = P[:, :-1]
        return np.einsum("ij,ij->i", x, x)

    def _value(self, P):
        g = self.g
        return (self._r2(P) ** (2 * g) + P[:, -1] ** 2) ** (1.0 / (4 * g))

    def _egrad_impl(self, P):
        g = self.g
        r2 = self._r2(P)
        c = self(P) ** (1.0 - 4 * g)
        out = np.empty_like(P)
        out[:, :-1] = (c * r2 ** (2 * g - 1))[:, None] * P[:, :-1]
        out[:, -1] = c * P[:, -1] / (2 * g)
        return out

    def closed_grad_mag(self, P):
        return (np.sqrt(self._r2(P)) / self(P)) ** (2 * self.g - 1)


class HTypeGauge(HomogeneousNorm):
    """(|x|^4 + 16|t|^2)^(1/4); |grad_L N| = |x|/N on H-type groups."""

    name = "htype"

    def __init__(self, geom: Step2):
        if not isinstance(geom, Step2):
            raise NormError("HTypeGauge needs a step-two geometry")
        super().__init__(geom)
        self.lx = geom.l

    def _value(self, P):
        x2 = np.sum(P[:, : self.lx] ** 2, axis=1)
        t2 = np.sum(P[:, self.lx:] ** 2, axis=1)
        return (x2 * x2 + 16.0 * t2) ** 0.25

    def _egrad_impl(self, P):
        x2 = np.sum(P[:, : self.lx] ** 2, axis=1)
        c = self(P) ** -3.0
        out = np.empty_like(P)
        out[:, : self.lx] = (c * x2)[:, None] * P[:, : self.lx]
        out[:, self.lx:] = (8.0 * c)[:, None] * P[:, self.lx:]
        return out

    def closed_grad_mag(self, P):
        if not isinstance(self.geom, HType):
            return None
        return np.linalg.norm(P[:, : self.lx], axis=1) / self(P)


class NSNorm(HomogeneousNorm):
    """Smooth step-two norm (|xi_1|^4 + |xi_2|^2)^(1/4) over the two layers."""

    name = "ns"

    def __init__(self, geom: Step2):
        if not isinstance(geom, Step2):
            raise NormError("N_S is implemented for step-two geometries only")
        super().__init__(geom)
        self.lx = geom.l

    def _value(self, P):
        x2 = np.sum(P[:, : self.lx] ** 2, axis=1)
        t2 = np.sum(P[:, self.lx:] ** 2, axis=1)
        return (x2 * x2 + t2) ** 0.25

    def _egrad_impl(self, P):
        x2 = np.sum(P[:, : self.lx] ** 2, axis=1)
        c = self(P) ** -3.0
        out = np.empty_like(P)
        out[:, : self.lx] = (c * x2)[:, None] * P[:, : self.lx]
        out[:, self.lx:] = (0.5 * c)[:, None] * P[:, self.lx:]
        return out


class FirstLayerEuclid(HomogeneousNorm):
    """|z| for the leading block z of size m; vanishes on {z = 0}."""

    name = "first_layer"

    def __init__(self, geom: Geometry, m: int | None = None):
        m = geom.m if m is None else int(m)
        if not 1 <= m <= geom.m:
            raise NormError(f"block size m={m} must lie in [1, {geom.m}]")
        super().__init__(geom)
        self.mz = m
        self.full = m == geom.N

    @property
    def Qeff(self) -> float:
        return float(self.mz)

    def _value(self, P):
        return np.linalg.norm(P[:, : self.mz], axis=1)

    def _egrad_impl(self, P):
        out = np.zeros_like(P)
        r = self(P)
        out[:, : self.mz] = P[:, : self.mz] / r[:, None]
        return out

    def closed_grad_mag(self, P):
        return np.ones(len(P))

    def record(self):
        return {"norm": self.name, "m": self.mz}


def make_norm(name: str, geom: Geometry, **kw) -> HomogeneousNorm:
    name = name.lower()
    if name == "grushin":
        return GrushinNorm(geom)
    if name in ("greiner", "heisenberg"):
        return GreinerNorm(geom)
    if name == "htype":
        return HTypeGauge(geom)
    if name == "ns":
        return NSNorm(geom)
    if name in ("first_layer", "euclid"):
        return FirstLayerEuclid(geom, kw.get("m"))
    raise NormError(f"unknown norm {name!r}")


def norm_value(norm: HomogeneousNorm, xi):
    return norm(xi)


def norm_gradient_magnitude(norm: HomogeneousNorm, xi, cfg: FDConfig | None = None):
    """|grad_L N|: closed form when known, otherwise via the calculus module."""
    P, single = as_points(xi, norm.geom.N)
    if np.any(norm.singular(P)):
        bad = P[norm.singular(P)][0]
        raise NormError(f"gradient magnitude undefined at the singular point {bad.tolist()}")
    out = norm.closed_grad_mag(P)
    if out is None:
        out = np.linalg.norm(horizontal_gradient(norm.geom, norm, P, cfg), axis=1)
    return float(out[0]) if single else out


def gamma_profile(p: float, Qeff: float, s):
    """s^((p-Q)/(p-1)) for p != Q and -ln s for p = Q."""
    if not p > 1:
        raise ValueError("p must exceed 1")
    s_arr = np.asarray(s, dtype=float)
    if np.any(s_arr <= 0):
        raise ValueError("profile argument must be positive")
    if p == Qeff:
        out = -np.log(s_arr)
    else:
        out = s_arr ** ((p - Qeff) / (p - 1.0))
    return float(out) if np.ndim(out) == 0 else out


def euclidean_norm(N: int) -> FirstLayerEuclid:
    """Full Euclidean norm |xi| on R^N with the full gradient."""
    return FirstLayerEuclid(EuclideanPartial(N, N), N)
