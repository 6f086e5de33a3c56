"""Degenerate vector-field families given by a coefficient matrix mu(xi).

Each geometry stores the matrix field ``mu`` (rows are the coefficient
vectors of X_1..X_l), per-coordinate dilation exponents and the
homogeneous dimension Q.  Evaluation is vectorised: a batch of points has
shape ``(M, N)`` and ``mu`` returns ``(M, l, N)``.
"""
from __future__ import annotations

import numpy as np

__all__ = [
    "Geometry",
    "EuclideanPartial",
    "Grushin",
    "Greiner",
    "Heisenberg",
    "Step2",
    "HType",
    "GeometryError",
    "heisenberg_U",
    "mu_matrix",
    "dilate",
    "homogeneous_dimension",
    "first_layer_split",
    "as_points",
]


class GeometryError(ValueError):
    """Invalid geometry parameters or point dimension."""


def as_points(xi, N: int) -> tuple[np.ndarray, bool]:
    """Return ``xi`` as an ``(M, N)`` float array and whether it was a single point."""
    P = np.asarray(xi, dtype=float)
    single = P.ndim == 1
    if single:
        P = P[None, :]
    if P.ndim != 2 or P.shape[1] != N:
        raise GeometryError(f"expected points of dimension {N}, got shape {np.shape(xi)}")
    return P, single


class Geometry:
    """Common interface.

    Attributes
    ----------
    N : ambient dimension
    l : number of vector fields (rows of mu)
    exponents : dilation exponent of each coordinate
    Q : homogeneous dimension
    m : size of the leading identity block of mu, i.e. mu = (I_m | mu_1)
    pole_axis : coordinate used as polar axis by the quadrature, chosen so
        that the degenerate set sits on a pole or an equator
    """

    kind = "abstract"
    N: int
    l: int
    exponents: np.ndarray
    Q: float
    m: int
    pole_axis: int

    def mu(self, xi) -> np.ndarray:
        P, single = as_points(xi, self.N)
        out = self._mu(P)
        return out[0] if single else out

    def _mu(self, P: np.ndarray) -> np.ndarray:  # pragma: no cover - abstract
        raise NotImplementedError

    def dilate(self, lam: float, xi) -> np.ndarray:
        if not lam > 0:
            raise GeometryError(f"dilation factor must be positive, got {lam}")
        P = np.asarray(xi, dtype=float)
        if P.shape[-1] != self.N:
            raise GeometryError(f"expected points of dimension {self.N}")
        return P * lam ** self.exponents

    @property
    def dilation_sum(self) -> float:
        """Volume scaling degree of the dilations (equals Q except for EuclideanPartial)."""
        return float(np.sum(self.exponents))

    def record(self) -> dict:
        raise NotImplementedError

    def __repr__(self):
        args = ", ".join(f"{k}={v}" for k, v in self.record().items() if k not in ("type", "U"))
        return f"{type(self).__name__}({args})"


class EuclideanPartial(Geometry):
    """Gradient in the first ``m`` of ``N`` Euclidean coordinates (m = N gives the full gradient)."""

    kind = "euclidean"

    def __init__(self, m: int = 1, N: int | None = None):
        N = m if N is None else N
        m, N = int(m), int(N)
        if not 1 <= m <= N:
            raise GeometryError(f"need 1 <= m <= N, got m={m}, N={N}")
        self.N, self.l, self.m = N, m, m
        self.exponents = np.ones(N)
        self.Q = float(m)
        self.pole_axis = 0

    def _mu(self, P):
        out = np.zeros((P.shape[0], self.l, self.N))
        out[:, np.arange(self.l), np.arange(self.l)] = 1.0
        return out

    def record(self):
        return {"type": "euclidean", "m": self.m, "N": self.N}


class Grushin(Geometry):
    """X = (grad_x, |x|^gamma grad_y) on R^n x R^k."""

    kind = "grushin"

    def __init__(self, n: int = 1, k: int = 1, gamma: float = 1.0):
        n, k, gamma = int(n), int(k), float(gamma)
        if n < 1 or k < 1 or gamma < 0:
            raise GeometryError("Grushin needs n, k >= 1 and gamma >= 0")
        self.n, self.k, self.gamma = n, k, gamma
        self.N = self.l = n + k
        self.m = n
        self.exponents = np.concatenate([np.ones(n), np.full(k, 1.0 + gamma)])
        self.Q = n + (1.0 + gamma) * k
        self.pole_axis = 0 if n == 1 or k > 1 else self.N - 1

    def _mu(self, P):
        out = np.zeros((P.shape[0], self.N, self.N))
        idx = np.arange(self.N)
        out[:, idx, idx] = 1.0
        if self.gamma != 0:
            rx = np.linalg.norm(P[:, : self.n], axis=1) ** self.gamma
            out[:, idx[self.n:], idx[self.n:]] = rx[:, None]
        return out

    def record(self):
        return {"type": "grushin", "n": self.n, "k": self.k, "gamma": self.gamma}


class Greiner(Geometry):
    """Greiner fields on R^{2n+1} = (x, y, t); gamma = 1 gives the Heisenberg fields."""

    kind = "greiner"

    def __init__(self, n: int = 1, gamma: float = 1.0):
        n, gamma = int(n), float(gamma)
        if n < 1 or gamma < 1:
            raise GeometryError("Greiner needs n >= 1 and gamma >= 1")
        self.n, self.gamma = n, gamma
        self.N, self.l, self.m = 2 * n + 1, 2 * n, 2 * n
        self.exponents = np.concatenate([np.ones(2 * n), [2.0 * gamma]])
        self.Q = 2.0 * n + 2.0 * gamma
        self.pole_axis = self.N - 1

    def _mu(self, P):
        n, g = self.n, self.gamma
        x, y = P[:, :n], P[:, n: 2 * n]
        r2 = np.sum(x * x, axis=1) + np.sum(y * y, axis=1)
        fac = 2.0 * g * r2 ** (g - 1.0)
        out = np.zeros((P.shape[0], 2 * n, 2 * n + 1))
        idx = np.arange(2 * n)
        out[:, idx, idx] = 1.0
        out[:, :n, -1] = fac[:, None] * y
        out[:, n:, -1] = -fac[:, None] * x
        return out

    def record(self):
        return {"type": "greiner", "n": self.n, "gamma": self.gamma}


def _as_skew(U, l: int, k: int) -> np.ndarray:
    U = np.asarray(U, dtype=float)
    if U.ndim == 2:
        U = U[None]
    if U.shape != (k, l, l):
        raise GeometryError(f"U must have shape ({k}, {l}, {l}), got {U.shape}")
    if not np.allclose(U, -np.transpose(U, (0, 2, 1)), atol=1e-12):
        raise GeometryError("U matrices must be skew-symmetric")
    return U


class Step2(Geometry):
    """Step-two group on R^l x R^k with X_i = d_i + scale * sum_s (U^(s) x)_i d_{t_s}."""

    kind = "step2"
    scale = 1.0

    def __init__(self, l: int, k: int, U):
        l, k = int(l), int(k)
        self.U = _as_skew(U, l, k)
        self._validate()
        self.k = k
        self.N, self.l, self.m = l + k, l, l
        self.exponents = np.concatenate([np.ones(l), np.full(k, 2.0)])
        self.Q = float(l + 2 * k)
        self.pole_axis = self.N - 1 if k == 1 else 0

    def _validate(self):
        pass

    def _mu(self, P):
        l = self.l
        out = np.zeros((P.shape[0], l, self.N))
        idx = np.arange(l)
        out[:, idx, idx] = 1.0
        out[:, :, l:] = self.scale * np.einsum("sij,mj->mis", self.U, P[:, :l])
        return out

    def record(self):
        return {"type": self.kind, "l": self.l, "k": self.k, "U": self.U.tolist()}


class HType(Step2):
    """H-type group; U^(s) orthogonal and pairwise anticommuting, fields use scale 1/2."""

    kind = "htype"
    scale = 0.5

    def _validate(self):
        U = self.U
        eye = np.eye(U.shape[1])
        for s in range(U.shape[0]):
            if not np.allclose(U[s] @ U[s].T, eye, atol=1e-10):
                raise GeometryError(f"H-type U^({s}) is not orthogonal")
            for r in range(s):
                if not np.allclose(U[s] @ U[r] + U[r] @ U[s], 0.0, atol=1e-10):
                    raise GeometryError(f"H-type U^({s}) and U^({r}) do not anticommute")


def heisenberg_U(n: int) -> np.ndarray:
    """U realising X_i = d_{x_i} + 2 y_i d_t and Y_i = d_{y_i} - 2 x_i d_t."""
    U = np.zeros((1, 2 * n, 2 * n))
    for i in range(n):
        U[0, i, n + i] = 2.0
        U[0, n + i, i] = -2.0
    return U


class Heisenberg(Step2):
    kind = "heisenberg"

    def __init__(self, n: int = 1):
        self.n = int(n)
        super().__init__(2 * self.n, 1, heisenberg_U(self.n))

    def record(self):
        return {"type": "heisenberg", "n": self.n}


def mu_matrix(geom: Geometry, xi) -> np.ndarray:
    return geom.mu(xi)


def dilate(geom: Geometry, lam: float, xi) -> np.ndarray:
    return geom.dilate(lam, xi)


def homogeneous_dimension(geom: Geometry) -> float:
    return geom.Q


def first_layer_split(geom: Geometry, xi, m: int | None = None):
    """Split ``xi`` into the leading block of size ``m`` (default ``geom.m``) and the rest."""
    m = geom.m if m is None else int(m)
    P = np.asarray(xi, dtype=float)
    return P[..., :m], P[..., m:]
