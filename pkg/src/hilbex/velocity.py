"""Velocity-space discretization: grids, Maxwellians, moments and the macroscopic projection."""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field

import numpy as np

SCHEMES = ("uniform-tensor", "gauss-tensor")
TOL_QUAD = 1e-6


@dataclass(frozen=True)
class GridSpec:
    radius: float = 6.0
    n_per_axis: int = 16
    scheme: str = "uniform-tensor"

    def to_dict(self) -> dict:
        return {"radius": float(self.radius), "n_per_axis": int(self.n_per_axis), "scheme": self.scheme}

    @classmethod
    def from_dict(cls, data: dict) -> "GridSpec":
        return cls(float(data["radius"]), int(data["n_per_axis"]), str(data.get("scheme", "uniform-tensor")))


@dataclass(frozen=True, eq=False)
class VelocityGrid:
    """Tensor nodes cropped to the ball |v| <= radius.

    ``reflect[i]`` is the index of the node (v1, v2, -v3); ``axis`` holds the 1D nodes
    and ``index`` the tensor indices of the kept nodes.
    """

    nodes: np.ndarray
    weights: np.ndarray
    radius: float
    scheme: str
    n_per_axis: int
    axis: np.ndarray
    index: np.ndarray
    reflect: np.ndarray
    grid_id: str

    @property
    def size(self) -> int:
        return self.nodes.shape[0]

    @property
    def spec(self) -> GridSpec:
        return GridSpec(self.radius, self.n_per_axis, self.scheme)

    @property
    def v3(self) -> np.ndarray:
        return self.nodes[:, 2]

    def reflect_values(self, values: np.ndarray) -> np.ndarray:
        """Apply f(v) -> f(v1, v2, -v3) along the last axis."""
        return np.take(values, self.reflect, axis=-1)

    def inner(self, f: np.ndarray, g: np.ndarray) -> np.ndarray:
        return np.sum(f * g * self.weights, axis=-1)

    def norm(self, f: np.ndarray) -> np.ndarray:
        return np.sqrt(np.maximum(self.inner(f, f), 0.0))


@dataclass(frozen=True)
class FluidPoint:
    rho: float
    u: tuple
    T: float

    def __post_init__(self):
        if not (self.rho > 0 and self.T > 0):
            raise ValueError(f"FluidPoint needs rho > 0 and T > 0, got rho={self.rho}, T={self.T}")
        u = tuple(float(c) for c in self.u)
        if len(u) != 3:
            raise ValueError("FluidPoint velocity must have three components")
        object.__setattr__(self, "u", u)

    def arrays(self):
        return np.float64(self.rho), np.asarray(self.u, dtype=float), np.float64(self.T)


@dataclass(frozen=True)
class KineticSlice:
    values: np.ndarray
    grid_id: str

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.ndim != 1 or not np.all(np.isfinite(vals)):
            raise ValueError("KineticSlice values must be a finite 1D array")
        object.__setattr__(self, "values", vals)


@dataclass(frozen=True)
class MomentVector:
    mass: float
    momentum: tuple
    energy: float

    def as_array(self) -> np.ndarray:
        return np.array([self.mass, *self.momentum, self.energy])


def build_grid(radius: float, n_per_axis: int, scheme: str = "uniform-tensor") -> VelocityGrid:
    if not radius > 0:
        raise ValueError(f"radius must be positive, got {radius}")
    if n_per_axis < 4:
        raise ValueError(f"n_per_axis must be at least 4, got {n_per_axis}")
    if n_per_axis % 2:
        raise ValueError(
            f"n_per_axis={n_per_axis} is odd: v3 = 0 would be a node, which puts grazing "
            "velocities on the grid and breaks the transport sweep that divides by v3"
        )
    if scheme == "uniform-tensor":
        h = 2.0 * radius / n_per_axis
        axis = -radius + h * (np.arange(n_per_axis) + 0.5)
        w1 = np.full(n_per_axis, h)
    elif scheme == "gauss-tensor":
        x, w = np.polynomial.legendre.leggauss(n_per_axis)
        axis, w1 = radius * x, radius * w
        axis = 0.5 * (axis - axis[::-1])  # exact symmetry
        w1 = 0.5 * (w1 + w1[::-1])
    else:
        raise ValueError(f"unknown scheme {scheme!r}; expected one of {SCHEMES}")
    n = n_per_axis
    ii, jj, kk = np.meshgrid(np.arange(n), np.arange(n), np.arange(n), indexing="ij")
    idx = np.stack([ii.ravel(), jj.ravel(), kk.ravel()], axis=1)
    nodes = axis[idx]
    keep = np.einsum("ij,ij->i", nodes, nodes) <= radius * radius * (1 + 1e-14)
    idx, nodes = idx[keep], nodes[keep]
    weights = w1[idx[:, 0]] * w1[idx[:, 1]] * w1[idx[:, 2]]
    # reflection map via tensor index lookup
    lookup = -np.ones((n, n, n), dtype=np.int64)
    lookup[idx[:, 0], idx[:, 1], idx[:, 2]] = np.arange(len(idx))
    reflect = lookup[idx[:, 0], idx[:, 1], n - 1 - idx[:, 2]]
    if np.any(reflect < 0):
        raise RuntimeError("grid is not closed under v3 reflection")
    tag = hashlib.sha1(f"{radius!r}|{n}|{scheme}".encode()).hexdigest()[:12]
    for arr in (nodes, weights, axis, idx, reflect):
        arr.setflags(write=False)
    return VelocityGrid(nodes, weights, float(radius), scheme, n, axis, idx, reflect, tag)


def grid_from_spec(spec: GridSpec) -> VelocityGrid:
    return build_grid(spec.radius, spec.n_per_axis, spec.scheme)


def _state_arrays(rho, u, T):
    rho = np.asarray(rho, dtype=float)
    u = np.asarray(u, dtype=float)
    T = np.asarray(T, dtype=float)
    return rho, u, T


def maxwellian_values(grid: VelocityGrid, rho, u, T) -> np.ndarray:
    """rho (...), u (..., 3), T (...) -> values (..., N)."""
    rho, u, T = _state_arrays(rho, u, T)
    w = grid.nodes - u[..., None, :]
    w2 = np.einsum("...ij,...ij->...i", w, w)
    return rho[..., None] * (2 * np.pi * T[..., None]) ** -1.5 * np.exp(-w2 / (2 * T[..., None]))


def maxwellian(state: FluidPoint, grid: VelocityGrid) -> KineticSlice:
    rho, u, T = state.arrays()
    return KineticSlice(maxwellian_values(grid, rho, u, T), grid.grid_id)


def _values_on(f, grid: VelocityGrid) -> np.ndarray:
    if isinstance(f, KineticSlice):
        if f.grid_id != grid.grid_id:
            raise ValueError(f"slice lives on grid {f.grid_id}, not {grid.grid_id}")
        return f.values
    vals = np.asarray(f, dtype=float)
    if vals.shape[-1] != grid.size:
        raise ValueError(f"slice has {vals.shape[-1]} values but grid has {grid.size} nodes")
    return vals


def moment_array(f: np.ndarray, grid: VelocityGrid) -> np.ndarray:
    """Quadrature of f * (1, v1, v2, v3, |v|^2/2) along the last axis."""
    v = grid.nodes
    psi = np.column_stack([np.ones(grid.size), v, 0.5 * np.einsum("ij,ij->i", v, v)])
    return (f * grid.weights) @ psi


def moments(f, grid: VelocityGrid) -> MomentVector:
    m = moment_array(_values_on(f, grid), grid)
    return MomentVector(float(m[0]), (float(m[1]), float(m[2]), float(m[3])), float(m[4]))


def analytic_basis(grid: VelocityGrid, rho, u, T) -> np.ndarray:
    """Unnormalized-on-grid chi_0..chi_4, shape (..., 5, N)."""
    rho, u, T = _state_arrays(rho, u, T)
    sq = np.sqrt(maxwellian_values(grid, rho, u, T))
    w = grid.nodes - u[..., None, :]
    w2 = np.einsum("...ij,...ij->...i", w, w)
    r = rho[..., None]
    t = T[..., None]
    chi = [sq / np.sqrt(r)]
    for i in range(3):
        chi.append(w[..., i] * sq / np.sqrt(r * t))
    chi.append((w2 / t - 3.0) * sq / np.sqrt(6.0 * r))
    return np.stack(chi, axis=-2)


@dataclass(frozen=True, eq=False)
class MacroBasis:
    """Discretely orthonormal basis of the null space at one or many fluid states."""

    grid: VelocityGrid
    e: np.ndarray  # (..., 5, N)
    sqrt_mu: np.ndarray  # (..., N)
    rho: np.ndarray
    u: np.ndarray
    T: np.ndarray
    _cache: dict = field(default_factory=dict, repr=False)

    def coefficients(self, g: np.ndarray) -> np.ndarray:
        return np.einsum("...kn,...n->...k", self.e, g * self.grid.weights)

    def project(self, g: np.ndarray) -> np.ndarray:
        return np.einsum("...k,...kn->...n", self.coefficients(g), self.e)

    def micro(self, g: np.ndarray) -> np.ndarray:
        return g - self.project(g)

    def shifted(self):
        """w = v - u and |w|^2 on the grid, shape (..., N, 3) and (..., N)."""
        if "w" not in self._cache:
            w = self.grid.nodes - self.u[..., None, :]
            self._cache["w"] = w
            self._cache["w2"] = np.einsum("...ij,...ij->...i", w, w)
        return self._cache["w"], self._cache["w2"]

    def macro_from_fluid(self, rho1, u1, theta1) -> np.ndarray:
        """{rho1/rho + u1.(v-u)/T + theta1/(6T)(|v-u|^2/T - 3)} sqrt(mu)."""
        w, w2 = self.shifted()
        rho1 = np.asarray(rho1, float)[..., None]
        theta1 = np.asarray(theta1, float)[..., None]
        u1 = np.asarray(u1, float)
        r = self.rho[..., None]
        t = self.T[..., None]
        poly = rho1 / r + np.einsum("...ni,...i->...n", w, u1) / t + theta1 / (6 * t) * (w2 / t - 3.0)
        return poly * self.sqrt_mu

    def fluid_from_macro(self, g: np.ndarray):
        """Inverse of macro_from_fluid on the span: (rho1, u1, theta1)."""
        w, w2 = self.shifted()
        gw = g * self.sqrt_mu * self.grid.weights
        rho1 = gw.sum(-1)
        u1 = np.einsum("...n,...ni->...i", gw, w) / self.rho[..., None]
        e2 = np.einsum("...n,...n->...", gw, w2)
        theta1 = (e2 - 3 * self.T * rho1) / self.rho
        return rho1, u1, theta1


def macro_basis(grid: VelocityGrid, rho, u, T) -> MacroBasis:
    rho, u, T = _state_arrays(rho, u, T)
    chi = analytic_basis(grid, rho, u, T)
    wts = grid.weights
    e = np.empty_like(chi)
    for k in range(5):
        v = chi[..., k, :].copy()
        for _ in range(2):  # reorthogonalize once for machine-precision projection
            for j in range(k):
                c = np.sum(v * e[..., j, :] * wts, axis=-1, keepdims=True)
                v = v - c * e[..., j, :]
        nrm = np.sqrt(np.sum(v * v * wts, axis=-1, keepdims=True))
        e[..., k, :] = v / nrm
    sq = np.sqrt(maxwellian_values(grid, rho, u, T))
    return MacroBasis(grid, e, sq, rho, u, T)


def basis_for(state: FluidPoint, grid: VelocityGrid) -> MacroBasis:
    rho, u, T = state.arrays()
    return macro_basis(grid, rho, u, T)


def project_P(g, state: FluidPoint, grid: VelocityGrid) -> KineticSlice:
    vals = _values_on(g, grid)
    return KineticSlice(basis_for(state, grid).project(vals), grid.grid_id)


def truncation_tail(radius: float, T: float = 1.0, shift: float = 0.0) -> float:
    """Mass of a unit Maxwellian outside the ball, bound from the chi-3 tail."""
    r = max(radius - shift, 0.0) / math.sqrt(T)
    return math.erfc(r / math.sqrt(2)) + math.sqrt(2 / math.pi) * r * math.exp(-r * r / 2)
