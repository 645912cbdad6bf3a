"""Half-space compressible Euler, the linear hyperbolic system for interior orders, and acoustics.

Everything here lives in the slab setting: fields depend on (t, x3) and carry the full velocity
3-vector. The wall sits at x3 = 0 and the slip condition u3 = 0 is imposed there.
"""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field

import numpy as np

GAMMA = 5.0 / 3.0
SOUND_SPEED = math.sqrt(GAMMA)
TOL_BC = 1e-10
MODES = ("slab-1d", "tangential-fourier")


class BlowUpError(RuntimeError):
    def __init__(self, time: float, gradient: float):
        super().__init__(f"gradient ceiling exceeded at t = {time:.6g} (max |grad| = {gradient:.3e})")
        self.time = time
        self.gradient = gradient


class CompatibilityError(ValueError):
    pass


# ---------------------------------------------------------------- grids and profiles


@dataclass(frozen=True)
class MeshSpec:
    x_max: float = 8.0
    h_wall: float = 0.01
    growth: float = 1.1
    h_max: float = 0.05

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True, eq=False)
class SpatialGrid:
    """Cell-centred mesh on [0, x_max]; ``nodes`` = [0 (wall), cell centres...]."""

    mode: str
    faces: np.ndarray
    dt: float
    cfl: float
    max_speed: float

    @property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.faces[1:] + self.faces[:-1])

    @property
    def widths(self) -> np.ndarray:
        return np.diff(self.faces)

    @property
    def nodes(self) -> np.ndarray:
        return np.concatenate([[0.0], self.centers])

    @property
    def x3_nodes(self) -> np.ndarray:
        return self.nodes


def graded_faces(mesh: MeshSpec) -> np.ndarray:
    if not (mesh.x_max > 0 and mesh.h_wall > 0 and mesh.h_max >= mesh.h_wall and mesh.growth >= 1):
        raise ValueError(f"invalid mesh specification {mesh}")
    faces = [0.0]
    h = mesh.h_wall
    while faces[-1] < mesh.x_max - 1e-12:
        faces.append(faces[-1] + h)
        h = min(h * mesh.growth, mesh.h_max)
    faces = np.asarray(faces)
    faces *= mesh.x_max / faces[-1]
    return faces


def build_spatial_grid(mesh: MeshSpec, cfl: float = 0.4, max_speed: float = 1.5, mode: str = "slab-1d") -> SpatialGrid:
    if mode not in MODES:
        raise ValueError(f"unknown spatial mode {mode!r}")
    if mode != "slab-1d":
        raise ValueError("only the slab-1d reduction is implemented; tangential-fourier fields are not supported")
    faces = graded_faces(mesh)
    dt = cfl * float(np.min(np.diff(faces))) / max_speed
    return SpatialGrid(mode, faces, dt, cfl, max_speed)


def smooth_cutoff(x: np.ndarray, start: float = 0.5, stop: float = 1.0) -> np.ndarray:
    """C-infinity monotone cut-off: 1 on [0, start], 0 beyond stop."""
    x = np.asarray(x, float)
    s = np.clip((x - start) / (stop - start), 0.0, 1.0)

    def bump(z):
        return np.where(z > 0, np.exp(-1.0 / np.where(z > 0, z, 1.0)), 0.0)

    return bump(1 - s) / (bump(1 - s) + bump(s))


@dataclass(frozen=True)
class Profile:
    """Initial perturbation shapes (phi, Phi, vartheta) as functions of x3.

    ``generic`` keeps phi(0) = vartheta(0) = 0 and phi'(0) = -vartheta'(0), so the wall pressure
    gradient vanishes initially, while d3 Phi_parallel and d3 vartheta are non-zero at the wall.
    """

    kind: str = "generic"
    width: float = 1.5
    a_rho: float = 0.5
    a_temp: float = 1.0
    a_u1: float = 1.0
    a_u2: float = 0.5
    a_u3: float = 0.5
    center: float = 4.0
    wavenumber: float = 1.0

    def to_dict(self):
        return asdict(self)

    def evaluate(self, x):
        x = np.asarray(x, float)
        zero = np.zeros_like(x)
        if self.kind == "zero":
            return zero, np.stack([zero, zero, zero], -1), zero
        if self.kind == "generic":
            g = np.exp(-((x / self.width) ** 2))
            theta = self.a_temp * x * g
            phi = (-self.a_temp * x + self.a_rho * x * x) * g
            vel = np.stack([self.a_u1 * (1 + x) * g, self.a_u2 * x * g, self.a_u3 * x * g], -1)
            return phi, vel, theta
        if self.kind == "pulse":
            g = np.exp(-(((x - self.center) / self.width) ** 2))
            c = SOUND_SPEED
            # left-moving acoustic pulse: p = phi + theta, Phi3 = -p/c, entropy-free (phi = 3 theta / 2)
            p = self.a_rho * g
            theta = 0.4 * p
            return 0.6 * p, np.stack([zero, zero, -p / c], -1), theta
        if self.kind == "standing-wave":
            k = self.wavenumber
            p = self.a_rho * np.cos(k * x)
            return 0.6 * p, np.stack([zero, zero, zero], -1), 0.4 * p
        raise ValueError(f"unknown profile kind {self.kind!r}")


# ---------------------------------------------------------------- finite differences on non-uniform nodes


def _three_point(x0, x1, x2, at):
    """Weights of the derivative at ``at`` of the quadratic through x0, x1, x2."""
    w0 = (2 * at - x1 - x2) / ((x0 - x1) * (x0 - x2))
    w1 = (2 * at - x0 - x2) / ((x1 - x0) * (x1 - x2))
    w2 = (2 * at - x0 - x1) / ((x2 - x0) * (x2 - x1))
    return w0, w1, w2


def derivative(values: np.ndarray, x: np.ndarray, axis: int = -1) -> np.ndarray:
    """Second-order derivative on a non-uniform grid (central inside, one-sided at the ends)."""
    v = np.moveaxis(np.asarray(values, float), axis, -1)
    v = v - v[..., :1]  # differences of constants vanish exactly
    n = x.size
    out = np.empty_like(v)
    w0, w1, w2 = _three_point(x[:-2], x[1:-1], x[2:], x[1:-1])
    out[..., 1:-1] = w0 * v[..., :-2] + w1 * v[..., 1:-1] + w2 * v[..., 2:]
    a = _three_point(x[0], x[1], x[2], x[0])
    out[..., 0] = a[0] * v[..., 0] + a[1] * v[..., 1] + a[2] * v[..., 2]
    b = _three_point(x[n - 3], x[n - 2], x[n - 1], x[n - 1])
    out[..., -1] = b[0] * v[..., -3] + b[1] * v[..., -2] + b[2] * v[..., -1]
    return np.moveaxis(out, -1, axis)


def one_sided(values: np.ndarray, x: np.ndarray, direction: int) -> np.ndarray:
    """Second-order backward (direction=-1) or forward (+1) differences along the last axis."""
    v = np.asarray(values, float)
    v = v - v[..., :1]
    n = x.size
    out = np.empty_like(v)
    if direction < 0:
        w = _three_point(x[:-2], x[1:-1], x[2:], x[2:])
        out[..., 2:] = w[0] * v[..., :-2] + w[1] * v[..., 1:-1] + w[2] * v[..., 2:]
        c = _three_point(x[0], x[1], x[2], x[1])
        out[..., 1] = c[0] * v[..., 0] + c[1] * v[..., 1] + c[2] * v[..., 2]
        out[..., 0] = (v[..., 1] - v[..., 0]) / (x[1] - x[0])
    else:
        w = _three_point(x[:-2], x[1:-1], x[2:], x[:-2])
        out[..., :-2] = w[0] * v[..., :-2] + w[1] * v[..., 1:-1] + w[2] * v[..., 2:]
        c = _three_point(x[n - 3], x[n - 2], x[n - 1], x[n - 2])
        out[..., -2] = c[0] * v[..., -3] + c[1] * v[..., -2] + c[2] * v[..., -1]
        out[..., -1] = (v[..., -1] - v[..., -2]) / (x[-1] - x[-2])
    return out


def wall_extrapolate(values: np.ndarray, centers: np.ndarray) -> np.ndarray:
    """Value at x = 0 of the quadratic through the first three cell centres (last axis).

    Uses v0 + l1 (v1 - v0) + l2 (v2 - v0), the Lagrange form rewritten with l0 + l1 + l2 = 1.
    """
    x0, x1, x2 = centers[:3]
    l1 = x0 * x2 / ((x1 - x0) * (x1 - x2))
    l2 = x0 * x1 / ((x2 - x0) * (x2 - x1))
    v0 = values[..., 0]
    return v0 + l1 * (values[..., 1] - v0) + l2 * (values[..., 2] - v0)


def taylor_wall_coeffs(values: np.ndarray, x: np.ndarray, order: int, extra: int = 2) -> list:
    """Derivatives d^l/dx^l at x = 0 for l = 0..order from the first order+extra nodes.

    ``values`` has the node axis first. A polynomial of degree order+extra-1 is fitted exactly, so
    the l-th derivative carries an O(h^(order+extra-l)) error and is exact for such polynomials.
    """
    m = order + extra
    if x.size < m:
        raise ValueError("not enough nodes for the requested Taylor order")
    xs = x[:m]
    scale = max(float(xs[-1]), 1e-300)
    vander = np.vander(xs / scale, m, increasing=True)
    vals = np.asarray(values, float)[:m]
    coef = np.linalg.solve(vander, vals.reshape(m, -1)).reshape(vals.shape)
    return [coef[l] * math.factorial(l) / scale**l for l in range(order + 1)]


def richardson_check(func, x: np.ndarray, order: int) -> list:
    """Relative disagreement of wall derivatives between the node set and every other node."""
    full = taylor_wall_coeffs(func(x), x, order)
    coarse_x = x[::2]
    coarse = taylor_wall_coeffs(func(coarse_x), coarse_x, order)
    out = []
    for a, b in zip(full, coarse):
        denom = max(float(np.max(np.abs(a))), 1e-14)
        out.append(float(np.max(np.abs(a - b))) / denom)
    return out


# ---------------------------------------------------------------- fluid field container


@dataclass(frozen=True)
class WallTrace:
    rho: np.ndarray
    u: np.ndarray
    T: np.ndarray
    d3u: np.ndarray
    d3T: np.ndarray
    d3rho: np.ndarray
    d3p: np.ndarray
    div_u: np.ndarray
    grad_par_p: np.ndarray


@dataclass(eq=False)
class FluidField:
    """(rho, u, T) at every stored time level on ``nodes`` = [wall, cell centres]."""

    times: np.ndarray
    nodes: np.ndarray
    rho: np.ndarray
    u: np.ndarray
    T: np.ndarray
    meta: dict = field(default_factory=dict)
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0]) if self.times.size > 1 else 0.0

    def derivatives(self):
        if "d" not in self._cache:
            x = self.nodes
            self._cache["d"] = (derivative(self.rho, x), derivative(np.moveaxis(self.u, -1, 1), x).transpose(0, 2, 1), derivative(self.T, x))
        return self._cache["d"]

    def time_derivatives(self):
        """(rho_t, u_t, T_t) from the Euler equations and the stored spatial derivatives."""
        if "t" not in self._cache:
            drho, du, dT = self.derivatives()
            rho, u, T = self.rho, self.u, self.T
            u3 = u[..., 2]
            dp = T * drho + rho * dT
            rho_t = -(drho * u3 + rho * du[..., 2])
            u_t = -u3[..., None] * du
            u_t[..., 2] -= dp / rho
            T_t = -u3 * dT - (2.0 / 3.0) * T * du[..., 2]
            self._cache["t"] = (rho_t, u_t, T_t)
        return self._cache["t"]

    @property
    def wall_trace(self) -> WallTrace:
        drho, du, dT = self.derivatives()
        rho, T = self.rho[:, 0], self.T[:, 0]
        d3p = T * drho[:, 0] + rho * dT[:, 0]
        return WallTrace(rho, self.u[:, 0].copy(), T, du[:, 0].copy(), dT[:, 0], drho[:, 0], d3p, du[:, 0, 2], np.zeros((self.times.size, 2)))

    def max_gradient(self, n: int) -> float:
        drho, du, dT = self.derivatives()
        return float(max(np.max(np.abs(drho[n])), np.max(np.abs(du[n])), np.max(np.abs(dT[n]))))

    def to_csv(self, path, stride: int = 1):
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["t", "x3", "rho", "u1", "u2", "u3", "T"])
            for n in range(0, self.times.size, stride):
                for i, x in enumerate(self.nodes):
                    wr.writerow([f"{self.times[n]:.10g}", f"{x:.10g}", f"{self.rho[n, i]:.15g}", *(f"{c:.15g}" for c in self.u[n, i]), f"{self.T[n, i]:.15g}"])


# ---------------------------------------------------------------- nonlinear Euler solver


def _primitive_to_conserved(rho, u, p):
    E = 0.5 * rho * np.sum(u * u, axis=-1) + p / (GAMMA - 1)
    return np.concatenate([rho[..., None], rho[..., None] * u, E[..., None]], axis=-1)


def _conserved_to_primitive(U):
    rho = U[..., 0]
    u = U[..., 1:4] / rho[..., None]
    p = (GAMMA - 1) * (U[..., 4] - 0.5 * rho * np.sum(u * u, axis=-1))
    return rho, u, p


def _flux(rho, u, p):
    u3 = u[..., 2]
    E = 0.5 * rho * np.sum(u * u, axis=-1) + p / (GAMMA - 1)
    mom = rho[..., None] * u * u3[..., None]
    mom[..., 2] += p
    return np.concatenate([(rho * u3)[..., None], mom, ((E + p) * u3)[..., None]], axis=-1)


def _limit(a, b, limiter):
    if limiter == "none":
        return None
    if limiter == "minmod":
        return np.where(a * b > 0, np.sign(a) * np.minimum(np.abs(a), np.abs(b)), 0.0)
    raise ValueError(f"unknown limiter {limiter!r}")


def _euler_rhs(U, grid: SpatialGrid, limiter: str):
    c = grid.centers
    h = grid.widths
    rho, u, p = _conserved_to_primitive(U)
    q = np.concatenate([rho[:, None], u, p[:, None]], axis=1)  # (M, 5)
    slope = derivative(q.T, c).T
    if limiter != "none":
        back = np.empty_like(q)
        fwd = np.empty_like(q)
        back[1:] = (q[1:] - q[:-1]) / (c[1:] - c[:-1])[:, None]
        back[0] = (q[1] - q[0]) / (c[1] - c[0])
        fwd[:-1] = back[1:]
        fwd[-1] = back[-1]
        slope = _limit(back, fwd, limiter)
    left_face = q - slope * (h / 2)[:, None]  # value at face i (left side of cell i)
    right_face = q + slope * (h / 2)[:, None]  # value at face i+1
    # interior faces 1..M-1: left state from cell i-1, right state from cell i
    qL = right_face[:-1]
    qR = left_face[1:]
    # wall face: mirror of the interior trace
    qw = left_face[0].copy()
    qm = qw.copy()
    qm[3] = -qm[3]
    qL = np.vstack([qm[None], qL, right_face[-1:]])
    qR = np.vstack([qw[None], qR, right_face[-1:]])
    FL = _flux(qL[:, 0], qL[:, 1:4], qL[:, 4])
    FR = _flux(qR[:, 0], qR[:, 1:4], qR[:, 4])
    UL = _primitive_to_conserved(qL[:, 0], qL[:, 1:4], qL[:, 4])
    UR = _primitive_to_conserved(qR[:, 0], qR[:, 1:4], qR[:, 4])
    cL = np.sqrt(GAMMA * np.abs(qL[:, 4] / qL[:, 0]))
    cR = np.sqrt(GAMMA * np.abs(qR[:, 4] / qR[:, 0]))
    alpha = np.maximum(np.abs(qL[:, 3]) + cL, np.abs(qR[:, 3]) + cR)
    F = 0.5 * (FL + FR) - 0.5 * alpha[:, None] * (UR - UL)
    F[-1] = FR[-1]  # transmissive outer boundary
    return -(F[1:] - F[:-1]) / h[:, None]


def _nodes_from_cells(rho_c, u_c, T_c, centers):
    rho0 = wall_extrapolate(rho_c, centers)
    T0 = wall_extrapolate(T_c, centers)
    u0 = wall_extrapolate(u_c.T, centers)
    u0[2] = 0.0
    rho = np.concatenate([[rho0], rho_c])
    T = np.concatenate([[T0], T_c])
    u = np.vstack([u0[None], u_c])
    return rho, u, T


def solve_euler(profile: Profile, delta: float, horizon: float, grid: SpatialGrid, limiter: str = "none", ceiling: float = 1e3) -> FluidField:
    c = grid.centers
    phi, vel, theta = profile.evaluate(c)
    rho = 1 + delta * phi
    T = 1 + delta * theta
    if np.any(rho <= 0) or np.any(T <= 0):
        raise ValueError("initial density and temperature must stay positive (1 + delta*phi0 > 0, 1 + delta*theta0 > 0)")
    u = delta * vel
    U = _primitive_to_conserved(rho, u, rho * T)
    n_steps = int(math.ceil(horizon / grid.dt - 1e-9))
    dt = horizon / n_steps if n_steps else grid.dt
    speed = float(np.max(np.abs(u[:, 2]) + np.sqrt(GAMMA * T)))
    if speed * dt > grid.cfl * float(np.min(grid.widths)) * 1.5:
        raise ValueError(f"time step {dt:.3g} violates the CFL bound for initial wave speed {speed:.3g}")
    times = np.linspace(0.0, horizon, n_steps + 1)
    store_rho = np.empty((n_steps + 1, c.size + 1))
    store_u = np.empty((n_steps + 1, c.size + 1, 3))
    store_T = np.empty((n_steps + 1, c.size + 1))

    def commit(n, U):
        r, uu, p = _conserved_to_primitive(U)
        store_rho[n], store_u[n], store_T[n] = _nodes_from_cells(r, uu, p / r, c)

    commit(0, U)
    nodes = grid.nodes
    for n in range(n_steps):
        k1 = _euler_rhs(U, grid, limiter)
        U1 = U + dt * k1
        k2 = _euler_rhs(U1, grid, limiter)
        U = 0.5 * (U + U1 + dt * k2)
        commit(n + 1, U)
        if not np.all(np.isfinite(store_rho[n + 1])) or np.any(store_rho[n + 1] <= 0) or np.any(store_T[n + 1] <= 0):
            raise BlowUpError(times[n + 1], float("inf"))
        grad = max(np.max(np.abs(np.diff(store_rho[n + 1]) / np.diff(nodes))), np.max(np.abs(np.diff(store_T[n + 1]) / np.diff(nodes))), np.max(np.abs(np.diff(store_u[n + 1], axis=0) / np.diff(nodes)[:, None])))
        if grad > ceiling:
            raise BlowUpError(times[n + 1], grad)
    meta = {"delta": delta, "horizon": horizon, "limiter": limiter, "dt": dt, "cells": int(c.size), "scheme": "MUSCL-LLF-RK2"}
    return FluidField(times, nodes, store_rho, store_u, store_T, meta)


# ---------------------------------------------------------------- acoustic system


@dataclass(frozen=True)
class AcousticState:
    times: np.ndarray
    nodes: np.ndarray
    phi: np.ndarray
    Phi: np.ndarray
    theta: np.ndarray

    def energy(self) -> np.ndarray:
        dens = self.phi**2 + np.sum(self.Phi**2, axis=-1) + 1.5 * self.theta**2
        return 0.5 * np.trapezoid(dens, self.nodes, axis=-1)


def acoustic_solution(profile: Profile, t, x):
    """Exact solution of the acoustic system with Phi3 = 0 at the wall by the method of images.

    Pressure p = phi + theta and Phi3 are extended evenly/oddly and propagate as Riemann
    invariants p +- c Phi3 with c = sqrt(5/3); the entropy mode phi - 3 theta/2 and the
    tangential velocity are stationary.
    """
    t = np.asarray(t, float)
    x = np.asarray(x, float)
    c = SOUND_SPEED

    def extended(z):
        az = np.abs(z)
        phi, vel, theta = profile.evaluate(az)
        sign = np.sign(z)
        return phi + theta, sign * vel[..., 2]

    tt, xx = np.broadcast_arrays(t, x)
    pl, ul = extended(xx - c * tt)
    pr, ur = extended(xx + c * tt)
    r_plus = pl + c * ul
    r_minus = pr - c * ur
    p = 0.5 * (r_plus + r_minus)
    u3 = (r_plus - r_minus) / (2 * c)
    phi0, vel0, theta0 = profile.evaluate(xx)
    entropy = phi0 - 1.5 * theta0
    # phi - 3 theta / 2 = entropy and phi + theta = p
    theta = (p - entropy) / 2.5
    phi = p - theta
    vel = np.stack([vel0[..., 0], vel0[..., 1], u3], -1)
    return phi, vel, theta


def solve_acoustic(profile: Profile, horizon: float, grid: SpatialGrid, n_times: int | None = None) -> AcousticState:
    _, vel, _ = profile.evaluate(np.array([0.0]))
    if abs(vel[0, 2]) > TOL_BC:
        raise CompatibilityError("acoustic data must satisfy Phi3 = 0 at the wall")
    nt = n_times or int(math.ceil(horizon / grid.dt)) + 1
    times = np.linspace(0.0, horizon, nt)
    x = grid.nodes
    phi, vel, theta = acoustic_solution(profile, times[:, None], x[None, :])
    return AcousticState(times, x, phi, vel, theta)


# ---------------------------------------------------------------- linear hyperbolic system


@dataclass(eq=False)
class HyperbolicCoefficients:
    """Sources (f: (Nt, Nx, 3), g: (Nt, Nx)), wall datum d (Nt) and initial (rho, u, theta)."""

    f_src: np.ndarray
    g_src: np.ndarray
    d: np.ndarray
    init_rho: np.ndarray
    init_u: np.ndarray
    init_theta: np.ndarray
    lift_start: float = 0.5
    lift_stop: float = 1.0

    @classmethod
    def zeros(cls, euler: FluidField):
        nt, nx = euler.rho.shape
        return cls(np.zeros((nt, nx, 3)), np.zeros((nt, nx)), np.zeros(nt), np.zeros(nx), np.zeros((nx, 3)), np.zeros(nx))


@dataclass(eq=False)
class PerturbationField:
    times: np.ndarray
    nodes: np.ndarray
    rho: np.ndarray
    u: np.ndarray
    theta: np.ndarray
    energy: np.ndarray
    warnings: list = field(default_factory=list)

    def derivatives(self):
        return derivative(self.rho, self.nodes), np.moveaxis(derivative(np.moveaxis(self.u, -1, 1), self.nodes), 1, -1), derivative(self.theta, self.nodes)


def _eigen(rho, T, u3):
    cs = np.sqrt(GAMMA * T)
    R = np.empty(rho.shape + (3, 3))
    R[..., 0, :] = rho[..., None]
    R[..., 1, 0], R[..., 1, 1], R[..., 1, 2] = cs, -cs, 0.0
    R[..., 2, 0], R[..., 2, 1], R[..., 2, 2] = 2 * T, 2 * T, -3 * T
    lam = np.stack([u3 + cs, u3 - cs, u3], -1)
    return R, np.linalg.inv(R), lam


class _Background:
    def __init__(self, euler: FluidField):
        self.e = euler
        self.d = euler.derivatives()
        self.t = euler.time_derivatives()

    def level(self, n):
        e = self.e
        drho, du, dT = (a[n] for a in self.d)
        rho_t, _, T_t = (a[n] for a in self.t)
        R, L, lam = _eigen(e.rho[n], e.T[n], e.u[n, :, 2])
        return dict(rho=e.rho[n], u=e.u[n], T=e.T[n], drho=drho, du=du, dT=dT, rho_t=rho_t, T_t=T_t, R=R, L=L, lam=lam)


def _hyperbolic_rhs(U, bg, x, f, g, dprime):
    """U = (r, a, b, c, theta) on nodes, shape (5, Nx); returns dU/dt."""
    r, a, b, c, th = U
    rho, u, T = bg["rho"], bg["u"], bg["T"]
    drho, du, dT = bg["drho"], bg["du"], bg["dT"]
    u3 = u[:, 2]
    dpT = T * drho + rho * dT
    # lower-order terms
    rhs = np.empty_like(U)
    rhs[0] = -(du[:, 2] * r + drho * c)
    rhs[1] = -du[:, 0] * c + f[:, 0] / rho
    rhs[2] = -du[:, 1] * c + f[:, 1] / rho
    rhs[3] = -(du[:, 2] * c + (dT / rho - dpT / rho**2) * r + drho / (3 * rho) * th) + f[:, 2] / rho
    rhs[4] = -((2.0 / 3.0) * du[:, 2] * th + 3 * dT * c) + g / rho
    # principal part by characteristic upwinding
    Dm = one_sided(U, x, -1)
    Dp = one_sided(U, x, +1)
    for comp in (1, 2):
        rhs[comp] -= np.maximum(u3, 0) * Dm[comp] + np.minimum(u3, 0) * Dp[comp]
    R, L, lam = bg["R"], bg["L"], bg["lam"]
    sub = [0, 3, 4]
    wm = np.einsum("nij,jn->in", L, Dm[sub])
    wp = np.einsum("nij,jn->in", L, Dp[sub])
    pos = np.maximum(lam.T, 0)
    neg = np.minimum(lam.T, 0)
    pos[:, -1] = 0.0  # outer node: no information enters from outside
    adv = pos * wm + neg * wp
    adv[:, 0] = neg[:, 0] * wp[:, 0]  # wall node: only interior (outgoing) information
    rhs[sub] -= np.einsum("nij,jn->in", R, adv)
    # wall: incoming acoustic amplitude chosen so that c_t = d'
    alpha = (dprime - rhs[3, 0]) / R[0, 1, 0]
    rhs[sub, 0] += alpha * R[0, :, 0]
    return rhs


def solve_linear_hyperbolic(euler: FluidField, coeffs: HyperbolicCoefficients, growth_factor: float = 1e3) -> PerturbationField:
    """Solve the linearized Euler system for one interior order.

    The state is stored as (p, w, theta) with p = (rho theta + 3 T rho_k)/3 and w = u_k - u_d,
    where u_d = (0, 0, d chi(x3)) lifts the wall datum so that w3 = 0 at the wall.
    """
    x = euler.nodes
    nt = euler.times.size
    chi = smooth_cutoff(x, coeffs.lift_start, coeffs.lift_stop)
    if abs(coeffs.init_u[0, 2] - coeffs.d[0]) > TOL_BC:
        raise CompatibilityError(f"initial normal velocity {coeffs.init_u[0, 2]:.3e} differs from the wall datum {coeffs.d[0]:.3e}")
    bgs = _Background(euler)
    dt = euler.dt
    dprime = np.gradient(coeffs.d, euler.times) if nt > 1 else np.zeros(nt)

    def to_U(V, lvl, n):
        p, w1, w2, w3, th = V
        r = (3 * p - lvl["rho"] * th) / (3 * lvl["T"])
        return np.stack([r, w1, w2, w3 + coeffs.d[n] * chi, th])

    def dV(V, n):
        lvl = bgs.level(n)
        U = to_U(V, lvl, n)
        Ut = _hyperbolic_rhs(U, lvl, x, coeffs.f_src[n], coeffs.g_src[n], dprime[n])
        r, th = U[0], U[4]
        p_t = (lvl["rho_t"] * th + lvl["rho"] * Ut[4]) / 3 + lvl["T_t"] * r + lvl["T"] * Ut[0]
        out = np.stack([p_t, Ut[1], Ut[2], Ut[3] - dprime[n] * chi, Ut[4]])
        out[3, 0] = 0.0
        return out

    lvl0 = bgs.level(0)
    r0, u0, th0 = coeffs.init_rho, coeffs.init_u, coeffs.init_theta
    V = np.stack([(lvl0["rho"] * th0 + 3 * lvl0["T"] * r0) / 3, u0[:, 0], u0[:, 1], u0[:, 2] - coeffs.d[0] * chi, th0])
    V[3, 0] = 0.0
    out_r = np.empty((nt, x.size))
    out_u = np.empty((nt, x.size, 3))
    out_t = np.empty((nt, x.size))
    energy = np.empty(nt)

    def commit(n, V):
        lvl = bgs.level(n)
        U = to_U(V, lvl, n)
        out_r[n], out_u[n], out_t[n] = U[0], U[1:4].T, U[4]
        rho, T = lvl["rho"], lvl["T"]
        dens = rho * (T * U[0] ** 2 / rho**2 + np.sum(U[1:4] ** 2, axis=0) + U[4] ** 2 / (6 * T))
        energy[n] = 0.5 * np.trapezoid(dens, x)

    commit(0, V)
    for n in range(nt - 1):
        k1 = dV(V, n)
        V1 = V + dt * k1
        k2 = dV(V1, n + 1)
        V = 0.5 * (V + V1 + dt * k2)
        V[3, 0] = 0.0
        commit(n + 1, V)
    warn = []
    if not np.all(np.isfinite(out_r)):
        raise RuntimeError("linear hyperbolic solve produced non-finite values")
    ref = max(energy[0], 1e-300)
    if energy[0] > 0 and np.max(energy) / ref > growth_factor:
        warn.append(f"energy grew by a factor {np.max(energy) / ref:.3g}")
    return PerturbationField(euler.times, x, out_r, out_u, out_t, energy, warn)


def constant_background(grid: SpatialGrid, horizon: float, rho=1.0, u=(0.0, 0.0, 0.0), T=1.0) -> FluidField:
    n_steps = int(math.ceil(horizon / grid.dt - 1e-9))
    times = np.linspace(0.0, horizon, n_steps + 1)
    nx = grid.nodes.size
    return FluidField(times, grid.nodes, np.full((times.size, nx), rho), np.broadcast_to(np.asarray(u, float), (times.size, nx, 3)).copy(), np.full((times.size, nx), T), {"constant": True})
