"""Interior Hilbert orders: kinetic content F_k on a set of points and the hyperbolic closure of
their macroscopic parts.

The microscopic part of F_k solves
    L f_k^micro = (I - P)[N_k - (d_t + v3 d_3) F_{k-2}] / sqrt(mu),
with N_k the k-th Taylor coefficient of Q(mu + s F_1 + ... + s^{k-1} F_{k-1}). Spatial derivatives
are second-order differences on the sampling points, time derivatives central differences over
stored levels; the transport of mu itself goes through the Maxwellian tangent so that its
microscopic part is exactly the Burnett combination of the discrete gradients.
"""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicSpline

from .collision import CollisionBackend, burnett_values, collision_series, invert_L_values, operator_data, tangent
from .euler import FluidField, HyperbolicCoefficients, PerturbationField, derivative, smooth_cutoff, solve_linear_hyperbolic
from .velocity import VelocityGrid, macro_basis


def time_difference(values_at, n: int, nt: int, dt: float):
    """Second-order difference in time at level n of a level-indexed quantity."""
    if nt < 3:
        return np.zeros_like(values_at(n))
    if n == 0:
        return (-3 * values_at(0) + 4 * values_at(1) - values_at(2)) / (2 * dt)
    if n == nt - 1:
        return (3 * values_at(n) - 4 * values_at(n - 1) + values_at(n - 2)) / (2 * dt)
    return (values_at(n + 1) - values_at(n - 1)) / (2 * dt)


class FieldSampler:
    """Macroscopic interior fields (background and orders) at a fixed set of points x."""

    def __init__(self, euler: FluidField, orders: dict | None = None, points: np.ndarray | None = None, prefix: int | None = None):
        self.euler = euler
        self.orders = orders if orders is not None else {}
        if points is None:
            stop = euler.nodes.size if prefix is None else prefix
            self.index = slice(0, stop)
            self.points = euler.nodes[self.index]
            self.spline = False
        else:
            self.points = np.asarray(points, float)
            if self.points[0] < 0 or self.points[-1] > euler.nodes[-1] + 1e-12:
                raise ValueError("sampling points outside the fluid domain")
            self.spline = True
        self._cache = OrderedDict()

    @property
    def times(self):
        return self.euler.times

    @property
    def size(self):
        return self.points.size

    def _columns(self, n):
        e = self.euler
        cols = [e.rho[n][:, None], e.u[n], e.T[n][:, None]]
        for k in sorted(self.orders):
            o = self.orders[k]
            cols += [o.rho[n][:, None], o.u[n], o.theta[n][:, None]]
        return np.concatenate(cols, axis=1)

    def _level(self, n):
        if n not in self._cache:
            cols = self._columns(n)
            vals = CubicSpline(self.euler.nodes, cols, axis=0)(self.points) if self.spline else cols[self.index]
            self._cache[n] = vals
            if len(self._cache) > 16:
                self._cache.popitem(last=False)
        return self._cache[n]

    def state(self, n):
        v = self._level(n)
        return v[:, 0], v[:, 1:4], v[:, 4]

    def order(self, k, n):
        if k not in self.orders:
            z = np.zeros(self.size)
            return z, np.zeros((self.size, 3)), z.copy()
        j = 5 + 5 * sorted(self.orders).index(k)
        v = self._level(n)
        return v[:, j], v[:, j + 1 : j + 4], v[:, j + 4]

    def add_order(self, k, pert: PerturbationField):
        self.orders[k] = pert
        self._cache.clear()


class InteriorKinetics:
    """F_k, (I-P) f_k and transport terms on the sampler's points, cached per level."""

    def __init__(self, vgrid: VelocityGrid, backend: CollisionBackend, sampler: FieldSampler, cache_size: int = 24):
        if not backend.constant_bgk:
            raise ValueError("interior kinetics need a constant-frequency collision model")
        self.vgrid = vgrid
        self.backend = backend
        self.sampler = sampler
        self.times = sampler.times
        self.dt = float(self.times[1] - self.times[0]) if self.times.size > 1 else 0.0
        self._cache = OrderedDict()
        self.cache_size = cache_size

    def _memo(self, key, build):
        if key in self._cache:
            self._cache.move_to_end(key)
            return self._cache[key]
        val = build()
        self._cache[key] = val
        if len(self._cache) > self.cache_size:
            self._cache.popitem(last=False)
        return val

    def clear(self):
        self._cache.clear()

    def basis(self, n):
        return self._memo(("basis", n), lambda: macro_basis(self.vgrid, *self.sampler.state(n)))

    def mu(self, n):
        b = self.basis(n)
        return b.sqrt_mu**2

    def state_derivatives(self, n):
        """(d_t, d_3) of (rho, u, T) at level n as (P, 5) arrays."""

        def pack(level):
            rho, u, T = self.sampler.state(level)
            return np.concatenate([rho[:, None], u, T[:, None]], axis=1)

        def build():
            dt = time_difference(pack, n, self.times.size, self.dt)
            dx = derivative(pack(n), self.sampler.points, axis=0)
            return dt, dx

        return self._memo(("dstate", n), build)

    def F(self, k, n):
        """F-space value of F_k at level n, shape (P, N)."""
        if k == 0:
            return self.mu(n)

        def build():
            b = self.basis(n)
            f = b.macro_from_fluid(*self.sampler.order(k, n))
            if k >= 2:
                f = f + self.micro(k, n)
            return f * b.sqrt_mu

        return self._memo(("F", k, n), build)

    def transport(self, k, n):
        """(d_t + v3 d_3) F_k at level n."""

        def build():
            if k == 0:
                rho, u, T = self.sampler.state(n)
                tan = tangent(self.vgrid, rho, u, T)
                dt, dx = self.state_derivatives(n)
                rate = dt[:, :, None] + self.vgrid.v3 * dx[:, :, None]  # (P, 5, N)
                return np.einsum("pqn,pqn->pn", tan.d, rate)
            ft = time_difference(lambda m: self.F(k, m), n, self.times.size, self.dt)
            return ft + self.vgrid.v3 * derivative(self.F(k, n), self.sampler.points, axis=0)

        return self._memo(("T", k, n), build)

    def nonlinear(self, k, n):
        """N_k: k-th coefficient of Q over the known orders F_0..F_{k-1}."""
        terms = [self.F(j, n) for j in range(k)]
        return collision_series(terms, self.vgrid, self.backend, self.sampler.state(n), k)[k]

    def micro(self, k, n):
        """(I - P) f_k at level n (f-space), zero for k <= 1."""
        if k <= 1:
            return np.zeros((self.sampler.size, self.vgrid.size))

        def build():
            b = self.basis(n)
            forcing = self.nonlinear(k, n) - self.transport(k - 2, n)
            g = b.micro(forcing / b.sqrt_mu)
            op = operator_data(self.backend, self.vgrid, *self.sampler.state(n))
            h, _, _ = invert_L_values(op, g, self.backend, check=False)
            return b.micro(h)

        return self._memo(("micro", k, n), build)


def burnett_form_f2(vgrid: VelocityGrid, backend: CollisionBackend, rho, u, T, du, dT, u1, theta1) -> np.ndarray:
    """Closed Burnett form of (I - P) f_2 in the slab (only d_3 derivatives survive).

    -L^{-1}{sum_l d3 u_l A_3l + d3 T / sqrt(T) B_3} + u1_l u1_j A_lj / (2T) + theta1 u1.B / (3 T^{3/2})
    + theta1^2 / (72 T^2) (I - P)[(|w|^2/T - 5)^2 sqrt(mu)].
    """
    rho, u, T = np.asarray(rho, float), np.asarray(u, float), np.asarray(T, float)
    A, B = burnett_values(vgrid, rho, u, T)
    basis = macro_basis(vgrid, rho, u, T)
    op = operator_data(backend, vgrid, rho, u, T)
    t = T[..., None]
    drive = np.einsum("...l,...ln->...n", du, A[..., 2, :, :]) + (dT / np.sqrt(T))[..., None] * B[..., 2, :]
    lin, _, _ = invert_L_values(op, basis.micro(drive), backend, check=False)
    quad = np.einsum("...l,...j,...ljn->...n", u1, u1, A) / (2 * t)
    quad = quad + (np.asarray(theta1)[..., None] / (3 * t**1.5)) * np.einsum("...i,...in->...n", u1, B)
    w, w2 = basis.shifted()
    extra = basis.micro((w2 / t - 5) ** 2 * basis.sqrt_mu)
    quad = quad + (np.asarray(theta1) ** 2)[..., None] / (72 * t * t) * extra
    return basis.micro(-lin + quad)


@dataclass(eq=False)
class InteriorOrder:
    k: int
    field: PerturbationField
    wall_datum: np.ndarray
    f_src: np.ndarray
    g_src: np.ndarray
    source_norm: float
    warnings: list = field(default_factory=list)


def interior_sources(kin: InteriorKinetics, k: int):
    """Sources (f, g) of the order-k linear system from the Burnett moments of (I - P) f_k."""
    sampler = kin.sampler
    nt = kin.times.size
    P = sampler.size
    f_src = np.zeros((nt, P, 3))
    g_src = np.zeros((nt, P))
    if k <= 1:
        return f_src, g_src
    x = sampler.points
    vg = kin.vgrid
    for n in range(nt):
        g = kin.micro(k, n)
        rho, u, T = sampler.state(n)
        A, B = burnett_values(vg, rho, u, T)
        a = np.stack([vg.inner(A[:, i, 2, :], g) for i in range(3)], axis=1) * T[:, None]
        b = 2 * T**1.5 * vg.inner(B[:, 2, :], g) + 2 * np.einsum("pj,pj->p", u, a)
        f = -derivative(a, x, axis=0)
        f_src[n] = f
        g_src[n] = -derivative(b, x) - 2 * np.einsum("pi,pi->p", u, f)
    return f_src, g_src


def compatible_interior_init(nodes: np.ndarray, datum0: float, lift=(0.5, 1.0)):
    """Zero density/temperature and a normal velocity d(0) chi(x) matching the wall datum."""
    u = np.zeros((nodes.size, 3))
    u[:, 2] = datum0 * smooth_cutoff(nodes, *lift)
    return np.zeros(nodes.size), u, np.zeros(nodes.size)


def build_interior_order(euler: FluidField, kin: InteriorKinetics, k: int, wall_datum: np.ndarray, init=None, source_bound: float = 1e6) -> InteriorOrder:
    """Solve for (rho_k, u_k, theta_k); ``kin`` samples the full fluid node set with orders < k."""
    if kin.sampler.spline or kin.sampler.size != euler.nodes.size:
        raise ValueError("interior orders are built on the full fluid node set")
    f_src, g_src = interior_sources(kin, k)
    warn = []
    snorm = float(max(np.max(np.abs(f_src)), np.max(np.abs(g_src)))) if f_src.size else 0.0
    if snorm > source_bound:
        warn.append(f"order {k} source magnitude {snorm:.3g} exceeds the configured bound")
    d = np.asarray(wall_datum, float)
    if init is None:
        init = compatible_interior_init(euler.nodes, float(d[0]))
    coeffs = HyperbolicCoefficients(f_src, g_src, d, *init)
    pert = solve_linear_hyperbolic(euler, coeffs)
    return InteriorOrder(k, pert, d, f_src, g_src, snorm, warn + list(pert.warnings))
