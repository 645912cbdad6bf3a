"""Viscous boundary layer in the stretched variable y = x3 / eps (slab reduction).

The tangential velocity and temperature of each layer order solve a drift-diffusion system with
Neumann data at y = 0 and homogeneous Dirichlet data at y = Y_max. Normal velocity, pressure and
the microscopic part of the next layer order are derived quantities.
"""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.integrate import solve_ivp
from scipy.linalg import solve_banded

from .collision import CollisionBackend, burnett_values, collision_series, invert_L_values, operator_data, transport_values
from .euler import WallTrace, derivative
from .velocity import VelocityGrid, macro_basis

TOL_FAR = 1e-8


class LayerCompatibilityError(ValueError):
    pass


@dataclass(frozen=True)
class LayerGridSpec:
    y_max: float = 20.0
    h_wall: float = 0.01
    growth: float = 1.03
    h_max: float = 0.25

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True, eq=False)
class LayerGrid:
    y: np.ndarray
    times: np.ndarray

    @property
    def y_max(self) -> float:
        return float(self.y[-1])


def build_layer_grid(spec: LayerGridSpec, times: np.ndarray) -> LayerGrid:
    if spec.y_max < 20 - 1e-12:
        raise ValueError("the layer domain needs Y_max >= 20")
    y = [0.0]
    h = spec.h_wall
    while y[-1] < spec.y_max - 1e-12:
        y.append(y[-1] + h)
        h = min(h * spec.growth, spec.h_max)
    y = np.asarray(y)
    y *= spec.y_max / y[-1]
    return LayerGrid(y, np.asarray(times, float))


@dataclass(frozen=True, eq=False)
class LayerCoefficients:
    """Wall-frozen coefficients of the layer system at every stored time level."""

    times: np.ndarray
    rho0: np.ndarray
    T0: np.ndarray
    drift: np.ndarray  # d3 u3 at the wall (the u_{1,3} wall value vanishes)
    div_u: np.ndarray
    mu: np.ndarray
    kappa: np.ndarray

    @classmethod
    def frozen(cls, times, rho0=1.0, T0=1.0, drift=0.0, div_u=0.0, mu=1.0, kappa=5.0 / 3.0):
        n = np.asarray(times).size
        return cls(np.asarray(times, float), *(np.full(n, float(v)) for v in (rho0, T0, drift, div_u, mu, kappa)))


def layer_coefficients(trace: WallTrace, times: np.ndarray, backend: CollisionBackend, vgrid: VelocityGrid) -> LayerCoefficients:
    if backend.kind == "hard-sphere-quad":
        mu = np.empty(times.size)
        kappa = np.empty(times.size)
        for n in range(times.size):
            mu[n], kappa[n], _ = transport_values(backend, vgrid, trace.rho[n], trace.u[n], trace.T[n])
    else:
        mu, kappa, _ = transport_values(backend, vgrid, trace.rho, trace.u, trace.T)
    if np.any(mu <= 0) or np.any(kappa <= 0):
        raise ValueError("degenerate wall state: non-positive transport coefficient")
    return LayerCoefficients(np.asarray(times, float), trace.rho.copy(), trace.T.copy(), trace.d3u[:, 2].copy(), trace.div_u.copy(), np.asarray(mu), np.asarray(kappa))


@dataclass(frozen=True)
class NeumannData:
    b: np.ndarray  # (Nt, 2): d_y u_parallel at y = 0
    a: np.ndarray  # (Nt,):  d_y theta at y = 0

    @classmethod
    def zeros(cls, nt: int):
        return cls(np.zeros((nt, 2)), np.zeros(nt))

    def stacked(self) -> np.ndarray:
        return np.concatenate([self.b, self.a[:, None]], axis=1)


@dataclass(eq=False)
class LayerField:
    times: np.ndarray
    y: np.ndarray
    u: np.ndarray  # (Nt, Ny, 2)
    theta: np.ndarray  # (Nt, Ny)
    order: int
    neumann: NeumannData
    meta: dict = field(default_factory=dict)

    def stacked(self) -> np.ndarray:
        return np.concatenate([self.u, self.theta[..., None]], axis=-1)


@dataclass(eq=False)
class LayerDerived:
    rho: np.ndarray  # (Nt, Ny)
    u3: np.ndarray  # (Nt, Ny): normal velocity of the next order
    u3_wall: np.ndarray
    pressure: np.ndarray  # (Nt, Ny): pressure combination of the next order
    tail: float = 0.0
    warnings: list = field(default_factory=list)


def compatible_init(neumann: NeumannData, y: np.ndarray, amplitude=(0.0, 0.0, 0.0)) -> np.ndarray:
    """Initial layer profile alpha y e^{-y} + c e^{-y^2} whose discrete wall slope equals the datum."""
    b0 = neumann.stacked()[0]
    amp = np.asarray(amplitude, float)
    ramp = y * np.exp(-y)
    bump = np.exp(-y * y)
    w = _one_sided_weights(y)
    alpha = (b0 - amp * (w @ bump[:3])) / (w @ ramp[:3])
    prof = np.outer(ramp, alpha) + np.outer(bump, amp)
    prof[-1] = 0.0
    return prof


def _second_derivative_matrix(y: np.ndarray):
    """Tridiagonal coefficients (lower, diag, upper) of the three-point d_yy on interior nodes."""
    h = np.diff(y)
    hl, hr = h[:-1], h[1:]
    lower = 2 / (hl * (hl + hr))
    upper = 2 / (hr * (hl + hr))
    return lower, -(lower + upper), upper


def _dyy(V, coeffs):
    lower, diag, upper = coeffs
    out = np.zeros_like(V)
    out[1:-1] = lower[:, None] * V[:-2] + diag[:, None] * V[1:-1] + upper[:, None] * V[2:]
    return out


def solve_layer_parabolic(coeffs: LayerCoefficients, neumann: NeumannData, grid: LayerGrid, f_src=None, g_src=None, init=None, order: int = 1, tol_compat: float = 1e-8) -> LayerField:
    """Crank-Nicolson diffusion with a predictor-corrector treatment of drift, reaction and sources.

    Equations (per component c in (u1, u2, theta)):
        rho0 V_t + rho0 a y V_y + r_c V - D_c V_yy = S_c
    with D = (mu, mu, 3 kappa / 5), r = (0, 0, 2 rho0 div_u / 3), a = d3 u3 at the wall.
    """
    y = grid.y
    nt, ny = grid.times.size, y.size
    if coeffs.times.size != nt:
        raise ValueError("layer coefficients and layer grid use different time levels")
    dt = float(grid.times[1] - grid.times[0]) if nt > 1 else 0.0
    src = np.zeros((nt, ny, 3))
    if f_src is not None:
        src[..., :2] = f_src
    if g_src is not None:
        src[..., 2] = g_src
    data = neumann.stacked()
    if init is None:
        init = compatible_init(neumann, y)
    init = np.asarray(init, float)
    w_one = _one_sided_weights(y)
    slope0 = w_one @ init[:3]
    if np.max(np.abs(slope0 - data[0])) > tol_compat * (1 + np.max(np.abs(data[0]))):
        raise LayerCompatibilityError(f"initial layer slope {slope0} is incompatible with the Neumann datum {data[0]}")
    if np.max(np.abs(init[-1])) > TOL_FAR:
        raise LayerCompatibilityError("initial layer profile does not vanish at Y_max")
    d2 = _second_derivative_matrix(y)

    def diffusion(n):
        return np.array([coeffs.mu[n], coeffs.mu[n], 0.6 * coeffs.kappa[n]]) / coeffs.rho0[n]

    def explicit(V, n):
        a = coeffs.drift[n]
        Vy = derivative(V, y, axis=0)
        out = -a * y[:, None] * Vy
        out[:, 2] -= (2.0 / 3.0) * coeffs.div_u[n] * V[:, 2]
        return out + src[n] / coeffs.rho0[n]

    def implicit_solve(rhs, dn, bval):
        """(I - dt/2 D d_yy) V = rhs with the Neumann row at 0 and Dirichlet at Y_max."""
        out = np.empty_like(rhs)
        lower, diag, upper = d2
        for c in range(3):
            ab = np.zeros((4, ny))  # bands: upper2, upper1, diag, lower1
            ab[2, 1:-1] = 1 - 0.5 * dt * dn[c] * diag
            ab[1, 2:] = -0.5 * dt * dn[c] * upper
            ab[3, :-2] = -0.5 * dt * dn[c] * lower
            ab[2, 0], ab[1, 1], ab[0, 2] = w_one
            ab[2, -1] = 1.0
            r = rhs[:, c].copy()
            r[0] = bval[c]
            r[-1] = 0.0
            out[:, c] = solve_banded((1, 2), ab, r)
        return out

    V = init.copy()
    out = np.empty((nt, ny, 3))
    out[0] = V
    for n in range(nt - 1):
        dn, dn1 = diffusion(n), diffusion(n + 1)
        base = V + 0.5 * dt * dn * _dyy(V, d2)
        e0 = explicit(V, n)
        pred = implicit_solve(base + dt * e0, dn1, data[n + 1])
        e1 = explicit(pred, n + 1)
        V = implicit_solve(base + 0.5 * dt * (e0 + e1), dn1, data[n + 1])
        out[n + 1] = V
    if not np.all(np.isfinite(out)):
        raise RuntimeError("layer solve produced non-finite values")
    meta = _monitors(out, y, src, data, grid.times)
    return LayerField(grid.times, y, out[..., :2].copy(), out[..., 2].copy(), order, neumann, meta)


def _one_sided_weights(y):
    x0, x1, x2 = y[:3]
    w0 = (-x1 - x2) / ((x0 - x1) * (x0 - x2))
    w1 = (-x0 - x2) / ((x1 - x0) * (x1 - x2))
    w2 = (-x0 - x1) / ((x2 - x0) * (x2 - x1))
    return np.array([w0, w1, w2])


def weighted_norm(V, y, l: float = 1.0):
    """Discrete L^2_l norm with weight (1 + y)^(2 l) over the last axes (y, component)."""
    dens = np.sum(V**2, axis=-1) * (1 + y) ** (2 * l)
    return np.sqrt(np.trapezoid(dens, y, axis=-1))


def _monitors(V, y, src, data, times):
    norms = weighted_norm(V, y)
    src_norm = weighted_norm(src, y)
    dt = times[1] - times[0] if times.size > 1 else 0.0
    budget = norms[0] + np.cumsum(src_norm) * dt + np.max(np.abs(data)) + 1e-300
    half = int(np.searchsorted(y, y[-1] / 2))
    return {
        "stability_constant": float(np.max(norms / budget)),
        "contamination": float(np.max(np.abs(V[:, half]))),
        "far_value": float(np.max(np.abs(V[:, -1]))),
        "weighted_norm_final": float(norms[-1]),
    }


def steady_profile_shooting(diffusion: float, reaction: float, slope: float, y_max: float, y: np.ndarray) -> np.ndarray:
    """Steady solution of D V'' = r V on [0, y_max] with V'(0) = slope and V(y_max) = 0.

    Independent two-point boundary-value oracle: shoot from the far end with V(y_max) = 0 and a
    trial far slope, then rescale (the problem is linear) so that the wall slope matches. Marching
    inward keeps the wall-attached solution growing, which keeps the shot well conditioned.
    """

    def rhs(_, z):
        return [z[1], reaction * z[0] / diffusion]

    shot = solve_ivp(rhs, (y_max, 0.0), [0.0, 1.0], rtol=1e-12, atol=1e-20, dense_output=True, method="DOP853")
    wall_slope = shot.sol(0.0)[1]
    return slope / wall_slope * shot.sol(y)[0]


# ---------------------------------------------------------------- derived layer quantities


def _tail_estimate(g: np.ndarray, y: np.ndarray) -> float:
    """Integral beyond Y_max of an algebraically decaying integrand fitted on the last decade."""
    sel = y >= y[-1] / 10
    mag = np.max(np.abs(g[..., sel]), axis=tuple(range(g.ndim - 1))) if g.ndim > 1 else np.abs(g[sel])
    good = mag > 1e-300
    if np.count_nonzero(good) < 3:
        return 0.0
    slope, icpt = np.polyfit(np.log(y[sel][good]), np.log(mag[good]), 1)
    p = -slope
    end = math.exp(icpt) * y[-1] ** slope
    if p <= 1.0:
        return float(end * y[-1])
    return float(end * y[-1] / (p - 1))


def cumulative_from_far(g: np.ndarray, y: np.ndarray) -> np.ndarray:
    """int_y^{Y_max} g dz along the last axis (trapezoid)."""
    seg = 0.5 * (g[..., 1:] + g[..., :-1]) * np.diff(y)
    out = np.zeros_like(g)
    out[..., :-1] = np.cumsum(seg[..., ::-1], axis=-1)[..., ::-1]
    return out


def layer_density(theta: np.ndarray, pressure: np.ndarray, rho0: np.ndarray, T0: np.ndarray) -> np.ndarray:
    """rho_bar from the pressure combination p = T0 rho + rho0 theta / 3."""
    return (pressure - rho0[:, None] * theta / 3) / T0[:, None]


def derive_normal_velocity(rho_bar: np.ndarray, rho0: np.ndarray, times: np.ndarray, y: np.ndarray):
    """u_{k+1,3}(y) = int_y^inf d_t rho_bar_k / rho0 dz (slab: no tangential divergence)."""
    if times.size > 2:
        rho_t = np.gradient(rho_bar, times, axis=0, edge_order=2)
    else:
        rho_t = np.zeros_like(rho_bar)
    integrand = rho_t / rho0[:, None]
    u3 = cumulative_from_far(integrand, y)
    tail = _tail_estimate(integrand, y)
    return u3, u3[:, 0].copy(), tail, integrand


def derive_pressure(coeffs: LayerCoefficients, u3: np.ndarray, y: np.ndarray, J_A33=None) -> np.ndarray:
    """p_{k+1} from the normal momentum balance, integrated from Y_max where it vanishes."""
    rho0 = coeffs.rho0[:, None]
    a = coeffs.drift[:, None]
    times = coeffs.times
    u3_t = np.gradient(u3, times, axis=0, edge_order=2) if times.size > 2 else np.zeros_like(u3)
    dy = derivative(a * y * u3, y)
    rhs = -rho0 * u3_t + rho0 * a * u3 - (4.0 / 3.0) * rho0 * dy + (4.0 / 3.0) * coeffs.mu[:, None] * derivative(derivative(u3, y), y)
    if J_A33 is not None:
        rhs = rhs - coeffs.T0[:, None] * derivative(J_A33, y)
    return -cumulative_from_far(rhs, y)


def wall_moments(vgrid: VelocityGrid, rho, u, T, g: np.ndarray):
    """(<T A_3i, g> for i = 1, 2 ; <2 T^{3/2} B_3, g>) for micro functions g (..., N)."""
    A, B = burnett_values(vgrid, rho, u, T)
    T = np.asarray(T, float)
    a = np.stack([vgrid.inner(A[..., 2, i, :], g) for i in range(2)], -1) * T[..., None]
    b = 2 * T**1.5 * vgrid.inner(B[..., 2, :], g)
    return a, b


def wall_flux_matrix(vgrid: VelocityGrid, backend: CollisionBackend, rho, u, T) -> np.ndarray:
    """Discrete wall fluxes W (..., 3, 4) of unit layer gradients.

    Column b holds the wall moments (``wall_moments``) of L0^{-1}(I - P0)[v3 e_b] for the
    macroscopic directions e_b = d/du_1, d/du_2, d/dtheta, d/du_3 of ``macro_from_fluid``. With
    exact quadrature the first three columns are diag(mu, mu, kappa) and the last one vanishes;
    on a truncated grid they carry the quadrature error, and using them keeps the layer and
    interior wall moments cancelling exactly.
    """
    rho, u, T = np.asarray(rho, float), np.asarray(u, float), np.asarray(T, float)
    basis = macro_basis(vgrid, rho, u, T)
    op = operator_data(backend, vgrid, rho, u, T)
    z = np.zeros_like(rho)
    cols = []
    for b in range(4):
        uu = np.zeros(rho.shape + (3,))
        if b in (0, 1):
            uu[..., b] = 1.0
        elif b == 3:
            uu[..., 2] = 1.0
        th = z + (1.0 if b == 2 else 0.0)
        drive = basis.micro(vgrid.v3 * basis.macro_from_fluid(z, uu, th))
        h, _, _ = invert_L_values(op, drive, backend, check=False)
        a, bb = wall_moments(vgrid, rho, u, T, h)
        cols.append(np.concatenate([a, bb[..., None]], axis=-1))
    return np.stack(cols, axis=-1)


def neumann_from_matching(coeffs: LayerCoefficients, interior_a: np.ndarray, interior_b: np.ndarray, J_a=None, J_b=None, u3_prev=None, slip_u=None, slip_theta=None, knudsen_b=None, knudsen_c=None, flux=None, du3=None) -> NeumannData:
    """Neumann data of a layer order from the wall solvability conditions.

    ``interior_a`` / ``interior_b`` are <T A_3i, (I-P) f_k> and <2 T^{3/2} B_3, (I-P) f_k> at the
    wall; ``J_a`` / ``J_b`` the same moments of the lower-order layer source J; ``u3_prev`` the
    wall normal velocity of the layer order being closed, multiplied by the tangential slip
    ``slip_u = u_{1,parallel} + u_bar_{1,parallel}`` and ``slip_theta = theta_1 + theta_bar_1``.
    ``flux`` (Nt, 3, 4) from ``wall_flux_matrix`` replaces diag(mu, mu, kappa) by the discrete
    wall fluxes; ``du3`` is then the wall slope of this order's normal layer velocity.
    """
    if np.any(coeffs.mu <= 0) or np.any(coeffs.kappa <= 0):
        raise ValueError("zero transport coefficient at the wall")
    nt = coeffs.times.size
    rho0, T0 = coeffs.rho0, coeffs.T0
    num_u = np.array(interior_a, float).reshape(nt, 2)
    num_t = np.array(interior_b, float).reshape(nt)
    if J_a is not None:
        num_u = num_u + J_a
        num_t = num_t + J_b
    if u3_prev is not None:
        num_u = num_u + rho0[:, None] * slip_u * u3_prev[:, None]
        num_t = num_t + (5.0 / 3.0) * rho0 * slip_theta * u3_prev
    if knudsen_b is not None:
        num_u = num_u + rho0[:, None] * T0[:, None] ** 2 * knudsen_b
    if knudsen_c is not None:
        num_t = num_t + 10 * rho0 * T0**3 * knudsen_c
    if flux is None:
        return NeumannData(num_u / coeffs.mu[:, None], num_t / coeffs.kappa)
    rhs = np.concatenate([num_u, num_t[:, None]], axis=1)
    if du3 is not None:
        rhs = rhs - flux[..., 3] * np.asarray(du3, float)[:, None]
    slope = np.linalg.solve(flux[..., :3], rhs[..., None])[..., 0]
    return NeumannData(slope[:, :2], slope[:, 2])


def assemble_sources(coeffs: LayerCoefficients, y: np.ndarray, u3: np.ndarray, lift_u: np.ndarray, lift_theta: np.ndarray, J_a=None, J_b=None, pressure=None):
    """Parabolic sources of a layer order in the slab reduction.

    ``lift_u`` = d3 u0_i y + u_{1,i}(wall) + u_bar_{1,i} (Nt, Ny, 2), ``lift_theta`` the analogous
    temperature combination, ``u3`` the normal layer velocity of this order, ``J_a`` / ``J_b``
    the moments <J, A_3i> and <J, B_3> of the lower-order layer source, ``pressure`` this order's
    pressure combination. Tangential derivatives vanish, so the W and H terms drop out.
    """
    rho0 = coeffs.rho0[:, None]
    T0 = coeffs.T0[:, None]
    f = -rho0[..., None] * derivative(lift_u * u3[..., None], y, axis=1)
    g = -rho0 * derivative(lift_theta * u3, y)
    if J_a is not None:
        f = f - T0[..., None] * derivative(J_a, y, axis=1)
        g = g - 1.2 * T0**1.5 * derivative(J_b, y)
    if pressure is not None and np.any(pressure):
        times = coeffs.times
        p_t = np.gradient(pressure, times, axis=0, edge_order=2)
        g = g + 0.6 * (2 * p_t + (10.0 / 3.0) * coeffs.div_u[:, None] * pressure)
    return f, g


# ---------------------------------------------------------------- layer kinetics through the collision series


@dataclass(eq=False)
class WallSeries:
    """F-space Taylor coefficients at the wall: ``mu[l]`` = d3^l mu and ``F[i][l]`` = d3^l F_i
    (arrays (Nt, N)), together with the wall state."""

    mu: list
    F: dict
    rho: np.ndarray
    u: np.ndarray
    T: np.ndarray

    @property
    def order(self) -> int:
        return len(self.mu) - 1


class LayerKinetics:
    """Kinetic content of the viscous layer at one time level.

    The layer collision term at order n is the n-th Taylor coefficient in s of
    Q(G(s)) - Q(H(s)) where G collects the wall Taylor series of the interior plus the layer
    terms and H the interior series alone, truncated at the configured Taylor order.
    """

    def __init__(self, vgrid: VelocityGrid, backend: CollisionBackend, wall: WallSeries, y: np.ndarray):
        self.vgrid = vgrid
        self.backend = backend
        self.wall = wall
        self.y = y

    def state(self, n):
        w = self.wall
        return w.rho[n], w.u[n], w.T[n]

    def macro(self, n, rho_bar, u_bar, theta_bar):
        """F-space macroscopic layer term sqrt(mu0) P0 f_bar at level n on the y grid."""
        rho, u, T = self.state(n)
        basis = macro_basis(self.vgrid, rho, u, T)
        return basis.macro_from_fluid(rho_bar, u_bar, theta_bar) * basis.sqrt_mu

    def interior_series(self, n, upto):
        """Coefficients H_0..H_upto of the interior wall Taylor series in (s, y)."""
        w = self.wall
        y = self.y[:, None]
        b = w.order
        terms = [np.broadcast_to(w.mu[0][n], (self.y.size, self.vgrid.size)).copy()]
        for m in range(1, upto + 1):
            acc = np.zeros((self.y.size, self.vgrid.size))
            # y^l / l! d3^l mu for l = m, and y^l / l! d3^l F_i for i + l = m
            if m <= b:
                acc += y**m / math.factorial(m) * w.mu[m][n]
            for i, coefs in w.F.items():
                l = m - i
                if 0 <= l <= b and l < len(coefs):
                    acc += y**l / math.factorial(l) * coefs[l][n]
            terms.append(acc)
        return terms

    def collision_difference(self, n, layer_terms, order):
        """coef_order of Q(G) - Q(H) with G = H + layer terms (layer_terms[j] for j >= 1)."""
        H = self.interior_series(n, order)
        G = [H[0]] + [H[j] + (layer_terms[j] if j < len(layer_terms) and layer_terms[j] is not None else 0.0) for j in range(1, order + 1)]
        rho, u, T = self.state(n)
        shape = (self.y.size,)
        base = (np.full(shape, rho), np.broadcast_to(u, shape + (3,)).copy(), np.full(shape, T))
        qg = collision_series(G, self.vgrid, self.backend, base, order)[order]
        qh = collision_series(H, self.vgrid, self.backend, base, order)[order]
        return qg - qh

    def solve_micro(self, n, forcing):
        """(I - P0) L0^{-1} (I - P0)[forcing / sqrt(mu0)] at level n, f-space, on the y grid."""
        rho, u, T = self.state(n)
        op = operator_data(self.backend, self.vgrid, rho, u, T)
        g = op.basis.micro(forcing / op.basis.sqrt_mu)
        h, _, _ = invert_L_values(op, g, self.backend, check=False)
        return h, op.basis

    def micro_next(self, n, layer_terms, order, dt_prev=None, dy_current=None):
        """(I - P0) f_bar_order at level n from the layer hierarchy.

        ``layer_terms`` are F-space layer terms F_bar_1.. (entries may be None); ``dt_prev`` the
        F-space time derivative of F_bar_{order-2}; ``dy_current`` the F-space y-derivative of
        the F_bar_{order-1} term being transported.
        """
        N = self.collision_difference(n, layer_terms, order)
        forcing = N.copy()
        if dt_prev is not None:
            forcing -= dt_prev
        if dy_current is not None:
            forcing -= self.vgrid.v3 * dy_current
        h, basis = self.solve_micro(n, forcing)
        return h


def macro_profile_series(kin: LayerKinetics, n, rho_bar, u_bar, theta_bar):
    """F-space macro layer term and its y derivative at level n."""
    F = kin.macro(n, rho_bar, u_bar, theta_bar)
    y = kin.y
    dF = kin.macro(n, derivative(rho_bar, y), derivative(u_bar, y, axis=0), derivative(theta_bar, y))
    return F, dF


def write_layer_csv(path, field: LayerField, derived: LayerDerived | None = None, stride: int = 1):
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["t", "x_par_index", "y", "u_bar1", "u_bar2", "theta_bar", "u_bar3", "p_bar"])
        for n in range(0, field.times.size, stride):
            for j, yy in enumerate(field.y):
                u3 = derived.u3[n, j] if derived is not None else 0.0
                p = derived.pressure[n, j] if derived is not None else 0.0
                wr.writerow([f"{field.times[n]:.10g}", 0, f"{yy:.10g}", f"{field.u[n, j, 0]:.15g}", f"{field.u[n, j, 1]:.15g}", f"{field.theta[n, j]:.15g}", f"{u3:.15g}", f"{p:.15g}"])
