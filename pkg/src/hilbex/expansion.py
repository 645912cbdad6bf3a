"""Order-by-order construction of the three-scale Hilbert expansion in the slab.

Each order k consists of an interior term F_k(t, x3), a viscous-layer term F_bar_k(t, x3/eps)
and a Knudsen-layer term F_hat_k(t, x3/eps^2). The interior is built first (its wall datum comes
from the previous layer order), then the layer (Neumann data from the wall solvability
conditions), then the Knudsen problem driven by the remaining specular mismatch.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.interpolate import PchipInterpolator

from .collision import CollisionBackend, burnett_values, discrete_maxwellian
from .euler import FluidField, MeshSpec, Profile, acoustic_solution, build_spatial_grid, derivative, solve_euler, taylor_wall_coeffs
from .interior import FieldSampler, InteriorKinetics, InteriorOrder, build_interior_order, compatible_interior_init, time_difference
from .knudsen import (
    ETA_STEP,
    H_MAX,
    CorrectionFields,
    HalfSpaceProblem,
    SolvabilityError,
    boundary_mismatch,
    boundary_moments,
    eta_grid,
    solve_halfspace,
)
from .layer import (
    LayerDerived,
    LayerField,
    LayerGridSpec,
    LayerKinetics,
    NeumannData,
    WallSeries,
    assemble_sources,
    build_layer_grid,
    compatible_init,
    derive_normal_velocity,
    layer_coefficients,
    layer_density,
    neumann_from_matching,
    wall_flux_matrix,
    solve_layer_parabolic,
    wall_moments,
)
from .velocity import GridSpec, build_grid, macro_basis, maxwellian_values

log = logging.getLogger(__name__)

MAX_ORDER = 2
TOL_MATCH = 1e-6
TOL_ZERO = 1e-14
PREFIX = 6


class MatchingError(RuntimeError):
    """Specular matching or solvability failed; carries the measured defects."""

    def __init__(self, message: str, details: dict):
        super().__init__(f"{message}: {details}")
        self.details = details


@dataclass(frozen=True)
class ExpansionConfig:
    N: int = 2
    taylor_order: int = 2
    epsilons: tuple = (0.1, 0.05, 0.025)
    delta: float = 0.1
    horizon: float = 0.5
    profile: Profile = Profile()
    mesh: MeshSpec = MeshSpec()
    layer_mesh: LayerGridSpec = LayerGridSpec()
    velocity: GridSpec = GridSpec()
    backend: CollisionBackend = field(default_factory=CollisionBackend)
    eta_max: float = H_MAX
    eta_step: float = ETA_STEP
    knudsen_method: str = "krylov"
    interior_init: float = 0.0
    layer_init: float = 0.0
    eval_fractions: tuple = (0.25, 0.5, 0.75)
    collar: int = 2
    tol_match: float = TOL_MATCH

    def __post_init__(self):
        if self.N < 1:
            raise ValueError("N must be at least 1")
        if self.N > MAX_ORDER:
            raise ValueError(f"N = {self.N} is not supported: orders above {MAX_ORDER} need the Knudsen correction at every time level")
        if self.taylor_order < 1:
            raise ValueError("taylor_order must be at least 1")
        eps = tuple(float(e) for e in self.epsilons)
        if not eps or any(e <= 0 for e in eps) or any(a <= b for a, b in zip(eps, eps[1:])):
            raise ValueError("epsilons must be positive and strictly decreasing")
        object.__setattr__(self, "epsilons", eps)
        if not self.delta > 0:
            raise ValueError("delta must be positive")
        if not self.horizon > 0:
            raise ValueError("horizon must be positive")
        if not self.backend.constant_bgk:
            raise ValueError("the expansion pipeline needs the bgk model with constant collision frequency")
        if any(not 0 < f < 1 for f in self.eval_fractions):
            raise ValueError("evaluation fractions must lie strictly inside (0, 1)")
        if self.collar < 0:
            raise ValueError("collar must be non-negative")

    def to_dict(self) -> dict:
        return {
            "N": self.N,
            "taylor_order": self.taylor_order,
            "epsilons": list(self.epsilons),
            "delta": self.delta,
            "horizon": self.horizon,
            "profile": self.profile.to_dict(),
            "mesh": self.mesh.to_dict(),
            "layer_mesh": self.layer_mesh.to_dict(),
            "velocity": self.velocity.to_dict(),
            "backend": self.backend.to_dict(),
            "eta_max": self.eta_max,
            "eta_step": self.eta_step,
            "knudsen_method": self.knudsen_method,
            "interior_init": self.interior_init,
            "layer_init": self.layer_init,
            "eval_fractions": list(self.eval_fractions),
            "collar": self.collar,
            "tol_match": self.tol_match,
        }


@dataclass(eq=False)
class OrderBundle:
    """One order of the expansion: interior, viscous layer, Knudsen layer and matching data."""

    k: int
    interior: InteriorOrder
    layer: LayerField
    layer_rho: np.ndarray  # (Nt, Ny)
    layer_u3: np.ndarray  # (Nt, Ny)
    layer_pressure: np.ndarray  # (Nt, Ny)
    derived: LayerDerived  # normal velocity of order k + 1
    neumann: NeumannData
    wall_datum: np.ndarray
    knudsen: dict  # level -> KnudsenSolution
    correction: CorrectionFields
    solvability: np.ndarray  # (Nt, 4) wall moments of g_hat_k
    mismatch: dict  # level -> specular mismatch of the full triple
    warnings: list = field(default_factory=list)

    @property
    def max_mismatch(self) -> float:
        return max(self.mismatch.values()) if self.mismatch else 0.0

    def summary(self) -> dict:
        return {
            "order": self.k,
            "wall_datum_max": float(np.max(np.abs(self.wall_datum))),
            "interior_max": {"rho": float(np.max(np.abs(self.interior.field.rho))), "u": float(np.max(np.abs(self.interior.field.u))), "theta": float(np.max(np.abs(self.interior.field.theta)))},
            "layer_max": {"u": float(np.max(np.abs(self.layer.u))), "theta": float(np.max(np.abs(self.layer.theta))), "u3": float(np.max(np.abs(self.layer_u3))), "pressure": float(np.max(np.abs(self.layer_pressure)))},
            "layer_monitors": self.layer.meta,
            "neumann_max": float(np.max(np.abs(self.neumann.stacked()))),
            "solvability_moments_max": [float(v) for v in np.max(np.abs(self.solvability), axis=0)],
            "knudsen": {str(n): s.report() for n, s in sorted(self.knudsen.items())},
            "wall_mismatch": {str(n): float(v) for n, v in sorted(self.mismatch.items())},
            "warnings": list(self.warnings),
        }


class Expansion:
    """Builds the orders 1..N for one Euler background and evaluates the composite."""

    def __init__(self, config: ExpansionConfig, euler: FluidField | None = None):
        self.config = config
        self.vgrid = build_grid(config.velocity.radius, config.velocity.n_per_axis, config.velocity.scheme)
        self.backend = config.backend
        if euler is None:
            grid = build_spatial_grid(config.mesh)
            euler = solve_euler(config.profile, config.delta, config.horizon, grid)
        self.euler = euler
        self.times = euler.times
        self.nt = self.times.size
        if self.nt < 5:
            raise ValueError("the expansion needs at least five stored time levels")
        self.dt = euler.dt
        self.trace = euler.wall_trace
        self.coeffs = layer_coefficients(self.trace, self.times, self.backend, self.vgrid)
        self.flux = wall_flux_matrix(self.vgrid, self.backend, self.trace.rho, self.trace.u, self.trace.T)
        self.layer_grid = build_layer_grid(config.layer_mesh, self.times)
        self.y = self.layer_grid.y
        self.eta = eta_grid(config.eta_max, config.eta_step)
        self.full = FieldSampler(euler, {})
        self.wall_sampler = FieldSampler(euler, {}, prefix=max(PREFIX, config.taylor_order + 3))
        self.full_kin = InteriorKinetics(self.vgrid, self.backend, self.full)
        self.wall_kin = InteriorKinetics(self.vgrid, self.backend, self.wall_sampler, cache_size=64)
        self.bundles: list[OrderBundle] = []
        self.eval_levels = sorted({min(max(int(round(f * (self.nt - 1))), 1), self.nt - 2) for f in config.eval_fractions})
        self.knudsen_levels = sorted({m for n in self.eval_levels for m in (n - 1, n, n + 1)})
        self._wall_series = None
        self._layer_micro = {}
        self._micro_wall = {}

    # ------------------------------------------------------------ wall data

    def wall_state(self, n):
        return self.trace.rho[n], self.trace.u[n], self.trace.T[n]

    def sqrt_mu0(self, n):
        return np.sqrt(maxwellian_values(self.vgrid, *self.wall_state(n)))

    def wall_series(self) -> WallSeries:
        """Taylor coefficients at the wall of mu and of the interior orders built so far."""
        if self._wall_series is None:
            b = self.config.taylor_order
            x = self.wall_sampler.points
            mu = [np.empty((self.nt, self.vgrid.size)) for _ in range(b + 1)]
            F = {k: [np.empty((self.nt, self.vgrid.size)) for _ in range(b - k + 1)] for k in range(1, len(self.bundles) + 1) if b - k >= 0}
            for n in range(self.nt):
                for l, c in enumerate(taylor_wall_coeffs(self.wall_kin.F(0, n), x, b)):
                    mu[l][n] = c
                for k, coefs in F.items():
                    for l, c in enumerate(taylor_wall_coeffs(self.wall_kin.F(k, n), x, b - k)):
                        coefs[l][n] = c
            self._wall_series = WallSeries(mu, F, self.trace.rho, self.trace.u, self.trace.T)
        return self._wall_series

    def _register_interior(self, k, order: InteriorOrder):
        for s in (self.full, self.wall_sampler):
            s.add_order(k, order.field)
        self.full_kin.clear()
        self.wall_kin.clear()
        self._wall_series = None

    def interior_wall_micro(self, k) -> np.ndarray:
        """(I - P) f_k at the wall for every level, f-space (Nt, N)."""
        return np.stack([self.wall_kin.micro(k, n)[0] for n in range(self.nt)])

    def interior_wall_values(self, k, n) -> np.ndarray:
        basis = self.wall_kin.basis(n)
        return self.wall_kin.F(k, n)[0] / basis.sqrt_mu[0]

    # ------------------------------------------------------------ layer kinetic content

    def _layer_fields(self, k):
        b = self.bundles[k - 1]
        u = np.concatenate([b.layer.u, b.layer_u3[..., None]], axis=-1)
        return b.layer_rho, u, b.layer.theta

    def layer_macro(self, kin: LayerKinetics, k, n, fields=None):
        rho, u, theta = fields if fields is not None else self._layer_fields(k)
        return kin.macro(n, rho[n], u[n], theta[n])

    def layer_micro2(self, kin: LayerKinetics, n):
        """F-space (I - P0) F_bar_2 at level n on the layer grid."""
        if n not in self._layer_micro:
            F1 = self.layer_macro(kin, 1, n)
            h = kin.micro_next(n, [None, F1], 2, dy_current=derivative(F1, self.y, axis=0))
            self._layer_micro[n] = h * self.sqrt_mu0(n)
            self._micro_wall[n] = self._layer_micro[n][0].copy()
        return self._layer_micro[n]

    def layer_J(self, kin: LayerKinetics, n):
        """J_bar_1 at level n on the layer grid (f-space): order-3 layer formula without P0 F_bar_2."""
        F1 = lambda m: self.layer_macro(kin, 1, m)
        micro = self.layer_micro2(kin, n)
        dt = time_difference(F1, n, self.nt, self.dt)
        return kin.micro_next(n, [None, F1(n), micro], 3, dt_prev=dt, dy_current=derivative(micro, self.y, axis=0))

    # ------------------------------------------------------------ orders

    def build(self) -> list:
        while len(self.bundles) < self.config.N:
            k = len(self.bundles) + 1
            log.info("building order %d", k)
            self.bundles.append(self.build_order_1() if k == 1 else self.build_order_k(k))
        return self.bundles

    def _interior_init(self, datum0):
        x = self.euler.nodes
        rho, u, theta = compatible_interior_init(x, datum0)
        a = self.config.interior_init
        if a:
            g = x * np.exp(-x * x)
            rho = rho + 0.3 * a * g
            u = u + a * np.stack([g, 0.5 * g, 0.7 * g], axis=1)
            theta = theta - 0.4 * a * g
        return rho, u, theta

    def _layer_init(self, neumann):
        a = self.config.layer_init
        return compatible_init(neumann, self.y, amplitude=(a, -0.5 * a, 0.7 * a))

    def build_order_1(self) -> OrderBundle:
        d1 = np.zeros(self.nt)
        order = build_interior_order(self.euler, self.full_kin, 1, d1, init=self._interior_init(0.0))
        self._register_interior(1, order)
        ia, ib = wall_moments(self.vgrid, self.trace.rho, self.trace.u, self.trace.T, self.interior_wall_micro(2))
        neumann = neumann_from_matching(self.coeffs, ia, ib, flux=self.flux)
        layer = solve_layer_parabolic(self.coeffs, neumann, self.layer_grid, init=self._layer_init(neumann), order=1)
        zero = np.zeros((self.nt, self.y.size))
        u3, _, _, _ = derive_normal_velocity(zero, self.coeffs.rho0, self.times, self.y)
        pressure = np.zeros_like(zero)
        rho = layer_density(layer.theta, pressure, self.coeffs.rho0, self.coeffs.T0)
        nxt, nxt_wall, tail, _ = derive_normal_velocity(rho, self.coeffs.rho0, self.times, self.y)
        derived = LayerDerived(rho, nxt, nxt_wall, np.zeros_like(zero), tail)
        bundle = OrderBundle(1, order, layer, rho, u3, pressure, derived, neumann, d1, {}, CorrectionFields.zeros(self.eta, self.vgrid.size), np.zeros((self.nt, 4)), {}, list(order.warnings))
        self.bundles.append(bundle)
        try:
            self._close_knudsen(bundle)
        finally:
            self.bundles.pop()
        return bundle

    def build_order_k(self, k: int) -> OrderBundle:
        if k != 2 or len(self.bundles) != 1:
            raise ValueError("orders are built in sequence and only up to order two")
        prev = self.bundles[0]
        co = self.coeffs
        # interior: wall datum d_2 = -u_bar_{2,3}(wall) (the Knudsen correction of order two vanishes)
        d2 = -prev.derived.u3_wall
        order = build_interior_order(self.euler, self.full_kin, 2, d2, init=self._interior_init(float(d2[0])))
        self._register_interior(2, order)
        wall = self.wall_series()
        kin = LayerKinetics(self.vgrid, self.backend, wall, self.y)
        self._layer_micro = {}
        self._micro_wall = {}
        # lower-order layer source J_bar_1 and its Burnett moments on every level
        A, B = burnett_values(self.vgrid, self.trace.rho, self.trace.u, self.trace.T)
        J_a = np.empty((self.nt, self.y.size, 2))
        J_b = np.empty((self.nt, self.y.size))
        J_wall = np.empty((self.nt, self.vgrid.size))
        for n in range(self.nt):
            J = self.layer_J(kin, n)
            J_a[n] = np.stack([self.vgrid.inner(A[n, 2, i], J) for i in range(2)], axis=-1)
            J_b[n] = self.vgrid.inner(B[n, 2], J)
            J_wall[n] = J[0]
            self._layer_micro.pop(n - 1, None)
        ja_w, jb_w = wall_moments(self.vgrid, self.trace.rho, self.trace.u, self.trace.T, J_wall)
        ia, ib = wall_moments(self.vgrid, self.trace.rho, self.trace.u, self.trace.T, self.interior_wall_micro(3))
        u3 = prev.derived.u3
        u1w = np.stack([self.wall_sampler.order(1, n)[1][0] for n in range(self.nt)])
        th1w = np.array([self.wall_sampler.order(1, n)[2][0] for n in range(self.nt)])
        slip_u = u1w[:, :2] + prev.layer.u[:, 0]
        slip_t = th1w + prev.layer.theta[:, 0]
        neumann = neumann_from_matching(co, ia, ib, ja_w, jb_w, u3_prev=u3[:, 0], slip_u=slip_u, slip_theta=slip_t, flux=self.flux, du3=derivative(u3, self.y, axis=1)[:, 0])
        y = self.y[None, :]
        lift_u = self.trace.d3u[:, None, :2] * y[..., None] + u1w[:, None, :2] + prev.layer.u
        lift_t = 3 * self.trace.d3T[:, None] * y + th1w[:, None] + prev.layer.theta
        pressure = np.zeros((self.nt, self.y.size))
        f_src, g_src = assemble_sources(co, self.y, u3, lift_u, lift_t, J_a, J_b, pressure)
        layer = solve_layer_parabolic(co, neumann, self.layer_grid, f_src, g_src, init=self._layer_init(neumann), order=2)
        rho = layer_density(layer.theta, pressure, co.rho0, co.T0)
        nxt, nxt_wall, tail, _ = derive_normal_velocity(rho, co.rho0, self.times, self.y)
        derived = LayerDerived(rho, nxt, nxt_wall, np.zeros_like(pressure), tail)
        warnings = list(order.warnings)
        bundle = OrderBundle(2, order, layer, rho, u3.copy(), pressure, derived, neumann, d2, {}, CorrectionFields.zeros(self.eta, self.vgrid.size), np.zeros((self.nt, 4)), {}, warnings)
        self.bundles.append(bundle)
        try:
            self._close_knudsen(bundle)
        finally:
            self.bundles.pop()
        return bundle

    def layer_wall_values(self, k, n) -> np.ndarray:
        """f_bar_k at y = 0 (f-space around the wall Maxwellian)."""
        b = self.bundles[k - 1]
        u = np.concatenate([b.layer.u[n, 0], [b.layer_u3[n, 0]]])
        f = macro_basis(self.vgrid, *self.wall_state(n)).macro_from_fluid(b.layer_rho[n, 0], u, b.layer.theta[n, 0])
        if k == 2:
            f = f + self._micro_wall[n] / self.sqrt_mu0(n)
        return f

    def _close_knudsen(self, bundle: OrderBundle):
        """Knudsen boundary datum, solvability moments and half-space solutions of one order."""
        k = bundle.k
        data = {}
        for n in range(self.nt):
            h = self.interior_wall_values(k, n) + self.layer_wall_values(k, n)
            fb = boundary_mismatch(self.vgrid, h)
            bundle.solvability[n] = boundary_moments(self.vgrid, *self.wall_state(n), fb)
            if n in self.knudsen_levels:
                data[n] = (h, fb)
        worst = float(np.max(np.abs(bundle.solvability)))
        if worst > self.config.tol_match:
            raise MatchingError(f"order {k} wall moments violate solvability", {"max_moment": worst, "moments_at_worst_level": bundle.solvability[int(np.argmax(np.max(np.abs(bundle.solvability), axis=1)))].tolist()})
        for n, (h, fb) in data.items():
            rho, u, T = self.wall_state(n)
            fb = np.where(np.abs(fb) > TOL_ZERO, fb, 0.0)
            problem = HalfSpaceProblem(self.vgrid, float(rho), u, float(T), self.eta, None, fb)
            try:
                sol = solve_halfspace(problem, self.backend, method=self.config.knudsen_method)
            except SolvabilityError as exc:
                raise MatchingError(f"order {k} Knudsen datum is not solvable at t = {self.times[n]:.6g}", exc.args[0] if exc.args else {}) from exc
            bundle.knudsen[n] = sol
            total = h + sol.values[0]
            bundle.mismatch[n] = float(np.max(np.abs(total - self.vgrid.reflect_values(total))))
        if bundle.max_mismatch > self.config.tol_match:
            bundle.warnings.append(f"order {k} specular mismatch {bundle.max_mismatch:.3e} exceeds tol_match")

    # ------------------------------------------------------------ composite and defect

    def evaluation_points(self, eps: float, knudsen: bool = True) -> np.ndarray:
        """Fluid nodes, layer nodes eps*y and a thinned Knudsen set eps^2*eta, without near-duplicates."""
        x_max = float(self.euler.nodes[-1])
        parts = []
        top = 0.0
        if knudsen:
            eta = self.eta
            keep = (eta <= 2) | ((eta <= 6) & (np.arange(eta.size) % 2 == 0)) | ((eta <= 14) & (np.arange(eta.size) % 4 == 0)) | (np.arange(eta.size) % 8 == 0)
            sel = eps * eps * eta[keep]
            sel = sel[sel <= x_max]
            parts.append(sel)
            top = float(sel[-1])
        ly = eps * self.y
        ly = ly[(ly > top) & (ly <= x_max)]
        parts.append(ly)
        if ly.size:
            top = float(ly[-1])
        fl = self.euler.nodes[self.euler.nodes > top]
        parts.append(fl)
        x = np.concatenate(parts)
        kept = [x[0]]
        for xi in x[1:]:
            gap = xi - kept[-1]
            prev = kept[-1] - kept[-2] if len(kept) > 1 else gap
            if gap > 0.25 * prev and gap > 1e-14:
                kept.append(xi)
        out = np.asarray(kept)
        if out[-1] != x_max:
            out[-1] = x_max
        return out

    def assemble_composite(self, eps: float, levels=None, points=None) -> "CompositeSolution":
        if not self.bundles:
            raise ValueError("no orders built")
        levels = sorted(set(levels if levels is not None else self.knudsen_levels))
        use_knudsen = any(b.knudsen for b in self.bundles)
        x = self.evaluation_points(eps, knudsen=use_knudsen) if points is None else np.asarray(points, float)
        warnings = []
        if eps * self.y[-1] > 0.5 * x[-1]:
            warnings.append(f"viscous layer support eps*Y_max = {eps * self.y[-1]:.3g} covers a large part of the domain")
        sampler = FieldSampler(self.euler, dict(self.full.orders), points=x)
        ikin = InteriorKinetics(self.vgrid, self.backend, sampler, cache_size=64)
        lay = x <= eps * self.y[-1]
        lx = x[lay]
        lkin = LayerKinetics(self.vgrid, self.backend, self.wall_series(), lx / eps) if lay.any() else None
        values = {}
        parts = {}
        for n in levels:
            F = ikin.F(0, n).copy()
            interior = np.zeros_like(F)
            layer = np.zeros_like(F)
            hat = np.zeros_like(F)
            for b in self.bundles:
                k = b.k
                scale = eps**k
                interior += scale * ikin.F(k, n)
                if lkin is not None:
                    layer[lay] += scale * self._layer_on_points(lkin, b, n, lx / eps, x, lay, eps)
                if b.knudsen:
                    hat += scale * self._knudsen_on_points(b, n, x, eps)
            F += interior + layer + hat
            values[n] = F
            parts[n] = {"interior": interior, "layer": layer, "knudsen": hat}
        positivity = float(min(np.min(v) for v in values.values()))
        return CompositeSolution(eps, self.times, levels, x, values, parts, positivity, warnings)

    def _layer_on_points(self, kin: LayerKinetics, b: OrderBundle, n, yp, x, lay, eps):
        cols = np.concatenate([b.layer_rho[n][:, None], b.layer.u[n], b.layer_u3[n][:, None], b.layer.theta[n][:, None]], axis=1)
        vals = PchipInterpolator(self.y, cols, axis=0, extrapolate=False)(yp)
        vals = np.nan_to_num(vals)
        F = kin.macro(n, vals[:, 0], vals[:, 1:4], vals[:, 4])
        if b.k == 2:
            b1 = self.bundles[0]
            F1 = self._layer_on_points(kin, b1, n, yp, x, lay, eps)
            full = np.zeros((x.size, self.vgrid.size))
            full[lay] = F1
            dy = eps * derivative(full, x, axis=0)[lay]
            h = kin.micro_next(n, [None, F1], 2, dy_current=dy)
            F = F + h * self.sqrt_mu0(n)
        return F

    def _knudsen_on_points(self, b: OrderBundle, n, x, eps):
        sol = b.knudsen.get(n)
        out = np.zeros((x.size, self.vgrid.size))
        if sol is None:
            raise ValueError(f"no Knudsen solution stored for level {n}")
        eta = x / (eps * eps)
        sel = eta <= self.eta[-1]
        if sel.any() and np.any(sol.values):
            out[sel] = PchipInterpolator(self.eta, sol.values, axis=0)(eta[sel]) * self.sqrt_mu0(n)
        return out

    def evaluate_defect(self, composite: "CompositeSolution", levels=None) -> "ResidualReport":
        """D = d_t F + v3 d_3 F - eps^-2 nu (M[F] - F) on the monitored points."""
        eps = composite.epsilon
        levels = [n for n in (levels if levels is not None else self.eval_levels) if n - 1 in composite.values and n + 1 in composite.values]
        if not levels:
            raise ValueError("the composite does not hold the neighbouring levels of any evaluation level")
        x = composite.points
        vg = self.vgrid
        nu = self.backend.nu_bar
        lo, hi = self.config.collar, x.size - 2
        mon = slice(lo, hi)
        l2, sup = [], []
        for n in levels:
            F = composite.values[n]
            Ft = (composite.values[n + 1] - composite.values[n - 1]) / (2 * self.dt)
            Fx = derivative(F, x, axis=0)
            M, _ = discrete_maxwellian(vg, F)
            D = Ft + vg.v3 * Fx - nu * (M - F) / eps**2
            dens = np.sum(D[mon] ** 2 * vg.weights, axis=1)
            l2.append(float(np.sqrt(np.trapezoid(dens, x[mon]))))
            sup.append(float(np.max(np.abs(D[mon]))))
        mism = {str(b.k): b.max_mismatch for b in self.bundles}
        return ResidualReport(eps, [float(self.times[n]) for n in levels], l2, sup, max(l2), max(sup), composite.positivity_min, mism, composite.wall_mismatch(vg), list(composite.warnings))


@dataclass(eq=False)
class CompositeSolution:
    epsilon: float
    times: np.ndarray
    levels: list
    points: np.ndarray
    values: dict  # level -> F-space composite (P, N)
    parts: dict
    positivity_min: float
    warnings: list = field(default_factory=list)

    def wall_mismatch(self, vgrid) -> float:
        out = 0.0
        for F in self.values.values():
            w = F[0]
            out = max(out, float(np.max(np.abs(w - vgrid.reflect_values(w)))))
        return out

    def moments_profile(self, vgrid, level):
        """(x, rho, u1, u2, u3, T) of the composite at one stored level."""
        _, (rho, u, T) = discrete_maxwellian(vgrid, self.values[level])
        return self.points, rho, u, T


@dataclass
class ResidualReport:
    epsilon: float
    times: list
    l2_series: list
    sup_series: list
    l2: float
    sup: float
    positivity_min: float
    order_mismatch: dict
    composite_wall_mismatch: float
    warnings: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)


# ---------------------------------------------------------------- slope fits and the acoustic limit


def fit_slope(params, values) -> dict:
    """Least-squares slope of log(values) against log(params), with r^2."""
    p = np.asarray(params, float)
    v = np.asarray(values, float)
    if p.size < 3 or p.size != v.size:
        raise ValueError("a slope fit needs at least three (parameter, value) pairs")
    if np.any(p <= 0) or np.any(v <= 0):
        raise ValueError("slope fits need positive parameters and values")
    lx, ly = np.log(p), np.log(v)
    slope, icpt = np.polyfit(lx, ly, 1)
    resid = ly - (slope * lx + icpt)
    ss = float(np.sum((ly - ly.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid**2)) / ss if ss > 0 else 1.0
    return {"slope": float(slope), "intercept": float(icpt), "r2": r2, "points": [[float(a), float(b)] for a, b in zip(p, v)]}


def fluid_gap(euler: FluidField, profile: Profile, delta: float) -> dict:
    """sup_t of the L^2(x) norm of (rho - 1 - delta phi, u - delta Phi, T - 1 - delta vartheta)."""
    x = euler.nodes
    phi, vel, theta = acoustic_solution(profile, euler.times[:, None], x[None, :])
    d = (euler.rho - 1 - delta * phi) ** 2 + np.sum((euler.u - delta * vel) ** 2, axis=-1) + (euler.T - 1 - delta * theta) ** 2
    series = np.sqrt(np.trapezoid(d, x, axis=1))
    return {"delta": delta, "sup": float(np.max(series)), "final": float(series[-1]), "series": series}


def kinetic_gap(composite: CompositeSolution, vgrid, profile: Profile, delta: float) -> dict:
    """sup over stored levels of || (F^eps - mu_M)/delta - G ||_{L^2(x, v)} with G the acoustic fluctuation."""
    mu_m = maxwellian_values(vgrid, 1.0, np.zeros(3), 1.0)
    v = vgrid.nodes
    v2 = np.sum(v * v, axis=1)
    x = composite.points
    out = []
    for n in composite.levels:
        phi, vel, theta = acoustic_solution(profile, composite.times[n], x)
        G = (phi[:, None] + vel @ v.T + theta[:, None] * (v2 - 3) / 2) * mu_m
        diff = (composite.values[n] - mu_m) / delta - G
        dens = np.sum(diff**2 * vgrid.weights, axis=1)
        out.append(float(np.sqrt(np.trapezoid(dens, x))))
    return {"delta": delta, "epsilon": composite.epsilon, "sup": max(out), "series": out}


def acoustic_gap(euler: FluidField, profile: Profile, delta: float, composite: CompositeSolution | None = None, vgrid=None) -> dict:
    out = {"fluid": fluid_gap(euler, profile, delta)}
    if composite is not None:
        if vgrid is None:
            raise ValueError("the kinetic gap needs the velocity grid of the composite")
        out["kinetic"] = kinetic_gap(composite, vgrid, profile, delta)
    return out


def defect_sweep(expansion: Expansion, epsilons=None) -> dict:
    """Defect norms over a decreasing list of eps and the fitted log-log slope."""
    eps_list = list(epsilons if epsilons is not None else expansion.config.epsilons)
    reports = []
    for eps in eps_list:
        comp = expansion.assemble_composite(eps)
        reports.append(expansion.evaluate_defect(comp))
    fit = fit_slope(eps_list, [r.l2 for r in reports]) if len(eps_list) >= 3 else None
    return {"reports": reports, "fit": fit}
