"""Half-space Knudsen layer problem with perturbed specular reflection, and its macroscopic correction.

The problem v3 d_eta f + L0 f = S on eta in [0, H_max] is solved along characteristics with an
exponential integrator; the collision gain K0 = nu - L0 is treated as an unknown source, so the
solution is the fixed point f = T[S + K0 f, f_b] of the transport solve T. For the bgk backend the
gain lives in the five-dimensional null space, which keeps the fixed-point unknown small.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse.linalg import LinearOperator, gmres

from .collision import CollisionBackend, collision_series, frequency_values, operator_data
from .velocity import VelocityGrid, macro_basis, maxwellian_values

H_MAX = 30.0
ETA_STEP = 0.05
TOL_SOLVABILITY = 1e-6
TOL_SOLVE = 1e-10
TOL_BC = 1e-10
STENCIL = 6
WEIGHT_KAPPA = 3.0
WEIGHT_A = 0.3
METHODS = ("krylov", "none", "anderson")


class SolvabilityError(ValueError):
    def __init__(self, report):
        super().__init__(f"half-space data violate the solvability conditions: {report}")
        self.report = report


class ConvergenceError(RuntimeError):
    def __init__(self, history):
        super().__init__(f"half-space iteration did not converge (last residuals {history[-3:]})")
        self.history = history


class DecayError(RuntimeError):
    pass


def eta_grid(h_max: float = H_MAX, step: float = ETA_STEP) -> np.ndarray:
    n = int(round(h_max / step))
    if n < STENCIL:
        raise ValueError("eta grid too short for the interpolation stencil")
    return np.linspace(0.0, h_max, n + 1)


@dataclass(eq=False)
class HalfSpaceProblem:
    """Data of one half-space problem; f-space values (``source`` (N_eta, N), ``f_b`` (N,))."""

    vgrid: VelocityGrid
    rho: float
    u: np.ndarray
    T: float
    eta: np.ndarray
    source: np.ndarray | None = None
    f_b: np.ndarray | None = None
    zeta0: float = 1.0

    def __post_init__(self):
        self.u = np.asarray(self.u, float)
        n = self.vgrid.size
        if self.source is None:
            self.source = np.zeros((self.eta.size, n))
        if self.f_b is None:
            self.f_b = np.zeros(n)
        self.source = np.asarray(self.source, float)
        self.f_b = np.asarray(self.f_b, float)
        if not (self.rho > 0 and self.T > 0):
            raise ValueError("invalid wall state")
        if abs(self.u[2]) > TOL_BC:
            raise ValueError("the wall state must satisfy the slip condition u3 = 0")
        if self.source.shape != (self.eta.size, n) or not np.all(np.isfinite(self.source)):
            raise ValueError("source must be finite with shape (n_eta, n_velocity)")
        if np.any(self.f_b[self.vgrid.v3 > 0] != 0):
            raise ValueError("boundary datum f_b must vanish on v3 > 0")
        steps = np.diff(self.eta)
        if self.eta[0] != 0 or np.max(np.abs(steps - steps[0])) > 1e-12 * steps[0]:
            raise ValueError("eta nodes must be uniform and start at 0")

    @property
    def state(self):
        return self.rho, self.u, self.T


@dataclass(frozen=True)
class SolvabilityReport:
    micro_defect: float
    four_moments: tuple
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.micro_defect <= self.tolerance and max(abs(m) for m in self.four_moments) <= self.tolerance

    def to_dict(self):
        return {"micro_defect": self.micro_defect, "four_moments": list(self.four_moments), "tolerance": self.tolerance, "passed": self.passed}


def boundary_moments(vgrid: VelocityGrid, rho, u, T, f_b: np.ndarray) -> tuple:
    """The mass-flux, two shear and heat-flux wall moments of f_b against sqrt(mu0)."""
    sq = np.sqrt(maxwellian_values(vgrid, rho, u, T))
    v = vgrid.nodes
    w = v - np.asarray(u, float)
    g = vgrid.v3 * f_b * sq
    return tuple(float(vgrid.inner(g, p)) for p in (np.ones(vgrid.size), w[:, 0], w[:, 1], np.sum(w * w, axis=1)))


def check_solvability(problem: HalfSpaceProblem, tol: float = TOL_SOLVABILITY) -> SolvabilityReport:
    basis = macro_basis(problem.vgrid, *problem.state)
    defect = float(np.max(problem.vgrid.norm(basis.project(problem.source)))) if problem.source.size else 0.0
    moments = boundary_moments(problem.vgrid, *problem.state, problem.f_b)
    return SolvabilityReport(defect, moments, tol)


def boundary_mismatch(vgrid: VelocityGrid, wall_values: np.ndarray) -> np.ndarray:
    """g(v) = h(v) - h(v_par, -v3) on v3 < 0 and 0 on v3 > 0."""
    h = np.asarray(wall_values, float)
    g = h - vgrid.reflect_values(h)
    return np.where(vgrid.v3 < 0, g, 0.0)


# ---------------------------------------------------------------- exponential-integrator transport


def _exp_moments(a: np.ndarray, degree: int) -> np.ndarray:
    """I_k(a) = int_0^1 exp(-a (1 - x)) x^k dx for k = 0..degree, shape (len(a), degree+1)."""
    a = np.asarray(a, float)
    out = np.empty((a.size, degree + 1))
    big = a >= 8.0
    if np.any(big):
        ab = a[big]
        cur = -np.expm1(-ab) / ab
        out[big, 0] = cur
        for k in range(1, degree + 1):
            cur = (1.0 - k * cur) / ab
            out[big, k] = cur
    if np.any(~big):
        x, wx = np.polynomial.legendre.leggauss(20)
        x = 0.5 * (x + 1)
        wx = 0.5 * wx
        e = np.exp(-np.outer(a[~big], 1 - x)) * wx
        for k in range(degree + 1):
            out[~big, k] = e @ x**k
    return out


def _lagrange_monomials(offsets: np.ndarray, reverse: bool) -> np.ndarray:
    """Monomial coefficients (m, k) of the Lagrange basis on ``offsets`` evaluated at x (or 1 - x)."""
    n = offsets.size
    out = np.empty((n, n))
    for m in range(n):
        others = np.delete(offsets, m)
        poly = np.poly1d(others, r=True) / np.prod(offsets[m] - others)
        if reverse:
            poly = poly(np.poly1d([-1.0, 1.0]))
        out[m] = poly.coeffs[::-1] if poly.order == n - 1 else np.pad(poly.coeffs[::-1], (0, n - 1 - poly.order))
    return out


class Transport:
    """Exact characteristic solve of v3 d_eta f + nu f = q with piecewise degree-5 sources."""

    def __init__(self, eta: np.ndarray, v3: np.ndarray, nu: np.ndarray, reflect: np.ndarray):
        self.eta = eta
        self.h = float(eta[1] - eta[0])
        self.v3 = v3
        self.nu = nu
        self.reflect = reflect
        self.pos = np.nonzero(v3 > 0)[0]
        self.neg = np.nonzero(v3 < 0)[0]
        n_cell = eta.size - 1
        self.start = np.clip(np.arange(n_cell) - 2, 0, eta.size - STENCIL)
        pattern = np.arange(n_cell) - self.start
        self.pattern = pattern
        speed = np.abs(v3)
        a = nu * self.h / speed
        self.decay = np.exp(-a)
        moments = _exp_moments(a, STENCIL - 1)  # (N, 6)
        scale = (self.h / speed)[:, None]
        self.weights = {}
        for direction in (+1, -1):
            table = np.empty((STENCIL, v3.size, STENCIL))
            for p in range(STENCIL):
                offsets = np.arange(STENCIL, dtype=float) - p
                coef = _lagrange_monomials(offsets, reverse=direction < 0)  # (m, k)
                table[p] = scale * (moments @ coef.T)
            self.weights[direction] = table

    def _cell_sources(self, q: np.ndarray, idx: np.ndarray, direction: int) -> np.ndarray:
        table = self.weights[direction]
        n_cell = self.eta.size - 1
        qi = q[:, idx]
        out = np.zeros((n_cell, idx.size))
        interior = table[2][idx]
        stop = n_cell - 2
        for m in range(STENCIL):
            out[2:stop] += interior[:, m] * qi[m : m + stop - 2]
        for i in (0, 1, stop, stop + 1):
            w = table[self.pattern[i]][idx]
            out[i] = np.sum(w.T * qi[self.start[i] : self.start[i] + STENCIL], axis=0)
        return out

    def solve(self, q: np.ndarray, f_b: np.ndarray) -> np.ndarray:
        n_eta = self.eta.size
        f = np.empty_like(q)
        neg, pos = self.neg, self.pos
        src = self._cell_sources(q, neg, -1)
        dec = self.decay[neg]
        f[-1, neg] = 0.0
        for i in range(n_eta - 2, -1, -1):
            f[i, neg] = dec * f[i + 1, neg] + src[i]
        f[0, pos] = f[0, self.reflect[pos]] + f_b[self.reflect[pos]]
        src = self._cell_sources(q, pos, +1)
        dec = self.decay[pos]
        for i in range(n_eta - 1):
            f[i + 1, pos] = dec * f[i, pos] + src[i]
        return f


def pure_absorption_solution(eta, v3, nu, m, f_b, reflect, h_max):
    """Closed-form solution for S = exp(-eta) m(v) without gain (oracle for the transport solve)."""
    eta = np.asarray(eta)[:, None]
    speed = np.abs(v3)
    lam = nu / speed
    out = np.empty((eta.shape[0], v3.size))
    neg = v3 < 0
    r = 1 + lam[neg]
    out[:, neg] = m[neg] / speed[neg] * np.exp(-eta) * -np.expm1(-r * (h_max - eta)) / r
    wall_neg = m / speed * -np.expm1(-(1 + lam) * h_max) / (1 + lam)
    pos = ~neg
    f0 = wall_neg[reflect[pos]] + f_b[reflect[pos]]
    lp = lam[pos]
    with np.errstate(over="ignore", invalid="ignore"):
        growth = np.where(np.abs(lp - 1) < 1e-12, eta * np.exp(-eta), (np.exp(-eta) - np.exp(-lp * eta)) / (lp - 1))
    out[:, pos] = f0 * np.exp(-lp * eta) + m[pos] / speed[pos] * growth
    return out


# ---------------------------------------------------------------- the half-space solve


@dataclass(eq=False)
class KnudsenSolution:
    eta: np.ndarray
    values: np.ndarray  # (N_eta, N), f-space
    zeta: float
    iterations: int
    residual: float
    history: list
    converged: bool
    contamination: float
    wall_relation: float
    profile: np.ndarray = field(default=None, repr=False)

    def report(self) -> dict:
        return {"converged": self.converged, "iterations": self.iterations, "residual": self.residual, "zeta": self.zeta, "contamination": self.contamination, "wall_relation": self.wall_relation}

    def write_profile(self, path):
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["eta", "weighted_sup"])
            for e, p in zip(self.eta, self.profile):
                wr.writerow([f"{e:.10g}", f"{p:.15g}"])


def weight(vgrid: VelocityGrid, rho, u, T, kappa: float = WEIGHT_KAPPA, a: float = WEIGHT_A) -> np.ndarray:
    mu0 = maxwellian_values(vgrid, rho, u, T)
    vv = np.sqrt(np.sum(vgrid.nodes**2, axis=1))
    return (1 + vv) ** kappa * mu0 ** (-a)


def fit_decay(eta: np.ndarray, profile: np.ndarray) -> float:
    """Exponential rate from least squares on log(profile) over the decaying part of the profile."""
    top = float(np.max(profile))
    if top <= 0:
        return math.inf
    sel = (profile > 1e-12 * top) & (profile < 1e-2 * top) & (eta <= 0.75 * eta[-1])
    if np.count_nonzero(sel) < 5:
        sel = (eta >= 0.1 * eta[-1]) & (eta <= 0.5 * eta[-1]) & (profile > 0)
    if np.count_nonzero(sel) < 2:
        return math.inf
    slope, _ = np.polyfit(eta[sel], np.log(profile[sel]), 1)
    return float(-slope)


class _Gain:
    def __init__(self, backend: CollisionBackend, vgrid: VelocityGrid, state):
        self.backend = backend
        op = operator_data(backend, vgrid, *state)
        self.op = op
        self.nu = op.nu if np.ndim(op.nu) else np.full(vgrid.size, float(op.nu))
        self.w = vgrid.weights
        if op.matrix is not None:
            self.kind = "dense"
            self.K = np.diag(self.nu) - op.matrix
        else:
            self.kind = "null"
            self.e = op.nu_basis if op.nu_basis is not None else op.basis.e
            self.weighted = op.nu_basis is not None

    @property
    def n_unknown(self):
        return 5 if self.kind == "null" else self.w.size

    def coefficients(self, f):
        if self.kind == "dense":
            return f
        wts = self.w * (self.nu if self.weighted else 1.0)
        return (f * wts) @ self.e.T

    def source(self, c):
        if self.kind == "dense":
            return c @ self.K.T
        return self.nu * (c @ self.e)


def solve_halfspace(problem: HalfSpaceProblem, backend: CollisionBackend, method: str = "krylov", tol: float = TOL_SOLVE, max_iter: int = 400, gain: bool = True, check: bool = True) -> KnudsenSolution:
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}")
    if check:
        rep = check_solvability(problem)
        if not rep.passed:
            raise SolvabilityError(rep.to_dict())
    vg = problem.vgrid
    eta = problem.eta
    nu = frequency_values(backend, vg, *problem.state)
    nu = nu if np.ndim(nu) else np.full(vg.size, float(nu))
    tr = Transport(eta, vg.v3, nu, vg.reflect)
    S, fb = problem.source, problem.f_b
    wgt = weight(vg, *problem.state)
    history = []
    if not gain:
        f = tr.solve(S, fb)
        c = None
        iterations = 0
        g = None
    else:
        g = _Gain(backend, vg, problem.state)
        shape = (eta.size, g.n_unknown)
        base = g.coefficients(tr.solve(S, fb))

        def phi(c):
            return g.coefficients(tr.solve(g.source(c), np.zeros_like(fb)))

        scale = max(float(np.max(np.abs(base))), 1e-300)
        if not np.any(base):
            c = np.zeros(shape)
            iterations = 0
        elif method == "krylov":
            n = base.size
            op = LinearOperator((n, n), matvec=lambda x: x - phi(x.reshape(shape)).ravel(), dtype=float)
            counter = []

            def cb(res):
                counter.append(float(res))

            sol, info = gmres(op, base.ravel(), rtol=tol, atol=0.0, restart=max_iter, maxiter=max_iter, callback=cb, callback_type="pr_norm")
            c = sol.reshape(shape)
            history.extend(counter)
            iterations = len(counter)
        else:
            c = np.zeros(shape)
            prev_g, prev_c = [], []
            iterations = 0
            for iterations in range(1, max_iter + 1):
                new = base + phi(c)
                diff = float(np.max(np.abs(new - c))) / scale
                history.append(diff)
                if method == "anderson" and prev_g:
                    resid = new - c
                    dr = [resid - r for r in prev_g]
                    dc = [new - x for x in prev_c]
                    A = np.stack([d.ravel() for d in dr], 1)
                    gamma, *_ = np.linalg.lstsq(A, resid.ravel(), rcond=None)
                    mixed = new - sum(gm * d for gm, d in zip(gamma, dc))
                    prev_g = ([resid] + prev_g)[:2]
                    prev_c = ([new] + prev_c)[:2]
                    new = mixed
                elif method == "anderson":
                    prev_g, prev_c = [new - c], [new]
                c = new
                if diff <= tol:
                    break
        f = tr.solve(S + g.source(c), fb)
    # mild-form residual: f - T[S + K f]
    if gain:
        resid = f - tr.solve(S + g.source(g.coefficients(f)), fb)
    else:
        resid = f - tr.solve(S, fb)
    residual = float(np.max(np.abs(resid) / wgt))
    scale_data = max(1.0, float(np.max(np.abs(S) / wgt)), float(np.max(np.abs(fb) / wgt)))
    converged = residual <= max(tol, 1e-2 * TOL_SOLVABILITY) * scale_data
    profile = np.max(np.abs(f) * (1.0 / wgt), axis=1)
    zeta = fit_decay(eta, profile)
    half = int(np.searchsorted(eta, eta[-1] / 2))
    pos = vg.v3 > 0
    wall = float(np.max(np.abs(f[0, pos] - f[0, vg.reflect[pos]] - fb[vg.reflect[pos]]))) if np.any(pos) else 0.0
    sol = KnudsenSolution(eta, f, zeta, iterations, residual, history, bool(converged), float(profile[half]), wall, profile)
    if not converged:
        raise ConvergenceError(history or [residual])
    if np.any(f) and not zeta > 0:
        raise DecayError(f"fitted decay rate {zeta} is not positive")
    return sol


# ---------------------------------------------------------------- macroscopic correction


@dataclass(eq=False)
class CorrectionFields:
    eta: np.ndarray
    A: np.ndarray
    B: np.ndarray  # (N_eta, 3)
    C: np.ndarray
    f1: np.ndarray  # (N_eta, N)
    defect_projection: np.ndarray  # (N_eta,)

    @classmethod
    def zeros(cls, eta, n_velocity):
        z = np.zeros(eta.size)
        return cls(eta, z.copy(), np.zeros((eta.size, 3)), z.copy(), np.zeros((eta.size, n_velocity)), z.copy())


def _tail_integral_poly(values: np.ndarray, eta: np.ndarray) -> np.ndarray:
    """int_eta^H values ds by exact integration of the piecewise degree-5 interpolant."""
    n = eta.size
    h = eta[1] - eta[0]
    start = np.clip(np.arange(n - 1) - 2, 0, n - STENCIL)
    pattern = np.arange(n - 1) - start
    cell = np.zeros((n - 1,) + values.shape[1:])
    for p in np.unique(pattern):
        offsets = np.arange(STENCIL, dtype=float) - p
        coef = _lagrange_monomials(offsets, reverse=False)  # (m, k)
        w = coef @ (1.0 / np.arange(1, STENCIL + 1))  # int_0^1 l_m
        sel = pattern == p
        for m in range(STENCIL):
            cell[sel] += h * w[m] * values[start[sel] + m]
    out = np.zeros_like(values)
    out[:-1] = np.cumsum(cell[::-1], axis=0)[::-1]
    return out


def _decay_ok(values: np.ndarray, eta: np.ndarray) -> bool:
    top = float(np.max(np.abs(values)))
    if top == 0:
        return True
    return float(np.max(np.abs(values[-max(3, eta.size // 20):]))) <= 1e-6 * top


def build_correction(vgrid: VelocityGrid, rho, u, T, eta: np.ndarray, a: np.ndarray, b: np.ndarray, c: np.ndarray) -> CorrectionFields:
    """Macroscopic correction f_1 for S_1 = {a + b.(v-u0) + c |v-u0|^2} sqrt(mu0)."""
    a = np.asarray(a, float)
    b = np.asarray(b, float).reshape(eta.size, 3)
    c = np.asarray(c, float)
    for name, arr in (("a", a), ("b", b), ("c", c)):
        if not _decay_ok(arr, eta):
            raise ValueError(f"coefficient {name} does not decay on the eta grid")
    if not (np.any(a) or np.any(b) or np.any(c)):
        return CorrectionFields.zeros(eta, vgrid.size)
    ta = _tail_integral_poly(a, eta)
    tb = _tail_integral_poly(b, eta)
    tc = _tail_integral_poly(c, eta)
    A = -(2.0 / T * ta + 3 * tc)
    B = np.stack([-tb[:, 0] / T, -tb[:, 1] / T, -tb[:, 2]], 1)
    C = ta / (5 * T * T)
    u = np.asarray(u, float)
    sq = np.sqrt(maxwellian_values(vgrid, rho, u, T))
    w = vgrid.nodes - u
    w2 = np.sum(w * w, axis=1)
    v3 = vgrid.v3

    def assemble(A_, B_, C_):
        poly = A_[:, None] * v3 + B_[:, 0:1] * v3 * w[:, 0] + B_[:, 1:2] * v3 * w[:, 1] + B_[:, 2:3] + C_[:, None] * v3 * w2
        return poly * sq

    f1 = assemble(A, B, C)
    # d_eta of the tail integrals is minus the integrand
    dA = 2.0 / T * a + 3 * c
    dB = np.stack([b[:, 0] / T, b[:, 1] / T, b[:, 2]], 1)
    dC = -a / (5 * T * T)
    S1 = (a[:, None] + b @ w.T + c[:, None] * w2) * sq
    defect = v3 * assemble(dA, dB, dC) - S1
    basis = macro_basis(vgrid, rho, u, T)
    proj = vgrid.norm(basis.project(defect))
    return CorrectionFields(eta, A, B, C, f1, proj)


# ---------------------------------------------------------------- sources


def assemble_knudsen_source(k: int, vgrid: VelocityGrid, backend: CollisionBackend, wall_state, eta: np.ndarray, fluid_terms=None, knudsen_terms=None):
    """Split source (S_{k,1}, S_{k,2}) of the order-k Knudsen problem, f-space arrays (N_eta, N).

    ``fluid_terms[i]`` is the F-space wall value F_i^0 + F_bar_i^0 of the interior plus viscous
    layer, ``knudsen_terms[j]`` the F-space Knudsen profile F_hat_j (N_eta, N). Orders one and two
    vanish identically; from order three the source is the cross collision term between the
    wall value of the outer fields and lower Knudsen orders (its time-derivative part involves
    F_hat_{k-2} = F_hat_1 = 0 for k = 3).
    """
    n = vgrid.size
    zero = np.zeros((eta.size, n))
    if k <= 2 or not knudsen_terms:
        return zero, zero.copy()
    rho, u, T = wall_state
    shape = (eta.size,)
    base = (np.full(shape, rho), np.broadcast_to(np.asarray(u, float), shape + (3,)).copy(), np.full(shape, T))
    mu0 = maxwellian_values(vgrid, rho, u, T)
    G = [np.broadcast_to(mu0, (eta.size, n)).copy()]
    H = [G[0]]
    for j in range(1, k + 1):
        outer = np.broadcast_to(fluid_terms.get(j, np.zeros(n)), (eta.size, n))
        kn = knudsen_terms.get(j)
        H.append(outer.copy())
        G.append(outer + (kn if kn is not None and j < k else 0.0))
    qg = collision_series(G, vgrid, backend, base, k)[k]
    qh = collision_series(H, vgrid, backend, base, k)[k]
    basis = macro_basis(vgrid, rho, u, T)
    S = (qg - qh) / basis.sqrt_mu
    return basis.project(S), basis.micro(S)


def write_report(path, solution: KnudsenSolution, solvability: SolvabilityReport | None = None):
    payload = solution.report()
    if solvability is not None:
        payload["moment_defects"] = solvability.to_dict()
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
