"""Linearized collision operator, its inverse on the microscopic subspace, quadratic terms,
Burnett functions and transport coefficients."""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage
from scipy.special import erf

from .velocity import (
    TOL_QUAD,
    FluidPoint,
    KineticSlice,
    MacroBasis,
    VelocityGrid,
    macro_basis,
    maxwellian_values,
    moment_array,
)

KINDS = ("bgk-model", "hard-sphere-quad")
TOL_SOLVE = 1e-10
TOL_MICRO = 10 * TOL_QUAD
TOL_Q = 10 * TOL_QUAD
HS_CONST = 2.0 * math.sqrt(2.0 / math.pi)  # Grad kernel prefactor for B = |(v-u).omega|
CELL_INV_R = 2.3800772  # integral of 1/|x| over the unit cube centred at 0


class NotMicroscopicError(ValueError):
    def __init__(self, defect: float):
        super().__init__(f"input to invert_L is not microscopic: |P g| = {defect:.3e} > {TOL_MICRO:.1e}")
        self.defect = defect


class SolveError(RuntimeError):
    def __init__(self, residual: float, iterations: int):
        super().__init__(f"invert_L did not converge: residual {residual:.3e} after {iterations} iterations")
        self.residual = residual
        self.iterations = iterations


@dataclass(frozen=True, eq=False)
class CollisionBackend:
    """``nu_bar`` is the constant bgk frequency; ``nu_c0`` switches bgk to nu = c0 (1 + |v|)."""

    kind: str = "bgk-model"
    nu_bar: float = 1.0
    nu_c0: float | None = None
    n_polar: int = 6
    n_azimuth: int = 12
    max_iter: int = 500
    tol_solve: float = TOL_SOLVE
    _cache: dict = field(default_factory=dict, repr=False)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown collision backend {self.kind!r}; expected one of {KINDS}")
        if self.kind == "bgk-model":
            if self.nu_c0 is None and not self.nu_bar > 0:
                raise ValueError("bgk nu_bar must be positive")
            if self.nu_c0 is not None and not self.nu_c0 > 0:
                raise ValueError("bgk affine c0 must be positive")

    @property
    def constant_bgk(self) -> bool:
        return self.kind == "bgk-model" and self.nu_c0 is None

    def to_dict(self) -> dict:
        if self.kind == "bgk-model":
            nu = {"c0": self.nu_c0} if self.nu_c0 is not None else {"nu_bar": self.nu_bar}
            return {"kind": self.kind, "nu_params": nu}
        return {"kind": self.kind, "quad_params": {"n_polar": self.n_polar, "n_azimuth": self.n_azimuth}}

    @classmethod
    def from_dict(cls, data: dict) -> "CollisionBackend":
        kind = data.get("kind", "bgk-model")
        if kind == "bgk-model":
            nu = data.get("nu_params", {"nu_bar": 1.0})
            if "c0" in nu:
                return cls(kind, nu_c0=float(nu["c0"]))
            return cls(kind, nu_bar=float(nu.get("nu_bar", 1.0)))
        q = data.get("quad_params", {})
        return cls(kind, n_polar=int(q.get("n_polar", 6)), n_azimuth=int(q.get("n_azimuth", 12)))


# ---------------------------------------------------------------- collision frequency


def hs_frequency(v, rho, u, T):
    """nu(v) = 2 pi rho sqrt(T) E|xi - Z| with xi = (v - u)/sqrt(T), Z standard normal."""
    xi = (np.asarray(v, float) - np.asarray(u, float)) / np.sqrt(T)
    r = np.linalg.norm(xi, axis=-1)
    rs = np.where(r < 1e-8, 1.0, r)
    mean = np.where(
        r < 1e-8,
        2 * np.sqrt(2 / np.pi) + r * r * np.sqrt(2 / np.pi) / 3,
        np.sqrt(2 / np.pi) * np.exp(-r * r / 2) + (r + 1 / rs) * erf(r / np.sqrt(2)),
    )
    return 2 * np.pi * rho * np.sqrt(T) * mean


def frequency_values(backend: CollisionBackend, grid: VelocityGrid, rho, u, T) -> np.ndarray:
    rho = np.asarray(rho, float)
    if backend.kind == "hard-sphere-quad":
        u = np.asarray(u, float)
        return hs_frequency(grid.nodes, rho[..., None], u[..., None, :], np.asarray(T, float)[..., None])
    if backend.nu_c0 is not None:
        nu = backend.nu_c0 * (1 + np.linalg.norm(grid.nodes, axis=1))
        return np.broadcast_to(nu, rho.shape + (grid.size,))
    return np.full(rho.shape + (grid.size,), backend.nu_bar)


def collision_freq(v, state: FluidPoint, backend: CollisionBackend) -> float:
    v = np.asarray(v, float)
    if backend.kind == "hard-sphere-quad":
        rho, u, T = state.arrays()
        return float(hs_frequency(v, rho, u, T))
    if backend.nu_c0 is not None:
        return float(backend.nu_c0 * (1 + np.linalg.norm(v)))
    return float(backend.nu_bar)


# ---------------------------------------------------------------- operator construction


@dataclass(frozen=True, eq=False)
class LinearOperatorData:
    """Everything needed to apply L at one or many states.

    For bgk the operator is nu (I - P_nu) with P_nu the projection onto the null space that is
    orthogonal in the nu-weighted inner product; for constant nu this is nu (I - P). For the
    hard-sphere backend ``matrix`` is the dense operator acting on nodal values.
    """

    basis: MacroBasis
    nu: np.ndarray
    nu_basis: np.ndarray | None = None
    matrix: np.ndarray | None = None
    raw_null_defect: float = 0.0


def _nu_weighted_basis(basis: MacroBasis, nu: np.ndarray) -> np.ndarray:
    wts = basis.grid.weights
    e = basis.e
    out = np.empty_like(e)
    for k in range(5):
        v = e[..., k, :].copy()
        for _ in range(2):
            for j in range(k):
                c = np.sum(nu * v * out[..., j, :] * wts, axis=-1, keepdims=True)
                v = v - c * out[..., j, :]
        out[..., k, :] = v / np.sqrt(np.sum(nu * v * v * wts, axis=-1, keepdims=True))
    return out


def _hs_raw_matrix(grid: VelocityGrid, rho: float, u: np.ndarray, T: float, rows: int = 256):
    """nu, and the symmetric kernel matrix M with (L g)_i = nu_i g_i + sum_j M_ij w_j g_j."""
    st = math.sqrt(T)
    xi = (grid.nodes - u) / st
    nu = hs_frequency(grid.nodes, rho, u, T)
    x2 = np.einsum("ij,ij->i", xi, xi)
    sq = (2 * np.pi) ** -0.75 * np.exp(-x2 / 4)
    m = np.empty((grid.size, grid.size))
    for s in range(0, grid.size, rows):
        blk = slice(s, min(s + rows, grid.size))
        diff = xi[blk, None, :] - xi[None, :, :]
        r2 = np.einsum("ijk,ijk->ij", diff, diff)
        del diff
        r = np.sqrt(r2)
        k1 = 2 * np.pi * r * np.outer(sq[blk], sq)
        r2 = np.where(r2 == 0, 1.0, r2)
        r = np.where(r == 0, 1.0, r)
        k2 = HS_CONST / r * np.exp(-r2 / 8 - (x2[blk, None] - x2[None, :]) ** 2 / (8 * r2))
        m[blk] = k1 - k2
    # singular diagonal: cell average of 1/r times the directional average of the Gaussian factor
    h = (grid.weights / T**1.5) ** (1.0 / 3.0)
    s = np.sqrt(x2)
    dir_avg = np.where(s < 1e-8, 1.0, np.sqrt(np.pi / 2) * erf(s / np.sqrt(2)) / np.maximum(s, 1e-8))
    np.fill_diagonal(m, -HS_CONST * CELL_INV_R / h * dir_avg)
    # change of variables dv' = T^{3/2} dxi', kernel scales like rho sqrt(T)
    m *= rho * st / T**1.5
    return nu, m


def operator_data(backend: CollisionBackend, grid: VelocityGrid, rho, u, T) -> LinearOperatorData:
    basis = macro_basis(grid, rho, u, T)
    nu = frequency_values(backend, grid, rho, u, T)
    if backend.kind == "bgk-model":
        if backend.nu_c0 is None:
            return LinearOperatorData(basis, nu)
        return LinearOperatorData(basis, nu, nu_basis=_nu_weighted_basis(basis, nu))
    rho_a, u_a, T_a = np.asarray(rho, float), np.asarray(u, float), np.asarray(T, float)
    if rho_a.ndim != 0:
        raise ValueError("the hard-sphere backend builds one dense operator per state; pass a single state")
    key = (grid.grid_id, float(rho_a), tuple(u_a.tolist()), float(T_a))
    with backend._lock:
        cached = backend._cache.get(key)
    if cached is not None:
        return cached
    nu0, mat = _hs_raw_matrix(grid, float(rho_a), u_a, float(T_a))
    w = grid.weights
    mat *= w[None, :]
    mat[np.diag_indices(grid.size)] += nu0
    e = basis.e
    raw_defect = float(np.max(grid.norm(e @ mat.T)))
    # exact null space: (I - P) L (I - P) with the discrete orthogonal projection P = e^T e W
    ew = e * w
    left = mat @ e.T  # L e^T
    mat -= left @ ew
    right = ew @ mat  # e W (L - L P)
    mat -= e.T @ right
    data = LinearOperatorData(basis, nu0, matrix=mat, raw_null_defect=raw_defect)
    with backend._lock:
        backend._cache[key] = data
    return data


def apply_L_values(op: LinearOperatorData, g: np.ndarray) -> np.ndarray:
    if op.matrix is not None:
        return g @ op.matrix.T
    if op.nu_basis is None:
        return op.nu * op.basis.micro(g)
    wts = op.basis.grid.weights
    c = np.einsum("...kn,...n->...k", op.nu_basis, op.nu * g * wts)
    return op.nu * (g - np.einsum("...k,...kn->...n", c, op.nu_basis))


def invert_L_values(op: LinearOperatorData, g: np.ndarray, backend: CollisionBackend, check: bool = True):
    """Solve L h = g with P h = 0 for microscopic g; returns (h, residual, iterations)."""
    basis = op.basis
    grid = basis.grid
    if check:
        defect = float(np.max(grid.norm(basis.project(g)) / np.maximum(1.0, grid.norm(g))))
        if defect > TOL_MICRO:
            raise NotMicroscopicError(defect)
    g = basis.micro(g)
    if op.matrix is None and op.nu_basis is None:
        return g / op.nu, 0.0, 0
    return _projected_cg(op, g, backend)


def _projected_cg(op: LinearOperatorData, g: np.ndarray, backend: CollisionBackend):
    basis = op.basis
    grid = basis.grid
    ip = grid.inner
    gnorm = np.maximum(grid.norm(g), 1e-300)
    x = np.zeros_like(g)
    r = g.copy()
    z = basis.micro(r / op.nu)
    p = z.copy()
    rz = ip(r, z)
    res = grid.norm(r) / gnorm
    it = 0
    tol = backend.tol_solve
    while np.any(res > tol * 0.5) and it < backend.max_iter:
        ap = basis.micro(apply_L_values(op, p))
        pap = ip(p, ap)
        alpha = np.where(np.abs(pap) > 0, rz / np.where(pap == 0, 1, pap), 0.0)
        x = basis.micro(x + alpha[..., None] * p)
        r = g - basis.micro(apply_L_values(op, x)) if it % 20 == 19 else r - alpha[..., None] * ap
        z = basis.micro(r / op.nu)
        rz_new = ip(r, z)
        beta = np.where(rz != 0, rz_new / np.where(rz == 0, 1, rz), 0.0)
        p = z + beta[..., None] * p
        rz = rz_new
        res = grid.norm(g - apply_L_values(op, x)) / gnorm
        it += 1
    worst = float(np.max(res))
    if worst > tol:
        raise SolveError(worst, it)
    return x, worst, it


def _slice_values(f, grid):
    if isinstance(f, KineticSlice):
        if f.grid_id != grid.grid_id:
            raise ValueError("slice/grid mismatch")
        return f.values
    vals = np.asarray(f, float)
    if vals.shape[-1] != grid.size:
        raise ValueError("slice/grid mismatch")
    return vals


def apply_L(g, state: FluidPoint, backend: CollisionBackend, grid: VelocityGrid) -> KineticSlice:
    rho, u, T = state.arrays()
    op = operator_data(backend, grid, rho, u, T)
    return KineticSlice(apply_L_values(op, _slice_values(g, grid)), grid.grid_id)


def invert_L(g, state: FluidPoint, backend: CollisionBackend, grid: VelocityGrid) -> KineticSlice:
    rho, u, T = state.arrays()
    op = operator_data(backend, grid, rho, u, T)
    h, _, _ = invert_L_values(op, _slice_values(g, grid), backend)
    return KineticSlice(h, grid.grid_id)


# ---------------------------------------------------------------- nonlinear model and quadratic terms


@dataclass(frozen=True, eq=False)
class Tangent:
    """Derivatives of the Maxwellian with respect to (rho, u1, u2, u3, T) at a reference state."""

    grid: VelocityGrid
    rho: np.ndarray
    u: np.ndarray
    T: np.ndarray
    mu: np.ndarray
    w: np.ndarray
    w2: np.ndarray
    d: np.ndarray  # (..., 5, N)
    jac_inv: np.ndarray  # (..., 5, 5): moments -> parameter increments


def tangent(grid: VelocityGrid, rho, u, T) -> Tangent:
    rho, u, T = np.asarray(rho, float), np.asarray(u, float), np.asarray(T, float)
    mu = maxwellian_values(grid, rho, u, T)
    w = grid.nodes - u[..., None, :]
    w2 = np.einsum("...ij,...ij->...i", w, w)
    t = T[..., None]
    a = w2 / (2 * t * t) - 1.5 / t
    d = np.stack([mu / rho[..., None], mu * w[..., 0] / t, mu * w[..., 1] / t, mu * w[..., 2] / t, mu * a], axis=-2)
    jac = moment_array(d, grid)  # (..., 5 params, 5 moments)
    jac_inv = np.linalg.inv(np.swapaxes(jac, -1, -2))
    return Tangent(grid, rho, u, T, mu, w, w2, d, jac_inv)


def _param_increment(tan: Tangent, F: np.ndarray) -> np.ndarray:
    return np.einsum("...pm,...m->...p", tan.jac_inv, moment_array(F, tan.grid))


def _hessian(tan: Tangent, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    t = tan.T[..., None]
    r = tan.rho[..., None]
    w, w2, mu = tan.w, tan.w2, tan.mu
    a = w2 / (2 * t * t) - 1.5 / t
    xr, xu, xt = x[..., 0:1], x[..., 1:4], x[..., 4:5]
    yr, yu, yt = y[..., 0:1], y[..., 1:4], y[..., 4:5]
    xw = np.einsum("...ni,...i->...n", w, xu)
    yw = np.einsum("...ni,...i->...n", w, yu)
    xy = np.sum(xu * yu, axis=-1, keepdims=True)
    h = (xr * yw + yr * xw) / (r * t)
    h = h + (xr * yt + yr * xt) * a / r
    h = h + xw * yw / (t * t) - xy / t
    h = h + (xw * yt + yw * xt) * (a / t - 1 / (t * t))
    h = h + xt * yt * (a * a - w2 / t**3 + 1.5 / (t * t))
    return mu * h


def bgk_second_variation(tan: Tangent, F: np.ndarray, G: np.ndarray, nu_bar: float) -> np.ndarray:
    """One half of the second variation of nu (M[F] - F) at the reference Maxwellian."""
    x = _param_increment(tan, F)
    y = _param_increment(tan, G)
    h = _hessian(tan, x, y)
    hm = moment_array(h, tan.grid)
    proj = np.einsum("...p,...pn->...n", np.einsum("...pm,...m->...p", tan.jac_inv, hm), tan.d)
    return 0.5 * nu_bar * (h - proj)


def discrete_maxwellian(grid: VelocityGrid, F: np.ndarray, iters: int = 8):
    """Maxwellian whose quadrature moments equal those of F (Newton on the five parameters)."""
    m = moment_array(F, grid)
    rho = m[..., 0]
    if np.any(rho <= 0):
        raise ValueError("discrete Maxwellian needs positive mass")
    u = m[..., 1:4] / rho[..., None]
    T = (2 * m[..., 4] / rho - np.sum(u * u, axis=-1)) / 3
    if np.any(T <= 0):
        raise ValueError("discrete Maxwellian needs positive temperature")
    for _ in range(iters):
        tan = tangent(grid, rho, u, T)
        resid = m - moment_array(tan.mu, grid)
        step = np.einsum("...pm,...m->...p", tan.jac_inv, resid)
        rho, u, T = rho + step[..., 0], u + step[..., 1:4], T + step[..., 4]
        if np.max(np.abs(step)) < 1e-15:
            break
    return maxwellian_values(grid, rho, u, T), (rho, u, T)


def model_collision(F: np.ndarray, grid: VelocityGrid, backend: CollisionBackend) -> np.ndarray:
    """Full nonlinear collision term Q(F, F) of the configured model."""
    if backend.kind == "hard-sphere-quad":
        return hs_bilinear(F, F, grid, backend)
    if backend.nu_c0 is not None:
        raise ValueError("the nonlinear bgk model is defined for constant collision frequency only")
    M, _ = discrete_maxwellian(grid, F)
    return backend.nu_bar * (M - F)


def q_sym(F: np.ndarray, G: np.ndarray, tan: Tangent, backend: CollisionBackend) -> np.ndarray:
    """Symmetric quadratic collision term: (Q(F,G) + Q(G,F))/2 for a bilinear kernel, half the
    second variation of the model at the reference state for bgk."""
    if backend.kind == "hard-sphere-quad":
        return 0.5 * (hs_bilinear(F, G, tan.grid, backend) + hs_bilinear(G, F, tan.grid, backend))
    if backend.nu_c0 is not None:
        raise ValueError("quadratic bgk terms are defined for constant collision frequency only")
    return bgk_second_variation(tan, F, G, backend.nu_bar)


def q_bilinear(F1, F2, backend: CollisionBackend, grid: VelocityGrid, state: FluidPoint | None = None) -> KineticSlice:
    """Bilinear collision form.

    For bgk this is the polarized second variation of the model about ``state`` (default: the
    global equilibrium (1, 0, 1)); for hard spheres the quadrature kernel itself.
    """
    a = _slice_values(F1, grid)
    b = _slice_values(F2, grid)
    if backend.kind == "hard-sphere-quad":
        return KineticSlice(hs_bilinear(a, b, grid, backend), grid.grid_id)
    st = state or FluidPoint(1.0, (0.0, 0.0, 0.0), 1.0)
    rho, u, T = st.arrays()
    return KineticSlice(q_sym(a, b, tangent(grid, rho, u, T), backend), grid.grid_id)


def _angular_nodes(n_polar: int, n_azimuth: int):
    x, wx = np.polynomial.legendre.leggauss(n_polar)
    phi = (np.arange(n_azimuth) + 0.5) * 2 * np.pi / n_azimuth
    ct, ph = np.meshgrid(x, phi, indexing="ij")
    st = np.sqrt(1 - ct * ct)
    omega = np.stack([st * np.cos(ph), st * np.sin(ph), ct], axis=-1).reshape(-1, 3)
    wts = np.repeat(wx, n_azimuth) * (2 * np.pi / n_azimuth)
    return omega, wts


def _hemisphere(n_polar: int, n_azimuth: int):
    """Angular nodes with omega3 > 0 and doubled weights.

    omega and -omega give the same post-collision pair, and the product rule is symmetric under
    omega -> -omega when n_polar and n_azimuth are even.
    """
    omega, wts = _angular_nodes(n_polar, n_azimuth)
    if n_polar % 2 or n_azimuth % 2:
        return omega, wts
    up = omega[:, 2] > 0
    return omega[up], 2 * wts[up]


def _cube_ratio(f: np.ndarray, grid: VelocityGrid, ref: np.ndarray) -> np.ndarray:
    n = grid.n_per_axis
    cube = np.zeros((n, n, n))
    cube[grid.index[:, 0], grid.index[:, 1], grid.index[:, 2]] = f / ref
    # fill cropped corners by nearest kept value so ratio interpolation stays smooth
    mask = np.zeros((n, n, n), bool)
    mask[grid.index[:, 0], grid.index[:, 1], grid.index[:, 2]] = True
    if not mask.all():
        idx = ndimage.distance_transform_edt(~mask, return_distances=False, return_indices=True)
        cube = cube[tuple(idx)]
    return ndimage.spline_filter(cube, order=2, mode="nearest")


def _interp(coeffs: np.ndarray, grid: VelocityGrid, pts: np.ndarray) -> np.ndarray:
    ax = grid.axis
    h = ax[1] - ax[0]
    coords = ((pts - ax[0]) / h).reshape(-1, 3).T
    vals = ndimage.map_coordinates(coeffs, coords, order=2, mode="nearest", prefilter=False)
    return vals.reshape(pts.shape[:-1])


def hs_bilinear(F: np.ndarray, G: np.ndarray, grid: VelocityGrid, backend: CollisionBackend, ref_state=None) -> np.ndarray:
    """Hard-sphere Q(F, G) by quadrature over u-nodes x angular nodes.

    Post-collision values are interpolated as ratios to a reference Maxwellian (exact when F and
    G are that Maxwellian times a quadratic), then a least-squares moment correction removes the
    residual drift of the five collision invariants.
    """
    if grid.scheme != "uniform-tensor":
        raise ValueError("hard-sphere bilinear quadrature needs a uniform tensor grid")
    rs = ref_state or FluidPoint(1.0, (0.0, 0.0, 0.0), 1.0)
    rho, u, T = rs.arrays()
    ref = maxwellian_values(grid, rho, u, T)
    cf = _cube_ratio(F, grid, ref)
    cg = _cube_ratio(G, grid, ref)
    omega, ow = _hemisphere(backend.n_polar, backend.n_azimuth)
    v = grid.nodes
    wts = grid.weights
    out = np.zeros(grid.size)
    chunk = max(1, 200000 // (grid.size * len(ow)) + 1)
    for s in range(0, grid.size, chunk):
        vi = v[s : s + chunk]  # (c, 3)
        rel = vi[:, None, :] - v[None, :, :]  # (c, N, 3)
        proj = np.einsum("cnk,ak->cna", rel, omega)  # (c, N, A)
        b = np.abs(proj) * ow
        vp = vi[:, None, None, :] - proj[..., None] * omega[None, None, :, :]
        up = v[None, :, None, :] + proj[..., None] * omega[None, None, :, :]
        # energy conservation: M(v') M(v'_*) = M(v) M(v_*)
        mref = (ref[s : s + chunk, None] * ref[None, :])[..., None]
        gain = _interp(cf, grid, vp) * _interp(cg, grid, up) * mref
        loss = F[s : s + chunk, None, None] * G[None, :, None]
        out[s : s + chunk] = np.einsum("cna,n->c", b * (gain - loss), wts)
    # conservative correction
    psi = np.column_stack([np.ones(grid.size), v, np.einsum("ij,ij->i", v, v)])
    c = psi.T * wts
    lam = np.linalg.solve(c @ c.T, c @ out)
    return out - c.T @ lam


# ---------------------------------------------------------------- Burnett functions and transport


@dataclass(frozen=True)
class BurnettTensors:
    A: np.ndarray  # (3, 3, N)
    B: np.ndarray  # (3, N)
    grid_id: str


def burnett_values(grid: VelocityGrid, rho, u, T):
    """A (..., 3, 3, N) and B (..., 3, N) at one or many states."""
    rho, u, T = np.asarray(rho, float), np.asarray(u, float), np.asarray(T, float)
    sq = np.sqrt(maxwellian_values(grid, rho, u, T))
    w = grid.nodes - u[..., None, :]
    w2 = np.einsum("...ij,...ij->...i", w, w)
    t = T[..., None]
    A = np.einsum("...ni,...nj->...ijn", w, w) / t[..., None, None]
    eye = np.eye(3)[..., None]
    A = (A - eye * (w2 / (3 * t))[..., None, None, :]) * sq[..., None, None, :]
    B = np.moveaxis(w, -1, -2) / (2 * np.sqrt(t[..., None])) * ((w2 / t - 5) * sq)[..., None, :]
    return A, B


def burnett(state: FluidPoint, grid: VelocityGrid) -> BurnettTensors:
    rho, u, T = state.arrays()
    A, B = burnett_values(grid, rho, u, T)
    return BurnettTensors(A, B, grid.grid_id)


@dataclass(frozen=True)
class TransportCoeffs:
    mu: float
    kappa: float

    def __post_init__(self):
        if not (self.mu > 0 and self.kappa > 0):
            raise ValueError(f"transport coefficients must be positive, got mu={self.mu}, kappa={self.kappa}")


def transport_values(backend: CollisionBackend, grid: VelocityGrid, rho, u, T):
    """mu(T) and kappa(T) arrays plus the A33 diagnostic <T A33, L^-1 A33>."""
    op = operator_data(backend, grid, rho, u, T)
    A, B = burnett_values(grid, rho, u, T)
    a31 = A[..., 2, 0, :]
    a33 = A[..., 2, 2, :]
    b3 = B[..., 2, :]
    T = np.asarray(T, float)
    la31, _, _ = invert_L_values(op, op.basis.micro(a31), backend, check=False)
    lb3, _, _ = invert_L_values(op, op.basis.micro(b3), backend, check=False)
    la33, _, _ = invert_L_values(op, op.basis.micro(a33), backend, check=False)
    mu = T * grid.inner(a31, la31)
    kappa = 2.0 / 3.0 * T * grid.inner(b3, lb3)
    diag = T * grid.inner(a33, la33)
    return mu, kappa, diag


def transport_coeffs(state: FluidPoint, backend: CollisionBackend, grid: VelocityGrid) -> TransportCoeffs:
    rho, u, T = state.arrays()
    mu, kappa, _ = transport_values(backend, grid, rho, u, T)
    return TransportCoeffs(float(mu), float(kappa))


def bgk_transport_closed_form(rho: float, T: float, nu_bar: float) -> TransportCoeffs:
    """mu = rho T / nu_bar and kappa = (2/3) T <B3, B3> / nu_bar with <B3, B3> = 5 rho / 2."""
    return TransportCoeffs(rho * T / nu_bar, 5.0 * rho * T / (3.0 * nu_bar))


def coercivity_constant(backend: CollisionBackend, grid: VelocityGrid, state: FluidPoint, samples: int = 100, seed: int = 0) -> float:
    """Smallest observed <L g, g> / |(I-P) g|_nu^2 over random g."""
    rho, u, T = state.arrays()
    op = operator_data(backend, grid, rho, u, T)
    rng = np.random.default_rng(seed)
    sq = op.basis.sqrt_mu
    best = np.inf
    for _ in range(samples):
        g = rng.standard_normal(grid.size) * sq ** 0.5
        m = op.basis.micro(g)
        num = grid.inner(apply_L_values(op, g), g)
        den = grid.inner(op.nu * m, m)
        best = min(best, num / den)
    return float(best)


# ---------------------------------------------------------------- power-series expansion of the collision term


def _series_mul(a, b, n):
    return sum(a[k] * b[n - k] for k in range(n + 1))


def _series_exp(a, order):
    out = [np.exp(a[0])]
    for n in range(1, order + 1):
        out.append(sum(k * a[k] * out[n - k] for k in range(1, n + 1)) / n)
    return out


def _series_log(a, order):
    out = [np.log(a[0])]
    for n in range(1, order + 1):
        acc = a[n] - sum(k * out[k] * a[n - k] for k in range(1, n)) / n
        out.append(acc / a[0])
    return out


def _series_recip(a, order):
    out = [1.0 / a[0]]
    for n in range(1, order + 1):
        out.append(-sum(a[k] * out[n - k] for k in range(1, n + 1)) / a[0])
    return out


def _maxwellian_series(grid, rho, u, T, order):
    """Coefficients of M(rho(s), u(s), T(s)) given parameter series (lists of arrays)."""
    lr = _series_log(rho, order)
    lt = _series_log(T, order)
    it = _series_recip(T, order)
    w = [grid.nodes - u[0][..., None, :]] + [-uk[..., None, :] for uk in u[1:]]
    w2 = [sum(np.einsum("...ni,...ni->...n", w[k], w[n - k]) for k in range(n + 1)) for n in range(order + 1)]
    phi = []
    for n in range(order + 1):
        c = lr[n][..., None] - 1.5 * lt[n][..., None] - 0.5 * sum(w2[k] * it[n - k][..., None] for k in range(n + 1))
        if n == 0:
            c = c - 1.5 * np.log(2 * np.pi)
        phi.append(c)
    return _series_exp(phi, order)


def collision_series(terms, grid: VelocityGrid, backend: CollisionBackend, base_state, order: int):
    """Taylor coefficients in s of Q(sum_j s^j terms[j]) up to ``order``.

    ``terms[0]`` must be the Maxwellian of ``base_state = (rho, u, T)`` (arrays broadcasting over
    leading axes). For a bilinear kernel the n-th coefficient is sum_{i+j=n} Q(G_i, G_j); for the
    bgk model it is nu (M_n - G_n) with M_n the exact Taylor coefficient of the discrete Maxwellian.
    """
    terms = list(terms) + [np.zeros_like(terms[0])] * max(0, order + 1 - len(terms))
    if backend.kind == "hard-sphere-quad":
        out = []
        for n in range(order + 1):
            acc = np.zeros_like(terms[0])
            for i in range(n + 1):
                if i == 0 and n == 0:
                    continue
                if np.any(terms[i]) and np.any(terms[n - i]):
                    acc = acc + hs_bilinear(terms[i], terms[n - i], grid, backend)
            out.append(acc)
        return out
    if backend.nu_c0 is not None:
        raise ValueError("collision series for bgk requires a constant collision frequency")
    rho0, u0, T0 = (np.asarray(x, float) for x in base_state)
    tan = tangent(grid, rho0, u0, T0)
    m = [moment_array(t, grid) for t in terms]
    rho, u, T = [rho0], [u0], [T0]
    for n in range(1, order + 1):
        rho.append(np.zeros_like(rho0))
        u.append(np.zeros_like(u0))
        T.append(np.zeros_like(T0))
        rest = _maxwellian_series(grid, rho, u, T, n)[n]
        step = np.einsum("...pm,...m->...p", tan.jac_inv, m[n] - moment_array(rest, grid))
        rho[n], u[n], T[n] = step[..., 0], step[..., 1:4], step[..., 4]
    M = _maxwellian_series(grid, rho, u, T, order)
    out = [backend.nu_bar * (M[0] - terms[0])]
    out += [backend.nu_bar * (M[n] - terms[n]) for n in range(1, order + 1)]
    return out
