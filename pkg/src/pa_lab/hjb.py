"""Backward finite-difference solution of the principal's integro-HJB equations.

State is (t, x, y): wealth x and accrued contract value y.  The equation is

    dv/dt + (x - y) f(t) + sup_controls H(v; z, z_x, g, g_x, u) = 0

solved backward from the terminal slice (zero for the bounded-default case,
(1 - F(T)) (x - y) for the unbounded case).  H couples the value function to
itself through the nonlocal default-jump term lam * (v(t, x, y+u) - v(t, x, y)),
so the solver alternates between stepping the PDE with frozen controls and
re-maximising H pointwise over a coarse-to-fine control grid, with relaxed
control updates ("actor-critic" iteration).

Discretisation: explicit backward Euler in time with first-order terms
upwinded (implemented in the algebraically identical central + artificial
diffusion form), central second differences, linear-extrapolation ghost
cells at the spatial edges, and sub-stepping whenever the stability bound
tightens beyond the stored time step.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from functools import cached_property

import numpy as np

from pa_lab import default_time as dft
from pa_lab.contract import ControlTuple, jump_compensation
from pa_lab.default_time import DefaultModel
from pa_lab.market import MarketParams, risk_premium

BOUNDED = "bounded"
UNBOUNDED = "unbounded"


class ConfigError(ValueError):
    """Raised for misconfigured grids or control ranges."""


class StepSizeError(RuntimeError):
    """Raised when the stability bound would require absurd sub-stepping."""


# ---------------------------------------------------------------------------
# grids


@dataclass(frozen=True)
class GridSpec:
    """Uniform (t, x, y) grid on [0, T] x x_range x y_range."""

    nt: int
    nx: int
    ny: int
    t_max: float = 1.0
    x_range: tuple[float, float] = (0.0, 10.0)
    y_range: tuple[float, float] = (0.0, 10.0)

    def __post_init__(self):
        if self.nx < 8 or self.ny < 8:
            raise ConfigError(f"nx and ny must be >= 8, got {self.nx}, {self.ny}")
        if self.nt < 2:
            raise ConfigError(f"nt must be >= 2, got {self.nt}")
        if self.t_max <= 0:
            raise ConfigError("t_max must be positive")
        if self.x_range[0] >= self.x_range[1] or self.y_range[0] >= self.y_range[1]:
            raise ConfigError("empty spatial range")

    @cached_property
    def t(self) -> np.ndarray:
        return np.linspace(0.0, self.t_max, self.nt)

    @cached_property
    def x(self) -> np.ndarray:
        return np.linspace(*self.x_range, self.nx)

    @cached_property
    def y(self) -> np.ndarray:
        return np.linspace(*self.y_range, self.ny)

    @property
    def dt(self) -> float:
        return self.t_max / (self.nt - 1)

    @property
    def dx(self) -> float:
        return (self.x_range[1] - self.x_range[0]) / (self.nx - 1)

    @property
    def dy(self) -> float:
        return (self.y_range[1] - self.y_range[0]) / (self.ny - 1)


@dataclass
class ValueGrid:
    values: np.ndarray  # (nt, nx, ny)
    spec: GridSpec

    def copy(self) -> "ValueGrid":
        return ValueGrid(self.values.copy(), self.spec)


@dataclass
class PolicyGrid:
    """Per-node optimal control fields, all shaped (nt, nx, ny)."""

    z: np.ndarray
    z_x: np.ndarray
    g: np.ndarray
    g_x: np.ndarray
    u: np.ndarray
    spec: GridSpec

    @staticmethod
    def zeros(spec: GridSpec) -> "PolicyGrid":
        shape = (spec.nt, spec.nx, spec.ny)
        return PolicyGrid(*(np.zeros(shape) for _ in range(5)), spec=spec)

    def fields(self) -> dict[str, np.ndarray]:
        return {"z": self.z, "z_x": self.z_x, "g": self.g, "g_x": self.g_x, "u": self.u}

    def tuple_at(self, i: int, j: int, k: int) -> ControlTuple:
        return ControlTuple(
            z=np.array([self.z[i, j, k]]),
            z_x=float(self.z_x[i, j, k]),
            g=np.array([self.g[i, j, k]]),
            g_x=float(self.g_x[i, j, k]),
            u=float(self.u[i, j, k]),
        )

    def copy(self) -> "PolicyGrid":
        return PolicyGrid(
            self.z.copy(), self.z_x.copy(), self.g.copy(), self.g_x.copy(),
            self.u.copy(), self.spec,
        )


@dataclass(frozen=True)
class SolverConfig:
    """Control-grid ranges/resolutions and actor-critic iteration knobs."""

    z_lo: float = -2.0
    z_hi: float = 2.0
    z_n: int = 9
    zx_lo: float = -2.0
    zx_hi: float = 2.0
    zx_n: int = 9
    g_lo: float = -2.0
    g_hi: float = 2.0
    g_n: int = 9
    gx_lo: float = -2.0
    gx_hi: float = 10.0
    gx_n: int = 13
    u_lo: float = -2.0
    u_hi: float = 2.0
    u_n: int = 41
    refine_levels: int = 2       # depth used for the final greedy sweep
    refine_levels_iter: int = 1  # depth used inside the iteration loop
    refine_points: int = 5
    refine_shrink: float = 5.0
    coarse_rescan_every: int = 4  # full coarse scan every k-th iteration
    max_iter: int = 60
    tol: float = 1e-4
    w_start: float = 0.5
    w_end: float = 0.99
    ramp: int = 10
    pd_margin: float = 1e-3
    stability_safety: float = 0.9
    max_substeps: int = 200_000
    residual_tol: float = 1e-3

    def with_contract_class(self, contract_class: str, p: float | None = None) -> "SolverConfig":
        """Pin control axes for the restricted contract classes.

        'linear' pins the wealth incentive z_x to the constant percentage p;
        'no_s' pins z = g = 0 (asset not contractible); 'general' is a no-op.
        """
        if contract_class == "general":
            return self
        if contract_class == "linear":
            if p is None:
                raise ConfigError("linear contract class needs the percentage p")
            return replace(self, zx_lo=p, zx_hi=p, zx_n=1)
        if contract_class == "no_s":
            return replace(self, z_lo=0.0, z_hi=0.0, z_n=1, g_lo=0.0, g_hi=0.0, g_n=1)
        raise ConfigError(f"unknown contract_class {contract_class!r}")


# ---------------------------------------------------------------------------
# scalar market reduction (the solver state space is m = d = 1)


@dataclass(frozen=True)
class _ScalarMarket:
    b: float
    s2: float        # sigma sigma^T
    stheta: float    # sigma theta (= b when sigma sigma^T is invertible)
    sigma: float     # sqrt of s2 (sign taken from the matrix entry)
    alpha: float
    eta: float
    lo: float
    hi: float
    x0: float


def _scalar_market(p: MarketParams) -> _ScalarMarket:
    if p.m != 1:
        raise ConfigError("the HJB state space is implemented for a single asset (m = 1)")
    s2 = float(p.sigma_sigma_T[0, 0])
    stheta = float((p.sigma @ risk_premium(p))[0])
    return _ScalarMarket(
        b=float(p.b[0]),
        s2=s2,
        stheta=stheta,
        sigma=math.sqrt(s2),
        alpha=float(p.alpha[0]),
        eta=p.eta,
        lo=float(p.constraint_lo[0]),
        hi=float(p.constraint_hi[0]),
        x0=p.x0,
    )


def _axis(lo: float, hi: float, n: int) -> np.ndarray:
    if n < 1:
        raise ConfigError("control axis needs at least one point")
    if n == 1:
        if hi != lo:
            # single-point axis pins the midpoint of a degenerate range
            return np.array([0.5 * (lo + hi)])
        return np.array([lo])
    vals = np.linspace(lo, hi, n)
    if lo < 0.0 < hi:
        vals[int(np.argmin(np.abs(vals)))] = 0.0  # keep the zero tuple scannable
    return vals


def control_axes(mk: _ScalarMarket, cfg: SolverConfig) -> dict[str, np.ndarray]:
    """Scan axes for (z, z_x, g, g_x, u); g_x is clamped to the admissible range."""
    gx_cap = 1.0 / mk.s2 - cfg.pd_margin
    gx_hi = min(cfg.gx_hi, gx_cap)
    if cfg.gx_lo > gx_hi:
        raise ConfigError(
            f"g_x grid [{cfg.gx_lo}, {cfg.gx_hi}] is empty after the admissibility "
            f"clamp at {gx_cap}"
        )
    return {
        "z": _axis(cfg.z_lo, cfg.z_hi, cfg.z_n),
        "z_x": _axis(cfg.zx_lo, cfg.zx_hi, cfg.zx_n),
        "g": _axis(cfg.g_lo, cfg.g_hi, cfg.g_n),
        "g_x": _axis(cfg.gx_lo, gx_hi, cfg.gx_n),
        "u": _axis(cfg.u_lo, cfg.u_hi, cfg.u_n),
    }


# ---------------------------------------------------------------------------
# pointwise control coefficients (vectorised over candidate/control arrays)


def _coeffs_4d(mk: _ScalarMarket, z, zx, g, gx):
    """Hamiltonian coefficients that do not involve the jump payment u.

    Returns (A, B0, Dxx, Dyy, Dxy, pi): drift in x, drift in y excluding the
    jump compensation part of F, and the three second-order coefficients.
    """
    Q = 0.5 * (1.0 - gx * mk.s2)
    ell = zx * mk.stheta + mk.s2 * g + mk.alpha - mk.eta * zx * mk.s2 * z
    pi = np.clip(ell / (2.0 * Q), mk.lo, mk.hi)
    F0 = -pi * pi * Q + pi * ell + (z * mk.b - 0.5 * mk.alpha**2 - 0.5 * mk.eta * z * z * mk.s2)
    A = pi * mk.stheta
    pis2 = pi * pi * mk.s2
    B0 = z * mk.b + zx * pi * mk.stheta + 0.5 * pis2 * (gx + mk.eta * zx * zx) + pi * mk.s2 * g - F0
    cvol = z + zx * pi
    Dxx = 0.5 * pis2
    Dyy = 0.5 * cvol * cvol * mk.s2
    Dxy = pi * cvol * mk.s2
    return A, B0, Dxx, Dyy, Dxy, pi


def _jump_comp(mk: _ScalarMarket, lam, u):
    """-(lam/eta)(exp(-eta u) - 1), the jump part of F."""
    return -lam / mk.eta * np.expm1(-mk.eta * u)


# ---------------------------------------------------------------------------
# discrete differential operator


def _pad_linear(V: np.ndarray) -> np.ndarray:
    """Ghost-pad a slice with linear extrapolation (zero second derivative)."""
    P = np.empty((V.shape[0] + 2, V.shape[1] + 2))
    P[1:-1, 1:-1] = V
    P[0, 1:-1] = 2.0 * V[0] - V[1]
    P[-1, 1:-1] = 2.0 * V[-1] - V[-2]
    P[:, 0] = 2.0 * P[:, 1] - P[:, 2]
    P[:, -1] = 2.0 * P[:, -2] - P[:, -3]
    return P


def _central_derivs(V: np.ndarray, dx: float, dy: float):
    """Central differences (one-sided at edges via the ghost closure)."""
    P = _pad_linear(V)
    vx = (P[2:, 1:-1] - P[:-2, 1:-1]) / (2.0 * dx)
    vy = (P[1:-1, 2:] - P[1:-1, :-2]) / (2.0 * dy)
    vxx = (P[2:, 1:-1] - 2.0 * V + P[:-2, 1:-1]) / dx**2
    vyy = (P[1:-1, 2:] - 2.0 * V + P[1:-1, :-2]) / dy**2
    vxy = (P[2:, 2:] + P[:-2, :-2] - P[2:, :-2] - P[:-2, 2:]) / (4.0 * dx * dy)
    return vx, vy, vxx, vyy, vxy


def _yshift_weights(ygrid: np.ndarray, yq: np.ndarray):
    """Linear-interpolation indices/weights along y; out-of-grid queries
    extrapolate with the one-sided boundary slope.  Queries landing exactly
    on a node come back with weight zero (node value reproduced exactly)."""
    ny = ygrid.shape[0]
    idx = np.clip(np.searchsorted(ygrid, yq, side="right") - 1, 0, ny - 2)
    w = (yq - ygrid[idx]) / (ygrid[1] - ygrid[0])
    return idx, w


def _shift_slice(V: np.ndarray, ygrid: np.ndarray, u_field: np.ndarray) -> np.ndarray:
    """v(x, y + u) for a per-node shift field, linear in y with extrapolation."""
    yq = ygrid[None, :] + u_field
    idx, w = _yshift_weights(ygrid, yq)
    rows = np.arange(V.shape[0])[:, None]
    return V[rows, idx] * (1.0 - w) + V[rows, idx + 1] * w


def _apply_H(mk: _ScalarMarket, V: np.ndarray, fields: dict, lam: float,
             dx: float, dy: float, ygrid: np.ndarray, include_jump: bool = True):
    """Discrete Hamiltonian applied to a value slice under frozen controls.

    First-order terms are upwinded through the equivalent artificial
    diffusion |A| dx/2 * vxx + |B| dy/2 * vyy.  Returns (H, rate) where rate
    is the per-node stability rate of the explicit update.
    """
    z, zx, g, gx, u = fields["z"], fields["z_x"], fields["g"], fields["g_x"], fields["u"]
    A, B0, Dxx, Dyy, Dxy, _ = _coeffs_4d(mk, z, zx, g, gx)
    if include_jump:
        B = B0 - _jump_comp(mk, lam, u)
    else:
        B = B0
    vx, vy, vxx, vyy, vxy = _central_derivs(V, dx, dy)
    H = (
        A * vx
        + B * vy
        + (Dxx + 0.5 * np.abs(A) * dx) * vxx
        + (Dyy + 0.5 * np.abs(B) * dy) * vyy
        + Dxy * vxy
    )
    if include_jump and lam > 0.0:
        H = H + lam * (_shift_slice(V, ygrid, u) - V)
    rate = (
        2.0 * Dxx / dx**2
        + np.abs(A) / dx
        + 2.0 * Dyy / dy**2
        + np.abs(B) / dy
        + 2.0 * np.abs(Dxy) / (dx * dy)
        + (lam if include_jump else 0.0)
    )
    return H, rate


# ---------------------------------------------------------------------------
# spec-level operations


def terminal_condition(case: str, m: DefaultModel, x, y, t_max: float | None = None):
    """Terminal value: zero for the bounded case, (1 - F(T)) (x - y) otherwise."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if case == BOUNDED:
        out = np.zeros(np.broadcast(x, y).shape) + 0.0 * (x + y)
    elif case == UNBOUNDED:
        T = m.horizon if t_max is None else t_max
        out = (1.0 - float(dft.cdf(m, T))) * (x - y)
    else:
        raise ConfigError(f"unknown case {case!r}")
    return float(out) if out.ndim == 0 else out


def jump_evaluate(v: ValueGrid, t_i: int, x_j: int, y: float, u: float) -> float:
    """v(t_i, x_j, y + u) by linear interpolation in y (linear extrapolation
    with the boundary slope beyond the grid)."""
    col = v.values[t_i, x_j, :]
    ygrid = v.spec.y
    yq = np.asarray([y + u])
    idx, w = _yshift_weights(ygrid, yq)
    return float(col[idx[0]] * (1.0 - w[0]) + col[idx[0] + 1] * w[0])


def grid_derivatives(v: ValueGrid, i: int, j: int, k: int) -> dict[str, float]:
    """Central finite differences of slice i at node (j, k)."""
    vx, vy, vxx, vyy, vxy = _central_derivs(v.values[i], v.spec.dx, v.spec.dy)
    return {
        "vx": float(vx[j, k]),
        "vy": float(vy[j, k]),
        "vxx": float(vxx[j, k]),
        "vyy": float(vyy[j, k]),
        "vxy": float(vxy[j, k]),
    }


def hamiltonian(p: MarketParams, m: DefaultModel, v: ValueGrid, node: tuple[int, int, int],
                ct: ControlTuple, derivs: dict[str, float],
                jump_slice: int | None = None) -> float:
    """Discrete Hamiltonian at one node for one control tuple.

    ``derivs`` holds the central differences (vx, vy, vxx, vyy, vxy); the
    first-order terms are upwinded via the artificial-diffusion form, and the
    nonlocal term reads the value slice ``jump_slice`` (the node's own time
    slice by default) at y + u, with the hazard evaluated at the node's time.
    """
    i, j, k = node
    mk = _scalar_market(p)
    spec = v.spec
    lam = float(dft.hazard(m, spec.t[i]))
    z = float(ct.z[0])
    g = float(ct.g[0])
    A, B0, Dxx, Dyy, Dxy, _ = _coeffs_4d(mk, z, ct.z_x, g, ct.g_x)
    B = B0 - jump_compensation(mk.eta, lam, ct.u)
    H = (
        A * derivs["vx"]
        + B * derivs["vy"]
        + (Dxx + 0.5 * abs(A) * spec.dx) * derivs["vxx"]
        + (Dyy + 0.5 * abs(B) * spec.dy) * derivs["vyy"]
        + Dxy * derivs["vxy"]
    )
    if lam > 0.0:
        sl = i if jump_slice is None else jump_slice
        shifted = jump_evaluate(v, sl, j, float(spec.y[k]), ct.u)
        H += lam * (shifted - v.values[sl, j, k])
    return float(H)


# ---------------------------------------------------------------------------
# pointwise maximisation of H over the control grid


def _tiebreak_argmax(H: np.ndarray, norms: np.ndarray) -> np.ndarray:
    """Argmax along axis 1; exact ties resolved by the smallest control norm."""
    rows = np.arange(H.shape[0])
    j = H.argmax(axis=1)
    ties = H == H[rows, j][:, None]
    if np.count_nonzero(ties) > H.shape[0]:
        masked = np.where(ties, norms if norms.ndim == 2 else norms[None, :], np.inf)
        j = masked.argmin(axis=1)
    return j


def _refine_axis(inc: np.ndarray, width: float, n: int, lo: float, hi: float) -> np.ndarray:
    """Per-node candidate values: incumbent +/- width, clipped to the range."""
    offsets = np.linspace(-width, width, n)
    return np.clip(inc[:, None] + offsets[None, :], lo, hi)


@dataclass
class _CoarseTable:
    """Slab-independent data of the coarse (z, z_x, g, g_x) scan."""

    cand: np.ndarray    # (4, M) candidate values
    C5: np.ndarray      # (M, 5) coefficients against (vx, vy, vxx, vyy, vxy)
    norms: np.ndarray   # (M,)


def _coarse_table(mk: _ScalarMarket, axes: dict, dx: float, dy: float) -> _CoarseTable:
    zc, zxc, gc, gxc = np.meshgrid(
        axes["z"], axes["z_x"], axes["g"], axes["g_x"], indexing="ij"
    )
    cand = np.stack([zc.ravel(), zxc.ravel(), gc.ravel(), gxc.ravel()])
    A, B0, Dxx, Dyy, Dxy, _ = _coeffs_4d(mk, *cand)
    # upwinding of the drift folded in as artificial diffusion; the jump
    # compensation offset of the y-drift is ignored here (it is restored in
    # the exact refinement passes)
    C5 = np.stack(
        [A, B0, Dxx + 0.5 * np.abs(A) * dx, Dyy + 0.5 * np.abs(B0) * dy, Dxy], axis=1
    )
    return _CoarseTable(cand=cand, C5=C5, norms=(cand**2).sum(axis=0))


def _refine_H(mk: _ScalarMarket, z, zx, g, gx, jc, cols, dx: float, dy: float):
    """Exact discrete Hamiltonian (minus u-only terms) for (N, R) candidates."""
    vx, vy, vxx, vyy, vxy = cols
    s2, eta, st = mk.s2, mk.eta, mk.stheta
    Q = 0.5 * (1.0 - s2 * gx)
    ell = st * zx + s2 * g + mk.alpha - (eta * s2) * (zx * z)
    pi = np.clip(ell / (2.0 * Q), mk.lo, mk.hi)
    F0 = mk.b * z - (0.5 * eta * s2) * (z * z) - 0.5 * mk.alpha**2
    F0 += pi * ell
    F0 -= (pi * pi) * Q
    A = st * pi
    pis2 = pi * pi * s2
    B0 = mk.b * z + st * (zx * pi) + 0.5 * pis2 * (gx + eta * zx * zx) + s2 * (pi * g)
    B0 -= F0
    cvol = z + zx * pi
    H = A * vx
    H += np.abs(A) * ((0.5 * dx) * vxx)
    H += B0 * vy
    H += np.abs(B0 - jc) * ((0.5 * dy) * vyy)
    H += (0.5 * pis2) * vxx
    H += (0.5 * s2) * (cvol * cvol) * vyy
    H += (s2 * (pi * cvol)) * vxy
    return H, B0


try:
    from numba import njit as _njit

    @_njit(cache=True, fastmath=False)
    def _refine_block_kernel(zc, zxc, gc, gxc, jc, vx, vy, vxx, vyy, vxy,
                             s2, eta, st, b, alpha, lo, hi, dx, dy):
        """Fused block scan: per node, argmax of H over the 4-d candidate
        product, ties broken by the smallest control norm."""
        N = zc.shape[0]
        nz, nzx, ng, ngx = zc.shape[1], zxc.shape[1], gc.shape[1], gxc.shape[1]
        out = np.empty(N, np.int64)
        for n in range(N):
            dvx, dvy = vx[n], vy[n]
            dvxx, dvyy, dvxy = vxx[n], vyy[n], vxy[n]
            jcn = jc[n]
            best_h = -1e300
            best_norm = 1e300
            best = 0
            idx = 0
            for iz in range(nz):
                z = zc[n, iz]
                f_z = b * z - 0.5 * eta * s2 * z * z - 0.5 * alpha * alpha
                for izx in range(nzx):
                    zx = zxc[n, izx]
                    ell0 = st * zx + alpha - eta * s2 * zx * z
                    for ig in range(ng):
                        g = gc[n, ig]
                        ell = ell0 + s2 * g
                        for igx in range(ngx):
                            gx = gxc[n, igx]
                            Q = 0.5 * (1.0 - s2 * gx)
                            pi = ell / (2.0 * Q)
                            if pi < lo:
                                pi = lo
                            elif pi > hi:
                                pi = hi
                            F0 = f_z + pi * ell - pi * pi * Q
                            A = st * pi
                            pis2 = pi * pi * s2
                            B0 = (b * z + st * zx * pi
                                  + 0.5 * pis2 * (gx + eta * zx * zx)
                                  + s2 * pi * g - F0)
                            cvol = z + zx * pi
                            h = (A * dvx + B0 * dvy
                                 + (0.5 * pis2 + 0.5 * abs(A) * dx) * dvxx
                                 + (0.5 * s2 * cvol * cvol
                                    + 0.5 * abs(B0 - jcn) * dy) * dvyy
                                 + s2 * pi * cvol * dvxy)
                            if h > best_h:
                                best_h = h
                                best = idx
                                best_norm = z * z + zx * zx + g * g + gx * gx
                            elif h == best_h:
                                nrm = z * z + zx * zx + g * g + gx * gx
                                if nrm < best_norm:
                                    best = idx
                                    best_norm = nrm
                            idx += 1
            out[n] = best
        return out

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a hard dependency in practice
    _HAVE_NUMBA = False


def _maximize_slab(mk: _ScalarMarket, axes: dict, table: _CoarseTable,
                   V: np.ndarray, lam: float, dx: float, dy: float,
                   ygrid: np.ndarray, u_seed: np.ndarray,
                   refine_levels: int, refine_points: int, refine_shrink: float,
                   include_jump: bool = True, seed_fields: dict | None = None,
                   post_refine: bool = False):
    """Greedy controls for one time slab against the value slice V.

    The scan decouples into the (z, z_x, g, g_x) block and the 1-d jump
    payment u; the blocks are solved by coordinate ascent (u feeds back into
    the block scan only through the upwinding of the y-drift, which carries
    the jump compensation part of F).  ``seed_fields`` warm-starts the block
    incumbents and skips the coarse scan.
    """
    nx, ny = V.shape
    N = nx * ny
    vx, vy, vxx, vyy, vxy = (a.ravel() for a in _central_derivs(V, dx, dy))
    cols = tuple(a[:, None] for a in (vx, vy, vxx, vyy, vxy))
    vyf = vy + 0.5 * dy * vyy
    vyb = vy - 0.5 * dy * vyy
    yflat = np.broadcast_to(ygrid[None, :], (nx, ny)).ravel()
    vflat = V.ravel()
    rows = np.arange(N)

    jc_node = _jump_comp(mk, lam, u_seed.ravel()) if include_jump else np.zeros(N)

    if seed_fields is None:
        D5 = np.stack([vx, vy, vxx, vyy, vxy], axis=1)
        H = D5 @ table.C5.T
        j = _tiebreak_argmax(H, table.norms)
        inc = {k: table.cand[a][j] for a, k in enumerate(("z", "z_x", "g", "g_x"))}
        del H, D5
    else:
        inc = {k: seed_fields[k].ravel().copy() for k in ("z", "z_x", "g", "g_x")}

    def _refine_block(inc, jc_flat, levels, start_level=1):
        r = refine_points
        for level in range(start_level, start_level + levels):
            per_axis = []
            for name in ("z", "z_x", "g", "g_x"):
                ax = axes[name]
                if ax.shape[0] == 1:
                    per_axis.append(np.ascontiguousarray(inc[name][:, None]))
                    continue
                width = (ax[1] - ax[0]) / (refine_shrink ** (level - 1))
                per_axis.append(_refine_axis(inc[name], width, r, ax[0], ax[-1]))
            nz, nzx, ng, ngx = (a.shape[1] for a in per_axis)
            if _HAVE_NUMBA:
                j = _refine_block_kernel(
                    per_axis[0], per_axis[1], per_axis[2], per_axis[3], jc_flat,
                    vx, vy, vxx, vyy, vxy,
                    mk.s2, mk.eta, mk.stheta, mk.b, mk.alpha, mk.lo, mk.hi, dx, dy,
                )
                igx = j % ngx
                ig = (j // ngx) % ng
                izx = (j // (ngx * ng)) % nzx
                iz = j // (ngx * ng * nzx)
                inc = {"z": per_axis[0][rows, iz], "z_x": per_axis[1][rows, izx],
                       "g": per_axis[2][rows, ig], "g_x": per_axis[3][rows, igx]}
            else:
                zb = np.repeat(per_axis[0], nzx * ng * ngx, axis=1)
                zxb = np.tile(np.repeat(per_axis[1], ng * ngx, axis=1), (1, nz))
                gb = np.tile(np.repeat(per_axis[2], ngx, axis=1), (1, nz * nzx))
                gxb = np.tile(per_axis[3], (1, nz * nzx * ng))
                H, _ = _refine_H(mk, zb, zxb, gb, gxb, jc_flat[:, None], cols, dx, dy)
                norms = zb**2 + zxb**2
                norms += gb**2
                norms += gxb**2
                j = _tiebreak_argmax(H, norms)
                inc = {"z": zb[rows, j], "z_x": zxb[rows, j], "g": gb[rows, j],
                       "g_x": gxb[rows, j]}
        return inc

    inc = _refine_block(inc, jc_node, refine_levels)

    # ---- the jump payment u ----------------------------------------------
    if include_jump:
        _, B0, _, _, _, _ = _coeffs_4d(mk, inc["z"], inc["z_x"], inc["g"], inc["g_x"])

        def _u_objective(u_cand):
            # exact y-drift upwinding plus the nonlocal term, (N, R) candidates
            B = B0[:, None] - _jump_comp(mk, lam, u_cand)
            Hy = np.maximum(B, 0.0) * vyf[:, None] + np.minimum(B, 0.0) * vyb[:, None]
            if lam > 0.0:
                yq = yflat[:, None] + u_cand
                idx, w = _yshift_weights(ygrid, yq)
                row = (rows // ny)[:, None]
                shifted = V[row, idx] * (1.0 - w) + V[row, idx + 1] * w
                Hy += lam * (shifted - vflat[:, None])
            return Hy

        u_axis = axes["u"]
        u_cand = np.broadcast_to(u_axis[None, :], (N, u_axis.shape[0]))
        Hu = _u_objective(u_cand)
        j = _tiebreak_argmax(Hu, np.broadcast_to(u_axis[None, :] ** 2, Hu.shape))
        u_inc = u_axis[j]
        if u_axis.shape[0] > 1:
            for level in range(1, refine_levels + 1):
                width = (u_axis[1] - u_axis[0]) / (refine_shrink ** (level - 1))
                u_cand = _refine_axis(u_inc, width, refine_points, u_axis[0], u_axis[-1])
                Hu = _u_objective(u_cand)
                j = _tiebreak_argmax(Hu, u_cand**2)
                u_inc = u_cand[rows, j]
        if post_refine:
            # let the block see the updated jump payment, at the finest width
            inc = _refine_block(inc, _jump_comp(mk, lam, u_inc), 1,
                                start_level=max(1, refine_levels))
    else:
        u_inc = np.zeros(N)

    out = {k: val.reshape(nx, ny) for k, val in inc.items()}
    out["u"] = u_inc.reshape(nx, ny)
    return out


def maximize_hamiltonian(p: MarketParams, m: DefaultModel, v: ValueGrid,
                         node: tuple[int, int, int],
                         cfg: SolverConfig | None = None,
                         include_jump: bool = True) -> ControlTuple:
    """Coarse-to-fine grid argmax of the discrete Hamiltonian at one node.

    The objective is evaluated on the value slice the explicit scheme sees
    when producing the node's slice (the next one in time, or the terminal
    slice itself for the last index); ties pick the smallest-norm tuple.
    """
    cfg = cfg or SolverConfig()
    mk = _scalar_market(p)
    axes = control_axes(mk, cfg)
    spec = v.spec
    i, j, k = node
    data_slice = min(i + 1, spec.nt - 1)
    lam = float(dft.hazard(m, spec.t[i])) if include_jump else 0.0
    table = _coarse_table(mk, axes, spec.dx, spec.dy)
    fields = _maximize_slab(
        mk, axes, table, v.values[data_slice], lam, spec.dx, spec.dy, spec.y,
        u_seed=np.zeros((spec.nx, spec.ny)),
        refine_levels=cfg.refine_levels, refine_points=cfg.refine_points,
        refine_shrink=cfg.refine_shrink, include_jump=include_jump,
        post_refine=True,
    )
    return ControlTuple(
        z=np.array([fields["z"][j, k]]),
        z_x=float(fields["z_x"][j, k]),
        g=np.array([fields["g"][j, k]]),
        g_x=float(fields["g_x"][j, k]),
        u=float(fields["u"][j, k]),
    )


# ---------------------------------------------------------------------------
# PDE stepping with frozen controls


def solve_pde_frozen(p: MarketParams, m: DefaultModel, policy: PolicyGrid, case: str,
                     cfg: SolverConfig | None = None,
                     include_jump: bool = True) -> ValueGrid:
    """Backward explicit time stepping under a frozen policy.

    Each stored step satisfies v_i = v_{i+1} + dt (src + H(v_{i+1})) exactly
    unless the stability bound forces sub-stepping for that slab, in which
    case the slab is integrated with k equal sub-steps of the same frozen
    coefficients.
    """
    cfg = cfg or SolverConfig()
    mk = _scalar_market(p)
    spec = policy.spec
    X, Y = np.meshgrid(spec.x, spec.y, indexing="ij")
    V = np.empty((spec.nt, spec.nx, spec.ny))
    V[-1] = terminal_condition(case, m, X, Y, t_max=spec.t_max)
    dt, dx, dy = spec.dt, spec.dx, spec.dy
    for i in range(spec.nt - 2, -1, -1):
        t_i = spec.t[i]
        lam = float(dft.hazard(m, t_i)) if include_jump else 0.0
        f_i = float(dft.pdf(m, t_i))
        src = (X - Y) * f_i
        fields = {k: a[i] for k, a in policy.fields().items()}
        W = V[i + 1]
        H, rate = _apply_H(mk, W, fields, lam, dx, dy, spec.y, include_jump)
        bound = float(np.max(rate))
        k_sub = max(1, math.ceil(dt * bound / cfg.stability_safety))
        if k_sub > cfg.max_substeps:
            raise StepSizeError(
                f"slab {i} needs {k_sub} sub-steps (rate {bound:.3g}); refine the grid"
            )
        if k_sub == 1:
            V[i] = W + dt * (src + H)
        else:
            delta = dt / k_sub
            W = W + delta * (src + H)
            for _ in range(k_sub - 1):
                H, _ = _apply_H(mk, W, fields, lam, dx, dy, spec.y, include_jump)
                W = W + delta * (src + H)
            V[i] = W
    if not np.all(np.isfinite(V)):
        raise StepSizeError("value grid became non-finite; refine the grid or controls")
    return ValueGrid(V, spec)


def residual_report(p: MarketParams, m: DefaultModel, v: ValueGrid, policy: PolicyGrid,
                    case: str, tol: float = 1e-3, include_jump: bool = True) -> dict:
    """Relative defect |dv/dt + (x-y) f + H| / (1 + |v|) at interior nodes."""
    mk = _scalar_market(p)
    spec = v.spec
    X, Y = np.meshgrid(spec.x, spec.y, indexing="ij")
    dt = spec.dt
    rels = []
    for i in range(spec.nt - 1):
        lam = float(dft.hazard(m, spec.t[i])) if include_jump else 0.0
        f_i = float(dft.pdf(m, spec.t[i]))
        fields = {k: a[i] for k, a in policy.fields().items()}
        H, _ = _apply_H(mk, v.values[i + 1], fields, lam, spec.dx, spec.dy, spec.y,
                        include_jump)
        R = (v.values[i + 1] - v.values[i]) / dt + (X - Y) * f_i + H
        rel = np.abs(R) / (1.0 + np.abs(v.values[i]))
        rels.append(rel[1:-1, 1:-1].ravel())
    rels = np.concatenate(rels)
    return {
        "interior_nodes": int(rels.size),
        "frac_within_tol": float(np.mean(rels <= tol)),
        "tol": tol,
        "quantiles": {
            "q50": float(np.quantile(rels, 0.5)),
            "q90": float(np.quantile(rels, 0.9)),
            "q99": float(np.quantile(rels, 0.99)),
            "max": float(rels.max()),
        },
    }


# ---------------------------------------------------------------------------
# actor-critic outer loop


def _maximize_all(p: MarketParams, m: DefaultModel, v: ValueGrid, cfg: SolverConfig,
                  prev: PolicyGrid | None, refine_levels: int,
                  include_jump: bool = True, warm_start: bool = False,
                  post_refine: bool = False) -> PolicyGrid:
    mk = _scalar_market(p)
    axes = control_axes(mk, cfg)
    spec = v.spec
    table = _coarse_table(mk, axes, spec.dx, spec.dy)
    out = PolicyGrid.zeros(spec)
    zeros = np.zeros((spec.nx, spec.ny))
    for i in range(spec.nt):
        data_slice = min(i + 1, spec.nt - 1)
        lam = float(dft.hazard(m, spec.t[i])) if include_jump else 0.0
        u_seed = prev.u[i] if prev is not None else zeros
        seed_fields = None
        if warm_start and prev is not None:
            seed_fields = {k: a[i] for k, a in prev.fields().items()}
        fields = _maximize_slab(
            mk, axes, table, v.values[data_slice], lam, spec.dx, spec.dy, spec.y,
            u_seed=u_seed, refine_levels=refine_levels, refine_points=cfg.refine_points,
            refine_shrink=cfg.refine_shrink, include_jump=include_jump,
            seed_fields=seed_fields, post_refine=post_refine,
        )
        out.z[i] = fields["z"]
        out.z_x[i] = fields["z_x"]
        out.g[i] = fields["g"]
        out.g_x[i] = fields["g_x"]
        out.u[i] = fields["u"]
    return out


def _relax(old: PolicyGrid, new: PolicyGrid, w: float) -> PolicyGrid:
    mixed = PolicyGrid.zeros(old.spec)
    for name, arr in old.fields().items():
        getattr(mixed, name)[:] = (1.0 - w) * arr + w * getattr(new, name)
    return mixed


def actor_critic(p: MarketParams, m: DefaultModel, grid: GridSpec, cfg: SolverConfig,
                 case: str, include_jump: bool = True):
    """Alternate PDE solves and pointwise Hamiltonian maximisation.

    Control updates are relaxed, nu_{k+1} = (1 - w_k) nu_k + w_k nu_new, with
    w_k ramping from w_start to w_end (0.99).  Stops once the sup-norm value
    change drops below tol; non-convergence within max_iter returns the last
    iterate with converged=False rather than raising.  After the loop one
    exact greedy sweep (full refinement depth) and one final PDE solve make
    the returned value/policy pair mutually consistent.
    """
    if case not in (BOUNDED, UNBOUNDED):
        raise ConfigError(f"case must be '{BOUNDED}' or '{UNBOUNDED}', got {case!r}")
    policy = PolicyGrid.zeros(grid)
    v = solve_pde_frozen(p, m, policy, case, cfg, include_jump)
    changes: list[float] = []
    converged = False
    iterations = 0
    for it in range(1, cfg.max_iter + 1):
        iterations = it
        w = min(cfg.w_end, cfg.w_start + (it - 1) * (cfg.w_end - cfg.w_start) / max(1, cfg.ramp))
        warm = it > 1 and (it - 1) % max(1, cfg.coarse_rescan_every) != 0
        greedy = _maximize_all(p, m, v, cfg, prev=policy,
                               refine_levels=cfg.refine_levels_iter,
                               include_jump=include_jump, warm_start=warm)
        policy = _relax(policy, greedy, w)
        v_new = solve_pde_frozen(p, m, policy, case, cfg, include_jump)
        change = float(np.max(np.abs(v_new.values - v.values)))
        changes.append(change)
        v = v_new
        if change <= cfg.tol:
            converged = True
            break
    policy = _maximize_all(p, m, v, cfg, prev=policy,
                           refine_levels=cfg.refine_levels, include_jump=include_jump,
                           post_refine=True)
    v = solve_pde_frozen(p, m, policy, case, cfg, include_jump)
    res = residual_report(p, m, v, policy, case, tol=cfg.residual_tol,
                          include_jump=include_jump)
    diagnostics = {
        "converged": converged,
        "iterations": iterations,
        "value_changes": changes,
        "residual": res,
        "case": case,
        "include_jump": include_jump,
    }
    return v, policy, diagnostics


def principal_value(v: ValueGrid, p: MarketParams, R: float) -> float:
    """Principal's value v(0, x0, 0) minus the reservation component."""
    from pa_lab.contract import reservation_y0

    spec = v.spec
    x0 = p.x0
    if x0 < spec.x_range[0] or x0 > spec.x_range[1]:
        raise ValueError(f"x0={x0} outside the solved x-range {spec.x_range}")
    if 0.0 < spec.y_range[0] or 0.0 > spec.y_range[1]:
        raise ValueError(f"y=0 outside the solved y-range {spec.y_range}")
    jx = min(int(np.searchsorted(spec.x, x0)), spec.nx - 1)
    jx = max(jx - 1, 0) if spec.x[jx] > x0 or jx == spec.nx - 1 else jx
    wx = (x0 - spec.x[jx]) / spec.dx
    ky = min(int(np.searchsorted(spec.y, 0.0)), spec.ny - 1)
    ky = max(ky - 1, 0) if spec.y[ky] > 0.0 or ky == spec.ny - 1 else ky
    wy = (0.0 - spec.y[ky]) / spec.dy
    sl = v.values[0]
    val = (
        sl[jx, ky] * (1 - wx) * (1 - wy)
        + sl[jx + 1, ky] * wx * (1 - wy)
        + sl[jx, ky + 1] * (1 - wx) * wy
        + sl[jx + 1, ky + 1] * wx * wy
    )
    return float(val) - reservation_y0(R, p.eta)


# ---------------------------------------------------------------------------
# persistence


def save_solution(path, v: ValueGrid, policy: PolicyGrid, case: str,
                  meta: dict | None = None) -> None:
    spec = v.spec
    np.savez_compressed(
        path,
        values=v.values, z=policy.z, z_x=policy.z_x, g=policy.g, g_x=policy.g_x,
        u=policy.u,
        nt=spec.nt, nx=spec.nx, ny=spec.ny, t_max=spec.t_max,
        x_range=np.asarray(spec.x_range), y_range=np.asarray(spec.y_range),
        case=np.asarray(case), meta=np.asarray(json.dumps(meta or {})),
    )


def load_solution(path):
    data = np.load(path, allow_pickle=False)
    spec = GridSpec(
        nt=int(data["nt"]), nx=int(data["nx"]), ny=int(data["ny"]),
        t_max=float(data["t_max"]),
        x_range=tuple(data["x_range"]), y_range=tuple(data["y_range"]),
    )
    v = ValueGrid(data["values"], spec)
    policy = PolicyGrid(data["z"], data["z_x"], data["g"], data["g_x"], data["u"], spec)
    meta = json.loads(str(data["meta"]))
    return v, policy, str(data["case"]), meta


def dump_grid_csv(path, v: ValueGrid, policy: PolicyGrid) -> None:
    """Node-major CSV dump: t,x,y,value,z,z_x,g,g_x,u with 9 significant digits."""
    spec = v.spec
    with open(path, "w", newline="\n") as fh:
        fh.write("t,x,y,value,z,z_x,g,g_x,u\n")
        for i in range(spec.nt):
            for j in range(spec.nx):
                for k in range(spec.ny):
                    row = (
                        spec.t[i], spec.x[j], spec.y[k], v.values[i, j, k],
                        policy.z[i, j, k], policy.z_x[i, j, k], policy.g[i, j, k],
                        policy.g_x[i, j, k], policy.u[i, j, k],
                    )
                    fh.write(",".join(f"{val:.9g}" for val in row) + "\n")
