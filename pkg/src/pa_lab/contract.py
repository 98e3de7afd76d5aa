"""Contract algebra: Q-norm, the agent's optimal strategy, and the generator F.

The pointwise incentive controls are (z, z_x, g, g_x, u): per-asset
compensation z, wealth compensation z_x, covariation compensation g,
quadratic-variation compensation g_x, and the default-jump payment u.  For
admissible controls the agent's certainty-equivalent rate f is a strictly
concave quadratic in the strategy, so its constrained maximiser is the
Q-norm projection of the unconstrained optimum onto the box C and the
generator F is f evaluated there.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from pa_lab.market import MarketParams, risk_premium

# positive-definiteness margin required of I - g_x sigma sigma^T
EPS_PD = 1e-8


class AdmissibilityError(ValueError):
    """Raised when I - g_x sigma sigma^T is not positive definite."""


@dataclass(frozen=True)
class ControlTuple:
    """Principal's incentive controls at one state (vectors have length m)."""

    z: np.ndarray
    z_x: float
    g: np.ndarray
    g_x: float
    u: float

    def __post_init__(self):
        object.__setattr__(self, "z", np.atleast_1d(np.asarray(self.z, dtype=float)))
        object.__setattr__(self, "g", np.atleast_1d(np.asarray(self.g, dtype=float)))

    def norm(self) -> float:
        return math.sqrt(
            float(self.z @ self.z) + self.z_x**2 + float(self.g @ self.g) + self.g_x**2 + self.u**2
        )


@dataclass(frozen=True)
class QForm:
    """Quadratic data of the agent's problem: f(nu) = -nu Q nu^T + nu.ell + c.

    ``c`` carries the strategy- and hazard-independent part of f; the
    default-jump term -(lambda/eta)(exp(-eta u) - 1) is added by the caller.
    """

    Q: np.ndarray
    ell: np.ndarray
    c: float


def check_admissible(p: MarketParams, ct: ControlTuple, margin: float = EPS_PD) -> None:
    gram = np.eye(p.m) - ct.g_x * p.sigma_sigma_T
    if np.linalg.eigvalsh(gram).min() <= margin:
        raise AdmissibilityError(
            f"I - g_x sigma sigma^T not positive definite (g_x={ct.g_x}, margin={margin})"
        )


def q_norm(x: np.ndarray, Q: np.ndarray) -> float:
    """Quadratic form x^T Q x (Q symmetric)."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    return float(x @ np.atleast_2d(Q) @ x)


def project_box_qnorm(x: np.ndarray, lo: np.ndarray, hi: np.ndarray, Q: np.ndarray) -> np.ndarray:
    """Nearest point of the box [lo, hi] to x in the Q-norm.

    m = 1 reduces to clamping.  For small m the exact minimiser is found by
    enumerating active sets of the box faces and checking the KKT signs;
    the minimiser is unique because Q is positive definite.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    lo = np.broadcast_to(np.atleast_1d(lo).astype(float), x.shape)
    hi = np.broadcast_to(np.atleast_1d(hi).astype(float), x.shape)
    m = x.shape[0]
    if not np.allclose(Q, Q.T, atol=1e-12):
        raise AdmissibilityError("Q must be symmetric")
    if np.linalg.eigvalsh(Q).min() <= 0:
        raise AdmissibilityError("Q must be positive definite for the box projection")
    if m == 1:
        return np.clip(x, lo, hi)
    if m > 8:
        raise NotImplementedError("box projection implemented for m <= 8")
    if np.all(x >= lo) and np.all(x <= hi):
        return x.copy()
    best = None
    for states in itertools.product((0, 1, 2), repeat=m):
        nu = np.empty(m)
        active = [i for i, s in enumerate(states) if s != 0]
        free = [i for i, s in enumerate(states) if s == 0]
        for i in active:
            nu[i] = lo[i] if states[i] == 1 else hi[i]
        if free:
            Qff = Q[np.ix_(free, free)]
            if active:
                rhs = Q[np.ix_(free, active)] @ (nu[active] - x[active])
                nu[free] = x[free] - np.linalg.solve(Qff, rhs)
            else:
                nu[free] = x[free]
            if np.any(nu[free] < lo[free] - 1e-12) or np.any(nu[free] > hi[free] + 1e-12):
                continue
            nu[free] = np.clip(nu[free], lo[free], hi[free])
        grad = 2.0 * Q @ (nu - x)
        ok = True
        for i in active:
            if states[i] == 1 and grad[i] < -1e-10:
                ok = False
            if states[i] == 2 and grad[i] > 1e-10:
                ok = False
        if not ok:
            continue
        val = q_norm(nu - x, Q)
        if best is None or val < best[0]:
            best = (val, nu)
    assert best is not None, "active-set enumeration found no KKT point"
    return best[1]


def q_dist(x: np.ndarray, C: tuple, Q: np.ndarray) -> float:
    """Squared Q-distance of x to the box C = (lo, hi): inf over the box of |x-y|_Q."""
    lo, hi = C
    proj = project_box_qnorm(x, lo, hi, Q)
    return q_norm(np.atleast_1d(x) - proj, Q)


def build_qform(p: MarketParams, ct: ControlTuple, margin: float = EPS_PD) -> QForm:
    """Quadratic data of f for admissible controls.

    Q = (I - g_x sigma sigma^T)/2, ell = z_x sigma theta + sigma sigma^T g
    + alpha - eta z_x sigma sigma^T z, and c collects the strategy-free terms
    z.b - |alpha|^2/2 - (eta/2)|z sigma|^2.
    """
    check_admissible(p, ct, margin)
    ssT = p.sigma_sigma_T
    Q = 0.5 * (np.eye(p.m) - ct.g_x * ssT)
    stheta = p.sigma @ risk_premium(p)
    ell = ct.z_x * stheta + ssT @ ct.g + p.alpha - p.eta * ct.z_x * ssT @ ct.z
    zs = ct.z @ p.sigma
    c = float(ct.z @ p.b - 0.5 * p.alpha @ p.alpha - 0.5 * p.eta * zs @ zs)
    return QForm(Q=Q, ell=ell, c=c)


def agent_strategy(p: MarketParams, ct: ControlTuple, margin: float = EPS_PD) -> np.ndarray:
    """Optimal strategy: the Q-projection of e = Q^{-1} ell / 2 onto the box C."""
    qf = build_qform(p, ct, margin)
    e = 0.5 * np.linalg.solve(qf.Q, qf.ell)
    return project_box_qnorm(e, p.constraint_lo, p.constraint_hi, qf.Q)


def raw_f(p: MarketParams, ct: ControlTuple, lam: float, nu: np.ndarray):
    """Agent's certainty-equivalent rate at strategy nu (the ground-truth oracle).

    Term by term: z.b + z_x nu.sigma theta + (g_x/2)|nu sigma|^2
    - |nu - alpha|^2 / 2 + nu sigma sigma^T g - eta z_x nu sigma sigma^T z
    - (eta/2)|z sigma|^2 - (lam/eta)(exp(-eta u) - 1).

    ``nu`` may carry leading batch dimensions: shape (..., m) evaluates the
    rate for a whole batch of strategies at once.
    """
    nu = np.atleast_1d(np.asarray(nu, dtype=float))
    scalar_in = nu.ndim == 1 and nu.shape[0] == p.m
    if nu.shape[-1] != p.m:
        if p.m == 1:
            nu = nu[..., None]
        else:
            raise ValueError(f"strategy last axis must have length m={p.m}")
    ssT = p.sigma_sigma_T
    stheta = p.sigma @ risk_premium(p)
    nus = nu @ p.sigma
    zs = ct.z @ p.sigma
    dev = nu - p.alpha
    out = (
        ct.z @ p.b
        + ct.z_x * nu @ stheta
        + 0.5 * ct.g_x * (nus * nus).sum(axis=-1)
        - 0.5 * (dev * dev).sum(axis=-1)
        + nu @ ssT @ ct.g
        - p.eta * ct.z_x * nu @ ssT @ ct.z
        - 0.5 * p.eta * zs @ zs
        - lam / p.eta * math.expm1(-p.eta * ct.u)
    )
    if scalar_in:
        return float(out if out.ndim == 0 else out.reshape(()))
    return out


def jump_compensation(eta: float, lam: float, u: float) -> float:
    """The default-jump term of f and F: -(lam/eta)(exp(-eta u) - 1)."""
    return -lam / eta * math.expm1(-eta * u)


def generator_F(p: MarketParams, ct: ControlTuple, lam: float, margin: float = EPS_PD) -> float:
    """Generator F: the exact constrained supremum of f over the box C.

    Computed as f evaluated at the optimal strategy, which is exact because
    f is a strictly concave quadratic in the strategy.
    """
    pi_star = agent_strategy(p, ct, margin)
    return raw_f(p, ct, lam, pi_star)


def generator_F_closed_form(p: MarketParams, ct: ControlTuple, lam: float,
                            margin: float = EPS_PD) -> float:
    """Diagnostic closed form of F: unconstrained maximum minus the squared
    Q-distance of the unconstrained optimum to the box."""
    qf = build_qform(p, ct, margin)
    e = 0.5 * np.linalg.solve(qf.Q, qf.ell)
    unconstrained = 0.25 * float(qf.ell @ np.linalg.solve(qf.Q, qf.ell))
    penalty = q_dist(e, (p.constraint_lo, p.constraint_hi), qf.Q)
    return unconstrained - penalty + qf.c + jump_compensation(p.eta, lam, ct.u)


def reservation_y0(R: float, eta: float) -> float:
    """Fixed contract component pinned by the reservation utility: -ln(-R)/eta."""
    if R >= 0:
        raise ValueError(f"reservation utility must be negative, got {R}")
    if eta <= 0:
        raise ValueError(f"eta must be positive, got {eta}")
    return -math.log(-R) / eta
