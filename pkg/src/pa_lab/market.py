"""Market primitives: asset/wealth dynamics and the risk-premium transform."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class EllipticityError(ValueError):
    """Raised when sigma * sigma^T is singular or nearly so."""


@dataclass(frozen=True)
class MarketParams:
    """Constant market coefficients and the agent's constraint box.

    b is the drift vector (length m), sigma the m x d volatility matrix,
    alpha the benchmark strategy, eta the agent's CARA risk aversion, and
    [constraint_lo, constraint_hi] the componentwise box C of admissible
    strategies.
    """

    b: np.ndarray
    sigma: np.ndarray
    x0: float = 1.0
    alpha: np.ndarray | None = None
    eta: float = 1.0
    constraint_lo: np.ndarray | float = 0.0
    constraint_hi: np.ndarray | float = 1.0
    ellipticity_floor: float = 1e-10

    def __post_init__(self):
        b = np.atleast_1d(np.asarray(self.b, dtype=float))
        sigma = np.asarray(self.sigma, dtype=float)
        if sigma.ndim == 0:
            sigma = sigma.reshape(1, 1)
        elif sigma.ndim == 1:
            sigma = sigma.reshape(1, -1)
        m = b.shape[0]
        if sigma.shape[0] != m:
            raise ValueError(f"sigma has {sigma.shape[0]} rows, drift has {m} components")
        alpha = self.alpha
        alpha = np.zeros(m) if alpha is None else np.broadcast_to(
            np.atleast_1d(np.asarray(alpha, dtype=float)), (m,)
        ).copy()
        lo = np.broadcast_to(np.atleast_1d(np.asarray(self.constraint_lo, dtype=float)), (m,)).copy()
        hi = np.broadcast_to(np.atleast_1d(np.asarray(self.constraint_hi, dtype=float)), (m,)).copy()
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "sigma", sigma)
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "constraint_lo", lo)
        object.__setattr__(self, "constraint_hi", hi)
        if not self.eta > 0:
            raise ValueError(f"eta must be positive, got {self.eta}")
        if np.any(lo > hi):
            raise ValueError("constraint_lo must be <= constraint_hi componentwise")
        ssT = sigma @ sigma.T
        if np.linalg.eigvalsh(ssT).min() <= self.ellipticity_floor:
            raise EllipticityError(
                "sigma * sigma^T is not invertible above the ellipticity floor "
                f"{self.ellipticity_floor}"
            )

    @property
    def m(self) -> int:
        return self.b.shape[0]

    @property
    def d(self) -> int:
        return self.sigma.shape[1]

    @property
    def sigma_sigma_T(self) -> np.ndarray:
        return self.sigma @ self.sigma.T


def risk_premium(p: MarketParams) -> np.ndarray:
    """Risk premium theta = sigma^T (sigma sigma^T)^{-1} b; equals b/sigma for m=d=1."""
    ssT = p.sigma_sigma_T
    if np.linalg.eigvalsh(ssT).min() <= p.ellipticity_floor:
        raise EllipticityError("sigma * sigma^T singular in risk_premium")
    return p.sigma.T @ np.linalg.solve(ssT, p.b)


def wealth_step(x: float, pi: np.ndarray, p: MarketParams, dW: np.ndarray, dt: float) -> float:
    """One Euler step of the wealth dynamics: x + pi.b dt + pi.sigma dW."""
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    pi = np.broadcast_to(np.atleast_1d(np.asarray(pi, dtype=float)), (p.m,))
    dW = np.broadcast_to(np.atleast_1d(np.asarray(dW, dtype=float)), (p.d,))
    return float(x + pi @ p.b * dt + pi @ p.sigma @ dW)
