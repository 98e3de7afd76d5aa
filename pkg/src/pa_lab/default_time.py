"""Default-time laws: density, cdf, hazard rate, cumulative hazard, sampling.

Beta and uniform laws live on [0, T] (default certain by the horizon, the
"bounded" regime); the exponential law has unbounded support; the "none"
family means the default never happens.  The hazard pdf/(1-cdf) explodes at
the support endpoint of the bounded laws, so every query clamps it to
``hazard_cap``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate, special


class Family(str, enum.Enum):
    BETA = "beta"
    UNIFORM = "uniform"
    EXPONENTIAL = "exponential"
    NONE = "none"


# survival floor below which the hazard is forced to the cap (avoids 0/0 at
# the support endpoint)
SURVIVAL_FLOOR = 1e-12


@dataclass(frozen=True)
class DefaultModel:
    family: Family
    a: float | None = None
    b: float | None = None
    rate: float | None = None
    horizon: float = 1.0
    hazard_cap: float = 1e4

    def __post_init__(self):
        object.__setattr__(self, "family", Family(self.family))
        if self.horizon <= 0:
            raise ValueError(f"horizon must be positive, got {self.horizon}")
        if self.hazard_cap <= 0:
            raise ValueError(f"hazard_cap must be positive, got {self.hazard_cap}")
        if self.family == Family.BETA:
            if self.a is None or self.b is None or self.a <= 0 or self.b <= 0:
                raise ValueError("beta family needs positive shape parameters a, b")
        if self.family == Family.EXPONENTIAL:
            if self.rate is None or self.rate <= 0:
                raise ValueError("exponential family needs a positive rate")

    # -- constructors ------------------------------------------------------

    @staticmethod
    def beta(a: float, b: float, horizon: float = 1.0, hazard_cap: float = 1e4) -> "DefaultModel":
        return DefaultModel(Family.BETA, a=a, b=b, horizon=horizon, hazard_cap=hazard_cap)

    @staticmethod
    def uniform(horizon: float = 1.0, hazard_cap: float = 1e4) -> "DefaultModel":
        return DefaultModel(Family.UNIFORM, horizon=horizon, hazard_cap=hazard_cap)

    @staticmethod
    def exponential(rate: float, horizon: float = 1.0, hazard_cap: float = 1e4) -> "DefaultModel":
        return DefaultModel(Family.EXPONENTIAL, rate=rate, horizon=horizon, hazard_cap=hazard_cap)

    @staticmethod
    def none(horizon: float = 1.0, hazard_cap: float = 1e4) -> "DefaultModel":
        return DefaultModel(Family.NONE, horizon=horizon, hazard_cap=hazard_cap)

    @property
    def hypothesis(self) -> str:
        """Which support regime the law satisfies: 'bounded' or 'unbounded'."""
        if self.family in (Family.BETA, Family.UNIFORM):
            return "bounded"
        return "unbounded"

    def validate(self, tol: float = 1e-6) -> None:
        """Check that the density integrates to one over its support."""
        if self.family == Family.NONE:
            return
        hi = self.horizon if self.hypothesis == "bounded" else max(
            self.horizon, 60.0 / self.rate
        )
        mass, _ = integrate.quad(lambda s: pdf(self, s), 0.0, hi, limit=200)
        if abs(mass - 1.0) > tol:
            raise ValueError(f"pdf mass {mass} deviates from 1 beyond {tol}")


def pdf(m: DefaultModel, t) -> float | np.ndarray:
    """Density f_tau(t); zero outside the support."""
    t = np.asarray(t, dtype=float)
    T = m.horizon
    if m.family == Family.NONE:
        out = np.zeros_like(t)
    elif m.family == Family.UNIFORM:
        out = np.where((t >= 0) & (t <= T), 1.0 / T, 0.0)
    elif m.family == Family.EXPONENTIAL:
        out = np.where(t >= 0, m.rate * np.exp(-m.rate * np.maximum(t, 0.0)), 0.0)
    else:
        s = np.clip(t / T, 0.0, 1.0)
        with np.errstate(divide="ignore", invalid="ignore"):
            raw = (
                s ** (m.a - 1.0)
                * (1.0 - s) ** (m.b - 1.0)
                / special.beta(m.a, m.b)
                / T
            )
        inside = (t >= 0) & (t <= T)
        out = np.where(inside, np.nan_to_num(raw, nan=0.0, posinf=0.0), 0.0)
    return float(out) if out.ndim == 0 else out


def cdf(m: DefaultModel, t) -> float | np.ndarray:
    """Distribution function F_tau(t) in [0, 1]."""
    t = np.asarray(t, dtype=float)
    T = m.horizon
    if m.family == Family.NONE:
        out = np.zeros_like(t)
    elif m.family == Family.UNIFORM:
        out = np.clip(t / T, 0.0, 1.0)
    elif m.family == Family.EXPONENTIAL:
        out = np.where(t > 0, -np.expm1(-m.rate * np.maximum(t, 0.0)), 0.0)
    else:
        out = special.betainc(m.a, m.b, np.clip(t / T, 0.0, 1.0))
    return float(out) if out.ndim == 0 else out


def survival(m: DefaultModel, t) -> float | np.ndarray:
    """P(tau > t), computed in a form that keeps relative precision near the
    support endpoint (complemented incomplete beta for the beta family)."""
    t = np.asarray(t, dtype=float)
    T = m.horizon
    if m.family == Family.NONE:
        out = np.ones_like(t)
    elif m.family == Family.UNIFORM:
        out = np.clip(1.0 - t / T, 0.0, 1.0)
    elif m.family == Family.EXPONENTIAL:
        out = np.where(t > 0, np.exp(-m.rate * np.maximum(t, 0.0)), 1.0)
    else:
        out = special.betainc(m.b, m.a, np.clip(1.0 - t / T, 0.0, 1.0))
    return float(out) if out.ndim == 0 else out


def _hazard_raw(m: DefaultModel, t) -> float | np.ndarray:
    """Uncapped hazard pdf/(1-cdf); infinite where survival underflows."""
    f = np.asarray(pdf(m, t), dtype=float)
    surv = np.asarray(survival(m, t), dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(surv > 0, f / np.maximum(surv, 1e-300), np.inf)
    return float(out) if out.ndim == 0 else out


def hazard(m: DefaultModel, t) -> float | np.ndarray:
    """Capped hazard rate min(pdf/(1-cdf), hazard_cap).

    Once survival falls below the floor (or past the support endpoint) the
    cap itself is returned, mirroring the capped compensator used by the
    PDE scheme.
    """
    t = np.asarray(t, dtype=float)
    f = np.asarray(pdf(m, t), dtype=float)
    surv = np.asarray(survival(m, t), dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        raw = np.where(surv > SURVIVAL_FLOOR, f / np.maximum(surv, SURVIVAL_FLOOR), np.inf)
    if m.family == Family.NONE:
        out = np.zeros_like(t)
    else:
        out = np.where(surv > SURVIVAL_FLOOR, np.minimum(raw, m.hazard_cap), m.hazard_cap)
    return float(out) if out.ndim == 0 else out


def cumulative_hazard(m: DefaultModel, t: float) -> float:
    """Cumulative hazard Lambda_t, from the closed form where one exists.

    Uniform: -ln(1 - t/T); exponential: rate * t; beta: adaptive quadrature
    of the uncapped hazard (the survival identity exp(-Lambda) = 1 - F is a
    genuine cross-check there, not a tautology).
    """
    if t <= 0:
        return 0.0
    T = m.horizon
    if m.family == Family.NONE:
        return 0.0
    if m.family == Family.EXPONENTIAL:
        return m.rate * t
    if m.family == Family.UNIFORM:
        if t >= T:
            return math.inf
        return -math.log1p(-t / T)
    if t >= T:
        return math.inf
    # the integrand blows up like O(1/(T-t)) at the support endpoint; feeding
    # quad geometric breakpoints toward it keeps the adaptive subdivision cheap
    pts = [t - (t / 8.0) * 0.5**k for k in range(1, 40) if t - (t / 8.0) * 0.5**k < t]
    val, _ = integrate.quad(
        lambda s: _hazard_raw(m, s), 0.0, t, limit=800, epsabs=1e-12, epsrel=1e-11,
        points=[p for p in pts if 0.0 < p < t][:30],
    )
    return float(val)


def sample(m: DefaultModel, rng: np.random.Generator, size: int | None = None):
    """Draw default times; the none family returns +inf."""
    if m.family == Family.NONE:
        if size is None:
            return math.inf
        return np.full(size, np.inf)
    if m.family == Family.UNIFORM:
        draws = rng.uniform(0.0, m.horizon, size=size)
    elif m.family == Family.EXPONENTIAL:
        draws = rng.exponential(1.0 / m.rate, size=size)
    else:
        draws = m.horizon * rng.beta(m.a, m.b, size=size)
    return float(draws) if size is None else draws
