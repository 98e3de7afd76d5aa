"""Built-in property suites behind `pa-lab check`.

Each suite returns a list of (name, passed, detail) triples; suites are
lighter-weight versions of the pytest acceptance module, meant for quick
sanity runs from the command line.
"""

from __future__ import annotations

import numpy as np

from pa_lab import default_time as dft
from pa_lab import hjb, monte_carlo as mc
from pa_lab.contract import ControlTuple, agent_strategy, generator_F, raw_f
from pa_lab.default_time import DefaultModel
from pa_lab.market import MarketParams


def _baseline_market() -> MarketParams:
    return MarketParams(b=[0.1], sigma=[[0.3]], x0=1.0, eta=1.0,
                        constraint_lo=0.0, constraint_hi=1.0)


def _families():
    return [
        ("beta_2_4", DefaultModel.beta(2, 4)),
        ("uniform", DefaultModel.uniform()),
        ("beta_4_2", DefaultModel.beta(4, 2)),
        ("exponential_2", DefaultModel.exponential(2.0)),
    ]


def hazard_suite():
    results = []
    ts = np.linspace(0.0, 0.999, 241)
    for name, model in _families():
        errs = [abs(np.exp(-dft.cumulative_hazard(model, t)) - (1.0 - dft.cdf(model, t)))
                for t in ts]
        worst = max(errs)
        results.append((f"survival identity {name}", worst < 1e-8, f"max dev {worst:.3e}"))
        hz = np.asarray(dft.hazard(model, np.linspace(0, 1.2, 301)))
        ok = bool(np.all(hz >= 0) and np.all(hz <= model.hazard_cap))
        results.append((f"hazard bounds {name}", ok, f"range [{hz.min():.3g}, {hz.max():.3g}]"))
    for name, model in _families()[:3]:
        lam_end = dft.cumulative_hazard(model, model.horizon * (1 - 1e-6))
        results.append((f"bounded-support blow-up {name}", lam_end > 10.0,
                        f"Lambda(T-) = {lam_end:.3g}"))
    lam_T = dft.cumulative_hazard(DefaultModel.exponential(2.0), 1.0)
    results.append(("unbounded-support finiteness exponential_2",
                    np.isfinite(lam_T), f"Lambda(T) = {lam_T:.3g}"))
    return results


def random_admissible_tuple(rng: np.random.Generator, p: MarketParams,
                            margin: float = 1e-3) -> tuple[ControlTuple, float]:
    s2 = float(p.sigma_sigma_T[0, 0])
    gx_hi = (1.0 - margin) / s2
    ct = ControlTuple(
        z=np.array([rng.uniform(-2, 2)]),
        z_x=rng.uniform(-2, 2),
        g=np.array([rng.uniform(-2, 2)]),
        g_x=rng.uniform(-2.0, gx_hi),
        u=rng.uniform(-2, 2),
    )
    lam = rng.uniform(0.0, 5.0)
    return ct, lam


def oracle_suite(n_instances: int = 1000, dnu: float = 1e-3, seed: int = 41):
    p = _baseline_market()
    rng = np.random.default_rng(seed)
    lo, hi = float(p.constraint_lo[0]), float(p.constraint_hi[0])
    nus = np.arange(lo, hi + dnu / 2, dnu)
    worst_gap = 0.0
    worst_cell = 0.0
    for _ in range(n_instances):
        ct, lam = random_admissible_tuple(rng, p)
        vals = raw_f(p, ct, lam, nus)
        brute = float(vals.max())
        F = generator_F(p, ct, lam)
        pi = float(agent_strategy(p, ct)[0])
        worst_gap = max(worst_gap, abs(F - brute))
        worst_cell = max(worst_cell, abs(nus[int(vals.argmax())] - pi))
    return [
        ("generator matches brute-force maximum", worst_gap <= 5e-6,
         f"max |F - grid max| = {worst_gap:.3e}"),
        ("strategy within one grid cell of brute argmax", worst_cell <= dnu + 1e-12,
         f"max displacement {worst_cell:.3e}"),
    ]


def martingale_suite(n_paths: int = 30_000):
    p = _baseline_market()
    model = DefaultModel.uniform()
    grid = hjb.GridSpec(nt=48, nx=24, ny=24)
    cfg = hjb.SolverConfig(max_iter=25)
    v, policy, diag = hjb.actor_critic(p, model, grid, cfg, hjb.BOUNDED)
    sim = mc.SimConfig(n_paths=n_paths, dt=1e-3, seed=777, record_paths=False)
    opt = mc.martingale_check(p, model, policy, sim)
    sub = mc.martingale_check(p, model, policy, sim, strategy="constant", const_pi=1.0)
    dev = abs(opt["deviation_se_units"])
    drop = (opt["estimate"] - sub["estimate"]) / max(sub["se"], 1e-12)
    return [
        ("optimal strategy is mean-preserving", dev <= 3.0,
         f"deviation {dev:.2f} SE (estimate {opt['estimate']:.5f})"),
        ("suboptimal strategy loses utility", drop > 3.0,
         f"drop {drop:.1f} SE (perturbed {sub['estimate']:.5f})"),
    ]


def degenerate_suite():
    p = _baseline_market()
    model = DefaultModel.none()
    grid = hjb.GridSpec(nt=24, nx=16, ny=16)
    cfg = hjb.SolverConfig(max_iter=15, u_lo=0.0, u_hi=0.0, u_n=1)
    results = []
    for case in (hjb.BOUNDED, hjb.UNBOUNDED):
        v_full, _, _ = hjb.actor_critic(p, model, grid, cfg, case)
        v_free, _, _ = hjb.actor_critic(p, model, grid, cfg, case, include_jump=False)
        diff = float(np.max(np.abs(v_full.values - v_free.values)))
        results.append((f"no-default degeneration ({case})", diff <= 1e-6,
                        f"sup diff {diff:.3e}"))
    return results


_SUITES = {
    "hazard": hazard_suite,
    "oracle": oracle_suite,
    "martingale": martingale_suite,
    "degenerate": degenerate_suite,
}


def run_suite(name: str):
    if name not in _SUITES:
        raise ValueError(f"unknown suite {name!r}")
    return _SUITES[name]()
