"""Forward simulation of the coupled wealth/contract system under a solved policy.

Paths are Euler-Maruyama in (X, Y) with the incentive controls read from the
policy grid by trilinear interpolation and the strategy recomputed from the
agent's closed form at those controls.  The default time is drawn once per
path; at default the contract value jumps by the current u and the path
freezes.  Randomness is organised in fixed-size path blocks with
counter-based streams so that enlarging the path count never reshuffles
earlier paths.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, replace

import numpy as np

from pa_lab import default_time as dft
from pa_lab.default_time import DefaultModel
from pa_lab.hjb import (
    BOUNDED,
    UNBOUNDED,
    ConfigError,
    GridSpec,
    PolicyGrid,
    SolverConfig,
    ValueGrid,
    _jump_comp,
    _scalar_market,
    actor_critic,
    principal_value,
)
from pa_lab.market import MarketParams

CSV_HEADER = (
    "t,mean_wealth,se_wealth,mean_strategy,se_strategy,"
    "mean_Y,se_Y,mean_u,mean_zx,mean_gx,alive_frac"
)

_SERIES = ("wealth", "strategy", "Y", "u", "zx", "gx")


@dataclass(frozen=True)
class SimConfig:
    n_paths: int = 10_000
    dt: float = 1.0 / 500.0
    seed: int = 12345
    freeze_mode: str = "carry_last"  # carry_last | alive_only | both
    record_paths: bool | None = None
    record_increments: bool = False
    gx_margin: float = 1e-3
    block_size: int = 16_384

    def __post_init__(self):
        if self.n_paths < 1:
            raise ConfigError("n_paths must be >= 1")
        if self.dt <= 0:
            raise ConfigError("dt must be positive")
        if self.freeze_mode not in ("carry_last", "alive_only", "both"):
            raise ConfigError(f"unknown freeze_mode {self.freeze_mode!r}")

    def n_steps(self, t_max: float) -> int:
        n = round(t_max / self.dt)
        if n < 1 or abs(n * self.dt - t_max) > 1e-9 * max(1.0, t_max):
            raise ConfigError(f"dt={self.dt} does not divide the horizon {t_max}")
        return n


@dataclass
class PathEnsemble:
    times: np.ndarray
    aggregates: dict            # mode -> series name -> array over times
    tau: np.ndarray | None
    paths: dict | None          # series name -> (n_paths, n_steps + 1)
    diagnostics: dict

    def aggregate(self, mode: str | None = None) -> dict:
        if mode is None:
            mode = next(iter(self.aggregates))
        return self.aggregates[mode]


class _Welford:
    """Per-time-step sums for mean/standard error, fixed accumulation order."""

    def __init__(self, n_times: int):
        self.n = np.zeros(n_times)
        self.s = np.zeros(n_times)
        self.s2 = np.zeros(n_times)

    def add(self, step: int, values: np.ndarray, mask: np.ndarray | None = None):
        if mask is not None:
            if not mask.any():
                return
            values = values[mask]
        self.n[step] += values.size
        self.s[step] += values.sum()
        self.s2[step] += (values * values).sum()

    def mean(self) -> np.ndarray:
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(self.n > 0, self.s / self.n, np.nan)

    def se(self) -> np.ndarray:
        with np.errstate(invalid="ignore", divide="ignore"):
            mean = self.s / self.n
            var = np.maximum(self.s2 / self.n - mean * mean, 0.0)
            var = np.where(self.n > 1, var * self.n / (self.n - 1), 0.0)
            out = np.where(self.n > 0, np.sqrt(var / np.maximum(self.n, 1)), np.nan)
        return out


def _interp_policy_slice(policy: PolicyGrid, t: float):
    """Time-blend the five control fields to one (nx, ny) slice each."""
    spec = policy.spec
    pos = t / spec.dt
    it = min(int(pos), spec.nt - 2)
    wt = min(max(pos - it, 0.0), 1.0)
    out = {}
    for name, arr in policy.fields().items():
        out[name] = (1.0 - wt) * arr[it] + wt * arr[it + 1]
    return out


def _bilinear(field: np.ndarray, jx, wx, ky, wy):
    return (
        field[jx, ky] * (1 - wx) * (1 - wy)
        + field[jx + 1, ky] * wx * (1 - wy)
        + field[jx, ky + 1] * (1 - wx) * wy
        + field[jx + 1, ky + 1] * wx * wy
    )


def simulate(p: MarketParams, m: DefaultModel, policy: PolicyGrid,
             v: ValueGrid | None, cfg: SimConfig,
             pi_override: float | None = None,
             collect_exponential_utility: bool = False) -> PathEnsemble:
    """Euler-Maruyama ensemble of (X, Y) under the solved policy.

    ``pi_override`` forces a constant strategy (the contract's controls and
    drift are unchanged, only the realised investment deviates); it exists
    for supermartingale checks of deliberately suboptimal agents.
    """
    mk = _scalar_market(p)
    spec = policy.spec
    if v is not None and v.spec != spec:
        raise ConfigError("value and policy grids disagree")
    n_steps = cfg.n_steps(spec.t_max)
    times = np.linspace(0.0, spec.t_max, n_steps + 1)
    dt = cfg.dt
    sdt = math.sqrt(dt)
    gx_cap = 1.0 / mk.s2 - cfg.gx_margin
    lam_t = np.asarray(dft.hazard(m, times[:-1]), dtype=float)

    record = cfg.record_paths
    if record is None:
        record = cfg.n_paths * (n_steps + 1) <= 2_000_000
    paths = None
    if record:
        paths = {name: np.empty((cfg.n_paths, n_steps + 1)) for name in
                 ("X", "Y", "pi", "z", "zx", "g", "gx", "u")}
        paths["default_flag"] = np.zeros((cfg.n_paths, n_steps + 1), dtype=bool)
        if cfg.record_increments:
            paths["dY_trading"] = np.zeros((cfg.n_paths, n_steps))
            paths["dY_jump"] = np.zeros((cfg.n_paths, n_steps))

    modes = ["carry_last", "alive_only"] if cfg.freeze_mode == "both" else [cfg.freeze_mode]
    acc = {mode: {name: _Welford(n_steps + 1) for name in _SERIES} for mode in modes}
    tau_all = np.empty(cfg.n_paths)
    clamp_events = 0
    sum_R = 0.0
    sum_R2 = 0.0

    # policy slices per step are path-independent; precompute once
    slices = [_interp_policy_slice(policy, t) for t in times]

    n_blocks = (cfg.n_paths + cfg.block_size - 1) // cfg.block_size
    for blk in range(n_blocks):
        lo = blk * cfg.block_size
        nb = min(cfg.block_size, cfg.n_paths - lo)
        rng_w = np.random.Generator(np.random.Philox(
            np.random.SeedSequence(entropy=cfg.seed, spawn_key=(0, blk))))
        rng_tau = np.random.Generator(np.random.Philox(
            np.random.SeedSequence(entropy=cfg.seed, spawn_key=(1, blk))))
        tau = np.asarray(dft.sample(m, rng_tau, size=cfg.block_size))[:nb]
        tau_all[lo:lo + nb] = tau

        X = np.full(nb, mk.x0)
        Y = np.zeros(nb)
        effort = np.zeros(nb)
        alive = np.ones(nb, dtype=bool)
        frozen = {name: np.zeros(nb) for name in ("pi", "z", "zx", "g", "gx", "u")}

        for n in range(n_steps + 1):
            t = times[n]
            sl = slices[n]
            jx = np.clip(((X - spec.x_range[0]) / spec.dx).astype(int), 0, spec.nx - 2)
            wx = np.clip((X - spec.x[jx]) / spec.dx, 0.0, 1.0)
            ky = np.clip(((Y - spec.y_range[0]) / spec.dy).astype(int), 0, spec.ny - 2)
            wy = np.clip((Y - spec.y[ky]) / spec.dy, 0.0, 1.0)
            out_of_grid = (
                (X < spec.x_range[0]) | (X > spec.x_range[1])
                | (Y < spec.y_range[0]) | (Y > spec.y_range[1])
            )
            clamp_events += int(np.count_nonzero(out_of_grid & alive))
            z = _bilinear(sl["z"], jx, wx, ky, wy)
            zx = _bilinear(sl["z_x"], jx, wx, ky, wy)
            g = _bilinear(sl["g"], jx, wx, ky, wy)
            gx = np.minimum(_bilinear(sl["g_x"], jx, wx, ky, wy), gx_cap)
            u = _bilinear(sl["u"], jx, wx, ky, wy)
            Q = 0.5 * (1.0 - gx * mk.s2)
            ell = zx * mk.stheta + mk.s2 * g + mk.alpha - mk.eta * zx * mk.s2 * z
            pi_star = np.clip(ell / (2.0 * Q), mk.lo, mk.hi)
            pi = np.full(nb, float(pi_override)) if pi_override is not None else pi_star
            for name, arr in (("pi", pi), ("z", z), ("zx", zx), ("g", g),
                              ("gx", gx), ("u", u)):
                frozen[name] = np.where(alive, arr, frozen[name])

            series = {
                "wealth": X, "strategy": frozen["pi"], "Y": Y, "u": frozen["u"],
                "zx": frozen["zx"], "gx": frozen["gx"],
            }
            for mode in modes:
                mask = alive if mode == "alive_only" else None
                for name, valarr in series.items():
                    acc[mode][name].add(n, valarr, mask)
            if record:
                for name, valarr in (("X", X), ("Y", Y), ("pi", frozen["pi"]),
                                     ("z", frozen["z"]), ("zx", frozen["zx"]),
                                     ("g", frozen["g"]), ("gx", frozen["gx"]),
                                     ("u", frozen["u"])):
                    paths[name][lo:lo + nb, n] = valarr
                paths["default_flag"][lo:lo + nb, n] = tau <= t

            if n == n_steps:
                break

            dW = sdt * rng_w.standard_normal(cfg.block_size)[:nb]
            lam = float(lam_t[n])
            F0 = (-pi_star * pi_star * Q + pi_star * ell
                  + (z * mk.b - 0.5 * mk.alpha**2 - 0.5 * mk.eta * z * z * mk.s2))
            F = F0 + _jump_comp(mk, lam, u)
            defaulting = alive & (tau <= times[n + 1])
            cont = alive & ~defaulting

            dX = pi * (mk.b * dt + mk.sigma * dW)
            dY = (
                z * (mk.b * dt + mk.sigma * dW)
                + zx * dX
                + 0.5 * (gx + mk.eta * zx * zx) * pi * pi * mk.s2 * dt
                + g * pi * mk.s2 * dt
                - F * dt
            )
            X = np.where(cont, X + dX, X)
            Y = np.where(cont, Y + dY, np.where(defaulting, Y + u, Y))
            effort = np.where(cont, effort + 0.5 * (pi - mk.alpha) ** 2 * dt, effort)
            if record and cfg.record_increments:
                paths["dY_trading"][lo:lo + nb, n] = np.where(cont, dY, 0.0)
                paths["dY_jump"][lo:lo + nb, n] = np.where(defaulting, u, 0.0)
            alive = cont

        if collect_exponential_utility:
            R = -np.exp(-mk.eta * (Y - effort))
            sum_R += float(R.sum())
            sum_R2 += float((R * R).sum())

    aggregates = {}
    for mode in modes:
        agg = {}
        for name in _SERIES:
            agg[f"mean_{name}"] = acc[mode][name].mean()
            agg[f"se_{name}"] = acc[mode][name].se()
        agg["alive_frac"] = np.array([float(np.mean(tau_all > t)) for t in times])
        aggregates[mode] = agg

    diagnostics = {
        "n_paths": cfg.n_paths,
        "n_steps": n_steps,
        "seed": cfg.seed,
        "clamp_events": clamp_events,
        "pi_override": pi_override,
    }
    if collect_exponential_utility:
        n = cfg.n_paths
        mean_R = sum_R / n
        var_R = max(sum_R2 / n - mean_R**2, 0.0) * (n / max(n - 1, 1))
        diagnostics["utility_estimate"] = mean_R
        diagnostics["utility_se"] = math.sqrt(var_R / n)

    return PathEnsemble(times=times, aggregates=aggregates, tau=tau_all,
                        paths=paths, diagnostics=diagnostics)


def martingale_check(p: MarketParams, m: DefaultModel, policy: PolicyGrid,
                     cfg: SimConfig, strategy: str = "optimal",
                     const_pi: float = 0.0) -> dict:
    """Estimate E[-exp(-eta (Y - effort))] at the stopped horizon.

    Under the closed-form optimal strategy this expectation equals
    -exp(-eta Y_0) (= -1 here, Y_0 = 0) for any admissible contract; any
    other strategy can only push it down.  The report states the deviation
    from the target in Monte Carlo standard errors.
    """
    override = None if strategy == "optimal" else float(const_pi)
    ens = simulate(p, m, policy, None, cfg, pi_override=override,
                   collect_exponential_utility=True)
    est = ens.diagnostics["utility_estimate"]
    se = ens.diagnostics["utility_se"]
    target = -1.0
    dev = est - target
    units = 0.0 if dev == 0.0 else (dev / se if se > 0 else math.inf)
    return {
        "strategy": strategy,
        "estimate": est,
        "se": se,
        "target": target,
        "deviation": dev,
        "deviation_se_units": units,
        "n_paths": cfg.n_paths,
    }


def compare_linear(p: MarketParams, m: DefaultModel, grid: GridSpec,
                   solver_cfg: SolverConfig, p_grid: list[float],
                   case: str = BOUNDED, R: float = -1.0,
                   keep_solutions: bool = False) -> dict:
    """Solve the general contract and the z_x-pinned linear contracts.

    Reports the principal value per percentage p, the best p, and the gap
    of the best linear contract below the general one.
    """
    if not p_grid:
        raise ConfigError("p_grid must not be empty")
    v_gen, pol_gen, diag_gen = actor_critic(p, m, grid, solver_cfg, case)
    val_gen = principal_value(v_gen, p, R)
    linear = {}
    solutions = {"general": (v_gen, pol_gen)} if keep_solutions else None
    for pct in p_grid:
        cfg_l = solver_cfg.with_contract_class("linear", pct)
        v_l, pol_l, diag_l = actor_critic(p, m, grid, cfg_l, case)
        linear[pct] = {
            "value": principal_value(v_l, p, R),
            "converged": diag_l["converged"],
        }
        if keep_solutions:
            solutions[pct] = (v_l, pol_l)
    best_p = max(linear, key=lambda q: linear[q]["value"])
    # every linear policy is feasible for the general class, so the best
    # value seen across all runs is itself a general-class value; this keeps
    # the reported restriction gap nonnegative when the classes tie
    general_value = max(val_gen, linear[best_p]["value"])
    report = {
        "general_value": general_value,
        "general_run_value": val_gen,
        "general_converged": diag_gen["converged"],
        "linear": linear,
        "best_p": best_p,
        "best_linear_value": linear[best_p]["value"],
        "gap": general_value - linear[best_p]["value"],
    }
    if keep_solutions:
        report["solutions"] = solutions
    return report


# ---------------------------------------------------------------------------
# experiments


DEFAULT_P_GRID = [0.1, 0.3, 0.5, 0.7, 0.9]


@dataclass(frozen=True)
class ExperimentConfig:
    market: MarketParams | None = None
    grid: GridSpec | None = None
    solver: SolverConfig | None = None
    sim: SimConfig | None = None
    hazard_cap: float = 1e4
    horizon: float = 1.0
    reservation: float = -1.0
    p_grid: tuple = tuple(DEFAULT_P_GRID)

    def resolved(self) -> "ExperimentConfig":
        market = self.market or MarketParams(b=[0.1], sigma=[[0.3]], x0=1.0, eta=1.0,
                                             constraint_lo=0.0, constraint_hi=1.0)
        grid = self.grid or GridSpec(nt=40, nx=40, ny=40, t_max=self.horizon)
        solver = self.solver or SolverConfig()
        sim = self.sim or SimConfig()
        return replace(self, market=market, grid=grid, solver=solver, sim=sim)


def _scenario_models(scenario: str, horizon: float, cap: float):
    beta = DefaultModel.beta
    if scenario in ("fig1", "fig2"):
        return [
            ("beta_2_4", beta(2, 4, horizon, cap), BOUNDED),
            ("uniform", DefaultModel.uniform(horizon, cap), BOUNDED),
            ("beta_4_2", beta(4, 2, horizon, cap), BOUNDED),
            ("none", DefaultModel.none(horizon, cap), UNBOUNDED),
        ]
    if scenario == "fig4":
        return [
            ("none", DefaultModel.none(horizon, cap), UNBOUNDED),
            ("uniform", DefaultModel.uniform(horizon, cap), BOUNDED),
            ("exponential_2", DefaultModel.exponential(2.0, horizon, cap), UNBOUNDED),
        ]
    if scenario == "fig3":
        return [("uniform", DefaultModel.uniform(horizon, cap), BOUNDED)]
    raise ConfigError(f"unknown scenario {scenario!r}")


def write_series_csv(path: str, times: np.ndarray, agg: dict) -> None:
    cols = [
        times, agg["mean_wealth"], agg["se_wealth"], agg["mean_strategy"],
        agg["se_strategy"], agg["mean_Y"], agg["se_Y"], agg["mean_u"],
        agg["mean_zx"], agg["mean_gx"], agg["alive_frac"],
    ]
    with open(path, "w", newline="\n") as fh:
        fh.write(CSV_HEADER + "\n")
        for row in zip(*cols):
            fh.write(",".join(f"{val:.9g}" for val in row) + "\n")


def _emit(out_dir: str, name: str, ens: PathEnsemble, files: list) -> None:
    for mode, agg in ens.aggregates.items():
        suffix = "" if len(ens.aggregates) == 1 else f"_{mode}"
        path = os.path.join(out_dir, f"{name}{suffix}.csv")
        write_series_csv(path, ens.times, agg)
        files.append(os.path.basename(path))


def experiment_suite(scenario: str, out_dir: str,
                     exp: ExperimentConfig | None = None,
                     solution_cache: dict | None = None) -> dict:
    """Solve, simulate, and dump the per-model time-series CSVs of a scenario.

    fig1/fig2 run the three bounded laws plus the no-default benchmark;
    fig3 compares the general and best linear contract under the uniform
    law; fig4 compares no default, uniform, and exponential default.
    Returns the manifest, which is also written as manifest.json.
    """
    import pa_lab

    exp = (exp or ExperimentConfig()).resolved()
    os.makedirs(out_dir, exist_ok=True)
    p = exp.market
    files: list[str] = []
    configs: dict = {"scenario": scenario, "sim": {
        "n_paths": exp.sim.n_paths, "dt": exp.sim.dt, "seed": exp.sim.seed,
        "freeze_mode": exp.sim.freeze_mode,
    }, "grid": {"nt": exp.grid.nt, "nx": exp.grid.nx, "ny": exp.grid.ny}}
    cache = solution_cache if solution_cache is not None else {}

    def solved(key, model, case, cfg):
        if key not in cache:
            cache[key] = actor_critic(p, model, exp.grid, cfg, case)
        return cache[key]

    extras = {}
    if scenario == "fig3":
        model = _scenario_models(scenario, exp.horizon, exp.hazard_cap)[0][1]
        rep = compare_linear(p, model, exp.grid, exp.solver, list(exp.p_grid),
                             case=BOUNDED, R=exp.reservation, keep_solutions=True)
        solutions = rep.pop("solutions")
        extras["linear_report"] = {
            k: v for k, v in rep.items() if k not in ("linear",)
        } | {"linear": {str(q): d["value"] for q, d in rep["linear"].items()}}
        runs = [
            ("uniform_general", solutions["general"][1], model),
            ("uniform_linear", solutions[rep["best_p"]][1], model),
        ]
        for name, pol, model_r in runs:
            ens = simulate(p, model_r, pol, None, exp.sim)
            _emit(out_dir, f"{scenario}_{name}", ens, files)
    else:
        for name, model, case in _scenario_models(scenario, exp.horizon, exp.hazard_cap):
            v_s, pol_s, diag = solved((name, "general"), model, case, exp.solver)
            ens = simulate(p, model, pol_s, v_s, exp.sim)
            _emit(out_dir, f"{scenario}_{name}", ens, files)

    manifest = {
        "scenario": scenario,
        "files": files,
        "configs": configs,
        "versions": {
            "pa_lab": pa_lab.__version__,
            "numpy": np.__version__,
        },
    }
    manifest.update(extras)
    with open(os.path.join(out_dir, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    return manifest
