"""Run configuration: sectioned TOML files validated into model objects.

Sections [market] and [default] must be present (possibly empty; every key
has a baseline default).  Unknown keys anywhere are hard errors so typos in
experiment definitions fail fast.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, field

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from pa_lab.default_time import DefaultModel, Family
from pa_lab.hjb import BOUNDED, UNBOUNDED, ConfigError, GridSpec, SolverConfig
from pa_lab.market import MarketParams
from pa_lab.monte_carlo import SimConfig

_MARKET_KEYS = {"b", "sigma", "x0", "alpha", "eta", "c_lo", "c_hi"}
_DEFAULT_KEYS = {"family", "a", "b", "rate", "horizon", "hazard_cap"}
_AGENT_KEYS = {"reservation", "contract_class", "linear_p"}
_GRID_KEYS = {"nt", "nx", "ny", "x_min", "x_max", "y_min", "y_max"}
_SOLVER_KEYS = {
    "max_iter", "tol", "w_start", "w_end", "ramp",
    "z_lo", "z_hi", "z_n", "zx_lo", "zx_hi", "zx_n", "g_lo", "g_hi", "g_n",
    "gx_lo", "gx_hi", "gx_n", "u_lo", "u_hi", "u_n",
    "refine_levels", "refine_levels_iter", "refine_points", "refine_shrink",
    "pd_margin", "stability_safety", "residual_tol",
}
_SIM_KEYS = {"paths", "dt", "seed", "freeze_mode"}
_OUTPUT_KEYS = {"dir"}
_SECTIONS = {
    "market": _MARKET_KEYS, "default": _DEFAULT_KEYS, "agent": _AGENT_KEYS,
    "grid": _GRID_KEYS, "solver": _SOLVER_KEYS, "sim": _SIM_KEYS,
    "output": _OUTPUT_KEYS,
}


@dataclass
class RunConfig:
    market: MarketParams
    model: DefaultModel
    grid: GridSpec
    solver: SolverConfig
    sim: SimConfig
    reservation: float = -1.0
    contract_class: str = "general"
    linear_p: float = 0.5
    output_dir: str = "."
    raw: dict = field(default_factory=dict)

    def solver_for_class(self) -> SolverConfig:
        p = self.linear_p if self.contract_class == "linear" else None
        return self.solver.with_contract_class(self.contract_class, p)

    def case_for_model(self) -> str:
        return BOUNDED if self.model.hypothesis == "bounded" else UNBOUNDED


def _check_keys(section: str, table: dict) -> None:
    allowed = _SECTIONS[section]
    for key in table:
        if key not in allowed:
            raise ConfigError(f"unknown key '{key}' in section [{section}]")


def load_config(path: str) -> RunConfig:
    with open(path, "rb") as fh:
        data = tomllib.load(fh)
    return build_config(data)


def build_config(data: dict) -> RunConfig:
    for section in data:
        if section not in _SECTIONS:
            raise ConfigError(f"unknown section [{section}]")
    for required in ("market", "default"):
        if required not in data:
            raise ConfigError(f"missing required section [{required}]")
    for section, table in data.items():
        if not isinstance(table, dict):
            raise ConfigError(f"section [{section}] must be a table")
        _check_keys(section, table)

    mk = data["market"]
    try:
        market = MarketParams(
            b=[float(mk.get("b", 0.1))],
            sigma=[[float(mk.get("sigma", 0.3))]],
            x0=float(mk.get("x0", 1.0)),
            alpha=[float(mk.get("alpha", 0.0))],
            eta=float(mk.get("eta", 1.0)),
            constraint_lo=float(mk.get("c_lo", 0.0)),
            constraint_hi=float(mk.get("c_hi", 1.0)),
        )
    except ValueError as exc:
        raise ConfigError(f"invalid [market] configuration: {exc}") from exc

    df = data["default"]
    family = str(df.get("family", "uniform")).lower()
    try:
        Family(family)
    except ValueError as exc:
        raise ConfigError(f"unknown 'family' {family!r} in section [default]") from exc
    try:
        model = DefaultModel(
            family=Family(family),
            a=float(df["a"]) if "a" in df else None,
            b=float(df["b"]) if "b" in df else None,
            rate=float(df["rate"]) if "rate" in df else None,
            horizon=float(df.get("horizon", 1.0)),
            hazard_cap=float(df.get("hazard_cap", 1e4)),
        )
        model.validate()
    except ValueError as exc:
        raise ConfigError(f"invalid [default] configuration: {exc}") from exc

    ag = data.get("agent", {})
    reservation = float(ag.get("reservation", -1.0))
    if reservation >= 0:
        raise ConfigError("'reservation' in [agent] must be negative")
    contract_class = str(ag.get("contract_class", "general"))
    if contract_class not in ("general", "linear", "no_s"):
        raise ConfigError(f"unknown 'contract_class' {contract_class!r} in [agent]")
    linear_p = float(ag.get("linear_p", 0.5))

    gr = data.get("grid", {})
    try:
        grid = GridSpec(
            nt=int(gr.get("nt", 40)), nx=int(gr.get("nx", 40)), ny=int(gr.get("ny", 40)),
            t_max=model.horizon,
            x_range=(float(gr.get("x_min", 0.0)), float(gr.get("x_max", 10.0))),
            y_range=(float(gr.get("y_min", 0.0)), float(gr.get("y_max", 10.0))),
        )
    except ValueError as exc:
        raise ConfigError(f"invalid [grid] configuration: {exc}") from exc

    so = dict(data.get("solver", {}))
    try:
        solver = SolverConfig(**{k: so[k] for k in so})
    except TypeError as exc:
        raise ConfigError(f"invalid [solver] configuration: {exc}") from exc

    si = data.get("sim", {})
    try:
        sim = SimConfig(
            n_paths=int(si.get("paths", 10_000)),
            dt=float(si.get("dt", 1.0 / 500.0)),
            seed=int(si.get("seed", 12345)),
            freeze_mode=str(si.get("freeze_mode", "carry_last")),
        )
        sim.n_steps(model.horizon)
    except ValueError as exc:
        raise ConfigError(f"invalid [sim] configuration: {exc}") from exc

    output_dir = str(data.get("output", {}).get("dir", "."))
    return RunConfig(
        market=market, model=model, grid=grid, solver=solver, sim=sim,
        reservation=reservation, contract_class=contract_class, linear_p=linear_p,
        output_dir=output_dir, raw=data,
    )


def check_case(cfg: RunConfig, case: str) -> None:
    """CLI-level pairing of default-law support and solver case.

    Laws supported inside the horizon (beta, uniform) take the bounded
    equation; laws whose support exceeds it (exponential, none) take the
    unbounded one.
    """
    if case not in (BOUNDED, UNBOUNDED):
        raise ConfigError(f"case must be '{BOUNDED}' or '{UNBOUNDED}', got {case!r}")
    expected = cfg.case_for_model()
    if case != expected:
        raise ConfigError(
            f"default.family '{cfg.model.family.value}' requires case '{expected}', "
            f"got '{case}'"
        )
