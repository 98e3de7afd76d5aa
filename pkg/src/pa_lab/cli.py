"""Command-line entry points: solve, simulate, compare-linear, experiments, check."""

from __future__ import annotations

import json
import os

# PA_LAB_THREADS bounds the BLAS/OpenMP worker count; it must be exported
# before numpy initialises its thread pools.
_threads = os.environ.get("PA_LAB_THREADS")
if _threads:
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS",
                "NUMEXPR_NUM_THREADS"):
        os.environ.setdefault(var, _threads)

import click
import numpy as np

from pa_lab import hjb, monte_carlo as mc
from pa_lab.config import RunConfig, check_case, load_config
from pa_lab.hjb import ConfigError


def _load(config_path: str) -> RunConfig:
    try:
        return load_config(config_path)
    except (ConfigError, OSError) as exc:
        raise click.ClickException(str(exc))


@click.group()
def main() -> None:
    """Delegated-portfolio contracting lab."""


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(exists=False))
@click.option("--case", type=click.Choice([hjb.BOUNDED, hjb.UNBOUNDED]), default=None,
              help="Defaults to the case implied by the default-time family.")
@click.option("--out", "out_dir", required=True, type=click.Path())
def solve(config_path: str, case: str | None, out_dir: str) -> None:
    """Solve the HJB equation and dump the value/policy grids."""
    cfg = _load(config_path)
    case = case or cfg.case_for_model()
    try:
        check_case(cfg, case)
        v, policy, diag = hjb.actor_critic(
            cfg.market, cfg.model, cfg.grid, cfg.solver_for_class(), case
        )
    except (ConfigError, ValueError) as exc:
        raise click.ClickException(str(exc))
    os.makedirs(out_dir, exist_ok=True)
    diag["principal_value"] = hjb.principal_value(v, cfg.market, cfg.reservation)
    hjb.save_solution(os.path.join(out_dir, "solution.npz"), v, policy, case,
                      meta={"config": cfg.raw, "diagnostics": _jsonable(diag)})
    hjb.dump_grid_csv(os.path.join(out_dir, "grid_dump.csv"), v, policy)
    with open(os.path.join(out_dir, "diagnostics.json"), "w") as fh:
        json.dump(_jsonable(diag), fh, indent=2, sort_keys=True)
    click.echo(f"converged={diag['converged']} iterations={diag['iterations']} "
               f"principal_value={diag['principal_value']:.6g}")


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path())
@click.option("--policy", "policy_path", required=True, type=click.Path())
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--paths", type=int, default=None)
@click.option("--seed", type=int, default=None)
@click.option("--freeze-mode", type=click.Choice(["carry_last", "alive_only", "both"]),
              default=None)
def simulate(config_path: str, policy_path: str, out_dir: str, paths: int | None,
             seed: int | None, freeze_mode: str | None) -> None:
    """Simulate the coupled system under a previously solved policy."""
    cfg = _load(config_path)
    if not os.path.exists(policy_path):
        raise click.ClickException(f"policy dump not found: {policy_path}")
    v, policy, case, _meta = hjb.load_solution(policy_path)
    sim = cfg.sim
    from dataclasses import replace
    if paths is not None:
        sim = replace(sim, n_paths=paths)
    if seed is not None:
        sim = replace(sim, seed=seed)
    if freeze_mode is not None:
        sim = replace(sim, freeze_mode=freeze_mode)
    try:
        ens = mc.simulate(cfg.market, cfg.model, policy, v, sim)
    except (ConfigError, ValueError) as exc:
        raise click.ClickException(str(exc))
    os.makedirs(out_dir, exist_ok=True)
    name = cfg.model.family.value
    files = []
    mc._emit(out_dir, name, ens, files)
    with open(os.path.join(out_dir, "sim_diagnostics.json"), "w") as fh:
        json.dump(_jsonable(ens.diagnostics), fh, indent=2, sort_keys=True)
    click.echo(f"wrote {', '.join(files)}")


@main.command("compare-linear")
@click.option("--config", "config_path", required=True, type=click.Path())
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--p-grid", "p_grid", default=None,
              help="Comma-separated percentages, e.g. '0.1,0.3,0.5'.")
def compare_linear_cmd(config_path: str, out_dir: str, p_grid: str | None) -> None:
    """Optimality gap of fixed-percentage (linear) contracts."""
    cfg = _load(config_path)
    grid_vals = mc.DEFAULT_P_GRID if p_grid is None else [
        float(s) for s in p_grid.split(",") if s.strip()
    ]
    try:
        check_case(cfg, cfg.case_for_model())
        report = mc.compare_linear(
            cfg.market, cfg.model, cfg.grid, cfg.solver, grid_vals,
            case=cfg.case_for_model(), R=cfg.reservation,
        )
    except (ConfigError, ValueError) as exc:
        raise click.ClickException(str(exc))
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "compare_linear.json"), "w") as fh:
        json.dump(_jsonable(report), fh, indent=2, sort_keys=True)
    click.echo(f"general={report['general_value']:.6g} best_p={report['best_p']} "
               f"gap={report['gap']:.6g}")


@main.command()
@click.argument("scenario", type=click.Choice(["fig1", "fig2", "fig3", "fig4"]))
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--config", "config_path", default=None, type=click.Path(),
              help="Optional config overriding market/grid/solver/sim defaults.")
@click.option("--paths", type=int, default=None)
@click.option("--seed", type=int, default=None)
def experiments(scenario: str, out_dir: str, config_path: str | None,
                paths: int | None, seed: int | None) -> None:
    """Reproduce a figure scenario: solve all models, simulate, write CSVs."""
    from dataclasses import replace
    exp = mc.ExperimentConfig()
    if config_path:
        cfg = _load(config_path)
        exp = mc.ExperimentConfig(
            market=cfg.market, grid=cfg.grid, solver=cfg.solver, sim=cfg.sim,
            hazard_cap=cfg.model.hazard_cap, horizon=cfg.model.horizon,
            reservation=cfg.reservation,
        )
    exp = exp.resolved()
    if paths is not None:
        exp = replace(exp, sim=replace(exp.sim, n_paths=paths))
    if seed is not None:
        exp = replace(exp, sim=replace(exp.sim, seed=seed))
    try:
        manifest = mc.experiment_suite(scenario, out_dir, exp)
    except (ConfigError, ValueError) as exc:
        raise click.ClickException(str(exc))
    click.echo(f"wrote {len(manifest['files'])} series + manifest.json to {out_dir}")


@main.command()
@click.argument("suite", type=click.Choice(["hazard", "oracle", "martingale", "degenerate"]))
def check(suite: str) -> None:
    """Run one of the built-in property suites and report pass/fail lines."""
    from pa_lab import checks

    results = checks.run_suite(suite)
    failed = 0
    for name, ok, detail in results:
        status = "PASS" if ok else "FAIL"
        click.echo(f"[{status}] {name}: {detail}")
        failed += 0 if ok else 1
    if failed:
        raise click.ClickException(f"{failed} properties failed in suite '{suite}'")
    click.echo(f"suite '{suite}': all {len(results)} properties passed")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    return obj


if __name__ == "__main__":
    main()
