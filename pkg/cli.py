#!/usr/bin/env python3
"""CLI for the BDY exchange game with probabilistic cheaters."""

import logging
import math
import os
from collections.abc import Iterator
from concurrent.futures import ProcessPoolExecutor
from contextlib import contextmanager
from itertools import repeat
from pathlib import Path
from typing import Annotated, Any

import numpy as np
import typer
from dotenv import load_dotenv
from pydantic import ValidationError

from bdy import abm, analysis, lyapunov, meanfield
from bdy.config import ExperimentConfig, OutputFormat, load_config
from bdy.core import dirac_pmf, solve_equilibrium
from bdy.errors import BDYError, ConfigError, InvalidParamsError
from bdy.io import write_json, write_metadata, write_table
from bdy.verify import CHECKS, run_verification

app = typer.Typer(
    name="bdy",
    help="BDY exchange game with cheaters: ABM, mean-field ODE, Lyapunov checks, Gini",
    no_args_is_help=True,
)

PMF_COLUMNS = ("time", "group", "n", "probability")


def _mark_success() -> str:
    """Return success indicator (emoji or plain text based on BDY_PLAIN env var)."""
    return "" if os.getenv("BDY_PLAIN") == "1" else "✅"


def _mark_error() -> str:
    """Return error indicator (emoji or plain text based on BDY_PLAIN env var)."""
    return "" if os.getenv("BDY_PLAIN") == "1" else "❌"


@app.callback()
def _load_env(
    log_level: Annotated[
        str | None,
        typer.Option("--log-level", help="Logging level (default: BDY_LOG_LEVEL)"),
    ] = None,
) -> None:
    # Skip dotenv loading in tests/CI for hermetic environments
    if os.getenv("BDY_SKIP_DOTENV") != "1":
        load_dotenv(override=False)
    level = (log_level or os.getenv("BDY_LOG_LEVEL") or "WARNING").upper()
    logging.basicConfig(
        level=getattr(logging, level, logging.WARNING),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )


ConfigOption = Annotated[
    Path | None,
    typer.Option("--config", help="JSON or YAML config file layered over defaults"),
]
SeedOption = Annotated[int | None, typer.Option("--seed", help="RNG seed")]
OutOption = Annotated[Path | None, typer.Option("--out", help="Output directory")]
FormatOption = Annotated[
    OutputFormat | None, typer.Option("--format", help="Table format: csv or json")
]
MuOption = Annotated[float | None, typer.Option("--mu", help="Average wealth")]
HonestOption = Annotated[
    float | None, typer.Option("--n-h", help="Honest fraction in [0, 1]")
]
GammaOption = Annotated[
    float | None, typer.Option("--gamma", help="Cheat probability in [0, 1)")
]


def _resolve(
    config_path: Path | None,
    common: tuple[int | None, Path | None, OutputFormat | None],
    overrides: dict[str, Any],
) -> ExperimentConfig:
    """Layer defaults, file and flags; exit 2 naming the field on bad values."""
    seed, out, fmt = common
    layered = {"seed": seed, "out": out, "format": fmt, **overrides}
    try:
        return load_config(config_path, layered)
    except ValidationError as e:
        fields = ", ".join(".".join(str(p) for p in err["loc"]) for err in e.errors())
        typer.echo(f"{_mark_error()} Invalid config ({fields}): {e}", err=True)
        raise typer.Exit(2) from e
    except ConfigError as e:
        typer.echo(f"{_mark_error()} {e}", err=True)
        raise typer.Exit(2) from e


@contextmanager
def _guard(action: str) -> Iterator[None]:
    """Map package errors to their exit codes."""
    try:
        yield
    except BDYError as e:
        typer.echo(f"{_mark_error()} {action} failed: {e}", err=True)
        raise typer.Exit(e.exit_code) from e
    except ValidationError as e:
        typer.echo(f"{_mark_error()} {action} failed: {e}", err=True)
        raise typer.Exit(2) from e


def _metadata(config: ExperimentConfig, command: str, **extra: object) -> Path:
    payload = {
        "command": command,
        "seed": config.seed,
        "config": config.model_dump(mode="json"),
        **extra,
    }
    return write_metadata(config.out / f"{command}_metadata.json", payload)


def _model(mu: float | None, n_h: float | None, gamma: float | None) -> dict[str, Any]:
    return {"model": {"mu": mu, "n_h": n_h, "gamma": gamma}}


@app.command("equilibrium")
def equilibrium(
    config_path: ConfigOption = None,
    seed: SeedOption = None,
    out: OutOption = None,
    fmt: FormatOption = None,
    mu: MuOption = None,
    n_h: HonestOption = None,
    gamma: GammaOption = None,
    n_max: Annotated[
        int | None,
        typer.Option("--n-max", help="Truncation (default: tail below 1e-12)"),
    ] = None,
) -> None:
    """Solve for the equilibrium pair; write a summary and the PMFs."""
    config = _resolve(config_path, (seed, out, fmt), _model(mu, n_h, gamma))
    with _guard("Equilibrium"):
        eq = solve_equilibrium(config.model, n_max)
        summary = {
            "params": config.model.model_dump(mode="json"),
            "r_bar": eq.r_bar,
            "cheater_ratio": eq.cheater_ratio,
            "mean_honest": eq.mean_honest,
            "mean_cheater": eq.mean_cheater,
            "gini": analysis.gini_equilibrium(config.model),
            "n_max": eq.n_max,
            "tail_honest": eq.tail_h,
            "tail_cheater": eq.tail_c,
        }
        write_json(config.out / "equilibrium.json", summary)
        rows = [
            {"group": group, "n": n, "probability": p}
            for group, pmf in (
                ("c", eq.p_bar_c),
                ("h", eq.p_bar_h),
                ("mix", eq.p_bar_mix),
            )
            for n, p in enumerate(pmf.probs.tolist())
        ]
        write_table(
            config.out / "equilibrium_pmf",
            rows,
            ("group", "n", "probability"),
            config.format,
        )
        _metadata(config, "equilibrium")
    typer.echo(f"{_mark_success()} r_bar = {eq.r_bar:.12f}")
    typer.echo(f"Results written to {config.out}")


def _abm_groups(honest_count: int, n_agents: int) -> list[abm.Group]:
    groups = [abm.Group.ALL]
    if honest_count > 0:
        groups.append(abm.Group.HONEST)
    if honest_count < n_agents:
        groups.append(abm.Group.CHEATER)
    return groups


@app.command("abm")
def run_abm(
    config_path: ConfigOption = None,
    seed: SeedOption = None,
    out: OutOption = None,
    fmt: FormatOption = None,
    mu: MuOption = None,
    n_h: HonestOption = None,
    gamma: GammaOption = None,
    n_agents: Annotated[
        int | None, typer.Option("--n-agents", help="Population size")
    ] = None,
    t_end: Annotated[
        float | None,
        typer.Option("--t-end", help="Horizon; also the only record time"),
    ] = None,
    replicas: Annotated[
        int | None, typer.Option("--replicas", help="Independent replicas")
    ] = None,
    workers: Annotated[
        int | None, typer.Option("--workers", help="Worker processes")
    ] = None,
) -> None:
    """Simulate the agent-based game; write snapshots and TV to equilibrium."""
    sim: dict[str, Any] = {"t_end": t_end, "replicas": replicas, "workers": workers}
    if t_end is not None:
        sim["record_times"] = [t_end]
    overrides = _model(mu, n_h, gamma)
    overrides["model"]["n_agents"] = n_agents
    config = _resolve(config_path, (seed, out, fmt), {**overrides, "sim": sim})

    params = config.model
    with _guard("Simulation"):
        initial = abm.initial_state(params)
        sim_config = abm.SimConfig(
            seed=config.seed,
            t_end=config.sim.t_end,
            record_times=config.sim.record_times,
        )
        results = abm.run_ensemble(
            params, sim_config, initial, config.sim.replicas, config.sim.workers
        )
        _metadata(
            config,
            "abm",
            event_count=[r.event_count for r in results],
            transfer_count=[r.transfer_count for r in results],
            solvent_events=[r.solvent_events for r in results],
            summaries=[
                {
                    "time": s.time,
                    "mean_honest": s.mean_honest,
                    "mean_cheater": s.mean_cheater,
                    "gini": s.gini,
                }
                for s in results[0].snapshots
            ],
        )
        if not config.sim.record_times:
            typer.echo(f"{_mark_success()} No record times; metadata only")
            return

        eq = solve_equilibrium(params)
        targets = {
            abm.Group.ALL: eq.p_bar_mix,
            abm.Group.HONEST: eq.p_bar_h,
            abm.Group.CHEATER: eq.p_bar_c,
        }
        rows: list[dict[str, object]] = []
        comparison: list[dict[str, object]] = []
        for index, tau in enumerate(config.sim.record_times):
            for group in _abm_groups(initial.honest_count, initial.n_agents):
                pmf = abm.ensemble_pmf(results, index, group)
                rows.extend(
                    {"time": tau, "group": str(group), "n": n, "probability": p}
                    for n, p in enumerate(pmf.probs.tolist())
                )
                comparison.append({
                    "time": tau,
                    "group": str(group),
                    "tv": analysis.distance(pmf, targets[group]),
                    "l1": analysis.distance(pmf, targets[group], analysis.Metric.L1),
                })
        write_table(config.out / "abm_snapshots", rows, PMF_COLUMNS, config.format)
        write_table(
            config.out / "abm_comparison",
            comparison,
            ("time", "group", "tv", "l1"),
            config.format,
        )
    last = config.sim.record_times[-1]
    for row in comparison:
        if row["time"] == last:
            typer.echo(f"TV[{row['group']}] at t={last:g}: {row['tv']:.4f}")
    typer.echo(f"{_mark_success()} Results written to {config.out}")


@app.command("ode")
def ode(
    config_path: ConfigOption = None,
    seed: SeedOption = None,
    out: OutOption = None,
    fmt: FormatOption = None,
    mu: MuOption = None,
    n_h: HonestOption = None,
    gamma: GammaOption = None,
    n_max: Annotated[int | None, typer.Option("--n-max", help="Truncation")] = None,
    dt: Annotated[float | None, typer.Option("--dt", help="RK4 step")] = None,
    t_end: Annotated[float | None, typer.Option("--t-end", help="Horizon")] = None,
    observe_every: Annotated[
        int | None, typer.Option("--observe-every", help="Steps between records")
    ] = None,
) -> None:
    """Integrate the mean-field system from Dirac(mu) with the H-trace on."""
    block = {"n_max": n_max, "dt": dt, "t_end": t_end, "observe_every": observe_every}
    overrides = {**_model(mu, n_h, gamma), "ode": block}
    config = _resolve(config_path, (seed, out, fmt), overrides)

    params = config.model
    with _guard("Integration"):
        if not float(params.mu).is_integer():
            msg = f"Dirac initial data needs integer mu, got {params.mu}"
            raise InvalidParamsError(msg)
        eq = solve_equilibrium(params, config.ode.n_max)
        start = dirac_pmf(round(params.mu), eq.n_max)
        snapshots = meanfield.SnapshotObserver()
        h_trace = lyapunov.HTraceObserver(eq)
        invariants = meanfield.InvariantObserver()
        trajectory = meanfield.integrate(
            meanfield.MeanFieldState(start, start, params),
            config.ode.t_end,
            config.ode.dt,
            [snapshots, h_trace, invariants],
            config.ode.observe_every,
        )
        final = trajectory.final
        l1 = {
            "cheater": analysis.distance(final.pc, eq.p_bar_c, analysis.Metric.L1),
            "honest": analysis.distance(final.ph, eq.p_bar_h, analysis.Metric.L1),
        }
        write_table(
            config.out / "ode_trajectory", snapshots.rows(), PMF_COLUMNS, config.format
        )
        write_table(
            config.out / "ode_h_trace",
            h_trace.rows(),
            ("time", "H", "H_equilibrium_minus_H", "production_rate"),
            config.format,
        )
        _metadata(
            config,
            "ode",
            steps=trajectory.steps,
            dt=trajectory.dt,
            l1_to_equilibrium=l1,
            max_mass_drift=invariants.max_mass_drift,
            max_mean_drift=invariants.max_mean_drift,
        )
    typer.echo(
        f"{_mark_success()} t={final.time:g}: L1 cheater {l1['cheater']:.3e}, "
        f"honest {l1['honest']:.3e}"
    )
    typer.echo(f"Results written to {config.out}")


@app.command("gini-sweep")
def gini_sweep(
    config_path: ConfigOption = None,
    seed: SeedOption = None,
    out: OutOption = None,
    fmt: FormatOption = None,
    mu_values: Annotated[
        list[float] | None, typer.Option("--mu", help="Average wealth (repeatable)")
    ] = None,
    n_h_values: Annotated[
        list[float] | None, typer.Option("--n-h", help="Honest fraction (repeatable)")
    ] = None,
    points: Annotated[
        int | None, typer.Option("--points", help="Grid points on [0, gamma_max]")
    ] = None,
    gamma_max: Annotated[
        float | None, typer.Option("--gamma-max", help="Last grid point")
    ] = None,
    workers: Annotated[
        int, typer.Option("--workers", help="Worker processes")
    ] = 1,
) -> None:
    """Closed-form equilibrium Gini along a gamma grid for each (mu, n_h)."""
    block = {
        "mu_values": mu_values or None,
        "n_h_values": n_h_values or None,
        "points": points,
        "gamma_max": gamma_max,
    }
    config = _resolve(config_path, (seed, out, fmt), {"sweep": block})

    grid = config.sweep.gamma_grid()
    pairs = [(m, h) for m in config.sweep.mu_values for h in config.sweep.n_h_values]
    mus, honest = [m for m, _ in pairs], [h for _, h in pairs]
    with _guard("Gini sweep"):
        if workers > 1:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                sweeps = list(pool.map(analysis.gini_sweep, mus, honest, repeat(grid)))
        else:
            sweeps = [analysis.gini_sweep(m, h, grid) for m, h in pairs]
        rows = [row for sweep in sweeps for row in sweep.rows()]
        write_table(
            config.out / "gini_sweep",
            rows,
            (
                "mu",
                "n_h",
                "gamma",
                "r_bar",
                "gini",
                "mean_cheater",
                "mean_honest",
                "min_denominator",
            ),
            config.format,
        )
        reports = [sweep.report() for sweep in sweeps]
        write_json(config.out / "gini_monotonicity.json", reports)
        _metadata(config, "gini-sweep")

    for report in reports:
        mark = _mark_success() if report["monotone"] else _mark_error()
        typer.echo(
            f"{mark} mu={report['mu']:g} n_h={report['n_h']:g}: "
            f"{report['adjacent_decreases']} decreases"
        )
    typer.echo(f"Results written to {config.out}")


def _finite_or_none(value: float) -> float | None:
    return value if math.isfinite(value) else None


@app.command("linearized")
def linearized(
    config_path: ConfigOption = None,
    seed: SeedOption = None,
    out: OutOption = None,
    fmt: FormatOption = None,
    mu: MuOption = None,
    n_h: HonestOption = None,
    gamma: GammaOption = None,
    trials: Annotated[
        int | None, typer.Option("--trials", help="Random perturbations")
    ] = None,
    t_end: Annotated[float | None, typer.Option("--t-end", help="Horizon")] = None,
    dt: Annotated[float | None, typer.Option("--dt", help="RK4 step")] = None,
) -> None:
    """Energy traces of the linearized flow for random admissible perturbations."""
    block = {"trials": trials, "t_end": t_end, "dt": dt}
    overrides = {**_model(mu, n_h, gamma), "linearized": block}
    config = _resolve(config_path, (seed, out, fmt), overrides)

    params = config.model
    settings = config.linearized
    rng = np.random.default_rng(config.seed)
    rows: list[dict[str, object]] = []
    summaries: list[dict[str, object]] = []
    with _guard("Linearized flow"):
        eq = solve_equilibrium(params)
        for trial in range(settings.trials):
            w0 = lyapunov.random_admissible_pair(eq, rng)
            trace = lyapunov.integrate_linearized(
                w0, eq, params, settings.t_end, settings.dt, settings.observe_every
            )
            residuals = trace.fd_residuals()
            rows.extend(
                {
                    "trial": trial,
                    "time": float(t),
                    "energy": float(e),
                    "dissipation_rate": float(rate),
                    "fd_residual": _finite_or_none(float(res)),
                }
                for t, e, rate, res in zip(
                    trace.times, trace.energies, trace.rates, residuals, strict=True
                )
            )
            finite = residuals[np.isfinite(residuals)]
            decay = (
                lyapunov.estimate_decay_rate(trace.times, trace.energies)
                if trace.times.size > 1
                else None
            )
            summaries.append({
                "trial": trial,
                "monotone": trace.is_monotone(),
                "max_fd_residual": float(finite.max()) if finite.size else None,
                "decay_rate": decay,
            })
        write_table(
            config.out / "linearized_energy",
            rows,
            ("trial", "time", "energy", "dissipation_rate", "fd_residual"),
            config.format,
        )
        write_json(config.out / "linearized_summary.json", summaries)
        _metadata(config, "linearized")

    monotone = sum(1 for s in summaries if s["monotone"])
    typer.echo(f"{_mark_success()} {monotone}/{len(summaries)} traces monotone")
    typer.echo(f"Results written to {config.out}")


@app.command("verify")
def verify(
    config_path: ConfigOption = None,
    seed: SeedOption = None,
    out: OutOption = None,
    fmt: FormatOption = None,
    only: Annotated[
        list[str] | None,
        typer.Option("--only", help=f"Run a subset of: {', '.join(CHECKS)}"),
    ] = None,
) -> None:
    """Run the acceptance checks and print a pass/fail table."""
    config = _resolve(config_path, (seed, out, fmt), {})
    unknown = sorted(set(only or ()) - set(CHECKS))
    if unknown:
        typer.echo(f"{_mark_error()} Unknown checks: {', '.join(unknown)}", err=True)
        raise typer.Exit(2)

    with _guard("Verification"):
        result = run_verification(config, only or None)
        write_json(config.out / "verify.json", result)
        _metadata(config, "verify")

    width = max(len(name) for name in result["checks"])
    for name, check in result["checks"].items():
        mark = _mark_success() if check["passed"] else _mark_error()
        status = "PASS" if check["passed"] else "FAIL"
        typer.echo(f"{name:<{width}}  {status} {mark}".rstrip())
    if result["success"]:
        typer.echo(f"{_mark_success()} All checks passed")
        return
    typer.echo(f"{_mark_error()} Some checks failed; details in verify.json", err=True)
    raise typer.Exit(4)


if __name__ == "__main__":
    app()
