"""Tests for the CLI commands, outputs and exit codes."""

from __future__ import annotations

import csv
import json
from pathlib import Path

import pytest
from typer.testing import CliRunner

from cli import app

runner = CliRunner()

FAST_MODEL = ["--mu", "1", "--gamma", "0.2"]


def _rows(path: Path) -> list[dict[str, str]]:
    with path.open() as f:
        return list(csv.DictReader(f))


def test_no_args_shows_help() -> None:
    result = runner.invoke(app, [])
    assert "equilibrium" in result.output
    assert "gini-sweep" in result.output


def test_equilibrium_defaults(tmp_path: Path) -> None:
    result = runner.invoke(app, ["equilibrium", "--out", str(tmp_path)])
    assert result.exit_code == 0, result.output
    summary = json.loads((tmp_path / "equilibrium.json").read_text())
    assert summary["r_bar"] == pytest.approx(0.45088, abs=1e-4)
    assert summary["gini"] == pytest.approx(0.7011, abs=1e-3)
    rows = _rows(tmp_path / "equilibrium_pmf.csv")
    assert {row["group"] for row in rows} == {"c", "h", "mix"}
    assert (tmp_path / "equilibrium_metadata.json").exists()


def test_equilibrium_honest_only(tmp_path: Path) -> None:
    result = runner.invoke(
        app, ["equilibrium", "--n-h", "1", "--out", str(tmp_path), "--format", "json"]
    )
    assert result.exit_code == 0, result.output
    summary = json.loads((tmp_path / "equilibrium.json").read_text())
    assert summary["r_bar"] == pytest.approx(5.0 / 6.0)
    assert (tmp_path / "equilibrium_pmf.json").exists()


def test_invalid_gamma_exits_2_naming_field(tmp_path: Path) -> None:
    result = runner.invoke(
        app, ["equilibrium", "--gamma", "1.5", "--out", str(tmp_path)]
    )
    assert result.exit_code == 2
    assert "gamma" in result.output


def test_numeric_failure_exits_3(tmp_path: Path) -> None:
    # cheater tail far too heavy for 30 bins
    result = runner.invoke(
        app, ["ode", "--n-max", "30", "--t-end", "1", "--out", str(tmp_path)]
    )
    assert result.exit_code == 3
    assert "tail" in result.output


def test_abm_writes_snapshots_and_is_reproducible(tmp_path: Path) -> None:
    args = ["abm", "--n-agents", "20", "--t-end", "10", "--seed", "4"]
    first = runner.invoke(app, [*args, "--out", str(tmp_path / "a")])
    second = runner.invoke(app, [*args, "--out", str(tmp_path / "b")])
    assert first.exit_code == 0, first.output
    assert second.exit_code == 0, second.output

    for name in ("abm_snapshots.csv", "abm_comparison.csv"):
        first_bytes = (tmp_path / "a" / name).read_bytes()
        assert first_bytes == (tmp_path / "b" / name).read_bytes()
    comparison = _rows(tmp_path / "a" / "abm_comparison.csv")
    assert {row["group"] for row in comparison} == {"all", "honest", "cheater"}
    metadata = json.loads((tmp_path / "a" / "abm_metadata.json").read_text())
    assert metadata["seed"] == 4
    assert metadata["event_count"][0] > 0


def test_abm_without_record_times_writes_metadata_only(tmp_path: Path) -> None:
    config = tmp_path / "config.yaml"
    config.write_text(
        "model:\n  n_agents: 20\nsim:\n  t_end: 5.0\n  record_times: []\n"
    )
    out = tmp_path / "out"
    result = runner.invoke(app, ["abm", "--config", str(config), "--out", str(out)])
    assert result.exit_code == 0, result.output
    assert sorted(p.name for p in out.iterdir()) == ["abm_metadata.json"]


def test_ode_zero_horizon_echoes_initial(tmp_path: Path) -> None:
    result = runner.invoke(
        app,
        ["ode", *FAST_MODEL, "--n-max", "60", "--t-end", "0", "--out", str(tmp_path)],
    )
    assert result.exit_code == 0, result.output
    rows = _rows(tmp_path / "ode_trajectory.csv")
    assert {row["time"] for row in rows} == {"0.0"}
    mass = [r for r in rows if r["group"] == "mix" and float(r["probability"]) > 0]
    assert [r["n"] for r in mass] == ["1"]


def test_ode_writes_h_trace(tmp_path: Path) -> None:
    args = ["ode", *FAST_MODEL, "--n-max", "60", "--t-end", "2", "--dt", "0.01"]
    args += ["--observe-every", "50"]
    result = runner.invoke(app, [*args, "--out", str(tmp_path)])
    assert result.exit_code == 0, result.output
    trace = _rows(tmp_path / "ode_h_trace.csv")
    assert len(trace) == 5
    values = [float(row["H"]) for row in trace]
    assert values == sorted(values)


def test_ode_rejects_fractional_mu(tmp_path: Path) -> None:
    result = runner.invoke(app, ["ode", "--mu", "2.5", "--out", str(tmp_path)])
    assert result.exit_code == 2


def test_gini_sweep_outputs(tmp_path: Path) -> None:
    result = runner.invoke(
        app,
        ["gini-sweep", "--mu", "5", "--n-h", "0.2", "--n-h", "0.8", "--points", "10"]
        + ["--out", str(tmp_path)],
    )
    assert result.exit_code == 0, result.output
    assert len(_rows(tmp_path / "gini_sweep.csv")) == 20
    reports = json.loads((tmp_path / "gini_monotonicity.json").read_text())
    assert [r["adjacent_decreases"] for r in reports] == [0, 0]


def test_gini_sweep_empty_grid_exits_2(tmp_path: Path) -> None:
    result = runner.invoke(app, ["gini-sweep", "--points", "0", "--out", str(tmp_path)])
    assert result.exit_code == 2


def test_linearized_traces(tmp_path: Path) -> None:
    args = ["linearized", *FAST_MODEL, "--trials", "2", "--t-end", "0.5"]
    result = runner.invoke(app, [*args, "--dt", "0.01", "--out", str(tmp_path)])
    assert result.exit_code == 0, result.output
    rows = _rows(tmp_path / "linearized_energy.csv")
    assert {row["trial"] for row in rows} == {"0", "1"}
    columns = {"trial", "time", "energy", "dissipation_rate", "fd_residual"}
    assert set(rows[0]) == columns
    summaries = json.loads((tmp_path / "linearized_summary.json").read_text())
    assert all(s["monotone"] for s in summaries)


def test_verify_rejects_unknown_check(tmp_path: Path) -> None:
    result = runner.invoke(app, ["verify", "--only", "bogus", "--out", str(tmp_path)])
    assert result.exit_code == 2
    assert "bogus" in result.output


def test_verify_subset_passes(tmp_path: Path) -> None:
    result = runner.invoke(
        app,
        ["verify", "--only", "equilibrium", "--only", "operators"]
        + ["--out", str(tmp_path)],
    )
    assert result.exit_code == 0, result.output
    report = json.loads((tmp_path / "verify.json").read_text())
    assert report["success"] is True
    assert list(report["checks"]) == ["equilibrium", "operators"]
    assert "PASS" in result.output
