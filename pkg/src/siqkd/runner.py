"""Run a parsed scenario config and write its outputs."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .channel import write_events_csv
from .config import ScenarioConfig, config_hash
from .pipeline import (
    CSV_HEADER,
    ProtocolModel,
    ScenarioRow,
    analytic_row,
    cutoff_distance,
    monte_carlo_row,
)
from .protocol import SiftedStats


@dataclass
class ScenarioResult:
    analytic: list[ScenarioRow]
    montecarlo: list[ScenarioRow] | None = None
    mc_stats: list[SiftedStats] | None = None
    events: np.ndarray | None = None
    cutoff_km: float | None = None
    provenance: dict = field(default_factory=dict)


def run_scenario(cfg: ScenarioConfig, sweep: bool | None = None, keep_events: bool = True) -> ScenarioResult:
    """Analytic pipeline at each distance, plus the seeded Monte Carlo when
    ``num_symbols > 0``. ``sweep=None`` sweeps iff the config has a sweep."""
    sc = cfg.scenario
    do_sweep = cfg.sweep is not None if sweep is None else sweep
    if do_sweep and cfg.sweep is None:
        raise ValueError("no sweep given: pass --sweep start:stop:step or add a sweep section")
    distances = cfg.sweep.distances() if do_sweep else [sc.channel.length_km]
    model = ProtocolModel(sc)
    result = ScenarioResult(analytic=[analytic_row(sc.at_distance(d), model) for d in distances])
    if do_sweep:
        result.cutoff_km = cutoff_distance(sc, model)
    if cfg.num_symbols > 0:
        result.montecarlo, result.mc_stats = [], []
        for d in distances:
            row, stats, events = monte_carlo_row(sc.at_distance(d), cfg.num_symbols, cfg.seed, model)
            result.montecarlo.append(row)
            result.mc_stats.append(stats)
            if keep_events and not do_sweep:
                result.events = events
    result.provenance = {
        "config_sha256": config_hash(cfg),
        "seed": cfg.seed,
        "num_symbols": cfg.num_symbols,
        "protocol": sc.protocol.protocol.value,
        "cutoff_km": result.cutoff_km,
        "tool_version": __version__,
    }
    return result


def _fmt(x: float) -> str:
    return "nan" if math.isnan(x) else repr(float(x))


def write_rows_csv(rows: list[ScenarioRow], path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for row in rows:
            w.writerow([_fmt(v) for v in row.as_tuple()])
    return path


def plot_svg(result: ScenarioResult, path, title: str = "") -> Path:
    """Log-scale raw/secret rate against distance, QBER on a second axis."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    path = Path(path)
    rows = result.analytic
    d = [r.distance_km for r in rows]
    with matplotlib.rc_context({"svg.hashsalt": "siqkd", "svg.fonttype": "none"}):
        fig, ax = plt.subplots(figsize=(6, 4))
        raw = [r.raw_rate_hz if r.raw_rate_hz > 0 else np.nan for r in rows]
        sec = [r.secret_rate_hz if r.secret_rate_hz > 0 else np.nan for r in rows]
        ax.semilogy(d, raw, "o-", label="raw (sifted)")
        ax.semilogy(d, sec, "s-", label="secret")
        if result.montecarlo:
            ax.semilogy(
                [r.distance_km for r in result.montecarlo],
                [r.secret_rate_hz if r.secret_rate_hz > 0 else np.nan for r in result.montecarlo],
                "*",
                label="secret (Monte Carlo)",
            )
        ax.set_xlabel("distance (km)")
        ax.set_ylabel("rate (bit/s)")
        ax2 = ax.twinx()
        ax2.plot(d, [100 * r.qber for r in rows], "d--", color="tab:red", label="QBER")
        ax2.set_ylabel("QBER (%)")
        lines = ax.get_legend_handles_labels()
        lines2 = ax2.get_legend_handles_labels()
        ax.legend(lines[0] + lines2[0], lines[1] + lines2[1], loc="lower left", fontsize=8)
        if title:
            ax.set_title(title)
        fig.tight_layout()
        fig.savefig(path, format="svg", metadata={"Date": None})
        plt.close(fig)
    return path


def emit_outputs(result: ScenarioResult, out_dir, name: str, formats=("csv",)) -> list[Path]:
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        written = []
        if "csv" in formats:
            written.append(write_rows_csv(result.analytic, out_dir / f"{name}_analytic.csv"))
            if result.montecarlo is not None:
                written.append(write_rows_csv(result.montecarlo, out_dir / f"{name}_montecarlo.csv"))
            if result.events is not None:
                written.append(write_events_csv(result.events, out_dir / f"{name}_events.csv"))
        if "svg" in formats:
            written.append(plot_svg(result, out_dir / f"{name}.svg", title=name))
        prov = out_dir / f"{name}_provenance.json"
        prov.write_text(json.dumps(result.provenance, indent=2, sort_keys=True) + "\n")
        written.append(prov)
    except OSError as exc:
        raise OSError(f"cannot write outputs to {out_dir}: {exc}") from exc
    return written
