"""Benchmark report emission: delimited episode data, structured aggregates,
a papers-style summary table, and matplotlib figures next to them.

Everything written here is byte-deterministic for a fixed master seed: no
timestamps, floats via shortest-repr, fixed row ordering.
"""

from __future__ import annotations

import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

REPORT_SCHEMA = "socnav2d-report/1"

CSV_COLUMNS = (
    "map",
    "slot",
    "combo",
    "mode",
    "n_peds",
    "scenario_seed",
    "engine_seed",
    "outcome",
    "steps",
    "reward_sum",
    "min_ped_distance",
    "psv_fraction",
    "replans",
    "aborted",
)


def _csv_value(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def episodes_csv(results) -> str:
    lines = [",".join(CSV_COLUMNS)]
    for r in results:
        row = (
            r.map_index,
            r.slot,
            r.combo,
            r.mode,
            r.n_peds,
            r.scenario_seed,
            r.engine_seed,
            r.outcome,
            r.steps,
            r.reward_sum,
            r.min_ped_distance,
            r.psv_fraction,
            r.replans,
            r.aborted,
        )
        lines.append(",".join(_csv_value(v) for v in row))
    return "\n".join(lines) + "\n"


def report_json(config, reports) -> str:
    payload = {
        "schema": REPORT_SCHEMA,
        "master_seed": config.master_seed,
        "n_maps": config.n_maps,
        "episodes_per_map": config.episodes_per_map,
        "densities": list(config.densities),
        "modes": list(config.modes),
        "psv_distance": config.psv_distance,
        "combos": {label: report.as_dict() for label, report in sorted(reports.items())},
    }
    return json.dumps(payload, sort_keys=True, indent=2) + "\n"


def _fmt(value, digits=2):
    if value is None:
        return "-"
    return f"{value:.{digits}f}"


def summary_table(reports) -> str:
    """Fixed-width table: per-mode success rates plus the mixed-mode metrics."""
    header = (
        f"{'combo':<18}{'SR CoOp':>9}{'SR UnCoOp':>11}"
        f"{'SR':>7}{'TS':>9}{'PSV':>7}{'CO':>7}{'TO':>7}"
    )
    lines = [header, "-" * len(header)]
    for label in sorted(reports):
        rep = reports[label]
        coop = rep.by_mode.get("cooperative")
        uncoop = rep.by_mode.get("uncooperative")
        o = rep.overall
        lines.append(
            f"{label:<18}"
            f"{_fmt(coop.sr if coop else None):>9}"
            f"{_fmt(uncoop.sr if uncoop else None):>11}"
            f"{_fmt(o.sr):>7}{_fmt(o.ts, 1):>9}{_fmt(o.psv):>7}"
            f"{_fmt(o.co):>7}{_fmt(o.to):>7}"
        )
        if rep.aborted:
            lines.append(f"{'':<18}({rep.aborted} aborted episodes excluded)")
    return "\n".join(lines) + "\n"


def _save_fig(fig, path):
    fig.savefig(path, dpi=110, metadata={"Software": None})
    plt.close(fig)


def density_figure(reports, path):
    """SR / CO / TO versus pedestrian count, one line per combo."""
    fig, axes = plt.subplots(1, 3, figsize=(12, 3.6), sharex=True)
    for label in sorted(reports):
        rep = reports[label]
        densities = sorted(rep.by_density)
        for ax, metric in zip(axes, ("sr", "co", "to")):
            ax.plot(
                densities,
                [getattr(rep.by_density[d], metric) for d in densities],
                marker="o",
                label=label,
            )
    for ax, title in zip(axes, ("success rate %", "collision %", "timeout %")):
        ax.set_title(title)
        ax.set_xlabel("pedestrians")
        ax.grid(True, alpha=0.3)
    axes[0].legend(fontsize=8)
    fig.tight_layout()
    _save_fig(fig, path)


def outcomes_figure(reports, path):
    """Grouped outcome shares per combo."""
    labels = sorted(reports)
    metrics = ("sr", "co", "to")
    colors = ("#2a9d8f", "#e76f51", "#888888")
    fig, ax = plt.subplots(figsize=(1.8 + 1.4 * len(labels), 3.6))
    width = 0.25
    for k, (metric, color) in enumerate(zip(metrics, colors)):
        xs = [i + (k - 1) * width for i in range(len(labels))]
        ax.bar(
            xs,
            [getattr(reports[l].overall, metric) for l in labels],
            width=width,
            color=color,
            label=metric.upper(),
        )
    ax.set_xticks(range(len(labels)))
    ax.set_xticklabels(labels, rotation=15, fontsize=8)
    ax.set_ylabel("% of episodes")
    ax.grid(True, axis="y", alpha=0.3)
    ax.legend()
    fig.tight_layout()
    _save_fig(fig, path)


def write_report_files(out_dir, config, results, reports) -> dict:
    """Emit report.csv / report.json / summary.txt and figures; returns paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "csv": out / "report.csv",
        "json": out / "report.json",
        "summary": out / "summary.txt",
        "density_fig": out / "metrics_by_density.png",
        "outcomes_fig": out / "outcomes.png",
    }
    paths["csv"].write_text(episodes_csv(results))
    paths["json"].write_text(report_json(config, reports))
    paths["summary"].write_text(summary_table(reports))
    density_figure(reports, paths["density_fig"])
    outcomes_figure(reports, paths["outcomes_fig"])
    replays = [r for r in results if r.replay is not None]
    for i, r in enumerate(replays):
        replay_path = out / f"replay_{i:03d}.log"
        replay_path.write_text(r.replay)
        paths[f"replay_{i}"] = replay_path
    return paths
