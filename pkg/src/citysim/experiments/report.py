"""Report files for a run directory: JSON metrics, markdown tables and SVG plots."""
from __future__ import annotations

import json
from collections import defaultdict
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from ..environment import City  # noqa: E402
from ..metrics import MetricsReport, od_matrix  # noqa: E402

FORMATS = ("json", "markdown", "svg")
_SVG_META = {"Date": None}


def _load(path: Path):
    return json.loads(path.read_text()) if path.exists() else None


def _fmt(v, digits=4):
    if v is None:
        return "-"
    if isinstance(v, float):
        return f"{v:.{digits}g}"
    return str(v)


def emit_report(run_dir, fmt: str = "json", out_dir=None) -> list[Path]:
    """Write report files for ``run_dir`` and return their paths."""
    if fmt not in FORMATS:
        raise ValueError(f"format must be one of {FORMATS}")
    run_dir = Path(run_dir)
    out = Path(out_dir) if out_dir else run_dir
    out.mkdir(parents=True, exist_ok=True)
    metrics = MetricsReport.from_dict(json.loads((run_dir / "metrics.json").read_text()))
    if fmt == "json":
        path = out / "report.json"
        path.write_text(json.dumps(metrics.to_dict(), indent=1, sort_keys=True) + "\n")
        return [path]
    if fmt == "markdown":
        path = out / "report.md"
        path.write_text(markdown_report(run_dir, metrics))
        return [path]
    return svg_plots(run_dir, metrics, out)


# -- markdown -------------------------------------------------------------------------


def markdown_report(run_dir: Path, metrics: MetricsReport) -> str:
    lines = [f"# Run report: {run_dir.name}", ""]
    bench = _load(run_dir / "benchmark.json")
    if bench:
        lines += ["## Acceleration", "",
                  "| Method | Agents | Time (s/agent) | Speedup | Rr | Tr |",
                  "|---|---|---|---|---|---|",
                  f"| baseline (raw, sequential) | {bench['n_agents']} | "
                  f"{_fmt(bench['baseline_time_per_agent'])} | 1 | 0 | 0 |",
                  f"| {bench.get('optimizer', 'optimized')} | {bench['n_agents']} | "
                  f"{_fmt(bench['time_per_agent'])} | {_fmt(bench['speedup'])} | "
                  f"{_fmt(bench['rr'])} | {_fmt(bench['tr'])} |", ""]
    faith = _load(run_dir / "faithfulness.json")
    if faith:
        lines += ["## Faithfulness against raw prompts", "",
                  "| Method | JSD mean | JSD std | T1 (%) | exact match |", "|---|---|---|---|---|"]
        for method, row in faith.items():
            if isinstance(row, dict) and "jsd_mean" in row:
                lines.append(f"| {method} | {_fmt(row['jsd_mean'])} | {_fmt(row['jsd_std'])} | "
                             f"{_fmt(row['t1'])} | {_fmt(row['exact_match'])} |")
        lines.append("")
    cf = _load(run_dir / "counterfactual.json")
    if cf:
        lines += ["## Even-income counterfactual", "", "| Assignment | mean S | std S | blocks |",
                  "|---|---|---|---|"]
        for label in ("original", "even"):
            row = cf[label]
            lines.append(f"| {label} | {_fmt(row['mean'])} | {_fmt(row['std'])} | {len(row['per_block'])} |")
        lines += ["", f"Relative reduction of mean S: {_fmt(cf['reduction'])}", ""]
    lines += ["## Metrics", "", "| Metric | Value |", "|---|---|"]
    for key, value in metrics.to_dict().items():
        if key == "per_block_segregation":
            value = f"{len(value)} blocks"
        lines.append(f"| {key} | {_fmt(value)} |")
    return "\n".join(lines) + "\n"


# -- plots ------------------------------------------------------------------------------


def _save(fig, path: Path) -> Path:
    fig.savefig(path, format="svg", metadata=_SVG_META)
    plt.close(fig)
    return path


def segregation_histogram(values, title: str, path: Path) -> Path:
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.hist(values, bins=np.linspace(0, 1, 21), color="#4c72b0", edgecolor="white")
    ax.set_xlabel("income segregation S")
    ax.set_ylabel("blocks")
    ax.set_title(title)
    fig.tight_layout()
    return _save(fig, path)


def scalability_plot(rows, path: Path) -> Path:
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ns = [r["n"] for r in rows]
    ax.loglog(ns, [r["per_agent"] for r in rows], "o-", label="gateway")
    ax.loglog(ns, [r["predicted_per_agent"] for r in rows], "x--", label="event model")
    ax.set_xlabel("agents")
    ax.set_ylabel("time per agent (s)")
    ax.legend()
    fig.tight_layout()
    return _save(fig, path)


def od_heatmap(run_dir: Path, path: Path) -> Path | None:
    city_file, trajs_file = run_dir / "city.json", run_dir / "trajs.jsonl"
    if not (city_file.exists() and trajs_file.exists()):
        return None
    city = City.load(city_file)
    seqs = defaultdict(list)
    with open(trajs_file) as fh:
        for line in fh:
            rec = json.loads(line)
            seqs[rec["agent"]].append(rec["block"])
    od = od_matrix(seqs.values(), city.block_ids)
    fig, ax = plt.subplots(figsize=(5, 4.5))
    im = ax.imshow(od.normalized, cmap="viridis", interpolation="nearest")
    ax.set_xlabel("destination block")
    ax.set_ylabel("origin block")
    fig.colorbar(im, ax=ax, label="share of transitions")
    fig.tight_layout()
    return _save(fig, path)


def svg_plots(run_dir: Path, metrics: MetricsReport, out: Path) -> list[Path]:
    paths = []
    cf = _load(run_dir / "counterfactual.json")
    if cf:
        for label in ("original", "even"):
            paths.append(segregation_histogram(list(cf[label]["per_block"].values()),
                                               f"{label} homes", out / f"segregation_{label}.svg"))
    elif metrics.per_block_segregation:
        paths.append(segregation_histogram([r["s"] for r in metrics.per_block_segregation],
                                           "per-block segregation", out / "segregation.svg"))
    scal = _load(run_dir / "scalability.json")
    if scal:
        paths.append(scalability_plot(scal, out / "scalability.svg"))
    od = od_heatmap(run_dir, out / "od_heatmap.svg")
    if od:
        paths.append(od)
    return paths
