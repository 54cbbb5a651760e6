"""Static report: a tab-separated summary plus PNG figures rendered from results.json.

Only the non-interactive Agg backend is used, so the report runs headless.
"""
from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

REPORT_TSV = "report.tsv"
FIG_DIR = "figures"


def _flatten(prefix, obj, rows):
    if isinstance(obj, dict):
        for k in sorted(obj):
            _flatten(f"{prefix}.{k}" if prefix else str(k), obj[k], rows)
    elif isinstance(obj, (int, float, str, bool)) or obj is None:
        rows.append((prefix, obj))
    elif isinstance(obj, list) and len(obj) <= 8 and all(
            isinstance(v, (int, float, str, bool)) for v in obj):
        rows.append((prefix, ",".join(str(v) for v in obj)))
    elif isinstance(obj, list):
        for i, v in enumerate(obj):
            _flatten(f"{prefix}[{i}]", v, rows)


def write_tsv(results: dict, out_dir) -> Path:
    """One ``section<TAB>key<TAB>value`` row per scalar outcome."""
    rows = []
    for section in sorted(results):
        if section in ("config", "report"):
            continue
        flat = []
        _flatten("", results[section], flat)
        rows.extend((section, k, v) for k, v in flat)
    path = Path(out_dir) / REPORT_TSV
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, delimiter="\t", lineterminator="\n")
        w.writerow(["section", "key", "value"])
        w.writerows(rows)
    return path


def _read_field(path):
    with Path(path).open() as fh:
        rows = list(csv.reader(fh))
    header, data = rows[0], np.array(rows[1:], dtype=float)
    return header, data


def plot_field(csv_path, out_path, title):
    header, data = _read_field(csv_path)
    fig, ax = plt.subplots(figsize=(5, 4))
    if len(header) == 2:
        order = np.argsort(data[:, 0])
        ax.plot(data[order, 0], data[order, 1], lw=1.2)
        ax.set_xlabel(header[0])
        ax.set_ylabel(header[1])
    else:
        tc = ax.tricontourf(data[:, 0], data[:, 1], data[:, 2], levels=24)
        fig.colorbar(tc, ax=ax, label=header[2])
        ax.set_aspect("equal")
        ax.set_xlabel(header[0])
        ax.set_ylabel(header[1])
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(out_path, dpi=110)
    plt.close(fig)
    return out_path


def plot_lambda_trace(trace, c, out_path):
    lam = np.array([t["lambda"] for t in trace])
    val = np.array([t["lambda_u_ref"] for t in trace])
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.semilogx(lam, val, "o-", ms=3, label="lambda u_lambda(x_tilde)")
    ax.axhline(-c, color="k", ls="--", lw=0.8, label="extrapolated -c")
    ax.invert_xaxis()
    ax.set_xlabel("lambda")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(out_path, dpi=110)
    plt.close(fig)
    return out_path


def plot_growth(table, out_path):
    fig, ax = plt.subplots(figsize=(4.5, 3.5))
    ax.plot([r["delta"] for r in table], [r["ratio"] for r in table], "s-")
    ax.set_xscale("log")
    ax.set_xlabel("delta")
    ax.set_ylabel("max |chi - chi(x_tilde)| / (-log d)")
    fig.tight_layout()
    fig.savefig(out_path, dpi=110)
    plt.close(fig)
    return out_path


def plot_exit_histogram(hist, out_path, title):
    fig, ax = plt.subplots(figsize=(5, 3.5))
    if "angle_edges" in hist:
        edges = np.asarray(hist["angle_edges"])
        ax.bar(0.5 * (edges[1:] + edges[:-1]), hist["counts"], width=np.diff(edges), align="center")
        ax.set_xlabel("exit angle")
    else:
        ax.bar([str(p) for p in hist["positions"]], hist["counts"])
        ax.set_xlabel("exit point")
    ax.set_ylabel("paths")
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(out_path, dpi=110)
    plt.close(fig)
    return out_path


def render_report(results: dict, out_dir) -> list:
    """Write report.tsv and every figure the available results support; return file names."""
    out_dir = Path(out_dir)
    figs = out_dir / FIG_DIR
    figs.mkdir(parents=True, exist_ok=True)
    files = [write_tsv(results, out_dir).name]
    disc = results.get("solve_discounted")
    if disc:
        for row in disc["solutions"]:
            src = out_dir / row["field_csv_path"]
            if src.exists():
                name = Path(row["field_csv_path"]).with_suffix(".png").name
                plot_field(src, figs / name, f"u_lambda, lambda={row['lambda']:g}")
                files.append(f"{FIG_DIR}/{name}")
    erg = results.get("solve_ergodic")
    if erg:
        src = out_dir / erg.get("field_csv_path", "chi.csv")
        if src.exists():
            plot_field(src, figs / "chi.png", f"corrector chi, c={erg['c']:.6g}")
            files.append(f"{FIG_DIR}/chi.png")
        plot_lambda_trace(erg["lambda_trace"], erg["c"], figs / "lambda_trace.png")
        files.append(f"{FIG_DIR}/lambda_trace.png")
        if erg.get("growth_table"):
            plot_growth(erg["growth_table"], figs / "growth.png")
            files.append(f"{FIG_DIR}/growth.png")
    sim = results.get("simulate") or {}
    batch = sim.get("batch")
    if batch and any(batch["exit_position_histogram"]["counts"]):
        plot_exit_histogram(batch["exit_position_histogram"], figs / "exit_histogram.png",
                            f"exits: {batch['exit_fraction']:.4g} of {batch['n_paths']}")
        files.append(f"{FIG_DIR}/exit_histogram.png")
    ev = results.get("exit_value") or {}
    for j, run in enumerate(ev.get("runs", [])):
        for label in ("nonexit", "seeking"):
            part = run.get(label) or {}
            hist = part.get("exit_histogram")
            if hist and any(hist["counts"]):
                name = f"exit_value_{j}_{label}.png"
                plot_exit_histogram(hist, figs / name,
                                    f"{label}: exit fraction {part['exit_fraction']:.3g}, "
                                    f"value {part['estimate']:.4g}")
                files.append(f"{FIG_DIR}/{name}")
    return files
