"""Static SVG figures from the aggregate metric files of a run directory."""
from __future__ import annotations

import csv
from collections import defaultdict
from pathlib import Path

import matplotlib
from matplotlib.figure import Figure

from ..errors import MissingMetrics

# classical on top, distributed at the bottom; anything else in between
PANEL_ORDER = ("classical_per_node", "centralized", "distributed")
TITLES = {
    "classical_per_node": "per-node LS (no cooperation)",
    "centralized": "centralized LS",
    "distributed": "distributed LS",
}


def _read(path: Path) -> list[dict]:
    if not path.exists():
        raise MissingMetrics(f"{path} not found")
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _save(fig: Figure, path: Path):
    with matplotlib.rc_context({"svg.hashsalt": "distls", "svg.fonttype": "path"}):
        fig.savefig(path, format="svg", metadata={"Date": None})


def _panel_order(algs) -> list[str]:
    known = [a for a in PANEL_ORDER if a in algs]
    return known + sorted(set(algs) - set(known))


def emit_plots(summary_dir) -> list[Path]:
    """Write figures/{mse_vs_k,excitation_ratio,regret_ratio}.svg; returns the paths."""
    summary_dir = Path(summary_dir)
    agg = _read(summary_dir / "aggregate.csv")
    net = _read(summary_dir / "network_aggregate.csv")
    if not agg:
        raise MissingMetrics(f"{summary_dir / 'aggregate.csv'} holds no algorithms")

    mse = defaultdict(lambda: defaultdict(list))
    for row in agg:
        mse[row["algorithm"]][int(row["i"])].append((int(row["k"]), float(row["mean_sq_error"])))
    algs = _panel_order(mse)

    figdir = summary_dir / "figures"
    figdir.mkdir(exist_ok=True)
    paths = []

    fig = Figure(figsize=(6.0, 2.6 * len(algs)))
    axes = fig.subplots(len(algs), 1, squeeze=False)[:, 0]
    for ax, alg in zip(axes, algs):
        for i in sorted(mse[alg]):
            ks, vals = zip(*mse[alg][i])
            ax.plot(ks, vals, label=f"node {i + 1}", linewidth=1.2, gid=f"mse-{alg}-node{i + 1}")
        ax.set_title(TITLES.get(alg, alg), fontsize=10)
        ax.set_ylabel("mean squared error")
        ax.legend(fontsize=8)
    axes[-1].set_xlabel("k")
    fig.tight_layout()
    paths.append(figdir / "mse_vs_k.svg")
    _save(fig, paths[-1])

    curves = defaultdict(list)
    for row in net:
        curves[row["algorithm"]].append(row)

    fig = Figure(figsize=(6.0, 3.0))
    ax = fig.subplots()
    if curves:
        rows = curves[algs[0]] if algs[0] in curves else next(iter(curves.values()))
        ax.plot([int(r["k"]) for r in rows], [float(r["mean_excitation_ratio"]) for r in rows], linewidth=1.2)
    ax.set_yscale("log")
    ax.set_xlabel("t")
    ax.set_ylabel(r"log $r_t$ / $\lambda_{min}^{n,t}$")
    fig.tight_layout()
    paths.append(figdir / "excitation_ratio.svg")
    _save(fig, paths[-1])

    fig = Figure(figsize=(6.0, 3.0))
    ax = fig.subplots()
    for alg in _panel_order(curves):
        pts = [(int(r["k"]), float(r["mean_acc_regret"]) / float(r["mean_log_r_t"]))
               for r in curves[alg] if float(r["mean_log_r_t"]) > 0]
        if pts:
            ks, vals = zip(*pts)
            ax.plot(ks, vals, label=TITLES.get(alg, alg), linewidth=1.2)
    ax.set_xlabel("t")
    ax.set_ylabel(r"accumulated regret / log $r_t$")
    if curves:
        ax.legend(fontsize=8)
    fig.tight_layout()
    paths.append(figdir / "regret_ratio.svg")
    _save(fig, paths[-1])
    return paths
