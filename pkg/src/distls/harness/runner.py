"""Monte-Carlo orchestration and metric files.

Runs use seeds ``base_seed + run`` and are folded in run order, so every
output except ``meta.json`` is a deterministic function of the config.
"""
from __future__ import annotations

import csv
import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from ..errors import IoFailure
from .config import ExperimentConfig
from .simulate import NETWORK_COLUMNS, RunTrace, simulate_batch

log = logging.getLogger(__name__)

METRICS_HEADER = ["k", "i", "algorithm", "run", "sq_error", "regret"]
NETWORK_HEADER = ["k", "algorithm", "run", "r_t", "lambda_min_coop", "V", "logdet", "phiPphi_max"]
AGGREGATE_HEADER = ["k", "i", "algorithm", "mean_sq_error", "mean_regret"]
NETWORK_AGGREGATE_HEADER = ["k", "algorithm", "mean_acc_regret", "mean_r_t", "mean_log_r_t",
                            "mean_lambda_min_coop", "mean_excitation_ratio", "mean_phiPphi_max"]


def fmt(x) -> str:
    """Shortest round-tripping text for a float; NaN becomes an empty cell."""
    x = float(x)
    return "" if math.isnan(x) else repr(x)


@dataclass
class RunSummary:
    algorithms: tuple[str, ...]
    ks: np.ndarray
    mean_sq_error: dict[str, np.ndarray]  # (len(ks), n)
    final_errors: dict[str, np.ndarray]  # (R, n)
    accumulated_regret: dict[str, np.ndarray]  # (R,)
    max_phi_p_phi: dict[str, np.ndarray]  # (R,)
    network_ks: np.ndarray
    mean_excitation_ratio: np.ndarray
    mean_r_t: np.ndarray
    mean_acc_regret: dict[str, np.ndarray]
    wall_time: float
    out_dir: Path | None = None
    extra: dict = field(default_factory=dict)


class _Fold:
    """Running sums over runs, filled in run order."""

    def __init__(self):
        self.count = 0
        self.sq: dict[str, np.ndarray] = {}
        self.reg: dict[str, np.ndarray] = {}
        self.net: dict[str, np.ndarray] = {}
        self.ratio = None
        self.final: dict[str, list] = {}
        self.acc: dict[str, list] = {}
        self.pp: dict[str, list] = {}
        self.ks = None
        self.net_ks = None

    def add(self, traces: dict[str, RunTrace]):
        self.count += 1
        for alg, tr in traces.items():
            if alg not in self.sq:
                self.ks, self.net_ks = tr.ks, tr.network_ks
                self.sq[alg] = np.zeros_like(tr.sq_error)
                self.reg[alg] = np.zeros_like(tr.regret)
                self.net[alg] = np.zeros_like(tr.network)
                self.final[alg], self.acc[alg], self.pp[alg] = [], [], []
            self.sq[alg] += tr.sq_error
            self.reg[alg] += tr.regret
            self.net[alg] += tr.network
            self.final[alg].append(tr.final_sq_error)
            self.acc[alg].append(tr.accumulated_regret)
            self.pp[alg].append(tr.max_phi_p_phi)
        tr = next(iter(traces.values()))
        ratio = np.log(tr.network[:, 0]) / tr.network[:, 1]
        log_r = np.log(tr.network[:, 0])
        if self.ratio is None:
            self.ratio, self.log_r = np.zeros_like(ratio), np.zeros_like(log_r)
        self.ratio += ratio
        self.log_r += log_r


class _Writers:
    def __init__(self, out: Path, trajectory: bool):
        self.handles = []
        self.metrics = self._open(out / "metrics.csv", METRICS_HEADER)
        self.network = self._open(out / "network.csv", NETWORK_HEADER)
        self.summary = self._raw(out / "summary.jsonl")
        self.trajectory = self._raw(out / "trajectory.jsonl") if trajectory else None

    def _raw(self, path):
        fh = open(path, "w", newline="")
        self.handles.append(fh)
        return fh

    def _open(self, path, header):
        writer = csv.writer(self._raw(path), lineterminator="\n")
        writer.writerow(header)
        return writer

    def write_run(self, run: int, traces: dict[str, RunTrace]):
        for alg, tr in traces.items():
            for r, k in enumerate(tr.ks):
                for i in range(tr.sq_error.shape[1]):
                    self.metrics.writerow([int(k), i, alg, run, fmt(tr.sq_error[r, i]), fmt(tr.regret[r, i])])
            for r, k in enumerate(tr.network_ks):
                self.network.writerow([int(k), alg, run] + [fmt(v) for v in tr.network[r, :len(NETWORK_COLUMNS)]])
            rec = {
                "run": run,
                "algorithm": alg,
                "final_sq_error": [float(v) for v in tr.final_sq_error],
                "accumulated_regret": float(tr.accumulated_regret),
                "max_phi_p_phi": float(tr.max_phi_p_phi),
            }
            self.summary.write(json.dumps(rec, sort_keys=True) + "\n")
            if self.trajectory is not None:
                for entry in tr.trajectory:
                    line = dict(entry, run=run, algorithm=alg)
                    self.trajectory.write(json.dumps(line, sort_keys=True) + "\n")

    def close(self):
        for fh in self.handles:
            fh.close()


# runs advance together in fixed-size chunks; the chunking never depends on
# the worker count, so outputs are identical for any ``workers``
RUN_CHUNK = 50


def _run_chunk(config: ExperimentConfig, first: int, stop: int) -> list[dict[str, RunTrace]]:
    return simulate_batch(
        config.scenario,
        config.topology,
        config.horizon,
        seeds=[config.base_seed + run for run in range(first, stop)],
        algorithms=config.algorithms,
        init=config.init,
        combine_rounds=config.combine_rounds,
        cadence=config.record_cadence,
        trajectory=config.output.trajectory,
        full_matrices=config.output.full_matrices,
    )


def _chunks(config: ExperimentConfig):
    bounds = [(a, min(a + RUN_CHUNK, config.runs)) for a in range(0, config.runs, RUN_CHUNK)]
    if config.output.workers == 1 or len(bounds) == 1:
        for a, b in bounds:
            yield _run_chunk(config, a, b)
        return
    with ProcessPoolExecutor(max_workers=config.output.workers) as pool:
        # map yields in submission order, which keeps the fold deterministic
        yield from pool.map(_run_chunk, [config] * len(bounds), *zip(*bounds))


def _runs(config: ExperimentConfig):
    run = 0
    for chunk in _chunks(config):
        for traces in chunk:
            yield run, traces
            run += 1


def _write_aggregates(out: Path, fold: _Fold, algorithms):
    r = fold.count
    with open(out / "aggregate.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(AGGREGATE_HEADER)
        for alg in algorithms:
            sq, reg = fold.sq[alg] / r, fold.reg[alg] / r
            for row, k in enumerate(fold.ks):
                for i in range(sq.shape[1]):
                    w.writerow([int(k), i, alg, fmt(sq[row, i]), fmt(reg[row, i])])
    with open(out / "network_aggregate.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(NETWORK_AGGREGATE_HEADER)
        for alg in algorithms:
            net = fold.net[alg] / r
            for row, k in enumerate(fold.net_ks):
                w.writerow([int(k), alg, fmt(net[row, 5]), fmt(net[row, 0]), fmt(fold.log_r[row] / r),
                            fmt(net[row, 1]), fmt(fold.ratio[row] / r), fmt(net[row, 4])])


def run_experiment(config: ExperimentConfig, out_dir: Path | str | None = None,
                   write: bool = True) -> RunSummary:
    """Execute ``config.runs`` runs and (optionally) write all metric files."""
    start = time.perf_counter()
    out = Path(out_dir) if out_dir is not None else Path(config.output.dir)
    writers = None
    if write:
        try:
            out.mkdir(parents=True, exist_ok=True)
            writers = _Writers(out, config.output.trajectory)
        except OSError as exc:
            raise IoFailure(f"cannot write to {out}: {exc}") from exc

    fold = _Fold()
    try:
        for run, traces in _runs(config):
            fold.add(traces)
            if writers is not None:
                writers.write_run(run, traces)
    except OSError as exc:
        raise IoFailure(f"writing metrics under {out} failed: {exc}") from exc
    finally:
        if writers is not None:
            writers.close()

    r = fold.count
    summary = RunSummary(
        algorithms=tuple(config.algorithms),
        ks=fold.ks,
        mean_sq_error={a: fold.sq[a] / r for a in config.algorithms},
        final_errors={a: np.array(fold.final[a]) for a in config.algorithms},
        accumulated_regret={a: np.array(fold.acc[a]) for a in config.algorithms},
        max_phi_p_phi={a: np.array(fold.pp[a]) for a in config.algorithms},
        network_ks=fold.net_ks,
        mean_excitation_ratio=fold.ratio / r,
        mean_r_t=next(iter(fold.net.values()))[:, 0] / r,
        mean_acc_regret={a: fold.net[a][:, 5] / r for a in config.algorithms},
        wall_time=0.0,
        out_dir=out if write else None,
    )
    summary.wall_time = time.perf_counter() - start
    if write:
        try:
            _write_aggregates(out, fold, config.algorithms)
            meta = {
                "name": config.name,
                "runs": config.runs,
                "horizon": config.horizon,
                "algorithms": list(config.algorithms),
                "finished_at": datetime.now(timezone.utc).isoformat(),
                "wall_time_s": summary.wall_time,
            }
            (out / "meta.json").write_text(json.dumps(meta, indent=2) + "\n")
        except OSError as exc:
            raise IoFailure(f"writing aggregates under {out} failed: {exc}") from exc
        if config.output.plots:
            from .plots import emit_plots

            try:
                emit_plots(out)
            except Exception as exc:  # plotting never gates the metric outputs
                log.warning("plotting failed: %s", exc)
    return summary
