"""Monte-Carlo runs: each run draws one observation stream and feeds it to every algorithm.

Runs are advanced together, with the run index as the leading array axis, so
one numpy call updates every node of every run.  Each run still owns its own
generator state, and per-run arithmetic does not depend on which other runs
share the batch.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .. import analysis, estimator
from ..errors import DimensionMismatch, NotPositiveDefinite
from ..graph import NetworkTopology
from ..model import Scenario, generate_step, init_state

ALGORITHMS = ("distributed", "classical_per_node", "centralized")


@dataclass(frozen=True)
class InitSpec:
    """Initial estimates and covariances, one per node."""

    theta0: np.ndarray  # (n, m)
    P0: np.ndarray  # (n, m, m)

    @classmethod
    def default(cls, n: int, m: int, alpha0: float = 1.0) -> "InitSpec":
        return cls(np.zeros((n, m)), alpha0 * np.broadcast_to(np.eye(m), (n, m, m)).copy())

    def p0_invs(self) -> list[np.ndarray]:
        return [np.linalg.inv(p) for p in self.P0]


@dataclass
class RunTrace:
    """Recorded diagnostics for one algorithm in one run.

    ``ks`` are the recorded time indices (0..T at the cadence, always
    including T).  ``sq_error[r]`` and ``regret[r]`` refer to theta_{ks[r],i};
    regret at k = T is NaN since phi_T is never drawn.  ``network`` rows
    describe the transition k -> k+1 for the recorded k < T.
    """

    algorithm: str
    ks: np.ndarray
    sq_error: np.ndarray
    regret: np.ndarray
    network_ks: np.ndarray
    network: np.ndarray  # columns: NETWORK_COLUMNS + accumulated regret
    final_sq_error: np.ndarray
    accumulated_regret: float
    max_phi_p_phi: float
    trajectory: list = field(default_factory=list)


NETWORK_COLUMNS = ("r_t", "lambda_min_coop", "V", "logdet", "phiPphi_max")

StepHook = Callable[..., None]


class _Tracker:
    """Recorded rows for one algorithm across a batch of runs."""

    def __init__(self, name, runs, n, cadence, horizon, keep_trajectory, full_matrices):
        self.name = name
        self.cadence = cadence
        self.horizon = horizon
        self.ks, self.sq, self.reg = [], [], []
        self.net_ks, self.net = [], []
        self.acc_regret = np.zeros(runs)
        self.max_pp = np.zeros(runs)
        self.keep_trajectory = keep_trajectory
        self.full_matrices = full_matrices
        self.trajectory = [[] for _ in range(runs)]
        self.n = n

    def records(self, k: int) -> bool:
        return k % self.cadence == 0 or k == self.horizon

    def point(self, k, sq, reg):
        if self.records(k):
            self.ks.append(k)
            self.sq.append(sq)
            self.reg.append(reg)

    def network_row(self, k, cols):
        if self.records(k):
            self.net_ks.append(k)
            self.net.append(np.stack(cols + [self.acc_regret.copy()], axis=-1))

    def dump(self, k, thetas, p_invs):
        """thetas (R, n, m), p_invs (R, n, m, m)."""
        if not (self.keep_trajectory and self.records(k)):
            return
        logdets = np.linalg.slogdet(p_invs)[1]
        for r, out in enumerate(self.trajectory):
            for i in range(self.n):
                rec = {"k": k, "i": i, "theta_hat": [float(v) for v in thetas[r, i]],
                       "logdet_Pinv": float(logdets[r, i])}
                if self.full_matrices:
                    rec["P_inv"] = p_invs[r, i].tolist()
                out.append(rec)

    def finish(self, final_sq) -> list[RunTrace]:
        ks = np.array(self.ks, dtype=int)
        sq = np.stack(self.sq, axis=1)  # (R, K, n)
        reg = np.stack(self.reg, axis=1)
        width = len(NETWORK_COLUMNS) + 1
        net = np.stack(self.net, axis=1) if self.net else np.zeros((sq.shape[0], 0, width))
        return [
            RunTrace(
                algorithm=self.name,
                ks=ks,
                sq_error=sq[r],
                regret=reg[r],
                network_ks=np.array(self.net_ks, dtype=int),
                network=net[r],
                final_sq_error=final_sq[r],
                accumulated_regret=float(self.acc_regret[r]),
                max_phi_p_phi=float(self.max_pp[r]),
                trajectory=self.trajectory[r],
            )
            for r in range(sq.shape[0])
        ]


def _check_logdet(p_inv: np.ndarray, alg: str) -> np.ndarray:
    sign, logdets = np.linalg.slogdet(p_inv)
    if np.any(sign <= 0):
        raise NotPositiveDefinite(f"{alg}: an information matrix lost positive definiteness")
    return logdets


def simulate_batch(scenario: Scenario, topology: NetworkTopology, horizon: int, seeds: Sequence[int],
                   algorithms: Sequence[str] = ("distributed",), init: InitSpec | None = None,
                   combine_rounds: int = 1, cadence: int = 1, on_step: StepHook | None = None,
                   trajectory: bool = False, full_matrices: bool = False) -> list[dict[str, RunTrace]]:
    """Run every requested algorithm for each seed; returns one trace dict per seed.

    ``on_step(k=, run=, obs=, prev=, adapted=, new=)`` is called after each
    distributed update with per-node lists for that run, which lets callers
    harvest matrices or check identities.
    """
    n, m = scenario.n, scenario.m
    if topology.n != n:
        raise DimensionMismatch(f"topology has {topology.n} nodes, scenario has {n}")
    unknown = set(algorithms) - set(ALGORITHMS)
    if unknown:
        raise ValueError(f"unknown algorithms {sorted(unknown)}")
    if horizon < 0:
        raise ValueError(f"horizon must be >= 0, got {horizon}")
    runs = len(seeds)
    if runs < 1:
        raise ValueError("need at least one seed")
    init = init or InitSpec.default(n, m)
    theta = np.asarray(scenario.theta, dtype=float)
    gens = [init_state(scenario, int(s)) for s in seeds]
    excite = analysis.ExcitationTracker(init.p0_invs(), topology.diameter, batch=runs)

    base = estimator.NetworkState.from_nodes(estimator.init_states(n, m, theta0=init.theta0, P0=init.P0))
    nodes = {}
    for alg in algorithms:
        if alg == "centralized":
            # the fusion center starts from node 0's initial condition
            c0 = estimator.centralized_init(m, theta0=init.theta0[0], P0=init.P0[0])
            nodes[alg] = (np.broadcast_to(c0.theta, (runs, m)).copy(),
                          np.broadcast_to(c0.P, (runs, m, m)).copy())
        else:
            nodes[alg] = estimator.NetworkState(
                np.broadcast_to(base.theta, (runs, n, m)).copy(),
                np.broadcast_to(base.P, (runs, n, m, m)).copy(),
                np.broadcast_to(base.P_inv, (runs, n, m, m)).copy(),
            )
    trackers = {alg: _Tracker(alg, runs, n, cadence, horizon, trajectory, full_matrices) for alg in algorithms}

    def estimates(alg):
        if alg == "centralized":
            return np.broadcast_to(nodes[alg][0][:, None, :], (runs, n, m))
        return nodes[alg].theta

    def info(alg):
        if alg == "centralized":
            return np.broadcast_to(np.linalg.inv(nodes[alg][1])[:, None], (runs, n, m, m))
        return nodes[alg].P_inv

    for k in range(horizon):
        obs = [generate_step(scenario, g, k) for g in gens]
        phi = np.stack([o.phi for o in obs])  # (R, n, m)
        y = np.stack([o.y for o in obs])
        r_t, lam = excite.update(phi)
        for alg in algorithms:
            tr = trackers[alg]
            err = theta - estimates(alg)
            sq = np.einsum("...ij,...ij->...i", err, err)
            with np.errstate(over="ignore"):
                reg = np.einsum("...ij,...ij->...i", phi, err) ** 2
            tr.acc_regret += reg.sum(axis=1)
            tr.point(k, sq, reg)
            tr.dump(k, estimates(alg), info(alg))
            if alg == "centralized":
                th, p = nodes[alg]
                pp = np.einsum("rij,rjk,rik->ri", phi, p, phi).max(axis=1)
                th, p = estimator.centralized_step_stacked(th, p, phi, y)
                p_inv = np.linalg.inv(p)
                e = theta - th
                v = np.einsum("rj,rjk,rk->r", e, p_inv, e)
                logdet = _check_logdet(p_inv, alg)
                nodes[alg] = (th, p)
            else:
                st = nodes[alg]
                pp = np.einsum("rij,rijk,rik->ri", phi, st.P, phi).max(axis=1)
                if alg == "distributed":
                    new, adapted = estimator.step_network_stacked(st, phi, y, topology, combine_rounds)
                    if on_step is not None:
                        for r in range(runs):
                            on_step(k=k, run=r, obs=obs[r], prev=st.to_nodes(r), adapted=adapted.to_outputs(r),
                                    new=new.to_nodes(r))
                else:
                    new = estimator.classical_step_stacked(st, phi, y)
                e = theta - new.theta
                v = np.einsum("rij,rijk,rik->r", e, new.P_inv, e)
                logdet = _check_logdet(new.P_inv, alg).sum(axis=1)
                nodes[alg] = new
            np.maximum(tr.max_pp, pp, out=tr.max_pp)
            tr.network_row(k, [r_t, lam, v, logdet, pp])

    per_run: list[dict[str, RunTrace]] = [{} for _ in range(runs)]
    for alg in algorithms:
        err = theta - estimates(alg)
        sq = np.einsum("...ij,...ij->...i", err, err)
        tr = trackers[alg]
        tr.point(horizon, sq, np.full((runs, n), np.nan))
        tr.dump(horizon, estimates(alg), info(alg))
        for r, trace in enumerate(tr.finish(sq)):
            per_run[r][alg] = trace
    return per_run


def simulate_run(scenario: Scenario, topology: NetworkTopology, horizon: int, seed: int,
                 algorithms: Sequence[str] = ("distributed",), init: InitSpec | None = None,
                 combine_rounds: int = 1, cadence: int = 1, on_step: StepHook | None = None,
                 trajectory: bool = False, full_matrices: bool = False) -> dict[str, RunTrace]:
    """Single-seed convenience wrapper around :func:`simulate_batch`."""
    return simulate_batch(scenario, topology, horizon, [seed], algorithms, init, combine_rounds, cadence,
                          on_step, trajectory, full_matrices)[0]
