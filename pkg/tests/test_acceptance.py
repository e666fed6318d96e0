"""End-to-end acceptance checks; each test prints one PASS/FAIL line."""
import time
from pathlib import Path

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES
from distls import analysis, estimator
from distls import matrix_toolkit as mt
from distls.cli import main
from distls.graph import build_topology
from distls.harness.config import validate_config
from distls.harness.runner import run_experiment
from distls.harness.simulate import simulate_batch, simulate_run
from distls.model import NoiseSpec, generate_step, iid_scenario, init_state

CONFIGS = Path(__file__).resolve().parents[1] / "configs"
ARX_CONFIG = CONFIGS / "cooperative_arx.toml"
IID_CONFIG = CONFIGS / "iid_3node.toml"


def record(number: int, title: str, ok: bool, detail: str):
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {title} -- {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def test_recursive_matches_batch_ls():
    start = time.perf_counter()
    sc = iid_scenario(np.array([0.5, -1.0, 2.0, 0.3]), n=1, noise=NoiseSpec("gaussian", variance=1.0))
    top = build_topology([[1.0]])
    gen = init_state(sc, seed=0)
    states = estimator.init_states(1, 4)
    phis, ys = [], []
    for _ in range(200):
        obs = generate_step(sc, gen)
        phis.append(obs.phi[0])
        ys.append(obs.y[0])
        states = estimator.step_network(states, obs, top)
    oracle = estimator.batch_ls(np.array(phis), np.array(ys), np.zeros(4), np.eye(4))
    dev = float(np.max(np.abs(states[0].theta - oracle)))
    elapsed = time.perf_counter() - start
    ok = dev <= 1e-8 and elapsed < 1.0
    record(1, "recursive LS equals batch normal equations", ok, f"max dev {dev:.2e}, {elapsed:.2f} s")
    assert dev <= 1e-8
    assert elapsed < 1.0


def test_error_recursion_identity(arx, line3):
    start = time.perf_counter()
    worst = []

    def hook(k, run, obs, prev, adapted, new):
        err = np.linalg.norm(np.concatenate([arx.theta - s.theta for s in prev]))
        res = estimator.error_recursion_residual(arx.theta, prev, adapted, new, obs, line3)
        worst.append(res / (1 + err))

    simulate_run(arx, line3, 100, seed=0, on_step=hook)
    elapsed = time.perf_counter() - start
    scaled = max(worst)
    ok = len(worst) == 100 and scaled <= 1e-8 and elapsed < 1.0
    record(2, "error recursion residual", ok, f"max residual/(1+|err|) {scaled:.2e}, {elapsed:.2f} s")
    assert len(worst) == 100 and scaled <= 1e-8
    assert elapsed < 1.0


def _harvest_checks(config):
    """Run the criterion-4 scenario and check the inequalities on live matrices."""
    w = config.topology.weights
    failures = []
    count = [0]

    def hook(k, run, obs, prev, adapted, new):
        pbar_inv = [a.Pbar_inv for a in adapted]
        count[0] += 1
        if not mt.check_lemma_4_1(w, pbar_inv).holds:
            failures.append(("convex-combination", run, k))
        first, second = mt.check_lemma_4_2(w, pbar_inv)
        if not (first.holds and second.holds):
            failures.append(("contraction", run, k))
        if not mt.check_lemma_4_3(w, pbar_inv).holds:
            failures.append(("combine-logdet", run, k))
        for i in range(len(new)):
            nbrs = config.topology.in_neighbors[i]
            if not mt.check_ky_fan(w[nbrs, i], [pbar_inv[j] for j in nbrs]).holds:
                failures.append(("ky-fan", run, k))
            phi = obs.phi[i]
            if not mt.woodbury_check(prev[i].P_inv, phi[:, None], phi[None, :], [[1.0]]).holds:
                failures.append(("woodbury", run, k))

    # every step of the first runs of the criterion-4 seeds
    simulate_batch(config.scenario, config.topology, config.horizon,
                   seeds=[config.base_seed + r for r in range(3)], on_step=hook)
    return count[0], failures


def test_lemma_suites():
    start = time.perf_counter()
    reports = [mt.run_lemma_suite(lemma, draws=1000, m_values=(1, 2, 3), n_values=(2, 3, 5), rel_tol=1e-9)
               for lemma in mt.LEMMAS]
    steps, failures = _harvest_checks(validate_config(ARX_CONFIG))
    elapsed = time.perf_counter() - start
    violations = {r.lemma: r.violations for r in reports if r.violations}
    ok = not violations and not failures and elapsed < 30.0
    worst = min(r.worst_margin for r in reports)
    record(3, "lemma suites and live-trajectory checks", ok,
           f"{len(reports)} suites x 1000 draws, {steps} live steps, violations {violations or 0}, "
           f"live failures {len(failures)}, worst margin {worst:.2e}, {elapsed:.1f} s")
    assert not violations
    assert not failures
    assert elapsed < 30.0


@pytest.fixture(scope="module")
def arx_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("arx")
    start = time.perf_counter()
    code = main(["run", str(ARX_CONFIG), "--out", str(out / "first")])
    elapsed = time.perf_counter() - start
    return code, out, elapsed


def _aggregate(path):
    import csv

    table = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            table[(row["algorithm"], int(row["k"]), int(row["i"]))] = float(row["mean_sq_error"])
    return table


def test_cooperative_excitation_reproduction(arx_run):
    code, out, elapsed = arx_run
    agg = _aggregate(out / "first" / "aggregate.csv")
    classical_node1 = min(v for (alg, k, i), v in agg.items() if alg == "classical_per_node" and i == 0)
    dist = np.array([[agg[("distributed", k, i)] for i in range(3)] for k in (50, 100, 150, 200)])
    final_ok = bool(np.all(dist[-1] <= 0.1))
    trend_ok = bool(np.all(np.diff(dist, axis=0) < 0))
    ok = code == 0 and classical_node1 >= 4.1 and final_ok and trend_ok and elapsed < 10.0
    record(4, "cooperative excitation (ARX, R=100, T=200)", ok,
           f"classical node-1 min {classical_node1:.4f}, distributed k=200 "
           f"{' '.join(f'{v:.4f}' for v in dist[-1])}, decreasing {trend_ok}, {elapsed:.2f} s")
    assert code == 0
    assert classical_node1 >= 4.1
    assert final_ok and trend_ok
    assert elapsed < 10.0


def test_determinism(arx_run):
    code, out, _ = arx_run
    assert code == 0
    assert main(["run", str(ARX_CONFIG), "--out", str(out / "second"), "--no-plots"]) == 0
    same = (out / "first" / "metrics.csv").read_bytes() == (out / "second" / "metrics.csv").read_bytes()
    record(8, "repeat run gives byte-identical metrics.csv", same, f"identical {same}")
    assert same


@pytest.fixture(scope="module")
def iid_run():
    config = validate_config(IID_CONFIG)
    start = time.perf_counter()
    trace = simulate_run(config.scenario, config.topology, config.horizon, seed=config.base_seed,
                         cadence=config.record_cadence)["distributed"]
    return config, trace, time.perf_counter() - start


def _row(ks, t):
    return int(np.flatnonzero(ks == t)[0])


def test_regret_grows_like_log_r(iid_run):
    config, tr, elapsed = iid_run
    net, ks = tr.network, tr.network_ks
    ratio = {t: net[_row(ks, t), 5] / np.log(net[_row(ks, t), 0]) for t in (1000, 10000)}
    early_pp = net[ks < 1000, 4].max()
    late_pp = net[ks >= 5000, 4].max()
    pp_ok = bool(np.all(np.isfinite(net[:, 4]))) and late_pp <= early_pp
    ok = ratio[10000] <= 2 * ratio[1000] and pp_ok and elapsed < 30.0
    record(5, "accumulated regret / log r_t", ok,
           f"ratio t=1e3 {ratio[1000]:.3f}, t=1e4 {ratio[10000]:.3f} (x{ratio[10000] / ratio[1000]:.2f}); "
           f"phiPphi max early {early_pp:.3g}, late {late_pp:.3g}; {elapsed:.2f} s")
    assert ratio[10000] <= 2 * ratio[1000]
    assert pp_ok
    assert elapsed < 30.0


def test_error_decays_with_cooperative_excitation(iid_run):
    config, tr, elapsed = iid_run
    net, ks = tr.network, tr.network_ks

    def quantity(t):
        sq = tr.sq_error[_row(tr.ks, t)].sum()
        r_t, lam = net[_row(ks, t), 0], net[_row(ks, t), 1]
        return sq * lam / np.log(r_t), np.log(r_t) / lam

    (q3, x3), (q4, x4) = quantity(1000), quantity(10000)
    drop = x3 / x4
    ok = q4 <= 2 * q3 and drop >= 5 and elapsed < 30.0
    record(6, "error x lambda_min / log r_t and excitation ratio", ok,
           f"quantity t=1e3 {q3:.3f}, t=1e4 {q4:.3f} (x{q4 / q3:.2f}); excitation ratio drop x{drop:.1f}; "
           f"{elapsed:.2f} s")
    assert q4 <= 2 * q3
    assert drop >= 5
    assert elapsed < 30.0


def test_expected_regret_bound():
    config = validate_config(IID_CONFIG).replace(horizon=1000, runs=100, record_cadence=1)
    start = time.perf_counter()
    summary = run_experiment(config, write=False)
    elapsed = time.perf_counter() - start
    alg = "distributed"
    c = float(summary.max_phi_p_phi[alg].max())
    theta = config.scenario.theta
    p0_invs = config.init.p0_invs()
    v0 = sum(float((theta - t0) @ p @ (theta - t0)) for t0, p in zip(config.init.theta0, p0_invs))
    logdet0 = sum(mt.logdet_spd(p) for p in p0_invs)
    consts = analysis.bound_constants(config.scenario.noise, m=config.scenario.m, n=config.scenario.n, c=c,
                                      initial_lyapunov=v0, initial_logdet=logdet0)
    # last transition observed is phi_{T-1}
    mean_acc = float(summary.mean_acc_regret[alg][-1])
    bound = consts.bound(float(summary.mean_r_t[-1]))
    ok = mean_acc <= bound and elapsed < 60.0
    record(7, "Monte-Carlo expected-regret bound", ok,
           f"mean accumulated regret {mean_acc:.2f} <= bound {bound:.1f} (a={consts.a:.1f}, b={consts.b:.1f}, "
           f"c={c:.2f}); {elapsed:.2f} s")
    assert mean_acc <= bound
    assert elapsed < 60.0
