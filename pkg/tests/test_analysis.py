import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from distls import analysis
from distls.errors import DimensionMismatch, EmptyRecords, IncompleteHistory, MissingVarianceBound
from distls.estimator import NodeState, init_states
from distls.graph import build_topology
from distls.harness.simulate import simulate_run
from distls.model import NoiseSpec, iid_scenario


@pytest.fixture(scope="module")
def iid_long(line3):
    sc = iid_scenario(np.array([1.0, -0.5, 0.25, 2.0]), n=3)
    return simulate_run(sc, line3, 10001, seed=0, cadence=10)["distributed"]


def _row(trace, k):
    return int(np.flatnonzero(trace.network_ks == k)[0])


# regret --------------------------------------------------------------------

def test_regret_examples():
    theta = np.array([2.0, 5.0])
    assert analysis.regret([0.3, -1.0], theta, theta) == 0.0
    assert analysis.regret([0.0, 0.0], theta, [9.0, 9.0]) == 0.0
    assert analysis.regret([1.0, 0.0], theta, [1.0, 0.0]) == 1.0


def test_regret_dimension_check():
    with pytest.raises(DimensionMismatch):
        analysis.regret([1.0, 0.0, 0.0], [1.0, 2.0], [0.0, 0.0])


@given(seed=st.integers(0, 2**31 - 1), m=st.integers(2, 6), scale=st.floats(-1e3, 1e3))
def test_regret_ignores_directions_orthogonal_to_phi(seed, m, scale):
    rng = np.random.default_rng(seed)
    phi, theta, est = rng.standard_normal((3, m))
    v = rng.standard_normal(m)
    v -= (v @ phi) / (phi @ phi) * phi
    base = analysis.regret(phi, theta, est)
    moved = analysis.regret(phi, theta, est + scale * v)
    assert moved == pytest.approx(base, rel=1e-8, abs=1e-8 * (1 + abs(scale)) * np.linalg.norm(phi) ** 2)


def test_averaged_regret_examples():
    assert analysis.averaged_regret(np.zeros((5, 3))) == 0.0
    assert analysis.averaged_regret(np.array([[1.0, 3.0], [0.0, 0.0]])) == 2.0


def test_averaged_regret_accepts_records():
    recs = [analysis.StepRecord(k, np.array(r), np.zeros(2), 1.0, 1.0, 0.0, 0.0, 0.0)
            for k, r in enumerate([[1.0, 3.0], [0.0, 0.0]])]
    assert analysis.averaged_regret(recs) == 2.0


@pytest.mark.parametrize("records", [[], np.zeros((1, 3)), np.zeros(4)])
def test_averaged_regret_needs_two_steps(records):
    with pytest.raises(EmptyRecords):
        analysis.averaged_regret(records)


def test_averaged_regret_decays(iid_long):
    # the running average (1/(n t)) sum_{k<=t} R over t = 10^3 and 10^4
    n = iid_long.regret.shape[1]
    acc = iid_long.network[:, 5]
    early = acc[_row(iid_long, 1000)] / (n * 1000)
    late = acc[_row(iid_long, 10000)] / (n * 10000)
    assert late < early


# excitation ----------------------------------------------------------------

def test_excitation_without_regressors(line3):
    r_t, lam = analysis.excitation_stats(np.zeros((6, 3, 2)), [np.eye(2)] * 3, line3, 5)
    assert r_t == 1.0 and lam == 3.0


def test_excitation_incomplete_history(line3):
    with pytest.raises(IncompleteHistory):
        analysis.excitation_stats(np.zeros((3, 3, 2)), [np.eye(2)] * 3, line3, 5)


def test_excitation_hand_example():
    # n=1, D=1: lambda_min of P0^-1 + sum phi phi^T with no truncation
    phis = np.array([[[1.0, 0.0]], [[0.0, 2.0]]])
    r_t, lam = analysis.excitation_stats(phis, [np.eye(2)], build_topology([[1.0]]), 1)
    assert r_t == 1.0 + 1.0 + 4.0
    assert lam == 2.0


def test_truncation_uses_diameter(line3):
    phis = np.zeros((3, 3, 1))
    phis[2, 0, 0] = 5.0  # enters r_t at t=2 but the pooled sum only at t=3
    r_t, lam = analysis.excitation_stats(phis, [np.eye(1)] * 3, line3, 2)
    assert r_t == 26.0 and lam == 3.0


@given(seed=st.integers(0, 2**31 - 1), diameter=st.integers(1, 4))
def test_tracker_matches_batch(seed, diameter):
    rng = np.random.default_rng(seed)
    phis = rng.standard_normal((12, 3, 2))
    p0 = [np.eye(2) * s for s in (1.0, 2.0, 0.5)]
    tracker = analysis.ExcitationTracker(p0, diameter)
    for t in range(12):
        r_t, lam = tracker.update(phis[t])
        ref = analysis.excitation_stats(phis, p0, diameter, t)
        assert r_t == pytest.approx(ref[0], rel=1e-12)
        assert lam == pytest.approx(ref[1], rel=1e-10)


def test_batched_tracker_matches_single(rng):
    phis = rng.standard_normal((10, 2, 3, 2))
    p0 = [np.eye(2)] * 3
    batch = analysis.ExcitationTracker(p0, 2, batch=2)
    singles = [analysis.ExcitationTracker(p0, 2) for _ in range(2)]
    for t in range(10):
        r_b, lam_b = batch.update(phis[t])
        for r in range(2):
            r_s, lam_s = singles[r].update(phis[t, r])
            assert r_b[r] == r_s and lam_b[r] == pytest.approx(lam_s, rel=1e-12)


def test_network_statistics_monotone(iid_long):
    net = iid_long.network
    assert np.all(np.diff(net[:, 0]) >= 0)  # r_t
    assert np.all(np.diff(net[:, 1]) >= -1e-9 * net[1:, 1])  # lambda_min_coop
    assert np.all(np.diff(net[:, 3]) >= -1e-9)  # total logdet


def test_arx_excitation_ratio(arx, line3):
    tr = simulate_run(arx, line3, 200, seed=0)["distributed"]
    ratio = np.log(tr.network[:, 0]) / tr.network[:, 1]
    assert ratio[-1] < 0.5
    # decreasing in t once the pooled information has built up
    checkpoints = ratio[[49, 99, 149, 199]]
    assert np.all(np.diff(checkpoints) < 0)


def test_lyapunov_over_log_r_stays_bounded(iid_long):
    net = iid_long.network
    ks = iid_long.network_ks
    ratio = net[:, 2] / np.log(net[:, 0])
    early = ratio[(ks >= 100) & (ks < 1000)].max()
    assert ratio[ks >= 1000].max() <= 2 * early


# Lyapunov, logdet and bound constants ------------------------------------

def test_lyapunov_examples():
    theta = np.array([1.0, 2.0])
    assert analysis.lyapunov_value(init_states(3, 2, theta0=theta), theta) == 0.0
    state = NodeState(np.array([0.0]), np.array([[1 / 3]]), np.array([[3.0]]))
    assert analysis.lyapunov_value([state], [2.0]) == 12.0


def test_logdet_information():
    states = init_states(2, 2, alpha0=0.5)
    assert analysis.logdet_information(states) == pytest.approx(4 * np.log(2.0))


def test_phi_p_phi_max():
    states = init_states(2, 2, P0=np.array([np.eye(2), 2 * np.eye(2)]))
    assert analysis.phi_p_phi_max(states, [[1.0, 1.0], [1.0, 0.0]]) == 2.0


def test_bound_constants_scalar():
    bc = analysis.bound_constants([NoiseSpec("gaussian", variance=1.0)], m=1, n=1, c=0.0,
                                  initial_lyapunov=0.0, initial_logdet=0.0)
    assert (bc.a, bc.b, bc.sigma_w) == (1.0, 0.0, 1.0)
    assert bc.bound(np.e) == pytest.approx(1.0)


def test_bound_constants_arx_noise(arx):
    bc = analysis.bound_constants(arx.noise, m=8, n=3, c=1.0, initial_lyapunov=0.0, initial_logdet=0.0)
    assert bc.sigma_w == pytest.approx(0.3)
    assert bc.a == pytest.approx(2 * 8 * 3 * 0.3)


def test_bound_constants_variance_checks():
    with pytest.raises(MissingVarianceBound):
        analysis.bound_constants([], m=1, n=1, c=0.0, initial_lyapunov=0.0, initial_logdet=0.0)
    with pytest.raises(MissingVarianceBound):
        analysis.bound_constants([NoiseSpec("gaussian", variance=1.0)], m=1, n=1, c=0.0,
                                 initial_lyapunov=0.0, initial_logdet=0.0, sigma_bar=0.5)
    bc = analysis.bound_constants([], m=2, n=1, c=1.0, initial_lyapunov=3.0, initial_logdet=1.0, sigma_bar=0.5)
    assert bc.a == 2.0 and bc.b == pytest.approx(2 * (3.0 - 0.5))
