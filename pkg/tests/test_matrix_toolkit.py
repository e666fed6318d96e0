import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from distls import matrix_toolkit as mt
from distls.errors import DimensionMismatch, NotPositiveDefinite, NotSymmetric, SingularInput, WeightSumInvalid

HALF = np.full((2, 2), 0.5)


# psd_order -----------------------------------------------------------------

def test_psd_order_examples():
    eye = np.eye(3)
    up = mt.psd_order(eye, 2 * eye)
    assert up.holds and up.worst_eig == pytest.approx(1.0)
    down = mt.psd_order(2 * eye, eye)
    assert not down.holds and down.worst_eig == pytest.approx(-1.0)
    same = mt.psd_order(eye, eye)
    assert same.holds and same.worst_eig == 0.0


def test_psd_order_witness():
    rep = mt.psd_order(np.diag([1.0, 3.0]), np.diag([2.0, 2.0]))
    assert rep.worst_eig == pytest.approx(-1.0)
    assert abs(rep.witness[1]) == pytest.approx(1.0)


def test_psd_order_input_checks():
    with pytest.raises(DimensionMismatch):
        mt.psd_order(np.eye(2), np.eye(3))
    with pytest.raises(NotSymmetric):
        mt.psd_order(np.array([[1.0, 2.0], [0.0, 1.0]]), np.eye(2))


@given(seed=st.integers(0, 2**31 - 1), m=st.integers(1, 5))
def test_mutual_order_means_close(seed, m):
    rng = np.random.default_rng(seed)
    a = mt.random_spd(m, rng)
    b = a + 1e-10 * mt.symmetrize(rng.standard_normal((m, m)))
    tol = 1e-8
    if mt.psd_order(a, b, tol).holds and mt.psd_order(b, a, tol).holds:
        assert np.linalg.norm(a - b, 2) <= tol * m


# lemma checkers ------------------------------------------------------------

def test_convex_combination_identity_weights(rng):
    qs = [mt.random_psd(2, rng) for _ in range(3)]
    rep = mt.check_lemma_4_1(np.eye(3), qs)
    assert rep.holds and abs(rep.worst_eig) <= 1e-12


def test_convex_combination_common_block(rng, line3):
    q = mt.random_psd(3, rng)
    assert mt.check_lemma_4_1(line3, [q] * 3).holds


def test_contractions_identity_weights(rng):
    blocks = [mt.random_spd(2, rng) for _ in range(3)]
    first, second = mt.check_lemma_4_2(np.eye(3), blocks)
    assert first.holds and second.holds
    assert abs(first.worst_eig) <= 1e-12 and abs(second.worst_eig) <= 1e-12


def test_contractions_two_node_example():
    # hand-evaluated: P^-1 - A Pbar^-1 A = [[1,-1],[-1,1]] (eigenvalues 0, 2);
    # Pbar - A P A = [[3/4,-1/4],[-1/4,1/12]] (eigenvalues 0, 5/6)
    first, second = mt.check_lemma_4_2(HALF, [np.array([[1.0]]), np.array([[3.0]])])
    assert first.holds and second.holds
    assert first.worst_eig == pytest.approx(0.0, abs=1e-14)
    assert second.worst_eig == pytest.approx(0.0, abs=1e-14)
    a = mt.kron_weights(HALF, 1)
    p_inv_minus = np.diag([2.0, 2.0]) - a @ np.diag([1.0, 3.0]) @ a
    assert np.allclose(np.linalg.eigvalsh(p_inv_minus), [0.0, 2.0])
    pbar_minus = np.diag([1.0, 1 / 3]) - a @ np.diag([0.5, 0.5]) @ a
    assert np.allclose(np.linalg.eigvalsh(pbar_minus), [0.0, 5 / 6])


def test_combine_logdet_examples(rng):
    blocks = [mt.random_spd(2, rng) for _ in range(3)]
    ok, margin = mt.check_lemma_4_3(np.eye(3), blocks)
    assert ok and abs(margin) <= 1e-12
    ok, margin = mt.check_lemma_4_3(HALF, [np.array([[1.0]]), np.array([[3.0]])])
    assert ok and margin == pytest.approx(np.log(4 / 3), abs=1e-14)


def test_singular_weights_report_margin():
    # outside the validated topology set; the margin is reported, not asserted
    rep = mt.check_lemma_4_1(np.array([[0.0, 1.0], [1.0, 0.0]]), [np.eye(1), 2 * np.eye(1)])
    assert np.isfinite(rep.worst_eig)


# Ky Fan, logdet, woodbury ---------------------------------------------------

def test_ky_fan_equality_cases(rng):
    a = mt.random_spd(3, rng)
    ok, margin = mt.check_ky_fan([1.0], [a])
    assert ok and margin == pytest.approx(0.0, abs=1e-12)
    ok, margin = mt.check_ky_fan([0.2, 0.3, 0.5], [a, a, a])
    assert ok and margin == pytest.approx(0.0, abs=1e-12)


def test_ky_fan_singular_member(rng):
    ok, margin = mt.check_ky_fan([0.5, 0.5], [mt.random_psd(3, rng, rank=1), np.eye(3)])
    assert ok and margin == np.inf


@pytest.mark.parametrize("lam", [[0.5, 0.6], [1.2, -0.2]])
def test_ky_fan_weight_checks(lam):
    with pytest.raises(WeightSumInvalid):
        mt.check_ky_fan(lam, [np.eye(2), np.eye(2)])


def test_logdet_examples(rng):
    assert mt.logdet_spd(np.eye(4)) == 0.0
    assert mt.logdet_spd(np.diag([2.0, 8.0])) == pytest.approx(np.log(16.0), abs=1e-15)
    a = mt.random_spd(5, rng)
    assert abs(mt.logdet_spd(a) + mt.logdet_spd(np.linalg.inv(a))) <= 1e-9
    with pytest.raises(NotPositiveDefinite):
        mt.logdet_spd(np.diag([1.0, -1.0]))
    assert mt.logdet_psd(np.zeros((2, 2))) == -np.inf


def test_woodbury_zero_update(rng):
    a = mt.random_spd(3, rng)
    ok, residual = mt.woodbury_check(a, np.zeros((3, 2)), rng.standard_normal((2, 3)), np.eye(2))
    assert ok and residual <= 1e-12


def test_woodbury_rank_one_matches_covariance_update(rng):
    p = mt.random_spd(4, rng)
    phi = rng.standard_normal(4)
    ok, _ = mt.woodbury_check(np.linalg.inv(p), phi[:, None], phi[None, :], [[1.0]])
    assert ok
    b = 1 / (1 + phi @ p @ phi)
    direct = np.linalg.inv(np.linalg.inv(p) + np.outer(phi, phi))
    assert np.allclose(direct, p - b * p @ np.outer(phi, phi) @ p, atol=1e-10)


def test_woodbury_singular_input():
    with pytest.raises(SingularInput):
        mt.woodbury_check(np.zeros((2, 2)), np.eye(2), np.eye(2), np.eye(2))


def test_det_and_inverse_order(rng):
    a = rng.standard_normal((4, 2))
    b = rng.standard_normal((2, 4))
    assert mt.check_det_identity(a, b).holds
    big = mt.random_spd(3, rng)
    assert mt.check_inverse_order(big + np.eye(3), big).holds


# C_r inequality ------------------------------------------------------------

@pytest.mark.parametrize("r", [0.5, 1.0, 2.0])
def test_cr_random(r, rng):
    for _ in range(200):
        vals = rng.uniform(0, 5, rng.integers(1, 8))
        assert mt.cr_inequality(vals, r).holds


def test_cr_equality_cases():
    assert mt.cr_inequality([2.0, 2.0, 2.0], 2.0).margin == pytest.approx(0.0)
    assert mt.cr_inequality([0.0, 4.0], 0.5).margin == pytest.approx(0.0)
    with pytest.raises(ValueError):
        mt.cr_inequality([-1.0], 2.0)


# generators and property tests ---------------------------------------------

@given(seed=st.integers(0, 2**31 - 1), n=st.integers(1, 6))
def test_random_doubly_stochastic(seed, n):
    w = mt.random_doubly_stochastic(n, np.random.default_rng(seed))
    assert np.array_equal(w, w.T)
    assert np.all(w >= 0) and np.all(np.diag(w) > 0)
    assert np.max(np.abs(w.sum(axis=1) - 1)) <= 1e-12


@given(seed=st.integers(0, 2**31 - 1), n=st.integers(2, 5), m=st.integers(1, 3))
def test_lemma_properties(seed, n, m):
    rng = np.random.default_rng(seed)
    w = mt.random_doubly_stochastic(n, rng)
    assert mt.check_lemma_4_1(w, [mt.random_psd(m, rng) for _ in range(n)]).holds
    blocks = [mt.random_spd(m, rng) for _ in range(n)]
    first, second = mt.check_lemma_4_2(w, blocks)
    assert first.holds and second.holds
    assert mt.check_lemma_4_3(w, blocks).holds
    lam = rng.dirichlet(np.ones(n))
    assert mt.check_ky_fan(lam, blocks).holds


@pytest.mark.parametrize("lemma", mt.LEMMAS)
def test_suites_pass_small(lemma):
    rep = mt.run_lemma_suite(lemma, draws=60, seed=3)
    assert rep.passed and rep.draws == 60 and rep.violations == 0


def test_suite_rejects_unknown():
    with pytest.raises(ValueError):
        mt.run_lemma_suite("nope")
