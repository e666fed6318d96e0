"""SPD helpers and executable checks for the matrix inequalities behind the
convergence analysis of distributed least squares.

The ``check_*`` functions build the relevant (block) matrices densely and test
the inequality numerically.  Order checks return an :class:`OrderCheckReport`;
scalar inequalities return a :class:`MarginCheck` whose ``margin`` is
``rhs - lhs`` (nonnegative when the inequality holds exactly).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np
from scipy.linalg import lapack

from .errors import (
    DimensionMismatch,
    NotPositiveDefinite,
    NotSymmetric,
    SingularInput,
    WeightSumInvalid,
)

DEFAULT_REL_TOL = 1e-9
LOGDET_TOL = 1e-8
COND_LIMIT = 1e12


@dataclass(frozen=True)
class OrderCheckReport:
    holds: bool
    worst_eig: float
    witness: np.ndarray


class MarginCheck(NamedTuple):
    holds: bool
    margin: float


def symmetrize(x: np.ndarray) -> np.ndarray:
    return 0.5 * (x + x.T)


def _as_weights(weights) -> np.ndarray:
    return np.asarray(getattr(weights, "weights", weights), dtype=float)


def _scale(*mats) -> float:
    return max([1e-300] + [float(np.linalg.norm(m, 2)) for m in mats if m.size])


def logdet_spd(a) -> float:
    """Log-determinant through a Cholesky factor."""
    chol, info = lapack.dpotrf(np.asarray(a, dtype=float), lower=1)
    if info != 0:
        raise NotPositiveDefinite("matrix is not positive definite")
    return 2.0 * float(np.sum(np.log(np.diag(chol))))


def logdet_psd(a) -> float:
    """Like :func:`logdet_spd` but returns ``-inf`` for singular PSD input."""
    sign, value = np.linalg.slogdet(np.asarray(a, dtype=float))
    return float(value) if sign > 0 else -np.inf


def psd_order(a, b, tol: float = 0.0) -> OrderCheckReport:
    """Check ``a <= b`` in the Loewner order, i.e. ``b - a >= -tol * I``."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape or a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionMismatch(f"shapes {a.shape} and {b.shape} are not equal square")
    sym_tol = 1e-12 * max(1.0, _scale(a, b))
    for name, m in (("A", a), ("B", b)):
        if np.max(np.abs(m - m.T), initial=0.0) > sym_tol:
            raise NotSymmetric(f"{name} is not symmetric")
    vals, vecs = np.linalg.eigh(symmetrize(b - a))
    worst = float(vals[0])
    return OrderCheckReport(holds=worst >= -tol, worst_eig=worst, witness=vecs[:, 0])


def block_diag(blocks: Sequence[np.ndarray]) -> np.ndarray:
    m = blocks[0].shape[0]
    n = len(blocks)
    out = np.zeros((m * n, m * n))
    for i, blk in enumerate(blocks):
        out[i * m:(i + 1) * m, i * m:(i + 1) * m] = blk
    return out


def kron_weights(weights, m: int) -> np.ndarray:
    return np.kron(_as_weights(weights), np.eye(m))


def convex_combination(weights, blocks: Sequence[np.ndarray]) -> list[np.ndarray]:
    """Q'_i = sum_j a_ji Q_j for every node i."""
    w = _as_weights(weights)
    stack = np.asarray(blocks, dtype=float)
    return [np.tensordot(w[:, i], stack, axes=1) for i in range(w.shape[0])]


def check_lemma_4_1(weights, qs: Sequence[np.ndarray], rel_tol: float = DEFAULT_REL_TOL) -> OrderCheckReport:
    """Block form of  A Q A <= Q'  for PSD blocks ``qs`` and A = weights (x) I_m."""
    qs = [np.asarray(q, dtype=float) for q in qs]
    w = _as_weights(weights)
    if len(qs) != w.shape[0]:
        raise DimensionMismatch(f"{len(qs)} blocks for {w.shape[0]} nodes")
    big_a = kron_weights(w, qs[0].shape[0])
    lhs = symmetrize(big_a @ block_diag(qs) @ big_a)
    rhs = block_diag(convex_combination(w, qs))
    return psd_order(lhs, rhs, rel_tol * _scale(lhs, rhs))


def check_lemma_4_2(weights, pbar_inv: Sequence[np.ndarray],
                    rel_tol: float = DEFAULT_REL_TOL) -> tuple[OrderCheckReport, OrderCheckReport]:
    """Check  A Pbar^-1 A <= P^-1  and  A P A <= Pbar  with P_i^-1 = sum_j a_ji Pbar_j^-1."""
    pbar_inv = [np.asarray(p, dtype=float) for p in pbar_inv]
    w = _as_weights(weights)
    m = pbar_inv[0].shape[0]
    big_a = kron_weights(w, m)
    p_inv = convex_combination(w, pbar_inv)

    lhs1 = symmetrize(big_a @ block_diag(pbar_inv) @ big_a)
    rhs1 = block_diag(p_inv)
    first = psd_order(lhs1, rhs1, rel_tol * _scale(lhs1, rhs1))

    p = [symmetrize(np.linalg.inv(x)) for x in p_inv]
    pbar = [symmetrize(np.linalg.inv(x)) for x in pbar_inv]
    lhs2 = symmetrize(big_a @ block_diag(p) @ big_a)
    rhs2 = block_diag(pbar)
    second = psd_order(lhs2, rhs2, rel_tol * _scale(lhs2, rhs2))
    return first, second


def check_lemma_4_3(weights, pbar_inv: Sequence[np.ndarray], tol: float = LOGDET_TOL) -> MarginCheck:
    """|Pbar^-1| <= |P^-1| for the block-diagonal stacks, compared in log domain."""
    pbar_inv = [np.asarray(p, dtype=float) for p in pbar_inv]
    lhs = sum(logdet_spd(p) for p in pbar_inv)
    rhs = sum(logdet_spd(p) for p in convex_combination(weights, pbar_inv))
    margin = rhs - lhs
    return MarginCheck(margin >= -tol, float(margin))


def check_ky_fan(lambdas, mats: Sequence[np.ndarray], tol: float = LOGDET_TOL) -> MarginCheck:
    """log|sum l_i A_i| >= sum l_i log|A_i| for convex weights and PSD A_i."""
    lam = np.asarray(lambdas, dtype=float)
    if len(lam) != len(mats):
        raise DimensionMismatch(f"{len(lam)} weights for {len(mats)} matrices")
    if np.any(lam < 0) or abs(lam.sum() - 1.0) > 1e-12:
        raise WeightSumInvalid(f"weights must be nonnegative and sum to 1, got {lam.sum()!r}")
    mats = [np.asarray(a, dtype=float) for a in mats]
    rhs = 0.0
    for l_i, a in zip(lam, mats):
        if l_i > 0:
            rhs += l_i * logdet_psd(a)
    if rhs == -np.inf:
        return MarginCheck(True, np.inf)
    lhs = logdet_psd(sum(l_i * a for l_i, a in zip(lam, mats)))
    margin = lhs - rhs
    return MarginCheck(bool(margin >= -tol), float(margin))


def _checked_inv(x: np.ndarray, name: str) -> np.ndarray:
    if np.linalg.cond(x) > COND_LIMIT:
        raise SingularInput(f"{name} is singular or ill-conditioned")
    return np.linalg.inv(x)


def woodbury_check(a, b, c, d, rel_tol: float = DEFAULT_REL_TOL) -> MarginCheck:
    """Matrix inversion lemma; ``margin`` is the relative residual (not rhs - lhs)."""
    a, b, c, d = (np.atleast_2d(np.asarray(x, dtype=float)) for x in (a, b, c, d))
    a_inv = _checked_inv(a, "A")
    d_inv = _checked_inv(d, "D")
    lhs = _checked_inv(a + b @ d @ c, "A + BDC")
    inner = _checked_inv(d_inv + c @ a_inv @ b, "D^-1 + C A^-1 B")
    rhs = a_inv - a_inv @ b @ inner @ c @ a_inv
    residual = float(np.max(np.abs(lhs - rhs)) / max(1.0, np.max(np.abs(lhs))))
    return MarginCheck(residual <= rel_tol, residual)


def check_det_identity(a, b, rel_tol: float = DEFAULT_REL_TOL) -> MarginCheck:
    """|I_d + AB| = |I_s + BA|; ``margin`` is the relative mismatch."""
    a = np.atleast_2d(np.asarray(a, dtype=float))
    b = np.atleast_2d(np.asarray(b, dtype=float))
    left = np.linalg.det(np.eye(a.shape[0]) + a @ b)
    right = np.linalg.det(np.eye(b.shape[0]) + b @ a)
    mismatch = abs(left - right) / max(1.0, abs(left), abs(right))
    return MarginCheck(mismatch <= rel_tol, float(mismatch))


def check_inverse_order(a, b, rel_tol: float = DEFAULT_REL_TOL) -> OrderCheckReport:
    """For SPD a >= b, verify a^-1 <= b^-1."""
    a_inv = symmetrize(np.linalg.inv(a))
    b_inv = symmetrize(np.linalg.inv(b))
    return psd_order(a_inv, b_inv, rel_tol * _scale(a_inv, b_inv))


def cr_inequality(values, r: float, rel_tol: float = 1e-12) -> MarginCheck:
    """(sum a)^r <= m^(r-1) sum a^r for r >= 1, and <= sum a^r for 0 <= r <= 1."""
    a = np.asarray(values, dtype=float)
    if np.any(a < 0) or r < 0:
        raise ValueError("C_r inequality needs nonnegative values and r >= 0")
    lhs = float(a.sum() ** r)
    rhs = float(np.sum(a ** r))
    if r >= 1:
        rhs *= len(a) ** (r - 1)
    margin = rhs - lhs
    return MarginCheck(margin >= -rel_tol * max(1.0, rhs), margin)


# random instance generators (test infrastructure)

def random_doubly_stochastic(n: int, rng: np.random.Generator, density: float = 0.5,
                             max_iter: int = 20000) -> np.ndarray:
    """Symmetric doubly stochastic matrix with connected support and positive diagonal.

    A random spanning tree plus extra edges gives the support; positive
    symmetric entries are then balanced by symmetric Sinkhorn scaling.
    """
    support = np.eye(n, dtype=bool)
    order = rng.permutation(n)
    for k in range(1, n):
        i, j = order[k], order[rng.integers(k)]
        support[i, j] = support[j, i] = True
    extra = np.triu(rng.random((n, n)) < density, 1)
    support |= extra | extra.T
    s = np.where(support, rng.uniform(0.1, 1.0, (n, n)), 0.0)
    s = np.triu(s) + np.triu(s, 1).T
    x = np.ones(n)
    for _ in range(max_iter):
        x = np.sqrt(x / (s @ x))
        w = x[:, None] * s * x[None, :]
        if np.max(np.abs(w.sum(axis=1) - 1.0)) < 1e-14:
            break
    w = symmetrize(w)
    return w


def random_psd(m: int, rng: np.random.Generator, rank: int | None = None) -> np.ndarray:
    rank = m if rank is None else rank
    x = rng.standard_normal((rank, m))
    return symmetrize(x.T @ x)


def random_spd(m: int, rng: np.random.Generator) -> np.ndarray:
    x = rng.standard_normal((m + 1, m))
    return symmetrize(x.T @ x + rng.uniform(0.05, 1.0) * np.eye(m))


@dataclass
class SuiteReport:
    lemma: str
    draws: int
    violations: int
    worst_margin: float

    @property
    def passed(self) -> bool:
        return self.violations == 0


# check ids: convex-combination is check_lemma_4_1, information-contraction and
# covariance-contraction are the two halves of check_lemma_4_2, combine-logdet
# is check_lemma_4_3
LEMMAS = ("convex-combination", "information-contraction", "covariance-contraction", "combine-logdet",
          "ky-fan", "woodbury", "cr", "det-identity", "inverse-order")


def _draw_dims(d: int, m_values, n_values) -> tuple[int, int]:
    return m_values[d % len(m_values)], n_values[(d // len(m_values)) % len(n_values)]


def run_lemma_suite(lemma: str, draws: int = 1000, m_values=(1, 2, 3), n_values=(2, 3, 5),
                    seed: int = 0, rel_tol: float = DEFAULT_REL_TOL) -> SuiteReport:
    """Randomized falsification run; ``worst_margin`` is the smallest slack seen.

    For order checks the slack is the smallest eigenvalue of (rhs - lhs);
    for woodbury / det-identity it is the negated relative residual.
    """
    if lemma not in LEMMAS:
        raise ValueError(f"unknown lemma {lemma!r}; choose from {LEMMAS}")
    rng = np.random.default_rng(seed)
    violations = 0
    worst = np.inf
    for d in range(draws):
        m, n = _draw_dims(d, m_values, n_values)
        if lemma == "convex-combination":
            w = random_doubly_stochastic(n, rng)
            rep = check_lemma_4_1(w, [random_psd(m, rng, rng.integers(0, m + 1)) for _ in range(n)], rel_tol)
            ok, margin = rep.holds, rep.worst_eig
        elif lemma in ("information-contraction", "covariance-contraction"):
            w = random_doubly_stochastic(n, rng)
            first, second = check_lemma_4_2(w, [random_spd(m, rng) for _ in range(n)], rel_tol)
            rep = first if lemma == "information-contraction" else second
            ok, margin = rep.holds, rep.worst_eig
        elif lemma == "combine-logdet":
            w = random_doubly_stochastic(n, rng)
            ok, margin = check_lemma_4_3(w, [random_spd(m, rng) for _ in range(n)])
        elif lemma == "ky-fan":
            k = int(rng.integers(2, 5))
            lam = rng.dirichlet(np.ones(k))
            lam[-1] = 1.0 - lam[:-1].sum()
            ok, margin = check_ky_fan(lam, [random_spd(3, rng) for _ in range(k)])
        elif lemma == "woodbury":
            while True:  # redraw the rare ill-conditioned instance
                s = int(rng.integers(1, 4))
                a = 3.0 * np.eye(4) + 0.5 * rng.standard_normal((4, 4))
                b = rng.standard_normal((4, s))
                c = rng.standard_normal((s, 4))
                dd = 2.0 * np.eye(s) + 0.3 * rng.standard_normal((s, s))
                try:
                    ok, resid = woodbury_check(a, b, c, dd, rel_tol)
                    break
                except SingularInput:
                    pass
            margin = -resid
        elif lemma == "det-identity":
            s = int(rng.integers(1, 5))
            a = rng.standard_normal((m, s))
            b = rng.standard_normal((s, m))
            ok, resid = check_det_identity(a, b, rel_tol)
            margin = -resid
        elif lemma == "inverse-order":
            small = random_spd(m, rng)
            big = small + random_psd(m, rng, rng.integers(0, m + 1))
            rep = check_inverse_order(big, small, rel_tol)
            ok, margin = rep.holds, rep.worst_eig
        else:  # cr
            r = (0.5, 1.0, 2.0)[d % 3] if d % 2 == 0 else float(rng.uniform(0.0, 3.0))
            a = rng.exponential(size=int(rng.integers(1, 6)))
            ok, margin = cr_inequality(a, r)
        violations += not ok
        worst = min(worst, margin)
    return SuiteReport(lemma, draws, violations, float(worst))
