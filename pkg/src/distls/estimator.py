"""Diffusion least squares with covariance-intersection combination, plus the
classical per-node and centralized recursive LS and a batch oracle.

Each node keeps both its covariance ``P`` and information matrix ``P_inv``.
The adapt step downdates ``P`` (rank one) and updates ``P_inv`` by adding
``phi phi^T`` exactly; the combine step averages information matrices and
inverts once through a Cholesky factor.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.linalg import lapack

from .errors import (
    DimensionMismatch,
    NonFiniteInput,
    NotPositiveDefinite,
    SingularCombinedInformation,
    SingularNormalEquations,
    WeightSumInvalid,
)
from .graph import NetworkTopology
from .matrix_toolkit import block_diag, kron_weights, symmetrize
from .model import Observation

RCOND_LIMIT = 1e-14
WEIGHT_SUM_TOL = 1e-12


@dataclass
class NodeState:
    theta: np.ndarray
    P: np.ndarray
    P_inv: np.ndarray
    # optional cache: lower-triangular F with P = F^T F (set by combine)
    P_factor: np.ndarray | None = field(default=None, repr=False, compare=False)


@dataclass
class AdaptOutput:
    theta_bar: np.ndarray
    P_bar: np.ndarray
    Pbar_inv: np.ndarray
    b: float


@dataclass
class CentralizedState:
    theta: np.ndarray
    P: np.ndarray


def _cholesky(a: np.ndarray, what: str) -> np.ndarray:
    chol, info = lapack.dpotrf(a, lower=1, clean=1)
    if info != 0:
        raise NotPositiveDefinite(f"{what} is not positive definite")
    return chol


def _spd_inverse_factored(a: np.ndarray, what: str = "matrix") -> tuple[np.ndarray, np.ndarray]:
    """Return (a^-1, F) with a^-1 = F^T F and F = L^-1 for the Cholesky factor L of a."""
    chol_inv, info = lapack.dtrtri(_cholesky(a, what), lower=1)
    if info != 0:
        raise NotPositiveDefinite(f"{what} is singular")
    return chol_inv.T @ chol_inv, chol_inv


def _spd_inverse(a: np.ndarray, what: str = "matrix") -> np.ndarray:
    return _spd_inverse_factored(a, what)[0]


def init_states(n: int, m: int, alpha0: float = 1.0, theta0=None, P0=None) -> list[NodeState]:
    """Default start theta_{0,i} = 0, P_{0,i} = alpha0 I; both overridable per node.

    ``theta0`` may be one m-vector or an (n, m) array; ``P0`` one m x m matrix
    or an (n, m, m) array.
    """
    thetas = np.zeros((n, m)) if theta0 is None else np.broadcast_to(np.asarray(theta0, float), (n, m))
    ps = alpha0 * np.broadcast_to(np.eye(m), (n, m, m)) if P0 is None \
        else np.broadcast_to(np.asarray(P0, float), (n, m, m))
    states = []
    for i in range(n):
        p = symmetrize(np.array(ps[i]))
        states.append(NodeState(np.array(thetas[i]), p, symmetrize(_spd_inverse(p, f"P0 of node {i}"))))
    return states


def _check_finite(*arrays):
    for a in arrays:
        if not np.isfinite(a).all():
            raise NonFiniteInput("adapt step overflowed; regressor or measurement magnitude too large")


def adapt(state: NodeState, phi, y: float) -> AdaptOutput:
    phi = np.asarray(phi, dtype=float)
    if not (np.isfinite(phi).all() and math.isfinite(y)):
        raise NonFiniteInput("regressor or measurement is not finite")
    if phi.shape != state.theta.shape:
        raise DimensionMismatch(f"phi has shape {phi.shape}, estimate has {state.theta.shape}")
    # phi^T P phi as a squared norm of a factor, so never negative
    if state.P_factor is not None:
        v = state.P_factor @ phi
    else:
        v = _cholesky(state.P, "node covariance").T @ phi
    with np.errstate(over="ignore", invalid="ignore"):
        b = 1.0 / (1.0 + float(v @ v))
        p_phi = state.P @ phi
        theta_bar = state.theta + (b * (y - phi @ state.theta)) * p_phi
        # elementwise updates of symmetric inputs by symmetric outer products stay
        # exactly symmetric, so no explicit symmetrization is needed here
        p_bar = state.P - b * np.multiply.outer(p_phi, p_phi)
        pbar_inv = state.P_inv + np.multiply.outer(phi, phi)
    _check_finite(theta_bar, p_bar, pbar_inv)
    return AdaptOutput(theta_bar, p_bar, pbar_inv, b)


def combine(outputs: Sequence[AdaptOutput], weights) -> NodeState:
    """Covariance-intersection fusion of neighbor outputs with weights a_ji."""
    weights = np.asarray(weights, dtype=float)
    if len(outputs) != len(weights) or len(outputs) == 0:
        raise WeightSumInvalid(f"{len(weights)} weights for {len(outputs)} neighbor outputs")
    if not (weights > 0).all() or abs(math.fsum(weights) - 1.0) > WEIGHT_SUM_TOL:
        raise WeightSumInvalid(f"combine weights must be positive and sum to 1, got sum {weights.sum()!r}")
    if len(outputs) == 1:
        # identity combine: no re-inversion, so weights = I reproduces classical LS exactly
        out = outputs[0]
        return NodeState(out.theta_bar.copy(), out.P_bar.copy(), out.Pbar_inv.copy())
    first = outputs[0]
    p_inv = weights[0] * first.Pbar_inv
    info_vec = weights[0] * (first.Pbar_inv @ first.theta_bar)
    for a, out in zip(weights[1:], outputs[1:]):
        p_inv += a * out.Pbar_inv
        info_vec += a * (out.Pbar_inv @ out.theta_bar)
    # a weighted sum of symmetric matrices is exactly symmetric
    try:
        p, factor = _spd_inverse_factored(p_inv, "combined information")
    except NotPositiveDefinite as exc:
        raise SingularCombinedInformation(str(exc)) from exc
    # 1-norm reciprocal condition number, as LAPACK's pocon reports it
    rcond = 1.0 / (np.abs(p_inv).sum(axis=0).max() * np.abs(p).sum(axis=0).max())
    if not rcond > RCOND_LIMIT:
        raise SingularCombinedInformation(f"combined information has reciprocal condition {rcond:.3e}")
    p = symmetrize(p)
    return NodeState(theta=p @ info_vec, P=p, P_inv=p_inv, P_factor=factor)


def _as_adapt(state: NodeState) -> AdaptOutput:
    return AdaptOutput(state.theta, state.P, state.P_inv, 1.0)


def combine_network(outputs: Sequence[AdaptOutput], topology: NetworkTopology,
                    order: Sequence[int] | None = None) -> list[NodeState]:
    w = topology.weights
    n = topology.n
    result: list[NodeState | None] = [None] * n
    for i in (range(n) if order is None else order):
        nbrs = topology.in_neighbors[i]  # ascending: summation order is fixed
        result[i] = combine([outputs[j] for j in nbrs], w[nbrs, i])
    return result



def step_network(states: Sequence[NodeState], obs: Observation, topology: NetworkTopology,
                 combine_rounds: int = 1, order: Sequence[int] | None = None,
                 return_adapt: bool = False):
    """One iteration of the diffusion LS: adapt everywhere, then combine.

    Phase 2 only reads the phase-1 snapshot, so ``order`` (the node visiting
    order) cannot change the result.  With ``combine_rounds > 1`` the combine
    exchange is repeated on the already-combined (theta, P^-1) pairs.
    """
    if obs.phi.shape != (topology.n, states[0].theta.size):
        raise DimensionMismatch(f"observation phi has shape {obs.phi.shape}")
    idx = range(topology.n) if order is None else order
    adapted: list[AdaptOutput | None] = [None] * topology.n
    for i in idx:
        adapted[i] = adapt(states[i], obs.phi[i], obs.y[i])
    new = combine_network(adapted, topology, order)
    for _ in range(combine_rounds - 1):
        new = combine_network([_as_adapt(s) for s in new], topology, order)
    return (new, adapted) if return_adapt else new


def classical_step(states: Sequence[NodeState], obs: Observation) -> list[NodeState]:
    """Per-node recursive LS with no communication."""
    out = []
    for i, s in enumerate(states):
        a = adapt(s, obs.phi[i], obs.y[i])
        out.append(NodeState(a.theta_bar, a.P_bar, a.Pbar_inv))
    return out


@dataclass
class NetworkState:
    """All node states stacked: theta (..., n, m), P and P_inv (..., n, m, m).

    Leading axes are free (e.g. Monte-Carlo runs).  ``P_factor`` optionally
    caches F with P = F^T F.  The stacked steps below mirror
    :func:`step_network` and :func:`classical_step`, updating every node of
    every batch entry with a handful of array operations.
    """

    theta: np.ndarray
    P: np.ndarray
    P_inv: np.ndarray
    P_factor: np.ndarray | None = field(default=None, repr=False, compare=False)

    @classmethod
    def from_nodes(cls, states: Sequence[NodeState]) -> "NetworkState":
        return cls(np.array([s.theta for s in states]), np.array([s.P for s in states]),
                   np.array([s.P_inv for s in states]))

    def to_nodes(self, index=()) -> list[NodeState]:
        """Per-node states of one batch entry (``index`` into the leading axes)."""
        theta, p, p_inv = self.theta[index], self.P[index], self.P_inv[index]
        return [NodeState(theta[i].copy(), p[i].copy(), p_inv[i].copy()) for i in range(theta.shape[0])]


@dataclass
class AdaptStack:
    theta_bar: np.ndarray
    P_bar: np.ndarray
    Pbar_inv: np.ndarray
    b: np.ndarray

    def to_outputs(self, index=()) -> list[AdaptOutput]:
        b = self.b[index]
        return [AdaptOutput(self.theta_bar[index][i].copy(), self.P_bar[index][i].copy(),
                            self.Pbar_inv[index][i].copy(), float(b[i])) for i in range(b.shape[0])]


def adapt_stacked(state: NetworkState, phi, y) -> AdaptStack:
    phi = np.asarray(phi, dtype=float)
    y = np.asarray(y, dtype=float)
    if not (np.isfinite(phi).all() and np.isfinite(y).all()):
        raise NonFiniteInput("regressor or measurement is not finite")
    if phi.shape != state.theta.shape or y.shape != phi.shape[:-1]:
        raise DimensionMismatch(f"phi {phi.shape} and y {y.shape} do not fit estimates {state.theta.shape}")
    if state.P_factor is not None:
        v = np.einsum("...jk,...k->...j", state.P_factor, phi)
        quad = np.einsum("...j,...j->...", v, v)
    else:
        quad = np.maximum(np.einsum("...j,...jk,...k->...", phi, state.P, phi), 0.0)
    with np.errstate(over="ignore", invalid="ignore"):
        b = 1.0 / (1.0 + quad)
        p_phi = np.einsum("...jk,...k->...j", state.P, phi)
        resid = y - np.einsum("...j,...j->...", phi, state.theta)
        theta_bar = state.theta + (b * resid)[..., None] * p_phi
        p_bar = state.P - b[..., None, None] * (p_phi[..., :, None] * p_phi[..., None, :])
        pbar_inv = state.P_inv + phi[..., :, None] * phi[..., None, :]
    _check_finite(theta_bar, p_bar, pbar_inv)
    return AdaptStack(theta_bar, p_bar, pbar_inv, b)


def combine_stacked(adapted: AdaptStack, topology: NetworkTopology) -> NetworkState:
    """Covariance-intersection fusion for every node (and batch entry) at once."""
    w = topology.weights
    p_inv = np.einsum("ji,...jkl->...ikl", w, adapted.Pbar_inv)
    info_vec = np.einsum("ji,...jk->...ik", w, np.einsum("...jk,...k->...j", adapted.Pbar_inv, adapted.theta_bar))
    try:
        chol = np.linalg.cholesky(p_inv)
    except np.linalg.LinAlgError as exc:
        raise SingularCombinedInformation("combined information is not positive definite") from exc
    factor = np.linalg.inv(chol)
    p = np.einsum("...kj,...kl->...jl", factor, factor)
    p = 0.5 * (p + np.swapaxes(p, -1, -2))
    # 1-norm reciprocal condition number, as LAPACK's pocon reports it
    rcond = 1.0 / (np.abs(p_inv).sum(axis=-2).max(axis=-1) * np.abs(p).sum(axis=-2).max(axis=-1))
    if not (rcond > RCOND_LIMIT).all():
        where = np.unravel_index(int(np.argmin(rcond)), rcond.shape)
        raise SingularCombinedInformation(
            f"combined information at {tuple(int(x) for x in where)} has reciprocal condition {rcond.min():.3e}")
    theta = np.einsum("...jk,...k->...j", p, info_vec)
    solo = topology.solo_nodes
    if solo.size:
        # identity combine: keep the adapted values bit for bit
        theta[..., solo, :] = adapted.theta_bar[..., solo, :]
        p[..., solo, :, :] = adapted.P_bar[..., solo, :, :]
        p_inv[..., solo, :, :] = adapted.Pbar_inv[..., solo, :, :]
        factor = None
    return NetworkState(theta, p, p_inv, factor)


def step_network_stacked(state: NetworkState, phi, y, topology: NetworkTopology,
                         combine_rounds: int = 1) -> tuple[NetworkState, AdaptStack]:
    adapted = adapt_stacked(state, phi, y)
    new = combine_stacked(adapted, topology)
    for _ in range(combine_rounds - 1):
        new = combine_stacked(AdaptStack(new.theta, new.P, new.P_inv, np.ones(new.theta.shape[:-1])), topology)
    return new, adapted


def classical_step_stacked(state: NetworkState, phi, y) -> NetworkState:
    a = adapt_stacked(state, phi, y)
    return NetworkState(a.theta_bar, a.P_bar, a.Pbar_inv)


def centralized_step_stacked(theta: np.ndarray, P: np.ndarray, phi, y) -> tuple[np.ndarray, np.ndarray]:
    """:func:`centralized_step` over leading batch axes: theta (..., m), P (..., m, m), phi (..., n, m)."""
    phi = np.asarray(phi, dtype=float)
    y = np.asarray(y, dtype=float)
    if not (np.isfinite(phi).all() and np.isfinite(y).all()):
        raise NonFiniteInput("regressor or measurement is not finite")
    p_phi = np.einsum("...jk,...ik->...ji", P, phi)  # P Phi^c, (..., m, n)
    gain_inv = np.eye(phi.shape[-2]) + np.einsum("...ik,...kj->...ij", phi, p_phi)
    gain_inv = 0.5 * (gain_inv + np.swapaxes(gain_inv, -1, -2))
    try:
        np.linalg.cholesky(gain_inv)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite("I + Phi^T P Phi is not positive definite") from exc
    gain = np.linalg.inv(gain_inv)
    resid = y - np.einsum("...ik,...k->...i", phi, theta)
    theta = theta + np.einsum("...ki,...i->...k", p_phi, np.einsum("...ij,...j->...i", gain, resid))
    p = P - np.einsum("...ki,...ij,...lj->...kl", p_phi, gain, p_phi)
    return theta, 0.5 * (p + np.swapaxes(p, -1, -2))


def batch_ls(phis, ys, theta0, P0) -> np.ndarray:
    """Minimise sum (y_j - phi_j^T theta)^2 + (theta - theta0)^T P0^-1 (theta - theta0).

    Equals the recursive LS started at (theta0, P0) after the same samples.
    Samples may come from one node or be pooled across nodes.
    """
    theta0 = np.asarray(theta0, dtype=float)
    m = theta0.size
    phis = np.asarray(phis, dtype=float).reshape(-1, m)
    ys = np.asarray(ys, dtype=float).reshape(-1)
    if phis.shape[0] != ys.size:
        raise DimensionMismatch(f"{phis.shape[0]} regressors for {ys.size} measurements")
    if P0 is None:
        normal = phis.T @ phis
        rhs = phis.T @ ys
    else:
        p0_inv = _spd_inverse(np.asarray(P0, dtype=float), "P0")
        normal = p0_inv + phis.T @ phis
        rhs = p0_inv @ theta0 + phis.T @ ys
    try:
        chol = _cholesky(symmetrize(normal), "normal matrix")
    except NotPositiveDefinite as exc:
        raise SingularNormalEquations("normal equations are singular") from exc
    z = np.linalg.solve(chol, rhs)
    return np.linalg.solve(chol.T, z)


def centralized_init(m: int, alpha0: float = 1.0, theta0=None, P0=None) -> CentralizedState:
    theta = np.zeros(m) if theta0 is None else np.array(theta0, dtype=float)
    p = alpha0 * np.eye(m) if P0 is None else symmetrize(np.array(P0, dtype=float))
    return CentralizedState(theta, p)


def centralized_step(state: CentralizedState, obs: Observation) -> CentralizedState:
    """Fusion-center LS on all raw data: Phi^c stacks phi_{k,i} as columns."""
    phi_c = np.asarray(obs.phi, dtype=float).T
    y = np.asarray(obs.y, dtype=float)
    if not (np.all(np.isfinite(phi_c)) and np.all(np.isfinite(y))):
        raise NonFiniteInput("regressor or measurement is not finite")
    if phi_c.shape[0] != state.theta.size:
        raise DimensionMismatch(f"phi dimension {phi_c.shape[0]} != {state.theta.size}")
    p_phi = state.P @ phi_c
    gain_inv = np.eye(phi_c.shape[1]) + phi_c.T @ p_phi
    b = _spd_inverse(symmetrize(gain_inv), "I + Phi^T P Phi")
    theta = state.theta + p_phi @ (b @ (y - phi_c.T @ state.theta))
    p = symmetrize(state.P - p_phi @ b @ p_phi.T)
    return CentralizedState(theta, p)


def error_recursion_residual(theta_true, prev: Sequence[NodeState], adapted: Sequence[AdaptOutput],
                             new: Sequence[NodeState], obs: Observation, topology: NetworkTopology) -> float:
    """Norm of  E_{k+1} - [P_{k+1} A P_k^-1 E_k - P_{k+1} A Pbar_{k+1}^-1 c_k P_k Phi_k W_{k+1}]

    for the stacked error E_k = col(theta - theta_{k,i}) and A = weights (x) I_m.
    Only meaningful for a single combine round.
    """
    theta_true = np.asarray(theta_true, dtype=float)
    n, m = topology.n, theta_true.size
    big_a = kron_weights(topology, m)
    err_k = np.concatenate([theta_true - s.theta for s in prev])
    err_k1 = np.concatenate([theta_true - s.theta for s in new])
    p_k1 = block_diag([s.P for s in new])
    p_k_inv = block_diag([s.P_inv for s in prev])
    pbar_inv = block_diag([a.Pbar_inv for a in adapted])
    # c_k P_k Phi_k W_{k+1} is block-wise b_{k,i} P_{k,i} phi_{k,i} w_{k+1,i}
    drive = np.concatenate([adapted[i].b * (prev[i].P @ obs.phi[i]) * obs.w[i] for i in range(n)])
    predicted = p_k1 @ big_a @ p_k_inv @ err_k - p_k1 @ big_a @ pbar_inv @ drive
    return float(np.linalg.norm(err_k1 - predicted))
