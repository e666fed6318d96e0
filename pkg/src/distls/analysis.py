"""Regret, excitation and Lyapunov diagnostics for distributed LS runs."""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import (
    DimensionMismatch,
    EmptyRecords,
    IncompleteHistory,
    MissingVarianceBound,
    NotPositiveDefinite,
)


@dataclass
class StepRecord:
    """Diagnostics for the transition k -> k+1.

    ``regret`` and ``sq_error`` use the estimates theta_{k,i} that predict
    y_{k+1,i}; ``V`` and ``logdet_Pinv_total`` are evaluated after the update.
    """

    k: int
    regret: np.ndarray
    sq_error: np.ndarray
    r_t: float
    lambda_min_coop: float
    V: float
    logdet_Pinv_total: float
    phiPphi_max: float

    @property
    def excitation_ratio(self) -> float:
        return float(np.log(self.r_t) / self.lambda_min_coop)


@dataclass(frozen=True)
class BoundConstants:
    sigma_w: float
    c: float
    a: float
    b: float

    def bound(self, mean_r_t: float) -> float:
        """a log(E r_t) + b."""
        return self.a * float(np.log(mean_r_t)) + self.b


def regret(phi, theta_true, theta_est) -> float:
    """(phi^T (theta - theta_est))^2: gap to the conditional-mean predictor."""
    phi = np.asarray(phi, dtype=float)
    diff = np.asarray(theta_true, dtype=float) - np.asarray(theta_est, dtype=float)
    if phi.shape != diff.shape:
        raise DimensionMismatch(f"phi {phi.shape} vs theta {diff.shape}")
    return float(phi @ diff) ** 2


def averaged_regret(records) -> float:
    """(1/(n t)) sum_{i} sum_{k=0..t} R_{k,i}.

    ``records`` is a sequence of :class:`StepRecord` or a (t+1, n) array of
    regrets for k = 0..t.  Needs t >= 1.
    """
    if len(records) and isinstance(records[0], StepRecord):
        regrets = np.array([r.regret for r in records], dtype=float)
    else:
        regrets = np.asarray(records, dtype=float)
    if regrets.ndim != 2 or regrets.shape[0] < 2:
        raise EmptyRecords("averaged regret needs regrets for k = 0..t with t >= 1")
    t, n = regrets.shape[0] - 1, regrets.shape[1]
    return float(regrets.sum() / (n * t))


def _lambda_max_initial(p0_invs) -> float:
    return max(float(np.linalg.eigvalsh(p)[-1]) for p in p0_invs)


def excitation_stats(phi_history, p0_invs: Sequence[np.ndarray], topology, t: int) -> tuple[float, float]:
    """Return (r_t, lambda_min^{n,t}) from the regressor history.

    r_t = lambda_max{P_0^-1} + sum_i sum_{k<=t} |phi_{k,i}|^2 and lambda_min^{n,t}
    is the smallest eigenvalue of sum_j P_{0,j}^-1 plus the pooled outer
    products for k <= t - D + 1 (D the graph diameter).
    """
    phis = np.asarray(phi_history, dtype=float)
    if phis.ndim != 3 or phis.shape[0] < t + 1:
        raise IncompleteHistory(f"need regressors for k = 0..{t}, have {phis.shape[0] if phis.ndim == 3 else 0}")
    diameter = getattr(topology, "diameter", topology)
    r_t = _lambda_max_initial(p0_invs) + float(np.sum(phis[: t + 1] ** 2))
    info = np.sum(np.asarray(p0_invs, dtype=float), axis=0)
    last = t - diameter + 1
    if last >= 0:
        flat = phis[: last + 1].reshape(-1, phis.shape[2])
        info = info + flat.T @ flat
    return r_t, float(np.linalg.eigvalsh(info)[0])


class ExcitationTracker:
    """Streaming version of :func:`excitation_stats` (O(D m^2) memory).

    With ``batch > 0`` it tracks that many independent runs at once and
    :meth:`update` takes (batch, n, m) regressors and returns arrays.
    """

    def __init__(self, p0_invs: Sequence[np.ndarray], diameter: int, batch: int = 0):
        shape = (batch,) if batch else ()
        self.r_t = np.full(shape, _lambda_max_initial(p0_invs))
        info = np.sum(np.asarray(p0_invs, dtype=float), axis=0)
        self.info = np.broadcast_to(info, shape + info.shape).copy()
        self.diameter = int(diameter)
        self.batch = batch
        self._pending: deque[np.ndarray] = deque()

    def update(self, phi: np.ndarray):
        """Add the regressors of the next time step; return (r_t, lambda_min)."""
        phi = np.asarray(phi, dtype=float)
        self.r_t = self.r_t + np.einsum("...ij,...ij->...", phi, phi)
        self._pending.append(np.einsum("...ik,...il->...kl", phi, phi))
        while len(self._pending) > self.diameter - 1:
            self.info += self._pending.popleft()
        lam = np.linalg.eigvalsh(self.info)[..., 0]
        if not self.batch:
            return float(self.r_t), float(lam)
        return self.r_t.copy(), lam


def lyapunov_value(states, theta_true) -> float:
    """sum_i (theta - theta_i)^T P_i^-1 (theta - theta_i)."""
    theta_true = np.asarray(theta_true, dtype=float)
    errs = theta_true - np.array([s.theta for s in states])
    if errs.shape[1:] != theta_true.shape:
        raise DimensionMismatch(f"state dimension {errs.shape[1:]} vs {theta_true.shape}")
    return float(np.einsum("ij,ijk,ik->", errs, np.array([s.P_inv for s in states]), errs))


def logdet_information(states) -> float:
    """sum_i log|P_i^-1|."""
    sign, values = np.linalg.slogdet(np.array([s.P_inv for s in states]))
    if np.any(sign <= 0):
        raise NotPositiveDefinite("an information matrix is not positive definite")
    return float(values.sum())


def phi_p_phi_max(states, phi) -> float:
    """|Phi^T P Phi| for the block-diagonal stack = max_i phi_i^T P_i phi_i."""
    phi = np.asarray(phi, dtype=float)
    return float(np.einsum("ij,ijk,ik->i", phi, np.array([s.P for s in states]), phi).max())


def bound_constants(noise, m: int, n: int, c: float, initial_lyapunov: float,
                    initial_logdet: float, sigma_bar: float | None = None) -> BoundConstants:
    """Constants of the finite-time expected-regret bound.

    a = (1+c) m n sigma_bar,
    b = (1+c) {E[V_0] - sigma_bar E[log|P_0^-1|]},
    where ``initial_lyapunov`` and ``initial_logdet`` are those expectations
    (Monte-Carlo means when random) and sigma_bar >= sigma_w = sum_i sigma_i^2.
    """
    if not noise:
        if sigma_bar is None:
            raise MissingVarianceBound("need noise specs or an explicit sigma_bar")
        sigma_w = float(sigma_bar)
    else:
        sigma_w = float(sum(spec.variance_bound for spec in noise))
    sigma_bar = sigma_w if sigma_bar is None else float(sigma_bar)
    if sigma_bar < sigma_w:
        raise MissingVarianceBound(f"sigma_bar={sigma_bar} is below sigma_w={sigma_w}")
    a = (1.0 + c) * m * n * sigma_bar
    b = (1.0 + c) * (float(initial_lyapunov) - sigma_bar * float(initial_logdet))
    return BoundConstants(sigma_w=sigma_w, c=float(c), a=a, b=b)
