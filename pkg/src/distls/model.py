"""Observation processes y_{k+1,i} = phi_{k,i}^T theta + w_{k+1,i}.

Randomness: every node owns a Philox substream seeded from
``SeedSequence([seed, node])`` and consumes a fixed number of draws per step,
so streams are reproducible from ``(scenario, seed)`` and adding nodes leaves
the draws of existing nodes untouched.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Union

import numpy as np

from .errors import DimensionMismatch, IncompleteHistory


@dataclass(frozen=True)
class NoiseSpec:
    """Martingale-difference noise law with finite variance.

    kind is one of ``gaussian`` (``variance``), ``uniform`` (``half_width``)
    or ``student_t`` (``dof`` > 2, ``scale``).
    """

    kind: str = "gaussian"
    variance: float = 1.0
    half_width: float = 1.0
    dof: float = 5.0
    scale: float = 1.0

    def __post_init__(self):
        if self.kind == "gaussian":
            if not self.variance >= 0:
                raise ValueError(f"gaussian variance must be >= 0, got {self.variance}")
        elif self.kind == "uniform":
            if not self.half_width >= 0:
                raise ValueError(f"uniform half_width must be >= 0, got {self.half_width}")
        elif self.kind == "student_t":
            if not self.dof > 2:
                raise ValueError(f"student_t needs dof > 2 for a finite variance, got {self.dof}")
            if not self.scale >= 0:
                raise ValueError(f"student_t scale must be >= 0, got {self.scale}")
        else:
            raise ValueError(f"unknown noise kind {self.kind!r}")

    @property
    def variance_bound(self) -> float:
        """sigma_i^2: the (time-invariant) conditional variance."""
        if self.kind == "gaussian":
            return float(self.variance)
        if self.kind == "uniform":
            return self.half_width ** 2 / 3.0
        return self.scale ** 2 * self.dof / (self.dof - 2.0)

    def sample(self, rng: np.random.Generator) -> float:
        # exactly one underlying draw per call keeps substreams aligned
        if self.kind == "gaussian":
            return float(np.sqrt(self.variance) * rng.standard_normal())
        if self.kind == "uniform":
            return float(rng.uniform(-self.half_width, self.half_width))
        return float(self.scale * rng.standard_t(self.dof))


@dataclass(frozen=True)
class IidGaussianRegressors:
    covariance: np.ndarray

    @property
    def m(self) -> int:
        return self.covariance.shape[0]


@dataclass(frozen=True)
class ArxCooperative:
    """y_{k+1,i} = a y_{k,i} + sum_j b_ji u_{k,j} + w_{k+1,i}.

    ``mask[j, i]`` says whether input j drives node i.  The parameter vector is
    laid out as ``[a, b_ji for each node i (ascending), for each j in its
    column of the mask (ascending)]``, and node i's regressor carries zeros at
    every coordinate owned by the other nodes.
    """

    mask: np.ndarray
    input_std: float = 1.0

    @property
    def n(self) -> int:
        return self.mask.shape[0]

    @property
    def m(self) -> int:
        return 1 + int(self.mask.sum())

    def slots(self) -> list[list[tuple[int, int]]]:
        """Per node i, the (input j, theta position) pairs it observes."""
        out, pos = [], 1
        for i in range(self.n):
            node = []
            for j in np.flatnonzero(self.mask[:, i]):
                node.append((int(j), pos))
                pos += 1
            out.append(node)
        return out


@dataclass(frozen=True)
class Replayed:
    phi: np.ndarray  # (T, n, m)
    y: np.ndarray  # (T, n)
    source: str = ""


RegressorKind = Union[IidGaussianRegressors, ArxCooperative, Replayed]


@dataclass(frozen=True)
class Scenario:
    theta: np.ndarray
    regressors: RegressorKind
    noise: tuple[NoiseSpec, ...]
    n: int
    m: int

    def __post_init__(self):
        theta = np.asarray(self.theta, dtype=float)
        if theta.ndim != 1 or theta.size < 1 or not np.all(np.isfinite(theta)):
            raise DimensionMismatch("theta must be a finite non-empty vector")
        if theta.size != self.m:
            raise DimensionMismatch(f"theta has length {theta.size}, expected m={self.m}")
        if len(self.noise) != self.n:
            raise DimensionMismatch(f"{len(self.noise)} noise specs for n={self.n}")
        reg = self.regressors
        if isinstance(reg, IidGaussianRegressors) and reg.m != self.m:
            raise DimensionMismatch(f"regressor covariance is {reg.m}x{reg.m}, m={self.m}")
        if isinstance(reg, ArxCooperative) and (reg.n != self.n or reg.m != self.m):
            raise DimensionMismatch(f"ARX mask implies n={reg.n}, m={reg.m}; got n={self.n}, m={self.m}")
        if isinstance(reg, Replayed) and reg.phi.shape[1:] != (self.n, self.m):
            raise DimensionMismatch(f"replay phi has shape {reg.phi.shape}, expected (T, {self.n}, {self.m})")

    @property
    def sigma_w(self) -> float:
        return float(sum(spec.variance_bound for spec in self.noise))

    def structural_mask(self) -> np.ndarray:
        """(n, m) booleans: coordinates of phi_{k,i} that can be nonzero."""
        reg = self.regressors
        if isinstance(reg, ArxCooperative):
            mask = np.zeros((self.n, self.m), dtype=bool)
            mask[:, 0] = True
            for i, node in enumerate(reg.slots()):
                for _, pos in node:
                    mask[i, pos] = True
            return mask
        if isinstance(reg, Replayed):
            return np.any(reg.phi != 0, axis=0)
        return np.ones((self.n, self.m), dtype=bool)


@dataclass(frozen=True)
class Observation:
    phi: np.ndarray  # (n, m): phi_{k,i}
    y: np.ndarray  # (n,): y_{k+1,i}
    w: np.ndarray  # (n,): w_{k+1,i}


@dataclass
class GeneratorState:
    rngs: list
    y_prev: np.ndarray
    k: int = 0
    cov_factor: np.ndarray | None = field(default=None, repr=False)
    arx_slots: list | None = field(default=None, repr=False)


def node_rng(seed: int, node: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, node])))


def init_state(scenario: Scenario, seed: int) -> GeneratorState:
    factor = None
    if isinstance(scenario.regressors, IidGaussianRegressors):
        cov = np.asarray(scenario.regressors.covariance, dtype=float)
        vals, vecs = np.linalg.eigh(cov)
        factor = vecs * np.sqrt(np.clip(vals, 0.0, None))
    slots = scenario.regressors.slots() if isinstance(scenario.regressors, ArxCooperative) else None
    return GeneratorState(
        rngs=[node_rng(seed, i) for i in range(scenario.n)],
        y_prev=np.zeros(scenario.n),
        cov_factor=factor,
        arx_slots=slots,
    )


def generate_step(scenario: Scenario, state: GeneratorState, k: int | None = None) -> Observation:
    """Draw phi_k and y_{k+1} for every node and advance ``state``."""
    k = state.k if k is None else k
    if k != state.k:
        raise DimensionMismatch(f"generator is at step {state.k}, asked for step {k}")
    n, m = scenario.n, scenario.m
    theta = np.asarray(scenario.theta, dtype=float)
    reg = scenario.regressors
    phi = np.zeros((n, m))

    if isinstance(reg, Replayed):
        if k >= reg.phi.shape[0]:
            raise IncompleteHistory(f"replay holds {reg.phi.shape[0]} steps, asked for step {k}")
        phi = reg.phi[k].copy()
        y = reg.y[k].copy()
        w = y - phi @ theta
    else:
        w = np.empty(n)
        if isinstance(reg, IidGaussianRegressors):
            for i, rng in enumerate(state.rngs):
                phi[i] = state.cov_factor @ rng.standard_normal(m)
                w[i] = scenario.noise[i].sample(rng)
        else:
            u = np.empty(n)
            for j, rng in enumerate(state.rngs):
                u[j] = reg.input_std * rng.standard_normal()
                w[j] = scenario.noise[j].sample(rng)
            phi[:, 0] = state.y_prev
            for i, node in enumerate(state.arx_slots):
                for j, pos in node:
                    phi[i, pos] = u[j]
        y = phi @ theta + w

    state.y_prev = y.copy()
    state.k = k + 1
    return Observation(phi=phi, y=y, w=w)


ARX_THETA = np.array([0.2, 0.5, 0.3, 0.2, 0.1, 1.2, 0.6, 1.5])
ARX_MASK = np.array([[1, 1, 0], [1, 1, 1], [0, 1, 1]], dtype=bool)


def arx_cooperative_scenario(noise_variance: float = 0.1, input_std: float = 1.0) -> Scenario:
    """Three agents with coupled inputs; no agent alone excites all 8 parameters."""
    reg = ArxCooperative(mask=ARX_MASK.copy(), input_std=input_std)
    return Scenario(
        theta=ARX_THETA.copy(),
        regressors=reg,
        noise=(NoiseSpec("gaussian", variance=noise_variance),) * 3,
        n=3,
        m=8,
    )


def iid_scenario(theta, n: int, covariance=None, noise: NoiseSpec | None = None) -> Scenario:
    theta = np.asarray(theta, dtype=float)
    m = theta.size
    cov = np.eye(m) if covariance is None else np.asarray(covariance, dtype=float)
    return Scenario(
        theta=theta,
        regressors=IidGaussianRegressors(cov),
        noise=(noise or NoiseSpec("gaussian", variance=1.0),) * n,
        n=n,
        m=m,
    )


def load_replay(path) -> Replayed:
    """Read a CSV with header ``k,i,phi_0..phi_{m-1},y``."""
    with open(Path(path), newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [[float(x) for x in row] for row in reader if row]
    phi_cols = [h for h in header if h.startswith("phi_")]
    if header[:2] != ["k", "i"] or header[-1] != "y" or len(phi_cols) != len(header) - 3:
        raise DimensionMismatch(f"unexpected replay header {header}")
    data = np.array(rows)
    ks = data[:, 0].astype(int)
    ids = data[:, 1].astype(int)
    t, n, m = ks.max() + 1, ids.max() + 1, len(phi_cols)
    if len(rows) != t * n:
        raise IncompleteHistory(f"replay has {len(rows)} rows, expected {t}x{n}")
    phi = np.zeros((t, n, m))
    y = np.zeros((t, n))
    phi[ks, ids] = data[:, 2:2 + m]
    y[ks, ids] = data[:, -1]
    return Replayed(phi=phi, y=y, source=str(path))


def write_replay(path, observations: list[Observation]) -> None:
    m = observations[0].phi.shape[1]
    with open(Path(path), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["k", "i"] + [f"phi_{c}" for c in range(m)] + ["y"])
        for k, obs in enumerate(observations):
            for i in range(obs.phi.shape[0]):
                writer.writerow([k, i] + [repr(float(v)) for v in obs.phi[i]] + [repr(float(obs.y[i]))])
