"""Experiment configuration: a TOML file parsed into :class:`ExperimentConfig`.

Grammar (all tables optional unless noted)::

    name = "cooperative_arx"
    horizon = 200            # T >= 0
    runs = 100               # R >= 1
    base_seed = 0
    algorithms = ["distributed", "classical_per_node"]
    combine_rounds = 1
    record_cadence = 1       # default 1 if T <= 1000, else 10

    [topology]               # required: exactly one of weights / csv
    weights = [["2/3", "1/3", 0], ...]   # numbers or exact ratios as strings
    csv = "weights.csv"                  # relative to the config file

    [scenario]               # required
    kind = "arx_cooperative" # or "iid_gaussian", "replayed"
    n = 3
    theta = [0.2, 0.5, ...]
    noise = { kind = "gaussian", variance = 0.1 }   # or an array of n tables
    [scenario.arx]           # mask[j][i]: input j drives node i
    mask = [[1, 1, 0], ...]
    input_std = 1.0
    [scenario.iid]
    covariance = [[...]]     # default identity
    [scenario.replay]
    file = "stream.csv"

    [init]                   # defaults: theta_0 = 0, P_0 = alpha0 * I
    alpha0 = 1.0
    theta0 = [...]           # one vector or one per node
    P0 = [[...]]             # one matrix or one per node

    [output]
    dir = "runs/cooperative_arx"   # relative to the working directory
    plots = true
    trajectory = false
    full_matrices = false
    workers = 1
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from ..errors import ConfigInvalid, CrossFieldMismatch, DistLSError, ParseError
from ..graph import NetworkTopology, build_topology, load_weights_csv, parse_real
from ..model import (
    ArxCooperative,
    IidGaussianRegressors,
    NoiseSpec,
    Replayed,
    Scenario,
    load_replay,
)
from .simulate import ALGORITHMS, InitSpec


@dataclass(frozen=True)
class OutputSpec:
    dir: Path = Path("runs/out")
    plots: bool = True
    trajectory: bool = False
    full_matrices: bool = False
    workers: int = 1


@dataclass(frozen=True)
class ExperimentConfig:
    name: str
    topology: NetworkTopology
    scenario: Scenario
    horizon: int
    runs: int = 1
    base_seed: int = 0
    algorithms: tuple[str, ...] = ("distributed",)
    combine_rounds: int = 1
    record_cadence: int | None = None
    init: InitSpec | None = None
    output: OutputSpec = field(default_factory=OutputSpec)

    def __post_init__(self):
        if self.horizon < 0:
            raise ConfigInvalid(f"horizon must be >= 0, got {self.horizon}")
        if self.runs < 1:
            raise ConfigInvalid(f"runs must be >= 1, got {self.runs}")
        if not self.algorithms:
            raise ConfigInvalid("algorithms must not be empty")
        unknown = [a for a in self.algorithms if a not in ALGORITHMS]
        if unknown:
            raise ConfigInvalid(f"unknown algorithms {unknown}; choose from {list(ALGORITHMS)}")
        if len(set(self.algorithms)) != len(self.algorithms):
            raise ConfigInvalid(f"duplicate algorithms in {list(self.algorithms)}")
        if self.combine_rounds < 1:
            raise ConfigInvalid(f"combine_rounds must be >= 1, got {self.combine_rounds}")
        if self.record_cadence is None:
            object.__setattr__(self, "record_cadence", 1 if self.horizon <= 1000 else 10)
        if self.record_cadence < 1:
            raise ConfigInvalid(f"record_cadence must be >= 1, got {self.record_cadence}")
        if self.output.workers < 1:
            raise ConfigInvalid(f"output.workers must be >= 1, got {self.output.workers}")
        if self.topology.n != self.scenario.n:
            raise CrossFieldMismatch("topology.weights", "scenario.n",
                                     f"{self.topology.n} nodes vs n={self.scenario.n}")
        n, m = self.scenario.n, self.scenario.m
        if self.init is None:
            object.__setattr__(self, "init", InitSpec.default(n, m))
        elif self.init.theta0.shape != (n, m) or self.init.P0.shape != (n, m, m):
            raise CrossFieldMismatch("init", "scenario", f"initial conditions do not fit n={n}, m={m}")

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)


def _get(table: dict, key: str, where: str, kind, default: Any = ...):
    if key not in table:
        if default is ...:
            raise ParseError(f"{where}.{key}: missing required key" if where else f"{key}: missing required key")
        return default
    value = table[key]
    ok = isinstance(value, kind) and not (kind is not bool and isinstance(value, bool))
    if kind is float and isinstance(value, int) and not isinstance(value, bool):
        ok = True
    if not ok:
        loc = f"{where}.{key}" if where else key
        raise ParseError(f"{loc}: expected {getattr(kind, '__name__', kind)}, got {type(value).__name__}")
    return value


def _real_array(value, loc: str, ndim: int) -> np.ndarray:
    try:
        arr = np.array(_map_reals(value), dtype=float)
    except (ValueError, ZeroDivisionError, TypeError) as exc:
        raise ParseError(f"{loc}: cannot read numbers ({exc})") from exc
    if arr.ndim != ndim:
        raise ParseError(f"{loc}: expected a {ndim}-d array, got shape {arr.shape}")
    return arr


def _map_reals(value):
    if isinstance(value, list):
        return [_map_reals(v) for v in value]
    if isinstance(value, bool):
        raise ValueError("booleans are not numbers")
    return parse_real(value)


def _noise(value, n: int) -> tuple[NoiseSpec, ...]:
    tables = value if isinstance(value, list) else [value] * n
    if len(tables) != n:
        raise CrossFieldMismatch("scenario.noise", "scenario.n", f"{len(tables)} noise tables for n={n}")
    specs = []
    for idx, table in enumerate(tables):
        loc = f"scenario.noise[{idx}]" if isinstance(value, list) else "scenario.noise"
        if not isinstance(table, dict):
            raise ParseError(f"{loc}: expected a table")
        extra = set(table) - {"kind", "variance", "half_width", "dof", "scale"}
        if extra:
            raise ParseError(f"{loc}: unknown keys {sorted(extra)}")
        try:
            specs.append(NoiseSpec(**{k: (float(v) if k != "kind" else v) for k, v in table.items()}))
        except (TypeError, ValueError) as exc:
            raise ConfigInvalid(f"{loc}: {exc}") from exc
    return tuple(specs)


def _topology(raw: dict, base: Path) -> NetworkTopology:
    if not isinstance(raw, dict):
        raise ParseError("topology: expected a table")
    has_w, has_csv = "weights" in raw, "csv" in raw
    if has_w == has_csv:
        raise ParseError("topology: give exactly one of 'weights' or 'csv'")
    if has_w:
        weights = _real_array(raw["weights"], "topology.weights", 2)
    else:
        path = base / _get(raw, "csv", "topology", str)
        try:
            weights = load_weights_csv(path)
        except OSError as exc:
            raise ConfigInvalid(f"topology.csv: cannot read {path}: {exc}") from exc
        except (ValueError, ZeroDivisionError) as exc:
            raise ParseError(f"topology.csv: {path}: {exc}") from exc
    try:
        return build_topology(weights)
    except DistLSError as exc:
        raise ConfigInvalid(f"topology.weights: {exc}") from exc


def _scenario(raw: dict, base: Path) -> Scenario:
    if not isinstance(raw, dict):
        raise ParseError("scenario: expected a table")
    kind = _get(raw, "kind", "scenario", str)
    n = _get(raw, "n", "scenario", int)
    if n < 1:
        raise ConfigInvalid(f"scenario.n must be >= 1, got {n}")
    theta = _real_array(_get(raw, "theta", "scenario", list), "scenario.theta", 1)
    noise = _noise(_get(raw, "noise", "scenario", (dict, list), {"kind": "gaussian", "variance": 1.0}), n)
    m = theta.size

    if kind == "arx_cooperative":
        arx = _get(raw, "arx", "scenario", dict)
        mask = _real_array(_get(arx, "mask", "scenario.arx", list), "scenario.arx.mask", 2)
        if not np.isin(mask, (0.0, 1.0)).all():
            raise ConfigInvalid("scenario.arx.mask: entries must be 0 or 1")
        if mask.shape != (n, n):
            raise CrossFieldMismatch("scenario.arx.mask", "scenario.n", f"mask shape {mask.shape} for n={n}")
        layout = 1 + int(mask.sum())
        if layout != m:
            raise CrossFieldMismatch("scenario.theta", "scenario.arx.mask",
                                     f"theta has length {m}, the mask lays out {layout} parameters")
        regressors = ArxCooperative(mask=mask.astype(bool),
                                    input_std=float(_get(arx, "input_std", "scenario.arx", float, 1.0)))
    elif kind == "iid_gaussian":
        iid = _get(raw, "iid", "scenario", dict, {})
        if "covariance" in iid:
            cov = _real_array(iid["covariance"], "scenario.iid.covariance", 2)
        else:
            cov = np.eye(m)
        if cov.shape != (m, m):
            raise CrossFieldMismatch("scenario.theta", "scenario.iid.covariance",
                                     f"theta has length {m}, covariance is {cov.shape}")
        if not np.allclose(cov, cov.T) or np.linalg.eigvalsh(cov)[0] < -1e-12:
            raise ConfigInvalid("scenario.iid.covariance: must be symmetric positive semidefinite")
        regressors = IidGaussianRegressors(cov)
    elif kind == "replayed":
        rep = _get(raw, "replay", "scenario", dict)
        path = base / _get(rep, "file", "scenario.replay", str)
        try:
            regressors = load_replay(path)
        except OSError as exc:
            raise ConfigInvalid(f"scenario.replay.file: cannot read {path}: {exc}") from exc
        except (ValueError, DistLSError) as exc:
            raise ParseError(f"scenario.replay.file: {path}: {exc}") from exc
        if regressors.phi.shape[1:] != (n, m):
            raise CrossFieldMismatch("scenario.replay.file", "scenario.theta",
                                     f"replay regressors are {regressors.phi.shape[1:]}, expected ({n}, {m})")
    else:
        raise ConfigInvalid(f"scenario.kind: unknown kind {kind!r}")
    try:
        return Scenario(theta=theta, regressors=regressors, noise=noise, n=n, m=m)
    except DistLSError as exc:
        raise ConfigInvalid(f"scenario: {exc}") from exc


def _init(raw: dict, n: int, m: int) -> InitSpec:
    if not isinstance(raw, dict):
        raise ParseError("init: expected a table")
    alpha0 = float(_get(raw, "alpha0", "init", float, 1.0))
    if not alpha0 > 0:
        raise ConfigInvalid(f"init.alpha0 must be > 0, got {alpha0}")
    spec = InitSpec.default(n, m, alpha0)
    theta0, p0 = spec.theta0, spec.P0
    if "theta0" in raw:
        t = np.array(_map_reals(raw["theta0"]), dtype=float)
        if t.shape == (m,):
            t = np.broadcast_to(t, (n, m))
        if t.shape != (n, m):
            raise CrossFieldMismatch("init.theta0", "scenario.theta", f"shape {t.shape} for n={n}, m={m}")
        theta0 = np.array(t)
    if "P0" in raw:
        p = np.array(_map_reals(raw["P0"]), dtype=float)
        if p.shape == (m, m):
            p = np.broadcast_to(p, (n, m, m))
        if p.shape != (n, m, m):
            raise CrossFieldMismatch("init.P0", "scenario.theta", f"shape {p.shape} for n={n}, m={m}")
        for i, block in enumerate(p):
            if not np.allclose(block, block.T) or np.linalg.eigvalsh(block)[0] <= 0:
                raise ConfigInvalid(f"init.P0[{i}] must be symmetric positive definite")
        p0 = np.array(p)
    return InitSpec(theta0, p0)


def _output(raw: dict, name: str) -> OutputSpec:
    if not isinstance(raw, dict):
        raise ParseError("output: expected a table")
    return OutputSpec(
        dir=Path(_get(raw, "dir", "output", str, f"runs/{name}")),
        plots=_get(raw, "plots", "output", bool, True),
        trajectory=_get(raw, "trajectory", "output", bool, False),
        full_matrices=_get(raw, "full_matrices", "output", bool, False),
        workers=_get(raw, "workers", "output", int, 1),
    )


_TOP_KEYS = {"name", "horizon", "runs", "base_seed", "algorithms", "combine_rounds", "record_cadence",
             "topology", "scenario", "init", "output"}


def config_from_dict(raw: dict, base: Path | str = ".") -> ExperimentConfig:
    base = Path(base)
    extra = set(raw) - _TOP_KEYS
    if extra:
        raise ParseError(f"unknown top-level keys {sorted(extra)}")
    name = _get(raw, "name", "", str, "experiment")
    topology = _topology(_get(raw, "topology", "", dict), base)
    scenario = _scenario(_get(raw, "scenario", "", dict), base)
    if topology.n != scenario.n:
        raise CrossFieldMismatch("topology.weights", "scenario.n", f"{topology.n} nodes vs n={scenario.n}")
    algorithms = _get(raw, "algorithms", "", list, ["distributed"])
    if not all(isinstance(a, str) for a in algorithms):
        raise ParseError("algorithms: expected a list of strings")
    return ExperimentConfig(
        name=name,
        topology=topology,
        scenario=scenario,
        horizon=_get(raw, "horizon", "", int),
        runs=_get(raw, "runs", "", int, 1),
        base_seed=_get(raw, "base_seed", "", int, 0),
        algorithms=tuple(algorithms),
        combine_rounds=_get(raw, "combine_rounds", "", int, 1),
        record_cadence=_get(raw, "record_cadence", "", int, None),
        init=_init(_get(raw, "init", "", dict, {}), scenario.n, scenario.m),
        output=_output(_get(raw, "output", "", dict, {}), name),
    )


def validate_config(path) -> ExperimentConfig:
    """Parse, cross-check and fill defaults; raises ParseError / CrossFieldMismatch / ConfigInvalid."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigInvalid(f"{path}: cannot read config: {exc}") from exc
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        # the decoder message carries "(at line L, column C)"
        raise ParseError(f"{path}: {exc}") from exc
    try:
        return config_from_dict(raw, base=path.parent)
    except ParseError as exc:
        raise ParseError(f"{path}: {exc}") from exc
