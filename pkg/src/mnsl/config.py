"""Experiment configuration: JSON parameter groups per subcommand, strict validation."""
from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Optional

from .families import ConstraintError, FamilySpec

COMMANDS = ("verify", "lattice", "flow", "solve", "sphere-heat", "oracle")
COMMON_KEYS = ("master_seed", "threads", "out")


class ConfigError(ValueError):
    def __init__(self, errors: list[str]):
        self.errors = list(errors)
        super().__init__("invalid configuration:\n  - " + "\n  - ".join(self.errors))


@dataclass(frozen=True)
class VerifyParams:
    family: dict = field(default_factory=lambda: {"kind": "SphereGradient", "n": 2})
    points: int = 500
    tol: float = 1e-12
    defect_tol: float = 1e-10
    hodge_tol: float = 2e-2

    def validate(self) -> list[str]:
        errs = []
        try:
            FamilySpec.from_dict(self.family)
        except (ConstraintError, KeyError, TypeError, ValueError) as e:
            errs.append(f"verify.family: {e}")
        if self.points < 1:
            errs.append("verify.points must be >= 1")
        return errs


@dataclass(frozen=True)
class LatticeParams:
    n: list = field(default_factory=lambda: [2])
    beta: list = field(default_factory=lambda: [3.0])
    K: list = field(default_factory=lambda: [1])

    def validate(self) -> list[str]:
        errs = []
        for n in self.n:
            for b in self.beta:
                if not b > n / 2:
                    errs.append(f"lattice: beta={b} must exceed n/2 for n={n}")
        if any(int(k) < 1 for k in self.K):
            errs.append("lattice.K entries must be >= 1")
        if any(int(n) < 1 for n in self.n):
            errs.append("lattice.n entries must be >= 1")
        return errs


FLOW_CASES = ("sphere-killing", "torus-taylor-green", "sphere-gradient")


@dataclass(frozen=True)
class FlowParams:
    case: str = "sphere-killing"
    nu: float = 0.05
    dt: float = 1e-3
    t_end: float = 1.0
    n_samples: int = 1
    grid: int = 32
    record_every: float = 0.1
    fd_points: int = 5
    fd_h: float = 1e-4
    fd_tol: float = 1e-5
    volume_tol: float = 1e-3
    density_tol: float = 2e-2
    dump: bool = True

    def validate(self) -> list[str]:
        errs = []
        if self.case not in FLOW_CASES:
            errs.append(f"flow.case must be one of {FLOW_CASES}, got {self.case!r}")
        if not (0 < self.dt <= self.t_end):
            errs.append("flow: need 0 < dt <= t_end")
        if self.nu < 0:
            errs.append("flow.nu must be >= 0")
        if self.n_samples < 1:
            errs.append("flow.n_samples must be >= 1")
        if self.grid < 2:
            errs.append("flow.grid must be >= 2")
        if not self.record_every > 0:
            errs.append("flow.record_every must be positive")
        return errs


SOLVE_CASES = ("taylor-green", "shear", "random", "zero")


@dataclass(frozen=True)
class SolveParams:
    case: str = "taylor-green"
    nu: float = 0.1
    t_end: float = 0.3
    M: int = 4
    G: int = 32
    n_samples: int = 2000
    dt: float = 1e-2
    node_dt: float = 0.05
    tol: float = 1e-3
    max_iter: int = 6
    chunk: int = 100
    u0_M: int = 3
    u0_seed: int = 2024
    rel_tol: float = 0.05
    max_iterations: int = 4
    oracle: bool = False
    oracle_M: int = 16
    oracle_dt: float = 1e-3
    oracle_rel_tol: float = 0.10

    def validate(self) -> list[str]:
        errs = []
        if self.case not in SOLVE_CASES:
            errs.append(f"solve.case must be one of {SOLVE_CASES}, got {self.case!r}")
        if self.nu < 0:
            errs.append("solve.nu must be >= 0")
        if self.M < 1 or self.u0_M < 1:
            errs.append("solve.M and solve.u0_M must be >= 1")
        if self.u0_M > self.M:
            errs.append("solve.u0_M must not exceed solve.M")
        if self.G < 2 * self.M + 2:
            errs.append(f"solve.G={self.G} aliases M={self.M}; need G >= 2M+2")
        if self.n_samples < 2:
            errs.append("solve.n_samples must be >= 2")
        if not (0 < self.dt <= self.node_dt <= self.t_end):
            errs.append("solve: need 0 < dt <= node_dt <= t_end")
        if self.max_iter < 1:
            errs.append("solve.max_iter must be >= 1")
        return errs


@dataclass(frozen=True)
class SphereHeatParams:
    nu: float = 0.05
    times: list = field(default_factory=lambda: [0.2, 0.4, 0.6, 0.8, 1.0])
    n_samples: int = 5000
    dt: float = 1e-3
    chunk: int = 250
    rel_tol: float = 0.05

    def validate(self) -> list[str]:
        errs = []
        if not self.nu > 0:
            errs.append("sphere-heat.nu must be positive")
        if not self.times or any(t <= 0 for t in self.times):
            errs.append("sphere-heat.times must be a non-empty list of positive times")
        if self.n_samples < 2:
            errs.append("sphere-heat.n_samples must be >= 2")
        if not self.dt > 0:
            errs.append("sphere-heat.dt must be positive")
        return errs


ORACLE_CASES = ("taylor-green", "shear", "random")


@dataclass(frozen=True)
class OracleParams:
    case: str = "taylor-green"
    nu: float = 0.1
    t_end: float = 0.5
    dt: float = 1e-3
    M: int = 10
    u0_M: int = 3
    u0_seed: int = 2024
    tol: float = 1e-8

    def validate(self) -> list[str]:
        errs = []
        if self.case not in ORACLE_CASES:
            errs.append(f"oracle.case must be one of {ORACLE_CASES}, got {self.case!r}")
        if not (0 < self.dt <= self.t_end):
            errs.append("oracle: need 0 < dt <= t_end")
        if self.M < 1:
            errs.append("oracle.M must be >= 1")
        return errs


PARAMS = {
    "verify": VerifyParams,
    "lattice": LatticeParams,
    "flow": FlowParams,
    "solve": SolveParams,
    "sphere-heat": SphereHeatParams,
    "oracle": OracleParams,
}


def _coerce(name: str, value: Any, default: Any, errors: list[str]):
    if isinstance(default, bool):
        if not isinstance(value, bool):
            errors.append(f"{name}: expected a boolean, got {value!r}")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            errors.append(f"{name}: expected an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            errors.append(f"{name}: expected a number, got {value!r}")
            return value
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            errors.append(f"{name}: expected a string, got {value!r}")
        return value
    if isinstance(default, list):
        if not isinstance(value, list):
            value = [value]
        return value
    if isinstance(default, dict):
        if not isinstance(value, dict):
            errors.append(f"{name}: expected an object, got {value!r}")
        return value
    return value


@dataclass(frozen=True)
class ExperimentConfig:
    command: str
    params: Any
    master_seed: int = 2024
    threads: int = 1
    out: Optional[str] = None

    def to_dict(self) -> dict:
        return {
            "master_seed": self.master_seed,
            "threads": self.threads,
            "out": self.out,
            self.command: dataclasses.asdict(self.params),
        }

    def numerical_dict(self) -> dict:
        """Everything that influences numbers (threads and out excluded)."""
        return {"command": self.command, "master_seed": self.master_seed, "params": dataclasses.asdict(self.params)}

    @classmethod
    def from_dict(cls, command: str, data: dict) -> "ExperimentConfig":
        errors: list[str] = []
        if command not in COMMANDS:
            raise ConfigError([f"unknown command {command!r}; expected one of {COMMANDS}"])
        if not isinstance(data, dict):
            raise ConfigError(["configuration must be a JSON object"])
        allowed = set(COMMON_KEYS) | {command}
        for k in data:
            if k not in allowed:
                errors.append(f"unknown key {k!r} (allowed here: {sorted(allowed)})")
        group = data.get(command, {})
        if not isinstance(group, dict):
            errors.append(f"{command}: expected an object")
            group = {}
        ptype = PARAMS[command]
        defaults = ptype()
        names = {f.name for f in fields(ptype)}
        kwargs = {}
        for k, v in group.items():
            if k not in names:
                errors.append(f"unknown key {command}.{k!r} (allowed: {sorted(names)})")
                continue
            kwargs[k] = _coerce(f"{command}.{k}", v, getattr(defaults, k), errors)
        seed = data.get("master_seed", 2024)
        if isinstance(seed, bool) or not isinstance(seed, int) or seed < 0:
            errors.append(f"master_seed must be a non-negative integer, got {seed!r}")
        threads = data.get("threads", os.cpu_count() or 1)
        if isinstance(threads, bool) or not isinstance(threads, int) or threads < 1:
            errors.append(f"threads must be a positive integer, got {threads!r}")
        out = data.get("out")
        if out is not None and not isinstance(out, str):
            errors.append("out must be a string path")
        if errors:
            raise ConfigError(errors)
        try:
            params = ptype(**kwargs)
        except TypeError as e:  # pragma: no cover - guarded above
            raise ConfigError([str(e)])
        errors.extend(params.validate())
        if errors:
            raise ConfigError(errors)
        return cls(command, params, seed, threads, out)

    def with_overrides(self, master_seed=None, threads=None, out=None) -> "ExperimentConfig":
        return ExperimentConfig(
            self.command,
            self.params,
            self.master_seed if master_seed is None else int(master_seed),
            self.threads if threads is None else int(threads),
            self.out if out is None else str(out),
        )


def load_config(command: str, path) -> ExperimentConfig:
    p = Path(path)
    try:
        data = json.loads(p.read_text())
    except FileNotFoundError:
        raise ConfigError([f"config file not found: {p}"])
    except json.JSONDecodeError as e:
        raise ConfigError([f"{p}: invalid JSON ({e})"])
    return ExperimentConfig.from_dict(command, data)
