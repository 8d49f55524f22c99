"""Monte Carlo weak-pairing estimator, velocity reconstruction on T^2, Picard loop,
and the heat-decay demonstrator on S^2.

Pairings are computed as E int <u0(x), (dX_t(x))^{-1} v(X_t(x))> rho~_t(x) dx;
every flow sample is shared by all basis fields and all time nodes of one
iteration.  Per-sample values are kept and reduced with one ``np.sum`` over
the sample axis, so results do not depend on chunking or thread count.
"""
from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .families import build_sphere_killing_family
from .flow import (
    FlowConfig,
    InterpolatedDrift,
    NoiseModel,
    SpectralDrift,
    as_drift,
    integrate_batch,
    pullback_values,
    volume_defect_series,
)
from .geometry import TWO_PI, Manifold, Sphere, Torus, VectorField, divergence
from .quadrature import Quadrature, sphere_design, torus_grid
from .spectral import AREA, SpectralVelocity, half_modes, polarization


class PreconditionError(ValueError):
    pass


@dataclass(frozen=True)
class PairingEstimate:
    value: float
    std_error: float
    n_samples: int
    v_label: str = ""

    def __post_init__(self):
        if self.n_samples < 1:
            raise ValueError("n_samples must be >= 1")

    @classmethod
    def from_samples(cls, values: np.ndarray, label: str = "") -> "PairingEstimate":
        values = np.asarray(values, dtype=float)
        n = values.size
        mean = float(np.sum(values) / n)
        se = float(np.std(values, ddof=1) / math.sqrt(n)) if n > 1 else 0.0
        return cls(mean, se, n, label)


@dataclass(frozen=True)
class SolverConfig:
    """Discretisation and Monte Carlo parameters shared by the T^2 solver routines."""

    M: int = 4
    G: int = 32
    n_samples: int = 2000
    dt: float = 1e-2
    master_seed: int = 2024
    tol: float = 1e-3
    max_iter: int = 6
    node_dt: float = 0.05
    chunk: int = 100
    threads: int = 1
    volume_tol: float = 1e-3

    def __post_init__(self):
        errors = []
        if self.M < 1:
            errors.append("M must be >= 1")
        if self.G < 2 * self.M + 2:
            errors.append(f"G={self.G} < 2M+2 = {2 * self.M + 2}")
        if self.n_samples < 2:
            errors.append("n_samples must be >= 2")
        if not self.dt > 0:
            errors.append("dt must be positive")
        if self.max_iter < 1:
            errors.append("max_iter must be >= 1")
        if abs(self.node_dt / self.dt - round(self.node_dt / self.dt)) > 1e-9:
            errors.append(f"node_dt={self.node_dt} must be a multiple of dt={self.dt}")
        if self.chunk < 1 or self.threads < 1:
            errors.append("chunk and threads must be >= 1")
        if errors:
            raise ValueError("; ".join(errors))

    def to_dict(self) -> dict:
        return dict(self.__dict__)


# ---------------------------------------------------------------------------
# ensembles


def _chunks(n: int, size: int) -> list[range]:
    return [range(a, min(a + size, n)) for a in range(0, n, size)]


def _map_chunks(fn, n: int, size: int, threads: int) -> list:
    parts = _chunks(n, size)
    if threads <= 1 or len(parts) == 1:
        return [fn(p) for p in parts]
    with ThreadPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(fn, parts))


def _pullback_pairing(M: Manifold, x, X, J, logd, u0x, v_fn, weights) -> np.ndarray:
    """Per-sample int <u0, (X^{-1})_* v> rho~ dx for flow states with leading sample axis."""
    Xr = X if M.is_sphere else np.mod(X, TWO_PI)
    w = pullback_values(M, x, X, J, v_fn(Xr))
    dens = np.exp(logd)
    return (np.sum(u0x * w, axis=-1) * dens) @ weights


def estimate_pairing(
    u0: VectorField,
    drift,
    noise: Optional[NoiseModel],
    v: VectorField,
    t: float,
    cfg: SolverConfig,
    quad: Optional[Quadrature] = None,
    check_divfree: bool = True,
) -> PairingEstimate:
    """Monte Carlo estimate of int <u_t, v> dx for a divergence-free v."""
    M = v.manifold
    quad = quad or (sphere_design() if M.is_sphere else torus_grid(cfg.G, M.dim))
    x = quad.nodes
    if check_divfree:
        d = float(np.max(np.abs(divergence(v, x))))
        if d > 1e-10:
            raise PreconditionError(f"test field {v.label or '<anon>'} has divergence {d:.3e} > 1e-10")
    u0x = u0(x)
    if t == 0:
        val = float(np.sum(u0x * v(x), axis=-1) @ quad.weights)
        return PairingEstimate(val, 0.0, cfg.n_samples, v.label)
    fcfg = FlowConfig(cfg.dt, t, cfg.master_seed, cfg.n_samples)

    def run(idx):
        rec = integrate_batch(fcfg, drift, noise, x, idx)
        return _pullback_pairing(M, x, rec.X[:, -1], rec.J[:, -1], rec.logd[:, -1], u0x, v, quad.weights)

    vals = np.concatenate(_map_chunks(run, cfg.n_samples, cfg.chunk, cfg.threads))
    return PairingEstimate.from_samples(vals, v.label)


# ---------------------------------------------------------------------------
# reconstruction on T^2


@dataclass
class Reconstruction:
    """Estimated u(t_j) at several time nodes with per-mode standard errors."""

    times: np.ndarray
    M: int
    c_mean: np.ndarray  # (R, H) complex, c_k = <u_k, e_k> on half_modes order
    se_re: np.ndarray  # (R, H)
    se_im: np.ndarray
    n_samples: int
    volume_defect: float
    samples: Optional[np.ndarray] = None  # (N, R, H) complex when kept

    def velocity(self, r: int = -1) -> SpectralVelocity:
        return SpectralVelocity.from_half(self.M, self.c_mean[r])

    def velocities(self) -> list[SpectralVelocity]:
        return [self.velocity(r) for r in range(len(self.times))]

    def mode_std_error(self, r: int = -1) -> np.ndarray:
        return np.hypot(self.se_re[r], self.se_im[r])

    def aggregate_std_error(self, r: int = -1) -> float:
        """Standard error of the L^2 norm of the estimate: sqrt(8 pi^2 sum (se_re^2 + se_im^2))."""
        return float(math.sqrt(2.0 * AREA * np.sum(self.se_re[r] ** 2 + self.se_im[r] ** 2)))


def _phase_tables(X: np.ndarray, M: int):
    # e^{-i k1 X1} for k1 = 0..M and e^{-i k2 X2} for k2 = -M..M
    e1 = np.exp(-1j * X[..., 0])
    e2 = np.exp(-1j * X[..., 1])
    p1 = np.stack([e1**j for j in range(M + 1)], axis=-1)
    p2 = np.stack([e2**j for j in range(-M, M + 1)], axis=-1)
    return p1, p2


def _mode_coefficients(x, X, J, u0x, M: int) -> np.ndarray:
    """Per-sample c_k = (1/4 pi^2) int <J^{-T} u0, e_k> e^{-i k.X} dx on half modes, shape (..., H)."""
    if X.ndim == 4:
        return np.stack([_mode_coefficients(x, X[:, r], J[:, r], u0x, M) for r in range(X.shape[1])], axis=1)
    hm = half_modes(M)
    e = polarization(hm)
    a, b, c, d = J[..., 0, 0], J[..., 0, 1], J[..., 1, 0], J[..., 1, 1]
    det = a * d - b * c
    # J^{-T} u0 for J = [[a, b], [c, d]]
    w0 = (d * u0x[..., 0] - c * u0x[..., 1]) / det
    w1 = (-b * u0x[..., 0] + a * u0x[..., 1]) / det
    proj = w0[..., None] * e[:, 0] + w1[..., None] * e[:, 1]
    p1, p2 = _phase_tables(X, M)
    phase = p1[..., hm[:, 0]] * p2[..., hm[:, 1] + M]
    P = x.shape[0]
    return np.sum(proj * phase, axis=-2) / P


def reconstruct_nodes(
    u0: SpectralVelocity,
    drift,
    noise: NoiseModel,
    times: Sequence[float],
    cfg: SolverConfig,
    keep_samples: bool = False,
) -> Reconstruction:
    """Reconstruct u(t_j) at all node times from one flow per sample."""
    times = np.asarray(list(times), dtype=float)
    quad = torus_grid(cfg.G, 2)
    x = quad.nodes
    field = u0.as_field()
    u0x = field(x)
    t_end = float(times.max())
    if t_end == 0.0:
        c0 = _mode_coefficients(x, np.broadcast_to(x, x.shape), np.broadcast_to(np.eye(2), x.shape + (2,)), u0x, cfg.M)
        c = np.broadcast_to(c0, (len(times),) + c0.shape).copy()
        z = np.zeros(c.shape)
        return Reconstruction(times, cfg.M, c, z, z.copy(), cfg.n_samples, 0.0)
    fcfg = FlowConfig(cfg.dt, t_end, cfg.master_seed, cfg.n_samples)

    def run(idx):
        rec = integrate_batch(fcfg, drift, noise, x, idx, record_times=times)
        vd = float(np.max(volume_defect_series(rec)))
        return _mode_coefficients(x, rec.X, rec.J, u0x, cfg.M), vd

    parts = _map_chunks(run, cfg.n_samples, cfg.chunk, cfg.threads)
    vals = np.concatenate([p[0] for p in parts], axis=0)  # (N, R, H)
    vd = max(p[1] for p in parts)
    n = vals.shape[0]
    mean = np.sum(vals, axis=0) / n
    se_re = np.std(vals.real, axis=0, ddof=1) / math.sqrt(n)
    se_im = np.std(vals.imag, axis=0, ddof=1) / math.sqrt(n)
    # the u0 = 0 case has exactly zero spread; keep it exact
    return Reconstruction(times, cfg.M, mean, se_re, se_im, n, vd, vals if keep_samples else None)


def reconstruct_velocity(
    u0: SpectralVelocity, drift, noise: NoiseModel, t: float, M: int, cfg: SolverConfig
) -> tuple[SpectralVelocity, Reconstruction]:
    """u_t on |k|_inf <= M from pairings against the solenoidal Fourier basis."""
    c = SolverConfig(**{**cfg.to_dict(), "M": M, "G": max(cfg.G, 2 * M + 2)})
    rec = reconstruct_nodes(u0, drift, noise, [t], c)
    return rec.velocity(-1), rec


# ---------------------------------------------------------------------------
# Picard iteration


@dataclass
class PicardState:
    iteration: int
    times: np.ndarray
    u_current: list
    delta: float
    deltas: list
    noise_floors: list
    converged: bool
    diverged: bool
    config: SolverConfig
    history: list = field(default_factory=list)
    volume_defect: float = 0.0

    def u_at(self, t: float) -> SpectralVelocity:
        return InterpolatedDrift(self.times, self.u_current).velocity(t)

    @property
    def final(self) -> SpectralVelocity:
        return self.u_current[-1]

    def to_dict(self) -> dict:
        return {
            "iteration": self.iteration,
            "converged": self.converged,
            "diverged": self.diverged,
            "delta": self.delta,
            "deltas": [float(d) for d in self.deltas],
            "noise_floors": [float(d) for d in self.noise_floors],
            "times": [float(t) for t in self.times],
            "volume_defect": self.volume_defect,
            "config": self.config.to_dict(),
        }


def picard_solve(
    u0: SpectralVelocity,
    nu: float,
    t_end: float,
    cfg: SolverConfig,
    callback: Optional[Callable[[int, Reconstruction], None]] = None,
) -> PicardState:
    """Fixed-point iteration between the flow SDE and the velocity reconstruction.

    u^(0)(t) = u0; u^(m+1)(t_j) is reconstructed from flows driven by the
    linear-in-time interpolation of u^(m).  The same master seed is used at
    every iteration.  Stops once every node satisfies
    ||u^(m) - u^(m-1)|| <= max(tol, 3 * aggregate std error).
    """
    if u0.divergence_residual() > 1e-12:
        raise PreconditionError("u0 is not divergence-free")
    if u0.M > cfg.M:
        raise PreconditionError(f"u0 has modes beyond M={cfg.M}")
    n_nodes = int(round(t_end / cfg.node_dt))
    if abs(n_nodes * cfg.node_dt - t_end) > 1e-9:
        raise PreconditionError(f"t_end={t_end} must be a multiple of node_dt={cfg.node_dt}")
    times = cfg.node_dt * np.arange(n_nodes + 1)
    u0 = u0.resized(cfg.M)
    noise = NoiseModel.constant(nu)
    current = [u0] * len(times)
    deltas, floors, history = [], [], []
    vd = 0.0
    for m in range(1, cfg.max_iter + 1):
        drift = InterpolatedDrift(times, current)
        rec = reconstruct_nodes(u0, drift, noise, times, cfg)
        vd = max(vd, rec.volume_defect)
        new = rec.velocities()
        gaps = np.array([new[j].l2_distance(current[j]) for j in range(len(times))])
        floor = np.array([max(cfg.tol, 3.0 * rec.aggregate_std_error(j)) for j in range(len(times))])
        deltas.append(float(gaps.max()))
        floors.append(float(floor.max()))
        history.append(rec)
        if callback is not None:
            callback(m, rec)
        current = new
        if np.all(gaps <= floor):
            return PicardState(m, times, current, deltas[-1], deltas, floors, True, False, cfg, history, vd)
    return PicardState(cfg.max_iter, times, current, deltas[-1], deltas, floors, False, True, cfg, history, vd)


def iteration_rows(state: PicardState) -> list[tuple]:
    """(iteration, time_node, mode, re, im, std_error) for every iteration, node and half mode."""
    rows = []
    hm = half_modes(state.config.M)
    for m, rec in enumerate(state.history, start=1):
        for r, t in enumerate(rec.times):
            se = rec.mode_std_error(r)
            for h, k in enumerate(hm):
                c = rec.c_mean[r, h]
                rows.append((m, float(t), f"{k[0]}:{k[1]}", float(c.real), float(c.imag), float(se[h])))
    return rows


def write_iteration_csv(state: PicardState, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["iteration", "time_node", "mode", "re", "im", "std_error"])
        for row in iteration_rows(state):
            w.writerow([row[0], repr(row[1]), row[2], repr(row[3]), repr(row[4]), repr(row[5])])


# ---------------------------------------------------------------------------
# sphere heat decay


@dataclass
class DecayFit:
    nu: float
    times: np.ndarray
    a: np.ndarray
    a_se: np.ndarray
    slope: float
    slope_se: float
    expected: float
    n_samples: int

    @property
    def rel_error(self) -> float:
        return abs(self.slope - self.expected) / abs(self.expected) if self.expected else abs(self.slope)

    def to_dict(self) -> dict:
        return {
            "nu": self.nu,
            "times": [float(t) for t in self.times],
            "a": [float(v) for v in self.a],
            "a_std_error": [float(v) for v in self.a_se],
            "slope": self.slope,
            "slope_std_error": self.slope_se,
            "expected_slope": self.expected,
            "rel_error": self.rel_error,
            "n_samples": self.n_samples,
        }


def sphere_heat_decay(
    nu: float,
    times: Sequence[float],
    n_samples: int = 5000,
    dt: float = 1e-3,
    master_seed: int = 2024,
    chunk: int = 250,
    threads: int = 1,
    quad: Optional[Quadrature] = None,
) -> DecayFit:
    """a(t) = E int <u0, (X_t^{-1})_* u0> / int |u0|^2 for u0 = A^(12) under Killing noise.

    The slope of log a(t) is fitted through the origin by least squares,
    slope = sum t_j log a_j / sum t_j^2, with its standard error from the
    per-sample curves by the delta method.
    """
    fam = build_sphere_killing_family(2)
    noise = NoiseModel.family_driven(fam, nu)
    quad = quad or sphere_design()
    x = quad.nodes
    u0 = fam[0]
    u0x = u0(x)
    norm2 = float(np.sum(u0x * u0x, axis=-1) @ quad.weights)
    times = np.asarray(list(times), dtype=float)
    cfg = FlowConfig(dt, float(times.max()), master_seed, n_samples)
    M = fam.manifold

    def run(idx):
        rec = integrate_batch(cfg, None, noise, x, idx, record_times=times)
        out = np.empty((len(idx), len(times)))
        for r in range(len(times)):
            out[:, r] = _pullback_pairing(M, x, rec.X[:, r], rec.J[:, r], rec.logd[:, r], u0x, u0, quad.weights)
        return out / norm2

    vals = np.concatenate(_map_chunks(run, n_samples, chunk, threads), axis=0)
    n = vals.shape[0]
    a = np.sum(vals, axis=0) / n
    a_se = np.std(vals, axis=0, ddof=1) / math.sqrt(n)
    tt = float(np.sum(times**2))
    slope = float(np.sum(times * np.log(a)) / tt)
    # delta method: d slope / d a_j = t_j / (a_j sum t^2)
    grad = times / (a * tt)
    cov = np.cov(vals, rowvar=False, ddof=1) / n
    slope_se = float(math.sqrt(max(float(grad @ cov @ grad), 0.0)))
    return DecayFit(nu, times, a, a_se, slope, slope_se, -2.0 * nu, n)
