"""Stratonovich flows on T^n and S^n with exact discrete jacobians and log-densities.

One Brownian path drives every grid point of a sample, so a sample is a
realisation of the flow map x -> X_t(x).  The scheme is Heun's
predictor-corrector; the jacobian is the exact derivative of the discrete
update, including the sphere renormalisation.
"""
from __future__ import annotations

import enum
import hashlib
import io
import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence, Union

import numpy as np

from . import kernels
from .families import FamilyKind, FieldFamily
from .geometry import TWO_PI, Array, Manifold, Torus, VectorField
from .rng import increments_batch
from .spectral import SpectralVelocity


class IntegrationError(RuntimeError):
    pass


class NumericalError(RuntimeError):
    pass


class NoiseKind(str, enum.Enum):
    CONSTANT = "ConstantDiffusion"
    FAMILY = "FamilyDriven"


@dataclass(frozen=True)
class NoiseModel:
    """sigma * sum_i A_i(X) o dW^i, with A_i the standard basis for ConstantDiffusion."""

    kind: NoiseKind
    sigma: float
    manifold: Manifold
    family: Optional[FieldFamily] = None

    def __post_init__(self):
        object.__setattr__(self, "kind", NoiseKind(self.kind))
        if not self.sigma > 0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")
        if self.kind is NoiseKind.FAMILY:
            if self.family is None:
                raise ValueError("FamilyDriven noise needs a family")
            if self.family.manifold != self.manifold:
                raise ValueError(f"family lives on {self.family.manifold}, not {self.manifold}")
        elif self.manifold.is_sphere:
            raise ValueError("ConstantDiffusion is only defined on the torus")

    @classmethod
    def constant(cls, nu: float, n: int = 2) -> "NoiseModel":
        return cls(NoiseKind.CONSTANT, math.sqrt(2.0 * nu), Torus(n))

    @classmethod
    def family_driven(cls, family: FieldFamily, nu: float) -> "NoiseModel":
        family.sde_threshold_warning()
        return cls(NoiseKind.FAMILY, math.sqrt(2.0 * nu / family.nu0), family.manifold, family)

    @property
    def n_noise(self) -> int:
        return self.manifold.dim if self.kind is NoiseKind.CONSTANT else len(self.family)

    @property
    def divergence_free(self) -> bool:
        if self.kind is NoiseKind.CONSTANT:
            return True
        return self.family.spec.kind is not FamilyKind.SPHERE_GRADIENT

    def fields(self, x: Array):
        """(values (..., F, m), jacobians (..., F, m, m), divergences (..., F))."""
        if self.kind is NoiseKind.CONSTANT:
            m = self.manifold.ambient_dim
            lead = np.shape(x)[:-1]
            return (
                np.broadcast_to(np.eye(m), lead + (m, m)),
                np.zeros(lead + (m, m, m)),
                np.zeros(lead + (m,)),
            )
        f = self.family
        return f.values(x), f.jacs(x), f.divs(x)


# ---------------------------------------------------------------------------
# drifts


class Drift:
    """Time-dependent vector field t -> u_t."""

    manifold: Manifold

    def at(self, t: float) -> VectorField:
        raise NotImplementedError


@dataclass
class StaticDrift(Drift):
    field: VectorField

    def __post_init__(self):
        self.manifold = self.field.manifold

    def at(self, t: float) -> VectorField:
        return self.field


@dataclass
class CallableDrift(Drift):
    fn: Callable[[float], VectorField]
    manifold: Manifold

    def at(self, t: float) -> VectorField:
        return self.fn(t)


class SpectralDrift(Drift):
    """Drift given by a SpectralVelocity at each time; eligible for the compiled kernel."""

    manifold = Torus(2)

    def velocity(self, t: float) -> SpectralVelocity:
        raise NotImplementedError

    def at(self, t: float) -> VectorField:
        return self.velocity(t).as_field()

    def tables(self, times: Array) -> tuple:
        """(k, A, B, mean, solenoidal) with A, B, mean stacked over ``times``."""
        A, B, mean = [], [], []
        sol = True
        k = None
        for t in times:
            u = self.velocity(float(t))
            k, a, b = u.real_form()
            A.append(a)
            B.append(b)
            mean.append(u.mean)
            sol = sol and u.divergence_residual() <= 1e-12
        return k, np.array(A), np.array(B), np.array(mean), sol


class ExactSpectralDrift(SpectralDrift):
    def __init__(self, fn: Callable[[float], SpectralVelocity]):
        self.fn = fn

    def velocity(self, t: float) -> SpectralVelocity:
        return self.fn(t)


class InterpolatedDrift(SpectralDrift):
    """Piecewise-linear interpolation in time between velocities at nodes."""

    def __init__(self, times: Sequence[float], velocities: Sequence[SpectralVelocity]):
        if len(times) != len(velocities) or len(times) == 0:
            raise ValueError("need matching, non-empty node times and velocities")
        self.times = np.asarray(times, dtype=float)
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("node times must increase")
        M = max(v.M for v in velocities)
        self.velocities = [v.resized(M) for v in velocities]

    def velocity(self, t: float) -> SpectralVelocity:
        ts = self.times
        if t <= ts[0] or len(ts) == 1:
            return self.velocities[0]
        if t >= ts[-1]:
            return self.velocities[-1]
        j = int(np.searchsorted(ts, t, side="right") - 1)
        lam = (t - ts[j]) / (ts[j + 1] - ts[j])
        a, b = self.velocities[j], self.velocities[j + 1]
        if lam == 0.0:
            return a
        return SpectralVelocity(a.M, (1.0 - lam) * a.coeffs + lam * b.coeffs, (1.0 - lam) * a.mean + lam * b.mean)


def as_drift(drift, manifold: Manifold) -> Optional[Drift]:
    if drift is None or isinstance(drift, Drift):
        return drift
    if isinstance(drift, VectorField):
        return StaticDrift(drift)
    if isinstance(drift, SpectralVelocity):
        return ExactSpectralDrift(lambda t, u=drift: u)
    if callable(drift):
        return CallableDrift(drift, manifold)
    raise TypeError(f"cannot use {type(drift).__name__} as a drift")


# ---------------------------------------------------------------------------
# configuration and results


@dataclass(frozen=True)
class FlowConfig:
    dt: float
    t_end: float
    master_seed: int = 0
    n_samples: int = 1
    scheme: str = "StratonovichHeun"

    def __post_init__(self):
        errors = []
        if not (0 < self.dt <= self.t_end):
            errors.append(f"need 0 < dt <= t_end, got dt={self.dt}, t_end={self.t_end}")
        elif abs(self.t_end / self.dt - round(self.t_end / self.dt)) > 1e-9:
            errors.append(f"t_end={self.t_end} must be a multiple of dt={self.dt}")
        if int(self.n_samples) < 1:
            errors.append(f"n_samples must be >= 1, got {self.n_samples}")
        if self.scheme != "StratonovichHeun":
            errors.append(f"unknown scheme {self.scheme!r}")
        if errors:
            raise ValueError("; ".join(errors))

    @property
    def n_steps(self) -> int:
        return int(round(self.t_end / self.dt))

    def step_of(self, t: float) -> int:
        s = t / self.dt
        if abs(s - round(s)) > 1e-9 or round(s) < 0 or round(s) > self.n_steps:
            raise ValueError(f"time {t} is not a step time of this config")
        return int(round(s))

    def to_dict(self) -> dict:
        return {"dt": self.dt, "t_end": self.t_end, "master_seed": int(self.master_seed),
                "n_samples": int(self.n_samples), "scheme": self.scheme}


@dataclass
class FlowRecord:
    """Flow states for S samples at R record times: X (S, R, P, m), J (S, R, P, m, m), logd (S, R, P)."""

    manifold: Manifold
    sample_indices: np.ndarray
    times: np.ndarray
    initial_points: np.ndarray
    X: np.ndarray
    J: np.ndarray
    logd: np.ndarray

    def sample(self, s: int, r: int = -1) -> "FlowEnsembleSample":
        return FlowEnsembleSample(
            int(self.sample_indices[s]),
            float(self.times[r]),
            self.manifold,
            self.initial_points,
            self.X[s, r],
            self.J[s, r],
            self.logd[s, r],
        )


@dataclass
class FlowEnsembleSample:
    sample_index: int
    t: float
    manifold: Manifold
    initial_points: np.ndarray
    lifted: np.ndarray
    jacobians: np.ndarray
    log_density: np.ndarray

    @property
    def endpoints(self) -> np.ndarray:
        """X_t(x); torus coordinates reduced to [0, 2 pi)."""
        if self.manifold.is_sphere:
            return self.lifted
        return np.mod(self.lifted, TWO_PI)

    def tangent_jacobians(self) -> np.ndarray:
        return tangent_jacobian(self.manifold, self.initial_points, self.lifted, self.jacobians)


# ---------------------------------------------------------------------------
# integration


def _check_grid(M: Manifold, grid) -> np.ndarray:
    x = np.asarray(grid, dtype=float)
    if x.ndim == 1:
        x = x[None, :]
    x = M._check_ambient(x, "grid")
    if M.is_sphere:
        err = np.abs(np.linalg.norm(x, axis=-1) - 1.0)
        if np.any(err > 1e-12):
            raise ValueError(f"grid point off {M}: | |x| - 1 | = {err.max():.3e}")
    return x


def _record_steps(config: FlowConfig, record_times) -> tuple[np.ndarray, np.ndarray]:
    if record_times is None:
        return np.array([config.t_end]), np.array([config.n_steps])
    ts = np.asarray(record_times, dtype=float).reshape(-1)
    return ts, np.array([config.step_of(t) for t in ts], dtype=np.int64)


def _mv(A: Array, v: Array) -> Array:
    return np.einsum("...ab,...b->...a", A, v)


def _mm(A: Array, B: Array) -> Array:
    return np.einsum("...ab,...bc->...ac", A, B)


def _drift_eval(drift: Optional[Drift], t: float, x: Array):
    if drift is None:
        return np.zeros_like(x), np.zeros(x.shape + (x.shape[-1],)), np.zeros(x.shape[:-1])
    f = drift.at(t)
    div = f.div(x) if f.div is not None else np.trace(_drift_tangent_jac(f, x), axis1=-2, axis2=-1)
    return f(x), f.jac(x), div


def _drift_tangent_jac(f: VectorField, x: Array) -> Array:
    P = f.manifold.projector(x)
    return _mm(P, f.jac(x))


def heun_generic(
    manifold: Manifold,
    x0: Array,
    dW: Array,
    dt: float,
    drift: Optional[Drift],
    noise: Optional[NoiseModel],
    record_steps: Array,
    t0: float = 0.0,
):
    """Heun steps for a batch of samples; dW (S, n_steps, F) unscaled increments."""
    S, n_steps, _ = dW.shape
    P, m = x0.shape
    R = len(record_steps)
    X = np.broadcast_to(x0, (S, P, m)).copy()
    J = np.broadcast_to(np.eye(m), (S, P, m, m)).copy()
    L = np.zeros((S, P))
    Xo = np.empty((S, R, P, m))
    Jo = np.empty((S, R, P, m, m))
    Lo = np.empty((S, R, P))
    slot = {int(r): i for i, r in enumerate(record_steps)}
    sigma = 0.0 if noise is None else noise.sigma

    def stage(t, x, dw):
        f, Df, divf = _drift_eval(drift, t, x)
        if noise is None:
            return f, Df, np.zeros_like(x), np.zeros_like(Df)
        a, ja, _ = noise.fields(x)
        g = sigma * np.einsum("spfa,sf->spa", a, dw)
        Dg = sigma * np.einsum("spfab,sf->spab", ja, dw)
        return f, Df, g, Dg

    if 0 in slot:
        Xo[:, slot[0]], Jo[:, slot[0]], Lo[:, slot[0]] = X, J, L
    for step in range(n_steps):
        t = t0 + step * dt
        dw = dW[:, step, :]
        f0, Df0, g0, Dg0 = stage(t, X, dw)
        K0 = Df0 * dt + Dg0
        Y = X + f0 * dt + g0
        JY = J + _mm(K0, J)
        f1, Df1, g1, Dg1 = stage(t + dt, Y, dw)
        K1 = Df1 * dt + Dg1
        Z = X + 0.5 * (f0 + f1) * dt + 0.5 * (g0 + g1)
        JZ = J + 0.5 * (_mm(K0, J) + _mm(K1, JY))
        if manifold.is_sphere:
            r = np.linalg.norm(Z, axis=-1)
            bad = np.abs(r - 1.0)
            if np.any(bad > 0.1):
                raise IntegrationError(
                    f"step {step}: renormalisation correction {bad.max():.3g} > 0.1; reduce dt (dt={dt})"
                )
            Xn = Z / r[..., None]
            Pn = np.eye(m) - Xn[..., :, None] * Xn[..., None, :]
            Jn = _mm(Pn, JZ) / r[..., None, None]
            mid = X + Xn
            mid = mid / np.linalg.norm(mid, axis=-1, keepdims=True)
        else:
            Xn, Jn = Z, JZ
            mid = 0.5 * (X + Xn)
        L = L + _log_density_increment(drift, noise, t + 0.5 * dt, mid, dw, dt)
        X, J = Xn, Jn
        i = slot.get(step + 1)
        if i is not None:
            Xo[:, i], Jo[:, i], Lo[:, i] = X, J, L
    return Xo, Jo, Lo


def _log_density_increment(drift, noise, t_mid, mid, dw, dt):
    out = np.zeros(mid.shape[:-1])
    if noise is not None and not noise.divergence_free:
        _, _, d = noise.fields(mid)
        out = out + noise.sigma * np.einsum("spf,sf->sp", d, dw)
    if drift is not None:
        out = out + _drift_eval(drift, t_mid, mid)[2] * dt
    return out


def _linear_killing(noise: NoiseModel, drift) -> bool:
    return (
        drift is None
        and noise is not None
        and noise.kind is NoiseKind.FAMILY
        and noise.family.spec.kind is FamilyKind.SPHERE_KILLING
        and hasattr(noise.family, "_matrices")
    )


def heun_linear_killing(noise: NoiseModel, x0: Array, dW: Array, record_steps: Array):
    """Killing noise, no drift: each Heun step is X -> M X / |M X| with M = I + Xi + Xi^2 / 2.

    Renormalisation commutes with the linear maps, so X_n = G_n x / |G_n x|
    for the product G_n of step matrices and J_n = (I - X_n X_n^T) G_n / |G_n x|.
    """
    mats = noise.family._matrices * (noise.family.scale * noise.sigma)
    S, n_steps, _ = dW.shape
    P, m = x0.shape
    eye = np.eye(m)
    G = np.broadcast_to(eye, (S, m, m)).copy()
    prods = {}
    slot = {int(r): i for i, r in enumerate(record_steps)}
    if 0 in slot:
        prods[0] = G.copy()
    for step in range(n_steps):
        Xi = np.einsum("sf,fab->sab", dW[:, step, :], mats)
        Mstep = eye + Xi + 0.5 * (Xi @ Xi)
        sv = np.linalg.svd(Mstep, compute_uv=False)
        bad = np.maximum(sv[:, 0] - 1.0, 1.0 - sv[:, -1])
        if np.any(bad > 0.1):
            raise IntegrationError(f"step {step}: renormalisation correction may exceed 0.1; reduce dt")
        G = Mstep @ G
        if step + 1 in slot:
            prods[step + 1] = G.copy()
    R = len(record_steps)
    Xo = np.empty((S, R, P, m))
    Jo = np.empty((S, R, P, m, m))
    for r, step in enumerate(record_steps):
        Gr = prods[int(step)]
        if step == 0:
            Xo[:, r] = x0
            Jo[:, r] = eye
            continue
        Z = np.einsum("sab,pb->spa", Gr, x0)
        nr = np.linalg.norm(Z, axis=-1)
        Xn = Z / nr[..., None]
        Pn = eye - Xn[..., :, None] * Xn[..., None, :]
        Jo[:, r] = np.einsum("spac,scb->spab", Pn, Gr) / nr[..., None, None]
        Xo[:, r] = Xn
    return Xo, Jo, np.zeros((S, R, P))


def _kernel_eligible(manifold, drift, noise) -> bool:
    if manifold.is_sphere or manifold.dim != 2:
        return False
    if noise is not None and noise.kind is not NoiseKind.CONSTANT:
        return False
    return drift is None or isinstance(drift, SpectralDrift)


def integrate_batch(
    config: FlowConfig,
    drift,
    noise: Optional[NoiseModel],
    grid,
    sample_indices: Sequence[int],
    record_times=None,
    path: str = "auto",
    dW: Optional[Array] = None,
) -> FlowRecord:
    """Integrate several samples; ``path`` is "auto", "generic", "kernel" or "linear"."""
    M = noise.manifold if noise is not None else (drift.manifold if hasattr(drift, "manifold") else None)
    if M is None:
        raise ValueError("cannot infer the manifold: give a noise model or a drift field")
    drift = as_drift(drift, M)
    if drift is not None and drift.manifold != M:
        raise ValueError(f"drift on {drift.manifold} but noise on {M}")
    x0 = _check_grid(M, grid)
    if not M.is_sphere:
        x0 = np.mod(x0, TWO_PI)
    times, steps = _record_steps(config, record_times)
    idx = np.asarray(list(sample_indices), dtype=np.int64)
    F = 0 if noise is None else noise.n_noise
    if dW is None:
        dW = increments_batch(config.master_seed, idx, F, config.n_steps, config.dt) if F else np.zeros(
            (len(idx), config.n_steps, 0)
        )

    if path == "auto":
        if _linear_killing(noise, drift):
            path = "linear"
        elif _kernel_eligible(M, drift, noise):
            path = "kernel"
        else:
            path = "generic"

    if path == "linear":
        if not _linear_killing(noise, drift):
            raise ValueError("linear path needs Killing noise and no drift")
        X, J, L = heun_linear_killing(noise, x0, dW, steps)
    elif path == "kernel":
        if not _kernel_eligible(M, drift, noise):
            raise ValueError("kernel path needs T^2, constant diffusion and a spectral drift")
        X, J, L = _run_kernel(config, drift, noise, x0, dW, steps)
    elif path == "generic":
        X, J, L = heun_generic(M, x0, dW, config.dt, drift, noise, steps)
    else:
        raise ValueError(f"unknown path {path!r}")
    return FlowRecord(M, idx, times, x0, X, J, L)


def _run_kernel(config, drift, noise, x0, dW, steps):
    n = config.n_steps
    ts = config.dt * np.arange(n + 1)
    if drift is None:
        k = np.zeros((0, 2), dtype=np.int64)
        A = B = np.zeros((n + 1, 0, 2))
        mean = np.zeros((n + 1, 2))
        sol = True
    else:
        k, A, B, mean, sol = drift.tables(ts)
    if not sol:
        # the kernel does not accumulate the drift divergence
        return heun_generic(noise.manifold if noise else drift.manifold, x0, dW, config.dt, drift, noise, steps)
    scaled = dW * (0.0 if noise is None else noise.sigma)
    if scaled.shape[2] == 0:
        scaled = np.zeros(dW.shape[:2] + (2,))
    X, J = kernels.torus_heun(x0, scaled, k, A, B, mean, config.dt, steps)
    return X, J, np.zeros(X.shape[:3])


def integrate_flow(
    config: FlowConfig, drift, noise: Optional[NoiseModel], grid, sample_index: int = 0, path: str = "auto"
) -> FlowEnsembleSample:
    rec = integrate_batch(config, drift, noise, grid, [sample_index], path=path)
    return rec.sample(0, -1)


# ---------------------------------------------------------------------------
# pull-back, volume, density


def tangent_jacobian(M: Manifold, x: Array, X: Array, J: Array) -> Array:
    """F^T J E in orthonormal frames E of T_x and F of T_{X}; the jacobian itself on the torus."""
    if not M.is_sphere:
        return J
    E = M.tangent_basis(x)
    Fr = M.tangent_basis(X)
    return np.einsum("...ai,...ab,...bj->...ij", Fr, J, E)


def pullback_values(M: Manifold, x: Array, X: Array, J: Array, vX: Array, cond_max: float = 1e12) -> Array:
    """(dX(x))^{-1} v(X(x)) for batches; vX is v evaluated at the endpoints."""
    Jt = tangent_jacobian(M, x, X, J)
    c = np.asarray(np.linalg.cond(Jt)).reshape(-1)
    c = np.where(np.isfinite(c), c, np.inf)
    if np.any(c > cond_max):
        bad = int(np.argmax(c))
        pts = np.broadcast_to(x, Jt.shape[:-2] + x.shape[-1:]).reshape(-1, x.shape[-1])
        raise NumericalError(f"jacobian condition number {c[bad]:.3g} > {cond_max:g} at point {pts[bad]}")
    if not M.is_sphere:
        return np.linalg.solve(J, vX[..., None])[..., 0]
    E = M.tangent_basis(x)
    Fr = M.tangent_basis(X)
    rhs = np.einsum("...ai,...a->...i", Fr, vX)
    w = np.linalg.solve(Jt, rhs[..., None])[..., 0]
    return np.einsum("...ai,...i->...a", E, w)


def pullback_field(sample: FlowEnsembleSample, v: VectorField, x=None) -> Array:
    """((X_t^{-1})_* v)(x) at one grid point (or all points when x is None)."""
    pts = sample.initial_points
    if x is None:
        return pullback_values(sample.manifold, pts, sample.lifted, sample.jacobians, v(sample.endpoints))
    x = np.asarray(x, dtype=float)
    d = np.linalg.norm(sample.manifold.displacement(pts, x), axis=-1)
    j = int(np.argmin(d))
    if d[j] > 1e-12:
        raise ValueError("x is not one of the sample's initial points")
    return pullback_values(
        sample.manifold, pts[j], sample.lifted[j], sample.jacobians[j], v(sample.endpoints[j])
    )


def jacobian_fd_gap(
    config: FlowConfig, drift, noise: Optional[NoiseModel], points, sample_index: int = 0, h: float = 1e-4,
    path: str = "auto",
) -> float:
    """Max |dX(x) e - (X(x + h e) - X(x - h e)) / 2h| over points and tangent directions e.

    All perturbed points share one flow sample.  On the sphere the perturbed
    points are renormalised; the second-order term of that retraction is even
    in h and cancels.
    """
    M = noise.manifold if noise is not None else drift.manifold
    x = _check_grid(M, points)
    P, m = x.shape
    E = M.tangent_basis(x) if M.is_sphere else np.broadcast_to(np.eye(m), (P, m, m))
    d = E.shape[-1]
    step = h * np.swapaxes(E, -1, -2)
    plus = x[:, None, :] + step
    minus = x[:, None, :] - step
    if M.is_sphere:
        plus = plus / np.linalg.norm(plus, axis=-1, keepdims=True)
        minus = minus / np.linalg.norm(minus, axis=-1, keepdims=True)
    grid = np.concatenate([x, plus.reshape(-1, m), minus.reshape(-1, m)], axis=0)
    rec = integrate_batch(config, drift, noise, grid, [sample_index], path=path)
    Xall = rec.X[0, -1]
    J = rec.J[0, -1, :P]
    diff = Xall[P : P + P * d].reshape(P, d, m) - Xall[P + P * d :].reshape(P, d, m)
    if not M.is_sphere:
        # the grid is reduced mod 2 pi before integration; undo wraps in the differences
        diff = diff - TWO_PI * np.round(diff / TWO_PI)
    fd = diff / (2.0 * h)
    an = np.einsum("pab,pbi->pia", J, E)
    return float(np.max(np.linalg.norm(fd - an, axis=-1)))


def volume_defect(sample: FlowEnsembleSample) -> float:
    """max |det(tangent jacobian) - exp(log_density)|; reduces to max |det - 1| when divergence-free."""
    det = np.linalg.det(sample.tangent_jacobians())
    return float(np.max(np.abs(det - np.exp(sample.log_density))))


def volume_defect_series(record: FlowRecord) -> np.ndarray:
    """Defect per (sample, record time), shape (S, R)."""
    M = record.manifold
    Jt = tangent_jacobian(M, record.initial_points, record.X, record.J)
    return np.max(np.abs(np.linalg.det(Jt) - np.exp(record.logd)), axis=-1)


def density_consistency(record: FlowRecord, f: Callable[[Array], Array], weights: Array, r: int = -1) -> float:
    """|int f dx - E int f(X_t(x)) det dX_t(x) dx|, with det dX_t = exp(log_density)."""
    x = record.initial_points
    lhs = float(f(x) @ weights)
    X = record.X[:, r]
    if not record.manifold.is_sphere:
        X = np.mod(X, TWO_PI)
    per_sample = (f(X) * np.exp(record.logd[:, r])) @ weights
    return abs(lhs - float(np.sum(per_sample) / per_sample.size))


# ---------------------------------------------------------------------------
# export

MAGIC = b"MNSLFLOW"
DUMP_VERSION = 1
_HEADER = struct.Struct("<8sIBIIQQd32s")


def config_hash(obj) -> bytes:
    return hashlib.sha256(json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()).digest()


def dump_sample(sample: FlowEnsembleSample, path, config: Optional[dict] = None) -> None:
    """Binary layout (little endian):

    header: magic "MNSLFLOW", u32 version, u8 kind (0 torus, 1 sphere), u32 dim,
    u32 ambient m, u64 point count P, u64 sample index, f64 t, 32-byte sha256
    of the canonical JSON config; then P records of f64:
    x0[m], X_t(x0)[m], jacobian[m*m] row-major, log_density.
    """
    M = sample.manifold
    m = M.ambient_dim
    P = sample.initial_points.shape[0]
    head = _HEADER.pack(MAGIC, DUMP_VERSION, int(M.is_sphere), M.dim, m, P, sample.sample_index, sample.t,
                        config_hash(config or {}))
    body = np.concatenate(
        [sample.initial_points, sample.endpoints, sample.jacobians.reshape(P, m * m), sample.log_density[:, None]],
        axis=1,
    ).astype("<f8")
    with open(path, "wb") as fh:
        fh.write(head)
        fh.write(body.tobytes())


def load_sample(path) -> tuple[FlowEnsembleSample, bytes]:
    from .geometry import ManifoldKind

    raw = Path(path).read_bytes()
    magic, ver, kind, dim, m, P, idx, t, digest = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise ValueError(f"{path}: not a flow dump")
    if ver != DUMP_VERSION:
        raise ValueError(f"{path}: unsupported version {ver}")
    body = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size).reshape(P, 2 * m + m * m + 1)
    M = Manifold(ManifoldKind.SPHERE if kind else ManifoldKind.TORUS, dim)
    s = FlowEnsembleSample(
        int(idx), float(t), M, body[:, :m].copy(), body[:, m : 2 * m].copy(),
        body[:, 2 * m : 2 * m + m * m].reshape(P, m, m).copy(), body[:, -1].copy(),
    )
    return s, digest


def volume_defect_csv(record: FlowRecord, path=None) -> str:
    series = volume_defect_series(record)
    lines = ["sample_index,t,volume_defect"]
    for s, j in enumerate(record.sample_indices):
        for r, t in enumerate(record.times):
            lines.append(f"{int(j)},{float(t)!r},{float(series[s, r])!r}")
    text = "\n".join(lines) + "\n"
    if path is not None:
        Path(path).write_text(text)
    return text
