"""Divergence-free Fourier velocities on T^2 and the pseudo-spectral reference solver.

A :class:`SpectralVelocity` stores the complex coefficients u_k for all
|k|_inf <= M in a dense ``(2M+1, 2M+1, 2)`` array indexed ``[k1+M, k2+M]``,
so that u(theta) = mean + sum_k u_k exp(i k.theta).
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional

import numpy as np

from .geometry import TWO_PI, Torus, VectorField

AREA = TWO_PI**2


class AliasingError(ValueError):
    pass


class CFLError(RuntimeError):
    pass


def wavenumbers(M: int) -> tuple[np.ndarray, np.ndarray]:
    r = np.arange(-M, M + 1)
    k1, k2 = np.meshgrid(r, r, indexing="ij")
    return k1, k2


def half_modes(M: int) -> np.ndarray:
    """Representatives of Z^2_0 / {k ~ -k} with |k|_inf <= M: k1 > 0, or k1 = 0 and k2 > 0."""
    out = [(k1, k2) for k1 in range(0, M + 1) for k2 in range(-M, M + 1) if k1 > 0 or k2 > 0]
    return np.array(out, dtype=np.int64)


def polarization(k) -> np.ndarray:
    """e_k = (k2, -k1) / |k|, the unit vector spanning k^perp."""
    k = np.asarray(k, dtype=float)
    return np.stack([k[..., 1], -k[..., 0]], axis=-1) / np.linalg.norm(k, axis=-1, keepdims=True)


@dataclass(frozen=True)
class SpectralVelocity:
    M: int
    coeffs: np.ndarray
    mean: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=complex)
        if c.shape != (2 * self.M + 1, 2 * self.M + 1, 2):
            raise ValueError(f"coeffs must have shape {(2 * self.M + 1,) * 2 + (2,)}, got {c.shape}")
        c = c.copy()
        c[self.M, self.M] = 0.0
        object.__setattr__(self, "coeffs", c)
        object.__setattr__(self, "mean", np.asarray(self.mean, dtype=float).reshape(2).copy())

    # -- constructors -------------------------------------------------------

    @classmethod
    def zeros(cls, M: int) -> "SpectralVelocity":
        return cls(M, np.zeros((2 * M + 1, 2 * M + 1, 2), complex), np.zeros(2))

    @classmethod
    def from_modes(cls, M: int, modes: dict, mean=(0.0, 0.0)) -> "SpectralVelocity":
        """Build from {k: u_k}; the conjugate partner of every given mode is filled in."""
        c = np.zeros((2 * M + 1, 2 * M + 1, 2), complex)
        for k, uk in modes.items():
            k1, k2 = int(k[0]), int(k[1])
            if max(abs(k1), abs(k2)) > M:
                raise ValueError(f"mode {k} outside |k|_inf <= {M}")
            c[k1 + M, k2 + M] = uk
            c[M - k1, M - k2] = np.conj(uk)
        return cls(M, c, mean)

    @classmethod
    def from_half(cls, M: int, scalars: np.ndarray) -> "SpectralVelocity":
        """From c_k on :func:`half_modes` order, with u_k = c_k e_k."""
        hm = half_modes(M)
        e = polarization(hm)
        return cls.from_modes(M, {tuple(k): s * ek for k, s, ek in zip(hm, scalars, e)})

    # -- views --------------------------------------------------------------

    def mode(self, k) -> np.ndarray:
        return self.coeffs[int(k[0]) + self.M, int(k[1]) + self.M]

    def half(self) -> np.ndarray:
        """c_k = <u_k, e_k> on :func:`half_modes` order."""
        hm = half_modes(self.M)
        uk = self.coeffs[hm[:, 0] + self.M, hm[:, 1] + self.M]
        return np.sum(uk * polarization(hm), axis=-1)

    def real_form(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(k, A, B) with u = mean + sum_half A_k cos(k.theta) + B_k sin(k.theta)."""
        hm = half_modes(self.M)
        uk = self.coeffs[hm[:, 0] + self.M, hm[:, 1] + self.M]
        return hm, 2.0 * uk.real, -2.0 * uk.imag

    def resized(self, M: int) -> "SpectralVelocity":
        out = SpectralVelocity.zeros(M)
        m = min(M, self.M)
        out.coeffs[M - m : M + m + 1, M - m : M + m + 1] = self.coeffs[self.M - m : self.M + m + 1, self.M - m : self.M + m + 1]
        return SpectralVelocity(M, out.coeffs, self.mean)

    def __add__(self, other: "SpectralVelocity") -> "SpectralVelocity":
        M = max(self.M, other.M)
        a, b = self.resized(M), other.resized(M)
        return SpectralVelocity(M, a.coeffs + b.coeffs, a.mean + b.mean)

    def __sub__(self, other: "SpectralVelocity") -> "SpectralVelocity":
        return self + other.scaled(-1.0)

    def scaled(self, c: float) -> "SpectralVelocity":
        return SpectralVelocity(self.M, c * self.coeffs, c * self.mean)

    def energy(self) -> float:
        """int |u|^2 over T^2."""
        return float(AREA * (np.sum(np.abs(self.coeffs) ** 2) + np.sum(self.mean**2)))

    def l2_norm(self) -> float:
        return math.sqrt(self.energy())

    def l2_distance(self, other: "SpectralVelocity") -> float:
        return (self - other).l2_norm()

    def divergence_residual(self) -> float:
        k1, k2 = wavenumbers(self.M)
        return float(np.max(np.abs(k1 * self.coeffs[..., 0] + k2 * self.coeffs[..., 1])))

    def reality_residual(self) -> float:
        return float(np.max(np.abs(self.coeffs - np.conj(self.coeffs[::-1, ::-1]))))

    # -- pointwise evaluation -----------------------------------------------

    def as_field(self, label: str = "u") -> VectorField:
        """The velocity as a field on T^2 with exact jacobian and hessian."""
        k, A, B = self.real_form()
        kf = k.astype(float)
        mean = self.mean.copy()

        def trig(x):
            ph = np.asarray(x, dtype=float) @ kf.T
            return np.cos(ph), np.sin(ph)

        def val(x):
            c, s = trig(x)
            return mean + c @ A + s @ B

        def jac(x):
            c, s = trig(x)
            # d/dx_b [A cos + B sin]_a = (-A_a s + B_a c) k_b
            return np.einsum("...m,ma,mb->...ab", c, B, kf) - np.einsum("...m,ma,mb->...ab", s, A, kf)

        def hess(x):
            c, s = trig(x)
            return -np.einsum("...m,ma,mb,mc->...abc", c, A, kf, kf) - np.einsum("...m,ma,mb,mc->...abc", s, B, kf, kf)

        def div(x):
            return np.trace(jac(x), axis1=-2, axis2=-1)

        return VectorField(Torus(2), val, jac, hess, div, label)

    # -- csv ----------------------------------------------------------------

    def to_csv(self, path=None) -> str:
        """Rows k1,k2,re_u1,im_u1,re_u2,im_u2 for every |k|_inf <= M (k = 0 holds the mean)."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["k1", "k2", "re_u1", "im_u1", "re_u2", "im_u2"])
        M = self.M
        for k1 in range(-M, M + 1):
            for k2 in range(-M, M + 1):
                u = self.mean.astype(complex) if k1 == 0 and k2 == 0 else self.coeffs[k1 + M, k2 + M]
                w.writerow([k1, k2] + [repr(float(v)) for v in (u[0].real, u[0].imag, u[1].real, u[1].imag)])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text

    @classmethod
    def from_csv(cls, source) -> "SpectralVelocity":
        text = Path(source).read_text() if not isinstance(source, str) or "\n" not in source else source
        rows = list(csv.DictReader(io.StringIO(text)))
        M = max(max(abs(int(r["k1"])), abs(int(r["k2"]))) for r in rows)
        c = np.zeros((2 * M + 1, 2 * M + 1, 2), complex)
        mean = np.zeros(2)
        for r in rows:
            k1, k2 = int(r["k1"]), int(r["k2"])
            u = np.array([float(r["re_u1"]) + 1j * float(r["im_u1"]), float(r["re_u2"]) + 1j * float(r["im_u2"])])
            if k1 == 0 and k2 == 0:
                mean = u.real
            else:
                c[k1 + M, k2 + M] = u
        return cls(M, c, mean)


# ---------------------------------------------------------------------------
# projection and transforms


def leray_project(u: SpectralVelocity) -> SpectralVelocity:
    k1, k2 = wavenumbers(u.M)
    kk = (k1 * k1 + k2 * k2).astype(float)
    kk[u.M, u.M] = 1.0
    c = u.coeffs
    dot = (k1 * c[..., 0] + k2 * c[..., 1]) / kk
    out = np.stack([c[..., 0] - k1 * dot, c[..., 1] - k2 * dot], axis=-1)
    return SpectralVelocity(u.M, out, np.zeros(2))


def _check_grid(G: int, M: int) -> None:
    if G < 2 * M + 2:
        raise AliasingError(f"grid G={G} aliases modes |k|_inf <= {M}; need G >= {2 * M + 2}")


def _embed(u: SpectralVelocity, G: int) -> np.ndarray:
    """Coefficients laid out in FFT order on a G x G array, shape (G, G, 2)."""
    M = u.M
    full = np.zeros((G, G, 2), complex)
    r = np.arange(-M, M + 1) % G
    full[np.ix_(r, r)] = u.coeffs
    full[0, 0] = u.mean
    return full


def synthesize(u: SpectralVelocity, G: int) -> np.ndarray:
    """Values on the G x G grid theta_j = 2 pi j / G, shape (G, G, 2)."""
    _check_grid(G, u.M)
    full = _embed(u, G)
    return (np.fft.ifft2(full, axes=(0, 1)) * (G * G)).real


def analyze(values: np.ndarray, M: int) -> SpectralVelocity:
    """Trapezoidal Fourier coefficients of (G, G, 2) grid values, retaining |k|_inf <= M."""
    values = np.asarray(values, dtype=float)
    G = values.shape[0]
    _check_grid(G, M)
    full = np.fft.fft2(values, axes=(0, 1)) / (G * G)
    r = np.arange(-M, M + 1) % G
    c = full[np.ix_(r, r)]
    mean = full[0, 0].real
    return SpectralVelocity(M, c, mean)


# ---------------------------------------------------------------------------
# exact solutions and test fields


def taylor_green_exact(t: float, nu: float, M: int = 4) -> SpectralVelocity:
    """e^{-2 nu t} (cos x1 sin x2, -sin x1 cos x2)."""
    a = math.exp(-2.0 * nu * t)
    # u = 1/2 sin(x1+x2) (1,-1) + 1/2 sin(x1-x2) (-1,-1), and sin -> -i/2 e^{ik.x}
    modes = {(1, 1): -0.25j * a * np.array([1.0, -1.0]), (1, -1): -0.25j * a * np.array([-1.0, -1.0])}
    return SpectralVelocity.from_modes(M, modes)


def shear_exact(t: float, nu: float, M: int = 4) -> SpectralVelocity:
    """e^{-nu t} (sin x2, 0)."""
    a = math.exp(-nu * t)
    return SpectralVelocity.from_modes(M, {(0, 1): -0.5j * a * np.array([1.0, 0.0])})


def random_divfree(M: int, rng: np.random.Generator, l2_norm: float = 1.0, decay: float = 0.0) -> SpectralVelocity:
    """Band-limited mean-free solenoidal field with the given L^2 norm."""
    hm = half_modes(M)
    amp = np.linalg.norm(hm, axis=1) ** (-decay)
    c = (rng.standard_normal(len(hm)) + 1j * rng.standard_normal(len(hm))) * amp
    u = SpectralVelocity.from_half(M, c)
    return u.scaled(l2_norm / u.l2_norm())


# ---------------------------------------------------------------------------
# pseudo-spectral reference solver


@dataclass(frozen=True)
class OracleGrid:
    M: int
    G: int

    @classmethod
    def for_modes(cls, M: int) -> "OracleGrid":
        # 2/3 rule: products of retained modes reach 2M, so G >= 3M + 1 keeps them unaliased
        G = 3 * M + 3
        return cls(M, G + (G % 2))


def _vorticity(u: SpectralVelocity) -> np.ndarray:
    k1, k2 = wavenumbers(u.M)
    return 1j * (k1 * u.coeffs[..., 1] - k2 * u.coeffs[..., 0])


def _velocity(w: np.ndarray, M: int) -> np.ndarray:
    k1, k2 = wavenumbers(M)
    kk = (k1 * k1 + k2 * k2).astype(float)
    kk[M, M] = 1.0
    psi = w / kk
    psi[M, M] = 0.0
    return np.stack([1j * k2 * psi, -1j * k1 * psi], axis=-1)


def _grid_scalar(w: np.ndarray, M: int, G: int) -> np.ndarray:
    full = np.zeros((G, G), complex)
    r = np.arange(-M, M + 1) % G
    full[np.ix_(r, r)] = w
    return (np.fft.ifft2(full) * (G * G)).real


def _nonlinear(w: np.ndarray, M: int, G: int) -> tuple[np.ndarray, float]:
    """Fourier coefficients of u.grad(omega) on |k|_inf <= M, and max |u| on the grid."""
    k1, k2 = wavenumbers(M)
    uc = _velocity(w, M)
    u1 = _grid_scalar(uc[..., 0], M, G)
    u2 = _grid_scalar(uc[..., 1], M, G)
    wx = _grid_scalar(1j * k1 * w, M, G)
    wy = _grid_scalar(1j * k2 * w, M, G)
    full = np.fft.fft2(u1 * wx + u2 * wy) / (G * G)
    r = np.arange(-M, M + 1) % G
    return full[np.ix_(r, r)], float(np.max(np.hypot(u1, u2)))


def spectral_ns_step(u: SpectralVelocity, nu: float, dt: float, grid: Optional[OracleGrid] = None) -> SpectralVelocity:
    """One RK4 step of the Galerkin-truncated vorticity equation."""
    grid = grid or OracleGrid.for_modes(u.M)
    M, G = u.M, grid.G
    k1, k2 = wavenumbers(M)
    lap = -(k1 * k1 + k2 * k2).astype(float)

    def rhs(w):
        nl, umax = _nonlinear(w, M, G)
        return -nl + nu * lap * w, umax

    w0 = _vorticity(u)
    r1, umax = rhs(w0)
    if umax * dt * G > 1.0:
        raise CFLError(f"CFL violated: max|u| dt G = {umax * dt * G:.3g} > 1")
    r2, _ = rhs(w0 + 0.5 * dt * r1)
    r3, _ = rhs(w0 + 0.5 * dt * r2)
    r4, _ = rhs(w0 + dt * r3)
    w1 = w0 + dt / 6.0 * (r1 + 2.0 * r2 + 2.0 * r3 + r4)
    # restore exact reality symmetry
    w1 = 0.5 * (w1 + np.conj(w1[::-1, ::-1]))
    return leray_project(SpectralVelocity(M, _velocity(w1, M), np.zeros(2)))


def spectral_ns_solve(
    u0: SpectralVelocity,
    nu: float,
    t_end: float,
    dt: float,
    M: Optional[int] = None,
    record: Iterable[float] = (),
) -> tuple[SpectralVelocity, dict]:
    """Integrate to t_end; returns the final state and the states at requested record times."""
    u = leray_project(u0.resized(M or u0.M))
    grid = OracleGrid.for_modes(u.M)
    n = int(round(t_end / dt))
    if abs(n * dt - t_end) > 1e-9 * max(1.0, t_end):
        raise ValueError(f"t_end={t_end} is not a multiple of dt={dt}")
    want = {int(round(t / dt)): float(t) for t in record}
    out = {}
    if 0 in want:
        out[want[0]] = u
    for s in range(1, n + 1):
        u = spectral_ns_step(u, nu, dt, grid)
        if s in want:
            out[want[s]] = u
    return u, out
