"""Explicit vector-field families: torus Fourier modes, sphere gradient and Killing fields.

Every family stores its fields in stacked form so that all members can be
evaluated at a batch of points in one call (:meth:`FieldFamily.evaluate`);
the per-member :class:`~mnsl.geometry.VectorField` objects are views onto the
same closures.
"""
from __future__ import annotations

import enum
import itertools
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .geometry import Array, Manifold, Sphere, Torus, VectorField


class FamilyKind(str, enum.Enum):
    TORUS_FOURIER = "TorusFourier"
    SPHERE_GRADIENT = "SphereGradient"
    SPHERE_KILLING = "SphereKilling"


class ConstraintError(ValueError):
    pass


@dataclass(frozen=True)
class FamilySpec:
    kind: FamilyKind
    n: int
    beta: Optional[float] = None
    K: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, "kind", FamilyKind(self.kind))
        errors = self.violations()
        if errors:
            raise ConstraintError("; ".join(errors))

    def violations(self) -> list[str]:
        out = []
        if self.kind is FamilyKind.TORUS_FOURIER:
            if self.n < 2:
                out.append(f"TorusFourier needs n >= 2, got {self.n}")
            if self.beta is None or not self.beta > self.n / 2:
                out.append(f"TorusFourier needs beta > n/2 = {self.n / 2}, got {self.beta}")
            if self.K is None or int(self.K) < 1:
                out.append(f"TorusFourier needs K >= 1, got {self.K}")
        elif self.kind is FamilyKind.SPHERE_KILLING and self.n < 2:
            out.append(f"SphereKilling needs n >= 2, got {self.n}")
        elif self.n < 1:
            out.append(f"n must be >= 1, got {self.n}")
        return out

    @property
    def manifold(self) -> Manifold:
        return Torus(self.n) if self.kind is FamilyKind.TORUS_FOURIER else Sphere(self.n)

    def to_dict(self) -> dict:
        d = {"kind": self.kind.value, "n": self.n}
        if self.kind is FamilyKind.TORUS_FOURIER:
            d.update(beta=self.beta, K=self.K)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "FamilySpec":
        unknown = set(d) - {"kind", "n", "beta", "K"}
        if unknown:
            raise ConstraintError(f"unknown family keys: {sorted(unknown)}")
        return cls(d["kind"], int(d["n"]), d.get("beta"), None if d.get("K") is None else int(d["K"]))


Stacked = Callable[[Array], Array]


@dataclass(frozen=True)
class FieldFamily:
    """Indexed family {A_i} with its normalisation constant nu0.

    ``values(x)``, ``jacs(x)``, ``hessians(x)``, ``divs(x)`` evaluate every member
    at once and put the member axis right after the batch axes:
    shapes ``x.shape[:-1] + (F, m)``, ``(F, m, m)``, ``(F, m, m, m)``, ``(F,)``.
    """

    spec: FamilySpec
    labels: tuple
    nu0: float
    values: Stacked
    jacs: Stacked
    hessians: Stacked
    divs: Stacked
    scale: float = 1.0
    tail_bound: Optional[float] = None
    fields: tuple = field(default=(), compare=False, repr=False)

    def __post_init__(self):
        if not self.nu0 > 0:
            raise ConstraintError(f"nu0 must be positive, got {self.nu0}")
        if not self.fields:
            object.__setattr__(self, "fields", tuple(self._member(i) for i in range(len(self.labels))))

    @property
    def manifold(self) -> Manifold:
        return self.spec.manifold

    def __len__(self) -> int:
        return len(self.labels)

    def __getitem__(self, i: int) -> VectorField:
        return self.fields[i]

    def index(self, label) -> int:
        return self.labels.index(label)

    def _member(self, i: int) -> VectorField:
        return VectorField(
            self.manifold,
            lambda x: self.values(x)[..., i, :],
            lambda x: self.jacs(x)[..., i, :, :],
            lambda x: self.hessians(x)[..., i, :, :, :],
            lambda x: self.divs(x)[..., i],
            str(self.labels[i]),
        )

    def normalized(self) -> "FieldFamily":
        """The family scaled by 1/sqrt(nu0), so that condition (a) holds with constant 1."""
        if self.nu0 == 1.0:
            return self
        c = 1.0 / math.sqrt(self.nu0)
        return FieldFamily(
            self.spec,
            self.labels,
            1.0,
            lambda x: c * self.values(x),
            lambda x: c * self.jacs(x),
            lambda x: c * self.hessians(x),
            lambda x: c * self.divs(x),
            scale=self.scale * c,
            tail_bound=None if self.tail_bound is None else self.tail_bound / self.nu0,
        )

    def sde_threshold_warning(self) -> None:
        """Warn when the torus family is too rough to generate a C^1 flow."""
        s = self.spec
        if s.kind is FamilyKind.TORUS_FOURIER and s.beta <= 2 + s.n / 2:
            warnings.warn(
                f"TorusFourier beta={s.beta} <= 2 + n/2 = {2 + s.n / 2}: the SDE driven by this "
                "family is not guaranteed to define a C^1 stochastic flow",
                stacklevel=3,
            )


# ---------------------------------------------------------------------------
# torus


def lattice_modes(n: int, K: int) -> np.ndarray:
    """All k in Z^n \\ {0} with |k|_inf <= K, in lexicographic order."""
    rng = range(-K, K + 1)
    ks = [k for k in itertools.product(rng, repeat=n) if any(k)]
    return np.array(ks, dtype=np.int64).reshape(-1, n)


def orthonormal_complement(k: np.ndarray) -> np.ndarray:
    """Rows e_{k,1..n-1}: an orthonormal basis of k^perp.

    n = 2 uses e_{k,1} = (k2, -k1)/|k|.  For n >= 3, Gram-Schmidt runs over
    k/|k| followed by the standard basis in index order; standard vectors that
    are (numerically) in the span already collected are skipped.
    """
    k = np.asarray(k, dtype=float)
    n = k.size
    nk = np.linalg.norm(k)
    if n == 2:
        return np.array([[k[1] / nk, -k[0] / nk]])
    basis = [k / nk]
    for j in range(n):
        w = np.zeros(n)
        w[j] = 1.0
        for b in basis:
            w = w - np.dot(w, b) * b
        r = np.linalg.norm(w)
        if r > 1e-10:
            basis.append(w / r)
        if len(basis) == n:
            break
    return np.array(basis[1:])


def nu0_truncated(n: int, beta: float, K: int) -> float:
    from .structure import lattice_sums

    # (n-1)/n * sum |k|^-2beta, via the equal diagonal sums sum k_1^2 |k|^(-2beta-2)
    return (n - 1) * float(lattice_sums(n, beta, K).diag[0])


def nu0_tail_bound(n: int, beta: float, K: int) -> float:
    """Upper bound on nu0(infinity) - nu0(K).

    The shell |k|_inf = m holds (2m+1)^n - (2m-1)^n <= 2n(2m+1)^(n-1)
    <= C_n m^(n-1) lattice points with C_n = 2n 3^(n-1), each with |k| >= m, so

        sum_{|k|_inf > K} |k|^(-2 beta) <= C_n sum_{m > K} m^(n-1-2beta)
                                        <= C_n K^(n-2beta) / (2beta - n),

    the last step being integral comparison for the decreasing summand.
    """
    if not beta > n / 2:
        raise ConstraintError(f"beta must exceed n/2 = {n / 2}")
    c_n = 2 * n * 3 ** (n - 1)
    return (n - 1) / n * c_n * float(K) ** (n - 2 * beta) / (2 * beta - n)


def build_torus_family(n: int, beta: float, K: int) -> FieldFamily:
    spec = FamilySpec(FamilyKind.TORUS_FOURIER, n, float(beta), int(K))
    modes = lattice_modes(n, K)
    ks, es, phase, labels = [], [], [], []
    for k in modes:
        for i, e in enumerate(orthonormal_complement(k), start=1):
            for kind in ("cos", "sin"):
                ks.append(k)
                es.append(e)
                phase.append(kind == "sin")
                labels.append((tuple(int(c) for c in k), i, kind))
    kf = np.array(ks, dtype=float)
    amp = np.linalg.norm(kf, axis=1) ** (-float(beta))
    ea = np.array(es) * amp[:, None]          # |k|^-beta e_{k,i}
    is_sin = np.array(phase)
    # sin(y) = cos(y - pi/2)
    shift = np.where(is_sin, -0.5 * np.pi, 0.0)

    def arg(x):
        return np.asarray(x, dtype=float) @ kf.T + shift

    def values(x):
        return np.cos(arg(x))[..., None] * ea

    def jacs(x):
        s = -np.sin(arg(x))
        return s[..., None, None] * ea[:, :, None] * kf[:, None, :]

    def hessians(x):
        c = -np.cos(arg(x))
        return c[..., None, None, None] * ea[:, :, None, None] * kf[:, None, :, None] * kf[:, None, None, :]

    def divs(x):
        return np.zeros(np.shape(x)[:-1] + (len(labels),))

    fam = FieldFamily(
        spec,
        tuple(labels),
        nu0_truncated(n, beta, K),
        values,
        jacs,
        hessians,
        divs,
        tail_bound=nu0_tail_bound(n, beta, K),
    )
    object.__setattr__(fam, "_modes", kf)
    return fam


# ---------------------------------------------------------------------------
# sphere


def build_sphere_gradient_family(n: int) -> FieldFamily:
    """A_i(x) = e_i - <x, e_i> x for i = 1..n+1 (nu0 = 1)."""
    spec = FamilySpec(FamilyKind.SPHERE_GRADIENT, n)
    m = n + 1
    eye = np.eye(m)
    # hess[i, a, b, c] = -delta_ac delta_ib - delta_ic delta_ab
    hess_const = -(np.einsum("ac,ib->iabc", eye, eye) + np.einsum("ic,ab->iabc", eye, eye))

    def values(x):
        x = np.asarray(x, dtype=float)
        return eye - x[..., :, None] * x[..., None, :]

    def jacs(x):
        x = np.asarray(x, dtype=float)
        # jac[i, a, b] = -x_a delta_ib - x_i delta_ab
        return -(x[..., None, :, None] * eye[:, None, :]) - x[..., :, None, None] * eye

    def hessians(x):
        return np.broadcast_to(hess_const, np.shape(x)[:-1] + hess_const.shape)

    def divs(x):
        return -n * np.asarray(x, dtype=float)

    return FieldFamily(spec, tuple(range(1, m + 1)), 1.0, values, jacs, hessians, divs)


def skew_basis(m: int) -> tuple[list[tuple[int, int]], np.ndarray]:
    """Labels (i, j), 1 <= i < j <= m, and the matrices X^(ij) = E_ij - E_ji."""
    labels = [(i, j) for i in range(1, m + 1) for j in range(i + 1, m + 1)]
    mats = np.zeros((len(labels), m, m))
    for f, (i, j) in enumerate(labels):
        mats[f, i - 1, j - 1] = 1.0
        mats[f, j - 1, i - 1] = -1.0
    return labels, mats


def build_sphere_killing_family(n: int) -> FieldFamily:
    """Fundamental fields A_X(x) = X x of the basis X^(ij) of so(n+1).

    With this basis sum_{i<j} <X^(ij) x, u>^2 = |x|^2 |u|^2 - <x, u>^2, so
    condition (a) holds on the unit sphere with nu0 = 1 and no rescaling.
    """
    spec = FamilySpec(FamilyKind.SPHERE_KILLING, n)
    m = n + 1
    labels, mats = skew_basis(m)

    def values(x):
        return np.einsum("fab,...b->...fa", mats, np.asarray(x, dtype=float))

    def jacs(x):
        return np.broadcast_to(mats, np.shape(x)[:-1] + mats.shape)

    def hessians(x):
        return np.zeros(np.shape(x)[:-1] + mats.shape + (m,))

    def divs(x):
        return np.zeros(np.shape(x)[:-1] + (len(labels),))

    fam = FieldFamily(spec, tuple(labels), 1.0, values, jacs, hessians, divs)
    object.__setattr__(fam, "_matrices", mats)
    return fam


def build_family(spec: FamilySpec) -> FieldFamily:
    if spec.kind is FamilyKind.TORUS_FOURIER:
        return build_torus_family(spec.n, spec.beta, spec.K)
    if spec.kind is FamilyKind.SPHERE_GRADIENT:
        return build_sphere_gradient_family(spec.n)
    return build_sphere_killing_family(spec.n)


def killing_field(X: Array, label: str = "") -> VectorField:
    """The fundamental field A_X(x) = X x on S^n for a skew matrix X of order n+1."""
    X = as_skew(X)
    m = X.shape[0]
    return VectorField(
        Sphere(m - 1),
        lambda x: np.einsum("ab,...b->...a", X, np.asarray(x, dtype=float)),
        lambda x: np.broadcast_to(X, np.shape(x)[:-1] + X.shape),
        lambda x: np.zeros(np.shape(x)[:-1] + X.shape + (m,)),
        lambda x: np.zeros(np.shape(x)[:-1]),
        label or "A_X",
    )


def torus_mode_field(k, kind: str = "cos", beta: float = 0.0, i: int = 1) -> VectorField:
    """|k|^-beta cos(k.theta) e_{k,i} (or sin) as a standalone field on T^n."""
    k = np.asarray(k, dtype=float)
    n = k.size
    e = orthonormal_complement(k)[i - 1] * np.linalg.norm(k) ** (-beta)
    shift = -0.5 * np.pi if kind == "sin" else 0.0

    def arg(x):
        return np.asarray(x, dtype=float) @ k + shift

    return VectorField(
        Torus(n),
        lambda x: np.cos(arg(x))[..., None] * e,
        lambda x: -np.sin(arg(x))[..., None, None] * np.outer(e, k),
        lambda x: -np.cos(arg(x))[..., None, None, None] * np.einsum("a,b,c->abc", e, k, k),
        lambda x: np.zeros(np.shape(x)[:-1]),
        f"{kind}{tuple(int(c) for c in k)}",
    )


# ---------------------------------------------------------------------------
# so(n+1)


def as_skew(X, tol: float = 1e-14) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[0] != X.shape[1]:
        raise ValueError(f"skew matrix must be square, got shape {X.shape}")
    if np.any(np.abs(X + X.T) > tol):
        raise ValueError("matrix is not skew-symmetric")
    return X


def so_bracket(X, Y) -> np.ndarray:
    X, Y = as_skew(X), as_skew(Y)
    if X.shape != Y.shape:
        raise ValueError(f"dimension mismatch {X.shape} vs {Y.shape}")
    return X @ Y - Y @ X


def killing_form(X, Y, n: int) -> float:
    """B(X, Y) = (n - 1) Tr(XY) on so(n+1)."""
    X, Y = as_skew(X), as_skew(Y)
    if X.shape != (n + 1, n + 1) or Y.shape != X.shape:
        raise ValueError(f"matrices must have order n+1 = {n + 1}")
    return float((n - 1) * np.trace(X @ Y))
