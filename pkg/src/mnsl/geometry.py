"""Embedded-manifold primitives for the flat torus T^n and the unit sphere S^n.

Points and tangent vectors are plain ``numpy`` arrays in ambient orthonormal
components (length ``n`` on the torus, ``n + 1`` on the sphere) with any
number of leading batch axes.  Because the metric is the ambient one in both
cases, the musical isomorphisms are the identity on component arrays.

A :class:`VectorField` is represented by an *extension* to a neighbourhood of
the manifold in ambient space: ``value`` must be tangent on the manifold, and
``jac`` / ``hess`` are the ambient first and second derivatives of that
extension.  Covariant derivatives are tangent projections of ambient ones,
and Lie brackets are ambient brackets of the extensions (which do not depend
on the extension chosen).
"""
from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

TWO_PI = 2.0 * np.pi

Array = np.ndarray


class ManifoldKind(str, enum.Enum):
    TORUS = "torus"
    SPHERE = "sphere"


class ManifoldMismatch(ValueError):
    pass


@dataclass(frozen=True)
class Manifold:
    """Identifier of T^n or S^n with the helpers that depend on the embedding."""

    kind: ManifoldKind
    dim: int

    def __post_init__(self):
        if int(self.dim) < 1:
            raise ValueError(f"manifold dimension must be >= 1, got {self.dim}")
        object.__setattr__(self, "kind", ManifoldKind(self.kind))

    @property
    def ambient_dim(self) -> int:
        return self.dim + 1 if self.kind is ManifoldKind.SPHERE else self.dim

    @property
    def is_sphere(self) -> bool:
        return self.kind is ManifoldKind.SPHERE

    def __str__(self) -> str:
        return f"{'S' if self.is_sphere else 'T'}^{self.dim}"

    def volume(self) -> float:
        """Riemannian volume (standard surface measure on the sphere)."""
        if not self.is_sphere:
            return TWO_PI**self.dim
        from math import gamma, pi

        m = self.dim + 1
        return 2.0 * pi ** (m / 2) / gamma(m / 2)

    # -- points -------------------------------------------------------------

    def _check_ambient(self, w: Array, what: str = "array") -> Array:
        w = np.asarray(w, dtype=float)
        if w.shape[-1:] != (self.ambient_dim,):
            raise ValueError(
                f"{what} for {self} must have trailing length {self.ambient_dim}, got shape {w.shape}"
            )
        return w

    def point(self, coords) -> Array:
        """Validate (sphere) or reduce mod 2*pi (torus) a batch of coordinates."""
        x = self._check_ambient(coords, "point")
        if self.is_sphere:
            err = np.abs(np.linalg.norm(x, axis=-1) - 1.0)
            if np.any(err > 1e-12):
                raise ValueError(f"point not on {self}: | |x| - 1 | = {err.max():.3e}")
            return x
        return np.mod(x, TWO_PI)

    def random_points(self, rng: np.random.Generator, size: int) -> Array:
        if self.is_sphere:
            x = rng.standard_normal((size, self.ambient_dim))
            return x / np.linalg.norm(x, axis=-1, keepdims=True)
        return rng.uniform(0.0, TWO_PI, size=(size, self.dim))

    def random_tangents(self, rng: np.random.Generator, x: Array, unit: bool = False) -> Array:
        w = self.project_tangent(x, rng.standard_normal(np.shape(x)))
        if unit:
            w = w / np.linalg.norm(w, axis=-1, keepdims=True)
        return w

    # -- tangent spaces -----------------------------------------------------

    def project_tangent(self, x: Array, w: Array) -> Array:
        """Orthogonal projection of ambient ``w`` onto T_xM."""
        x = self._check_ambient(x, "point")
        w = self._check_ambient(w, "vector")
        if not self.is_sphere:
            return np.broadcast_to(w, np.broadcast_shapes(x.shape, w.shape)).copy()
        return w - np.sum(x * w, axis=-1, keepdims=True) * x

    def projector(self, x: Array) -> Array:
        """Matrix of the tangent projection, shape ``x.shape + (m,)``."""
        x = np.asarray(x, dtype=float)
        eye = np.eye(self.ambient_dim)
        if not self.is_sphere:
            return np.broadcast_to(eye, x.shape + (self.ambient_dim,)).copy()
        return eye - x[..., :, None] * x[..., None, :]

    def tangent_basis(self, x: Array) -> Array:
        """Orthonormal frame of T_xM as columns, shape ``x.shape[:-1] + (m, n)``.

        On the sphere this is built from the Householder reflection sending the
        last standard vector to -sign(x_m) x, oriented so that det[E, x] = 1.
        """
        x = self._check_ambient(x, "point")
        m = self.ambient_dim
        if not self.is_sphere:
            return np.broadcast_to(np.eye(m), x.shape[:-1] + (m, m)).copy()
        s = np.where(x[..., -1] >= 0.0, 1.0, -1.0)
        w = x.copy()
        w[..., -1] += s
        h = np.eye(m) - 2.0 * w[..., :, None] * w[..., None, :] / np.sum(w * w, axis=-1)[..., None, None]
        e = h[..., :, : self.dim].copy()
        # h e_m = -s x and det h = -1, so scaling column 0 by s gives det[E, x] = +1
        e[..., :, 0] *= s[..., None]
        return e

    def exp(self, x: Array, v: Array) -> Array:
        """Geodesic endpoint exp_x(v)."""
        x = np.asarray(x, dtype=float)
        v = np.asarray(v, dtype=float)
        if not self.is_sphere:
            return x + v
        r = np.linalg.norm(v, axis=-1, keepdims=True)
        safe = np.where(r > 0.0, r, 1.0)
        return np.cos(r) * x + np.where(r > 0.0, np.sin(r) / safe, 1.0) * v

    def displacement(self, x: Array, y: Array) -> Array:
        """Ambient difference y - x, using the periodic lift on the torus."""
        d = np.asarray(y, dtype=float) - np.asarray(x, dtype=float)
        if self.is_sphere:
            return d
        return (d + np.pi) % TWO_PI - np.pi


def Torus(n: int = 2) -> Manifold:
    return Manifold(ManifoldKind.TORUS, n)


def Sphere(n: int = 2) -> Manifold:
    return Manifold(ManifoldKind.SPHERE, n)


# flat/sharp are identities on orthonormal components
def flat(u: Array) -> Array:
    return u


def sharp(theta: Array) -> Array:
    return theta


class CapabilityError(RuntimeError):
    """A field lacks a derivative closure needed by an operation."""


@dataclass(frozen=True)
class VectorField:
    """Smooth vector field given by closures over ambient coordinates.

    ``value(x)`` has shape ``x.shape``; ``jac(x)`` has shape ``x.shape + (m,)``
    with ``jac[..., a, b] = d value_a / d x_b``; ``hess(x)`` adds a third axis,
    ``hess[..., a, b, c] = d^2 value_a / d x_b d x_c``.  ``div`` is optional;
    when absent it is computed as the trace of the covariant derivative.
    """

    manifold: Manifold
    value: Callable[[Array], Array]
    jac: Optional[Callable[[Array], Array]] = None
    hess: Optional[Callable[[Array], Array]] = None
    div: Optional[Callable[[Array], Array]] = None
    label: str = ""

    def __call__(self, x):
        return self.value(np.asarray(x, dtype=float))

    def deriv(self, x: Array, v: Array) -> Array:
        """Covariant derivative nabla_v A at x (analytic closure)."""
        if self.jac is None:
            raise CapabilityError(f"field {self.label or '<anon>'} has no jacobian closure")
        x = np.asarray(x, dtype=float)
        jv = np.einsum("...ab,...b->...a", self.jac(x), v)
        return self.manifold.project_tangent(x, jv)

    def deriv2(self, x: Array, v: Array, w: Array) -> Array:
        """Ambient second derivative of the extension, D^2A(x)[v, w]."""
        if self.hess is None:
            raise CapabilityError(f"field {self.label or '<anon>'} has no hessian closure")
        return np.einsum("...abc,...b,...c->...a", self.hess(np.asarray(x, dtype=float)), v, w)

    def scaled(self, c: float, label: str | None = None) -> "VectorField":
        c = float(c)
        return VectorField(
            self.manifold,
            lambda x: c * self.value(x),
            None if self.jac is None else (lambda x: c * self.jac(x)),
            None if self.hess is None else (lambda x: c * self.hess(x)),
            None if self.div is None else (lambda x: c * self.div(x)),
            label or self.label,
        )


def zero_field(manifold: Manifold) -> VectorField:
    m = manifold.ambient_dim

    def val(x):
        return np.zeros(np.shape(x))

    def jac(x):
        return np.zeros(np.shape(x) + (m,))

    def hess(x):
        return np.zeros(np.shape(x) + (m, m))

    def div(x):
        return np.zeros(np.shape(x)[:-1])

    return VectorField(manifold, val, jac, hess, div, "zero")


def add_fields(*fields: VectorField, label: str = "") -> VectorField:
    manifold = _common_manifold(*fields)
    has = lambda name: all(getattr(f, name) is not None for f in fields)  # noqa: E731

    def total(name):
        return lambda x: sum(getattr(f, name)(x) for f in fields)

    return VectorField(
        manifold,
        total("value"),
        total("jac") if has("jac") else None,
        total("hess") if has("hess") else None,
        total("div") if has("div") else None,
        label,
    )


def _common_manifold(*fields: VectorField) -> Manifold:
    manifold = fields[0].manifold
    for f in fields[1:]:
        if f.manifold != manifold:
            raise ManifoldMismatch(f"fields live on {manifold} and {f.manifold}")
    return manifold


# ---------------------------------------------------------------------------
# operations


def project_tangent(manifold: Manifold, x: Array, w: Array) -> Array:
    return manifold.project_tangent(x, w)


def fd_covariant_derivative(A: VectorField, x: Array, v: Array, h: float = 1e-5) -> Array:
    """Central difference of A along the geodesic through x with velocity v."""
    M = A.manifold
    x = np.asarray(x, dtype=float)
    v = np.asarray(v, dtype=float)
    fwd = A(M.exp(x, h * v))
    bwd = A(M.exp(x, -h * v))
    return M.project_tangent(x, (fwd - bwd) / (2.0 * h))


def covariant_derivative(A: VectorField, x: Array, v: Array, method: str = "auto", h: float = 1e-5) -> Array:
    """nabla_v A at x; the analytic closure is used when present ("auto")."""
    if method not in ("auto", "analytic", "fd"):
        raise ValueError(f"unknown method {method!r}")
    if method == "fd" or (method == "auto" and A.jac is None):
        return fd_covariant_derivative(A, x, v, h)
    return A.deriv(x, v)


def lie_bracket(A: VectorField, B: VectorField, x: Array) -> Array:
    """[A, B](x) = nabla_{A(x)} B - nabla_{B(x)} A."""
    _common_manifold(A, B)
    x = np.asarray(x, dtype=float)
    return covariant_derivative(B, x, A(x)) - covariant_derivative(A, x, B(x))


def bracket_field(A: VectorField, B: VectorField) -> VectorField:
    """The field [A, B] with an ambient jacobian when both inputs carry hessians.

    Uses the ambient bracket DB.A - DA.B of the extensions, which is tangent on
    the manifold whenever both extensions are.
    """
    M = _common_manifold(A, B)
    if A.jac is None or B.jac is None:
        raise CapabilityError("bracket_field needs jacobian closures on both fields")

    def val(x):
        ja, jb = A.jac(x), B.jac(x)
        return np.einsum("...ab,...b->...a", jb, A(x)) - np.einsum("...ab,...b->...a", ja, B(x))

    jac = None
    if A.hess is not None and B.hess is not None:

        def jac(x):
            a, b = A(x), B(x)
            ja, jb = A.jac(x), B.jac(x)
            return (
                np.einsum("...akc,...k->...ac", B.hess(x), a)
                + _matmul(jb, ja)
                - np.einsum("...akc,...k->...ac", A.hess(x), b)
                - _matmul(ja, jb)
            )

    return VectorField(M, val, jac, None, None, f"[{A.label},{B.label}]")


def _matmul(p: Array, q: Array) -> Array:
    return np.einsum("...ak,...kc->...ac", p, q)


def divergence(A: VectorField, x: Array, method: str = "auto") -> Array:
    """Trace of v -> nabla_v A over an orthonormal frame of T_xM."""
    M = A.manifold
    x = np.asarray(x, dtype=float)
    frame = M.tangent_basis(x)
    total = np.zeros(x.shape[:-1])
    for j in range(M.dim):
        e = frame[..., :, j]
        total = total + np.sum(covariant_derivative(A, x, e, method=method) * e, axis=-1)
    return total
