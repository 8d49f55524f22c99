"""Numerical verification of the structural conditions on field families.

All checks are pointwise identities evaluated on batches of points; each
returns a :class:`ConditionReport` that records the seed used to draw probes.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.linalg import expm

from .families import (
    FamilyKind,
    FieldFamily,
    build_sphere_killing_family,
    killing_field,
    skew_basis,
    so_bracket,
    torus_mode_field,
)
from .geometry import (
    Array,
    CapabilityError,
    Manifold,
    Sphere,
    VectorField,
    bracket_field,
    divergence,
    lie_bracket,
)


class Condition(str, enum.Enum):
    A = "A"
    B = "B"
    C = "C"
    D = "D"
    SUM_DIV_AI = "SumDivAi"
    C_TENSOR = "CTensor"
    BRACKET_DIVFREE = "BracketDivFree"
    LIE_LAPLACIAN = "LieLaplacian"
    KILLING_BRACKET = "KillingBracket"
    KILLING_ADJOINT = "KillingAdjoint"
    KILLING_GEODESIC = "KillingGeodesic"
    D_DEFECT = "DDefect"
    GRAD_NABLA = "GradNabla"
    GRAD_DIV = "GradDiv"
    GRAD_SUM_DIV = "GradSumDiv"
    GRAD_B = "GradB"
    GRAD_C = "GradC"
    GRAD_D_DEFECT = "GradDDefect"


class PreconditionError(ValueError):
    pass


@dataclass(frozen=True)
class ConditionReport:
    condition: Condition
    max_residual: float
    points_tested: int
    tol: float
    family: str = ""
    seed: Optional[int] = None
    witness: Optional[tuple] = None
    note: str = ""

    @property
    def holds(self) -> bool:
        return bool(self.max_residual <= self.tol)

    @property
    def verdict(self) -> str:
        return "Holds" if self.holds else "Fails"

    def to_dict(self) -> dict:
        return {
            "condition": Condition(self.condition).value,
            "family": self.family,
            "verdict": self.verdict,
            "max_residual": float(self.max_residual),
            "tol": float(self.tol),
            "points_tested": int(self.points_tested),
            "seed": self.seed,
            "witness": None if self.witness is None else [float(c) for c in self.witness],
            "note": self.note,
        }


def _report(cond, resid: Array, x: Array, tol: float, family: str = "", seed=None, note: str = "") -> ConditionReport:
    resid = np.asarray(resid, dtype=float).reshape(-1)
    j = int(np.argmax(resid))
    worst = float(resid[j])
    witness = None if worst <= tol else tuple(np.asarray(x).reshape(resid.size, -1)[j])
    return ConditionReport(Condition(cond), worst, resid.size, tol, family, seed, witness, note)


def _points(points) -> Array:
    x = np.asarray(points, dtype=float)
    if x.ndim != 2 or x.shape[0] == 0:
        raise ValueError("need a non-empty (P, m) batch of points")
    return x


def _family_name(family: FieldFamily) -> str:
    s = family.spec
    if s.kind is FamilyKind.TORUS_FOURIER:
        return f"{s.kind.value}(n={s.n},beta={s.beta:g},K={s.K})"
    return f"{s.kind.value}(n={s.n})"


def _dot(a: Array, b: Array) -> Array:
    return np.sum(a * b, axis=-1)


def _proj(x: Array, w: Array, M: Manifold) -> Array:
    """Tangent projection broadcasting x over a member axis of w."""
    if not M.is_sphere:
        return w
    xb = x[:, None, :] if w.ndim == 3 else x
    return w - _dot(xb, w)[..., None] * xb


def _nabla(family: FieldFamily, x: Array, v: Array) -> Array:
    """nabla_v A_i at x for every member; v has shape (P, m)."""
    jv = np.einsum("pfab,pb->pfa", family.jacs(x), v)
    return _proj(x, jv, family.manifold)


def default_probe(M: Manifold) -> VectorField:
    if M.is_sphere:
        _, mats = skew_basis(M.ambient_dim)
        return killing_field(mats[0], "A^(12)")
    k = np.zeros(M.dim)
    k[0] = 1.0
    k[-1] = 1.0
    return torus_mode_field(k, "sin")


def condition_d_field(family: FieldFamily, B: VectorField, x: Array) -> Array:
    """sum_i div(A_i) (L_{A_i} B)(x), shape (P, m)."""
    a = family.values(x)
    ja = family.jacs(x)
    d = family.divs(x)
    b = B(x)
    jb = B.jac(x)
    lie = np.einsum("pab,pfb->pfa", jb, a) - np.einsum("pfab,pb->pfa", ja, b)
    return _proj(x, np.einsum("pf,pfa->pa", d, lie), family.manifold)


def check_condition(
    family: FieldFamily,
    which,
    points,
    probes=None,
    tol: float = 1e-12,
    seed: Optional[int] = None,
    tensor: bool = False,
) -> ConditionReport:
    """Evaluate one of the conditions (a)-(d) on a batch of points.

    The family is first scaled by 1/sqrt(nu0), so (a) is tested against the
    constant 1.  ``probes``: (a) unit tangents (P, m); (c) a triple of tangent
    batches (V, a, b); (d) a probe field B.  Missing probes are drawn from
    ``np.random.default_rng(seed)``.  ``tensor=True`` tests the stronger,
    non-antisymmetrised form of (c).
    """
    which = Condition(str(which).upper() if str(which).lower() in "abcd" else which)
    x = _points(points)
    fam = family.normalized()
    M = fam.manifold
    rng = np.random.default_rng(seed)
    name = _family_name(family)

    if which is Condition.A:
        u = M.random_tangents(rng, x, unit=True) if probes is None else np.asarray(probes, float)
        s = np.sum(_dot(fam.values(x), u[:, None, :]) ** 2, axis=1)
        resid = np.abs(s - _dot(u, u))
        return _report(which, resid, x, tol, name, seed)
    if which is Condition.B:
        a = fam.values(x)
        s = _proj(x, np.einsum("pfab,pfb->pa", fam.jacs(x), a), M)
        return _report(which, np.linalg.norm(s, axis=-1), x, tol, name, seed)
    if which is Condition.C:
        if probes is None:
            V, a, b = (M.random_tangents(rng, x) for _ in range(3))
        else:
            V, a, b = (np.asarray(p, float) for p in probes)
        A = fam.values(x)
        N = _nabla(fam, x, V)
        Aa, Ab = _dot(A, a[:, None]), _dot(A, b[:, None])
        Na, Nb = _dot(N, a[:, None]), _dot(N, b[:, None])
        if tensor:
            resid = np.abs(np.sum(Aa * Nb, axis=1))
            return _report(Condition.C_TENSOR, resid, x, tol, name, seed)
        resid = np.abs(np.sum(Aa * Nb - Ab * Na, axis=1))
        return _report(which, resid, x, tol, name, seed)
    if which is Condition.D:
        B = default_probe(M) if probes is None else probes
        s = condition_d_field(fam, B, x)
        return _report(which, np.linalg.norm(s, axis=-1), x, tol, name, seed, note=f"probe {B.label}")
    raise ValueError(f"not a basic condition: {which}")


def check_sum_div_Ai(family: FieldFamily, points, tol: float = 1e-13, seed=None) -> ConditionReport:
    x = _points(points)
    fam = family.normalized()
    s = np.einsum("pf,pfa->pa", fam.divs(x), fam.values(x))
    return _report(Condition.SUM_DIV_AI, np.linalg.norm(s, axis=-1), x, tol, _family_name(family), seed)


def check_bracket_divfree(A: VectorField, B: VectorField, points, tol: float = 1e-8) -> ConditionReport:
    """|div [A, B]| with the divergence taken by finite-difference trace."""
    x = _points(points)
    for F in (A, B):
        d = np.max(np.abs(divergence(F, x)))
        if d > tol:
            raise PreconditionError(f"field {F.label or '<anon>'} has divergence {d:.3e} > {tol:g}")
    M = A.manifold
    C = VectorField(M, lambda y: lie_bracket(A, B, y), label=f"[{A.label},{B.label}]")
    resid = np.abs(divergence(C, x, method="fd"))
    return _report(Condition.BRACKET_DIVFREE, resid, x, tol, C.label)


def lie_laplacian_apply(family: FieldFamily, v: VectorField, x) -> Array:
    """sum_i L_{A_i} L_{A_i} v at x, expanded through second derivatives.

    With W = [A, v] = Jv A - JA v the ambient jacobian of W is
    Hv[., A] + Jv JA - HA[., v] - JA Jv, and L_A W = DW A - JA W.
    """
    if v.jac is None or v.hess is None:
        raise CapabilityError(f"field {v.label or '<anon>'} needs jac and hess closures")
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    a, ja, ha = family.values(x), family.jacs(x), family.hessians(x)
    b, jb, hb = v(x), v.jac(x), v.hess(x)
    Ja_a = np.einsum("pfab,pfb->pfa", ja, a)
    W = np.einsum("pab,pfb->pfa", jb, a) - np.einsum("pfab,pb->pfa", ja, b)
    DWa = (
        np.einsum("pabc,pfb,pfc->pfa", hb, a, a)
        + np.einsum("pab,pfb->pfa", jb, Ja_a)
        - np.einsum("pfabc,pb,pfc->pfa", ha, b, a)
        - np.einsum("pfab,pfb->pfa", ja, np.einsum("pbc,pfc->pfb", jb, a))
    )
    out = np.sum(DWa - np.einsum("pfab,pfb->pfa", ja, W), axis=1)
    out = family.manifold.project_tangent(x, out)
    return out[0] if single else out


def check_lie_laplacian(
    family: FieldFamily, v: VectorField, eigenvalue: float, points, tol: float, relative: bool = True
) -> ConditionReport:
    """Max (relative) gap between sum_i L_{A_i}^2 v and -eigenvalue * v (family scaled by 1/sqrt(nu0))."""
    x = _points(points)
    got = lie_laplacian_apply(family.normalized(), v, x)
    want = -eigenvalue * v(x)
    gap = np.linalg.norm(got - want, axis=-1)
    if relative:
        gap = gap / np.max(np.linalg.norm(want, axis=-1))
    return _report(Condition.LIE_LAPLACIAN, gap, x, tol, _family_name(family), note=f"v={v.label}")


def hodge_tolerance(family: FieldFamily, floor: float = 1e-12) -> float:
    """Relative tolerance for the truncated torus identity.

    Scaled by its own nu0(K) the truncated family satisfies the identity up to
    rounding; against the untruncated normalisation the gap is the relative
    tail (nu0(inf) - nu0(K)) / nu0(K), bounded through nu0_tail_bound.
    """
    if family.tail_bound is None:
        return floor
    return floor + family.tail_bound / family.nu0


def check_killing_props(n: int, points, tol: float = 1e-10, seed: Optional[int] = 0, n_rotations: int = 4) -> list:
    """Bracket, adjoint-equivariance and geodesic-point identities for the S^n Killing fields."""
    x = _points(points)
    m = n + 1
    labels, mats = skew_basis(m)
    fam = build_sphere_killing_family(n)
    rng = np.random.default_rng(seed)
    out = []

    # A_[xi,eta] = -[A_xi, A_eta]
    gap = np.zeros(x.shape[0])
    for p in range(len(labels)):
        for q in range(len(labels)):
            lhs = killing_field(so_bracket(mats[p], mats[q]))(x)
            rhs = -lie_bracket(fam[p], fam[q], x)
            gap = np.maximum(gap, np.linalg.norm(lhs - rhs, axis=-1))
    out.append(_report(Condition.KILLING_BRACKET, gap, x, tol, f"SphereKilling(n={n})", seed))

    # (g^-1)_* A_xi = A_{Ad_{g^-1} xi}, pushing through x -> g x
    gap = np.zeros(x.shape[0])
    for _ in range(n_rotations):
        S = rng.standard_normal((m, m))
        g = expm(S - S.T)
        gi = g.T
        for p in range(len(labels)):
            lhs = np.einsum("ab,pb->pa", gi, fam[p](x @ g.T))
            ad = gi @ mats[p] @ g
            rhs = killing_field(0.5 * (ad - ad.T))(x)
            gap = np.maximum(gap, np.linalg.norm(lhs - rhs, axis=-1))
    out.append(_report(Condition.KILLING_ADJOINT, gap, x, tol, f"SphereKilling(n={n})", seed))

    # nabla_{A_xi} A_eta(e_m) = 0 for xi, eta in span{X^(i,m)}
    pole = np.zeros((1, m))
    pole[0, -1] = 1.0
    idx = [f for f, (i, j) in enumerate(labels) if j == m]
    coef = rng.standard_normal((2, len(idx)))
    xi = np.einsum("f,fab->ab", coef[0], mats[idx])
    eta = np.einsum("f,fab->ab", coef[1], mats[idx])
    res = [np.linalg.norm(fam[q].deriv(pole, fam[p](pole))) for p in idx for q in idx]
    res.append(np.linalg.norm(killing_field(eta).deriv(pole, killing_field(xi)(pole))))
    out.append(_report(Condition.KILLING_GEODESIC, np.array(res), np.repeat(pole, len(res), 0), tol,
                       f"SphereKilling(n={n})", seed))
    return out


def gradient_identities(n: int, points, B: Optional[VectorField] = None, tol: float = 1e-12,
                   defect_tol: float = 1e-10, seed: Optional[int] = None) -> list:
    """Closed-form identities for the gradient system A_i(x) = e_i - <x, e_i> x on S^n."""
    from .families import build_sphere_gradient_family

    x = _points(points)
    M = Sphere(n)
    fam = build_sphere_gradient_family(n)
    rng = np.random.default_rng(seed)
    name = f"SphereGradient(n={n})"
    v = M.random_tangents(rng, x)
    out = []

    got = _nabla(fam, x, v)
    want = -x[:, :, None] * v[:, None, :]
    out.append(_report(Condition.GRAD_NABLA, np.max(np.linalg.norm(got - want, axis=-1), axis=1), x, tol, name, seed))

    d_closure = fam.divs(x)
    d_trace = np.stack([divergence(fam[i], x) for i in range(len(fam))], axis=1)
    gap = np.maximum(np.abs(d_closure + n * x), np.abs(d_trace + n * x)).max(axis=1)
    out.append(_report(Condition.GRAD_DIV, gap, x, tol, name, seed))

    r = check_sum_div_Ai(fam, x, tol, seed)
    out.append(ConditionReport(Condition.GRAD_SUM_DIV, r.max_residual, r.points_tested, tol, name, seed, r.witness))
    r = check_condition(fam, "B", x, tol=tol, seed=seed)
    out.append(ConditionReport(Condition.GRAD_B, r.max_residual, r.points_tested, tol, name, seed, r.witness))
    r = check_condition(fam, "C", x, tol=tol, seed=seed)
    out.append(ConditionReport(Condition.GRAD_C, r.max_residual, r.points_tested, tol, name, seed, r.witness))

    B = default_probe(M) if B is None else B
    s = condition_d_field(fam, B, x)
    gap = np.linalg.norm(s + n * B(x), axis=-1)
    out.append(_report(Condition.GRAD_D_DEFECT, gap, x, defect_tol, name, seed, note=f"defect vs -{n}B, B={B.label}"))
    return out


def family_suite(family: FieldFamily, points, tol: float = 1e-12, seed: Optional[int] = None,
                 probe: Optional[VectorField] = None) -> list:
    """Conditions (a)-(d), the tensor form of (c) and sum div(A_i) A_i for one family."""
    reports = [check_condition(family, w, points, tol=tol, seed=seed) for w in "ABC"]
    reports.append(check_condition(family, "C", points, tol=tol, seed=seed, tensor=True))
    reports.append(check_condition(family, "D", points, probes=probe, tol=tol, seed=seed))
    reports.append(check_sum_div_Ai(family, points, tol, seed))
    return reports


# ---------------------------------------------------------------------------
# lattice sums


@dataclass(frozen=True)
class LatticeSums:
    n: int
    beta: float
    K: int
    cross: np.ndarray
    diag: np.ndarray
    total: float
    points: int = field(default=0)

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "beta": self.beta,
            "K": self.K,
            "points": self.points,
            "cross": self.cross.tolist(),
            "diag": self.diag.tolist(),
            "total": self.total,
        }


def lattice_sums(n: int, beta: float, K: int) -> LatticeSums:
    """Sums of k_i k_j |k|^(-2 beta - 2) and |k|^(-2 beta) over 0 < |k|_inf <= K.

    Off-diagonal entries add the terms for k and its reflection k_i -> -k_i
    first; each pair cancels exactly, so the total is exactly 0.0.  Diagonal
    entry j is summed over the coordinate-swapped enumeration (swap 1 <-> j),
    which yields the same summands in the same order for every j.
    """
    if not beta > n / 2:
        raise ValueError(f"beta must exceed n/2 = {n / 2}")
    from .families import lattice_modes

    k = lattice_modes(n, K)
    l2 = np.sum(k * k, axis=1)
    w = l2.astype(float) ** (-float(beta) - 1.0)
    total = float(np.sum(l2.astype(float) ** (-float(beta))))
    cross = np.zeros((n, n))
    for i in range(n):
        pos = k[:, i] > 0
        kp = k[pos]
        wp = w[pos]
        for j in range(n):
            if i == j:
                continue
            a = kp[:, i] * kp[:, j] * wp
            b = -kp[:, i] * kp[:, j] * wp
            s = float(np.sum(a + b))
            cross[i, j] = s
    diag = np.empty(n)
    for j in range(n):
        perm = list(range(n))
        perm[0], perm[j] = perm[j], perm[0]
        ks = k[:, perm]
        diag[j] = np.sum((ks[:, j] * ks[:, j]).astype(float) * (np.sum(ks * ks, axis=1).astype(float) ** (-float(beta) - 1.0)))
    return LatticeSums(n, float(beta), int(K), cross, diag, total, int(k.shape[0]))
