"""Generate the equal-weight node set shipped in ``mnsl/data``.

Starts from a Fibonacci lattice and drives to zero the residuals

    r_{l,j} = mean_i P_l(<x_i, y_{l,j}>),  1 <= l <= t, 1 <= j <= 2l+3,

where the zonal polynomials P_l(<., y_{l,j}>) span the degree-l harmonics for
generic directions y_{l,j}.  Directions are random and oversampled (2l+3 per
degree); structured sets such as a Fibonacci lattice are mirror-symmetric and
lose rank at odd degree.  All residuals vanish iff equal weights 4*pi/N
integrate every polynomial of degree <= t exactly.  Gauss-Newton with
minimum-norm tangent steps.

Usage: python scripts/make_sphere_design.py N t out.txt [warm_start.txt]
"""
from __future__ import annotations

import sys

import numpy as np


def fibonacci(n: int) -> np.ndarray:
    i = np.arange(n) + 0.5
    z = 1.0 - 2.0 * i / n
    phi = np.pi * (3.0 - np.sqrt(5.0)) * i
    r = np.sqrt(1.0 - z * z)
    return np.column_stack([r * np.cos(phi), r * np.sin(phi), z])


def legendre_with_derivative(l: int, z: np.ndarray):
    p_prev, p = np.ones_like(z), z.copy()
    dp_prev, dp = np.zeros_like(z), np.ones_like(z)
    for m in range(1, l):
        p_prev, p = p, ((2 * m + 1) * z * p - m * p_prev) / (m + 1)
        dp_prev, dp = dp, dp_prev + (2 * m + 1) * p_prev
    return p, dp


def directions(t: int, rng: np.random.Generator) -> list[np.ndarray]:
    out = []
    for l in range(1, t + 1):
        y = rng.standard_normal((2 * l + 3, 3))
        out.append(y / np.linalg.norm(y, axis=1, keepdims=True))
    return out


def residual_and_jacobian(x: np.ndarray, dirs: list[np.ndarray]):
    n = x.shape[0]
    res, rows = [], []
    for l, y in enumerate(dirs, start=1):
        z = x @ y.T                                   # (N, 2l+3)
        p, dp = legendre_with_derivative(l, z)
        res.append(p.mean(axis=0))
        # d r_j / d x_i = dp_ij * y_j / N, restricted to the tangent plane at x_i
        g = dp.T[:, :, None] * y[:, None, :] / n      # (2l+3, N, 3)
        g = g - np.sum(g * x[None], axis=2, keepdims=True) * x[None]
        rows.append(g.reshape(len(y), -1))
    return np.concatenate(res), np.vstack(rows)


def main() -> None:
    n, t, out = int(sys.argv[1]), int(sys.argv[2]), sys.argv[3]
    dirs = directions(t, np.random.default_rng(0))
    x = np.loadtxt(sys.argv[4]) if len(sys.argv) > 4 else fibonacci(n)
    for it in range(50):
        r, jac = residual_and_jacobian(x, dirs)
        err = np.abs(r).max()
        print(f"iter {it}: max residual {err:.3e}", flush=True)
        if err < 1e-14:
            break
        dx = np.linalg.lstsq(jac, -r, rcond=None)[0].reshape(n, 3)
        x = x + dx
        x /= np.linalg.norm(x, axis=1, keepdims=True)
    # independent directions for the reported residual
    check = np.abs(residual_and_jacobian(x, directions(t, np.random.default_rng(1)))[0]).max()
    header = f"equal-weight node set on S^2, N={n}, exact degree {t}, max zonal residual {check:.2e}"
    np.savetxt(out, x, fmt="%.17e", header=header)


if __name__ == "__main__":
    main()
