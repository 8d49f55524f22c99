"""Pure numpy implementation of the hot loops; same signatures as the compiled module."""
from __future__ import annotations

import numpy as np


def _drift(x, kvec, A, B, mean):
    # x (S, P, 2); returns value (S, P, 2) and jacobian (S, P, 2, 2)
    ph = x @ kvec.T
    c, s = np.cos(ph), np.sin(ph)
    val = mean + c @ A + s @ B
    g = np.einsum("spm,ma->spma", c, B) - np.einsum("spm,ma->spma", s, A)
    jac = np.einsum("spma,mb->spab", g, kvec)
    return val, jac


def torus_heun(x0, dW, kvec, coefA, coefB, mean, dt, record):
    """Heun steps for dX = dW + u_t(X) dt on T^2 with a real-form Fourier drift.

    x0 (P, 2); dW (S, n_steps, 2), already scaled by sigma; kvec (Mh, 2) int;
    coefA, coefB (n_steps + 1, Mh, 2) real-form coefficients at the step times;
    mean (n_steps + 1, 2); record: step indices to store.  Returns the lifted
    positions (S, R, P, 2) and jacobians (S, R, P, 2, 2).
    """
    x0 = np.asarray(x0, dtype=np.float64)
    dW = np.asarray(dW, dtype=np.float64)
    kf = np.asarray(kvec, dtype=np.float64)
    record = np.asarray(record, dtype=np.int64)
    S, n_steps, _ = dW.shape
    P = x0.shape[0]
    R = record.size
    Xout = np.empty((S, R, P, 2))
    Jout = np.empty((S, R, P, 2, 2))
    X = np.broadcast_to(x0, (S, P, 2)).copy()
    J = np.broadcast_to(np.eye(2), (S, P, 2, 2)).copy()
    slot = {int(r): i for i, r in enumerate(record)}
    if 0 in slot:
        Xout[:, slot[0]] = X
        Jout[:, slot[0]] = J
    use_drift = kf.shape[0] > 0
    for step in range(n_steps):
        g = dW[:, step, None, :]
        if use_drift:
            f0, D0 = _drift(X, kf, coefA[step], coefB[step], mean[step])
            Y = X + f0 * dt + g
            JY = J + dt * np.einsum("spab,spbc->spac", D0, J)
            f1, D1 = _drift(Y, kf, coefA[step + 1], coefB[step + 1], mean[step + 1])
            X = X + 0.5 * dt * (f0 + f1) + g
            J = J + 0.5 * dt * (np.einsum("spab,spbc->spac", D0, J) + np.einsum("spab,spbc->spac", D1, JY))
        else:
            X = X + (mean[step] + mean[step + 1]) * (0.5 * dt) + g
        i = slot.get(step + 1)
        if i is not None:
            Xout[:, i] = X
            Jout[:, i] = J
    return Xout, Jout
