"""Counter-based Brownian streams keyed by (master_seed, sample_index, noise_index).

Each key gets its own Philox generator; the step index is the position in
that stream, so any sample can be regenerated on its own, in any order.
"""
from __future__ import annotations

import numpy as np

MASK64 = (1 << 64) - 1


def stream(master_seed: int, sample_index: int, noise_index: int) -> np.random.Generator:
    ss = np.random.SeedSequence([int(master_seed) & MASK64, int(sample_index), int(noise_index)])
    return np.random.Generator(np.random.Philox(ss))


def brownian_increments(master_seed: int, sample_index: int, n_noise: int, n_steps: int, dt: float) -> np.ndarray:
    """Increments dW[step, noise] with variance dt, shape (n_steps, n_noise)."""
    out = np.empty((n_steps, n_noise))
    sq = np.sqrt(dt)
    for i in range(n_noise):
        out[:, i] = stream(master_seed, sample_index, i).standard_normal(n_steps) * sq
    return out


def increments_batch(master_seed: int, sample_indices, n_noise: int, n_steps: int, dt: float) -> np.ndarray:
    """Stacked increments for several samples, shape (S, n_steps, n_noise)."""
    idx = list(sample_indices)
    out = np.empty((len(idx), n_steps, n_noise))
    for s, j in enumerate(idx):
        out[s] = brownian_increments(master_seed, j, n_noise, n_steps, dt)
    return out
