import os
import subprocess
import sys

import numpy as np
import pytest

from mnsl import kernels
from mnsl.flow import ExactSpectralDrift, NoiseModel
from mnsl.quadrature import torus_grid
from mnsl.rng import increments_batch
from mnsl.spectral import random_divfree, taylor_green_exact


def _inputs(drift, steps=15, samples=3, G=6, dt=1e-2):
    ts = dt * np.arange(steps + 1)
    k, A, B, mean, _ = drift.tables(ts)
    dW = NoiseModel.constant(0.1).sigma * increments_batch(8, np.arange(samples), 2, steps, dt)
    return torus_grid(G).nodes, dW, k, A, B, mean, dt, np.array([0, 5, steps])


def test_compiled_extension_is_built():
    assert "compiled" in kernels.implementations()


@pytest.mark.parametrize(
    "drift",
    [ExactSpectralDrift(lambda t: taylor_green_exact(t, 0.1)),
     ExactSpectralDrift(lambda t: random_divfree(3, np.random.default_rng(4)).scaled(1 + t))],
)
def test_compiled_matches_python(drift):
    impl = kernels.implementations()
    if "compiled" not in impl:
        pytest.skip("extension not built")
    args = _inputs(drift)
    Xp, Jp = impl["python"](*args)
    Xc, Jc = impl["compiled"](*args)
    assert Xp.shape == Xc.shape and Jp.shape == Jc.shape
    assert np.abs(Xp - Xc).max() <= 1e-13
    assert np.abs(Jp - Jc).max() <= 1e-13


def test_record_step_zero_is_initial():
    args = _inputs(ExactSpectralDrift(lambda t: taylor_green_exact(t, 0.1)))
    X, J = kernels.torus_heun(*args)
    assert np.array_equal(X[:, 0], np.broadcast_to(args[0], X[:, 0].shape))
    assert np.all(J[:, 0] == np.eye(2))


def test_pure_python_switch():
    env = dict(os.environ, MNSL_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", "from mnsl import kernels; print(kernels.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"
