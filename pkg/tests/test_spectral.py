import math

import numpy as np
import pytest

from mnsl.quadrature import torus_grid
from mnsl.spectral import (
    AliasingError,
    CFLError,
    SpectralVelocity,
    analyze,
    half_modes,
    leray_project,
    random_divfree,
    shear_exact,
    spectral_ns_solve,
    spectral_ns_step,
    synthesize,
    taylor_green_exact,
)


def _grid(G):
    g = 2 * np.pi * np.arange(G) / G
    return np.meshgrid(g, g, indexing="ij")


def _single(M, k, v):
    return SpectralVelocity.from_modes(M, {k: np.asarray(v, complex)})


def _random_coeffs(M, rng):
    # real-symmetric but not solenoidal
    c = rng.standard_normal((2 * M + 1, 2 * M + 1, 2)) + 1j * rng.standard_normal((2 * M + 1, 2 * M + 1, 2))
    c = 0.5 * (c + np.conj(c[::-1, ::-1]))
    return SpectralVelocity(M, c, rng.standard_normal(2))


@pytest.mark.parametrize(
    "v, expected",
    [((1, 0), (0, 0)), ((0, 1), (0, 1)), ((1, 1), (0, 1))],
)
def test_leray_examples(v, expected):
    p = leray_project(_single(2, (1, 0), v))
    np.testing.assert_allclose(p.mode((1, 0)), expected, atol=1e-15)
    np.testing.assert_allclose(p.mode((-1, 0)), expected, atol=1e-15)


def test_leray_zeroes_mean():
    u = SpectralVelocity(1, np.zeros((3, 3, 2), complex), (2.0, -1.0))
    assert np.all(leray_project(u).mean == 0.0)


def test_leray_idempotent_and_orthogonal(rng):
    for _ in range(5):
        u = _random_coeffs(6, rng)
        p = leray_project(u)
        assert np.abs(leray_project(p).coeffs - p.coeffs).max() <= 1e-13
        assert p.divergence_residual() <= 1e-12
        q = u.coeffs - p.coeffs
        assert abs(np.sum(np.conj(p.coeffs) * q)) <= 1e-12
        assert p.reality_residual() <= 1e-12


def test_synthesize_single_mode():
    u = SpectralVelocity.from_modes(2, {(1, 0): np.array([0, -0.5j])})
    np.testing.assert_allclose(u.mode((-1, 0)), [0, 0.5j])
    x1, _ = _grid(8)
    v = synthesize(u, 8)
    np.testing.assert_allclose(v[..., 0], 0.0, atol=1e-15)
    np.testing.assert_allclose(v[..., 1], np.sin(x1), atol=1e-14)


def test_synthesize_zero():
    assert np.all(synthesize(SpectralVelocity.zeros(3), 8) == 0.0)


def test_synthesize_taylor_green():
    x1, x2 = _grid(32)
    v = synthesize(taylor_green_exact(0.0, 0.1), 32)
    assert np.abs(v[..., 0] - np.cos(x1) * np.sin(x2)).max() <= 1e-12
    assert np.abs(v[..., 1] + np.sin(x1) * np.cos(x2)).max() <= 1e-12


def test_synthesize_matches_pointwise_sum(rng):
    u = random_divfree(4, rng)
    q = torus_grid(10)
    direct = u.as_field()(q.nodes).reshape(10, 10, 2)
    assert np.abs(synthesize(u, 10) - direct).max() <= 1e-13


def test_analyze_examples():
    x1, _ = _grid(8)
    const = np.zeros((8, 8, 2))
    const[..., 0] = 1.0
    a = analyze(const, 3)
    np.testing.assert_allclose(a.mean, [1.0, 0.0])
    assert np.abs(a.coeffs).max() <= 1e-15
    s = np.zeros((8, 8, 2))
    s[..., 1] = np.sin(x1)
    b = analyze(s, 3)
    np.testing.assert_allclose(b.mode((1, 0)), [0, -0.5j], atol=1e-15)
    np.testing.assert_allclose(b.mode((-1, 0)), [0, 0.5j], atol=1e-15)
    others = np.abs(b.coeffs).sum() - 1.0
    assert abs(others) <= 1e-14


def test_round_trip(rng):
    for M, G in [(3, 8), (5, 16), (8, 18)]:
        u = random_divfree(M, rng)
        back = analyze(synthesize(u, G), M)
        assert np.abs(back.coeffs - u.coeffs).max() <= 1e-12


def test_aliasing_error():
    u = SpectralVelocity.zeros(4)
    with pytest.raises(AliasingError):
        synthesize(u, 9)
    with pytest.raises(AliasingError):
        analyze(np.zeros((9, 9, 2)), 4)


def test_taylor_green_exact_amplitudes():
    nu = 0.1
    assert taylor_green_exact(0.0, nu).l2_norm() == pytest.approx(2 * np.pi / math.sqrt(2) * 1.0)
    half = taylor_green_exact(math.log(2) / (2 * nu), nu)
    assert half.l2_distance(taylor_green_exact(0.0, nu).scaled(0.5)) <= 1e-14
    assert taylor_green_exact(0.3, nu).divergence_residual() <= 1e-15


def test_taylor_green_divergence_symbolic(rng):
    f = taylor_green_exact(0.0, 0.1).as_field()
    x = rng.uniform(0, 2 * np.pi, (200, 2))
    assert np.abs(f.div(x)).max() <= 1e-12


def test_taylor_green_nonlinear_term_is_gradient(rng):
    f = taylor_green_exact(0.0, 0.1).as_field()
    x = rng.uniform(0, 2 * np.pi, (200, 2))
    adv = np.einsum("nab,nb->na", f.jac(x), f(x))
    # (u.grad)u = -grad p with p = -(cos 2x1 + cos 2x2) / 4
    grad_p = np.column_stack([0.5 * np.sin(2 * x[:, 0]), 0.5 * np.sin(2 * x[:, 1])])
    np.testing.assert_allclose(adv, -grad_p, atol=1e-14)


def test_oracle_taylor_green_500_steps():
    u0 = taylor_green_exact(0.0, 0.1)
    u, _ = spectral_ns_solve(u0, 0.1, 0.5, 1e-3)
    ref = u0.scaled(math.exp(-2 * 0.1 * 0.5))
    assert u.l2_distance(ref) / ref.l2_norm() <= 1e-8


def test_oracle_shear_decay():
    u0 = shear_exact(0.0, 0.1)
    u, rec = spectral_ns_solve(u0, 0.1, 0.4, 1e-2, record=[0.2])
    for t, v in [(0.2, rec[0.2]), (0.4, u)]:
        assert v.l2_distance(shear_exact(t, 0.1)) / v.l2_norm() <= 1e-8


def test_oracle_zero_stays_zero():
    u = spectral_ns_step(SpectralVelocity.zeros(3), 0.1, 1e-2)
    assert np.all(u.coeffs == 0)


def test_oracle_inviscid_energy_conserved():
    u0 = random_divfree(3, np.random.default_rng(2024)).resized(10)
    u, _ = spectral_ns_solve(u0, 0.0, 1.0, 1e-3)
    assert abs(u.energy() - u0.energy()) / u0.energy() <= 1e-6
    assert u.divergence_residual() <= 1e-12


def test_oracle_viscous_energy_decreases():
    u = random_divfree(4, np.random.default_rng(3))
    energies = [u.energy()]
    for _ in range(20):
        u = spectral_ns_step(u, 0.1, 1e-2)
        energies.append(u.energy())
    assert np.all(np.diff(energies) < 0)


def test_cfl_error():
    u = random_divfree(4, np.random.default_rng(1), l2_norm=1e3)
    with pytest.raises(CFLError):
        spectral_ns_step(u, 0.1, 1e-1)


def test_solve_dt_mismatch():
    with pytest.raises(ValueError):
        spectral_ns_solve(SpectralVelocity.zeros(2), 0.1, 0.25, 0.1)


def test_csv_round_trip(tmp_path, rng):
    u = random_divfree(3, rng)
    p = tmp_path / "u.csv"
    text = u.to_csv(p)
    assert text.splitlines()[0] == "k1,k2,re_u1,im_u1,re_u2,im_u2"
    assert "\r" not in p.read_bytes().decode()
    v = SpectralVelocity.from_csv(p)
    assert v.M == u.M and np.array_equal(v.coeffs, u.coeffs)
    assert np.array_equal(SpectralVelocity.from_csv(text).coeffs, u.coeffs)


def test_half_modes_cover_quotient():
    hm = half_modes(3)
    assert len(hm) == ((2 * 3 + 1) ** 2 - 1) // 2
    s = {tuple(k) for k in hm}
    assert not any((-a, -b) in s for a, b in s)


def test_random_divfree_properties(rng):
    u = random_divfree(3, rng)
    assert u.l2_norm() == pytest.approx(1.0, rel=1e-14)
    assert u.divergence_residual() <= 1e-15
    assert u.reality_residual() == 0.0
    assert np.all(u.mean == 0)
