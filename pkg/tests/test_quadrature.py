import numpy as np
import pytest
from scipy.special import sph_harm_y

from mnsl.quadrature import sphere_design, torus_grid


def _harmonic_means(x, l):
    th = np.arccos(np.clip(x[:, 2], -1.0, 1.0))
    ph = np.arctan2(x[:, 1], x[:, 0])
    m = np.arange(-l, l + 1)
    return sph_harm_y(l, m[:, None], th[None], ph[None]).mean(axis=1)


def test_design_shape_and_weights():
    q = sphere_design()
    assert q.size == 1202
    assert q.exact_degree == 44
    np.testing.assert_allclose(np.linalg.norm(q.nodes, axis=1), 1.0, atol=1e-15)
    assert q.integrate(np.ones(q.size)) == pytest.approx(4 * np.pi, rel=1e-14)


@pytest.mark.parametrize("l", range(1, 45))
def test_design_exact_every_degree(l):
    assert np.abs(_harmonic_means(sphere_design().nodes, l)).max() < 1e-12


def test_design_not_exact_beyond_degree():
    x = sphere_design().nodes
    assert max(np.abs(_harmonic_means(x, l)).max() for l in (45, 46)) > 1e-6


def test_design_integrates_coordinate_moments():
    x = sphere_design().nodes
    q = sphere_design()
    # integral of x_i x_j over S^2 is 4 pi / 3 delta_ij
    second = np.einsum("ni,nj,n->ij", x, x, q.weights)
    np.testing.assert_allclose(second, 4 * np.pi / 3 * np.eye(3), atol=1e-12)
    assert np.abs(q.integrate(x[:, 2] ** 4) - 4 * np.pi / 5) < 1e-12


def test_torus_grid_layout():
    q = torus_grid(4)
    assert q.size == 16
    np.testing.assert_allclose(q.weights.sum(), (2 * np.pi) ** 2)
    assert q.nodes.min() == 0.0 and q.nodes.max() < 2 * np.pi


@pytest.mark.parametrize("k", [(1, 0), (0, 3), (2, -5), (7, 7)])
def test_torus_grid_exact_below_G(k):
    q = torus_grid(8)
    v = np.cos(q.nodes @ np.array(k, float))
    assert abs(q.integrate(v)) < 1e-12


def test_torus_grid_aliases_at_G():
    q = torus_grid(8)
    v = np.cos(8 * q.nodes[:, 0])
    assert q.integrate(v) == pytest.approx((2 * np.pi) ** 2)
