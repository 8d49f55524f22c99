import math

import numpy as np
import pytest
from scipy.linalg import expm

from mnsl.families import build_family, build_sphere_killing_family, killing_field, skew_basis
from mnsl.families import FamilySpec
from mnsl.flow import (
    ExactSpectralDrift,
    FlowConfig,
    FlowEnsembleSample,
    IntegrationError,
    NoiseModel,
    NumericalError,
    StaticDrift,
    density_consistency,
    dump_sample,
    integrate_batch,
    integrate_flow,
    jacobian_fd_gap,
    load_sample,
    pullback_field,
    volume_defect,
    volume_defect_csv,
)
from mnsl.geometry import Sphere, Torus, VectorField
from mnsl.quadrature import sphere_design, torus_grid
from mnsl.rng import brownian_increments
from mnsl.spectral import taylor_green_exact

_, SKEW = skew_basis(3)
X12, X13, X23 = SKEW


def _tg_drift(nu):
    return ExactSpectralDrift(lambda t: taylor_green_exact(t, nu))


def _translation(c):
    c = np.asarray(c, float)
    return VectorField(Torus(2), lambda x: np.broadcast_to(c, np.shape(x)),
                       lambda x: np.zeros(np.shape(x) + (2,)), None,
                       lambda x: np.zeros(np.shape(x)[:-1]), "const")


def test_flow_config_validation():
    with pytest.raises(ValueError):
        FlowConfig(0.3, 0.2)
    with pytest.raises(ValueError):
        FlowConfig(0.03, 0.1)
    with pytest.raises(ValueError):
        FlowConfig(0.1, 1.0, n_samples=0)
    with pytest.raises(ValueError):
        FlowConfig(0.1, 1.0, scheme="EulerMaruyama")


def test_noise_model_invariants():
    with pytest.raises(ValueError):
        NoiseModel("ConstantDiffusion", 0.0, Torus(2))
    with pytest.raises(ValueError):
        NoiseModel("ConstantDiffusion", 1.0, Sphere(2))
    with pytest.raises(ValueError):
        NoiseModel("FamilyDriven", 1.0, Torus(2))
    assert NoiseModel.constant(0.1).sigma == pytest.approx(math.sqrt(0.2))


def test_killing_drift_is_rotation(rng):
    x = Sphere(2).random_points(rng, 20)
    t = math.pi / 2
    cfg = FlowConfig(t / 1000, t)
    s = integrate_flow(cfg, StaticDrift(killing_field(X12)), None, x)
    g = expm(t * X12)
    assert np.abs(s.endpoints - x @ g.T).max() <= cfg.dt**2
    Jt = s.tangent_jacobians()
    np.testing.assert_allclose(np.linalg.det(Jt), 1.0, atol=cfg.dt**2)
    # on tangent vectors the jacobian acts as g
    E = Sphere(2).tangent_basis(x)
    np.testing.assert_allclose(np.einsum("pab,pbi->pai", s.jacobians, E), g @ E, atol=cfg.dt**2)
    assert np.all(s.log_density == 0.0)


def test_killing_rotation_second_order(rng):
    x = Sphere(2).random_points(rng, 5)
    t = math.pi / 2
    errs = []
    for n in (100, 200):
        s = integrate_flow(FlowConfig(t / n, t), StaticDrift(killing_field(X12)), None, x)
        errs.append(np.abs(s.endpoints - x @ expm(t * X12).T).max())
    assert 3.0 < errs[0] / errs[1] < 5.0


def test_additive_noise_is_translation():
    q = torus_grid(6)
    nu, cfg = 0.1, FlowConfig(0.01, 0.5, master_seed=3)
    s = integrate_flow(cfg, None, NoiseModel.constant(nu), q.nodes, sample_index=4)
    W = brownian_increments(3, 4, 2, cfg.n_steps, cfg.dt).sum(axis=0)
    disp = s.lifted - q.nodes
    np.testing.assert_allclose(disp, np.broadcast_to(math.sqrt(2 * nu) * W, disp.shape), atol=1e-12)
    assert np.all(s.jacobians == np.eye(2))
    assert np.all(s.log_density == 0.0)
    assert s.endpoints.min() >= 0 and s.endpoints.max() < 2 * np.pi


def test_kernel_and_generic_paths_agree():
    q = torus_grid(8)
    cfg = FlowConfig(0.01, 0.2, master_seed=5, n_samples=2)
    args = (cfg, _tg_drift(0.1), NoiseModel.constant(0.1), q.nodes, [0, 1])
    a = integrate_batch(*args, path="kernel")
    b = integrate_batch(*args, path="generic")
    assert np.abs(a.X - b.X).max() <= 1e-12
    assert np.abs(a.J - b.J).max() <= 1e-12


def test_killing_noise_log_density_zero(rng):
    noise = NoiseModel.family_driven(build_sphere_killing_family(2), 0.05)
    x = Sphere(2).random_points(rng, 30)
    cfg = FlowConfig(1e-2, 0.5, master_seed=1, n_samples=3)
    for path in ("linear", "generic"):
        rec = integrate_batch(cfg, None, noise, x, range(3), path=path)
        assert np.all(rec.logd == 0.0)


def test_linear_and_generic_killing_agree(rng):
    noise = NoiseModel.family_driven(build_sphere_killing_family(2), 0.05)
    x = Sphere(2).random_points(rng, 10)
    cfg = FlowConfig(1e-2, 0.3, master_seed=9, n_samples=2)
    a = integrate_batch(cfg, None, noise, x, [0, 1], path="linear")
    b = integrate_batch(cfg, None, noise, x, [0, 1], path="generic")
    assert np.abs(a.X - b.X).max() <= 1e-12
    assert np.abs(a.J - b.J).max() <= 1e-11


def test_gradient_noise_has_log_density(rng):
    noise = NoiseModel.family_driven(build_family(FamilySpec.from_dict({"kind": "SphereGradient", "n": 2})), 0.05)
    x = Sphere(2).random_points(rng, 10)
    s = integrate_flow(FlowConfig(1e-2, 0.2, master_seed=2), None, noise, x)
    assert np.abs(s.log_density).max() > 1e-3
    assert not noise.divergence_free


def test_tangency(rng):
    noise = NoiseModel.family_driven(build_family(FamilySpec.from_dict({"kind": "SphereGradient", "n": 2})), 0.05)
    x = Sphere(2).random_points(rng, 50)
    s = integrate_flow(FlowConfig(1e-2, 0.5, master_seed=4), None, noise, x)
    assert np.abs(np.linalg.norm(s.endpoints, axis=-1) - 1).max() <= 1e-10
    E = Sphere(2).tangent_basis(x)
    cols = np.einsum("pab,pbi->pia", s.jacobians, E)
    assert np.abs(np.einsum("pia,pa->pi", cols, s.endpoints)).max() <= 1e-8


def test_determinism():
    q = torus_grid(8)
    cfg = FlowConfig(0.01, 0.2, master_seed=11, n_samples=2)
    a = integrate_batch(cfg, _tg_drift(0.1), NoiseModel.constant(0.1), q.nodes, [0, 1])
    b = integrate_batch(cfg, _tg_drift(0.1), NoiseModel.constant(0.1), q.nodes, [0, 1])
    assert a.X.tobytes() == b.X.tobytes() and a.J.tobytes() == b.J.tobytes()


def test_sample_independent_of_batch():
    q = torus_grid(4)
    cfg = FlowConfig(0.01, 0.1, master_seed=11, n_samples=4)
    a = integrate_batch(cfg, _tg_drift(0.1), NoiseModel.constant(0.1), q.nodes, [0, 1, 2, 3])
    b = integrate_batch(cfg, _tg_drift(0.1), NoiseModel.constant(0.1), q.nodes, [2])
    assert np.array_equal(a.X[2], b.X[0])


@pytest.mark.parametrize("case", ["killing", "gradient", "torus"])
def test_jacobian_matches_finite_differences(case, rng):
    if case == "torus":
        noise, drift = NoiseModel.constant(0.1), _tg_drift(0.1)
        x, cfg = Torus(2).random_points(rng, 5), FlowConfig(1e-2, 0.5, master_seed=1)
    else:
        fam = build_family(FamilySpec.from_dict({"kind": "Sphere" + case.capitalize(), "n": 2}))
        noise, drift = NoiseModel.family_driven(fam, 0.05), None
        x, cfg = Sphere(2).random_points(rng, 5), FlowConfig(1e-2, 0.5, master_seed=1)
    assert jacobian_fd_gap(cfg, drift, noise, x, h=1e-4) <= 1e-5


def test_step_rejection():
    noise = NoiseModel.family_driven(build_family(FamilySpec.from_dict({"kind": "SphereGradient", "n": 2})), 50.0)
    x = sphere_design().nodes[:20]
    with pytest.raises(IntegrationError, match="reduce dt"):
        integrate_flow(FlowConfig(0.5, 1.0, master_seed=0), None, noise, x)


def test_off_sphere_grid_rejected():
    noise = NoiseModel.family_driven(build_sphere_killing_family(2), 0.05)
    with pytest.raises(ValueError):
        integrate_flow(FlowConfig(0.1, 0.1), None, noise, np.array([[1.0, 0.1, 0.0]]))


def _static_sample(M, x, X, J):
    return FlowEnsembleSample(0, 1.0, M, x, X, J, np.zeros(len(x)))


def test_pullback_identity(rng):
    x = Sphere(2).random_points(rng, 6)
    s = _static_sample(Sphere(2), x, x, np.broadcast_to(np.eye(3), (6, 3, 3)).copy())
    v = killing_field(X13)
    np.testing.assert_allclose(pullback_field(s, v), v(x), atol=1e-15)
    assert volume_defect(s) <= 1e-15


def test_pullback_rotation_is_adjoint_action(rng):
    # flow g = exp(t X12); (g^{-1})_* A_eta = A_{g^{-1} eta g}
    x = Sphere(2).random_points(rng, 6)
    g = expm(0.7 * X12)
    s = _static_sample(Sphere(2), x, x @ g.T, np.broadcast_to(g, (6, 3, 3)).copy())
    eta = X13 + 0.5 * X23
    got = pullback_field(s, killing_field(eta))
    want = killing_field(g.T @ eta @ g)(x)
    np.testing.assert_allclose(got, want, atol=1e-14)
    np.testing.assert_allclose(pullback_field(s, killing_field(eta), x[2]), want[2], atol=1e-14)


def test_pullback_of_integrated_rotation(rng):
    x = Sphere(2).random_points(rng, 6)
    t = 0.7
    s = integrate_flow(FlowConfig(t / 700, t), StaticDrift(killing_field(X12)), None, x)
    g = expm(t * X12)
    eta = X23
    np.testing.assert_allclose(pullback_field(s, killing_field(eta)), killing_field(g.T @ eta @ g)(x), atol=1e-6)


def test_pullback_translation(rng):
    x = Torus(2).random_points(rng, 6)
    c = np.array([0.3, -1.1])
    s = _static_sample(Torus(2), x, x + c, np.broadcast_to(np.eye(2), (6, 2, 2)).copy())
    v = taylor_green_exact(0.0, 0.1).as_field()
    np.testing.assert_allclose(pullback_field(s, v), v(np.mod(x + c, 2 * np.pi)), atol=1e-14)


def test_pullback_flow_translation(rng):
    x = Torus(2).random_points(rng, 6)
    c = np.array([0.3, -1.1])
    s = integrate_flow(FlowConfig(0.1, 1.0), StaticDrift(_translation(c)), None, x)
    v = taylor_green_exact(0.0, 0.1).as_field()
    np.testing.assert_allclose(pullback_field(s, v), v(x + c), atol=1e-13)


def test_pullback_singular_jacobian(rng):
    x = Torus(2).random_points(rng, 3)
    J = np.broadcast_to(np.eye(2), (3, 2, 2)).copy()
    J[1] = [[1.0, 1.0], [1.0, 1.0]]
    s = _static_sample(Torus(2), x, x, J)
    with pytest.raises(NumericalError, match="condition number"):
        pullback_field(s, taylor_green_exact(0.0, 0.1).as_field())


def test_pullback_point_not_on_grid(rng):
    x = Torus(2).random_points(rng, 3)
    s = _static_sample(Torus(2), x, x, np.broadcast_to(np.eye(2), (3, 2, 2)).copy())
    with pytest.raises(ValueError):
        pullback_field(s, taylor_green_exact(0.0, 0.1).as_field(), x[0] + 0.1)


def test_volume_defect_small():
    q = torus_grid(16)
    rec = integrate_batch(FlowConfig(1e-2, 0.5, master_seed=2024), _tg_drift(0.1), NoiseModel.constant(0.1),
                          q.nodes, [0, 1])
    assert volume_defect(rec.sample(0)) <= 1e-3
    noise = NoiseModel.family_driven(build_sphere_killing_family(2), 0.05)
    s = integrate_flow(FlowConfig(1e-3, 1.0, master_seed=2024), None, noise, sphere_design().nodes[:100])
    assert volume_defect(s) <= 1e-3


def test_density_consistency_torus():
    q = torus_grid(16)
    rec = integrate_batch(FlowConfig(1e-2, 0.5, master_seed=2024), _tg_drift(0.1), NoiseModel.constant(0.1),
                          q.nodes, range(20))
    assert density_consistency(rec, lambda x: np.cos(x[..., 0]), q.weights) <= 1e-3
    assert density_consistency(rec, lambda x: np.ones(x.shape[:-1]), q.weights) <= 1e-10


def test_density_consistency_gradient_noise():
    q = sphere_design()
    noise = NoiseModel.family_driven(build_family(FamilySpec.from_dict({"kind": "SphereGradient", "n": 2})), 0.05)
    rec = integrate_batch(FlowConfig(2e-2, 0.2, master_seed=2024), None, noise, q.nodes, range(60))
    assert density_consistency(rec, lambda x: x[..., 2], q.weights) <= 2e-2
    assert density_consistency(rec, lambda x: np.ones(x.shape[:-1]), q.weights) <= 2e-2


def test_weak_order_heat_kernel():
    nu, t = 0.2, 0.5
    x = np.array([[0.4, 1.0]])
    n = 4000
    rec = integrate_batch(FlowConfig(0.05, t, master_seed=77), None, NoiseModel.constant(nu), x, range(n))
    vals = np.cos(rec.X[:, -1, 0, 0])
    se = vals.std(ddof=1) / math.sqrt(n)
    assert abs(vals.mean() - math.exp(-nu * t) * math.cos(0.4)) <= 3 * se + 1e-2


def test_dump_round_trip(tmp_path, rng):
    noise = NoiseModel.family_driven(build_sphere_killing_family(2), 0.05)
    x = Sphere(2).random_points(rng, 7)
    s = integrate_flow(FlowConfig(1e-2, 0.1, master_seed=1), None, noise, x, sample_index=3)
    p = tmp_path / "s.bin"
    dump_sample(s, p, {"a": 1})
    back, digest = load_sample(p)
    assert back.sample_index == 3 and back.t == pytest.approx(0.1)
    assert np.array_equal(back.endpoints, s.endpoints)
    assert np.array_equal(back.jacobians, s.jacobians)
    assert np.array_equal(back.initial_points, s.initial_points)
    assert back.manifold == s.manifold and len(digest) == 32
    (tmp_path / "bad.bin").write_bytes(b"x" * 100)
    with pytest.raises(ValueError):
        load_sample(tmp_path / "bad.bin")


def test_volume_defect_csv():
    q = torus_grid(4)
    rec = integrate_batch(FlowConfig(0.1, 0.2), None, NoiseModel.constant(0.1), q.nodes, [0, 1],
                          record_times=[0.0, 0.1, 0.2])
    text = volume_defect_csv(rec)
    lines = text.splitlines()
    assert lines[0] == "sample_index,t,volume_defect"
    assert len(lines) == 1 + 2 * 3
    assert lines[1] == "0,0.0,0.0"
    assert "\r" not in text
