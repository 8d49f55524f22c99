"""Experiment orchestration: one function per subcommand, each filling a RunReport."""
from __future__ import annotations

import csv
import json
import math
import time
from contextlib import contextmanager
from pathlib import Path
from typing import Optional

import numpy as np

from .config import ExperimentConfig
from .families import (
    FamilyKind,
    FamilySpec,
    build_family,
    build_sphere_gradient_family,
    build_sphere_killing_family,
    torus_mode_field,
)
from .flow import (
    ExactSpectralDrift,
    FlowConfig,
    NoiseModel,
    dump_sample,
    integrate_batch,
    jacobian_fd_gap,
    volume_defect_csv,
    volume_defect_series,
)
from .geometry import TWO_PI
from .quadrature import sphere_design, torus_grid
from .report import RunReport
from .solver import SolverConfig, picard_solve, sphere_heat_decay, write_iteration_csv
from .spectral import (
    SpectralVelocity,
    half_modes,
    random_divfree,
    shear_exact,
    spectral_ns_solve,
    taylor_green_exact,
)
from .structure import (
    Condition,
    gradient_identities,
    check_killing_props,
    check_lie_laplacian,
    family_suite,
    hodge_tolerance,
    lattice_sums,
)


class _Timer:
    def __init__(self):
        self.phases: dict[str, float] = {}

    @contextmanager
    def phase(self, name: str):
        t0 = time.perf_counter()
        try:
            yield
        finally:
            self.phases[name] = self.phases.get(name, 0.0) + time.perf_counter() - t0


def _csv(path: Path, header: list[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(v) if isinstance(v, float) else v for v in row])


def _seeds(master_seed: int) -> tuple[np.random.Generator, int]:
    """Independent generator for sample points and a seed for probe draws."""
    ss = np.random.SeedSequence([master_seed, 0x5EED])
    pts, probe = ss.spawn(2)
    return np.random.default_rng(pts), int(probe.generate_state(1)[0])


# ---------------------------------------------------------------------------
# verify


def run_verify(cfg: ExperimentConfig, out: Path, rep: RunReport, timer: _Timer) -> None:
    p = cfg.params
    spec = FamilySpec.from_dict(p.family)
    fam = build_family(spec)
    M = spec.manifold
    rng, probe_seed = _seeds(cfg.master_seed)
    x = M.random_points(rng, p.points)
    gradient = spec.kind is FamilyKind.SPHERE_GRADIENT

    with timer.phase("conditions"):
        for r in family_suite(fam, x, tol=p.tol, seed=probe_seed):
            expected = "Fails" if gradient and r.condition is Condition.D else "Holds"
            rep.add_condition(r, expected)

    if gradient:
        with timer.phase("gradient"):
            for r in gradient_identities(spec.n, x, tol=p.tol, defect_tol=p.defect_tol, seed=probe_seed):
                rep.add_condition(r)
    elif spec.kind is FamilyKind.SPHERE_KILLING:
        with timer.phase("killing"):
            for r in check_killing_props(spec.n, x, tol=p.tol, seed=probe_seed):
                rep.add_condition(r)
            c = 2.0 * (spec.n - 1)
            for i in range(len(fam)):
                rep.add_condition(check_lie_laplacian(fam, fam[i], c, x, tol=1e-10))
            rep.results["killing_eigenvalue"] = c
    else:
        with timer.phase("hodge"):
            rigorous = hodge_tolerance(fam)
            rep.results["hodge_tolerance_rigorous"] = rigorous
            modes = [(1,) + (0,) * (spec.n - 1), (1, 1) + (0,) * (spec.n - 2)]
            for k in modes:
                for kind in ("cos", "sin"):
                    v = torus_mode_field(k, kind)
                    r = check_lie_laplacian(fam, v, float(np.dot(k, k)), x, tol=p.hodge_tol)
                    rep.add_condition(r)
    rep.results["family"] = spec.to_dict()
    rep.results["nu0"] = fam.nu0
    rep.results["points"] = p.points


# ---------------------------------------------------------------------------
# lattice


def run_lattice(cfg: ExperimentConfig, out: Path, rep: RunReport, timer: _Timer) -> None:
    p = cfg.params
    rows, tables = [], []
    with timer.phase("sums"):
        for n in p.n:
            for beta in p.beta:
                for K in p.K:
                    ls = lattice_sums(int(n), float(beta), int(K))
                    off = ls.cross[~np.eye(ls.n, dtype=bool)]
                    ref = ls.total / ls.n
                    rel = float(np.max(np.abs(ls.diag - ref)) / ref)
                    tag = f"n={ls.n},beta={ls.beta:g},K={ls.K}"
                    rep.check(f"lattice[{tag}]:cross==0", bool(np.all(off == 0.0)),
                              float(np.max(np.abs(off))) if off.size else 0.0, 0.0)
                    rep.check(f"lattice[{tag}]:diag bit-equal", bool(np.all(ls.diag == ls.diag[0])),
                              float(np.max(ls.diag) - np.min(ls.diag)), 0.0)
                    rep.check(f"lattice[{tag}]:diag=total/n", rel <= 1e-14, rel, 1e-14)
                    tables.append(ls.to_dict())
                    rows.append([ls.n, ls.beta, ls.K, ls.points, float(ls.diag[0]),
                                 float(np.max(np.abs(off))) if off.size else 0.0, ls.total, rel])
    _csv(out / "lattice.csv", ["n", "beta", "K", "points", "diag", "max_abs_cross", "total", "rel_diag_gap"], rows)
    rep.tables["lattice"] = "lattice.csv"
    rep.results["sums"] = tables


# ---------------------------------------------------------------------------
# flow


def run_flow(cfg: ExperimentConfig, out: Path, rep: RunReport, timer: _Timer) -> None:
    p = cfg.params
    fcfg = FlowConfig(p.dt, p.t_end, cfg.master_seed, p.n_samples)
    n_rec = max(1, int(round(p.t_end / p.record_every)))
    rec_times = [fcfg.dt * round(p.t_end * j / n_rec / fcfg.dt) for j in range(n_rec + 1)]
    rng, _ = _seeds(cfg.master_seed)
    if p.case == "torus-taylor-green":
        drift = ExactSpectralDrift(lambda t: taylor_green_exact(t, p.nu))
        noise = NoiseModel.constant(p.nu)
        quad = torus_grid(p.grid, 2)
        f, f_label = (lambda x: np.cos(x[..., 0])), "cos(theta1)"
        fd_pts = rng.uniform(0.0, TWO_PI, (p.fd_points, 2))
    else:
        drift = None
        fam = build_sphere_killing_family(2) if p.case == "sphere-killing" else build_sphere_gradient_family(2)
        noise = NoiseModel.family_driven(fam, p.nu)
        quad = sphere_design()
        f, f_label = (lambda x: x[..., 2]), "x3"
        fd_pts = fam.manifold.random_points(rng, p.fd_points)
    divfree = noise.divergence_free

    with timer.phase("integrate"):
        series, logd_max, tang = [], 0.0, 0.0
        chunk = 50
        num = np.zeros(2)
        lhs = np.array([float(f(quad.nodes) @ quad.weights), float(np.sum(quad.weights))])
        first = None
        for a in range(0, p.n_samples, chunk):
            idx = range(a, min(a + chunk, p.n_samples))
            rec = integrate_batch(fcfg, drift, noise, quad.nodes, idx, record_times=rec_times)
            if first is None:
                first = rec
            series.append(volume_defect_series(rec))
            logd_max = max(logd_max, float(np.max(np.abs(rec.logd))))
            X = rec.X[:, -1] if quad.nodes.shape[1] == 3 else np.mod(rec.X[:, -1], TWO_PI)
            w = np.exp(rec.logd[:, -1])
            num += np.array([float(np.sum((f(X) * w) @ quad.weights)), float(np.sum(w @ quad.weights))])
            if quad.nodes.shape[1] == 3:
                tang = max(tang, float(np.max(np.abs(np.linalg.norm(rec.X, axis=-1) - 1.0))))
        series = np.concatenate(series, axis=0)
        resid = np.abs(lhs - num / p.n_samples)
    with timer.phase("fd_jacobian"):
        fd = jacobian_fd_gap(fcfg, drift, noise, fd_pts, 0, p.fd_h)

    vd = float(np.max(series))
    if divfree:
        rep.check("volume_defect", vd <= p.volume_tol, vd, p.volume_tol, f"max over {p.n_samples} samples")
        rep.check("log_density==0", logd_max == 0.0, logd_max, 0.0)
    else:
        rep.results["volume_defect_vs_density"] = vd
    rep.check("jacobian_vs_fd", fd <= p.fd_tol, fd, p.fd_tol, f"h={p.fd_h:g}, {p.fd_points} points")
    rep.check(f"density_consistency[{f_label}]", resid[0] <= p.density_tol, float(resid[0]), p.density_tol,
              f"N={p.n_samples}")
    rep.check("density_consistency[1]", resid[1] <= p.density_tol, float(resid[1]), p.density_tol)
    if quad.nodes.shape[1] == 3:
        rep.check("sphere_tangency", tang <= 1e-10, tang, 1e-10)
    rep.results.update({
        "case": p.case,
        "noise_divergence_free": divfree,
        "quadrature": quad.label,
        "volume_defect": vd,
        "max_abs_log_density": logd_max,
        "jacobian_fd_gap": fd,
        "density_residual": float(resid[0]),
        "density_residual_constant": float(resid[1]),
        "record_times": rec_times,
        "volume_defect_mean_by_time": np.mean(series, axis=0),
    })
    (out / "volume_defect.csv").write_text(volume_defect_csv(first), newline="\n")
    rep.tables["volume_defect"] = "volume_defect.csv"
    if p.dump:
        dump_sample(first.sample(0, -1), out / "flow_sample0.bin", cfg.numerical_dict())
        rep.tables["flow_dump"] = "flow_sample0.bin"


# ---------------------------------------------------------------------------
# solve


def _initial(case: str, M: int, u0_M: int, seed: int, nu: float) -> SpectralVelocity:
    if case == "taylor-green":
        return taylor_green_exact(0.0, nu, M)
    if case == "shear":
        return shear_exact(0.0, nu, M)
    if case == "random":
        return random_divfree(u0_M, np.random.default_rng(seed), 1.0).resized(M)
    return SpectralVelocity.zeros(M)


def _exact(case: str, t: float, nu: float, M: int) -> Optional[SpectralVelocity]:
    if case == "taylor-green":
        return taylor_green_exact(t, nu, M)
    if case == "shear":
        return shear_exact(t, nu, M)
    if case == "zero":
        return SpectralVelocity.zeros(M)
    return None


def run_solve(cfg: ExperimentConfig, out: Path, rep: RunReport, timer: _Timer) -> None:
    p = cfg.params
    scfg = SolverConfig(M=p.M, G=p.G, n_samples=p.n_samples, dt=p.dt, master_seed=cfg.master_seed, tol=p.tol,
                        max_iter=p.max_iter, node_dt=p.node_dt, chunk=p.chunk, threads=cfg.threads)
    u0 = _initial(p.case, p.M, p.u0_M, p.u0_seed, p.nu)
    with timer.phase("picard"):
        state = picard_solve(u0, p.nu, p.t_end, scfg)
    final = state.final
    last = state.history[-1]
    se_agg = last.aggregate_std_error(-1)
    div = max(u.divergence_residual() for u in state.u_current)

    rep.check("picard_converged", state.converged and state.iteration <= p.max_iterations, state.iteration,
              p.max_iterations, f"converged={state.converged} after {state.iteration} iterations")
    rep.check("divergence_free", div <= 1e-12, div, 1e-12, "every node of the final iterate")
    rep.check("volume_defect", state.volume_defect <= scfg.volume_tol, state.volume_defect, scfg.volume_tol)
    ratios = []
    for m in range(1, len(state.deltas)):
        if state.deltas[m] > state.noise_floors[m]:
            ratios.append(state.deltas[m] / state.deltas[m - 1])
    worst = max(ratios) if ratios else 0.0
    rep.check("picard_contraction", worst <= 0.7, worst, 0.7,
              "no iterate above the noise floor after the first" if not ratios else "")

    exact = _exact(p.case, p.t_end, p.nu, p.M)
    reference = exact
    if exact is not None:
        norm = exact.l2_norm()
        err = final.l2_distance(exact)
        rel = err / norm if norm > 0 else err
        rep.check("rel_l2_error_vs_exact", rel <= p.rel_tol, rel, p.rel_tol)
        hm = half_modes(p.M)
        ref_half = exact.half()
        off = np.abs(ref_half) < 1e-14
        got = np.abs(final.half())
        se = last.mode_std_error(-1)
        bound = 3.0 * se + 1e-12
        ratio = float(np.max(got[off] / bound[off])) if np.any(off) else 0.0
        rep.check("off_modes_within_3se", ratio <= 1.0, ratio, 1.0, "max |c_k| / (3 se_k + 1e-12) off support")
        rep.results["rel_l2_error"] = rel
        rep.results["off_mode_max"] = float(np.max(got[off])) if np.any(off) else 0.0
        rep.results["off_modes"] = [f"{k[0]}:{k[1]}" for k in hm[off]]
    if p.oracle or p.case == "random":
        with timer.phase("oracle"):
            ref, _ = spectral_ns_solve(u0, p.nu, p.t_end, p.oracle_dt, p.oracle_M)
        ref_M = ref.resized(p.M)
        norm = ref.l2_norm()
        diff = final.l2_distance(ref_M)
        tail = math.sqrt(max(ref.energy() - ref_M.energy(), 0.0) * 2.0)
        rel = diff / norm
        pred = se_agg / norm
        ratio = rel / pred if pred > 0 else math.inf
        rep.check("rel_l2_diff_vs_oracle", rel <= p.oracle_rel_tol, rel, p.oracle_rel_tol)
        rep.check("oracle_diff_vs_std_error", 0.5 <= ratio <= 2.0, ratio, 2.0, "ratio must lie in [0.5, 2]")
        rep.results.update({"oracle_rel_l2_diff": rel, "predicted_rel_std_error": pred, "diff_over_se": ratio,
                            "oracle_tail_beyond_M": tail / norm})
        (out / "oracle_final.csv").write_text(ref.to_csv(), newline="\n")
        rep.tables["oracle_final"] = "oracle_final.csv"
        reference = reference or ref
    rep.results.update({
        "case": p.case,
        "u0_l2_norm": u0.l2_norm(),
        "final_l2_norm": final.l2_norm(),
        "aggregate_std_error": se_agg,
        "convergence": state.to_dict(),
    })
    write_iteration_csv(state, out / "iterations.csv")
    rep.tables["iterations"] = "iterations.csv"
    (out / "final.csv").write_text(final.to_csv(), newline="\n")
    rep.tables["final"] = "final.csv"
    (out / "convergence.json").write_text(json.dumps(state.to_dict(), indent=2) + "\n", newline="\n")
    rep.tables["convergence"] = "convergence.json"


# ---------------------------------------------------------------------------
# sphere heat


def run_sphere_heat(cfg: ExperimentConfig, out: Path, rep: RunReport, timer: _Timer) -> None:
    p = cfg.params
    with timer.phase("decay"):
        fit = sphere_heat_decay(p.nu, p.times, p.n_samples, p.dt, cfg.master_seed, p.chunk, cfg.threads)
    band = p.rel_tol * abs(fit.expected)
    dev = abs(fit.slope - fit.expected)
    rep.check("slope_within_band", dev <= band, dev, band, f"slope {fit.slope:.6f} vs {fit.expected:.6f}")
    rep.check("slope_3sigma_within_band", 3.0 * fit.slope_se <= band, 3.0 * fit.slope_se, band)
    rep.check("slope_consistent_3sigma", dev <= 3.0 * fit.slope_se, dev, 3.0 * fit.slope_se)
    rep.results.update(fit.to_dict())
    _csv(out / "decay.csv", ["t", "a", "std_error", "expected"],
         [[float(t), float(a), float(s), math.exp(fit.expected * t)] for t, a, s in zip(fit.times, fit.a, fit.a_se)])
    rep.tables["decay"] = "decay.csv"


# ---------------------------------------------------------------------------
# oracle


def run_oracle(cfg: ExperimentConfig, out: Path, rep: RunReport, timer: _Timer) -> None:
    p = cfg.params
    u0 = _initial(p.case, p.M, p.u0_M, p.u0_seed, p.nu)
    with timer.phase("oracle"):
        u, _ = spectral_ns_solve(u0, p.nu, p.t_end, p.dt, p.M)
    exact = _exact(p.case, p.t_end, p.nu, p.M)
    if exact is not None:
        rel = u.l2_distance(exact) / exact.l2_norm()
        rep.check("rel_l2_error_vs_exact", rel <= p.tol, rel, p.tol)
        rep.results["rel_l2_error"] = rel
    e0, e1 = u0.energy(), u.energy()
    rep.results.update({"case": p.case, "energy_initial": e0, "energy_final": e1,
                        "energy_ratio": e1 / e0 if e0 > 0 else 1.0})
    if p.nu == 0.0:
        drift = abs(e1 - e0) / e0
        rep.check("energy_conserved", drift <= 1e-6, drift, 1e-6)
    else:
        rep.check("energy_decays", e1 <= e0 * (1 + 1e-12), e1 / e0, 1.0)
    rep.check("divergence_free", u.divergence_residual() <= 1e-12, u.divergence_residual(), 1e-12)
    (out / "oracle_final.csv").write_text(u.to_csv(), newline="\n")
    rep.tables["oracle_final"] = "oracle_final.csv"


RUNNERS = {
    "verify": run_verify,
    "lattice": run_lattice,
    "flow": run_flow,
    "solve": run_solve,
    "sphere-heat": run_sphere_heat,
    "oracle": run_oracle,
}


def run_experiment(cfg: ExperimentConfig, out_dir) -> RunReport:
    """Run one subcommand; numerical and runtime errors are recorded in the report, not raised."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rep = RunReport(cfg.command, cfg.numerical_dict())
    timer = _Timer()
    t0 = time.perf_counter()
    try:
        RUNNERS[cfg.command](cfg, out, rep, timer)
    except (ArithmeticError, RuntimeError, ValueError, np.linalg.LinAlgError) as e:
        rep.error = f"{type(e).__name__}: {e}"
    timer.phases["total"] = time.perf_counter() - t0
    rep.timings = {"threads": cfg.threads, "seconds": dict(timer.phases)}
    return rep
