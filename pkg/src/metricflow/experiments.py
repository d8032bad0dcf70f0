"""Experiment registry and runner behind the command-line front end.

Each experiment function takes a validated ExperimentConfig and returns
(results, csv_header, csv_rows); the runner adds the config echo, a version
string and the wall time, and writes the manifest plus CSV atomically
(temp file + rename).  Given identical config and seed the manifest is
bit-identical up to the wall-time field.
"""

from __future__ import annotations

import csv
import os
import tempfile
import time
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import __version__
from .config import ExperimentConfig
from .divergences import (
    DivergenceKind,
    StaticProblem,
    divergence,
    min_eigenvalue_gap,
    second_variation_probe,
    static_local_search,
    static_objective,
)
from .fiber import euler_alpha_lagrangian, verify_pi1_submersion
from .fields import VectorField
from .flatmaps import (
    assert_flat,
    factorize_flat_metric,
    flat_pullback_instance,
    frame_and_connection,
    non_flat_instance,
)
from .randomfields import (
    band_limited_density,
    band_limited_scalar,
    band_limited_sym_tensor,
    random_spd_metric,
    substream,
)
from .seqdemo import SeqSpace, vanishing_sweep
from .serialization import dumps_result, field_to_json
from .tensors import volume_map
from .transport import (
    DisplacementPath,
    displacement_path_energy,
    linear_metric_path,
    path_energy,
    toy_geodesic,
    we_distance_bounds,
    we_tangent_norm,
    wfr_tangent_norm,
)


def worker_count():
    """Thread cap for concurrent trials; METRICFLOW_THREADS overrides."""
    env = os.environ.get("METRICFLOW_THREADS")
    if env is not None:
        try:
            return max(1, int(env))
        except ValueError:
            return 1
    return min(8, os.cpu_count() or 1)


def _map_trials(fn, args_list):
    workers = worker_count()
    if workers == 1 or len(args_list) <= 1:
        return [fn(a) for a in args_list]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, args_list))


# ---------------------------------------------------------------------------
# experiment bodies


def _substrate_checks(cfg: ExperimentConfig):
    """Discrete-calculus certificate: adjointness, dense agreement, refinement."""
    from .fields import (
        ScalarField,
        diff_array,
        divergence_array,
        gradient_array,
        integrate,
        sample_array,
    )
    from .cg import solve_spd
    from .fields import Grid

    grid = Grid(2, "torus", 24)
    fs = band_limited_scalar(grid, substream(cfg.seed, "substrate-f"), 4, 1.0)
    ws = band_limited_sym_tensor(grid, substream(cfg.seed, "substrate-w"), 4, 1.0)
    wvec = ws.components[:2]
    ibp = integrate(
        ScalarField(grid, fs.values * divergence_array(wvec, grid))
    ) + integrate(ScalarField(grid, np.sum(gradient_array(fs.values, grid) * wvec, axis=0)))

    g8 = Grid(2, "torus", 8)

    def screened(u):
        lap = np.zeros_like(u)
        for ax in range(2):
            lap += diff_array(diff_array(u, g8, ax), g8, ax)
        return u - 0.05 * lap

    n = g8.node_count
    dense = np.zeros((n, n))
    for j in range(n):
        e = np.zeros(n)
        e[j] = 1.0
        dense[:, j] = screened(e.reshape(g8.shape)).ravel()
    b = substream(cfg.seed, "substrate-rhs").normal(size=g8.shape)
    direct = np.linalg.solve(dense, b.ravel()).reshape(g8.shape)
    cg_err = float(np.max(np.abs(solve_spd(screened, b, tol=1e-12).x - direct)))

    def derivative_err(n_axis):
        g = Grid(2, "torus", n_axis)
        x = g.coordinates()
        d = diff_array(np.sin(2 * np.pi * x[0]), g, 0)
        return float(np.max(np.abs(d - 2 * np.pi * np.cos(2 * np.pi * x[0]))))

    def interp_err(n_axis):
        g = Grid(2, "torus", n_axis)
        x = g.coordinates()
        mids = (x + g.spacing / 2.0).reshape(2, -1)
        got = sample_array(np.sin(2 * np.pi * x[0]), g, mids)
        return float(np.max(np.abs(got - np.sin(2 * np.pi * mids[0]))))

    def quad_err(n_axis):
        g = Grid(2, "box", n_axis, extent=2.0)
        x = g.coordinates()
        return abs(
            integrate(ScalarField(g, np.exp(x[0]) * np.exp(x[1])))
            - (np.e - np.exp(-1.0)) ** 2
        )

    return {
        "ibp_residual": abs(ibp),
        "cg_vs_dense_error": cg_err,
        "refinement_ratios": {
            "derivative": derivative_err(32) / derivative_err(64),
            "interpolation": interp_err(32) / interp_err(64),
            "quadrature": quad_err(33) / quad_err(65),
        },
    }


def run_we_norm(cfg: ExperimentConfig):
    p = cfg.params
    rows = []
    for trial in range(p["n_trials"]):
        g = random_spd_metric(
            cfg.grid, substream(cfg.seed, f"we-norm-g-{trial}"), p["modes"], p["amplitude"]
        )
        dg = band_limited_sym_tensor(
            cfg.grid, substream(cfg.seed, f"we-norm-dg-{trial}"), p["modes"], p["amplitude"]
        )
        res = we_tangent_norm(g, dg, cfg.solver)
        rows.append(
            {
                "trial": trial,
                "value": res.value,
                "iters": res.iterations,
                "residual": res.residual,
                "decomposition_residual": res.decomposition.residual,
            }
        )
    results = {
        "values": [r["value"] for r in rows],
        "max_iters": max(r["iters"] for r in rows),
        "substrate": _substrate_checks(cfg),
    }
    header = ["trial", "value", "iters", "residual", "decomposition_residual"]
    return results, header, rows


def run_wfr_norm(cfg: ExperimentConfig):
    p = cfg.params
    rows = []
    for trial in range(p["n_trials"]):
        rho = band_limited_density(
            cfg.grid, substream(cfg.seed, f"wfr-rho-{trial}"), p["modes"], p["amplitude"]
        )
        drho = band_limited_scalar(
            cfg.grid, substream(cfg.seed, f"wfr-drho-{trial}"), p["modes"], p["amplitude"]
        )
        res = wfr_tangent_norm(rho, drho, cfg.solver)
        rows.append(
            {"trial": trial, "value": res.value, "iters": res.iterations, "residual": res.residual}
        )
    results = {"values": [r["value"] for r in rows]}
    return results, ["trial", "value", "iters", "residual"], rows


def run_submersion(cfg: ExperimentConfig):
    p = cfg.params

    def one(trial):
        g = random_spd_metric(
            cfg.grid, substream(cfg.seed, f"submersion-g-{trial}"), p["modes"], p["amplitude"]
        )
        drho = band_limited_scalar(
            cfg.grid, substream(cfg.seed, f"submersion-drho-{trial}"), p["modes"], p["amplitude"]
        )
        report = verify_pi1_submersion(
            g, drho, n_perturb=p["n_perturb"], seed=cfg.seed + trial, cfg=cfg.solver
        )
        return {
            "trial": trial,
            "wfr_value": report.wfr_value,
            "we_value_of_lift": report.we_value_of_lift,
            "gap": report.gap,
            "relative_gap": abs(report.gap) / (1.0 + report.wfr_value),
            "min_perturbation_gap": min(report.perturbation_gaps),
        }

    rows = _map_trials(one, list(range(p["n_trials"])))
    results = {
        "max_relative_gap": max(r["relative_gap"] for r in rows),
        "min_perturbation_gap": min(r["min_perturbation_gap"] for r in rows),
        "trials": len(rows),
    }
    header = [
        "trial", "wfr_value", "we_value_of_lift", "gap", "relative_gap", "min_perturbation_gap",
    ]
    return results, header, rows


def run_divergence_sweep(cfg: ExperimentConfig):
    p = cfg.params
    kinds = [k.value for k in DivergenceKind]

    def one(args):
        kind_name, pair_seed = args
        kind = DivergenceKind(kind_name)
        t0 = time.perf_counter()
        if kind in (DivergenceKind.KL_MET, DivergenceKind.SHAPE, DivergenceKind.TILDE_KL_MET):
            a = random_spd_metric(
                cfg.grid, substream(pair_seed, f"div-{kind_name}-a"),
                p["modes"], p["amplitude"],
            )
            b = random_spd_metric(
                cfg.grid, substream(pair_seed, f"div-{kind_name}-b"),
                p["modes"], p["amplitude"],
            )
            value = divergence(kind, a, b)
            gap = min_eigenvalue_gap(a, b)
        else:
            a = band_limited_density(
                cfg.grid, substream(pair_seed, f"div-{kind_name}-a"),
                p["modes"], p["amplitude"],
            )
            b = band_limited_density(
                cfg.grid, substream(pair_seed, f"div-{kind_name}-b"),
                p["modes"], p["amplitude"],
            )
            value = divergence(kind, a, b)
            ratio = a.values / b.values
            gap = float(np.min(ratio - np.log(ratio) - 1.0))
        ms = (time.perf_counter() - t0) * 1e3
        return {
            "kind": kind_name,
            "seed": pair_seed,
            "value": value,
            "min_eigen_gap": gap,
            "runtime_ms": ms,
        }

    tasks = [(k, cfg.seed + i) for k in kinds for i in range(p["n_pairs"])]
    rows = _map_trials(one, tasks)
    min_value = min(r["value"] for r in rows)
    results = {
        "min_value": min_value,
        "pairs_per_kind": p["n_pairs"],
        "nonnegative": min_value >= -1e-12,
        "closed_forms": _conformal_closed_forms(cfg),
    }
    return results, ["kind", "seed", "value", "min_eigen_gap", "runtime_ms"], rows


def _conformal_closed_forms(cfg: ExperimentConfig):
    """The conformal reference values with their exact targets."""
    from .fields import DensityField, Grid, SymTensorField
    from .tensors import MetricField

    grid = cfg.grid if cfg.grid.topology == "torus" else Grid(2, "torus", 16)
    eye = MetricField.euclidean(grid)
    e_eye = MetricField.scaled_identity(grid, np.e)
    one = DensityField.constant(grid, 1.0)
    e_dens = DensityField.constant(grid, np.e)
    from .divergences import kl_density_projection

    dg = SymTensorField(grid, 0.5 * eye.components)
    we_val = we_tangent_norm(eye, dg, cfg.solver).value
    return {
        "we_conformal": {"value": we_val, "target": grid.dim * cfg.solver.lam / 4.0 * 0.25 * grid.dim},
        "kl_met_conformal": {"value": divergence(DivergenceKind.KL_MET, eye, e_eye), "target": 1.0},
        "density_projection_conformal": {
            "value": kl_density_projection(one, e_dens),
            "target": 1.0,
        },
        "tilde_kl_conformal": {
            "value": divergence(DivergenceKind.TILDE_KL_MET, eye, e_eye),
            "target": np.e - 2.0,
        },
    }


def run_second_variation(cfg: ExperimentConfig):
    p = cfg.params
    rows = []
    worst = 0.0
    for trial in range(p["n_triples"]):
        g = random_spd_metric(
            cfg.grid, substream(cfg.seed, f"sv-g-{trial}"), p["modes"], p["amplitude"]
        )
        h = band_limited_sym_tensor(
            cfg.grid, substream(cfg.seed, f"sv-h-{trial}"), p["modes"], p["amplitude"]
        )
        k = band_limited_sym_tensor(
            cfg.grid, substream(cfg.seed, f"sv-k-{trial}"), p["modes"], p["amplitude"]
        )
        for kind in (DivergenceKind.KL_MET, DivergenceKind.TILDE_KL_MET):
            mixed, ebin_half, richardson = second_variation_probe(kind, g, h, k, p["step"])
            rel = abs(richardson - ebin_half) / max(abs(ebin_half), 1e-14)
            worst = max(worst, rel)
            rows.append(
                {
                    "trial": trial,
                    "kind": kind.value,
                    "mixed_second": mixed,
                    "ebin_half": ebin_half,
                    "richardson": richardson,
                    "relative_error": rel,
                }
            )
    results = {"max_relative_error": worst, "triples": p["n_triples"]}
    header = ["trial", "kind", "mixed_second", "ebin_half", "richardson", "relative_error"]
    return results, header, rows


def run_flat_factorize(cfg: ExperimentConfig, out_dir=None):
    p = cfg.params
    rows = []
    artifacts = {}
    for i in range(p["n_instances"]):
        g, phi0 = flat_pullback_instance(cfg.grid, seed=cfg.seed + i, amplitude=p["amplitude"])
        phi, frame, theta, report = factorize_flat_metric(
            g, collar_width=phi0.collar_width
        )
        recovery = float(
            np.max(np.abs(phi.displacement.components - phi0.displacement.components))
        )
        rows.append(
            {
                "instance": i,
                "flat": True,
                "max_curvature": report.max_curvature,
                "path_independence_gap": report.path_independence_gap,
                "reconstruction_error": report.reconstruction_error,
                "recovery_error": recovery,
            }
        )
        if i == 0:
            artifacts["displacement.json"] = field_to_json(
                phi.displacement, kind="displacement",
                extra={"collar_width": phi.collar_width},
            )
            artifacts["report.json"] = dumps_result(
                {
                    "max_curvature": report.max_curvature,
                    "path_independence_gap": report.path_independence_gap,
                    "reconstruction_error": report.reconstruction_error,
                }
            )
    rejected = 0
    for i in range(p["n_non_flat"]):
        g = non_flat_instance(cfg.grid, seed=cfg.seed + 100 + i)
        frame = frame_and_connection(g, collar_width=2)
        flat = assert_flat(frame, 10.0 * cfg.grid.spacing**2)
        rejected += int(not flat)
        rows.append(
            {
                "instance": p["n_instances"] + i,
                "flat": flat,
                "max_curvature": float(np.max(np.abs(frame.curvature_residual.values))),
                "path_independence_gap": float("nan"),
                "reconstruction_error": float("nan"),
                "recovery_error": float("nan"),
            }
        )
    results = {
        "max_reconstruction_error": max(
            r["reconstruction_error"] for r in rows if r["flat"] is True
        ),
        "non_flat_rejected": rejected,
        "non_flat_total": p["n_non_flat"],
    }
    header = [
        "instance", "flat", "max_curvature", "path_independence_gap",
        "reconstruction_error", "recovery_error",
    ]
    return results, header, rows, artifacts


def run_seq_demo(cfg: ExperimentConfig):
    p = cfg.params
    space = SeqSpace(n_max=p["n_max"])
    x = space.vector([0.0])
    y = space.basis(1)
    rows = vanishing_sweep(space, x, y, p["ns"], quad_points=p["quad_points"])
    totals = [r["total"] for r in rows]
    results = {
        "totals": totals,
        "monotone_decreasing": bool(all(a > b for a, b in zip(totals, totals[1:]))),
        "d1": rows[0]["d1"],
        "d2_lower": rows[0]["d2_lower"],
    }
    header = ["n", "len1", "len2", "len3", "total", "analytic_bound", "d1", "d2_lower"]
    return results, header, rows


def run_euler_alpha(cfg: ExperimentConfig):
    p = cfg.params
    x = cfg.grid.coordinates()
    comps = np.zeros((cfg.grid.dim,) + cfg.grid.shape)
    comps[0] = np.sin(2.0 * np.pi * x[cfg.grid.dim - 1])
    v = VectorField(cfg.grid, comps)
    trace_form, def_form, kinetic = euler_alpha_lagrangian(v, stencil_order=p["stencil_order"])
    rows = [
        {
            "trace_form": trace_form,
            "def_form": def_form,
            "kinetic": kinetic,
            "identity_residual": abs(trace_form - def_form),
            "pi_squared_error": abs(trace_form - np.pi**2),
        }
    ]
    results = rows[0]
    header = ["trace_form", "def_form", "kinetic", "identity_residual", "pi_squared_error"]
    return results, header, rows


def run_path_energy(cfg: ExperimentConfig):
    p = cfg.params
    rows = []
    for trial in range(p["n_paths"]):
        g0 = random_spd_metric(
            cfg.grid, substream(cfg.seed, f"path-g0-{trial}"), p["modes"], p["amplitude"]
        )
        g1 = random_spd_metric(
            cfg.grid, substream(cfg.seed, f"path-g1-{trial}"), p["modes"], p["amplitude"]
        )
        path = linear_metric_path(g0, g1, n_t=p["n_t"])
        we = path_energy(path, cfg.solver, which="we")
        ebin = path_energy(path, cfg.solver, which="ebin")
        densities = [volume_map(m) for m in path.metrics]
        from .transport import density_path_energy

        wfr = density_path_energy(densities, cfg.solver)
        d, lam = cfg.grid.dim, cfg.solver.lam
        rows.append(
            {
                "trial": trial,
                "we_energy": we,
                "ebin_energy": ebin,
                "wfr_projected_energy": wfr,
                "pure_source_bound": d * lam / 4.0 * ebin,
                "sandwich_ok": wfr - 1e-8 <= we <= d * lam / 4.0 * ebin + 1e-8,
            }
        )
    results = {"all_sandwich_ok": all(r["sandwich_ok"] for r in rows)}
    header = [
        "trial", "we_energy", "ebin_energy", "wfr_projected_energy",
        "pure_source_bound", "sandwich_ok",
    ]
    return results, header, rows


def run_static_eval(cfg: ExperimentConfig):
    p = cfg.params
    g0 = random_spd_metric(cfg.grid, substream(cfg.seed, "static-g0"), p["modes"], 0.2)
    g1 = random_spd_metric(cfg.grid, substream(cfg.seed, "static-g1"), p["modes"], 0.2)
    problem = StaticProblem(
        g0, g1, lambda_balance=p["lambda_balance"], kind=DivergenceKind(p["kind"])
    )
    from .tensors import DisplacementMap

    start = static_objective(problem, g0, DisplacementMap.identity(cfg.grid))
    gbar, phi, value, trace = static_local_search(
        problem, iters=p["iters"], seed=cfg.seed, modes=p["modes"]
    )
    rows = [{"step": i, "value": v} for i, v in enumerate(trace.values)]
    results = {
        "start_value": start,
        "final_value": value,
        "accepted_moves": trace.accepted,
        "monotone": bool(all(a >= b - 1e-12 for a, b in zip(trace.values, trace.values[1:]))),
    }
    return results, ["step", "value"], rows


def run_toy_geodesic(cfg: ExperimentConfig):
    p = cfg.params
    grid = cfg.grid
    if grid.topology != "box":
        raise ValueError("toy-geodesic requires a box grid")
    coords = grid.coordinates()
    from .flatmaps import bump_and_gradient

    psi, _ = bump_and_gradient(coords, (0.0, 0.0), 0.55 * grid.half_extent)
    comps = np.zeros((grid.dim,) + grid.shape)
    comps[0] = p["amplitude"] * psi
    comps[1] = -0.5 * p["amplitude"] * psi
    f = VectorField(grid, comps)
    toy = toy_geodesic(f, n_t=p["n_t"])
    spread = float(np.max(toy.interval_energies) - np.min(toy.interval_energies))
    rel_spread = spread / max(float(np.max(toy.interval_energies)), 1e-300)

    rng = substream(cfg.seed, "toy-perturb")
    increases = []
    base = toy.energy
    ts = np.linspace(0.0, 1.0, p["n_t"] + 1)
    for j in range(p["n_perturb"]):
        center = rng.uniform(-0.2 * grid.half_extent, 0.2 * grid.half_extent, size=2)
        radius = grid.half_extent * rng.uniform(0.35, 0.5)
        wpsi, _ = bump_and_gradient(coords, center, radius)
        direction = rng.normal(size=2)
        direction *= 0.2 * p["amplitude"] / np.linalg.norm(direction)
        from .fields import VectorField as VF
        from .tensors import DisplacementMap

        maps = []
        for t in ts:
            u_t = t * f.components + np.sin(np.pi * t) * np.stack(
                [direction[0] * wpsi, direction[1] * wpsi]
            )
            maps.append(DisplacementMap(VF(grid, u_t), collar_width=1))
        perturbed = displacement_path_energy(DisplacementPath(grid, maps))
        increases.append(perturbed - base)
    rows = [
        {
            "interval": i,
            "energy": float(toy.interval_energies[i]),
            "energy_eulerian": float(toy.interval_energies_eulerian[i]),
        }
        for i in range(len(toy.interval_energies))
    ]
    results = {
        "energy": base,
        "relative_spread": rel_spread,
        "min_perturbation_increase": min(increases),
        "all_perturbations_increase": bool(all(inc > 0 for inc in increases)),
    }
    return results, ["interval", "energy", "energy_eulerian"], rows


def run_bounds(cfg: ExperimentConfig):
    p = cfg.params
    rows = []
    for trial in range(p["n_pairs"]):
        g0 = random_spd_metric(
            cfg.grid, substream(cfg.seed, f"bounds-g0-{trial}"), p["modes"], p["amplitude"]
        )
        g1 = random_spd_metric(
            cfg.grid, substream(cfg.seed, f"bounds-g1-{trial}"), p["modes"], p["amplitude"]
        )
        b = we_distance_bounds(g0, g1, cfg.solver, n_t=p["n_t"])
        rows.append(
            {
                "trial": trial,
                "lower": b.lower,
                "upper": b.upper,
                "mass_lower_bound": b.mass_lower_bound,
                "lower_flag": b.lower_flag,
                "upper_flag": b.upper_flag,
            }
        )
    results = {"pairs": p["n_pairs"]}
    header = ["trial", "lower", "upper", "mass_lower_bound", "lower_flag", "upper_flag"]
    return results, header, rows


RUNNERS = {
    "we-norm": run_we_norm,
    "wfr-norm": run_wfr_norm,
    "submersion": run_submersion,
    "divergence-sweep": run_divergence_sweep,
    "second-variation": run_second_variation,
    "flat-factorize": run_flat_factorize,
    "seq-demo": run_seq_demo,
    "euler-alpha": run_euler_alpha,
    "path-energy": run_path_energy,
    "static-eval": run_static_eval,
    "toy-geodesic": run_toy_geodesic,
    "bounds": run_bounds,
}


# ---------------------------------------------------------------------------
# runner


def _atomic_write(path, text):
    directory = os.path.dirname(path) or "."
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".metricflow-")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _csv_text(header, rows):
    import io

    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=header, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: row.get(k) for k in header})
    return buf.getvalue()


def run_experiment(cfg: ExperimentConfig, out_dir=None):
    """Execute one experiment; returns (manifest dict, artifact paths)."""
    out_dir = out_dir or cfg.output_path or "."
    runner = RUNNERS[cfg.experiment]
    started = time.perf_counter()
    output = runner(cfg)
    if len(output) == 4:
        results, header, rows, extra_artifacts = output
    else:
        results, header, rows = output
        extra_artifacts = {}
    wall = time.perf_counter() - started

    manifest = {
        "config": cfg.to_dict(),
        "version": f"metricflow-{__version__}",
        "wall_time_s": wall,
        "results": results,
    }
    base = cfg.experiment.replace("-", "_")
    paths = {}
    manifest_path = os.path.join(out_dir, f"{base}_manifest.json")
    _atomic_write(manifest_path, dumps_result(manifest))
    paths["manifest"] = manifest_path
    csv_path = os.path.join(out_dir, f"{base}.csv")
    _atomic_write(csv_path, _csv_text(header, rows))
    paths["csv"] = csv_path
    for name, text in extra_artifacts.items():
        extra_path = os.path.join(out_dir, f"{base}_{name}")
        _atomic_write(extra_path, text)
        paths[name] = extra_path
    return manifest, paths
