"""Acceptance suite: one test per criterion, printed pass/fail lines.

Run with `pytest tests/test_acceptance.py -v -s` to see the per-criterion
report; every tolerance is pinned here, nothing is calibrated at runtime.
"""

import time

import numpy as np

from metricflow import (
    DensityField,
    DivergenceKind,
    Grid,
    MetricField,
    ScalarField,
    SeqSpace,
    SolverConfig,
    SymTensorField,
    VectorField,
    assert_flat,
    divergence,
    euler_alpha_lagrangian,
    factorize_flat_metric,
    flat_pullback_instance,
    frame_and_connection,
    integrate,
    kl_density_projection,
    linear_metric_path,
    non_flat_instance,
    path_energy,
    second_variation_probe,
    solve_spd,
    toy_geodesic,
    vanishing_sweep,
    verify_pi1_submersion,
    volume_map,
    we_tangent_norm,
)
from metricflow.divergences import conformal_lift, min_eigenvalue_gap
from metricflow.fields import (
    diff_array,
    divergence_array,
    gradient_array,
    sample_array,
)
from metricflow.flatmaps import bump_and_gradient
from metricflow.randomfields import (
    band_limited_density,
    band_limited_scalar,
    band_limited_sym_tensor,
    band_limited_vector,
    random_spd_metric,
    substream,
)
from metricflow.transport import (
    DisplacementPath,
    density_path_energy,
    displacement_path_energy,
)

CFG = SolverConfig()
K = DivergenceKind


def report(number, description, ok, detail=""):
    status = "PASS" if ok else "FAIL"
    print(f"ACCEPTANCE {number:02d} [{status}] {description} {detail}")
    assert ok, f"criterion {number}: {description} {detail}"


def test_criterion_01_submersion_identity():
    grid = Grid(2, "torus", 16)
    started = time.perf_counter()
    worst_gap = 0.0
    worst_pert = np.inf
    for trial in range(20):
        g = random_spd_metric(grid, substream(1000 + trial, "acc1-g"), 3, 0.15)
        drho = band_limited_scalar(grid, substream(1000 + trial, "acc1-dr"), 3, 0.15)
        rep = verify_pi1_submersion(g, drho, n_perturb=10, seed=trial, cfg=CFG)
        worst_gap = max(worst_gap, abs(rep.gap) / (1.0 + rep.wfr_value))
        worst_pert = min(worst_pert, min(rep.perturbation_gaps))
    elapsed = time.perf_counter() - started
    ok = worst_gap <= 1e-5 and worst_pert >= -1e-8 and elapsed <= 60.0
    report(
        1,
        "volume map is a submersion onto the density geometry:",
        ok,
        f"(max rel gap {worst_gap:.2e}, min perturbation gap {worst_pert:.2e}, {elapsed:.1f}s)",
    )


def test_criterion_02_conformal_closed_forms():
    grid = Grid(2, "torus", 16)
    eye = MetricField.euclidean(grid)
    e_eye = MetricField.scaled_identity(grid, np.e)
    one = DensityField.constant(grid, 1.0)
    e_dens = DensityField.constant(grid, np.e)

    we = we_tangent_norm(eye, SymTensorField.from_matrix_entries(grid, 0.5, 0.0, 0.5), CFG)
    checks = [
        abs(we.value - 0.25) <= 1e-8,
        abs(divergence(K.KL_MET, eye, e_eye) - 1.0) <= 1e-10,
        abs(kl_density_projection(one, e_dens) - 1.0) <= 1e-10,
        abs(divergence(K.TILDE_KL_MET, eye, e_eye) - (np.e - 2.0)) <= 1e-10,
    ]
    report(
        2,
        "conformal closed forms reproduced:",
        all(checks),
        f"(we {we.value:.2e}-0.25, checks {checks})",
    )


def test_criterion_03_second_variation_recovers_half_ebin():
    grid = Grid(2, "torus", 16)
    worst = 0.0
    for trial in range(50):
        g = random_spd_metric(grid, substream(3000 + trial, "acc3-g"), 3, 0.3)
        h = band_limited_sym_tensor(grid, substream(3000 + trial, "acc3-h"), 3, 0.4)
        k = band_limited_sym_tensor(grid, substream(3000 + trial, "acc3-k"), 3, 0.4)
        for kind in (K.KL_MET, K.TILDE_KL_MET):
            _, ebin_half, rich = second_variation_probe(kind, g, h, k, step=1e-2)
            worst = max(worst, abs(rich - ebin_half) / max(abs(ebin_half), 1e-14))
    report(
        3,
        "mixed second variation recovers half the source inner product:",
        worst <= 1e-4,
        f"(max relative error {worst:.2e} over 50 triples x 2 kinds)",
    )


def test_criterion_04_divergence_axioms():
    grid = Grid(2, "torus", 16)
    min_value = np.inf
    positive_sep = True
    for kind in K:
        metric_kind = kind in (K.KL_MET, K.SHAPE, K.TILDE_KL_MET)
        for trial in range(1000):
            label = f"acc4-{kind.value}-{trial}"
            if metric_kind:
                a = random_spd_metric(grid, substream(trial, label + "-a"), 3, 0.45)
                b = random_spd_metric(grid, substream(trial, label + "-b"), 3, 0.45)
                sep = min_eigenvalue_gap(a, b)
            else:
                a = band_limited_density(grid, substream(trial, label + "-a"), 3, 0.5)
                b = band_limited_density(grid, substream(trial, label + "-b"), 3, 0.5)
                ratio = a.values / b.values
                sep = float(np.min(ratio - np.log(ratio) - 1.0))
            value = divergence(kind, a, b)
            min_value = min(min_value, value)
            if sep > 1e-8 and value <= 0.0:
                positive_sep = False
        # diagonal vanishes
        diag = divergence(kind, a, a)
        min_value = min(min_value, diag)
        if abs(diag) > 1e-12:
            positive_sep = False

    # conformal-lift optimality: 20 random non-conformal lifts never beat it
    rho0 = band_limited_density(grid, substream(4, "acc4-rho0"), 3, 0.4)
    g1 = random_spd_metric(grid, substream(4, "acc4-g1"), 3, 0.3)
    floor = kl_density_projection(rho0, volume_map(g1))
    lift_gap = abs(divergence(K.KL_MET, conformal_lift(rho0, g1), g1) - floor)
    dominates = True
    for trial in range(20):
        shape = random_spd_metric(grid, substream(trial, "acc4-lift"), 3, 0.45)
        det = shape.components[0] * shape.components[2] - shape.components[1] ** 2
        lift = MetricField.from_components(grid, rho0.values * shape.components / np.sqrt(det))
        if divergence(K.KL_MET, lift, g1) < floor - 1e-9:
            dominates = False
    ok = min_value >= -1e-12 and positive_sep and lift_gap <= 1e-9 and dominates
    report(
        4,
        "divergence axioms over 1000 seeded pairs per kind:",
        ok,
        f"(min value {min_value:.2e}, conformal-lift gap {lift_gap:.2e})",
    )


def test_criterion_05_flat_factorization():
    started = time.perf_counter()
    errors = {}
    for n in (64, 128):
        grid = Grid(2, "box", n, extent=2.0)
        errors[n] = []
        for seed in range(5):
            g, phi0 = flat_pullback_instance(grid, seed=seed)
            _, _, _, rep = factorize_flat_metric(g, collar_width=phi0.collar_width)
            errors[n].append(rep.reconstruction_error)
    ratios = [a / b for a, b in zip(errors[64], errors[128])]
    grid = Grid(2, "box", 64, extent=2.0)
    rejected = 0
    for seed in range(3):
        frame = frame_and_connection(non_flat_instance(grid, seed=seed), collar_width=2)
        rejected += int(not assert_flat(frame, 10.0 * grid.spacing**2))
    elapsed = time.perf_counter() - started
    ok = (
        max(errors[64]) <= 1e-3
        and all(3.0 <= r <= 5.0 for r in ratios)
        and rejected == 3
        and elapsed <= 120.0
    )
    report(
        5,
        "flat metrics factor through a reconstructed diffeomorphism:",
        ok,
        f"(max error {max(errors[64]):.2e}, ratios {[round(r, 2) for r in ratios]}, "
        f"{rejected}/3 non-flat rejected, {elapsed:.1f}s)",
    )


def test_criterion_06_vanishing_distance():
    space = SeqSpace()
    rows = vanishing_sweep(space, [0.0], space.basis(1), ns=(8, 12, 16, 20, 24))
    totals = [r["total"] for r in rows]
    bounds_ok = all(r["total"] <= r["analytic_bound"] + 1e-12 for r in rows)
    ok = (
        totals[-1] <= 0.05
        and abs(rows[0]["d1"] - np.sqrt(0.5)) <= 1e-12
        and rows[0]["d2_lower"] >= 0.02
        and all(a > b for a, b in zip(totals, totals[1:]))
        and bounds_ok
    )
    report(
        6,
        "three-segment detours vanish while factor distances stay fixed:",
        ok,
        f"(total(24) = {totals[-1]:.4f}, d1 = {rows[0]['d1']:.4f}, "
        f"d2_lower = {rows[0]['d2_lower']:.4f})",
    )


def test_criterion_07_flat_fiber_identity():
    grid = Grid(2, "torus", 64)
    x = grid.coordinates()
    comps = np.zeros((2,) + grid.shape)
    comps[0] = np.sin(2 * np.pi * x[1])
    trace_form, def_form, kinetic = euler_alpha_lagrangian(VectorField(grid, comps))
    ok = (
        abs(trace_form - np.pi**2) <= 2e-3
        and abs(def_form - np.pi**2) <= 2e-3
        and abs(trace_form - def_form) <= 1e-10
        and abs(kinetic - 0.5) <= 1e-12
    )
    report(
        7,
        "trace form equals deformation energy on the flat background:",
        ok,
        f"(trace {trace_form:.6f}, kinetic {kinetic:.12f})",
    )


def test_criterion_08_distance_bound_sanity():
    grid = Grid(2, "torus", 16)
    d_lam_quarter = grid.dim * CFG.lam / 4.0
    ok = True
    details = []
    for trial in range(10):
        g0 = random_spd_metric(grid, substream(8000 + trial, "acc8-a"), 3, 0.2)
        g1 = random_spd_metric(grid, substream(8000 + trial, "acc8-b"), 3, 0.2)
        path = linear_metric_path(g0, g1, n_t=6)
        we = path_energy(path, CFG, which="we")
        ebin = path_energy(path, CFG, which="ebin")
        wfr = density_path_energy([volume_map(m) for m in path.metrics], CFG)
        lower_ok = we >= wfr - 1e-8
        upper_ok = we <= d_lam_quarter * ebin + 1e-8
        ok = ok and lower_ok and upper_ok
        details.append((we - wfr, d_lam_quarter * ebin - we))
    margins = np.array(details)
    report(
        8,
        "path energies sandwich between projected and pure-source energies:",
        ok,
        f"(min lower margin {margins[:, 0].min():.2e}, min upper margin {margins[:, 1].min():.2e})",
    )


def test_criterion_09_toy_geodesic():
    grid = Grid(2, "box", 64, extent=2.0)
    coords = grid.coordinates()
    psi, _ = bump_and_gradient(coords, (0.0, 0.0), 0.55 * grid.half_extent)
    comps = np.zeros((2,) + grid.shape)
    comps[0] = 0.08 * psi
    comps[1] = -0.04 * psi
    f = VectorField(grid, comps)
    toy = toy_geodesic(f, n_t=16)
    spread = float(np.max(toy.interval_energies) - np.min(toy.interval_energies))
    rel_spread = spread / float(np.max(toy.interval_energies))

    from metricflow.tensors import DisplacementMap

    rng = substream(9, "acc9")
    ts = np.linspace(0.0, 1.0, 17)
    increases = []
    for trial in range(10):
        center = rng.uniform(-0.2, 0.2, size=2) * grid.half_extent
        radius = grid.half_extent * rng.uniform(0.35, 0.5)
        wpsi, _ = bump_and_gradient(coords, center, radius)
        direction = rng.normal(size=2)
        direction *= 0.016 / np.linalg.norm(direction)
        maps = []
        for t in ts:
            u_t = t * f.components + np.sin(np.pi * t) * np.stack(
                [direction[0] * wpsi, direction[1] * wpsi]
            )
            maps.append(DisplacementMap(VectorField(grid, u_t), collar_width=1))
        increases.append(displacement_path_energy(DisplacementPath(grid, maps)) - toy.energy)
    ok = rel_spread <= 1e-6 and all(inc > 0.0 for inc in increases)
    report(
        9,
        "straight transport paths have constant speed and are locally minimal:",
        ok,
        f"(relative spread {rel_spread:.2e}, min increase {min(increases):.2e})",
    )


def test_criterion_10_discrete_calculus_base():
    # integration by parts
    grid = Grid(2, "torus", 24)
    fs = band_limited_scalar(grid, substream(10, "acc10-f"), 4, 1.0)
    ws = band_limited_vector(grid, substream(10, "acc10-w"), 4, 1.0)
    ibp = integrate(
        ScalarField(grid, fs.values * divergence_array(ws.components, grid))
    ) + integrate(
        ScalarField(grid, np.sum(gradient_array(fs.values, grid) * ws.components, axis=0))
    )

    # CG against a dense direct solve on an 8x8 grid
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
    b = np.random.default_rng(10).normal(size=g8.shape)
    direct = np.linalg.solve(dense, b.ravel()).reshape(g8.shape)
    cg_err = float(np.max(np.abs(solve_spd(screened, b, tol=1e-12).x - direct)))

    # order-2 refinement of the four calculus probes
    ratios = {}

    def errs_over(ns, fn):
        return [fn(n) for n in ns]

    def derivative_err(n):
        g = Grid(2, "torus", n)
        x = g.coordinates()
        d = diff_array(np.sin(2 * np.pi * x[0]), g, 0)
        return float(np.max(np.abs(d - 2 * np.pi * np.cos(2 * np.pi * x[0]))))

    def box_derivative_err(n):
        g = Grid(2, "box", n, extent=2.0)
        x = g.coordinates()
        d = diff_array(np.sin(x[0] + 0.3), g, 0)
        return float(np.max(np.abs(d - np.cos(x[0] + 0.3))))

    def quadrature_err(n):
        g = Grid(2, "box", n, extent=2.0)
        x = g.coordinates()
        val = integrate(ScalarField(g, np.exp(x[0]) * np.exp(x[1])))
        return abs(val - (np.e - np.exp(-1.0)) ** 2)

    def interpolation_err(n):
        g = Grid(2, "torus", n)
        x = g.coordinates()
        mids = (x + g.spacing / 2.0).reshape(2, -1)
        got = sample_array(np.sin(2 * np.pi * x[0]), g, mids)
        return float(np.max(np.abs(got - np.sin(2 * np.pi * mids[0]))))

    for name, fn, ns in (
        ("derivative", derivative_err, (32, 64)),
        ("box_derivative", box_derivative_err, (33, 65)),
        ("quadrature", quadrature_err, (33, 65)),
        ("interpolation", interpolation_err, (32, 64)),
    ):
        e = errs_over(ns, fn)
        ratios[name] = e[0] / e[1]

    ok = (
        abs(ibp) <= 1e-10
        and cg_err <= 1e-8
        and all(3.2 <= r <= 4.8 for r in ratios.values())
    )
    report(
        10,
        "discrete calculus: adjoints, direct-solve agreement, order-2 refinement:",
        ok,
        f"(ibp {abs(ibp):.1e}, cg-vs-dense {cg_err:.1e}, "
        f"ratios {dict((k, round(v, 2)) for k, v in ratios.items())})",
    )
