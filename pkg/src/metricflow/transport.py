"""Tangent-space norms on metrics and densities, path energies, bounds.

The two quadratic minimizations here follow the same discretize-then-optimize
pattern: the objective is discretized with the package's finite-difference
calculus and rectangle-rule quadrature, and the exact Euler-Lagrange system of
that finite-dimensional quadratic is solved by matrix-free conjugate gradient.
The returned value is therefore a true minimum of a well-defined discrete
problem, which makes "infimum <= any feasible competitor" assertions exact up
to solver tolerance.

Density tangent norm (transport velocity v, relative growth f):

    N(rho, drho) = inf_{v} Int |v|^2 rho + Lam Int f^2 rho,
    f = (drho + div(rho v)) / rho.

Metric tangent norm (transport velocity v, source h):

    N(g, dg) = inf_{v} Int |v|^2 vol(g)
               + (d Lam / 4) Int tr(g^-1 H g^-1 H) vol(g),
    H = dg + L_v g.

Both normal operators are assembled by composing the central-difference
operators with their discrete adjoints, which on the torus are exact
(skew-adjointness under the rectangle rule); the solvers therefore require
torus grids.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .cg import solve_spd
from .errors import DegeneratePathError, PositivityViolation
from .fields import (
    TORUS,
    DensityField,
    ScalarField,
    SymTensorField,
    VectorField,
    diff_array,
    divergence_array,
    gradient_array,
    integrate,
    require_same_grid,
    sample_array,
)
from .tensors import (
    DisplacementMap,
    MetricField,
    clamp_to_box,
    displacement_jacobian,
    full_to_packed,
    inverse_components,
    invert_displacement,
    packed_to_full,
    product_trace,
    volume_map,
)


@dataclass(frozen=True)
class SolverConfig:
    """Tolerance, iteration cap and source-penalty weight for the solvers.

    ``lam`` must be strictly positive: with lam = 0 the source penalty
    vanishes and the infimum over decompositions is degenerate off the
    transport orbit.
    """

    tol: float = 1e-10
    max_iter: int | None = None
    lam: float = 1.0

    def __post_init__(self):
        if self.tol <= 0.0:
            raise ValueError(f"tol must be positive, got {self.tol}")
        if self.lam <= 0.0:
            raise ValueError(f"lambda must be strictly positive, got {self.lam}")
        if self.max_iter is not None and self.max_iter < 1:
            raise ValueError(f"max_iter must be >= 1, got {self.max_iter}")

    def iter_cap(self, unknowns):
        return self.max_iter if self.max_iter is not None else 10 * unknowns


class TangentDecomposition(NamedTuple):
    """Transport/source split dg = -L_v g + h of a metric tangent vector."""

    v: VectorField
    h: SymTensorField
    residual: float


class DensityNormResult(NamedTuple):
    value: float
    v: VectorField
    f: ScalarField
    iterations: int
    residual: float


class MetricNormResult(NamedTuple):
    value: float
    decomposition: TangentDecomposition
    iterations: int
    residual: float


def result_to_json(result, flags=()) -> str:
    """Wire format for solver results: {"value", "iters", "residual", "flags"}."""
    from .serialization import dumps_result

    return dumps_result(
        {
            "value": result.value,
            "iters": result.iterations,
            "residual": result.residual,
            "flags": list(flags),
        }
    )


def _require_torus(grid, what):
    if grid.topology != TORUS:
        raise ValueError(
            f"{what} requires a torus grid: the discrete adjoints the normal "
            "operator is built from are exact only for periodic stencils"
        )


# ---------------------------------------------------------------------------
# pointwise norms


def ebin_inner(g: MetricField, h, k) -> float:
    """Int tr(g^-1 h g^-1 k) vol(g)."""
    return integrate(product_trace(g, h, k), volume_map(g))


def wasserstein_orbit_norm(g: MetricField, v: VectorField) -> float:
    """Squared transport norm of the orbit tangent -L_v g: Int |v|^2 vol(g).

    Depends on g only through vol(g), which is what makes the volume map a
    submersion onto density space on transport orbits.
    """
    require_same_grid(g, v)
    return integrate(v.euclidean_square(), volume_map(g))


# ---------------------------------------------------------------------------
# density tangent norm


def wfr_normal_operator(rho: DensityField, cfg: SolverConfig):
    """Normal operator of the density tangent norm after eliminating f.

    A v = rho v - lam rho grad(div(rho v)/rho); symmetric positive definite
    w.r.t. plain nodewise sums because the central stencils are mutually
    skew-adjoint under the rectangle rule.
    """
    grid = rho.grid
    _require_torus(grid, "wfr_tangent_norm")
    lam, r = cfg.lam, rho.values

    def apply_op(vc):
        q = divergence_array(r * vc, grid) / r
        return r * vc - lam * r * gradient_array(q, grid)

    return apply_op


def wfr_tangent_norm(rho: DensityField, drho, cfg: SolverConfig = SolverConfig(), x0=None):
    """Minimize Int |v|^2 rho + lam Int f^2 rho over the continuity equation.

    The growth rate is eliminated, f = (drho + div(rho v)) / rho, and the
    remaining convex quadratic in v is solved exactly; right-hand side
    lam rho grad(drho/rho).
    """
    grid = require_same_grid(rho, drho)
    lam = cfg.lam
    r = rho.values
    dr = drho.values if hasattr(drho, "values") else np.asarray(drho, float)
    apply_op = wfr_normal_operator(rho, cfg)
    rhs = lam * r * gradient_array(dr / r, grid)
    sol = solve_spd(apply_op, rhs, tol=cfg.tol, max_iter=cfg.iter_cap(rhs.size), x0=x0)
    v = VectorField(grid, sol.x)
    f_vals = (dr + divergence_array(r * sol.x, grid)) / r
    f = ScalarField(grid, f_vals)
    value = integrate(v.euclidean_square(), rho) + lam * integrate(
        ScalarField(grid, f_vals**2), rho
    )
    return DensityNormResult(value, v, f, sol.iterations, sol.residual)


# ---------------------------------------------------------------------------
# metric tangent norm


class MetricNormOperator:
    """Normal operator and objective of the discrete metric tangent norm."""

    def __init__(self, g: MetricField, cfg: SolverConfig):
        grid = g.grid
        _require_torus(grid, "we_tangent_norm")
        self.grid = grid
        self.dim = grid.dim
        self.weight = (grid.dim * cfg.lam) / 4.0
        self.gfull = packed_to_full(g.components, grid.dim)
        self.ginv = packed_to_full(inverse_components(g.components, grid.dim), grid.dim)
        self.vol = volume_map(g).values
        # d_k g_ij, used by both the Lie derivative and its adjoint
        self.dg = np.stack(
            [np.stack([np.stack([diff_array(self.gfull[i, j], grid, k)
                                 for j in range(grid.dim)]) for i in range(grid.dim)])
             for k in range(grid.dim)]
        )

    def lie(self, vc):
        """L_v g as a full-matrix array for velocity components vc."""
        d = self.dim
        dv = np.stack(
            [np.stack([diff_array(vc[k], self.grid, i) for i in range(d)])
             for k in range(d)]
        )  # dv[k, i] = d_i v^k
        out = np.zeros_like(self.gfull)
        for i in range(d):
            for j in range(d):
                acc = np.zeros(self.grid.shape)
                for k in range(d):
                    acc += vc[k] * self.dg[k, i, j]
                    acc += self.gfull[k, j] * dv[k, i] + self.gfull[i, k] * dv[k, j]
                out[i, j] = acc
        return out

    def lie_adjoint(self, s_full):
        """Adjoint of ``lie`` w.r.t. plain sums over nodes and full entries."""
        d = self.dim
        sg = np.einsum("ik...,kj...->ij...", s_full, self.gfull)
        out = np.zeros((d,) + self.grid.shape)
        for k in range(d):
            acc = np.einsum("ij...,ij...->...", self.dg[k], s_full)
            for i in range(d):
                acc -= 2.0 * diff_array(sg[i, k], self.grid, i)
            out[k] = acc
        return out

    def weighted(self, s_full):
        """vol(g) g^-1 S g^-1, the metric weight of the source penalty."""
        return self.vol * np.einsum(
            "ik...,kl...,lj...->ij...", self.ginv, s_full, self.ginv
        )

    def apply(self, vc):
        return self.vol * vc + self.weight * self.lie_adjoint(self.weighted(self.lie(vc)))

    def rhs(self, dg_full):
        return -self.weight * self.lie_adjoint(self.weighted(dg_full))

    def objective(self, vc, dg_full):
        h_full = dg_full + self.lie(vc)
        quad = np.einsum("ij...,ij...->...", self.weighted(h_full), h_full)
        kinetic = self.vol * np.sum(vc**2, axis=0)
        cell = self.grid.spacing**self.dim
        return float(np.sum(kinetic + self.weight * quad) * cell)


def we_tangent_norm(g: MetricField, dg, cfg: SolverConfig = SolverConfig(), x0=None):
    """Minimize the transport + source energy over velocities v.

    Returns the minimum value together with the feasible decomposition
    dg = -L_v g + h, where h = dg + L_v g is defined from the minimizer, so
    the decomposition residual is zero by construction (it is still measured
    and reported).
    """
    grid = require_same_grid(g, dg)
    op = MetricNormOperator(g, cfg)
    dg_full = packed_to_full(
        dg.components if hasattr(dg, "components") else np.asarray(dg, float), grid.dim
    )
    rhs = op.rhs(dg_full)
    sol = solve_spd(op.apply, rhs, tol=cfg.tol, max_iter=cfg.iter_cap(rhs.size), x0=x0)
    v = VectorField(grid, sol.x)
    h_full = dg_full + op.lie(sol.x)
    h = SymTensorField(grid, full_to_packed(h_full, grid.dim))
    lv = op.lie(sol.x)
    resid = float(np.max(np.abs(dg_full - (-lv + h_full))))
    value = op.objective(sol.x, dg_full)
    return MetricNormResult(value, TangentDecomposition(v, h, resid), sol.iterations, sol.residual)


# ---------------------------------------------------------------------------
# paths


class MetricPath:
    """Uniformly time-sampled path of metrics on [0, 1].

    ``velocities`` optionally carries the transporting vector field per
    sample; pure-metric data does not determine it, so orbit-type energies
    require it.
    """

    def __init__(self, grid, metrics, velocities=None):
        if len(metrics) < 2:
            raise ValueError("a path needs at least two samples (n_t >= 1)")
        for m in metrics:
            require_same_grid(m, metrics[0])
        if grid != metrics[0].grid:
            raise ValueError("grid does not match the metric samples")
        if velocities is not None and len(velocities) != len(metrics):
            raise ValueError("one velocity sample per metric sample required")
        self.grid = grid
        self.metrics = list(metrics)
        self.velocities = list(velocities) if velocities is not None else None
        self.times = np.linspace(0.0, 1.0, len(metrics))

    @property
    def n_intervals(self):
        return len(self.metrics) - 1


def linear_metric_path(g0: MetricField, g1: MetricField, n_t=16) -> MetricPath:
    """Componentwise linear interpolation between two metrics."""
    grid = require_same_grid(g0, g1)
    ts = np.linspace(0.0, 1.0, n_t + 1)
    mets = [
        MetricField(SymTensorField(grid, (1.0 - t) * g0.components + t * g1.components))
        for t in ts
    ]
    return MetricPath(grid, mets)


def _midpoint_metric(a: MetricField, b: MetricField, t_mid) -> MetricField:
    comps = 0.5 * (a.components + b.components)
    try:
        return MetricField(SymTensorField(a.grid, comps))
    except PositivityViolation as exc:
        raise DegeneratePathError(
            f"midpoint average at t = {t_mid} is not positive definite", time=t_mid
        ) from exc


def path_interval_norms(path: MetricPath, cfg: SolverConfig, which="we"):
    """Squared tangent norm of each interval's difference quotient.

    which: "we" (transport + source), "ebin" (pure source), or "orbit"
    (transport norm of the stored velocities; requires them).
    """
    dt = 1.0 / path.n_intervals
    norms = []
    for i in range(path.n_intervals):
        t_mid = (path.times[i] + path.times[i + 1]) / 2.0
        gbar = _midpoint_metric(path.metrics[i], path.metrics[i + 1], t_mid)
        dstep = (path.metrics[i + 1].components - path.metrics[i].components) / dt
        gdot = SymTensorField(path.grid, dstep)
        if which == "ebin":
            norms.append(ebin_inner(gbar, gdot, gdot))
        elif which == "we":
            norms.append(we_tangent_norm(gbar, gdot, cfg).value)
        elif which == "orbit":
            if path.velocities is None:
                raise ValueError("orbit path energies need per-sample velocities")
            vbar = VectorField(
                path.grid,
                0.5 * (path.velocities[i].components + path.velocities[i + 1].components),
            )
            norms.append(wasserstein_orbit_norm(gbar, vbar))
        else:
            raise ValueError(f"unknown energy kind {which!r}")
    return np.array(norms)


def path_energy(path: MetricPath, cfg: SolverConfig = SolverConfig(), which="we") -> float:
    """Midpoint-rule action integral of the squared tangent norm."""
    norms = path_interval_norms(path, cfg, which)
    return float(np.sum(norms) / path.n_intervals)


def path_length(path: MetricPath, cfg: SolverConfig = SolverConfig(), which="we") -> float:
    norms = path_interval_norms(path, cfg, which)
    return float(np.sum(np.sqrt(np.maximum(norms, 0.0))) / path.n_intervals)


def density_path_interval_norms(densities, cfg: SolverConfig = SolverConfig()):
    """Squared transport+growth norms of a density path's difference quotients."""
    if len(densities) < 2:
        raise ValueError("a density path needs at least two samples")
    grid = densities[0].grid
    dt = 1.0 / (len(densities) - 1)
    norms = []
    for i in range(len(densities) - 1):
        mid = DensityField(grid, 0.5 * (densities[i].values + densities[i + 1].values))
        delta = ScalarField(grid, (densities[i + 1].values - densities[i].values) / dt)
        norms.append(wfr_tangent_norm(mid, delta, cfg).value)
    return np.array(norms)


def density_path_energy(densities, cfg: SolverConfig = SolverConfig()) -> float:
    """Midpoint-rule transport+growth energy of a density path."""
    norms = density_path_interval_norms(densities, cfg)
    return float(np.sum(norms) / len(norms))


def density_path_length(densities, cfg: SolverConfig = SolverConfig()) -> float:
    norms = density_path_interval_norms(densities, cfg)
    return float(np.sum(np.sqrt(np.maximum(norms, 0.0))) / len(norms))


# ---------------------------------------------------------------------------
# transport orbit paths on the box (material form)


class DisplacementPath:
    """Uniformly time-sampled family of displacement maps phi(t) = id + u(t)."""

    def __init__(self, grid, displacements):
        if len(displacements) < 2:
            raise ValueError("a displacement path needs at least two samples")
        self.grid = grid
        self.maps = list(displacements)
        self.times = np.linspace(0.0, 1.0, len(displacements))

    @property
    def n_intervals(self):
        return len(self.maps) - 1


def displacement_path_interval_energies(path: DisplacementPath):
    """Material-coordinates transport energy of each interval.

    Int |phi_dot|^2 vol(g0) with phi_dot the per-interval difference
    quotient; the change of variables to material coordinates is exact
    nodewise, so no inversion or interpolation enters.
    """
    dt = 1.0 / path.n_intervals
    out = []
    for i in range(path.n_intervals):
        du = (path.maps[i + 1].displacement.components - path.maps[i].displacement.components) / dt
        out.append(integrate(VectorField(path.grid, du).euclidean_square()))
    return np.array(out)


def displacement_path_energy(path: DisplacementPath) -> float:
    return float(np.sum(displacement_path_interval_energies(path)) / path.n_intervals)


class ToyGeodesic(NamedTuple):
    path: MetricPath
    interval_energies: np.ndarray
    interval_energies_eulerian: np.ndarray
    energy: float


def toy_geodesic(f: VectorField, n_t=16, collar_width=None, inversion_tol=1e-12):
    """Straight transport path phi(t) = id + t f pushing the flat metric.

    Returns the path of pushforward metrics g(t) = phi(t)_* g0 (g0 = I)
    with per-sample velocities f o phi(t)^{-1}, plus per-interval transport
    energies.  The reported energies are computed in material coordinates,
    where they equal Int |f|^2 vol(g0) identically in t; an independent
    Eulerian evaluation (inversion + interpolation at each interval
    midpoint) is reported alongside and agrees to O(spacing^2).
    """
    grid = f.grid
    if grid.topology != "box":
        raise ValueError("toy geodesics are defined on box grids")
    if collar_width is None:
        collar_width = _detect_collar(f)
    ts = np.linspace(0.0, 1.0, n_t + 1)

    maps = []
    for t in ts:
        try:
            maps.append(
                DisplacementMap(
                    VectorField(grid, t * f.components), collar_width=collar_width
                )
            )
        except Exception as exc:
            raise DegeneratePathError(
                f"id + t f is not orientation preserving at t = {t}", time=float(t)
            ) from exc

    metrics = []
    velocities = []
    inverses = []
    for t, phi in zip(ts, maps):
        phi_inv = invert_displacement(phi, tol=inversion_tol)
        inverses.append(phi_inv)
        metrics.append(pullback_metric_by(phi_inv))
        v_comps = sample_array(f.components, grid, clamp_to_box(phi_inv.positions(), phi_inv))
        velocities.append(VectorField(grid, v_comps))
    path = MetricPath(grid, metrics, velocities=velocities)

    dpath = DisplacementPath(grid, maps)
    material = displacement_path_interval_energies(dpath)

    eulerian = []
    for i in range(n_t):
        t_mid = (ts[i] + ts[i + 1]) / 2.0
        phi_mid = DisplacementMap(
            VectorField(grid, t_mid * f.components), collar_width=collar_width
        )
        inv_mid = invert_displacement(phi_mid, tol=inversion_tol)
        g_mid = pullback_metric_by(inv_mid)
        v_mid = VectorField(
            grid, sample_array(f.components, grid, clamp_to_box(inv_mid.positions(), inv_mid))
        )
        eulerian.append(wasserstein_orbit_norm(g_mid, v_mid))
    eulerian = np.array(eulerian)

    energy = float(np.sum(material) / n_t)
    return ToyGeodesic(path, material, eulerian, energy)


def pullback_metric_by(phi_inv: DisplacementMap) -> MetricField:
    """(dphi_inv)^T (dphi_inv) — the pushforward of the flat metric."""
    grid = phi_inv.grid
    du = displacement_jacobian(phi_inv.displacement)
    jac = du.copy()
    for i in range(grid.dim):
        jac[i, i] += 1.0
    pulled = np.einsum("ki...,kj...->ij...", jac, jac)
    return MetricField(SymTensorField(grid, full_to_packed(pulled, grid.dim)))


def _detect_collar(f: VectorField):
    """Widest boundary ring on which f vanishes identically."""
    grid = f.grid
    n = grid.n_per_axis
    mags = np.abs(f.components).max(axis=0)
    width = 0
    while width < n // 2:
        ring = []
        for ax in range(grid.dim):
            ix = [slice(None)] * grid.dim
            ix[ax] = width
            ring.append(np.max(mags[tuple(ix)]))
            ix[ax] = n - 1 - width
            ring.append(np.max(mags[tuple(ix)]))
        if max(ring) > 0.0:
            break
        width += 1
    if width == 0:
        raise ValueError("displacement field must vanish on the box boundary")
    return width


# ---------------------------------------------------------------------------
# geodesic-distance bounds


class DistanceBounds(NamedTuple):
    lower: float
    upper: float
    lower_flag: str
    upper_flag: str
    mass_lower_bound: float


def we_distance_bounds(
    g0: MetricField, g1: MetricField, cfg: SolverConfig = SolverConfig(), n_t=16
) -> DistanceBounds:
    """Bracket the transport-metric distance between two metrics.

    upper: sqrt(d lam)/2 times the source-metric length of the linear
    interpolation path (a feasible pure-source path; certified up to the
    midpoint-rule time discretization; flagged "linear-path-upper-bound").

    lower: for proportional volume densities, the exact density-transport
    distance of the projected volumes, 2 sqrt(lam) |sqrt(m0) - sqrt(m1)|
    with m_i the total volumes (pure-growth geodesic; path independent).
    Otherwise the distance of the projected volumes has no closed form, and
    the lower slot carries the transport+growth length of the volume-projected
    linear path, flagged as an estimate rather than a proven bound.  The
    certified mass bound 2 sqrt(lam) |sqrt(m0) - sqrt(m1)| (Cauchy-Schwarz on
    the growth term) is always reported alongside.
    """
    grid = require_same_grid(g0, g1)
    d, lam = grid.dim, cfg.lam
    path = linear_metric_path(g0, g1, n_t=n_t)
    ebin_length = path_length(path, cfg, which="ebin")
    upper = 0.5 * np.sqrt(d * lam) * ebin_length

    vol0, vol1 = volume_map(g0), volume_map(g1)
    m0 = integrate(ScalarField(grid, np.ones(grid.shape)), vol0)
    m1 = integrate(ScalarField(grid, np.ones(grid.shape)), vol1)
    mass_bound = 2.0 * np.sqrt(lam) * abs(np.sqrt(m0) - np.sqrt(m1))

    ratio = vol1.values / vol0.values
    conformal = float(np.max(ratio) - np.min(ratio)) <= 1e-10 * (1.0 + float(np.max(ratio)))
    if conformal:
        lower = float(mass_bound)
        flag = "conformal-volumes-exact-wfr"
    else:
        densities = [volume_map(m) for m in path.metrics]
        lower = density_path_length(densities, cfg)
        flag = "projected-path-wfr-length-estimate"
    return DistanceBounds(lower, float(upper), flag,
                          "linear-path-upper-bound", float(mass_bound))
