"""Computational checks of the submersion identities and the H^1 fiber form.

The main check: for a density tangent (vol(g), drho), the minimizing
transport/growth pair (v, f) lifts to the metric tangent

    dg = -L_v g + (2 f / d) g,

whose metric tangent norm reproduces the density tangent norm, and any
volume-neutral (g-trace-free) perturbation of the lift can only increase it.
Both sides are computed by independent solvers, so the gap is a genuine
solver-vs-solver measurement.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import GridMismatchError
from .fields import (
    ScalarField,
    SymTensorField,
    VectorField,
    diff_array,
    integrate,
    require_same_grid,
)
from .serialization import dumps_result
from .tensors import (
    MetricField,
    lie_derivative_metric,
    trace_decompose,
    volume_map,
)
from .transport import (
    SolverConfig,
    wasserstein_orbit_norm,
    we_tangent_norm,
    wfr_tangent_norm,
)
from .randomfields import band_limited_sym_tensor, substream


def optimal_lift(g: MetricField, drho, cfg: SolverConfig = SolverConfig()):
    """Horizontal lift of a density tangent through the volume map.

    Solves the density tangent-norm problem at (vol(g), drho) for (v, f) and
    returns dg = -L_v g + (2 f / dim) g together with the minimizers.  The
    volume tangent of dg reproduces drho up to O(spacing^2) (the finite
    difference defect between div(rho v) and (1/2) tr(g^-1 L_v g) vol(g)).
    """
    grid = require_same_grid(g, drho)
    rho = volume_map(g)
    res = wfr_tangent_norm(rho, drho, cfg)
    lie = lie_derivative_metric(res.v, g)
    scale = (2.0 / grid.dim) * res.f.values
    dg = SymTensorField(grid, -lie.components + scale * g.components)
    return dg, res.v, res.f


@dataclass(frozen=True)
class LiftReport:
    """Result of one submersion check.

    gap = metric-norm of the optimal lift minus the density norm;
    perturbation_gaps are the same differences for volume-neutral
    perturbations of the lift and may not fall below -tolerance.
    """

    wfr_value: float
    we_value_of_lift: float
    gap: float
    perturbation_gaps: tuple
    tolerance: float = 1e-8

    def __post_init__(self):
        if abs(self.gap - (self.we_value_of_lift - self.wfr_value)) > 1e-12 * (
            1.0 + abs(self.wfr_value)
        ):
            raise ValueError("gap must equal we_value_of_lift - wfr_value")
        if any(p < -self.tolerance for p in self.perturbation_gaps):
            worst = min(self.perturbation_gaps)
            raise ValueError(
                f"a perturbed lift fell below the density norm by {-worst:.3e} "
                f"(tolerance {self.tolerance:.1e}): submersion inequality violated"
            )

    def to_json(self) -> str:
        return dumps_result(
            {
                "wfr_value": self.wfr_value,
                "we_value_of_lift": self.we_value_of_lift,
                "gap": self.gap,
                "perturbation_gaps": list(self.perturbation_gaps),
                "tolerance": self.tolerance,
            }
        )


def trace_free_perturbation(g: MetricField, rng, modes=4, amplitude=0.2) -> SymTensorField:
    """Smooth band-limited tensor made exactly g-trace-free (volume neutral)."""
    raw = band_limited_sym_tensor(g.grid, rng, modes=modes, amplitude=amplitude)
    z, _ = trace_decompose(g, raw)
    return z


def verify_pi1_submersion(
    g: MetricField,
    drho,
    n_perturb=10,
    seed=0,
    cfg: SolverConfig = SolverConfig(),
    perturb_amplitude=0.2,
    tolerance=1e-8,
) -> LiftReport:
    """Check the density norm against the metric norm of the optimal lift.

    Equality of infima is certified one-sidedly: the lift is explicit, and
    n_perturb random trace-free perturbations of it (exactly fiber tangent,
    independent of finite-difference error) must not beat the density norm.
    The full infimum over all lifts is not checkable.
    """
    require_same_grid(g, drho)
    rho = volume_map(g)
    wfr = wfr_tangent_norm(rho, drho, cfg)
    dg, _, _ = optimal_lift(g, drho, cfg)
    we = we_tangent_norm(g, dg, cfg)
    gaps = []
    for j in range(n_perturb):
        rng = substream(seed, f"pi1-perturbation-{j}")
        z = trace_free_perturbation(g, rng, amplitude=perturb_amplitude)
        perturbed = SymTensorField(g.grid, dg.components + z.components)
        gaps.append(we_tangent_norm(g, perturbed, cfg).value - wfr.value)
    return LiftReport(
        wfr_value=wfr.value,
        we_value_of_lift=we.value,
        gap=we.value - wfr.value,
        perturbation_gaps=tuple(gaps),
        tolerance=tolerance,
    )


@dataclass(frozen=True)
class OrbitReport:
    norm_a: float
    norm_b: float

    @property
    def difference(self):
        return self.norm_a - self.norm_b


def verify_orbit_submersion(g_a: MetricField, g_b: MetricField, v: VectorField) -> OrbitReport:
    """Transport norms at two metrics with identical volume densities.

    The norms are built from the same quadrature data (the shared volume
    density), so they agree to roundoff; a volume mismatch beyond 1e-12 is a
    precondition error.
    """
    require_same_grid(g_a, g_b, v)
    va, vb = volume_map(g_a).values, volume_map(g_b).values
    mismatch = float(np.max(np.abs(va - vb)))
    if mismatch > 1e-12 * (1.0 + float(np.max(va))):
        raise GridMismatchError(
            f"volume densities differ by {mismatch:.3e}; the orbit-norm check "
            "requires identical volumes"
        )
    return OrbitReport(
        norm_a=wasserstein_orbit_norm(g_a, v), norm_b=wasserstein_orbit_norm(g_b, v)
    )


def euler_alpha_lagrangian(v: VectorField, stencil_order=4):
    """Kinetic and gradient-penalty terms of the flat-background fiber form.

    Returns (trace_form, def_form, kinetic):

        trace_form = (1/4) Int tr((L_v g0)^2),   g0 = I,
        def_form   = Int |Def v|^2,   Def(v)_ij = (d_i v_j + d_j v_i) / 2,
        kinetic    = Int |v|^2.

    Both quadratic forms are assembled from the same derivative arrays, so
    their agreement (asserted to 1e-10) is an algebraic identity of the
    discretization.  The default fourth-order stencil resolves the trig
    benchmark at 64 nodes to ~1e-4; pass stencil_order=2 for the plain
    second-order calculus.
    """
    grid = v.grid
    if grid.topology != "torus":
        raise ValueError("flat-background fiber form is evaluated on torus grids")
    d = grid.dim
    dv = np.stack(
        [np.stack([diff_array(v.components[j], grid, i, order=stencil_order)
                   for j in range(d)]) for i in range(d)]
    )  # dv[i, j] = d_i v_j
    lie = dv + np.swapaxes(dv, 0, 1)
    trace_sq = np.einsum("ij...,ji...->...", lie, lie)
    trace_form = 0.25 * integrate(ScalarField(grid, trace_sq))
    deformation = 0.5 * lie
    def_form = integrate(ScalarField(grid, np.sum(deformation**2, axis=(0, 1))))
    kinetic = integrate(v.euclidean_square())
    if abs(trace_form - def_form) > 1e-10 * (1.0 + abs(def_form)):
        raise AssertionError(
            f"trace and deformation forms disagree: {trace_form} vs {def_form}"
        )
    return trace_form, def_form, kinetic
