"""Relative-entropy-type divergences on metric and density fields.

Pointwise integrands, with A = g1^{-1} g0 and r = vol(g0)/vol(g1):

    kl_met:     (1/2) (tr A - 2 log r - d)            integrated vs vol(g1)
    shape:      (1/2) (tr A - d r^(2/d))              integrated vs vol(g1)
    tilde_kl:   (2/d) KL(vol g0 || vol g1) + shape
    classical KL on densities:  Int log(r0/r1) r0 + Int r1 - Int r0
    density projection:         Int f_d(r0/r1) r1,
                                f_d(r) = (1/2)(d r^(2/d) - 2 log r - d)
    itakura_saito:              Int (r - log r - 1) r1   (= f_2 projection)

Every kind is nonnegative and vanishes only on equal arguments (AM-GM /
s - log s - 1 >= 0 nodewise); the mixed second variation across the diagonal
of the metric kinds recovers half the source-term inner product, which the
probe below measures by central differences with Richardson extrapolation.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import NonInvertibleMapError
from .fields import (
    DensityField,
    ScalarField,
    VectorField,
    integrate,
    require_same_grid,
)
from .randomfields import band_limited_scalar, band_limited_vector, substream
from .tensors import (
    DisplacementMap,
    MetricField,
    SymTensorField,
    inverse_components,
    packed_to_full,
    pushforward_metric,
    volume_map,
)
from .transport import ebin_inner

RATIO_FLOOR = 1e-300


class DivergenceKind(Enum):
    KL_MET = "kl_met"
    SHAPE = "shape"
    TILDE_KL_MET = "tilde_kl_met"
    KL_DENSITY_FD = "kl_density_fd"
    CLASSICAL_KL = "classical_kl"
    ITAKURA_SAITO = "itakura_saito"


METRIC_KINDS = (DivergenceKind.KL_MET, DivergenceKind.SHAPE, DivergenceKind.TILDE_KL_MET)
DENSITY_KINDS = (
    DivergenceKind.KL_DENSITY_FD,
    DivergenceKind.CLASSICAL_KL,
    DivergenceKind.ITAKURA_SAITO,
)


def _safe_ratio(num, den):
    ratio = num / den
    if np.any(ratio < RATIO_FLOOR):
        warnings.warn(
            "density ratio clamped at 1e-300 before log/pow evaluation",
            RuntimeWarning,
            stacklevel=3,
        )
        ratio = np.maximum(ratio, RATIO_FLOOR)
    return ratio


def _trace_rel(g0: MetricField, g1: MetricField):
    """tr(g1^{-1} g0) per node."""
    dim = g0.grid.dim
    inv1 = packed_to_full(inverse_components(g1.components, dim), dim)
    full0 = packed_to_full(g0.components, dim)
    return np.einsum("ik...,ki...->...", inv1, full0)


def burg_generator(r, dim):
    """f_d(r) = (1/2)(d r^(2/d) - 2 log r - d); f_2(r) = r - log r - 1."""
    return 0.5 * (dim * r ** (2.0 / dim) - 2.0 * np.log(r) - dim)


def divergence(kind: DivergenceKind, a, b) -> float:
    """Evaluate one divergence; metric kinds take metrics, density kinds densities."""
    kind = DivergenceKind(kind)
    grid = require_same_grid(a, b)
    d = grid.dim
    if kind in METRIC_KINDS:
        if not isinstance(a, MetricField) or not isinstance(b, MetricField):
            raise TypeError(f"{kind.value} compares MetricFields")
        vol0, vol1 = volume_map(a), volume_map(b)
        r = _safe_ratio(vol0.values, vol1.values)
        tr = _trace_rel(a, b)
        if kind is DivergenceKind.KL_MET:
            integrand = 0.5 * (tr - 2.0 * np.log(r) - d)
        elif kind is DivergenceKind.SHAPE:
            integrand = 0.5 * (tr - d * r ** (2.0 / d))
        else:  # TILDE_KL_MET
            kl = divergence(DivergenceKind.CLASSICAL_KL, vol0, vol1)
            return (2.0 / d) * kl + divergence(DivergenceKind.SHAPE, a, b)
        return integrate(ScalarField(grid, integrand), vol1)

    if not isinstance(a, DensityField) or not isinstance(b, DensityField):
        raise TypeError(f"{kind.value} compares DensityFields")
    r = _safe_ratio(a.values, b.values)
    if kind is DivergenceKind.CLASSICAL_KL:
        integrand = np.log(r) * a.values + b.values - a.values
        return integrate(ScalarField(grid, integrand))
    if kind is DivergenceKind.KL_DENSITY_FD:
        return integrate(ScalarField(grid, burg_generator(r, d)), b)
    # ITAKURA_SAITO
    return integrate(ScalarField(grid, r - np.log(r) - 1.0), b)


def kl_density_projection(rho0: DensityField, rho1: DensityField, dim=None) -> float:
    """Volume projection of the metric relative entropy: Int f_d(rho0/rho1) rho1.

    The infimum over lifts with prescribed volumes is attained exactly on the
    conformal pair g0 = (rho0/rho1)^(2/d) g1, which makes this equal to the
    metric divergence at that pair.
    """
    grid = require_same_grid(rho0, rho1)
    d = grid.dim if dim is None else int(dim)
    r = _safe_ratio(rho0.values, rho1.values)
    return integrate(ScalarField(grid, burg_generator(r, d)), rho1)


def conformal_lift(rho0: DensityField, g1: MetricField) -> MetricField:
    """The metric (rho0/vol(g1))^(2/d) g1, the optimal lift of (rho0, vol(g1))."""
    grid = require_same_grid(rho0, g1)
    factor = (rho0.values / volume_map(g1).values) ** (2.0 / grid.dim)
    return MetricField(SymTensorField(grid, factor * g1.components))


def min_eigenvalue_gap(g0: MetricField, g1: MetricField) -> float:
    """min over nodes and eigenvalues of (lambda - log lambda - 1) for g1^{-1} g0.

    Zero exactly on equal metrics; the quantity the nonnegativity sweep logs.
    """
    dim = g0.grid.dim
    inv1 = packed_to_full(inverse_components(g1.components, dim), dim)
    full0 = packed_to_full(g0.components, dim)
    m = np.einsum("ik...,kj...->ij...", inv1, full0)
    if dim == 1:
        lams = m[0, 0][None]
    else:
        tr = m[0, 0] + m[1, 1]
        det = m[0, 0] * m[1, 1] - m[0, 1] * m[1, 0]
        disc = np.sqrt(np.maximum(tr**2 - 4.0 * det, 0.0))
        lams = np.stack([(tr - disc) / 2.0, (tr + disc) / 2.0])
    lams = np.maximum(lams, RATIO_FLOOR)
    return float(np.min(lams - np.log(lams) - 1.0))


# ---------------------------------------------------------------------------
# second-variation probe


def _shifted(g: MetricField, h, s) -> MetricField:
    comps = h.components if hasattr(h, "components") else np.asarray(h, float)
    return MetricField(SymTensorField(g.grid, g.components + s * comps))


def second_variation_probe(kind: DivergenceKind, g: MetricField, h, k, step=1e-2):
    """Mixed second difference of D(g+sh || g+tk) across the diagonal.

    Returns (mixed_second, ebin_half, richardson): the centered estimate at
    the given step, half the source-term inner product Int tr(g^-1 h g^-1 k)
    vol(g) / 2, and the Richardson extrapolation from steps {step, step/2}.
    Probe metrics g +- step h, g +- step k must stay positive definite.
    """
    kind = DivergenceKind(kind)
    if kind not in (DivergenceKind.KL_MET, DivergenceKind.TILDE_KL_MET):
        raise ValueError("the second-variation probe applies to the metric divergences")

    def mixed(s):
        dpp = divergence(kind, _shifted(g, h, s), _shifted(g, k, s))
        dpm = divergence(kind, _shifted(g, h, s), _shifted(g, k, -s))
        dmp = divergence(kind, _shifted(g, h, -s), _shifted(g, k, s))
        dmm = divergence(kind, _shifted(g, h, -s), _shifted(g, k, -s))
        return -(dpp - dpm - dmp + dmm) / (4.0 * s * s)

    coarse = mixed(step)
    fine = mixed(step / 2.0)
    richardson = (4.0 * fine - coarse) / 3.0
    ebin_half = 0.5 * ebin_inner(g, h, k)
    return coarse, ebin_half, richardson


# ---------------------------------------------------------------------------
# static matching objective


@dataclass(frozen=True)
class StaticProblem:
    """Endpoints, balance weight and divergence choice of the static objective."""

    g0: MetricField
    g1: MetricField
    lambda_balance: float = 1.0
    kind: DivergenceKind = DivergenceKind.KL_MET

    def __post_init__(self):
        require_same_grid(self.g0, self.g1)
        if self.lambda_balance <= 0.0:
            raise ValueError("lambda_balance must be positive")
        if DivergenceKind(self.kind) not in (
            DivergenceKind.KL_MET,
            DivergenceKind.TILDE_KL_MET,
        ):
            raise ValueError("static objective uses the metric divergences")


def static_objective(problem: StaticProblem, gbar0: MetricField, phi: DisplacementMap) -> float:
    """lambda D(g0, gbar0) + straight-line transport cost + lambda D(phi_* gbar0, g1).

    The middle term is sqrt(Int |phi - id|^2 vol(gbar0)), the displacement
    energy of the straight path, exact for straight-line transport in the
    flat small-displacement regime; the orbit distance itself has no closed
    form.
    """
    require_same_grid(problem.g0, gbar0, phi.displacement)
    lam = problem.lambda_balance
    term1 = divergence(problem.kind, problem.g0, gbar0)
    disp_sq = integrate(phi.displacement.euclidean_square(), volume_map(gbar0))
    pushed = pushforward_metric(phi, gbar0)
    term3 = divergence(problem.kind, pushed, problem.g1)
    return lam * term1 + float(np.sqrt(max(disp_sq, 0.0))) + lam * term3


@dataclass
class SearchTrace:
    values: list
    accepted: int


def static_local_search(problem: StaticProblem, iters=20, seed=0, modes=2):
    """Coordinate descent on (conformal factor of gbar0, displacement of phi).

    Alternates (i) line-searched steps of gbar0 along band-limited conformal
    directions with a finite-difference directional derivative and (ii) small
    band-limited displacement updates, accepting only decreases.  A baseline,
    not a solver: the returned value never exceeds the starting objective at
    (g0, id) nor any accepted iterate.
    """
    grid = problem.g0.grid
    collar = 1 if grid.topology == "box" else 0
    gbar = problem.g0
    phi = DisplacementMap.identity(grid, collar_width=max(collar, 1))
    best = static_objective(problem, gbar, phi)
    trace = SearchTrace(values=[best], accepted=0)

    for it in range(iters):
        rng = substream(seed, f"static-search-{it}")
        # (i) conformal step on gbar0
        xi = band_limited_scalar(grid, rng, modes=modes, amplitude=1.0).values
        eps = 1e-4
        plus = MetricField(SymTensorField(grid, np.exp(eps * xi) * gbar.components))
        minus = MetricField(SymTensorField(grid, np.exp(-eps * xi) * gbar.components))
        slope = (
            static_objective(problem, plus, phi) - static_objective(problem, minus, phi)
        ) / (2.0 * eps)
        step = 0.25
        while step > 1e-4:
            sign = -np.sign(slope) if slope != 0.0 else 0.0
            if sign == 0.0:
                break
            trial = MetricField(
                SymTensorField(grid, np.exp(sign * step * xi) * gbar.components)
            )
            val = static_objective(problem, trial, phi)
            if val < best:
                gbar, best = trial, val
                trace.accepted += 1
                break
            step /= 4.0
        trace.values.append(best)

        # (ii) displacement step on phi
        w = band_limited_vector(grid, rng, modes=modes, amplitude=1.0).components
        step = 0.05 * grid.spacing / max(1e-12, float(np.max(np.abs(w))))
        accepted = False
        for _ in range(4):
            for sign in (+1.0, -1.0):
                cand = phi.displacement.components + sign * step * w
                try:
                    trial_phi = DisplacementMap(
                        VectorField(grid, cand), collar_width=phi.collar_width
                    )
                    val = static_objective(problem, gbar, trial_phi)
                except (ValueError, NonInvertibleMapError):
                    continue
                if val < best:
                    phi, best = trial_phi, val
                    trace.accepted += 1
                    accepted = True
                    break
            if accepted:
                break
            step /= 2.0
        trace.values.append(best)

    return gbar, phi, best, trace
