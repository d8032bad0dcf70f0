"""Pointwise SPD algebra, Lie derivatives, volume maps and pullbacks.

All 2x2 kernels use closed forms (adjugate inverse, the explicit square
root (A + sqrt(det) I)/sqrt(tr + 2 sqrt(det)), quadratic-formula
eigenvalues); no general eigensolver is involved.
"""

from __future__ import annotations

import numpy as np

from .errors import NonInvertibleMapError, PositivityViolation
from .fields import (
    BOX,
    DensityField,
    ScalarField,
    SymTensorField,
    VectorField,
    diff_array,
    divergence_array,
    require_same_grid,
    sample_array,
    sym_component_count,
)

SPD_TOL = 1e-12


def _packed(field):
    return field.components if hasattr(field, "components") else np.asarray(field, float)


def packed_det(comps, dim):
    if dim == 1:
        return comps[0]
    return comps[0] * comps[2] - comps[1] ** 2


def packed_trace(comps, dim):
    if dim == 1:
        return comps[0]
    return comps[0] + comps[2]


def spd_check(comps, dim, what="tensor"):
    """Leading-principal-minor test with roundoff-aware tolerance.

    Each node must satisfy minor > 1e-12 * (1 + max |entry|) for every
    leading minor; the first offending node index is reported.
    """
    scale = SPD_TOL * (1.0 + np.max(np.abs(comps), axis=0))
    if dim == 1:
        bad = comps[0] <= scale
    else:
        bad = (comps[0] <= scale) | (packed_det(comps, dim) <= scale)
    if np.any(bad):
        node = tuple(int(i) for i in np.unravel_index(int(np.argmax(bad)), bad.shape))
        entries = [float(c[node]) for c in comps]
        raise PositivityViolation(
            f"{what} is not positive definite at node {node}: components {entries}",
            node=node,
        )


class MetricField:
    """Symmetric positive-definite 2-tensor field; SPD is checked nodewise."""

    kind = "metric"

    def __init__(self, tensor: SymTensorField):
        spd_check(tensor.components, tensor.grid.dim, what="metric")
        self.grid = tensor.grid
        self.tensor = tensor

    @property
    def components(self):
        return self.tensor.components

    @classmethod
    def from_components(cls, grid, components):
        return cls(SymTensorField(grid, components))

    @classmethod
    def euclidean(cls, grid):
        comps = np.zeros((sym_component_count(grid.dim),) + grid.shape)
        comps[0] = 1.0
        if grid.dim == 2:
            comps[2] = 1.0
        return cls(SymTensorField(grid, comps))

    @classmethod
    def scaled_identity(cls, grid, factor):
        comps = np.zeros((sym_component_count(grid.dim),) + grid.shape)
        comps[0] = factor
        if grid.dim == 2:
            comps[2] = factor
        return cls(SymTensorField(grid, comps))


class DisplacementMap:
    """Grid diffeomorphism phi(x) = x + u(x).

    The Jacobian I + du must have positive determinant at every node
    (orientation preserving); on box grids u must vanish in a boundary
    collar of ``collar_width`` node rings (within ``collar_tol``).
    """

    kind = "displacement"

    def __init__(self, displacement: VectorField, collar_width=0, collar_tol=1e-12):
        self.grid = displacement.grid
        self.displacement = displacement
        self.collar_width = int(collar_width)
        self.collar_tol = float(collar_tol)
        du = displacement_jacobian(displacement)
        det = jacobian_det(du)
        if np.any(det <= 0.0):
            node = tuple(int(i) for i in np.unravel_index(int(np.argmin(det)), det.shape))
            raise NonInvertibleMapError(
                f"displacement is orientation reversing: det(I+du) = {det[node]} at node {node}"
            )
        if self.grid.topology == BOX:
            if self.collar_width < 1:
                raise ValueError("box displacements must declare a collar_width >= 1")
            resid = collar_max(displacement.components, self.grid, self.collar_width)
            if resid > collar_tol:
                raise ValueError(
                    f"displacement does not vanish in the {self.collar_width}-node collar "
                    f"(max |u| = {resid:.3e} > {collar_tol:.3e})"
                )

    @classmethod
    def identity(cls, grid, collar_width=1):
        width = collar_width if grid.topology == BOX else 0
        return cls(VectorField.zero(grid), collar_width=width)

    def positions(self):
        """phi evaluated at the nodes, shape (dim,) + grid.shape."""
        return self.grid.coordinates() + self.displacement.components


def collar_max(comps, grid, width):
    """Max |value| over the nodes within `width` rings of the box boundary."""
    mask = np.zeros(grid.shape, dtype=bool)
    n = grid.n_per_axis
    for ax in range(grid.dim):
        ix = [slice(None)] * grid.dim
        ix[ax] = slice(0, width)
        mask[tuple(ix)] = True
        ix[ax] = slice(n - width, n)
        mask[tuple(ix)] = True
    region = np.abs(np.asarray(comps)).max(axis=0)[mask]
    return float(region.max()) if region.size else 0.0


def clamp_to_box(pos, phi: DisplacementMap):
    """Positions for sampling along phi on a box grid.

    A collar-identity map can exit the box by up to its collar residual; that
    overshoot is clamped, anything larger is a genuine domain violation.
    """
    grid = phi.grid
    if grid.topology != BOX:
        return pos
    half = grid.half_extent
    overshoot = float(max(np.max(pos) - half, -half - np.min(pos), 0.0))
    allowed = 10.0 * phi.collar_tol + 1e-12 * grid.extent
    if overshoot > allowed:
        from .errors import OutOfDomainError

        raise OutOfDomainError(
            f"displacement maps positions {overshoot:.3e} beyond the box "
            f"(collar allowance {allowed:.3e})"
        )
    return np.clip(pos, -half, half)


def displacement_jacobian(u: VectorField, order=2):
    """du entries, shape (dim, dim) + grid.shape; du[i, j] = d_j u^i."""
    grid = u.grid
    return np.stack(
        [np.stack([diff_array(u.components[i], grid, j, order) for j in range(grid.dim)])
         for i in range(grid.dim)]
    )


def jacobian_det(du):
    """det(I + du) for a Jacobian-perturbation array from displacement_jacobian."""
    dim = du.shape[0]
    if dim == 1:
        return 1.0 + du[0, 0]
    return (1.0 + du[0, 0]) * (1.0 + du[1, 1]) - du[0, 1] * du[1, 0]


# ---------------------------------------------------------------------------
# pointwise closed-form algebra


def inverse_components(comps, dim):
    det = packed_det(comps, dim)
    if dim == 1:
        return 1.0 / comps[0:1]
    return np.stack([comps[2], -comps[1], comps[0]]) / det


def sqrt_components(comps, dim):
    if dim == 1:
        return np.sqrt(comps[0:1])
    root_det = np.sqrt(packed_det(comps, dim))
    denom = np.sqrt(packed_trace(comps, dim) + 2.0 * root_det)
    return np.stack([comps[0] + root_det, comps[1], comps[2] + root_det]) / denom

def eigenvalue_components(comps, dim):
    """Eigenvalues per node, ascending; shape (dim,) + grid shape."""
    if dim == 1:
        return comps[0:1].copy()
    tr = packed_trace(comps, dim)
    disc = np.sqrt(np.maximum((comps[0] - comps[2]) ** 2 + 4.0 * comps[1] ** 2, 0.0))
    return np.stack([(tr - disc) / 2.0, (tr + disc) / 2.0])


def packed_to_full(comps, dim):
    """(dim, dim) + shape full symmetric matrices from packed components."""
    if dim == 1:
        return comps[0][None, None]
    return np.stack([np.stack([comps[0], comps[1]]), np.stack([comps[1], comps[2]])])


def full_to_packed(full, dim):
    if dim == 1:
        return full[0, 0][None]
    sym = 0.5 * (full[0, 1] + full[1, 0])
    return np.stack([full[0, 0], sym, full[1, 1]])


def congruence(full_a, full_b, full_c):
    """Pointwise matrix product a.b.c on (dim, dim)+shape arrays."""
    return np.einsum("ik...,kl...,lj...->ij...", full_a, full_b, full_c)


def product_trace(g: MetricField, a, b) -> ScalarField:
    """tr(g^{-1} a g^{-1} b) per node."""
    grid = require_same_grid(g, a, b)
    dim = grid.dim
    ginv = packed_to_full(inverse_components(g.components, dim), dim)
    fa = packed_to_full(_packed(a), dim)
    fb = packed_to_full(_packed(b), dim)
    m = np.einsum("ik...,kj...->ij...", ginv, fa)
    nmat = np.einsum("ik...,kj...->ij...", ginv, fb)
    return ScalarField(grid, np.einsum("ij...,ji...->...", m, nmat))


def log_det_field(g: MetricField) -> ScalarField:
    return ScalarField(g.grid, np.log(packed_det(g.components, g.grid.dim)))


def pointwise(op, a, b=None):
    """Dispatcher over the closed-form nodewise operations.

    op in {"inverse", "sqrt", "product_trace", "log_det", "eigenvalues"};
    product_trace takes (g, a, b) with the tr(g^{-1} a g^{-1} b) convention.
    """
    if op == "inverse":
        spd_check(_packed(a), a.grid.dim, what="inverse argument")
        return SymTensorField(a.grid, inverse_components(_packed(a), a.grid.dim))
    if op == "sqrt":
        spd_check(_packed(a), a.grid.dim, what="sqrt argument")
        return SymTensorField(a.grid, sqrt_components(_packed(a), a.grid.dim))
    if op == "log_det":
        spd_check(_packed(a), a.grid.dim, what="log_det argument")
        return ScalarField(a.grid, np.log(packed_det(_packed(a), a.grid.dim)))
    if op == "eigenvalues":
        return eigenvalue_components(_packed(a), a.grid.dim)
    if op == "product_trace":
        g, x, y = a if isinstance(a, tuple) else (a, b[0], b[1])
        return product_trace(g, x, y)
    raise ValueError(f"unknown pointwise op {op!r}")


# ---------------------------------------------------------------------------
# volume map and Lie derivatives


def volume_map(g: MetricField) -> DensityField:
    """vol(g) = sqrt(det g) as a density w.r.t. Lebesgue."""
    return DensityField(g.grid, np.sqrt(packed_det(g.components, g.grid.dim)))


def volume_tangent(g: MetricField, dg) -> ScalarField:
    """Derivative of vol at g in direction dg: (1/2) tr(g^{-1} dg) vol(g)."""
    grid = require_same_grid(g, dg)
    dim = grid.dim
    ginv = inverse_components(g.components, dim)
    dgc = _packed(dg)
    if dim == 1:
        tr = ginv[0] * dgc[0]
    else:
        tr = ginv[0] * dgc[0] + 2.0 * ginv[1] * dgc[1] + ginv[2] * dgc[2]
    return ScalarField(grid, 0.5 * tr * volume_map(g).values)


def lie_derivative_metric(v: VectorField, g: MetricField, order=2) -> SymTensorField:
    """(L_v g)_ij = v^k d_k g_ij + g_kj d_i v^k + g_ik d_j v^k."""
    grid = require_same_grid(v, g)
    dim = grid.dim
    gfull = packed_to_full(g.components, dim)
    dv = np.stack(
        [np.stack([diff_array(v.components[k], grid, i, order) for i in range(dim)])
         for k in range(dim)]
    )  # dv[k, i] = d_i v^k
    out = np.zeros((dim, dim) + grid.shape)
    for i in range(dim):
        for j in range(dim):
            acc = np.zeros(grid.shape)
            for k in range(dim):
                acc += v.components[k] * diff_array(gfull[i, j], grid, k, order)
                acc += gfull[k, j] * dv[k, i] + gfull[i, k] * dv[k, j]
            out[i, j] = acc
    return SymTensorField(grid, full_to_packed(out, dim))


def lie_derivative_density(v: VectorField, rho, order=2) -> ScalarField:
    """L_v rho = div(rho v) for densities stored w.r.t. Lebesgue."""
    grid = require_same_grid(v, rho)
    comps = rho.values * v.components
    return ScalarField(grid, divergence_array(comps, grid, order))


def trace_decompose(g: MetricField, h):
    """Split h = z + (r/dim) g with tr(g^{-1} z) = 0; r = tr(g^{-1} h)."""
    grid = require_same_grid(g, h)
    dim = grid.dim
    ginv = inverse_components(g.components, dim)
    hc = _packed(h)
    if dim == 1:
        r = ginv[0] * hc[0]
    else:
        r = ginv[0] * hc[0] + 2.0 * ginv[1] * hc[1] + ginv[2] * hc[2]
    z = hc - (r / dim) * g.components
    return SymTensorField(grid, z), ScalarField(grid, r)


# ---------------------------------------------------------------------------
# pullback / pushforward


def pullback_metric(phi: DisplacementMap, g: MetricField) -> MetricField:
    """phi* g = dphi^T (g o phi) dphi with the finite-difference Jacobian."""
    grid = require_same_grid(phi.displacement, g)
    dim = grid.dim
    du = displacement_jacobian(phi.displacement)
    jac = du.copy()
    for i in range(dim):
        jac[i, i] += 1.0
    g_at_phi = sample_array(g.components, grid, clamp_to_box(phi.positions(), phi))
    gfull = packed_to_full(g_at_phi, dim)
    pulled = np.einsum("ki...,kl...,lj...->ij...", jac, gfull, jac)
    return MetricField(SymTensorField(grid, full_to_packed(pulled, dim)))


def invert_displacement(phi: DisplacementMap, tol=1e-12, max_iter=200) -> DisplacementMap:
    """Fixed-point inverse of phi = id + u: u_inv(x) = -u(x + u_inv(x)).

    Requires the contraction condition ||du||_inf < 1 (max row sum of the
    finite-difference Jacobian).  The composite phi o phi^{-1} deviates from
    the identity by <= 10 * tol in the interpolated sense.
    """
    grid = phi.grid
    u = phi.displacement.components
    du = displacement_jacobian(phi.displacement)
    row_sum = np.abs(du).sum(axis=1).max()
    if row_sum >= 1.0:
        raise NonInvertibleMapError(
            f"contraction condition violated: ||du||_inf = {row_sum:.3f} >= 1"
        )
    x = grid.coordinates()
    uinv = -u.copy()
    for _ in range(max_iter):
        new = -sample_array(u, grid, clamp_to_box(x + uinv, phi))
        step = float(np.max(np.abs(new - uinv)))
        uinv = new
        if step < tol:
            break
    else:
        raise NonInvertibleMapError(
            f"fixed-point inversion stalled (last update {step:.3e} > tol {tol:.3e})"
        )
    residual = uinv + sample_array(u, grid, clamp_to_box(x + uinv, phi))
    dev = float(np.max(np.abs(residual)))
    if dev > 10.0 * tol:
        raise NonInvertibleMapError(
            f"phi o phi^(-1) deviates from identity by {dev:.3e} > 10 tol"
        )
    return DisplacementMap(
        VectorField(grid, uinv),
        collar_width=phi.collar_width,
        collar_tol=max(10.0 * tol, phi.collar_tol, 1e-12),
    )


def pushforward_metric(phi: DisplacementMap, g: MetricField, tol=1e-12) -> MetricField:
    """phi_* g computed as pullback along the fixed-point inverse of phi."""
    return pullback_metric(invert_displacement(phi, tol=tol), g)
