"""Grids, discrete fields and finite-difference calculus.

Domains are the unit torus (periodic in every axis, extent fixed to 1) or a
centered box [-L, L]^d.  All fields store one value set per grid node in
row-major layout; arrays are frozen after construction so every operation in
the package is a pure function of its inputs.

Discretization conventions:
  * derivatives: second-order central stencils; the torus wraps, the box uses
    second-order one-sided stencils on the boundary; a fourth-order central
    stencil is available on the torus where a probe needs the extra accuracy,
  * quadrature: rectangle rule on the torus, trapezoid weights on the box,
  * interpolation: bilinear (linear in 1D).
"""

from __future__ import annotations

import numpy as np

from .errors import GridMismatchError, OutOfDomainError, PositivityViolation

TORUS = "torus"
BOX = "box"


class Grid:
    """Uniform grid on the unit torus or a centered box.

    Parameters
    ----------
    dim : 1 or 2
    topology : "torus" or "box"
    n_per_axis : nodes per axis, at least 8
    extent : side length; must be 1.0 on the torus, 2*L > 0 on the box
    """

    __slots__ = ("dim", "topology", "n_per_axis", "extent")

    def __init__(self, dim, topology, n_per_axis, extent=1.0):
        if dim not in (1, 2):
            raise ValueError(f"dim must be 1 or 2, got {dim}")
        if topology not in (TORUS, BOX):
            raise ValueError(f"topology must be '{TORUS}' or '{BOX}', got {topology!r}")
        n_per_axis = int(n_per_axis)
        if n_per_axis < 8:
            raise ValueError(f"n_per_axis must be >= 8, got {n_per_axis}")
        extent = float(extent)
        if topology == TORUS and extent != 1.0:
            raise ValueError("torus grids have extent fixed to 1.0")
        if extent <= 0.0:
            raise ValueError(f"extent must be positive, got {extent}")
        object.__setattr__(self, "dim", dim)
        object.__setattr__(self, "topology", topology)
        object.__setattr__(self, "n_per_axis", n_per_axis)
        object.__setattr__(self, "extent", extent)

    def __setattr__(self, *_):
        raise AttributeError("Grid is immutable")

    @property
    def spacing(self):
        if self.topology == TORUS:
            return self.extent / self.n_per_axis
        return self.extent / (self.n_per_axis - 1)

    @property
    def shape(self):
        return (self.n_per_axis,) * self.dim

    @property
    def node_count(self):
        return self.n_per_axis**self.dim

    @property
    def half_extent(self):
        """Box half side L; the box spans [-L, L] per axis."""
        return self.extent / 2.0

    def axis_coordinates(self):
        """1D node coordinates along one axis."""
        n, h = self.n_per_axis, self.spacing
        if self.topology == TORUS:
            return h * np.arange(n)
        return -self.half_extent + h * np.arange(n)

    def coordinates(self):
        """Node coordinates, shape (dim,) + shape."""
        ax = self.axis_coordinates()
        if self.dim == 1:
            return ax[None, :]
        x0, x1 = np.meshgrid(ax, ax, indexing="ij")
        return np.stack([x0, x1])

    def __eq__(self, other):
        return (
            isinstance(other, Grid)
            and self.dim == other.dim
            and self.topology == other.topology
            and self.n_per_axis == other.n_per_axis
            and self.extent == other.extent
        )

    def __hash__(self):
        return hash((self.dim, self.topology, self.n_per_axis, self.extent))

    def __repr__(self):
        return (
            f"Grid(dim={self.dim}, topology={self.topology!r}, "
            f"n_per_axis={self.n_per_axis}, extent={self.extent})"
        )


def _frozen(values, shape):
    arr = np.array(values, dtype=float)
    if arr.shape != shape:
        raise ValueError(f"expected value array of shape {shape}, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("field values must be finite")
    arr.setflags(write=False)
    return arr


def sym_component_count(dim):
    return dim * (dim + 1) // 2


class ScalarField:
    """One real per node."""

    kind = "scalar"

    def __init__(self, grid, values):
        self.grid = grid
        self.values = _frozen(values, grid.shape)

    @classmethod
    def constant(cls, grid, value):
        return cls(grid, np.full(grid.shape, float(value)))

    @classmethod
    def from_function(cls, grid, fn):
        return cls(grid, fn(*grid.coordinates()))


class DensityField:
    """One strictly positive real per node (Radon-Nikodym w.r.t. Lebesgue)."""

    kind = "density"

    def __init__(self, grid, values):
        self.grid = grid
        arr = np.array(values, dtype=float)
        if arr.shape != grid.shape:
            raise ValueError(f"expected value array of shape {grid.shape}, got {arr.shape}")
        if not np.all(arr > 0.0):
            node = tuple(int(i) for i in np.unravel_index(int(np.argmin(arr)), grid.shape))
            raise PositivityViolation(
                f"density must be strictly positive; node {node} has value {arr[node]}",
                node=node,
            )
        self.values = _frozen(arr, grid.shape)

    @classmethod
    def constant(cls, grid, value):
        return cls(grid, np.full(grid.shape, float(value)))


class VectorField:
    """dim reals per node, stored as components[k] = k-th coordinate."""

    kind = "vector"

    def __init__(self, grid, components):
        self.grid = grid
        self.components = _frozen(components, (grid.dim,) + grid.shape)

    @classmethod
    def zero(cls, grid):
        return cls(grid, np.zeros((grid.dim,) + grid.shape))

    @classmethod
    def constant(cls, grid, vec):
        comps = np.empty((grid.dim,) + grid.shape)
        for k in range(grid.dim):
            comps[k] = vec[k]
        return cls(grid, comps)

    def euclidean_square(self):
        return ScalarField(self.grid, np.sum(self.components**2, axis=0))


class SymTensorField:
    """Symmetric 2-tensor per node; packed components (11,) in 1D, (11, 12, 22) in 2D."""

    kind = "sym_tensor"

    def __init__(self, grid, components):
        self.grid = grid
        self.components = _frozen(components, (sym_component_count(grid.dim),) + grid.shape)

    @classmethod
    def zero(cls, grid):
        return cls(grid, np.zeros((sym_component_count(grid.dim),) + grid.shape))

    @classmethod
    def from_matrix_entries(cls, grid, a11, a12=None, a22=None):
        if grid.dim == 1:
            return cls(grid, np.asarray(a11, dtype=float)[None])
        broad = [np.broadcast_to(np.asarray(a, dtype=float), grid.shape) for a in (a11, a12, a22)]
        return cls(grid, np.stack(broad))


def _values_of(field):
    if isinstance(field, (ScalarField, DensityField)):
        return field.values
    if isinstance(field, VectorField):
        return field.components
    if isinstance(field, SymTensorField):
        return field.components
    return np.asarray(field, dtype=float)


def require_same_grid(*fields):
    grids = [f.grid for f in fields if hasattr(f, "grid")]
    for g in grids[1:]:
        if g != grids[0]:
            raise GridMismatchError(f"fields live on different grids: {grids[0]} vs {g}")
    return grids[0]


# ---------------------------------------------------------------------------
# finite differences


def diff_array(values, grid, axis, order=2):
    """Partial derivative of a nodal array along one coordinate axis.

    Works on arrays with arbitrary leading component axes; the trailing
    grid.dim axes are the spatial ones.
    """
    if axis < 0 or axis >= grid.dim:
        raise ValueError(f"axis {axis} out of range for dim {grid.dim}")
    if order not in (2, 4):
        raise ValueError(f"stencil order must be 2 or 4, got {order}")
    a = np.asarray(values, dtype=float)
    h = grid.spacing
    ax = a.ndim - grid.dim + axis
    if grid.topology == TORUS:
        fwd = np.roll(a, -1, axis=ax)
        bwd = np.roll(a, 1, axis=ax)
        if order == 2:
            return (fwd - bwd) / (2.0 * h)
        fwd2 = np.roll(a, -2, axis=ax)
        bwd2 = np.roll(a, 2, axis=ax)
        return (8.0 * (fwd - bwd) - (fwd2 - bwd2)) / (12.0 * h)
    if order == 4:
        raise ValueError("fourth-order stencils are only available on torus grids")
    out = np.empty_like(a)
    ix = [slice(None)] * a.ndim

    def sl(idx):
        ix[ax] = idx
        return tuple(ix)

    out[sl(slice(1, -1))] = (a[sl(slice(2, None))] - a[sl(slice(0, -2))]) / (2.0 * h)
    out[sl(0)] = (-3.0 * a[sl(0)] + 4.0 * a[sl(1)] - a[sl(2)]) / (2.0 * h)
    out[sl(-1)] = (3.0 * a[sl(-1)] - 4.0 * a[sl(-2)] + a[sl(-3)]) / (2.0 * h)
    return out


def partial_derivative(field, axis, order=2):
    """Central-difference partial derivative of a scalar field (or raw array)."""
    if isinstance(field, (ScalarField, DensityField)):
        return ScalarField(field.grid, diff_array(field.values, field.grid, axis, order))
    raise TypeError("partial_derivative expects a ScalarField or DensityField")


def gradient_array(values, grid, order=2):
    """Stack of all partial derivatives, shape (dim,) + value shape."""
    return np.stack([diff_array(values, grid, k, order) for k in range(grid.dim)])


def divergence_array(components, grid, order=2):
    """Sum_k d_k components[k] for an array of shape (dim,)+grid.shape."""
    comps = np.asarray(components, dtype=float)
    out = diff_array(comps[0], grid, 0, order)
    for k in range(1, grid.dim):
        out = out + diff_array(comps[k], grid, k, order)
    return out


# ---------------------------------------------------------------------------
# quadrature


def quadrature_weights(grid):
    """Nodal quadrature weights; rectangle rule (torus) or trapezoid (box)."""
    h = grid.spacing
    if grid.topology == TORUS:
        return np.full(grid.shape, h**grid.dim)
    w1 = np.full(grid.n_per_axis, h)
    w1[0] = w1[-1] = h / 2.0
    if grid.dim == 1:
        return w1
    return np.outer(w1, w1)


def integrate(f, weight=None):
    """Integral of a scalar field against a density (defaults to Lebesgue)."""
    if weight is None:
        grid = f.grid
        fw = _values_of(f)
    else:
        grid = require_same_grid(f, weight)
        fw = _values_of(f) * _values_of(weight)
    return float(np.sum(fw * quadrature_weights(grid)))


# ---------------------------------------------------------------------------
# interpolation

_DOMAIN_SLACK = 1e-9


def sample_array(values, grid, positions):
    """Bilinear (linear in 1D) interpolation of a nodal array at positions.

    ``values`` may carry leading component axes; ``positions`` has shape
    (dim,) + S for any S.  Torus positions wrap; box positions must lie in
    [-L, L] up to a small roundoff slack.
    """
    a = np.asarray(values, dtype=float)
    pos = np.asarray(positions, dtype=float)
    if pos.shape[0] != grid.dim:
        raise ValueError(f"positions must have leading dim {grid.dim}")
    n, h = grid.n_per_axis, grid.spacing
    lead = a.shape[: a.ndim - grid.dim]
    flat = a.reshape((-1,) + grid.shape)

    if grid.topology == TORUS:
        t = np.mod(pos, grid.extent) / h
        i0 = np.floor(t).astype(int)
        frac = t - i0
        i0 = np.mod(i0, n)
        i1 = np.mod(i0 + 1, n)
    else:
        half = grid.half_extent
        slack = _DOMAIN_SLACK * grid.extent
        if np.any(pos < -half - slack) or np.any(pos > half + slack):
            worst = float(np.max(np.abs(pos)))
            raise OutOfDomainError(
                f"sample position outside box domain [-{half}, {half}] (|x| up to {worst})"
            )
        t = (np.clip(pos, -half, half) + half) / h
        i0 = np.clip(np.floor(t).astype(int), 0, n - 2)
        frac = t - i0
        i1 = i0 + 1

    if grid.dim == 1:
        v = flat[:, i0[0]] * (1.0 - frac[0]) + flat[:, i1[0]] * frac[0]
    else:
        f0, f1 = frac[0], frac[1]
        v = (
            flat[:, i0[0], i0[1]] * (1.0 - f0) * (1.0 - f1)
            + flat[:, i1[0], i0[1]] * f0 * (1.0 - f1)
            + flat[:, i0[0], i1[1]] * (1.0 - f0) * f1
            + flat[:, i1[0], i1[1]] * f0 * f1
        )
    return v.reshape(lead + pos.shape[1:])


def sample(field, positions):
    """Interpolate any field at the given positions; returns raw values."""
    pos = positions.components if isinstance(positions, VectorField) else positions
    return sample_array(_values_of(field), field.grid, pos)
