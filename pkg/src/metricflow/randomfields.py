"""Seeded band-limited random fields.

All generators draw from ``numpy.random.Generator`` streams created by
``substream(seed, label)``, so concurrent trials stay deterministic: the
substream depends only on the 64-bit seed and the label string, never on
execution order.

Scalar fields are truncated Fourier series with modes up to ``modes`` per
axis (must be resolvable, modes <= n_per_axis / 4) rescaled to a prescribed
max amplitude.  SPD fields are built as (I + eps)^T (I + eps) with the
perturbation eps capped strictly below 1/2 in operator norm, so positive
definiteness holds by construction.
"""

from __future__ import annotations

import hashlib

import numpy as np

from .fields import (
    TORUS,
    DensityField,
    ScalarField,
    SymTensorField,
    VectorField,
    sym_component_count,
)
from .tensors import MetricField


def substream(seed, label: str) -> np.random.Generator:
    """Deterministic generator for (seed, label)."""
    digest = hashlib.sha256(f"{int(seed)}:{label}".encode()).digest()
    words = [int.from_bytes(digest[i : i + 4], "little") for i in range(0, 16, 4)]
    return np.random.default_rng(np.random.SeedSequence(words))


def _check_modes(grid, modes):
    if grid.topology != TORUS:
        raise ValueError("band-limited generators are defined on torus grids")
    if modes < 1 or 4 * modes > grid.n_per_axis:
        raise ValueError(
            f"modes must satisfy 1 <= modes <= n_per_axis/4, got {modes} "
            f"at n_per_axis={grid.n_per_axis}"
        )


def band_limited_values(grid, rng, modes=4, amplitude=1.0):
    """Truncated Fourier series rescaled to the requested max amplitude."""
    _check_modes(grid, modes)
    x = grid.coordinates()
    out = np.zeros(grid.shape)
    if grid.dim == 1:
        wavevectors = [(k,) for k in range(1, modes + 1)]
    else:
        wavevectors = [
            (k0, k1)
            for k0 in range(-modes, modes + 1)
            for k1 in range(0, modes + 1)
            if not (k0 == 0 and k1 == 0) and not (k1 == 0 and k0 < 0)
        ]
    coeffs = rng.normal(size=(len(wavevectors), 2))
    for (kvec, (a, b)) in zip(wavevectors, coeffs):
        phase = 2.0 * np.pi * sum(k * x[i] for i, k in enumerate(kvec))
        out += a * np.cos(phase) + b * np.sin(phase)
    peak = float(np.max(np.abs(out)))
    if peak > 0.0 and amplitude != 0.0:
        out *= amplitude / peak
    elif amplitude == 0.0:
        out[:] = 0.0
    return out


def band_limited_scalar(grid, rng, modes=4, amplitude=1.0) -> ScalarField:
    return ScalarField(grid, band_limited_values(grid, rng, modes, amplitude))


def band_limited_vector(grid, rng, modes=4, amplitude=1.0) -> VectorField:
    comps = np.stack(
        [band_limited_values(grid, rng, modes, amplitude) for _ in range(grid.dim)]
    )
    return VectorField(grid, comps)


def band_limited_sym_tensor(grid, rng, modes=4, amplitude=1.0) -> SymTensorField:
    comps = np.stack(
        [
            band_limited_values(grid, rng, modes, amplitude)
            for _ in range(sym_component_count(grid.dim))
        ]
    )
    return SymTensorField(grid, comps)


def band_limited_density(grid, rng, modes=4, amplitude=0.5) -> DensityField:
    """exp of a band-limited field; amplitude bounds |log density|."""
    return DensityField(grid, np.exp(band_limited_values(grid, rng, modes, amplitude)))


def random_spd_metric(grid, rng, modes=4, amplitude=0.3) -> MetricField:
    """(I + eps)^T (I + eps) with ||eps||_op <= min(amplitude, 0.499) nodewise."""
    cap = min(float(amplitude), 0.499)
    if grid.dim == 1:
        eps = band_limited_values(grid, rng, modes, cap)
        comps = ((1.0 + eps) ** 2)[None]
        return MetricField(SymTensorField(grid, comps))
    entries = np.stack(
        [band_limited_values(grid, rng, modes, 1.0) for _ in range(4)]
    ).reshape(2, 2, *grid.shape)
    # exact nodewise spectral norm of a 2x2 matrix via its singular values
    sq = np.einsum("ki...,kj...->ij...", entries, entries)
    tr = sq[0, 0] + sq[1, 1]
    det = sq[0, 0] * sq[1, 1] - sq[0, 1] * sq[1, 0]
    sigma_max = np.sqrt(
        np.maximum((tr + np.sqrt(np.maximum(tr**2 - 4.0 * det, 0.0))) / 2.0, 0.0)
    )
    peak = float(np.max(sigma_max))
    if peak > 0.0:
        entries *= cap / peak
    jac = entries.copy()
    jac[0, 0] += 1.0
    jac[1, 1] += 1.0
    g_full = np.einsum("ki...,kj...->ij...", jac, jac)
    comps = np.stack([g_full[0, 0], 0.5 * (g_full[0, 1] + g_full[1, 0]), g_full[1, 1]])
    return MetricField(SymTensorField(grid, comps))


def generate_field(grid, kind, seed, label="field", modes=4, amplitude=0.3):
    """Uniform entry point used by the experiment runner.

    kind in {"scalar", "vector", "sym_tensor", "density", "metric"}.
    """
    rng = substream(seed, f"{label}:{kind}")
    if kind == "scalar":
        return band_limited_scalar(grid, rng, modes, amplitude)
    if kind == "vector":
        return band_limited_vector(grid, rng, modes, amplitude)
    if kind == "sym_tensor":
        return band_limited_sym_tensor(grid, rng, modes, amplitude)
    if kind == "density":
        return band_limited_density(grid, rng, modes, amplitude)
    if kind == "metric":
        return random_spd_metric(grid, rng, modes, amplitude)
    raise ValueError(f"unknown field kind {kind!r}")
