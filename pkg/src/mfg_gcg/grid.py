"""Uniform periodic grid on the torus T^d x [0, T] and its stencil operators.

Fields are plain numpy arrays. A scalar field on the space-time cylinder has
shape ``(nt + 1, nx, ..., nx)``; a single time slice has shape
``(nx,) * d``. Vector slices carry the component axis first:
``(d, nx, ..., nx)``. All stencils act on the trailing ``d`` axes and wrap
periodically.
"""
from __future__ import annotations

import csv
import functools
import itertools
from dataclasses import dataclass
from pathlib import Path

import numpy as np


@dataclass(frozen=True)
class GridSpec:
    """Discretization of the unit torus T^d times the horizon [0, T]."""

    d: int = 2
    nx: int = 10
    nt: int = 42
    T: float = 1.0

    def __post_init__(self):
        if not 1 <= self.d <= 3:
            raise ValueError(f"dimension d must be in 1..3, got {self.d}")
        if self.nx < 4:
            raise ValueError(f"nx must be >= 4, got {self.nx}")
        if self.nt < 2:
            raise ValueError(f"nt must be >= 2, got {self.nt}")
        if not self.T > 0:
            raise ValueError(f"T must be positive, got {self.T}")

    @property
    def dx(self) -> float:
        return 1.0 / self.nx

    @property
    def dt(self) -> float:
        return self.T / self.nt

    @property
    def cell_volume(self) -> float:
        return self.dx**self.d

    @property
    def space_shape(self) -> tuple[int, ...]:
        return (self.nx,) * self.d

    @property
    def field_shape(self) -> tuple[int, ...]:
        return (self.nt + 1,) + self.space_shape

    @property
    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.T, self.nt + 1)

    def coords(self) -> np.ndarray:
        """Cell coordinates, shape ``(d, nx, ..., nx)``; node ``i`` sits at ``i * dx``."""
        x = np.arange(self.nx) * self.dx
        return np.stack(np.meshgrid(*([x] * self.d), indexing="ij"))

    def with_nt(self, nt: int) -> "GridSpec":
        return GridSpec(d=self.d, nx=self.nx, nt=nt, T=self.T)


def _axes(u: np.ndarray, d: int) -> range:
    return range(u.ndim - d, u.ndim)


def shift(u: np.ndarray, offset: int, axis: int) -> np.ndarray:
    """Return ``u[i + offset]`` along ``axis`` with periodic wrap."""
    return np.roll(u, -offset, axis=axis)


def forward_diff(u: np.ndarray, grid: GridSpec) -> np.ndarray:
    """One-sided differences ``(u[i+1] - u[i]) / dx`` stacked over the spatial axes."""
    return np.stack([(shift(u, 1, ax) - u) / grid.dx for ax in _axes(u, grid.d)])


def backward_diff(u: np.ndarray, grid: GridSpec) -> np.ndarray:
    """One-sided differences ``(u[i] - u[i-1]) / dx`` stacked over the spatial axes."""
    return np.stack([(u - shift(u, -1, ax)) / grid.dx for ax in _axes(u, grid.d)])


def gradient(u: np.ndarray, grid: GridSpec) -> np.ndarray:
    """Centered periodic gradient of a spatial slice, shape ``(d,) + u.shape``."""
    return np.stack(
        [(shift(u, 1, ax) - shift(u, -1, ax)) / (2 * grid.dx) for ax in _axes(u, grid.d)]
    )


def laplacian(u: np.ndarray, grid: GridSpec) -> np.ndarray:
    """Standard (2d+1)-point periodic Laplacian of a spatial slice."""
    out = np.zeros_like(u, dtype=float)
    for ax in _axes(u, grid.d):
        out += shift(u, 1, ax) - 2.0 * u + shift(u, -1, ax)
    return out / grid.dx**2


@functools.lru_cache(maxsize=32)
def neighbor_tables(grid: GridSpec) -> tuple[np.ndarray, np.ndarray]:
    """Flat (C-order) indices of the ``i + 1`` and ``i - 1`` neighbours along each axis.

    Both tables have shape ``(d, nx**d)``; they drive the compiled time-stepping kernels.
    """
    idx = np.arange(grid.nx**grid.d).reshape(grid.space_shape)
    fwd = np.stack([shift(idx, 1, a).ravel() for a in range(grid.d)])
    bwd = np.stack([shift(idx, -1, a).ravel() for a in range(grid.d)])
    fwd.flags.writeable = False
    bwd.flags.writeable = False
    return fwd, bwd


def divergence_flux(face_flux: np.ndarray, grid: GridSpec) -> np.ndarray:
    """Conservative divergence from face fluxes.

    ``face_flux[a]`` holds the flux through the face ``i + 1/2`` along axis
    ``a``; the result is ``sum_a (F[i+1/2] - F[i-1/2]) / dx`` and telescopes to
    zero over the torus.
    """
    out = np.zeros(face_flux.shape[1:], dtype=float)
    for a in range(grid.d):
        out += face_flux[a] - shift(face_flux[a], -1, a)
    return out / grid.dx


def upwind_faces(w: np.ndarray, grid: GridSpec) -> np.ndarray:
    """Upwind face fluxes of a cell-centred vector slice ``w`` of shape ``(d, ...)``.

    Positive components are carried to the right face of their own cell,
    negative ones to the left face; i.e. ``F[i+1/2] = max(w[i], 0) + min(w[i+1], 0)``.
    """
    return split_faces(np.stack([np.maximum(w, 0.0), np.minimum(w, 0.0)]), grid)


def split_faces(w_split: np.ndarray, grid: GridSpec) -> np.ndarray:
    """Face fluxes of a sign-split momentum slice of shape ``(2, d, ...)``."""
    w_fwd, w_bwd = w_split
    return np.stack([w_fwd[a] + shift(w_bwd[a], 1, a) for a in range(grid.d)])


def integrate_space(f: np.ndarray, grid: GridSpec) -> float | np.ndarray:
    """Midpoint rule over the torus. Leading (non-spatial) axes are kept."""
    axes = tuple(range(f.ndim - grid.d, f.ndim))
    return np.sum(f, axis=axes) * grid.cell_volume


def integrate_time(g: np.ndarray, grid: GridSpec) -> float | np.ndarray:
    """Left-endpoint rule ``sum_{n < nt} g[n] dt`` along the first axis.

    Series of length ``nt`` (per-interval quantities) and ``nt + 1`` (nodal
    quantities, last node ignored) are both accepted.
    """
    g = np.asarray(g, dtype=float)
    if g.shape[0] not in (grid.nt, grid.nt + 1):
        raise ValueError(f"time series of length {g.shape[0]} does not match nt={grid.nt}")
    return np.sum(g[: grid.nt], axis=0) * grid.dt


def write_field_csv(path: str | Path, values: np.ndarray, grid: GridSpec, vector: bool = False) -> None:
    """Dump a field as CSV with header ``t_index,i0,..,value`` (or ``v0,..`` for vectors).

    Scalar fields have shape ``(n_times,) + space``; vector fields
    ``(n_times, d) + space``. Rows are lexicographic in (time, space).
    """
    idx_cols = ["t_index"] + [f"i{a}" for a in range(grid.d)]
    if vector:
        val_cols = [f"v{a}" for a in range(grid.d)]
        values = np.moveaxis(values, 1, -1)
    else:
        val_cols = ["value"]
        values = values[..., None]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(idx_cols + val_cols)
        for n in range(values.shape[0]):
            for ijk in itertools.product(range(grid.nx), repeat=grid.d):
                writer.writerow([n, *ijk, *(repr(float(v)) for v in values[(n,) + ijk])])


def read_field_csv(path: str | Path, grid: GridSpec) -> np.ndarray:
    """Inverse of :func:`write_field_csv`."""
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    n_times = int(data[:, 0].max()) + 1
    n_vals = data.shape[1] - 1 - grid.d
    values = data[:, 1 + grid.d :].reshape((n_times,) + grid.space_shape + (n_vals,))
    if n_vals == 1:
        return values[..., 0]
    return np.moveaxis(values, -1, 1)
