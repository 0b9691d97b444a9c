"""Game data of a potential mean field game and the cost functionals built on it.

Momentum fields ``w`` are stored sign-split, shape ``(nt, 2, d) + space``:
``w[:, 0]`` is the non-negative part moving mass towards ``i + 1`` along each
axis and ``w[:, 1]`` the non-positive part moving it towards ``i - 1``. The
physical momentum is ``w.sum(axis=1)``. Controls ``v`` use the same layout.
Densities ``m`` live on the ``nt + 1`` time nodes, controls and prices on the
``nt`` intervals.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import _kernels
from .grid import GridSpec, integrate_space, integrate_time

# momentum below this size in an empty cell is treated as rounding noise
W_EPS = 1e-10


class InfiniteCostError(ValueError):
    """A cell carries momentum without mass, so the perspective cost is +inf."""


# ---------------------------------------------------------------------------
# running cost


@dataclass(frozen=True)
class QuadraticLagrangian:
    """``L(x, t, v) = weight * |v|^2 / 2`` and its conjugate ``H(p) = |p|^2 / (2 weight)``."""

    weight: float = 1.0

    def __post_init__(self):
        if not self.weight > 0:
            raise ValueError("weight must be positive")

    @property
    def convexity_modulus(self) -> float:
        return self.weight

    def lagrangian(self, v: np.ndarray) -> np.ndarray:
        """``v`` has the component axis first."""
        return 0.5 * self.weight * np.sum(np.square(v), axis=0)

    def hamiltonian(self, p: np.ndarray) -> np.ndarray:
        return 0.5 * np.sum(np.square(p), axis=0) / self.weight

    def hamiltonian_grad(self, p: np.ndarray) -> np.ndarray:
        return np.asarray(p, dtype=float) / self.weight

    def numerical_hamiltonian(self, p_fwd: np.ndarray, p_bwd: np.ndarray) -> np.ndarray:
        """Monotone upwind Hamiltonian from forward/backward difference quotients.

        Equals ``H(p)`` whenever ``p_fwd == p_bwd == p``.
        """
        return 0.5 * np.sum(
            np.square(np.minimum(p_fwd, 0.0)) + np.square(np.maximum(p_bwd, 0.0)), axis=0
        ) / self.weight

    def upwind_control(self, p_fwd: np.ndarray, p_bwd: np.ndarray) -> np.ndarray:
        """Sign-split optimal feedback, shape ``(2,) + p_fwd.shape``."""
        return np.stack([-np.minimum(p_fwd, 0.0), -np.maximum(p_bwd, 0.0)]) / self.weight

    def perspective(self, m: np.ndarray, w: np.ndarray, n_comp_axes: int = 1) -> np.ndarray:
        """``m L(w / m)`` cellwise, with the 0 / +inf conventions at ``m <= 0``.

        ``w`` carries ``n_comp_axes`` leading component axes (1 for a plain
        vector, 2 for a sign-split one); squares are summed over all of them.
        """
        m = np.asarray(m, dtype=float)
        w = np.asarray(w, dtype=float)
        w2 = np.sum(np.square(w), axis=tuple(range(n_comp_axes)))
        empty = m <= 0.0
        if np.any(empty & (np.sqrt(w2) > W_EPS)):
            raise InfiniteCostError("momentum carried by a cell without mass")
        safe_m = np.where(empty, 1.0, m)
        return np.where(empty, 0.0, 0.5 * self.weight * w2 / safe_m)


def perspective_cost(m: float, w, lagrangian: QuadraticLagrangian | None = None) -> float:
    """Perspective function of a single cell; ``w`` is an ``R^d`` vector."""
    lagrangian = lagrangian or QuadraticLagrangian()
    w = np.asarray(w, dtype=float).reshape(-1, 1)
    if m < 0:
        raise ValueError("mass must be non-negative")
    return float(lagrangian.perspective(np.array([m]), w)[0])


# ---------------------------------------------------------------------------
# congestion coupling f and its potential F


@dataclass(frozen=True)
class ZeroCongestion:
    """``f = 0``, ``F = 0``."""

    def gamma(self, m: np.ndarray, grid: GridSpec) -> np.ndarray:
        return np.zeros_like(m, dtype=float)

    def potential(self, m: np.ndarray, grid: GridSpec) -> np.ndarray:
        """``F(t, m(t))`` for every leading index of ``m``."""
        return np.zeros(m.shape[: m.ndim - grid.d])

    def lipschitz(self, grid: GridSpec) -> float:
        return 0.0


@dataclass(frozen=True)
class KernelCongestion:
    """Non-local congestion ``f[m] = K * m`` with a periodic PSD kernel.

    ``K(x) = c_0 + sum_{j>=1} c_j sum_a cos(2 pi j x_a)``; non-negative
    coefficients make every sampled circulant matrix positive semidefinite.
    ``F(t, m) = <K * m, m> / 2``.
    """

    coefficients: tuple[float, ...] = (0.0, 1.0)
    kernel_values: np.ndarray | None = field(default=None, compare=False)

    def __post_init__(self):
        if self.kernel_values is None and any(c < 0 for c in self.coefficients):
            raise ValueError("kernel coefficients must be non-negative")

    @classmethod
    def from_samples(cls, values: np.ndarray) -> "KernelCongestion":
        """Kernel given directly by its samples ``K(x_i)`` on the grid."""
        return cls(coefficients=(), kernel_values=np.asarray(values, dtype=float))

    def kernel(self, grid: GridSpec) -> np.ndarray:
        if self.kernel_values is not None:
            if self.kernel_values.shape != grid.space_shape:
                raise ValueError("kernel samples do not match the grid")
            return self.kernel_values
        x = grid.coords()
        out = np.full(grid.space_shape, float(self.coefficients[0]) if self.coefficients else 0.0)
        for j, c in enumerate(self.coefficients[1:], start=1):
            out += c * np.sum(np.cos(2 * np.pi * j * x), axis=0)
        return out

    def _convolve(self, m: np.ndarray, grid: GridSpec) -> np.ndarray:
        axes = tuple(range(m.ndim - grid.d, m.ndim))
        k_hat = np.fft.fftn(self.kernel(grid))
        out = np.fft.ifftn(np.fft.fftn(m, axes=axes) * k_hat, axes=axes).real
        return out * grid.cell_volume

    def gamma(self, m: np.ndarray, grid: GridSpec) -> np.ndarray:
        return self._convolve(m, grid)

    def potential(self, m: np.ndarray, grid: GridSpec) -> np.ndarray:
        return 0.5 * integrate_space(self._convolve(m, grid) * m, grid)

    def lipschitz(self, grid: GridSpec) -> float:
        """``L^2 -> L^inf`` operator norm of the discrete convolution, i.e. ``||K||_{L^2}``."""
        return float(np.sqrt(integrate_space(self.kernel(grid) ** 2, grid)))

    def eigenvalues(self, grid: GridSpec) -> np.ndarray:
        return np.fft.fftn(self.kernel(grid)).real * grid.cell_volume


# ---------------------------------------------------------------------------
# price function phi and its potential Phi


@dataclass(frozen=True)
class LinearPrice:
    """``phi(t, z) = gain z`` with potential ``Phi(t, z) = gain |z|^2 / 2``."""

    gain: float = 10.0

    def __post_init__(self):
        if self.gain < 0:
            raise ValueError("price gain must be non-negative")

    def phi(self, z: np.ndarray) -> np.ndarray:
        return self.gain * np.asarray(z, dtype=float)

    def potential(self, z: np.ndarray) -> np.ndarray:
        return 0.5 * self.gain * np.sum(np.square(z), axis=-1)

    @property
    def lipschitz(self) -> float:
        return float(self.gain)


@dataclass(frozen=True)
class CustomPrice:
    """User-supplied pair ``(phi, Phi)`` acting on ``(..., k)`` arrays."""

    phi_fn: Callable[[np.ndarray], np.ndarray]
    potential_fn: Callable[[np.ndarray], np.ndarray]
    lipschitz: float

    def phi(self, z):
        return self.phi_fn(np.asarray(z, dtype=float))

    def potential(self, z):
        return self.potential_fn(np.asarray(z, dtype=float))


# ---------------------------------------------------------------------------
# aggregation a(x) in R^{k x d}


@dataclass(frozen=True, eq=False)
class Aggregation:
    """Time-independent aggregation ``a(x)``; ``matrix`` has shape ``(k, d)`` or ``(k, d) + space``."""

    matrix: np.ndarray

    @classmethod
    def identity(cls, d: int) -> "Aggregation":
        return cls(np.eye(d))

    @property
    def k(self) -> int:
        return self.matrix.shape[0]

    def apply(self, w_phys: np.ndarray, grid: GridSpec) -> np.ndarray:
        """``A[w](t) = int a(x) w(x, t) dx`` for ``w_phys`` of shape ``(n, d) + space`` -> ``(n, k)``."""
        a = np.asarray(self.matrix, dtype=float)
        if a.ndim == 2:
            return integrate_space(w_phys, grid) @ a.T
        return integrate_space(np.einsum("kd...,nd...->nk...", a, w_phys), grid)

    def apply_adjoint(self, P: np.ndarray, grid: GridSpec) -> np.ndarray:
        """``A*[P](x, t) = a(x)^T P(t)`` for ``P`` of shape ``(n, k)`` -> ``(n, d) + space``."""
        a = np.asarray(self.matrix, dtype=float)
        if a.ndim == 2:
            out = np.asarray(P, dtype=float) @ a
            return np.broadcast_to(out.reshape(out.shape + (1,) * grid.d), out.shape + grid.space_shape)
        return np.einsum("kd...,nk->nd...", a, P)


# ---------------------------------------------------------------------------
# problem data


def von_mises_density(center=0.25, concentration: float = 10.0) -> Callable[[np.ndarray], np.ndarray]:
    """Product of 1-d von Mises bumps on the unit torus (unnormalized)."""

    def density(x: np.ndarray) -> np.ndarray:
        c = np.broadcast_to(np.asarray(center, dtype=float), (x.shape[0],))
        c = c.reshape((-1,) + (1,) * (x.ndim - 1))
        return np.exp(concentration * np.sum(np.cos(2 * np.pi * (x - c)), axis=0))

    return density


def cosine_terminal_cost(x: np.ndarray) -> np.ndarray:
    """``g(x) = sum_i cos(2 pi x_i)``."""
    return np.sum(np.cos(2 * np.pi * x), axis=0)


@dataclass(frozen=True, eq=False)
class ProblemSpec:
    """Immutable data of the game: dimensions, viscosity, costs and boundary data.

    ``g`` and ``m0`` are callables on coordinate arrays of shape
    ``(d,) + space``; ``m0`` is renormalized on each grid to unit discrete mass.
    """

    d: int = 2
    k: int = 2
    T: float = 1.0
    nu: float = 0.005
    lagrangian: QuadraticLagrangian = QuadraticLagrangian()
    congestion: ZeroCongestion | KernelCongestion = ZeroCongestion()
    price: LinearPrice | CustomPrice = LinearPrice(10.0)
    aggregation: Aggregation | None = None
    g: Callable[[np.ndarray], np.ndarray] = cosine_terminal_cost
    m0: Callable[[np.ndarray], np.ndarray] = field(default_factory=von_mises_density)

    def __post_init__(self):
        if not self.nu > 0:
            raise ValueError("viscosity nu must be positive")
        if not self.T > 0:
            raise ValueError("horizon T must be positive")
        if self.aggregation is None:
            object.__setattr__(self, "aggregation", Aggregation.identity(self.d))
        if self.aggregation.matrix.shape[:2] != (self.k, self.d):
            raise ValueError("aggregation matrix must have shape (k, d)")

    def check_grid(self, grid: GridSpec) -> None:
        if grid.d != self.d or not np.isclose(grid.T, self.T):
            raise ValueError(f"grid {grid} does not match problem (d={self.d}, T={self.T})")

    def terminal_cost(self, grid: GridSpec) -> np.ndarray:
        return np.asarray(self.g(grid.coords()), dtype=float)

    def initial_density(self, grid: GridSpec) -> np.ndarray:
        m0 = np.asarray(self.m0(grid.coords()), dtype=float)
        if np.any(m0 < 0):
            raise ValueError("initial density must be non-negative")
        return m0 / integrate_space(m0, grid)

    @property
    def C1(self) -> Callable[[GridSpec], float]:
        return self.congestion.lipschitz

    @property
    def C2(self) -> float:
        return self.price.lipschitz

    def replace(self, **changes) -> "ProblemSpec":
        from dataclasses import replace

        return replace(self, **changes)


def default_problem(nu: float = 0.005, price_gain: float = 10.0, concentration: float = 10.0,
                  center=0.25, congestion=None) -> ProblemSpec:
    """The two-dimensional price-interaction example: f = 0, phi = 10 z, g = sum cos(2 pi x_i)."""
    return ProblemSpec(
        d=2,
        k=2,
        T=1.0,
        nu=nu,
        congestion=congestion or ZeroCongestion(),
        price=LinearPrice(price_gain),
        m0=von_mises_density(center, concentration),
    )


# ---------------------------------------------------------------------------
# couplings and costs


def momentum(w: np.ndarray) -> np.ndarray:
    """Physical momentum from a sign-split field ``(n, 2, d) + space``."""
    return w.sum(axis=1)


def split(w_phys: np.ndarray) -> np.ndarray:
    """Sign-split a physical field ``(n, d) + space`` into ``(n, 2, d) + space``."""
    return np.stack([np.maximum(w_phys, 0.0), np.minimum(w_phys, 0.0)], axis=1)


def coupling_gamma(spec: ProblemSpec, grid: GridSpec, m: np.ndarray) -> np.ndarray:
    return spec.congestion.gamma(m, grid)


def apply_A(spec: ProblemSpec, grid: GridSpec, w_phys: np.ndarray) -> np.ndarray:
    return spec.aggregation.apply(w_phys, grid)


def apply_A_star(spec: ProblemSpec, grid: GridSpec, P: np.ndarray) -> np.ndarray:
    return spec.aggregation.apply_adjoint(P, grid)


def coupling_price(spec: ProblemSpec, grid: GridSpec, w: np.ndarray) -> np.ndarray:
    """``P(t) = phi(t, A[w](t))`` for a sign-split ``w``; shape ``(nt, k)``."""
    return spec.price.phi(apply_A(spec, grid, momentum(w)))


def cost_J1(spec: ProblemSpec, grid: GridSpec, m: np.ndarray, w: np.ndarray) -> float:
    nt = grid.nt
    per_step, bad = _kernels.kinetic_energy(
        np.ascontiguousarray(m[:nt]).reshape(nt, -1),
        np.ascontiguousarray(w).reshape(nt, 2, grid.d, -1),
        spec.lagrangian.weight, W_EPS)
    if bad >= 0:
        raise InfiniteCostError(f"momentum carried by a cell without mass at step {bad}")
    terminal = integrate_space(spec.terminal_cost(grid) * m[nt], grid)
    return float(integrate_time(per_step * grid.cell_volume, grid) + terminal)


def cost_J2(spec: ProblemSpec, grid: GridSpec, m: np.ndarray, w: np.ndarray) -> float:
    F = spec.congestion.potential(m[: grid.nt], grid)
    Phi = spec.price.potential(apply_A(spec, grid, momentum(w)))
    return float(integrate_time(F + Phi, grid))


def cost_J(spec: ProblemSpec, grid: GridSpec, m: np.ndarray, w: np.ndarray) -> tuple[float, float, float]:
    """Potential cost ``(J, J1, J2)`` of a feasible pair."""
    j1 = cost_J1(spec, grid, m, w)
    j2 = cost_J2(spec, grid, m, w)
    return j1 + j2, j1, j2


def linear_terms(spec: ProblemSpec, grid: GridSpec, gamma: np.ndarray, P: np.ndarray,
                 m: np.ndarray, w: np.ndarray) -> float:
    """``int_Q gamma m + int_0^T <A[w], P>``."""
    congestion = integrate_time(integrate_space(gamma[: grid.nt] * m[: grid.nt], grid), grid)
    price = integrate_time(np.sum(apply_A(spec, grid, momentum(w)) * P, axis=-1), grid)
    return float(congestion + price)


def cost_Z(spec: ProblemSpec, grid: GridSpec, gamma: np.ndarray, P: np.ndarray,
           m: np.ndarray, w: np.ndarray) -> float:
    """Partially linearized criterion ``J1(m, w) + int gamma m + int <A[w], P>``."""
    return cost_J1(spec, grid, m, w) + linear_terms(spec, grid, gamma, P, m, w)
