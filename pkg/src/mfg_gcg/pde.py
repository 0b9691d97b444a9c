"""Explicit finite-difference solvers for the backward HJB and forward Fokker-Planck equations.

The two schemes are discrete adjoints of each other: the Fokker-Planck step
moves mass with the same upwind stencil the HJB step uses to look up its
value, and the HJB step is the dynamic-programming recursion of the
resulting Markov chain. As a consequence the discrete best response is the
exact minimizer of the discrete linearized criterion, which keeps the
exploitability non-negative up to rounding.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from . import _kernels
from .grid import GridSpec, backward_diff, forward_diff, neighbor_tables
from .model import ProblemSpec, apply_A_star, split

log = logging.getLogger(__name__)

NEGATIVE_MASS_TOL = 1e-12


@dataclass(frozen=True)
class CflReport:
    dt: float
    dt_max_diffusion: float
    dt_max_advection: float
    satisfied: bool

    @property
    def dt_max(self) -> float:
        return 1.0 / (1.0 / self.dt_max_diffusion + 1.0 / self.dt_max_advection)


class CflError(RuntimeError):
    def __init__(self, report: CflReport, where: str = ""):
        self.report = report
        super().__init__(
            f"CFL violated{' in ' + where if where else ''}: dt={report.dt:.3e} > "
            f"dt_max={report.dt_max:.3e} (diffusion {report.dt_max_diffusion:.3e}, "
            f"advection {report.dt_max_advection:.3e})"
        )


class SolverError(RuntimeError):
    """Non-finite values or negative mass produced by a solve."""


def cfl_report(grid: GridSpec, nu: float, vmax: float) -> CflReport:
    """Stability of one explicit step: ``1/dt >= 2 d nu / dx^2 + vmax / dx``.

    ``vmax`` bounds ``sum_a |v_a|`` over the grid (total outflow speed of a cell).
    """
    dt_diff = grid.dx**2 / (2 * grid.d * nu)
    dt_adv = grid.dx / vmax if vmax > 0 else math.inf
    rate = 1.0 / dt_diff + (vmax / grid.dx)
    return CflReport(grid.dt, dt_diff, dt_adv, grid.dt * rate <= 1.0 + 1e-12)


def stable_nt(grid: GridSpec, nu: float, vmax: float) -> int:
    """Smallest number of time steps for which the explicit schemes are stable."""
    rate = 2 * grid.d * nu / grid.dx**2 + vmax / grid.dx
    return max(2, math.ceil(grid.T * rate * (1 - 1e-12)))


def outflow_speed(v: np.ndarray) -> np.ndarray:
    """``sum_a (v+_a - v-_a)`` for a sign-split control slice ``(2, d) + space``."""
    return np.sum(v[0] - v[1], axis=0)


def _flat(a: np.ndarray, grid: GridSpec) -> np.ndarray:
    return np.ascontiguousarray(a, dtype=float).reshape(a.shape[: a.ndim - grid.d] + (-1,))


def _hjb_sweep(spec: ProblemSpec, grid: GridSpec, gamma: np.ndarray, P: np.ndarray):
    spec.check_grid(grid)
    shift_field = apply_A_star(spec, grid, np.asarray(P, dtype=float))
    fwd, bwd = neighbor_tables(grid)
    u, v, step, kind, value = _kernels.hjb_sweep(
        _flat(spec.terminal_cost(grid), grid), _flat(gamma, grid), _flat(shift_field, grid),
        fwd, bwd, grid.dt, grid.dx, spec.nu, spec.lagrangian.weight)
    if kind == _kernels.CFL:
        raise CflError(cfl_report(grid, spec.nu, value), f"HJB step {step}")
    if kind == _kernels.NON_FINITE:
        raise SolverError(f"non-finite value function at step {step}")
    return u.reshape(grid.field_shape), v.reshape((grid.nt, 2, grid.d) + grid.space_shape)


def solve_hjb(spec: ProblemSpec, grid: GridSpec, gamma: np.ndarray, P: np.ndarray) -> np.ndarray:
    """Backward explicit Euler for ``-du/dt - nu Lap u + H(Du + A*P) = gamma``, ``u(T) = g``.

    ``gamma`` has shape ``(nt + 1,) + space`` (the last node is unused) and
    ``P`` shape ``(nt, k)``. Step ``n`` uses the couplings of interval ``n``.
    """
    return _hjb_sweep(spec, grid, gamma, P)[0]


def feedback(spec: ProblemSpec, grid: GridSpec, u: np.ndarray, P: np.ndarray) -> np.ndarray:
    """Sign-split optimal control ``v = -H_p(Du + A*P)`` on each interval."""
    shift_field = apply_A_star(spec, grid, P)
    out = np.empty((grid.nt, 2, grid.d) + grid.space_shape)
    for n in range(grid.nt):
        p_fwd = forward_diff(u[n + 1], grid) + shift_field[n]
        p_bwd = backward_diff(u[n + 1], grid) + shift_field[n]
        out[n] = spec.lagrangian.upwind_control(p_fwd, p_bwd)
    return out


def solve_fp(spec: ProblemSpec, grid: GridSpec, v: np.ndarray, m0: np.ndarray | None = None) -> np.ndarray:
    """Forward explicit Euler for ``dm/dt - nu Lap m + div(v m) = 0`` in flux form.

    ``v`` is either sign-split ``(nt, 2, d) + space`` or physical
    ``(nt, d) + space`` (split by sign before use). Mass is conserved to
    rounding and stays non-negative under the CFL condition.
    """
    spec.check_grid(grid)
    if v.ndim == grid.d + 2:
        v = split(v)
    m0 = spec.initial_density(grid) if m0 is None else m0
    fwd, bwd = neighbor_tables(grid)
    m, step, kind, value = _kernels.fp_sweep(
        _flat(m0, grid), _flat(v, grid), fwd, bwd, grid.dt, grid.dx, spec.nu, NEGATIVE_MASS_TOL)
    if kind == _kernels.CFL:
        raise CflError(cfl_report(grid, spec.nu, value), f"Fokker-Planck step {step}")
    if kind == _kernels.NON_FINITE:
        raise SolverError(f"non-finite density at step {step}")
    if kind == _kernels.NEGATIVE:
        raise SolverError(f"negative density {value:.3e} at step {step}")
    return m.reshape(grid.field_shape)


class BestResponse(NamedTuple):
    u: np.ndarray
    v: np.ndarray
    m: np.ndarray
    w: np.ndarray


def best_response(spec: ProblemSpec, grid: GridSpec, gamma: np.ndarray, P: np.ndarray) -> BestResponse:
    """Minimizer of the linearized criterion for fixed couplings ``(gamma, P)``."""
    u, v = _hjb_sweep(spec, grid, gamma, P)
    m = solve_fp(spec, grid, v)
    w = m[: grid.nt, None, None] * v
    return BestResponse(u, v, m, w)


def heat_flow_pair(spec: ProblemSpec, grid: GridSpec) -> tuple[np.ndarray, np.ndarray]:
    """Uncontrolled feasible pair ``(M[0], 0)``."""
    v = np.zeros((grid.nt, 2, grid.d) + grid.space_shape)
    return solve_fp(spec, grid, v), v.copy()
