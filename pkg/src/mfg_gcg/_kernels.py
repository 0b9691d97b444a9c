"""Compiled explicit time-stepping loops on flattened periodic grids.

Spatial fields are flattened in C order; ``fwd[a, i]`` and ``bwd[a, i]`` index
the neighbours of cell ``i`` along axis ``a``. Both kernels stop at the first
failing step and report it through a status triple ``(step, kind, value)``.
"""
from __future__ import annotations

import math

import numpy as np
from numba import njit

OK, CFL, NON_FINITE, NEGATIVE = 0, 1, 2, 3


@njit(cache=True)
def hjb_sweep(u_T, gamma, shift, fwd, bwd, dt, dx, nu, weight):
    """Backward upwind sweep; returns ``(u, v, step, kind, value)``.

    ``v[n, 0]`` holds ``v+ >= 0`` and ``v[n, 1]`` holds ``v- <= 0``.
    """
    nt = shift.shape[0]
    d, n_cells = fwd.shape
    u = np.empty((nt + 1, n_cells))
    v = np.empty((nt, 2, d, n_cells))
    u[nt] = u_T
    diffusion_rate = 2.0 * d * nu / dx**2
    for n in range(nt - 1, -1, -1):
        worst = 0.0
        for i in range(n_cells):
            ui = u[n + 1, i]
            lap = 0.0
            h = 0.0
            outflow = 0.0
            for a in range(d):
                up = u[n + 1, fwd[a, i]]
                um = u[n + 1, bwd[a, i]]
                p_fwd = (up - ui) / dx + shift[n, a, i]
                p_bwd = (ui - um) / dx + shift[n, a, i]
                lo = min(p_fwd, 0.0)
                hi = max(p_bwd, 0.0)
                h += lo * lo + hi * hi
                v[n, 0, a, i] = -lo / weight
                v[n, 1, a, i] = -hi / weight
                outflow += (hi - lo) / weight
                lap += up - 2.0 * ui + um
            if outflow > worst:
                worst = outflow
            u[n, i] = ui + dt * (nu * lap / dx**2 - 0.5 * h / weight + gamma[n, i])
        if dt * (diffusion_rate + worst / dx) > 1.0 + 1e-12:
            return u, v, n, CFL, worst
        for i in range(n_cells):
            if not math.isfinite(u[n, i]):
                return u, v, n, NON_FINITE, u[n, i]
    return u, v, -1, OK, 0.0


@njit(cache=True)
def fp_sweep(m0, v, fwd, bwd, dt, dx, nu, negative_tol):
    """Forward conservative upwind sweep; returns ``(m, step, kind, value)``."""
    nt = v.shape[0]
    d, n_cells = fwd.shape
    m = np.empty((nt + 1, n_cells))
    m[0] = m0
    diffusion_rate = 2.0 * d * nu / dx**2
    for n in range(nt):
        worst = 0.0
        for i in range(n_cells):
            outflow = 0.0
            for a in range(d):
                outflow += v[n, 0, a, i] - v[n, 1, a, i]
            if not math.isfinite(outflow):
                return m, n, NON_FINITE, outflow
            if outflow > worst:
                worst = outflow
        if dt * (diffusion_rate + worst / dx) > 1.0 + 1e-12:
            return m, n, CFL, worst
        lowest = np.inf
        for i in range(n_cells):
            mi = m[n, i]
            lap = 0.0
            div = 0.0
            for a in range(d):
                j = fwd[a, i]
                k = bwd[a, i]
                right = mi * v[n, 0, a, i] + m[n, j] * v[n, 1, a, j]
                left = m[n, k] * v[n, 0, a, k] + mi * v[n, 1, a, i]
                div += right - left
                lap += m[n, j] - 2.0 * mi + m[n, k]
            value = mi + dt * (nu * lap / dx**2 - div / dx)
            m[n + 1, i] = value
            if not math.isfinite(value):
                return m, n + 1, NON_FINITE, value
            if value < lowest:
                lowest = value
        if lowest < -negative_tol:
            return m, n + 1, NEGATIVE, lowest
    return m, -1, OK, 0.0


@njit(cache=True)
def kinetic_energy(m, w, weight, w_eps):
    """Per-step sums of ``m L(w / m)`` over cells; ``-1`` flags momentum in an empty cell.

    ``m`` is ``(nt, N)`` and ``w`` the sign-split ``(nt, 2, d, N)``.
    """
    nt, _, d, n_cells = w.shape
    out = np.zeros(nt)
    for n in range(nt):
        total = 0.0
        for i in range(n_cells):
            w2 = 0.0
            for s in range(2):
                for a in range(d):
                    w2 += w[n, s, a, i] * w[n, s, a, i]
            mi = m[n, i]
            if mi <= 0.0:
                if w2 > w_eps * w_eps:
                    return out, n
            else:
                total += 0.5 * weight * w2 / mi
        out[n] = total
    return out, -1
