"""Generalized conditional gradient (fictitious play) loop and its stepsize rules."""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np

from .grid import GridSpec, integrate_space, integrate_time
from .model import (
    ProblemSpec,
    apply_A,
    coupling_gamma,
    coupling_price,
    cost_J,
    cost_Z,
    momentum,
)
from .pde import best_response, heat_flow_pair

log = logging.getLogger(__name__)

GOLDEN = (math.sqrt(5.0) + 1.0) / 2.0
SIGMA_CLAMP = 1e-10


# ---------------------------------------------------------------------------
# stepsize rules


@dataclass(frozen=True)
class POverKPlusP:
    """Prescribed ``delta_k = p / (k + p)``; ``p = 1`` is fictitious play."""

    p: float = 1.0

    def __post_init__(self):
        if not self.p > 0:
            raise ValueError("p must be positive")

    name = "p_over_k_plus_p"

    @property
    def params(self) -> str:
        return f"p={self.p:g}"


@dataclass(frozen=True)
class PowerAlpha:
    """Prescribed ``delta_k = (k + 1)^(-alpha)``."""

    alpha: float = 0.6

    def __post_init__(self):
        if not 0 < self.alpha <= 1:
            raise ValueError("alpha must lie in (0, 1]")

    name = "power_alpha"

    @property
    def params(self) -> str:
        return f"alpha={self.alpha:g}"


@dataclass(frozen=True)
class QAG:
    """Backtracking ``delta = tau^i`` until ``J(delta) <= J_k - c delta sigma_k``."""

    c: float = 0.25
    tau: float = 0.9
    max_trials: int = 200

    def __post_init__(self):
        if not (0 < self.c < 1 and 0 < self.tau < 1):
            raise ValueError("c and tau must lie in (0, 1)")

    name = "qag"

    @property
    def params(self) -> str:
        return f"c={self.c:g};tau={self.tau:g}"


@dataclass(frozen=True)
class OptimalGoldenSection:
    """Approximately optimal stepsize: golden-section search, compared against QAG."""

    kappa: float = 1e-3
    qag: QAG = QAG()

    def __post_init__(self):
        if not 0 < self.kappa < 1:
            raise ValueError("kappa must lie in (0, 1)")

    name = "golden_section"

    @property
    def params(self) -> str:
        return f"kappa={self.kappa:g}"


@dataclass(frozen=True)
class ExploitabilityBased:
    """``delta = min(1, sigma / (2 (C1 D1 + C2 D2)))``; constants default to the problem's."""

    C1: float | None = None
    C2: float | None = None

    name = "exploitability"

    @property
    def params(self) -> str:
        fmt = lambda c: "auto" if c is None else f"{c:g}"  # noqa: E731
        return f"C1={fmt(self.C1)};C2={fmt(self.C2)}"


StepsizeRule = POverKPlusP | PowerAlpha | QAG | OptimalGoldenSection | ExploitabilityBased
ADAPTIVE_RULES = (QAG, OptimalGoldenSection, ExploitabilityBased)


def stepsize_prescribed(k: int, rule: POverKPlusP | PowerAlpha) -> float:
    if isinstance(rule, POverKPlusP):
        return rule.p / (k + rule.p)
    if isinstance(rule, PowerAlpha):
        return (k + 1.0) ** (-rule.alpha)
    raise TypeError(f"{rule!r} is not a prescribed rule")


class StepSearch(NamedTuple):
    delta: float
    cost: float
    trials: int


def stepsize_qag(cost_at: Callable[[float], float], cost0: float, sigma: float,
                 c: float = 0.25, tau: float = 0.9, max_trials: int = 200) -> StepSearch:
    """First ``tau^j`` (``j = 0, 1, ...``) meeting the sufficient-decrease test.

    ``trials`` is the accepted exponent ``i_k``; ``i_k + 1`` cost evaluations
    were made.
    """
    for j in range(max_trials + 1):
        delta = tau**j
        value = cost_at(delta)
        if value <= cost0 - c * delta * sigma:
            return StepSearch(delta, value, j)
    raise RuntimeError(
        f"QAG condition not met after {max_trials} trials (sigma={sigma:.3e}); "
        "the exploitability is probably mis-estimated"
    )


def golden_section(cost_at: Callable[[float], float], kappa: float) -> StepSearch:
    """Four-point golden-section search for the minimizer of ``cost_at`` on [0, 1].

    Each round keeps the argmin over ``{a, b, c, d}`` and shrinks the bracket
    around it until ``d - a <= kappa``. ``trials`` counts distinct evaluations.
    """
    cache: dict[float, float] = {}

    def value(x: float) -> float:
        if x not in cache:
            cache[x] = cost_at(x)
        return cache[x]

    a, d = 0.0, 1.0
    best = a
    while d - a > kappa:
        b, c = d - (d - a) / GOLDEN, a + (d - a) / GOLDEN
        points = (a, b, c, d)
        best = min(points, key=value)
        if best == a:
            d = b
        elif best == b:
            d = c
        elif best == c:
            a = b
        else:
            a = c
    return StepSearch(best, value(best), len(cache))


def stepsize_exploitability(sigma: float, d1: float, d2: float, C1: float, C2: float) -> float:
    if sigma <= 0:
        return 0.0
    denom = 2.0 * (C1 * d1 + C2 * d2)
    if denom <= 0:
        return 1.0
    return min(1.0, sigma / denom)


def stepsize_golden_section(cost_at: Callable[[float], float], cost0: float, sigma: float,
                            rule: OptimalGoldenSection) -> StepSearch:
    """Golden-section step, replaced by the QAG step when the latter is cheaper.

    Returns the total number of cost evaluations in ``trials``.
    """
    gs = golden_section(cost_at, rule.kappa)
    qag = stepsize_qag(cost_at, cost0, sigma, rule.qag.c, rule.qag.tau, rule.qag.max_trials)
    evals = gs.trials + qag.trials + 1
    if qag.cost < gs.cost:
        return StepSearch(qag.delta, qag.cost, evals)
    return StepSearch(gs.delta, gs.cost, evals)


# ---------------------------------------------------------------------------
# metrics


def exploitability(spec: ProblemSpec, grid: GridSpec, mbar, wbar, gamma, P, m, w) -> float:
    """``Z[gamma, P](mbar, wbar) - Z[gamma, P](m, w)``, clamped at zero within roundoff."""
    z_bar = cost_Z(spec, grid, gamma, P, mbar, wbar)
    z_best = cost_Z(spec, grid, gamma, P, m, w)
    sigma = z_bar - z_best
    scale = 1.0 + abs(z_bar)
    if sigma < -SIGMA_CLAMP * scale:
        log.warning("negative exploitability %.3e (best response not optimal?)", sigma)
    elif sigma < 0:
        sigma = 0.0
    return sigma


def d_terms(spec: ProblemSpec, grid: GridSpec, mbar, wbar, m, w) -> tuple[float, float]:
    """Distances ``D1 = int ||dm||_2 ||dm||_1 dt`` and ``D2 = int |A[dw]|^2 dt``."""
    dm = (m - mbar)[: grid.nt]
    l2 = np.sqrt(integrate_space(dm**2, grid))
    l1 = integrate_space(np.abs(dm), grid)
    d1 = integrate_time(l2 * l1, grid)
    agg = apply_A(spec, grid, momentum(w - wbar))
    d2 = integrate_time(np.sum(agg**2, axis=-1), grid)
    return float(d1), float(d2)


def convex_combine(mbar, wbar, m, w, delta: float):
    if not 0.0 <= delta <= 1.0:
        raise ValueError(f"stepsize {delta} outside [0, 1]")
    return (1.0 - delta) * mbar + delta * m, (1.0 - delta) * wbar + delta * w


def estimate_gap(states, J_ref: float) -> np.ndarray:
    """``J(mbar_k, wbar_k) - J_ref`` for each recorded iterate."""
    return np.array([s.J for s in states]) - J_ref


# ---------------------------------------------------------------------------
# main loop


class Fields(NamedTuple):
    mbar: np.ndarray
    wbar: np.ndarray
    gamma: np.ndarray
    P: np.ndarray
    u: np.ndarray
    v: np.ndarray
    m: np.ndarray
    w: np.ndarray


@dataclass
class IterateState:
    k: int
    sigma: float
    delta: float | None
    J: float
    J1: float
    J2: float
    d1: float
    d2: float
    qag_trials: int | None = None
    wall_ms: float = 0.0
    eps_hat: float | None = None
    fields: Fields | None = field(default=None, repr=False)


@dataclass
class GCGResult:
    states: list[IterateState]
    converged: bool
    grid: GridSpec

    @property
    def final(self) -> IterateState:
        return self.states[-1]

    @property
    def sigmas(self) -> np.ndarray:
        return np.array([s.sigma for s in self.states])

    @property
    def costs(self) -> np.ndarray:
        return np.array([s.J for s in self.states])

    @property
    def deltas(self) -> np.ndarray:
        return np.array([np.nan if s.delta is None else s.delta for s in self.states])


def _lipschitz_constants(spec: ProblemSpec, grid: GridSpec, rule: ExploitabilityBased):
    C1 = spec.congestion.lipschitz(grid) if rule.C1 is None else rule.C1
    C2 = spec.price.lipschitz if rule.C2 is None else rule.C2
    return C1, C2


def gcg_run(spec: ProblemSpec, grid: GridSpec, rule, max_iters: int = 250,
            sigma_tol: float = 1e-4, initial=None, J_ref: float | None = None,
            keep_fields: bool = False, timing: bool = True,
            callback: Callable[[IterateState], None] | None = None) -> GCGResult:
    """Run the generalized conditional gradient from ``initial`` (default: heat flow of m0).

    One :class:`IterateState` is emitted per visited ``k`` (``k = 0..K`` with
    ``K <= max_iters``); the loop stops once ``sigma_k <= sigma_tol``. The last
    state always carries the fields of its iterate and best response.
    """
    spec.check_grid(grid)
    mbar, wbar = heat_flow_pair(spec, grid) if initial is None else initial
    clock = time.perf_counter()
    states: list[IterateState] = []
    converged = False
    monotone_rule = isinstance(rule, (QAG, OptimalGoldenSection))

    for k in range(max_iters + 1):
        if states and not keep_fields:
            # release the previous best response before allocating the next one
            states[-1].fields = None
            br = fields = None
        gamma = coupling_gamma(spec, grid, mbar)
        P = coupling_price(spec, grid, wbar)
        br = best_response(spec, grid, gamma, P)
        sigma = exploitability(spec, grid, mbar, wbar, gamma, P, br.m, br.w)
        J, J1, J2 = cost_J(spec, grid, mbar, wbar)
        d1, d2 = d_terms(spec, grid, mbar, wbar, br.m, br.w)
        fields = Fields(mbar, wbar, gamma, P, br.u, br.v, br.m, br.w)
        state = IterateState(k, sigma, None, J, J1, J2, d1, d2,
                             eps_hat=None if J_ref is None else J - J_ref,
                             fields=fields)

        if sigma <= sigma_tol:
            converged = True
        elif k < max_iters:
            def cost_at(delta, mbar=mbar, wbar=wbar, br=br):
                return cost_J(spec, grid, *convex_combine(mbar, wbar, br.m, br.w, delta))[0]

            if isinstance(rule, (POverKPlusP, PowerAlpha)):
                delta = stepsize_prescribed(k, rule)
            elif isinstance(rule, QAG):
                search = stepsize_qag(cost_at, J, sigma, rule.c, rule.tau, rule.max_trials)
                delta, state.qag_trials = search.delta, search.trials
            elif isinstance(rule, OptimalGoldenSection):
                search = stepsize_golden_section(cost_at, J, sigma, rule)
                delta = search.delta
            elif isinstance(rule, ExploitabilityBased):
                delta = stepsize_exploitability(sigma, d1, d2, *_lipschitz_constants(spec, grid, rule))
            else:
                raise TypeError(f"unknown stepsize rule {rule!r}")
            state.delta = delta
            mbar, wbar = convex_combine(mbar, wbar, br.m, br.w, delta)

        state.wall_ms = (time.perf_counter() - clock) * 1e3 if timing else 0.0
        if states and monotone_rule and J > states[-1].J + 1e-10 * (1 + abs(J)):
            log.warning("cost increased at k=%d under a descent rule: %.3e", k, J - states[-1].J)
        states.append(state)
        if callback is not None:
            callback(state)
        if state.delta is None:
            break

    return GCGResult(states, converged, grid)


# ---------------------------------------------------------------------------
# equilibrium diagnostics


def mfg_residuals(spec: ProblemSpec, grid: GridSpec, fields: Fields, sup_norm: bool = False) -> dict[str, float]:
    """Residuals of the five equilibrium relations at ``(mbar, wbar)``.

    The value function and feedback are those of the best response to the
    couplings of ``(mbar, wbar)``; the density and momentum are the iterate.
    HJB, Fokker-Planck and congestion residuals are sup norms. The feedback
    residual ``w = m v`` is measured in the kinetic-energy norm
    ``sqrt(weight int |w - m v|^2 / m)``, which the discrete dynamic
    programming identity bounds by ``sqrt(2 sigma)``; the price residual is
    the ``L2(0, T)`` norm. ``sup_norm=True`` reports sup norms for these two
    instead (not controlled by ``sigma`` in cells with little mass).
    """
    from .grid import backward_diff, divergence_flux, forward_diff, laplacian, split_faces
    from .model import apply_A_star

    mbar, wbar, gamma, P, u, v = fields[:6]
    dt, nu = grid.dt, spec.nu
    shift_field = apply_A_star(spec, grid, P)
    hjb = fp = 0.0
    for n in range(grid.nt):
        p_fwd = forward_diff(u[n + 1], grid) + shift_field[n]
        p_bwd = backward_diff(u[n + 1], grid) + shift_field[n]
        h = spec.lagrangian.numerical_hamiltonian(p_fwd, p_bwd)
        r = (u[n + 1] - u[n]) / dt + nu * laplacian(u[n + 1], grid) - h + gamma[n]
        hjb = max(hjb, float(np.max(np.abs(r))))
        r = (mbar[n + 1] - mbar[n]) / dt - nu * laplacian(mbar[n], grid) + divergence_flux(
            split_faces(wbar[n], grid), grid)
        fp = max(fp, float(np.max(np.abs(r))))
    hjb = max(hjb, float(np.max(np.abs(u[grid.nt] - spec.terminal_cost(grid)))))
    fp = max(fp, float(np.max(np.abs(mbar[0] - spec.initial_density(grid)))))
    gamma_res = float(np.max(np.abs(gamma - coupling_gamma(spec, grid, mbar))))

    m = mbar[: grid.nt, None, None]
    diff = wbar - m * v
    price_diff = P - coupling_price(spec, grid, m * v)
    if sup_norm:
        feedback = float(np.max(np.abs(momentum(diff))))
        price = float(np.max(np.abs(price_diff)))
    else:
        occupied = m > 0
        energy = np.where(occupied, diff**2 / np.where(occupied, m, 1.0), 0.0)
        feedback = math.sqrt(spec.lagrangian.weight * float(np.sum(energy)) * grid.cell_volume * dt)
        price = math.sqrt(float(np.sum(price_diff**2)) * dt)
    return {"hjb": hjb, "feedback": feedback, "fokker_planck": fp, "congestion": gamma_res, "price": price}
