import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mfg_gcg.gcg import (
    GOLDEN,
    QAG,
    ExploitabilityBased,
    OptimalGoldenSection,
    POverKPlusP,
    PowerAlpha,
    convex_combine,
    d_terms,
    estimate_gap,
    exploitability,
    gcg_run,
    golden_section,
    mfg_residuals,
    stepsize_exploitability,
    stepsize_golden_section,
    stepsize_prescribed,
    stepsize_qag,
)
from mfg_gcg.experiment import reference_cost, run_with_cfl
from mfg_gcg.grid import GridSpec, integrate_space
from mfg_gcg.model import (
    KernelCongestion,
    coupling_gamma,
    coupling_price,
    cost_J,
    cost_Z,
    default_problem,
)
from mfg_gcg.pde import best_response

from .helpers import random_feasible_pair

GRID = GridSpec(2, 6, nt=150)


@pytest.fixture(scope="module")
def spec():
    return default_problem()


@pytest.fixture(scope="module")
def kernel_spec():
    return default_problem(congestion=KernelCongestion((0.5, 1.0, 0.5)))


# --- stepsize rules -------------------------------------------------------


def test_prescribed_examples():
    assert stepsize_prescribed(0, POverKPlusP(1)) == 1.0
    assert stepsize_prescribed(2, POverKPlusP(2)) == 0.5
    assert stepsize_prescribed(0, PowerAlpha(0.6)) == 1.0
    assert stepsize_prescribed(3, PowerAlpha(0.5)) == pytest.approx(0.5)


def test_rule_parameter_validation():
    for make in (lambda: POverKPlusP(0), lambda: PowerAlpha(0), lambda: PowerAlpha(1.5),
                 lambda: QAG(c=1.0), lambda: QAG(tau=0.0), lambda: OptimalGoldenSection(kappa=1.0)):
        with pytest.raises(ValueError):
            make()


def test_golden_section_recovers_interior_minimum():
    for kappa in (1e-3, 1e-6):
        search = golden_section(lambda x: (x - 0.3) ** 2, kappa)
        assert abs(search.delta - 0.3) <= kappa
        assert search.trials <= 4 * math.ceil(math.log(kappa) / math.log(1 / GOLDEN))


def test_golden_section_boundary_minimum():
    search = golden_section(lambda x: -x, 1e-3)
    assert 1 - search.delta <= 1e-3


@settings(max_examples=100, deadline=None)
@given(st.floats(0.01, 0.99), st.floats(1e-3, 0.1))
def test_golden_section_on_unimodal_quadratics(x0, kappa):
    assert abs(golden_section(lambda x: (x - x0) ** 2, kappa).delta - x0) <= kappa


def test_qag_full_step_on_linear_cost():
    search = stepsize_qag(lambda d: 1.0 - 2.0 * d, 1.0, 2.0)
    assert search.delta == 1.0 and search.trials == 0


@settings(max_examples=200, deadline=None)
@given(st.floats(1e-3, 10), st.floats(1e-3, 1e3))
def test_qag_matches_scalar_oracle(sigma, M):
    c, tau = 0.25, 0.9
    J0 = 0.7

    def surrogate(d):
        return J0 - sigma * d + M * d * d

    expected = next(j for j in range(51) if sigma * (1 - c) * tau**j >= M * tau ** (2 * j)) \
        if any(sigma * (1 - c) * tau**j >= M * tau ** (2 * j) for j in range(51)) else None
    if expected is None:
        with pytest.raises(RuntimeError):
            stepsize_qag(surrogate, J0, sigma, c, tau, max_trials=50)
        return
    search = stepsize_qag(surrogate, J0, sigma, c, tau, max_trials=50)
    # ties at the acceptance boundary may differ by rounding only
    assert abs(search.trials - expected) <= 1
    if search.trials != expected:
        j = min(search.trials, expected)
        assert math.isclose(sigma * (1 - c) * tau**j, M * tau ** (2 * j), rel_tol=1e-9)
    assert search.delta == tau**search.trials


def test_exploitability_stepsize_examples():
    assert stepsize_exploitability(1.0, 0.0, 0.25, 0.0, 10.0) == pytest.approx(0.2)
    assert stepsize_exploitability(5.0, 0.1, 0.1, 1.0, 10.0) == 1.0
    assert stepsize_exploitability(0.0, 0.1, 0.1, 1.0, 10.0) == 0.0
    assert stepsize_exploitability(1.0, 0.0, 0.0, 0.0, 10.0) == 1.0
    # with f = 0 the congestion term has no influence
    assert stepsize_exploitability(1.0, 123.0, 0.25, 0.0, 10.0) == pytest.approx(0.2)


def test_golden_section_rule_keeps_cheaper_of_gs_and_qag():
    cost = lambda d: (d - 0.3) ** 2  # noqa: E731
    search = stepsize_golden_section(cost, cost(0.0), 0.6, OptimalGoldenSection(1e-3))
    assert abs(search.delta - 0.3) <= 1e-3
    # a coarse bracket loses to the QAG step when the latter lands nearer the minimum
    cost = lambda d: (d - 0.9) ** 2  # noqa: E731
    search = stepsize_golden_section(cost, cost(0.0), 3.3, OptimalGoldenSection(0.5))
    assert search.delta == pytest.approx(0.9)


# --- metrics --------------------------------------------------------------


def test_exploitability_of_own_best_response_is_zero(spec):
    rng = np.random.default_rng(0)
    m, w = random_feasible_pair(spec, GRID, rng)
    gamma = coupling_gamma(spec, GRID, m)
    P = coupling_price(spec, GRID, w)
    assert exploitability(spec, GRID, m, w, gamma, P, m, w) == 0.0


def test_decoupled_game_stops_at_first_iterate():
    spec = default_problem(price_gain=0.0)
    zero = (np.zeros(GRID.field_shape), np.zeros((GRID.nt, 2)))
    br = best_response(spec, GRID, *zero)
    result = gcg_run(spec, GRID, ExploitabilityBased(), sigma_tol=1e-12, initial=(br.m, br.w))
    assert len(result.states) == 1 and result.converged
    assert result.final.sigma <= 1e-12


def test_d_terms_examples(spec):
    rng = np.random.default_rng(1)
    m, w = random_feasible_pair(spec, GRID, rng)
    assert d_terms(spec, GRID, m, w, m, w) == (0.0, 0.0)
    eps = 0.3
    d1, _ = d_terms(spec, GRID, m, w, m + eps, w)
    assert d1 == pytest.approx(eps**2, rel=1e-12)
    c = 0.7
    shifted = w.copy()
    shifted[:, 0, 0] += c
    _, d2 = d_terms(spec, GRID, m, w, m, shifted)
    assert d2 == pytest.approx(c**2, rel=1e-12)


def test_convex_combine_examples(spec):
    rng = np.random.default_rng(2)
    m1, w1 = random_feasible_pair(spec, GRID, rng)
    m2, w2 = random_feasible_pair(spec, GRID, rng)
    assert all(np.array_equal(a, b) for a, b in zip(convex_combine(m1, w1, m2, w2, 0.0), (m1, w1)))
    assert all(np.array_equal(a, b) for a, b in zip(convex_combine(m1, w1, m2, w2, 1.0), (m2, w2)))
    mh, _ = convex_combine(m1, w1, m2, w2, 0.5)
    assert np.abs(integrate_space(mh, GRID) - 1).max() <= 1e-12
    with pytest.raises(ValueError):
        convex_combine(m1, w1, m2, w2, 1.5)


def test_linearized_criterion_minus_J1_is_affine_along_steps(kernel_spec):
    rng = np.random.default_rng(3)
    m1, w1 = random_feasible_pair(kernel_spec, GRID, rng)
    m2, w2 = random_feasible_pair(kernel_spec, GRID, rng)
    gamma = rng.normal(size=GRID.field_shape)
    P = rng.normal(size=(GRID.nt, 2))
    from mfg_gcg.model import linear_terms

    deltas = np.linspace(0, 1, 5)
    values = [linear_terms(kernel_spec, GRID, gamma, P, *convex_combine(m1, w1, m2, w2, d)) for d in deltas]
    slope, intercept = np.polyfit(deltas, values, 1)
    assert np.allclose(values, slope * deltas + intercept, rtol=1e-10, atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_convexity_lower_bound_on_random_pairs(seed):
    spec = default_problem(congestion=KernelCongestion((0.5, 1.0, 0.5)))
    rng = np.random.default_rng(seed)
    m1, w1 = random_feasible_pair(spec, GRID, rng, speed=rng.uniform(0.1, 2))
    m2, w2 = random_feasible_pair(spec, GRID, rng, speed=rng.uniform(0.1, 2))
    from mfg_gcg.model import cost_J2, linear_terms

    gamma = coupling_gamma(spec, GRID, m1)
    P = coupling_price(spec, GRID, w1)
    gap = cost_J2(spec, GRID, m2, w2) - cost_J2(spec, GRID, m1, w1)
    lin = linear_terms(spec, GRID, gamma, P, m2 - m1, w2 - w1)
    assert lin <= gap + 1e-9 * (1 + abs(gap))


# --- full runs ------------------------------------------------------------


@pytest.fixture(scope="module")
def runs(spec, kernel_spec):
    out = {}
    for label, problem in (("price", spec), ("kernel", kernel_spec)):
        for rule in (QAG(), OptimalGoldenSection(1e-3), ExploitabilityBased(), POverKPlusP(1.0)):
            out[label, rule.name] = run_with_cfl(problem, GRID, rule, max_iters=80, sigma_tol=1e-7,
                                                 keep_fields=True).result
    return out


def test_iterates_are_feasible_and_metrics_sane(runs):
    for result in runs.values():
        grid = result.grid
        vmax = max(np.abs(s.fields.v).sum(axis=(1, 2)).max() for s in result.states)
        for s in result.states:
            assert s.sigma >= 0 and math.isfinite(s.J)
            assert s.delta is None or 0 <= s.delta <= 1
            m, w = s.fields.mbar, s.fields.wbar
            assert np.abs(integrate_space(m, grid) - 1).max() <= 1e-10
            assert m.min() >= -1e-10
            # momentum only lives where there is mass: |w| <= m max|v|
            speed = np.abs(w).sum(axis=(1, 2))
            assert np.all(speed <= np.maximum(m[: grid.nt], 0) * vmax * (1 + 1e-9) + 1e-14)


def test_descent_rules_decrease_cost(runs):
    for (label, name), result in runs.items():
        if name not in ("qag", "golden_section"):
            continue
        J = result.costs
        assert np.all(np.diff(J) <= 1e-10 * (1 + np.abs(J[1:])))
        if name == "qag":
            for s, nxt in zip(result.states, result.states[1:]):
                assert nxt.J <= s.J - 0.25 * s.delta * s.sigma + 1e-10 * (1 + abs(s.J))


def test_surrogate_descent_inequality_along_accepted_steps(runs, spec, kernel_spec):
    for (label, _), result in runs.items():
        problem = spec if label == "price" else kernel_spec
        C1, C2 = problem.C1(result.grid), problem.C2
        for s, nxt in zip(result.states, result.states[1:]):
            bound = s.J - s.delta * s.sigma + (C1 * s.d1 + C2 * s.d2) * s.delta**2
            assert nxt.J <= bound + 1e-8 * (1 + abs(s.J))


def test_kernel_congestion_exercises_c1_branch(runs, kernel_spec):
    result = runs["kernel", "exploitability"]
    assert kernel_spec.C1(GRID) > 0
    assert result.final.sigma <= 1e-5 * result.states[0].sigma


def test_adaptive_rules_converge_and_qag_trials_stay_bounded(runs):
    for key in (("price", "golden_section"), ("price", "exploitability"), ("kernel", "golden_section")):
        assert runs[key].converged, key
    for label in ("price", "kernel"):
        sigmas = runs[label, "qag"].sigmas
        assert sigmas[-1] <= 1e-2 * sigmas[0]
    trials = [s.qag_trials for s in runs["price", "qag"].states if s.qag_trials is not None]
    assert max(trials[5:]) <= max(trials[:5]) + 20


def test_gap_estimate_is_below_exploitability(runs, spec, kernel_spec):
    for (label, _), result in runs.items():
        problem = spec if label == "price" else kernel_spec
        J_ref = reference_cost(problem, result.grid)
        gaps = estimate_gap(result.states, J_ref)
        assert np.all(gaps <= result.sigmas + 1e-8 * (1 + abs(J_ref)))
    ref = runs["price", "golden_section"]
    final_gap = estimate_gap(ref.states, ref.costs.min())[-1]
    assert -1e-10 <= final_gap <= ref.final.sigma


def test_fixed_point_and_equilibrium_residuals(runs, spec):
    result = runs["price", "golden_section"]
    f = result.final.fields
    grid = result.grid
    br = best_response(spec, grid, f.gamma, f.P)
    sigma = exploitability(spec, grid, f.mbar, f.wbar, f.gamma, f.P, br.m, br.w)
    assert sigma <= 1e-7
    res = mfg_residuals(spec, grid, f)
    assert res["hjb"] <= 1e-9 and res["congestion"] == 0
    assert max(res.values()) <= 10 * math.sqrt(1e-7) * 10


def test_unknown_rule_rejected(spec):
    with pytest.raises(TypeError):
        gcg_run(spec, GRID, object(), max_iters=1)


def test_cost_increase_warning_is_not_emitted_for_descent(spec):
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        gcg_run(spec, GRID.with_nt(600), QAG(), max_iters=3, sigma_tol=0)


def test_z_at_best_response_not_above_candidate(spec):
    rng = np.random.default_rng(9)
    m, w = random_feasible_pair(spec, GRID, rng)
    gamma = coupling_gamma(spec, GRID, m)
    P = coupling_price(spec, GRID, w)
    br = best_response(spec, GRID, gamma, P)
    assert cost_Z(spec, GRID, gamma, P, br.m, br.w) <= cost_Z(spec, GRID, gamma, P, m, w)
    assert cost_J(spec, GRID, m, w)[0] >= cost_J(spec, GRID, br.m, br.w)[0] - 1e3  # both finite


def test_feedback_residual_is_bounded_by_exploitability(runs, spec, kernel_spec):
    # sigma is a Bregman sum over the iterate, so the energy-norm residual of w = m v is <= sqrt(2 sigma)
    for (label, name), result in runs.items():
        problem = spec if label == "price" else kernel_spec
        for s in result.states[::5]:
            res = mfg_residuals(problem, result.grid, s.fields)
            assert res["feedback"] <= math.sqrt(2 * s.sigma) * (1 + 1e-9) + 1e-12, (label, name, s.k)
