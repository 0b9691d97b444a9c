"""Compare adaptive stepsizes with fictitious play on the price-interaction benchmark.

Agents on the 2-torus start near (0.25, 0.25), pay cos(2 pi x1) + cos(2 pi x2)
at the final time and trade at a price proportional to the aggregate momentum.
Run with ``python demos/price_benchmark.py``; it takes about a minute.
"""
import numpy as np

from mfg_gcg import GridSpec, default_problem
from mfg_gcg.experiment import run_with_cfl, semilog_rate, threshold_hits
from mfg_gcg.gcg import QAG, ExploitabilityBased, OptimalGoldenSection, POverKPlusP


def main():
    spec = default_problem()
    grid = GridSpec(2, 10, nt=42)
    rules = [OptimalGoldenSection(1e-3), QAG(), ExploitabilityBased(), POverKPlusP(1.0)]
    print(f"{'rule':<16}{'nt':>7}{'k(1e-3)':>9}{'k(1e-4)':>9}{'final sigma':>13}{'rate/iter':>11}")
    for rule in rules:
        # fictitious play needs a much finer time step early on, cap its budget
        iters = 60 if isinstance(rule, POverKPlusP) else 250
        outcome = run_with_cfl(spec, grid, rule, max_iters=iters, sigma_tol=1e-6)
        states = outcome.result.states
        sigma = outcome.result.sigmas
        slope, _ = semilog_rate(np.arange(len(sigma)), sigma)
        k3, k4 = threshold_hits(states, 1e-3)[0], threshold_hits(states, 1e-4)[0]
        print(f"{rule.name:<16}{outcome.grid.nt:>7}{str(k3):>9}{str(k4):>9}"
              f"{sigma[-1]:>13.2e}{slope:>11.3f}")


if __name__ == "__main__":
    main()
