"""Solve to a tight tolerance and show where the population ends up.

Prints the circular mean of the equilibrium density at a few times together
with the sup-norm residuals of the equilibrium system.
"""
import numpy as np

from mfg_gcg import GridSpec, default_problem
from mfg_gcg.experiment import run_with_cfl
from mfg_gcg.gcg import OptimalGoldenSection, mfg_residuals


def circular_mean(m, grid):
    x = grid.coords()
    angles = np.angle(np.sum(m * np.exp(2j * np.pi * x), axis=tuple(range(1, grid.d + 1))))
    return (angles / (2 * np.pi)) % 1.0


def main():
    spec = default_problem()
    outcome = run_with_cfl(spec, GridSpec(2, 10, nt=42), OptimalGoldenSection(1e-3),
                           max_iters=500, sigma_tol=1e-9)
    grid, final = outcome.grid, outcome.result.final
    print(f"converged={outcome.result.converged} after {final.k} iterations, sigma={final.sigma:.2e}, nt={grid.nt}")
    for t in (0.0, 0.25, 0.5, 0.75, 1.0):
        n = int(round(t / grid.dt))
        print(f"t={t:4.2f}  mean position {np.round(circular_mean(final.fields.mbar[n], grid), 3)}")
    for name, value in mfg_residuals(spec, grid, final.fields).items():
        print(f"residual {name:<14}{value:.2e}")


if __name__ == "__main__":
    main()
