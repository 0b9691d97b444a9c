import numpy as np

from mfg_gcg.grid import GridSpec
from mfg_gcg.model import ProblemSpec
from mfg_gcg.pde import solve_fp


def random_velocity(grid: GridSpec, rng: np.random.Generator, speed: float = 1.0) -> np.ndarray:
    """Random physical velocity ``(nt, d) + space`` with ``|v_a| <= speed``."""
    return speed * rng.uniform(-1, 1, size=(grid.nt, grid.d) + grid.space_shape)


def random_feasible_pair(spec: ProblemSpec, grid: GridSpec, rng: np.random.Generator,
                         speed: float = 1.0):
    """A density/momentum pair satisfying the discrete Fokker-Planck constraint."""
    from mfg_gcg.model import split

    v = split(random_velocity(grid, rng, speed))
    m = solve_fp(spec, grid, v)
    return m, m[: grid.nt, None, None] * v
