"""Run a few steps of the Green's-function iteration map on a small perturbation."""
import numpy as np

from tpshock.acceptance import burgers_shock
from tpshock.stability_experiments import (build_green_tables, gaussian_perturbation,
                                           iterate_map)


def main(amplitude=1e-3, t_max=10.0):
    _, grid, prof, cd = burgers_shock()
    tables = build_green_tables(prof, cd, t_max=t_max)
    v0 = gaussian_perturbation(grid, amplitude, center=-3.0)
    for k, r in enumerate(iterate_map(prof, v0, tables, n=3)):
        print(f"step {k}: residual {r.duhamel_residual:.2e}, "
              f"zeta* {r.zeta_star[0]:.6e}, zeta(t_max) {np.max(np.abs(r.zeta[-1])):.2e}")
    print(f"mass / 2 = {np.sum(v0) * grid.dx / 2:.6e}")


if __name__ == "__main__":
    main()
