"""Perturb the Burgers shock and compare the final shift with mass / [u]."""
import numpy as np

from tpshock.acceptance import burgers_shock
from tpshock.stability_experiments import (decay_report, extract_phase,
                                           gaussian_perturbation, run_perturbation)


def main(amplitude=0.05, center=-3.0, t_final=60.0):
    model, grid, prof, _ = burgers_shock()
    v0 = gaussian_perturbation(grid, amplitude, center=center)
    run = run_perturbation(model, prof, v0, t_final, every=0.5, weighted=False)
    phase = extract_phase(run.trajectory, prof)
    predicted = float(np.sum(v0) * grid.dx / 2.0)
    print(f"predicted shift  {predicted:.6f}")
    print(f"measured shift   {phase.q_star:.6f}")
    rep = decay_report(run.trajectory, phase, prof, None, window=(10.0, t_final))
    print(f"phase decay slope {rep.q_slope:.2f}, sup-norm slope {rep.slopes[np.inf]:.2f}")
    for t, q in zip(phase.times[::20], phase.q[::20]):
        print(f"  t={t:6.1f}  q={q:.6f}")


if __name__ == "__main__":
    main()
