"""Floquet report of the stationary Burgers shock and an Evans winding count."""
import numpy as np

from tpshock.acceptance import burgers_shock
from tpshock.floquet_spectrum import spectral_stability_report
from tpshock.profiles import stationary_coefficients
from tpshock.spatial_dynamics import circle_sweep, winding_number


def main():
    _, grid, prof, cd = burgers_shock(L=25.0)
    coeffs = stationary_coefficients(prof)
    rep = spectral_stability_report(prof, coeffs, cd, grid=grid, count=6)
    print("verdict:", rep.verdict)
    for mu, s in zip(rep.multipliers, rep.exponents):
        print(f"  |mu|={abs(mu):.6f}  Re sigma={s.real:+.5f}")
    print("Melnikov matrix:", np.real(rep.melnikov).ravel())

    _, dets = circle_sweep(coeffs, 2, radius=0.1, samples=16)
    print(f"Evans winding around 0: {winding_number(dets)}, "
          f"min |det| on circle {np.min(np.abs(dets)):.3f}")


if __name__ == "__main__":
    main()
