"""Acceptance suite: one function per criterion, each returning a
:class:`CriterionResult` with the measured quantities."""
from dataclasses import dataclass, field
from functools import lru_cache
import time

import numpy as np

from .flux_models import burgers, characteristic_data
from .floquet_spectrum import melnikov_matrix, monodromy_matrix
from .greens import (LCoefficients, check_template_bound, convolution_check,
                     decompose_green, fit_template_constants, g0_kernel,
                     greens_column, greens_columns, parametrix_recursion,
                     parametrix_scaling, pi_envelope_check, pi_functions,
                     template_bundle, TemplateRegion)
from .pde_core import GridSpec, evolve_nonlinear
from .profiles import (constant_coefficients, solve_stationary_profile,
                       stationary_coefficients)
from .spatial_dynamics import (asymptotic_spatial_spectrum, build_spatial_operator,
                               circle_sweep, evans_determinant, principal_angles)
from .stability_experiments import (build_green_tables, decay_report, extract_phase,
                                    gaussian_perturbation, iterate_map, run_perturbation)


@dataclass
class CriterionResult:
    number: int
    title: str
    passed: bool
    measured: dict = field(default_factory=dict)
    seconds: float = 0.0

    def line(self):
        vals = ", ".join(f"{k}={_fmt(v)}" for k, v in self.measured.items())
        return f"{'PASS' if self.passed else 'FAIL'} [{self.number:2d}] {self.title}: {vals}"


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.4g}"
    if isinstance(v, (list, tuple, np.ndarray)):
        return "[" + ", ".join(_fmt(x) for x in v) + "]"
    return str(v)


@lru_cache(maxsize=None)
def burgers_shock(L=40.0, dx=0.05):
    grid = GridSpec(L=L, dx=dx)
    model = burgers()
    prof = solve_stationary_profile(model, [1.0], [-1.0], grid)
    return model, grid, prof, characteristic_data(model, [1.0], [-1.0])


def burgers_l_coeffs():
    row = [[[-0.5], [0.0]]]
    return LCoefficients.constant(row, row)


@lru_cache(maxsize=None)
def burgers_decompositions(t_final=50.0):
    model, grid, prof, cd = burgers_shock()
    coeffs = stationary_coefficients(prof)
    ts = np.arange(1.0, t_final + 0.25, 0.5)
    cols = greens_columns(coeffs, [-10.0, -5.0, -2.0, 0.0, 2.0, 5.0, 10.0], 0.0, ts, grid)
    return tuple(decompose_green(c, prof, cd) for c in cols)


# ---------------------------------------------------------------------------

def criterion_1():
    """Damped heat kernel oracle."""
    grid = GridSpec(L=40.0, dx=0.05)
    heat = constant_coefficients(grid, [[0.0]], damping=1.0)
    y = -2.0
    ts = np.array([0.5, 1.0, 2.0, 5.0])
    col = greens_column(heat, y, 0.0, ts, grid)
    sel = np.abs(grid.x - y) <= 10.0
    errs = []
    for i, t in enumerate(ts):
        ex = g0_kernel(grid.x, t, y, 0.0, damping=1.0)
        errs.append(np.max(np.abs(col.values[i, sel, 0, 0] - ex[sel])) / np.max(ex[sel]))
    worst = float(max(errs))
    return CriterionResult(1, "damped heat oracle", worst <= 1e-3,
                           {"rel_Linf": worst, "tol": 1e-3})


def criterion_2():
    """Stationarity of the Burgers profile under the nonlinear solver."""
    model, grid, prof, _ = burgers_shock()
    exact = -np.tanh(grid.x / 2.0)
    T = 5.0
    traj = evolve_nonlinear(model, prof.values[0], T, grid)
    drift = float(np.max(np.abs(traj.states[-1] - traj.states[0]))) / T
    shape = float(np.max(np.abs(prof.values[0][:, 0] - exact)))
    return CriterionResult(2, "profile stationarity", drift < 1e-6 and shape < 1e-8,
                           {"drift_per_time": drift, "profile_vs_tanh": shape, "tol": 1e-6})


def criterion_3():
    """Translation Floquet mode of the Burgers linearization (dense solve)."""
    model = burgers()
    grid = GridSpec(L=25.0, dx=0.05)
    prof = solve_stationary_profile(model, [1.0], [-1.0], grid)
    coeffs = stationary_coefficients(prof)
    M = monodromy_matrix(coeffs, grid)
    mu, V = np.linalg.eig(M)
    order = np.argsort(-np.abs(mu))
    mu, V = mu[order], V[:, order]
    k = int(np.argmin(np.abs(mu - 1.0)))
    ux = prof.ux[0][:, 0]
    corr = float(abs(np.vdot(V[:, k], ux)) / (np.linalg.norm(V[:, k]) * np.linalg.norm(ux)))
    rest = np.delete(np.abs(mu), k)
    gap = float(np.max(rest))
    ok = abs(mu[k] - 1.0) < 1e-3 and corr > 0.999 and gap < 1.0 - 1e-3
    return CriterionResult(3, "translation Floquet mode", ok,
                           {"nx": grid.nx, "mu_dist": float(abs(mu[k] - 1.0)),
                            "corr": corr, "max_other": gap})


def criterion_4(seed=7, samples=20):
    """Asymptotic spatial roots against dense eigensolves."""
    _, _, _, cd = burgers_shock()
    rng = np.random.default_rng(seed)
    r = 0.2 * np.sqrt(rng.uniform(size=samples))
    th = rng.uniform(0, 2 * np.pi, size=samples)
    sigmas = r * np.exp(1j * th)
    worst = 0.0
    for side in cd:
        grid = GridSpec(L=4.0, dx=0.5)
        A = np.diag(side.speeds)
        cc = constant_coefficients(grid, A)
        for K in range(0, 9):
            for s in sigmas:
                roots = asymptotic_spatial_spectrum(side, s, K)
                op = build_spatial_operator(cc, s, K, 0.0)
                ev = np.linalg.eigvals(op)
                # match each analytic root to its nearest eigenvalue
                d = np.abs(roots[:, None] - ev[None, :])
                used = np.zeros(ev.size, bool)
                for i in np.argsort(np.min(d, axis=1)):
                    j = np.argmin(np.where(used, np.inf, d[i]))
                    used[j] = True
                    worst = max(worst, d[i, j])
    return CriterionResult(4, "spatial spectrum exactness", worst < 1e-10,
                           {"max_err": worst, "tol": 1e-10})


def criterion_5(K=2):
    """Vanishing intersection at 0, bounded circle, Melnikov entry."""
    model = burgers()
    grid = GridSpec(L=20.0, dx=0.05)
    prof = solve_stationary_profile(model, [1.0], [-1.0], grid)
    coeffs = stationary_coefficients(prof)
    _, fp, fm = evans_determinant(coeffs, 0.0, K)
    angle = float(principal_angles(fp, fm)[0])
    _, dets = circle_sweep(coeffs, K, radius=0.1, samples=16)
    dmin = float(np.min(np.abs(dets)))
    ux = prof.ux[0]
    mel = float(np.real(melnikov_matrix(prof, [np.ones_like(ux)], [ux])[0, 0]))
    ok = angle < 1e-4 and dmin > 1e-6 and abs(mel + 2.0) < 1e-2
    return CriterionResult(5, "Evans root and Melnikov value", ok,
                           {"angle_at_0": angle, "min_det_circle": dmin, "melnikov": mel})


def criterion_6(amplitude=0.05, t_final=100.0):
    """Shift predicted by conservation of mass and phase decay."""
    model, grid, prof, cd = burgers_shock()
    v0 = gaussian_perturbation(grid, amplitude, center=0.0)
    run = run_perturbation(model, prof, v0, t_final, every=0.5, weighted=False)
    phase = extract_phase(run.trajectory, prof)
    pred = float(np.sum(v0) * grid.dx / 2.0)
    rel = abs(phase.q_star - pred) / abs(pred)
    rep = decay_report(run.trajectory, phase, prof, None, window=(10.0, 100.0))
    ok = rel < 0.05 and rep.q_slope <= -0.4
    return CriterionResult(6, "shift prediction", ok,
                           {"q_star": phase.q_star, "mass_over_2": pred, "rel_err": rel,
                            "q_slope": rep.q_slope, "Linf_slope": rep.slopes[np.inf],
                            "L1_slope": rep.slopes[1]})


def criterion_7():
    """Template constant stable when the fitting window doubles."""
    _, _, _, cd = burgers_shock()
    ds = burgers_decompositions()
    short = fit_template_constants(ds, cd, TemplateRegion(1.0, 25.0))
    bundle = template_bundle(cd, short.M, short.eta)
    long = check_template_bound(ds, bundle, TemplateRegion(1.0, 50.0), ceiling=2 * short.C_min)
    change = abs(long.C_min - short.C_min) / short.C_min
    xs = np.linspace(-30, 30, 61)
    ts = np.linspace(0.0, 50.0, 11)
    X, T = np.meshgrid(xs, ts)
    zero = (np.max(np.abs(bundle.theta_gauss(X, T))) == 0.0
            and np.max(np.abs(bundle.theta_inner(X, T))) == 0.0)
    ok = change < 0.15 and long.violation_count == 0 and zero
    return CriterionResult(7, "template bound stability", ok,
                           {"C_min_25": short.C_min, "C_min_50": long.C_min, "change": change,
                            "violations": long.violation_count, "M": short.M, "eta": short.eta,
                            "empty_sums_zero": zero})


def criterion_8(sources=(-3.0, 0.0)):
    """Parametrix growth exponents (j - 1)/2 for j = 1, 2."""
    model, grid, prof, _ = burgers_shock()
    coeffs = stationary_coefficients(prof)
    taus = np.linspace(0.5, 4.0, 15)
    slopes = []
    for y in sources:
        tab = parametrix_recursion(coeffs, 2, (y, 0.0), grid, taus)
        s = parametrix_scaling(tab)
        slopes.append((float(s[1]), float(s[2])))
    ok = all(abs(a - 0.0) <= 0.25 and abs(b - 0.5) <= 0.25 for a, b in slopes)
    return CriterionResult(8, "parametrix scaling", ok,
                           {"slopes_j1": [a for a, _ in slopes], "slopes_j2": [b for _, b in slopes],
                            "targets": [0.0, 0.5]})


def criterion_9(amplitude=1e-3, t_max=10.0):
    """Duhamel consistency of the iteration map and its fixed point."""
    model, grid, prof, cd = burgers_shock()
    tables = build_green_tables(prof, cd, t_max=t_max)
    v0 = gaussian_perturbation(grid, amplitude, center=-3.0)
    results = iterate_map(prof, v0, tables, n=3)
    res = results[0].duhamel_residual
    last = results[-1]
    z0 = float(np.max(np.abs(last.zeta[0])))
    zT = float(np.max(np.abs(last.zeta[-1])))
    ok = res < 0.02 and z0 < 1e-3 and zT < 1e-3
    return CriterionResult(9, "iteration map consistency", ok,
                           {"duhamel_residual": res,
                            "max_residual_all": max(r.duhamel_residual for r in results),
                            "zeta_0": z0, "zeta_tmax": zT,
                            "q_star": float(last.zeta_star[0]),
                            "mass_over_2": float(np.sum(v0) * grid.dx / 2)})


def criterion_10():
    """Projection functions: endpoint, derivatives, envelope."""
    _, _, _, cd = burgers_shock()
    lc = burgers_l_coeffs()
    ys = np.linspace(-20, 20, 41)
    ts = np.linspace(0.3, 30, 37)
    Y, T = np.meshgrid(ys, ts)
    endpoint = float(np.max(np.abs(pi_functions(cd, lc, ys, 2.0, 2.0).pi)))
    pv = pi_functions(cd, lc, Y, 0.0, T)
    h = 1e-5
    fdt = (pi_functions(cd, lc, Y, 0.0, T + h).pi - pi_functions(cd, lc, Y, 0.0, T - h).pi) / (2 * h)
    fdy = (pi_functions(cd, lc, Y + h, 0.0, T).pi - pi_functions(cd, lc, Y - h, 0.0, T).pi) / (2 * h)
    dt_err = float(np.max(np.abs(fdt - pv.pi_t)))
    dy_err = float(np.max(np.abs(fdy - pv.pi_y)))
    c1 = pi_envelope_check(cd, lc, np.linspace(-40, 40, 81), np.linspace(0.05, 50, 60))[0]
    c2 = pi_envelope_check(cd, lc, np.linspace(-40, 40, 161), np.linspace(0.05, 50, 120))[0]
    stab = abs(c2 - c1) / c1
    ok = endpoint == 0.0 and dt_err < 1e-6 and dy_err < 1e-6 and np.isfinite(c1) and stab <= 0.1
    return CriterionResult(10, "projection properties", ok,
                           {"pi_at_s": endpoint, "dt_err": dt_err, "dy_err": dy_err,
                            "C_coarse": c1, "C_fine": c2, "change": stab})


def criterion_11():
    """Decay exponents of the single convolution integrals."""
    _, _, _, cd = burgers_shock()
    lc = burgers_l_coeffs()
    bundle = template_bundle(cd, 25.0, 0.5)
    times = [5.0, 10.0, 20.0, 40.0, 70.0, 100.0]
    m = {}
    ok = True
    for which in ("linear_pi", "linear_pi_t", "linear_pi_diff"):
        r = convolution_check(bundle, cd, lc, which, times)
        m[which] = r.slope
        ok &= abs(r.slope - r.predicted) <= 0.3
    return CriterionResult(11, "convolution estimates", bool(ok), m)


CRITERIA = {i: globals()[f"criterion_{i}"] for i in range(1, 12)}


def run_acceptance(which=None, stream=print):
    """Run the selected criteria (default all); returns the results."""
    out = []
    for i in (sorted(CRITERIA) if which is None else which):
        t0 = time.perf_counter()
        r = CRITERIA[i]()
        r.seconds = time.perf_counter() - t0
        out.append(r)
        if stream is not None:
            stream(r.line())
    return out
