"""Command line runner ``tpshock``.

Each subcommand reads an optional JSON configuration, fills in defaults,
runs one experiment and writes CSV (``#``-prefixed metadata lines, then a
header row) or JSON outputs next to a provenance record.  Exit code 2 marks
an invalid configuration and 3 a numerical failure.
"""
import argparse
import copy
import hashlib
import json
import os
import sys
from importlib import metadata

import jsonschema
import numpy as np
import scipy

from .errors import ConfigInvalid, NumericalFailure
from .flux_models import QUADRATIC2_DEFAULT, build_model, characteristic_data

NUM = {"type": "number"}
VEC = {"type": "array", "items": NUM, "minItems": 1}
MAT = {"type": "array", "items": VEC}

SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["model"],
    "properties": {
        "model": {
            "type": "object",
            "additionalProperties": False,
            "required": ["name"],
            "properties": {
                "name": {"enum": ["burgers", "quadratic2"]},
                "u_minus": VEC, "u_plus": VEC,
                "A": MAT, "Q1": MAT, "Q2": MAT,
            },
        },
        "grid": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"L": NUM, "dx": NUM, "dt": {"type": ["number", "null"]},
                           "t_max": NUM},
        },
        "experiment": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "amplitude": NUM, "center": NUM, "width": NUM,
                "spectrum_L": NUM, "count": {"type": "integer", "minimum": 1},
                "dichotomy_L": NUM, "K": {"type": "integer", "minimum": 0},
                "sigma_re": NUM, "sigma_im": NUM, "circle_radius": NUM,
                "samples": {"type": "integer", "minimum": 3},
                "y": NUM, "s": NUM, "sources": VEC,
                "fit_window": VEC, "check_window": VEC,
                "decay_window": VEC, "template_M": NUM, "template_eta": NUM,
                "n_iter": {"type": "integer", "minimum": 1},
                "table_dy": NUM, "table_ds": NUM, "table_t_max": NUM,
                "table_y_range": VEC, "seed": {"type": "integer"},
            },
        },
        "output": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"dir": {"type": "string"}, "every": NUM},
        },
        "tolerances": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"fit_trust": NUM, "coverage": NUM, "template_noise_floor": NUM},
        },
    },
}

DEFAULTS = {
    "grid": {"L": 40.0, "dx": 0.05, "dt": None, "t_max": 100.0},
    "experiment": {
        "amplitude": 0.05, "center": 0.0, "width": 1.0,
        "spectrum_L": 25.0, "count": 20,
        "dichotomy_L": 20.0, "K": 2, "sigma_re": 0.0, "sigma_im": 0.0,
        "circle_radius": 0.0, "samples": 16,
        "y": -5.0, "s": 0.0, "sources": [-10.0, -5.0, -2.0, 0.0, 2.0, 5.0, 10.0],
        "fit_window": [1.0, 25.0], "check_window": [1.0, 50.0],
        "decay_window": [10.0, 100.0], "template_M": 25.0, "template_eta": 0.02,
        "n_iter": 3, "table_dy": 0.1, "table_ds": 0.1, "table_t_max": 10.0,
        "table_y_range": [-14.0, 10.0], "seed": 0,
    },
    "output": {"dir": ".", "every": 0.5},
    "tolerances": {"fit_trust": 0.5, "coverage": 1e-3, "template_noise_floor": 1e-9},
}

MODEL_DEFAULTS = {
    "burgers": {"u_minus": [1.0], "u_plus": [-1.0]},
    "quadratic2": dict(QUADRATIC2_DEFAULT),
}


def _line_of(text, path):
    """1-based line of the last key of ``path`` in the JSON text (1 if absent)."""
    line = 1
    pos = 0
    for key in path:
        if not isinstance(key, str):
            continue
        i = text.find(f'"{key}"', pos)
        if i < 0:
            break
        pos = i
        line = text.count("\n", 0, i) + 1
    return line


def load_config(path=None, overrides=None):
    """Validated configuration with every default materialized.

    Raises
    ------
    ConfigInvalid
        With a ``file:line: message`` text.
    """
    if path is None:
        text = json.dumps({"model": {"name": "burgers"}})
        name = "<default>"
    else:
        name = str(path)
        try:
            with open(path) as fh:
                text = fh.read()
        except OSError as err:
            raise ConfigInvalid(f"{name}:1: cannot read config ({err.strerror})") from err
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as err:
        raise ConfigInvalid(f"{name}:{err.lineno}: {err.msg}") from err
    errors = sorted(jsonschema.Draft7Validator(SCHEMA).iter_errors(raw),
                    key=lambda e: list(map(str, e.absolute_path)))
    if errors:
        e = errors[0]
        where = "/".join(map(str, e.absolute_path)) or "<root>"
        raise ConfigInvalid(f"{name}:{_line_of(text, list(e.absolute_path))}: {where}: {e.message}")
    cfg = copy.deepcopy(DEFAULTS)
    for sec in ("grid", "experiment", "output", "tolerances"):
        cfg[sec].update(raw.get(sec, {}))
    model = dict(MODEL_DEFAULTS[raw["model"]["name"]])
    model.update(raw["model"])
    cfg["model"] = model
    for sec, vals in (overrides or {}).items():
        cfg[sec].update({k: v for k, v in vals.items() if v is not None})
    return cfg


def config_hash(cfg):
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def _versions():
    try:
        pkg = metadata.version("artifact")
    except metadata.PackageNotFoundError:
        pkg = "unknown"
    return {"tpshock": pkg, "numpy": np.__version__, "scipy": scipy.__version__,
            "python": sys.version.split()[0]}


def _fmt(v):
    return repr(float(v)) if isinstance(v, (float, np.floating)) else str(v)


def write_csv(path, header, rows, cfg, meta=None):
    with open(path, "w", newline="\n") as fh:
        fh.write(f"# config_hash: {config_hash(cfg)}\n")
        for k, v in (meta or {}).items():
            fh.write(f"# {k}: {v}\n")
        fh.write(",".join(header) + "\n")
        for r in rows:
            fh.write(",".join(_fmt(v) for v in r) + "\n")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (complex, np.complexfloating)):
        return [float(obj.real), float(obj.imag)]
    if isinstance(obj, (np.floating, float)):
        f = float(obj)
        return f if np.isfinite(f) else str(f)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def write_json(path, payload, cfg):
    data = {"config_hash": config_hash(cfg), **_jsonable(payload)}
    with open(path, "w") as fh:
        json.dump(data, fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_provenance(out_path, cfg, command):
    prov = {"config_hash": config_hash(cfg), "command": command,
            "resolved_config": cfg, "versions": _versions()}
    with open(str(out_path) + ".provenance.json", "w") as fh:
        json.dump(_jsonable(prov), fh, indent=2, sort_keys=True)
        fh.write("\n")


def _threads(arg):
    if arg is not None:
        return max(1, int(arg))
    env = os.environ.get("TPSHOCK_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError as err:
            raise ConfigInvalid(f"TPSHOCK_THREADS:1: not an integer: {env!r}") from err
    return os.cpu_count() or 1


# ---------------------------------------------------------------------------
# setup shared by the subcommands

class Stage:
    """Context naming the stage reported on a numerical failure."""
    current = "setup"

    def __init__(self, name):
        self.name = name

    def __enter__(self):
        Stage.current = self.name

    def __exit__(self, *exc):
        return False


def _grid(cfg, L=None):
    from .pde_core import GridSpec
    g = cfg["grid"]
    try:
        return GridSpec(L=float(g["L"] if L is None else L), dx=float(g["dx"]), dt=g["dt"])
    except Exception as err:
        raise ConfigInvalid(f"<config>:1: grid: {err}") from err


def _shock(cfg, L=None):
    from .profiles import solve_stationary_profile
    m = cfg["model"]
    try:
        model = build_model(m)
    except Exception as err:
        raise ConfigInvalid(f"<config>:1: model: {err}") from err
    if len(m["u_minus"]) != model.N or len(m["u_plus"]) != model.N:
        raise ConfigInvalid(f"<config>:1: model: end states need {model.N} components")
    grid = _grid(cfg, L)
    with Stage("characteristics"):
        cd = characteristic_data(model, m["u_minus"], m["u_plus"])
    with Stage("profile"):
        prof = solve_stationary_profile(model, m["u_minus"], m["u_plus"], grid)
    return model, grid, prof, cd


def cmd_profile(args, cfg):
    model, grid, prof, cd = _shock(cfg)
    N = prof.N
    rows = [[x, 0.0] + list(u) for x, u in zip(grid.x, prof.values[0])]
    write_csv(args.out, ["x", "t"] + [f"u{i}" for i in range(N)], rows, cfg,
              {"model": model.name})
    side = {"eta": prof.eta, "residual": prof.residual,
            "u_minus": prof.u_minus, "u_plus": prof.u_plus, "N": N,
            "L": grid.L, "dx": grid.dx}
    write_json(str(args.out) + ".json", side, cfg)
    print(f"profile: eta={prof.eta:.6g} residual={prof.residual:.3g} -> {args.out}")


def cmd_spectrum(args, cfg):
    from .floquet_spectrum import spectral_stability_report
    from .profiles import stationary_coefficients
    ex = cfg["experiment"]
    model, grid, prof, cd = _shock(cfg, L=ex["spectrum_L"])
    coeffs = stationary_coefficients(prof)
    with Stage("monodromy"):
        rep = spectral_stability_report(prof, coeffs, cd, grid=grid, count=ex["count"],
                                        workers=args.threads)
    write_json(args.out, rep.to_dict(), cfg)
    print(f"spectrum: {rep.verdict}; leading multiplier {rep.multipliers[0]:.6g} -> {args.out}")


def cmd_dichotomy(args, cfg):
    from .profiles import stationary_coefficients
    from .spatial_dynamics import (circle_sweep, evans_determinant, principal_angles,
                                   winding_number)
    ex = cfg["experiment"]
    model, grid, prof, cd = _shock(cfg, L=ex["dichotomy_L"])
    coeffs = stationary_coefficients(prof)
    sigma = complex(ex["sigma_re"], ex["sigma_im"])
    K = ex["K"]
    with Stage("spatial dynamics"):
        det, fp, fm = evans_determinant(coeffs, sigma, K)
        out = {"sigma": sigma, "K": K, "determinant": det,
               "principal_angles": principal_angles(fp, fm),
               "dim_stable_plus": fp.dimension, "dim_unstable_minus": fm.dimension,
               "kappa": {"plus": [fp.kappa_s, fp.kappa_u], "minus": [fm.kappa_s, fm.kappa_u]},
               "orthonormality_defect": max(fp.orthonormality_defect, fm.orthonormality_defect)}
        if ex["circle_radius"] > 0:
            sig, dets = circle_sweep(coeffs, K, ex["circle_radius"], ex["samples"],
                                     center=sigma, workers=args.threads)
            out["circle"] = {"sigma": sig, "determinants": dets,
                             "min_abs": float(np.min(np.abs(dets))),
                             "winding": winding_number(dets)}
    write_json(args.out, out, cfg)
    print(f"dichotomy: det={det:.6g} -> {args.out}")


def cmd_greens(args, cfg):
    from .greens import greens_column
    from .profiles import stationary_coefficients
    ex = cfg["experiment"]
    model, grid, prof, cd = _shock(cfg)
    coeffs = stationary_coefficients(prof)
    every = cfg["output"]["every"]
    tmax = cfg["grid"]["t_max"]
    ts = ex["s"] + every * np.arange(1, int(round((tmax - ex["s"]) / every)) + 1)
    with Stage("green column"):
        col = greens_column(coeffs, ex["y"], ex["s"], ts, grid)
    N = col.N
    names = [f"G{i}{c}" for i in range(N) for c in range(N)]
    rows = []
    for m, t in enumerate(col.times):
        vals = col.values[m].reshape(grid.nx, N * N)
        rows.extend([t, x] + list(v) for x, v in zip(grid.x, vals))
    write_csv(args.out, ["t", "x"] + names, rows, cfg,
              {"y": ex["y"], "s": ex["s"], "mollifier_width": col.width})
    print(f"greens: {len(col.times)} snapshots -> {args.out}")


def cmd_templates(args, cfg):
    from .greens import (TemplateRegion, check_template_bound, decompose_green,
                         fit_template_constants, greens_columns, template_bundle)
    from .profiles import stationary_coefficients
    ex = cfg["experiment"]
    tol = cfg["tolerances"]
    model, grid, prof, cd = _shock(cfg)
    coeffs = stationary_coefficients(prof)
    fw, cw = ex["fit_window"], ex["check_window"]
    ts = np.arange(1.0, max(cw[1], 10.0) + 0.25, 0.5)
    with Stage("green columns"):
        cols = greens_columns(coeffs, ex["sources"], 0.0, ts, grid)
    with Stage("decomposition"):
        ds = [decompose_green(c, prof, cd) for c in cols]
    fit_region = TemplateRegion(fw[0], fw[1], noise_floor=tol["template_noise_floor"])
    chk_region = TemplateRegion(cw[0], cw[1], noise_floor=tol["template_noise_floor"])
    with Stage("template fit"):
        if args.fit:
            best = fit_template_constants(ds, cd, fit_region)
            M, eta, C = best.M, best.eta, best.C_min
        else:
            M, eta = ex["template_M"], ex["template_eta"]
            C = check_template_bound(ds, template_bundle(cd, M, eta), fit_region).C_min
        chk = check_template_bound(ds, template_bundle(cd, M, eta), chk_region, ceiling=2 * C)
    out = {"C_min": C, "M": M, "eta": eta, "violations": chk.violation_count,
           "C_min_check_window": chk.C_min, "fit_window": fw, "check_window": cw,
           "l_rows": [d.l_rows for d in ds]}
    write_json(args.out, out, cfg)
    print(f"templates: C_min={C:.4g} M={M:g} eta={eta:g} violations={chk.violation_count}")


def cmd_decay(args, cfg):
    from .greens import template_bundle
    from .stability_experiments import (decay_report, extract_phase,
                                        gaussian_perturbation, run_perturbation)
    ex = cfg["experiment"]
    model, grid, prof, cd = _shock(cfg)
    v0 = gaussian_perturbation(grid, ex["amplitude"], ex["center"], ex["width"], N=prof.N)
    with Stage("evolution"):
        run = run_perturbation(model, prof, v0, cfg["grid"]["t_max"], every=cfg["output"]["every"],
                               weighted=False)
    with Stage("phase extraction"):
        ph = extract_phase(run.trajectory, prof, trust=cfg["tolerances"]["fit_trust"])
    bundle = template_bundle(cd, ex["template_M"], ex["template_eta"])
    with Stage("decay fit"):
        rep = decay_report(run.trajectory, ph, prof, bundle, window=tuple(ex["decay_window"]))
    ps = list(rep.norms)
    names = ["t", "q", "tau"] + [f"L{'inf' if np.isinf(p) else int(p)}" for p in ps] + ["template_ratio"]
    rows = [[t, ph.q[m], ph.tau[m]] + [rep.norms[p][m] for p in ps] + [rep.ratios[m]]
            for m, t in enumerate(rep.times)]
    mass = float(np.sum(v0) * grid.dx)
    meta = {"q_star": repr(ph.q_star), "mass": repr(mass)}
    write_csv(args.out, names, rows, cfg, meta)
    summary = {"q_star": ph.q_star, "mass": mass, "slopes": {str(k): v for k, v in rep.slopes.items()},
               "predicted": {str(k): v for k, v in rep.predicted.items()},
               "q_slope": rep.q_slope, "q_dot_slope": rep.q_dot_slope,
               "template_ratio_sup": rep.ratio_sup, "B1": ph.b1}
    write_json(str(args.out) + ".json", summary, cfg)
    print(f"decay: q*={ph.q_star:.6g} (mass/[u] {mass / float(-prof.jump[0]):.6g}) "
          f"q-slope={rep.q_slope:.3g} -> {args.out}")


def cmd_iterate(args, cfg):
    from .pde_core import evolve_nonlinear
    from .stability_experiments import (build_green_tables, extract_phase,
                                        gaussian_perturbation, iterate_map)
    ex = cfg["experiment"]
    model, grid, prof, cd = _shock(cfg)
    v0 = gaussian_perturbation(grid, ex["amplitude"], ex["center"], ex["width"], N=prof.N)
    with Stage("green tables"):
        tables = build_green_tables(prof, cd, y_range=tuple(ex["table_y_range"]),
                                    dy=ex["table_dy"], ds=ex["table_ds"], t_max=ex["table_t_max"])
    with Stage("iteration map"):
        res = iterate_map(prof, v0, tables, n=ex["n_iter"],
                          coverage_tol=cfg["tolerances"]["coverage"])
    last = res[-1]
    # L2-fit phase of the nonlinear solution on the same lattice
    with Stage("phase extraction"):
        traj = evolve_nonlinear(model, prof.values[0] + v0, tables.t_max, grid,
                                every=tables.ds)
        ph = extract_phase(traj, prof, trust=cfg["tolerances"]["fit_trust"])
    total = last.zeta_star[0] + last.zeta[:, 0]
    n = min(total.size, ph.q.size)
    out = {"iterations": [{"duhamel_residual": r.duhamel_residual,
                           "fixed_point_distance": r.fixed_point_distance,
                           "zeta_star": r.zeta_star, "zeta_0": r.zeta[0], "zeta_tmax": r.zeta[-1],
                           "tail_estimate": r.tail_estimate} for r in res],
           "t_max": tables.t_max,
           "mass_over_jump": float(np.sum(v0) * grid.dx / -prof.jump[0]),
           "phase_comparison_max_abs": float(np.max(np.abs(total[:n] - ph.q[:n])))}
    write_json(args.out, out, cfg)
    print(f"iterate: {len(res)} steps, q*={last.zeta_star[0]:.6g}, "
          f"residual={last.duhamel_residual:.3g} -> {args.out}")


def cmd_acceptance(args, cfg):
    from .acceptance import run_acceptance
    which = None if not args.only else [int(v) for v in args.only.split(",")]
    results = run_acceptance(which)
    if args.out:
        write_json(args.out, {"results": [{"criterion": r.number, "title": r.title,
                                           "passed": r.passed, "measured": r.measured}
                                          for r in results]}, cfg)
    return 0 if all(r.passed for r in results) else 1


COMMANDS = {
    "profile": (cmd_profile, "profile.csv"),
    "spectrum": (cmd_spectrum, "report.json"),
    "dichotomy": (cmd_dichotomy, "frame.json"),
    "greens": (cmd_greens, "green.csv"),
    "templates": (cmd_templates, "fit.json"),
    "decay": (cmd_decay, "decay.csv"),
    "iterate": (cmd_iterate, "iter.json"),
    "acceptance": (cmd_acceptance, None),
}


def build_parser():
    p = argparse.ArgumentParser(prog="tpshock", description="viscous shock stability experiments")
    sub = p.add_subparsers(dest="command", required=True)
    for name, (_, default_out) in COMMANDS.items():
        s = sub.add_parser(name)
        s.add_argument("--config", help="JSON run configuration")
        s.add_argument("--out", default=default_out)
        s.add_argument("--threads", type=int, default=None)
        if name == "dichotomy":
            s.add_argument("--sigma-re", type=float)
            s.add_argument("--sigma-im", type=float)
            s.add_argument("--K", type=int)
            s.add_argument("--circle-radius", type=float)
            s.add_argument("--samples", type=int)
        elif name == "greens":
            s.add_argument("--y", type=float)
            s.add_argument("--s", type=float)
            s.add_argument("--tmax", type=float)
        elif name == "templates":
            s.add_argument("--fit", action="store_true")
        elif name == "decay":
            s.add_argument("--amplitude", type=float)
            s.add_argument("--tmax", type=float)
        elif name == "iterate":
            s.add_argument("--n", type=int)
            s.add_argument("--amplitude", type=float)
        elif name == "acceptance":
            s.add_argument("--only", help="comma-separated criterion numbers")
    return p


def _overrides(args):
    ex = {"sigma_re": getattr(args, "sigma_re", None), "sigma_im": getattr(args, "sigma_im", None),
          "K": getattr(args, "K", None), "circle_radius": getattr(args, "circle_radius", None),
          "samples": getattr(args, "samples", None), "y": getattr(args, "y", None),
          "s": getattr(args, "s", None), "amplitude": getattr(args, "amplitude", None),
          "n_iter": getattr(args, "n", None)}
    return {"experiment": ex, "grid": {"t_max": getattr(args, "tmax", None)}}


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, _overrides(args))
        args.threads = _threads(args.threads)
        if args.out:
            d = cfg["output"]["dir"]
            if d and not os.path.isabs(args.out):
                args.out = os.path.join(d, args.out)
        fn = COMMANDS[args.command][0]
        Stage.current = args.command
        code = fn(args, cfg)
        if args.out:
            write_provenance(args.out, cfg, args.command)
        return int(code or 0)
    except ConfigInvalid as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    except NumericalFailure as err:
        stage = getattr(err, "stage", None) or Stage.current
        print(f"numerical failure in stage '{stage}' ({Stage.current}): {err}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
