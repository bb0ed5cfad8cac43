"""Command-line front end.

One JSON document configures every subcommand (a flat mirror of the model
parameters, geometry, grid, and solver options plus command-specific keys);
individual scalars can be overridden with ``--set key=value``.  All outputs
land under ``--out`` and are written atomically; runs with identical configs
and seeds produce byte-identical CSV files.  Exit codes: 0 success, 1 config
error, 2 solver non-convergence.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import core, frustration
from .asymptotics import (PhaseVector, expansion_constants, first_order,
                          first_order_configuration, manifold_point,
                          predicted_fields)
from .core import BIPERIODIC, FINITE_LAYER
from .energy import el_residuals, energy
from .fields import export_fieldset, observables
from .minimize import (SolverOptions, compare_with_asymptotics,
                       continuation_in_r, initial_configuration,
                       minimize_energy, save_checkpoint)

COMMANDS = ("geometry", "minimize", "asymptotic", "frustration", "sweep", "export")

_COMMON_KEYS = {"command", "kappa", "H", "p", "r", "N", "s", "m", "q", "k", "kind",
                "Mx", "Mz", "max_iters", "grad_tol", "memory", "seed", "gap_rule",
                "figures"}
_COMMAND_KEYS = {
    "geometry": set(),
    "minimize": {"delta", "start", "amplitude"},
    "asymptotic": {"delta"},
    "frustration": {"N_values", "s_values", "n_starts", "grid_points"},
    "sweep": {"delta", "r_values"},
    "export": {"delta"},
}


class ConfigError(ValueError):
    pass


def _fmt(v) -> str:
    return format(float(v), ".17g")


def load_config(path: str, overrides) -> dict:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config: {exc}")
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    for item in overrides or []:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        key, raw = item.split("=", 1)
        try:
            doc[key] = json.loads(raw)
        except json.JSONDecodeError:
            doc[key] = raw
    return doc


def validate_config(doc: dict, command: str) -> dict:
    # one schema covers every command; only keys outside the union are errors
    allowed = set(_COMMON_KEYS)
    for keys in _COMMAND_KEYS.values():
        allowed |= keys
    unknown = set(doc) - allowed
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    if "command" in doc and doc["command"] != command:
        raise ConfigError(
            f"config command {doc['command']!r} does not match subcommand {command!r}")
    for key in ("kappa", "H", "p", "N", "Mx", "Mz"):
        if key not in doc:
            raise ConfigError(f"missing required key {key!r}")
    if "m" not in doc and "q" not in doc:
        raise ConfigError("geometry needs either 'm' or explicit 'q' (with 'k')")
    try:
        params, geom, disc = core.from_document(doc)
    except (ValueError, KeyError) as exc:
        raise ConfigError(str(exc))
    opts = SolverOptions(
        max_iters=int(doc.get("max_iters", 5000)),
        grad_tol=float(doc.get("grad_tol", 1e-9)),
        memory=int(doc.get("memory", 10)),
        seed=int(doc.get("seed", 0)),
        gap_rule=str(doc.get("gap_rule", "trapezoid")),
    )
    return {"doc": doc, "params": params, "geom": geom, "disc": disc, "opts": opts,
            "figures": bool(doc.get("figures", True))}


def _phase_vector(doc, geom, params):
    Hps = params.H * params.p * geom.s
    interior = doc.get("delta")
    if interior is None:
        if geom.kind == BIPERIODIC:
            res = frustration.minimize_F(geom.N, geom.s, params,
                                         seed=int(doc.get("seed", 0)))
            return res.delta
        return PhaseVector.staggered(geom.N, FINITE_LAYER)
    interior = np.asarray(interior, dtype=float)
    if geom.kind == BIPERIODIC:
        return PhaseVector.biperiodic(interior, Hps)
    return PhaseVector.finite(interior)


def _write_text(path, text):
    tmp = path + ".tmp"
    with open(tmp, "w", newline="\n") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _write_json(path, obj):
    _write_text(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _write_csv(path, columns, rows):
    lines = [",".join(columns)]
    for row in rows:
        lines.append(",".join(_fmt(v) if isinstance(v, (int, float, np.floating))
                              else str(v) for v in row))
    _write_text(path, "\n".join(lines) + "\n")


def cmd_geometry(ctx, out):
    params, geom = ctx["params"], ctx["geom"]
    cls = core.classify_geometry(geom, params)
    report = {
        "class": str(cls),
        "admissible": cls.admissible,
        "m": cls.m,
        "q": geom.q,
        "K": geom.K,
        "mean_field": geom.mean_field(params),
        "flux": 2 * np.pi * geom.K,
        "cell_area": geom.cell_area(params),
    }
    if cls.admissible and geom.kind == BIPERIODIC:
        report["commensurate_class"] = frustration.classify_optimality(
            geom.N, geom.s, params)
    if cls.admissible:
        line = f"admissible, m={cls.m}, flux 2*pi*{geom.K}"
    else:
        line = "inadmissible: zero-coupling energy is bounded away from zero"
    print(line)
    if "commensurate_class" in report:
        print("commensurate class:", report["commensurate_class"])
    print(f"q = {report['q']:.12g}, K = {report['K']}, <h> = {report['mean_field']:.12g}")
    _write_json(os.path.join(out, "geometry.json"), report)
    return 0


def cmd_minimize(ctx, out):
    params, geom, disc, opts, doc = (ctx["params"], ctx["geom"], ctx["disc"],
                                     ctx["opts"], ctx["doc"])
    start_mode = doc.get("start", "asymptotic")
    delta = _phase_vector(doc, geom, params)
    if start_mode == "manifold" or params.r == 0.0:
        cls = core.classify_geometry(geom, params)
        if cls.admissible:
            cfg = manifold_point(delta, geom, params, disc)
        else:
            cfg = initial_configuration(geom, params, disc, delta=delta,
                                        amplitude=0.0, seed=opts.seed)
    elif start_mode == "asymptotic":
        cfg = first_order_configuration(delta, params.r, geom, params, disc)
    elif start_mode == "random":
        cfg = initial_configuration(geom, params, disc,
                                    amplitude=float(doc.get("amplitude", 0.1)),
                                    seed=opts.seed)
    else:
        raise ConfigError(f"unknown start mode {start_mode!r}")
    res = minimize_energy(cfg, geom, params, opts)
    fs = observables(res.cfg, geom, params)
    export_fieldset(fs, out, geom, disc, params)
    save_checkpoint(os.path.join(out, "state"), res, geom, disc, opts)
    x = res.cfg.x
    planes = list(geom.stored_planes())
    _write_csv(os.path.join(out, "f.csv"), ["x", "n", "f"],
               [(x[j], n, res.cfg.f[i, j])
                for i, n in enumerate(planes) for j in range(disc.Mx)])
    residuals = el_residuals(res.cfg, geom, params)
    _write_csv(os.path.join(out, "residuals.csv"), ["equation", "norm"],
               sorted(residuals.items()))
    summary = {
        "energy": res.energy,
        "energy_per_area": res.energy / geom.cell_area(params),
        "breakdown": res.breakdown.to_dict(),
        "grad_norm": res.grad_norm,
        "iterations": res.iterations,
        "converged": res.converged,
        "message": res.message,
        "residuals": residuals,
    }
    _write_json(os.path.join(out, "summary.json"), summary)
    print(f"e(r) = {summary['energy_per_area']:.12e}  grad = {res.grad_norm:.3e}  "
          f"iters = {res.iterations}  converged = {res.converged}")
    if ctx["figures"]:
        from . import plots
        plots.field_heatmap(fs, os.path.join(out, "field.png"))
        plots.plane_profiles(fs, os.path.join(out, "profiles.png"), f=res.cfg.f)
        plots.convergence_history(res.energy_history,
                                  os.path.join(out, "convergence.png"))
    return 0 if res.converged else 2


def cmd_asymptotic(ctx, out):
    params, geom, disc, doc = ctx["params"], ctx["geom"], ctx["disc"], ctx["doc"]
    delta = _phase_vector(doc, geom, params)
    rep = expansion_constants(geom, params)
    _write_json(os.path.join(out, "expansion.json"), rep.to_dict())
    fo = first_order(delta, geom, params, disc)
    x = 2 * geom.q * np.arange(disc.Mx) / disc.Mx
    rows = []
    planes = list(geom.stored_planes())
    for i, n in enumerate(planes):
        for j in range(disc.Mx):
            rows.append((x[j], n, fo.u1[i, j], fo.V1[i, j]))
    _write_csv(os.path.join(out, "first_order_planes.csv"),
               ["x", "n", "u1", "V1"], rows)
    rows = []
    for n in range(1, geom.N + 1):
        for j in range(disc.Mx):
            rows.append((x[j], n, fo.b1[n - 1, j], fo.varphi1[n - 1, j]))
    _write_csv(os.path.join(out, "first_order_gaps.csv"),
               ["x", "gap", "b1", "varphi1"], rows)
    print(f"Omega1 = {rep.Omega1:.12g}, C0 = {rep.C0:.12g}, C1 = {rep.C1:.12g}, "
          f"F = {rep.F:.12g}")
    fs = predicted_fields(delta, params.r, geom, params, disc)
    export_fieldset(fs, os.path.join(out, "predicted"), geom, disc, params)
    if ctx["figures"]:
        from . import plots
        plots.field_heatmap(fs, os.path.join(out, "predicted_field.png"))
    return 0


def cmd_frustration(ctx, out):
    params, doc = ctx["params"], ctx["doc"]
    N_values = doc.get("N_values", [ctx["geom"].N])
    q1 = np.pi / (params.H * params.p)
    s_values = doc.get("s_values")
    if s_values is None:
        s_values = list(np.linspace(0.0, 2 * q1, 12))
    rows = frustration.scan(N_values, s_values, params,
                            n_starts=int(doc.get("n_starts", 32)),
                            seed=int(doc.get("seed", 0)))
    _write_csv(os.path.join(out, "phase_diagram.csv"),
               ["N", "s", "F", "class", "min_eigenvalue"],
               [(r["N"], r["s"], r["F"], r["class"], r["min_eigenvalue"])
                for r in rows])
    for r in rows:
        print(f"N={r['N']} s={r['s']:.6g} F={r['F']:.9f} {r['class']}")
    if ctx["figures"]:
        from . import plots
        plots.phase_diagram(rows, os.path.join(out, "phase_diagram.png"))
    return 0


def cmd_sweep(ctx, out):
    params, geom, disc, opts, doc = (ctx["params"], ctx["geom"], ctx["disc"],
                                     ctx["opts"], ctx["doc"])
    r_values = doc.get("r_values", [1e-3, 2e-3, 4e-3])
    delta = _phase_vector(doc, geom, params)
    results = continuation_in_r(delta, r_values, geom, params, disc, opts)
    if not all(res.converged for res in results):
        print("continuation failed:", results[-1].message, file=sys.stderr)
        return 2
    report = compare_with_asymptotics(results, geom, params)
    _write_json(os.path.join(out, "comparison.json"), report.to_dict())
    rows = []
    for res, err in zip(results, report.field_sup_errors):
        r = res.params.r
        e = res.energy / geom.cell_area(params)
        rows.append((r, e, e / r, (e - r) / r ** 2, err, res.grad_norm,
                     res.iterations))
    _write_csv(os.path.join(out, "sweep.csv"),
               ["r", "e", "e_over_r", "quadratic_term", "field_sup_error",
                "grad_norm", "iterations"], rows)
    rel = abs(report.fitted_C0_plus_C1F / report.predicted_C0_plus_C1F - 1.0)
    print(f"fitted quadratic constant  = {report.fitted_C0_plus_C1F:.8f}")
    print(f"predicted C0 + C1 F        = {report.predicted_C0_plus_C1F:.8f}")
    print(f"relative error             = {rel:.3e}")
    if ctx["figures"]:
        from . import plots
        plots.sweep_summary(report, os.path.join(out, "sweep.png"))
    return 0


def cmd_export(ctx, out):
    params, geom, disc, doc = ctx["params"], ctx["geom"], ctx["disc"], ctx["doc"]
    delta = _phase_vector(doc, geom, params)
    fs = predicted_fields(delta, params.r, geom, params, disc)
    export_fieldset(fs, out, geom, disc, params)
    planes = list(geom.stored_planes())
    rows = [(fs.x[j], n, fs.f[i, j])
            for i, n in enumerate(planes) for j in range(disc.Mx)]
    _write_csv(os.path.join(out, "f_pred.csv"), ["x", "n", "f"], rows)
    print(f"exported predicted fields for r = {params.r}")
    if ctx["figures"]:
        from . import plots
        plots.field_heatmap(fs, os.path.join(out, "field.png"))
        plots.plane_profiles(fs, os.path.join(out, "profiles.png"), f=fs.f)
    return 0


_DISPATCH = {
    "geometry": cmd_geometry,
    "minimize": cmd_minimize,
    "asymptotic": cmd_asymptotic,
    "frustration": cmd_frustration,
    "sweep": cmd_sweep,
    "export": cmd_export,
}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="ld-lattice",
        description="Vortex-lattice energy minimization for Josephson-coupled "
                    "stacks of superconducting planes")
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", required=True, help="JSON run configuration")
    parser.add_argument("--out", default=".", help="output directory")
    parser.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override a config scalar", default=None)
    parser.add_argument("--no-figures", action="store_true",
                        help="skip figure rendering")
    args = parser.parse_args(argv)

    try:
        doc = load_config(args.config, args.set)
        ctx = validate_config(doc, args.command)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    if args.no_figures:
        ctx["figures"] = False
    os.makedirs(args.out, exist_ok=True)
    return _DISPATCH[args.command](ctx, args.out)


if __name__ == "__main__":
    sys.exit(main())
