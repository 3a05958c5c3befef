"""Command-line entry point: ``selfsim solve|profile|converge|global|kernels|norms``."""

import argparse
import json
import sys
import warnings
from pathlib import Path

import jsonschema
import numpy as np

from . import harness, plotting
from .errors import ConfigError, PropertyFailure, SelfsimError
from .fields import save_field, to_csv
from .flows import duhamel_nonlinearity, make_flow
from .grid import make_grid
from .kernels import (
    biharmonic_kernel,
    expected_lp_exponent,
    fit_lp_exponent,
    heat_kernel,
    verify_pointwise_decay,
)
from .norms import NormSpec, weighted_norms
from .semigroup import Schedule, integrate
from .similarity import DEFAULT_EPSILON, Perturbation, cone_from_dict, make_self_similar_data

EXIT_PASS = 0

U0_SCHEMA = {
    "type": "object",
    "required": ["cone"],
    "properties": {"cone": {"type": "object"}, "perturbation": {"type": "object"}},
}

RUN_SCHEMA = {
    "type": "object",
    "required": ["flow", "grid", "u0"],
    "properties": {
        "flow": {"enum": ["mcf", "sd", "wf", "MCF", "SD", "WF"]},
        "grid": harness.CONFIG_SCHEMA["properties"]["grid"],
        "u0": U0_SCHEMA,
        "horizon": {"type": "number", "exclusiveMinimum": 0},
        "snapshots": {"type": "array", "items": {"type": "number"}},
        "schedule": harness.CONFIG_SCHEMA["properties"]["schedule"],
        "epsilon": {"type": "number"},
        "norms": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["family", "T"],
                "properties": {
                    "family": {"enum": ["XT", "XT_beta", "YT_beta", "Yl_beta"]},
                    "beta": {"type": "number"},
                    "l": {"type": "integer"},
                    "T": {"type": "number"},
                },
            },
        },
    },
}

KERNEL_SCHEMA = {
    "type": "object",
    "properties": {
        "pointwise": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["kind", "dim", "k"],
                "properties": {
                    "kind": {"enum": ["heat", "biharmonic"]},
                    "dim": {"type": "integer"},
                    "k": {"type": "integer"},
                    "t": {"type": "number"},
                    "points_per_axis": {"type": "integer"},
                    "half_width": {"type": "number"},
                },
            },
        },
        "lp": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["kind", "dim", "k", "p"],
                "properties": {
                    "kind": {"enum": ["heat", "biharmonic"]},
                    "dim": {"type": "integer"},
                    "k": {"type": "integer"},
                    "p": {"type": "number"},
                },
            },
        },
    },
}

DEFAULT_KERNELS = {
    "pointwise": [{"kind": "biharmonic", "dim": 1, "k": k, "t": 1.0} for k in range(3)],
    "lp": [
        {"kind": "biharmonic", "dim": 1, "k": 0, "p": 2.0},
        {"kind": "biharmonic", "dim": 1, "k": 1, "p": 1.5},
        {"kind": "biharmonic", "dim": 1, "k": 2, "p": 1.2},
        {"kind": "heat", "dim": 1, "k": 1, "p": 1.2},
    ],
}


def _read_json(path, schema=None):
    try:
        data = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError("io-failure", str(exc)) from exc
    except json.JSONDecodeError as exc:
        raise ConfigError("invalid-json", str(exc)) from exc
    if schema is not None:
        try:
            jsonschema.validate(data, schema)
        except jsonschema.ValidationError as exc:
            raise ConfigError("schema-violation", exc.message) from exc
    return data


def _out_dir(args, default):
    out = Path(args.out or default)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError("io-failure", str(exc)) from exc
    return out


def _build_u0(spec, grid, flow, epsilon):
    cone = cone_from_dict(spec["cone"])
    v0 = make_self_similar_data(cone, grid, epsilon=epsilon, flow=flow)
    pert = Perturbation.from_dict(spec.get("perturbation", {"kind": "none"}))
    return pert.apply(v0, cone)


def _run_settings(args):
    """Merge a run config file (if any) with explicit solve flags; flags win."""
    data = _read_json(args.config, RUN_SCHEMA) if args.config else {}
    grid = dict(data.get("grid", {}))
    for key, flag in (("dim", "dim"), ("points_per_axis", "points"), ("half_width", "half_width")):
        if getattr(args, flag, None) is not None:
            grid[key] = getattr(args, flag)
    if getattr(args, "flow", None):
        data["flow"] = args.flow
    if getattr(args, "u0", None):
        data["u0"] = _read_json(args.u0, U0_SCHEMA)
    if getattr(args, "horizon", None) is not None:
        data["horizon"] = args.horizon
    if getattr(args, "epsilon", None) is not None:
        data["epsilon"] = args.epsilon
    if getattr(args, "snapshots", None):
        data["snapshots"] = [float(s) for s in args.snapshots.split(",")]
    data["grid"] = grid
    missing = [k for k in ("flow", "u0") if k not in data]
    missing += [f"grid.{k}" for k in ("dim", "points_per_axis", "half_width") if k not in grid]
    if missing:
        raise ConfigError("invalid-config", "missing " + ", ".join(missing))
    data.setdefault("horizon", 1.0)
    data.setdefault("epsilon", DEFAULT_EPSILON)
    data.setdefault("schedule", {})
    return data


def _trajectory(settings):
    flow = make_flow(settings["flow"])
    g = settings["grid"]
    grid = make_grid(g["dim"], g["points_per_axis"], g["half_width"])
    u0 = _build_u0(settings["u0"], grid, flow, settings["epsilon"])
    return integrate(
        u0,
        flow,
        settings["horizon"],
        Schedule(**settings["schedule"]),
        snapshots=settings.get("snapshots"),
        epsilon=settings["epsilon"],
    )


def cmd_solve(args):
    settings = _run_settings(args)
    traj = _trajectory(settings)
    out = _out_dir(args, "selfsim-solve")
    manifest = harness.run_manifest(settings, {"experiment": "solve", "trajectory": traj.metadata})
    mhash = manifest["manifest_sha256"]
    harness.write_json(out / "manifest.json", manifest)
    rows = []
    for i, (t, state) in enumerate(zip(traj.times, traj.states)):
        name = f"snapshot_{i:04d}.field"
        save_field(state, out / name)
        rows.append([i, t, traj.lipschitz_history[i], name])
    harness.write_table(out / "snapshots.csv", ["index", "t", "lipschitz", "file"], rows, mhash)
    plotting.plot_snapshots(traj, out / "snapshots.png", manifest_hash=mhash)
    print(f"solve: {len(traj.times)} snapshots, {traj.metadata['steps']} steps -> {out}")
    if traj.metadata["lipschitz_flagged"]:
        print("solve: Lipschitz persistence bound exceeded", file=sys.stderr)
        return PropertyFailure.exit_code
    return EXIT_PASS


def cmd_profile(args):
    config = harness.load_config(_require_config(args))
    grid = config.make_grid()
    profile = harness._profile_for(config, grid)
    out = _out_dir(args, config.output_dir or f"selfsim-{config.name}")
    manifest = harness.run_manifest(config.to_dict(), {"experiment": "profile"})
    mhash = manifest["manifest_sha256"]
    meta = {k: v for k, v in profile.metadata.items()}
    harness.write_json(out / "profile.json", {"manifest": manifest, "profile": meta})
    save_field(profile.field, out / "profile.field")
    to_csv(profile.field, out / "profile.csv")
    plotting.plot_profile(profile.field, out / "profile.png", radius=config.radius(grid), manifest_hash=mhash)
    print(f"profile: two-time relative mismatch {meta['two_time_relative']:.3e} -> {out}")
    return EXIT_PASS


def _require_config(args):
    if not args.config:
        raise ConfigError("invalid-config", "--config is required")
    return args.config


def _report(report, args, label):
    out = _out_dir(args, report.manifest["config"].get("output_dir") or f"selfsim-{report.name}")
    harness.emit_outputs(report, out)
    for key, ok in report.checks.items():
        if isinstance(ok, bool):
            print(f"{label}: {key:36s} {'PASS' if ok else 'FAIL'}")
    print(f"{label}: {'PASS' if report.passed else 'FAIL'} -> {out}")
    return EXIT_PASS if report.passed else PropertyFailure.exit_code


def cmd_converge(args):
    return _report(harness.run_local_stability(_require_config(args), workers=args.workers), args, "converge")


def cmd_global(args):
    return _report(harness.run_global_stability(_require_config(args), workers=args.workers), args, "global")


def kernel_rows(spec):
    """Rows (estimate_id, n, k, p, fitted_C, fitted_c_or_exponent, residual, expected)."""
    rows = []
    for item in spec.get("pointwise", []):
        kind, dim, t = item["kind"], item["dim"], item.get("t", 1.0)
        n = item.get("points_per_axis", 4096 if dim == 1 else 256)
        L = item.get("half_width", 64.0 if dim == 1 else 24.0)
        grid = make_grid(dim, n, L)
        table = biharmonic_kernel(grid, t) if kind == "biharmonic" else heat_kernel(grid, t)
        fit = verify_pointwise_decay(table, item["k"])
        rows.append(_fit_row(fit, None))
    for item in spec.get("lp", []):
        fit = fit_lp_exponent(item["kind"], item["k"], item["p"], item["dim"])
        rows.append(_fit_row(fit, expected_lp_exponent(item["kind"], item["dim"], item["k"], item["p"])))
    return rows


def _fit_row(fit, expected):
    return {
        "estimate_id": fit.estimate_id,
        "n": fit.dim,
        "k": fit.derivative_order,
        "p": fit.p,
        "fitted_C": fit.fitted_constant,
        "fitted_c_or_exponent": fit.fitted_rate,
        "residual": fit.residual,
        "expected": expected,
    }


KERNEL_COLUMNS = ["estimate_id", "n", "k", "p", "fitted_C", "fitted_c_or_exponent", "residual"]
NORM_COLUMNS = ["family", "flow", "beta", "T", "sup_part", "cylinder_part", "total", "argmax_x", "argmax_R"]


def cmd_kernels(args):
    spec = _read_json(args.config, KERNEL_SCHEMA) if args.config else DEFAULT_KERNELS
    rows = kernel_rows(spec)
    out = _out_dir(args, "selfsim-kernels")
    manifest = harness.run_manifest(spec, {"experiment": "kernels"})
    mhash = manifest["manifest_sha256"]
    harness.write_json(out / "manifest.json", manifest)
    table = [[r[c] for c in KERNEL_COLUMNS] for r in rows]
    harness.write_table(out / "kernels.csv", KERNEL_COLUMNS, table, mhash)
    harness.write_table(out / "kernels.dat", KERNEL_COLUMNS, table, mhash, delimiter=" ")
    plotting.plot_kernel_fits(rows, out / "kernels.png", manifest_hash=mhash)
    failed = [r for r in rows if r["expected"] is None and not r["residual"] <= 0]
    failed += [r for r in rows if r["expected"] is not None and r["residual"] > 0.02]
    print(f"kernels: {len(rows)} estimates, {len(failed)} outside tolerance -> {out}")
    return PropertyFailure.exit_code if failed else EXIT_PASS


def norm_rows(traj, requests):
    flow = traj.flow
    g = None
    rows = []
    for req in requests:
        spec = NormSpec(req["family"], flow, float(req.get("beta", 0.0)), req.get("l"))
        if spec.family in ("YT_beta", "Yl_beta") and g is None:
            g = [
                np.zeros(s.grid.shape) if t <= 0 else duhamel_nonlinearity(s, flow).values
                for t, s in zip(traj.times, traj.states)
            ]
        rep = weighted_norms(traj, float(req["T"]), spec, g=g)
        cyl = rep.argmax.get("cylinder", {})
        rows.append(
            {
                "family": spec.family if spec.l is None else f"{spec.family}[l={spec.l}]",
                "flow": flow.kind,
                "beta": spec.beta,
                "T": float(req["T"]),
                "sup_part": rep.sup_part,
                "cylinder_part": rep.cylinder_part,
                "total": rep.total,
                "argmax_x": cyl.get("x"),
                "argmax_R": cyl.get("R"),
            }
        )
    return rows


def cmd_norms(args):
    settings = _run_settings(args)
    requests = settings.get("norms") or [{"family": "XT", "T": settings["horizon"]}]
    settings["horizon"] = max(settings["horizon"], max(float(r["T"]) for r in requests))
    traj = _trajectory(settings)
    rows = norm_rows(traj, requests)
    out = _out_dir(args, "selfsim-norms")
    manifest = harness.run_manifest(settings, {"experiment": "norms"})
    mhash = manifest["manifest_sha256"]
    harness.write_json(out / "manifest.json", manifest)
    table = [[r[c] for c in NORM_COLUMNS] for r in rows]
    harness.write_table(out / "norms.csv", NORM_COLUMNS, table, mhash)
    harness.write_table(out / "norms.dat", NORM_COLUMNS, table, mhash, delimiter=" ")
    plotting.plot_norms(rows, out / "norms.png", manifest_hash=mhash)
    for r in rows:
        print(f"norms: {r['family']:14s} T={r['T']:<8g} total={r['total']:.6g}")
    return EXIT_PASS


def build_parser():
    parser = argparse.ArgumentParser(prog="selfsim", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON configuration file")
        p.add_argument("--out", help="output directory")
        p.add_argument("--workers", type=int, default=None, help="worker processes (SELFSIM_WORKERS overrides)")
        return p

    def run_flags(p):
        p.add_argument("--flow", choices=["mcf", "sd", "wf"])
        p.add_argument("--dim", type=int)
        p.add_argument("--points", type=int)
        p.add_argument("--half-width", type=float, dest="half_width")
        p.add_argument("--horizon", type=float)
        p.add_argument("--snapshots", help="comma-separated snapshot times")
        p.add_argument("--u0", help="initial-data spec file {cone, perturbation}")
        p.add_argument("--epsilon", type=float, help="small-slope threshold for the initial data")

    run_flags(common(sub.add_parser("solve", help="integrate one trajectory")))
    common(sub.add_parser("profile", help="extract the self-similar profile"))
    common(sub.add_parser("converge", help="local (compact set) lambda sweep"))
    common(sub.add_parser("global", help="global weighted lambda sweep"))
    common(sub.add_parser("kernels", help="kernel estimate fits"))
    run_flags(common(sub.add_parser("norms", help="scale-invariant norms of a trajectory")))
    return parser


COMMANDS = {
    "solve": cmd_solve,
    "profile": cmd_profile,
    "converge": cmd_converge,
    "global": cmd_global,
    "kernels": cmd_kernels,
    "norms": cmd_norms,
}


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("default")
            return COMMANDS[args.command](args)
    except SelfsimError as exc:
        print(f"selfsim {args.command}: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
