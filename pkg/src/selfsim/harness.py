"""Lambda-sweep stability experiments, configuration and report output."""

import hashlib
import json
import os
import platform
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field as dc_field
from datetime import datetime, timezone
from importlib import metadata as importlib_metadata
from pathlib import Path

import jsonschema
import numpy as np

from .errors import ConfigError, SelfsimError
from .fields import Field, jet
from .flows import make_flow
from .grid import make_grid
from .norms import weighted_lipschitz
from .semigroup import Schedule, integrate
from .backgrounds import ExprBackground
from .similarity import (
    Perturbation,
    cone_from_dict,
    extract_profile,
    make_self_similar_data,
    rescale,
)

CONFIG_SCHEMA = {
    "type": "object",
    "required": ["flow", "grid", "cone"],
    "additionalProperties": False,
    "properties": {
        "name": {"type": "string"},
        "mode": {"enum": ["local", "global"]},
        "flow": {"enum": ["mcf", "sd", "wf", "MCF", "SD", "WF"]},
        "grid": {
            "type": "object",
            "required": ["dim", "points_per_axis", "half_width"],
            "additionalProperties": False,
            "properties": {
                "dim": {"type": "integer"},
                "points_per_axis": {"type": "integer"},
                "half_width": {"type": "number", "exclusiveMinimum": 0},
            },
        },
        "cone": {"type": "object"},
        "perturbation": {
            "type": "object",
            "required": ["kind"],
            "properties": {"kind": {"enum": ["none", "shift", "bump", "decay-tail"]}},
        },
        "lambdas": {"type": "array", "items": {"type": "number"}, "minItems": 1},
        "compact_radius": {"type": ["number", "null"]},
        "safe_radius": {"type": ["number", "null"]},
        "k_max": {"type": "integer", "minimum": 0, "maximum": 3},
        "beta": {"type": ["number", "null"]},
        "cross_check_lambda": {"type": ["number", "null"]},
        "seed": {"type": "integer"},
        "output_dir": {"type": ["string", "null"]},
        "schedule": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "dt_uniform": {"type": "number", "exclusiveMinimum": 0},
                "theta": {"type": "number", "exclusiveMinimum": 0},
                "dt_first": {"type": ["number", "null"]},
            },
        },
        "tolerances": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "profile": {"type": "number"},
                "epsilon": {"type": "number"},
                "lipschitz_constant": {"type": "number"},
                "path": {"type": "number"},
                "witness_constant": {"type": "number"},
            },
        },
        "checks": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "monotone_orders": {"type": "array", "items": {"type": "integer"}},
                "rate_range": {"type": "array", "items": {"type": "number"}, "minItems": 2, "maxItems": 2},
                "ratio": {
                    "type": "object",
                    "required": ["from", "to", "max"],
                    "properties": {
                        "from": {"type": "number"},
                        "to": {"type": "number"},
                        "max": {"type": "number"},
                    },
                },
            },
        },
    },
}

DEFAULT_TOLERANCES = {
    "profile": 5e-4,
    "epsilon": 0.2,
    "lipschitz_constant": 2.0,
    "path": 1e-4,
    "witness_constant": 5.0,
}


@dataclass(frozen=True)
class ExperimentConfig:
    flow: str
    grid: dict
    cone: dict
    name: str = "experiment"
    mode: str = "local"
    perturbation: dict = dc_field(default_factory=lambda: {"kind": "none"})
    lambdas: tuple = (1.0, 2.0, 4.0, 8.0, 16.0)
    compact_radius: float = None
    safe_radius: float = None
    k_max: int = 2
    beta: float = None
    cross_check_lambda: float = None
    seed: int = 0
    output_dir: str = None
    schedule: dict = dc_field(default_factory=dict)
    tolerances: dict = dc_field(default_factory=dict)
    checks: dict = dc_field(default_factory=dict)

    def __post_init__(self):
        lams = tuple(float(v) for v in self.lambdas)
        object.__setattr__(self, "lambdas", lams)
        if lams[0] != 1.0 or any(b <= a for a, b in zip(lams, lams[1:])):
            raise ConfigError("invalid-schedule", "lambda schedule must start at 1 and increase")
        object.__setattr__(self, "tolerances", {**DEFAULT_TOLERANCES, **self.tolerances})
        if self.mode == "global":
            pert = self.perturbation
            if pert.get("kind") != "decay-tail":
                raise ConfigError("invalid-config", "global mode requires a decay-tail perturbation")
            if self.beta is None or float(pert.get("beta", 2.0)) != float(self.beta):
                raise ConfigError("invalid-config", "decay-tail beta must match the configured beta")

    def to_dict(self):
        d = asdict(self)
        d["lambdas"] = list(self.lambdas)
        return d

    @property
    def flow_spec(self):
        return make_flow(self.flow)

    def make_grid(self):
        g = self.grid
        return make_grid(g["dim"], g["points_per_axis"], g["half_width"])

    def make_schedule(self):
        return Schedule(**self.schedule)

    def cone_data(self):
        return cone_from_dict(self.cone)

    def perturbation_data(self):
        return Perturbation.from_dict(self.perturbation)

    def radius(self, grid):
        return grid.half_width / 4 if self.compact_radius is None else float(self.compact_radius)

    def safe(self, grid):
        return grid.half_width / 2 if self.safe_radius is None else float(self.safe_radius)


def load_config(source):
    """ExperimentConfig from a dict, a JSON string path or a Path."""
    if isinstance(source, ExperimentConfig):
        return source
    if isinstance(source, (str, Path)):
        try:
            data = json.loads(Path(source).read_text())
        except OSError as exc:
            raise ConfigError("io-failure", str(exc)) from exc
        except json.JSONDecodeError as exc:
            raise ConfigError("invalid-json", str(exc)) from exc
    else:
        data = dict(source)
    try:
        jsonschema.validate(data, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        raise ConfigError("schema-violation", exc.message) from exc
    return ExperimentConfig(**data)


def fixture_path(name):
    return Path(__file__).parent / "fixtures" / f"{name}.json"


def load_fixture(name, **overrides):
    data = json.loads(fixture_path(name).read_text())
    data.update(overrides)
    return load_config(data)


def canonical_hash(obj):
    text = json.dumps(obj, sort_keys=True, separators=(",", ":"), default=_json_default)
    return hashlib.sha256(text.encode()).hexdigest()


def _json_default(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(type(obj).__name__)


def run_manifest(config_dict, extra=None):
    versions = {}
    for pkg in ("numpy", "scipy", "sympy"):
        try:
            versions[pkg] = importlib_metadata.version(pkg)
        except importlib_metadata.PackageNotFoundError:
            versions[pkg] = None
    manifest = {
        "config": config_dict,
        "config_sha256": canonical_hash(config_dict),
        "versions": versions,
        "python": platform.python_version(),
    }
    if extra:
        manifest.update(extra)
    manifest["manifest_sha256"] = canonical_hash(manifest)
    return manifest


def initial_data(config, grid=None):
    grid = grid or config.make_grid()
    cone = config.cone_data()
    eps = config.tolerances["epsilon"]
    v0 = make_self_similar_data(cone, grid, epsilon=eps, flow=config.flow_spec)
    return v0, config.perturbation_data().apply(v0, cone)


def _worker_count(workers):
    env = os.environ.get("SELFSIM_WORKERS")
    if env:
        try:
            return max(1, int(env))
        except ValueError as exc:
            raise ConfigError("invalid-workers", env) from exc
    return max(1, int(workers or 1))


def _map(fn, items, workers):
    n = _worker_count(workers)
    if n == 1 or len(items) == 1:
        return [fn(item) for item in items]
    with ProcessPoolExecutor(max_workers=min(n, len(items))) as pool:
        return list(pool.map(fn, items))


def ck_errors(u, psi, radius, k_max):
    """e_k = max_{|x|<=radius} sum_{|gamma|<=k} |d^gamma (u - psi)| for k = 0..k_max."""
    grid = u.grid
    ju, jp = jet(u, k_max), jet(psi, k_max)
    mask = grid.ball_mask(radius)
    out, acc = [], np.zeros(grid.shape)
    for k in range(k_max + 1):
        for g in ju.higher(k):
            acc = acc + np.abs(ju[g] - jp[g])
        out.append(float(np.max(acc[mask])))
    return out


def _gradient(j):
    d = j.grid.dim
    return np.stack([j[tuple(int(i == a) for i in range(d))] for a in range(d)])


@dataclass(frozen=True)
class _Job:
    config: dict
    lam: float
    profile: Field


def _run_lambda(job):
    config = load_config(job.config)
    grid, flow = config.make_grid(), config.flow_spec
    _, u0 = initial_data(config, grid)
    eps = config.tolerances["epsilon"]
    u_lam = rescale(u0, job.lam)
    traj = integrate(
        u_lam,
        flow,
        1.0,
        config.make_schedule(),
        snapshots=[1.0],
        epsilon=eps,
        lipschitz_constant=config.tolerances["lipschitz_constant"],
    )
    final = traj.states[-1]
    out = {
        "lambda": job.lam,
        "errors": ck_errors(final, job.profile, config.radius(grid), config.k_max),
        "grad0": float(traj.lipschitz_history[0]),
        "max_grad": float(traj.metadata["max_grad"]),
        "steps": traj.metadata["steps"],
    }
    if config.mode == "global":
        ju, jp = jet(final, 1), jet(job.profile, 1)
        safe = grid.ball_mask(config.safe(grid))
        d0 = np.abs(ju[(0,) * grid.dim] - jp[(0,) * grid.dim])
        d_grad = np.sqrt(np.sum((_gradient(ju) - _gradient(jp)) ** 2, axis=0))
        weight = 1.0 + grid.radius ** float(config.beta)
        out["global_c1"] = float(np.max((d0 + d_grad)[safe]))
        out["witness"] = float(np.max((weight * d_grad)[safe]))
        pert = config.perturbation_data()
        tail = ExprBackground(pert.tail_expression(grid.dim), grid.dim, "tail").rescaled(job.lam, flow.alpha)
        out["seminorm_lambda"] = weighted_lipschitz(Field(grid, np.zeros(grid.shape), tail), config.beta)
    return out


@dataclass
class ConvergenceReport:
    name: str
    mode: str
    flow: str
    lambdas: list
    errors: dict
    fitted_rate: float
    checks: dict
    passed: bool
    manifest: dict
    profile: dict = dc_field(default_factory=dict)
    global_metrics: dict = dc_field(default_factory=dict)
    cross_check: dict = dc_field(default_factory=dict)
    lipschitz: dict = dc_field(default_factory=dict)
    notes: list = dc_field(default_factory=list)
    timestamp: str = ""

    def to_dict(self):
        return asdict(self)


def _nonincreasing(values, rel=1e-12):
    return all(b <= a * (1 + rel) + 1e-300 for a, b in zip(values, values[1:]))


def _fit_rate(lambdas, values):
    lam = np.asarray(lambdas[1:], dtype=float)
    vals = np.asarray(values[1:], dtype=float)
    if lam.size < 2 or np.any(vals <= 0):
        return float("nan")
    return float(np.polyfit(np.log(lam), np.log(vals), 1)[0])


def _profile_for(config, grid):
    return extract_profile(
        config.flow_spec,
        config.cone_data(),
        grid,
        tolerance=config.tolerances["profile"],
        radius=config.radius(grid),
        schedule=config.make_schedule(),
        epsilon=config.tolerances["epsilon"],
    )


def _sweep(config, workers):
    grid = config.make_grid()
    profile = _profile_for(config, grid)
    cfg = config.to_dict()
    results = _map(_run_lambda, [_Job(cfg, lam, profile.field) for lam in config.lambdas], workers)
    return grid, profile, results


def _common_report(config, profile, results, workers):
    lambdas = list(config.lambdas)
    errors = {f"e{k}": [r["errors"][k] for r in results] for k in range(config.k_max + 1)}
    checks, notes = {}, []
    for k in config.checks.get("monotone_orders", [0]):
        key = f"e{k}"
        ok = _nonincreasing(errors[key][1:])
        checks[f"monotone_{key}_from_second"] = ok
    endpoint = all(errors[f"e{k}"][-1] <= errors[f"e{k}"][0] for k in range(config.k_max + 1))
    if config.perturbation.get("kind", "none") != "none":
        checks["endpoint_not_worse"] = endpoint
    for k in range(config.k_max + 1):
        if not _nonincreasing(errors[f"e{k}"][1:]):
            notes.append(f"non-monotone-error: e{k} increases somewhere after the first entry")
    rate = _fit_rate(lambdas, errors["e0"])
    if "rate_range" in config.checks:
        lo, hi = config.checks["rate_range"]
        checks["rate_in_range"] = bool(lo <= rate <= hi)
    if "ratio" in config.checks:
        spec = config.checks["ratio"]
        i, j = lambdas.index(float(spec["from"])), lambdas.index(float(spec["to"]))
        value = errors["e0"][j] / errors["e0"][i]
        checks["ratio_value"] = value
        checks["ratio_ok"] = bool(value <= spec["max"])
    if config.perturbation.get("kind", "none") == "none":
        scale = profile.metadata["scale"]
        checks["unperturbed_within_tolerance"] = bool(
            max(errors["e0"]) <= config.tolerances["profile"] * scale
        )
    ratios = [r["max_grad"] / r["grad0"] for r in results if r["grad0"] > 0]
    lip = {
        "max_ratio": max(ratios) if ratios else 0.0,
        "constant": config.tolerances["lipschitz_constant"],
        "per_lambda": ratios,
    }
    checks["lipschitz_persistence"] = bool(lip["max_ratio"] <= lip["constant"])
    cross = {}
    if config.cross_check_lambda:
        lam = float(config.cross_check_lambda)
        mismatch = cross_check_rescaling_paths(config, lam, profile=profile)
        cross = {"lambda": lam, "relative_mismatch": mismatch, "tolerance": config.tolerances["path"]}
        checks["paths_agree"] = bool(mismatch <= config.tolerances["path"])
    return errors, checks, notes, rate, lip, cross


def _profile_summary(profile):
    meta = dict(profile.metadata)
    return {k: meta[k] for k in sorted(meta)}


def _finish(config, kind, errors, checks, notes, rate, lip, cross, profile, global_metrics=None):
    passed = all(v for k, v in checks.items() if isinstance(v, bool))
    cfg = config.to_dict()
    manifest = run_manifest(cfg, {"experiment": kind})
    return ConvergenceReport(
        name=config.name,
        mode=config.mode,
        flow=config.flow_spec.kind,
        lambdas=list(config.lambdas),
        errors=errors,
        fitted_rate=rate,
        checks=checks,
        passed=passed,
        manifest=manifest,
        profile=_profile_summary(profile),
        global_metrics=global_metrics or {},
        cross_check=cross,
        lipschitz=lip,
        notes=notes,
        timestamp=datetime.now(timezone.utc).isoformat(timespec="seconds"),
    )


def run_local_stability(config, workers=None):
    """C^k(K) errors of u_lambda(., 1) against the profile over the lambda schedule."""
    config = load_config(config)
    if config.mode != "local":
        raise ConfigError("invalid-config", "run_local_stability needs mode 'local'")
    _, profile, results = _sweep(config, workers)
    parts = _common_report(config, profile, results, workers)
    return _finish(config, "local", *parts, profile)


def run_global_stability(config, workers=None):
    """Global C^1 errors, equi-decay witness and [p_lambda]_beta over the schedule."""
    config = load_config(config)
    if config.mode != "global":
        raise ConfigError("invalid-config", "run_global_stability needs mode 'global'")
    grid, profile, results = _sweep(config, workers)
    errors, checks, notes, rate, lip, cross = _common_report(config, profile, results, workers)
    pert = config.perturbation_data()
    seminorm = pert.seminorm_exact(grid.dim)
    global_c1 = [r["global_c1"] for r in results]
    witness = [r["witness"] for r in results]
    seminorm_lam = [r["seminorm_lambda"] for r in results]
    constant = max(witness) / seminorm
    checks["global_c1_nonincreasing"] = _nonincreasing(global_c1)
    checks["witness_bounded"] = bool(np.isfinite(constant) and constant <= config.tolerances["witness_constant"])
    checks["seminorm_lambda_not_larger"] = all(
        s <= seminorm * (1 + 1e-9) for lam, s in zip(config.lambdas, seminorm_lam) if lam > 1
    )
    metrics = {
        "beta": config.beta,
        "seminorm_beta": seminorm,
        "global_c1": global_c1,
        "witness": witness,
        "witness_constant": constant,
        "seminorm_lambda": seminorm_lam,
        "safe_radius": config.safe(grid),
    }
    return _finish(config, "global", errors, checks, notes, _fit_rate(config.lambdas, global_c1), lip, cross, profile, metrics)


def cross_check_rescaling_paths(config, lam, profile=None, radius=None):
    """Relative mismatch of (rescale data, integrate to 1) vs (integrate to lam^alpha, rescale)."""
    config = load_config(config)
    if lam == 1:
        return 0.0
    grid, flow = config.make_grid(), config.flow_spec
    _, u0 = initial_data(config, grid)
    eps, sched = config.tolerances["epsilon"], config.make_schedule()
    path_a = integrate(rescale(u0, lam), flow, 1.0, sched, snapshots=[1.0], epsilon=eps).states[-1]
    horizon = lam**flow.alpha
    try:
        late = integrate(u0, flow, horizon, sched, snapshots=[horizon], epsilon=eps).states[-1]
        path_b = rescale(late, lam)
    except SelfsimError as exc:
        if exc.reason == "out-of-domain":
            raise ConfigError("path-B-domain-overflow", f"lambda={lam}") from exc
        raise
    mask = grid.ball_mask(config.radius(grid) if radius is None else radius)
    a, b = path_a.full()[mask], path_b.full()[mask]
    scale = float(np.max(np.abs(a)))
    diff = float(np.max(np.abs(a - b)))
    return diff / scale if scale > 0 else diff


def _atomic_write(path, data, mode="w"):
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, mode + ("b" if isinstance(data, bytes) else "")) as fh:
            fh.write(data)
        os.replace(tmp, path)
    except OSError as exc:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise ConfigError("io-failure", str(exc)) from exc


def write_json(path, obj):
    _atomic_write(path, json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n")


def write_table(path, header, rows, manifest_hash=None, delimiter=","):
    lines = []
    if manifest_hash:
        lines.append(f"# manifest_sha256={manifest_hash}")
    if delimiter == ",":
        lines.append(",".join(header))
    else:
        lines.append("# " + delimiter.join(header))
    for row in rows:
        lines.append(delimiter.join(_fmt(v) for v in row))
    _atomic_write(path, "\n".join(lines) + "\n")


def _fmt(value):
    if value is None:
        return ""
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, (list, tuple)):
        return " ".join(_fmt(v) for v in value)
    return str(value)


def emit_outputs(report, out_dir, figures=True):
    """report.json, curves.csv, curves.dat and (optionally) a convergence figure."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError("io-failure", str(exc)) from exc
    data = report.to_dict() if hasattr(report, "to_dict") else dict(report)
    manifest_hash = data.get("manifest", {}).get("manifest_sha256")
    written = [out / "report.json"]
    write_json(out / "report.json", data)
    errors = data.get("errors") or {}
    keys = sorted(errors)
    header = ["lambda"] + keys
    extra = data.get("global_metrics") or {}
    for name in ("global_c1", "witness", "seminorm_lambda"):
        if name in extra:
            header.append(name)
    rows = []
    for i, lam in enumerate(data.get("lambdas") or []):
        row = [lam] + [errors[k][i] for k in keys]
        row += [extra[name][i] for name in ("global_c1", "witness", "seminorm_lambda") if name in extra]
        rows.append(row)
    write_table(out / "curves.csv", header, rows, manifest_hash)
    write_table(out / "curves.dat", header, rows, manifest_hash, delimiter=" ")
    written += [out / "curves.csv", out / "curves.dat"]
    if figures and rows:
        from .plotting import plot_convergence

        written.append(plot_convergence(data, out / "convergence.png", manifest_hash))
    return written
