"""Command-line entry point: ``passive-imaging run <config.json>``.

A run validates the configuration against the bundled JSON schema, executes
one scenario, and writes its artifacts plus ``report.json`` and
``manifest.json`` into the output directory. Everything except the wall-clock
fields of the manifest is a deterministic function of (config, seed).

Exit status is 0 on success, 2 when a check of a verification scenario fails,
and 1 on any error.
"""
from __future__ import annotations

import argparse
import csv
import json
import platform
import sys
import time
import warnings
from importlib import metadata, resources
from pathlib import Path

import jsonschema
import numpy as np
import scipy

from . import checks as chk
from .correlation import CorrelationSeries, DerivativeResidual, TwistedReport, closed_form_wave_correlation, empirical_correlation
from .dynamics import Trajectory, simulate_first_order, simulate_wave
from .errors import ConfigError, PassiveImagingError
from .modal import build_interval_modes, build_rectangle_modes, build_torus_model, read_system_matrix, GeneralSystem
from .noise import NoiseSpec, SymbolField
from .scattering import ResidualTable
from .storage import canonical_json, sha256_bytes, sha256_file, write_array_bundle

VERIFY_SCENARIOS = {"verify-exact", "verify-wave", "verify-semiclassical", "verify-scattering", "wigner"}

EXIT_OK, EXIT_ERROR, EXIT_FAILED = 0, 1, 2


def load_schema() -> dict:
    return json.loads(resources.files(__package__).joinpath("schema/run_config.json").read_text())


def bundled_configs() -> dict:
    root = resources.files(__package__).joinpath("configs")
    return {p.name[:-5]: Path(str(p)) for p in root.iterdir() if p.name.endswith(".json")}


def _pointer(path) -> str:
    return "/" + "/".join(str(p) for p in path)


def validate_config(cfg, base_dir=".") -> dict:
    """Schema validation plus the checks the schema cannot express.

    Raises :class:`ConfigError` carrying the JSON pointer of the first
    offending value. File references are resolved against ``base_dir``.
    """
    validator = jsonschema.Draft202012Validator(load_schema())
    errors = sorted(validator.iter_errors(cfg), key=lambda e: (len(e.absolute_path), list(map(str, e.absolute_path))))
    if errors:
        err = errors[0]
        raise ConfigError(err.message, _pointer(err.absolute_path))
    base = Path(base_dir)
    for key in cfg.get("tolerances", {}):
        if key not in chk.TOLERANCES:
            raise ConfigError(f"unknown check {key!r}", f"/tolerances/{key}")
    refs = [("model", "file"), ("dynamics", "trajectory")]
    for block, key in refs:
        val = cfg.get(block, {}).get(key)
        if val is None:
            continue
        target = base / val
        if key == "trajectory":
            target = target.with_suffix(".bin")
        if not target.exists():
            raise ConfigError(f"referenced file does not exist: {target}", f"/{block}/{key}")
    model = cfg.get("model", {})
    if model.get("kind") == "matrix" and "file" not in model:
        raise ConfigError("a matrix model needs 'file'", "/model")
    noise = cfg.get("noise", {})
    if noise.get("kind") == "twisted" and "L0" not in noise:
        raise ConfigError("twisted noise needs 'L0'", "/noise")
    scen = cfg["scenario"]
    if scen in ("simulate", "correlate") and "model" not in cfg and "trajectory" not in cfg.get("dynamics", {}):
        raise ConfigError(f"scenario {scen} needs a model", "/model")
    return cfg


def build_model(mcfg):
    kind = mcfg["kind"]
    if kind == "interval":
        return build_interval_modes(mcfg.get("n_modes", 64), mcfg.get("length", 20.0), mcfg.get("bc", "dirichlet"))
    if kind == "rectangle":
        return build_rectangle_modes(mcfg.get("nx", 8), mcfg.get("ny", 8), mcfg.get("Lx", 1.0), mcfg.get("Ly", 1.0),
                                     mcfg.get("bc", "dirichlet"))
    if kind == "torus":
        return build_torus_model(mcfg.get("n_grid", 64), mcfg.get("length", 2 * np.pi))
    raise ConfigError(f"model kind {kind!r} is not a modal model", "/model/kind")


def build_noise(ncfg, seed) -> NoiseSpec:
    if not ncfg or ncfg["kind"] == "white":
        return NoiseSpec.white(channels=(ncfg or {}).get("channels", 1), seed=seed)
    return NoiseSpec.twisted(np.asarray(ncfg["L0"], dtype=float), seed=seed)


def scenario_params(cfg) -> dict:
    """Flatten the typed blocks into the parameter dict the checks read."""
    p = {}
    m = cfg.get("model", {})
    for key in ("n_modes", "length", "bc"):
        if key in m:
            p[key] = m[key]
    d = cfg.get("dynamics", {})
    for key in ("a", "dt", "T"):
        if key in d:
            p[key] = d[key]
    if "probes" in d:
        p["A"], p["B"] = d["probes"][0], d["probes"][-1]
    p.update(cfg.get("estimator", {}))
    p.update(cfg.get("params", {}))
    return p


# ---------------------------------------------------------------------------
# plot data
# ---------------------------------------------------------------------------

def _write_rows(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(v)) if not isinstance(v, str) else v for v in row])


def emit_plotdata(obj, stem) -> list:
    """Write a static, plot-ready table for ``obj`` next to ``stem``.

    Correlation series, residual tables, derivative-relation residuals and
    twisted-noise reports become CSV; symbol fields become a long-format CSV
    (``x, xi, re, im``) plus their JSON serialization. Returns the paths.
    """
    stem = Path(stem)
    csv_path = stem.with_suffix(".csv")
    if isinstance(obj, CorrelationSeries):
        obj.to_csv(csv_path)
        return [csv_path, csv_path.with_suffix(".json")]
    if isinstance(obj, ResidualTable):
        obj.to_csv(csv_path)
        return [csv_path]
    if isinstance(obj, DerivativeResidual):
        _write_rows(csv_path, ["tau", "lhs", "rhs", "residual"], zip(obj.tau, obj.lhs, obj.rhs, obj.residual))
        return [csv_path]
    if isinstance(obj, TwistedReport):
        _write_rows(csv_path, ["p", "remainder_norm"], zip(obj.p, obj.remainder_norm))
        return [csv_path]
    if isinstance(obj, SymbolField):
        X, XI = np.meshgrid(obj.x, obj.xi, indexing="ij")
        v = obj.values
        _write_rows(csv_path, ["x", "xi", "re", "im"], zip(X.ravel(), XI.ravel(), v.real.ravel(), v.imag.ravel()))
        json_path = stem.with_suffix(".json")
        obj.save(json_path)
        return [csv_path, json_path]
    raise TypeError(f"no plot data format for {type(obj).__name__}")


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    raise TypeError(f"not serializable: {type(obj)}")


def _write_json(path, obj):
    Path(path).write_text(json.dumps(obj, sort_keys=True, indent=1, default=_jsonable) + "\n")
    return Path(path)


# ---------------------------------------------------------------------------
# scenarios
# ---------------------------------------------------------------------------

def _simulate(cfg, base, seed, threads):
    d = cfg.get("dynamics", {})
    mcfg = cfg["model"]
    spec = build_noise(cfg.get("noise"), seed)
    dt, T = d.get("dt", 0.01), d.get("T", 100.0)
    if mcfg["kind"] == "matrix":
        sysm = GeneralSystem.from_matrix(read_system_matrix(base / mcfg["file"]))
        probes = d.get("probes")
        return simulate_first_order(sysm, np.eye(sysm.n), dt, T, seed, probes, burn_in=d.get("burn_in"))
    model = build_model(mcfg)
    return simulate_wave(model, d.get("a", 0.0), spec, d.get("probes", [0.0]), dt, T, seed,
                         burn_in=d.get("burn_in"), threads=threads)


def run_simulate(cfg, base, seed, threads, out: Path, tol):
    traj = _simulate(cfg, base, seed, threads)
    files = list(traj.save(out / "trajectory"))
    summary = {"steps": traj.steps, "dt": traj.dt, "probes": np.asarray(traj.probes).tolist(),
               "variance": np.var(traj.samples, axis=0).tolist()}
    return [], files, summary


def run_correlate(cfg, base, seed, threads, out: Path, tol):
    d, e = cfg.get("dynamics", {}), cfg.get("estimator", {})
    if "trajectory" in d:
        traj = Trajectory.load(base / d["trajectory"])
        files = []
    else:
        traj = _simulate(cfg, base, seed, threads)
        files = list(traj.save(out / "trajectory"))
    pa, pb = e.get("probe_a", 0), e.get("probe_b", min(1, traj.samples.shape[1] - 1))
    series = empirical_correlation(traj, traj, e.get("tau_max", 10.0), e.get("segments", 8), pa, pb)
    files += emit_plotdata(series, out / "correlation")
    summary = {"lags": len(series.lags), "probe_a": pa, "probe_b": pb}
    mcfg = cfg.get("model", {})
    if mcfg.get("kind") == "interval" and cfg.get("noise", {}).get("kind", "white") == "white" and "a" in d:
        model = build_model(mcfg)
        probes = np.asarray(traj.probes, dtype=float)
        ref = closed_form_wave_correlation(model, d["a"], series.lags, probes[pa], probes[pb])
        files += emit_plotdata(CorrelationSeries(series.lags, ref, None, {"source": "closed-form"}), out / "closed_form")
        emp = series.entry().real
        summary["relative_l2_vs_closed_form"] = float(np.linalg.norm(emp - ref) / np.linalg.norm(ref))
    return [], files, summary


def _collect(outcome, out: Path):
    files = []
    for name, obj in outcome.artifacts.items():
        if isinstance(obj, (CorrelationSeries, ResidualTable, DerivativeResidual, TwistedReport, SymbolField)):
            files += emit_plotdata(obj, out / name)
        elif isinstance(obj, Trajectory):
            files += list(obj.save(out / name))
    return files


def run_verify_exact(cfg, base, seed, threads, out, tol):
    p = scenario_params(cfg)
    H = None
    if cfg.get("model", {}).get("kind") == "matrix":
        H = read_system_matrix(base / cfg["model"]["file"])
    outcome = chk.run_verify_exact(p, tol, seed, H)
    return outcome.checks, _collect(outcome, out), {}


def run_verify_wave(cfg, base, seed, threads, out, tol):
    outcome = chk.run_verify_wave(scenario_params(cfg), tol, seed, threads=threads)
    return outcome.checks, _collect(outcome, out), {}


def run_verify_semiclassical(cfg, base, seed, threads, out, tol):
    outcome = chk.run_verify_semiclassical(scenario_params(cfg), tol, seed)
    files, timings = [], {}
    for name, rep in outcome.artifacts["semiclassical"].items():
        d = rep.as_dict()
        # wall-clock figures go to the manifest so the outputs stay reproducible
        timings[name] = [entry.pop("seconds") for entry in d["ladder"]]
        files.append(_write_json(out / f"semiclassical_{name}.json", d))
    return outcome.checks, files, {"_timings": timings}


def run_verify_scattering(cfg, base, seed, threads, out, tol):
    outcome = chk.run_verify_scattering(scenario_params(cfg), tol, seed)
    return outcome.checks, _collect(outcome, out), {}


def run_wigner(cfg, base, seed, threads, out, tol):
    outcome = chk.run_wigner(scenario_params(cfg), tol, seed, threads=threads)
    files = list(write_array_bundle(out / "ensemble", outcome.artifacts["ensemble"], {"seed": seed}))
    files += emit_plotdata(outcome.artifacts["spec"].symbol, out / "source_symbol")
    rows = outcome.artifacts["pairings"]
    path = out / "pairings.csv"
    _write_rows(path, ["symbol", "mean", "stderr", "oracle"], [[r["symbol"], r["mean"], r["stderr"], r["oracle"]] for r in rows])
    return outcome.checks, files + [path], {}


SCENARIOS = {
    "simulate": run_simulate,
    "correlate": run_correlate,
    "verify-exact": run_verify_exact,
    "verify-wave": run_verify_wave,
    "verify-semiclassical": run_verify_semiclassical,
    "verify-scattering": run_verify_scattering,
    "wigner": run_wigner,
}


def _versions():
    try:
        own = metadata.version("passive-imaging")
    except metadata.PackageNotFoundError:
        own = "unknown"
    return {"passive_imaging": own, "python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__, "jsonschema": metadata.version("jsonschema")}


def run(config_path, out=None, threads=1, seed_override=None) -> int:
    """Execute one configured run and return its exit status."""
    config_path = Path(config_path)
    raw = config_path.read_bytes()
    try:
        cfg = json.loads(raw)
    except ValueError as exc:
        raise ConfigError(f"invalid JSON: {exc}", "")
    base = config_path.parent
    validate_config(cfg, base)
    seed = int(cfg["seed"] if seed_override is None else seed_override)
    out = Path(out or cfg.get("output") or f"run-{cfg['scenario']}")
    out.mkdir(parents=True, exist_ok=True)
    tol = chk.Tolerances(dict(cfg.get("tolerances", {})))
    t0 = time.perf_counter()
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        results, files, summary = SCENARIOS[cfg["scenario"]](cfg, base, seed, threads, out, tol)
    wall = time.perf_counter() - t0
    timings = summary.pop("_timings", None)
    passed = all(c.passed for c in results)
    report = {
        "scenario": cfg["scenario"],
        "seed": seed,
        "passed": passed,
        "checks": [c.as_dict() for c in results],
        "tolerance_overrides": tol.log,
        "warnings": sorted({str(w.message) for w in caught}),
        "summary": summary,
    }
    files = [Path(f) for f in files] + [_write_json(out / "report.json", report)]
    status = EXIT_FAILED if (cfg["scenario"] in VERIFY_SCENARIOS and not passed) else EXIT_OK
    manifest = {
        "config": str(config_path),
        "config_sha256": sha256_bytes(raw),
        "config_canonical_sha256": sha256_bytes(canonical_json(cfg).encode()),
        "scenario": cfg["scenario"],
        "seeds": {"seed": seed, "config_seed": cfg["seed"], "overridden": seed_override is not None},
        "threads": threads,
        "versions": _versions(),
        "wall_time_s": wall,
        "timings": timings or {},
        "exit_status": status,
        "files": [{"path": f.name, "bytes": f.stat().st_size, "sha256": sha256_file(f)}
                  for f in sorted(set(files), key=lambda f: f.name)],
    }
    _write_json(out / "manifest.json", manifest)
    for c in results:
        mark = "PASS" if c.passed else "FAIL"
        print(f"{mark} {c.name}: {c.value:.4g} ({'<=' if c.sense == 'max' else '>='} {c.tolerance:g}) {c.detail}")
    print(f"{cfg['scenario']}: {'ok' if status == EXIT_OK else 'checks failed'}; outputs in {out}")
    return status


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="passive-imaging", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="execute a scenario described by a JSON config")
    r.add_argument("config", help="path to the run configuration")
    r.add_argument("--out", help="output directory (default: config 'output' or run-<scenario>)")
    r.add_argument("--threads", type=int, default=1, help="workers for ensemble members")
    r.add_argument("--seed-override", type=int, default=None, help="replace the config seed")
    sub.add_parser("configs", help="list the bundled example configurations")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "configs":
        for name, path in sorted(bundled_configs().items()):
            print(f"{name}\t{path}")
        return EXIT_OK
    if args.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return EXIT_ERROR
    try:
        return run(args.config, args.out, args.threads, args.seed_override)
    except (PassiveImagingError, OSError, ValueError, ArithmeticError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
