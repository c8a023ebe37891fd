"""Command-line surface: simulate, ensemble, verify, kappa, replay, schema."""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
import tempfile
from pathlib import Path

import numpy as np

from . import __version__
from .config import RunConfig, RunManifest, apply_overrides, parse_config, schema_doc, serialize_config, sha256_file
from .diagnostics import (
    SampleFamily,
    calibration_record,
    coercivity_sample,
    estimate_lemma_constant,
    oracle_error,
    scheme_cross_check,
)
from .ensemble import bound_report, config_digest, exit_probability_mc, run_ensemble, summary_csv, summary_json
from .integrators import run_path
from .models import ConfigError, coercivity_profile, delta_exponent, kappa_threshold, nonlinearity
from .spectral import SpectralField, save_field

THREADS_ENV = "FRACSPDE_THREADS"
COMMANDS = ("simulate", "ensemble", "verify", "kappa")


class ReplayMismatch(RuntimeError):
    def __init__(self, mismatches):
        self.mismatches = mismatches
        super().__init__(f"{len(mismatches)} artifact(s) differ from the manifest")


def _f(x) -> str:
    return repr(float(x))


def _json_safe(x):
    if isinstance(x, float) and not math.isfinite(x):
        return None if math.isnan(x) else ("inf" if x > 0 else "-inf")
    if isinstance(x, dict):
        return {k: _json_safe(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_json_safe(v) for v in x]
    if isinstance(x, np.generic):
        return _json_safe(x.item())
    return x


def _write_json(path: Path, doc) -> Path:
    path.write_text(json.dumps(_json_safe(doc), indent=2, sort_keys=True, allow_nan=False) + "\n")
    return path


# -- subcommands -------------------------------------------------------------------


def cmd_simulate(cfg: RunConfig, out: Path, threads: int) -> list[Path]:
    theta0 = cfg.theta0()
    res = run_path(cfg.model, cfg.noise, cfg.sim, theta0, profile=coercivity_profile(cfg.model, cfg.C1, cfg.C1_source))
    traj = out / "trajectory.csv"
    with traj.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "h_s0_norm", "l2_norm", "rho", "rho0", "chi_active"])
        for t, h, l2, r, r0, ca in res.trajectory_rows():
            w.writerow([_f(t), _f(h), _f(l2), _f(r), _f(r0), int(ca)])
    stop = _write_json(
        out / "stopping.json",
        {
            "config_digest": cfg.digest,
            "stopping": res.record.to_dict(),
            "survived": res.survived,
            "decayed": res.decayed,
            "blown_up": res.blown_up,
            "terminal_norm": res.terminal_norm,
            "decay_epsilon": res.decay_epsilon,
            "initial_norm": theta0.norm(cfg.model.s0),
            "cutoff_R": cfg.sim.cutoff_R,
            "envelope_checks": res.envelope_checks,
            "envelope_violations": res.envelope_violations,
            "horizon": cfg.sim.horizon,
            "dt": cfg.sim.dt,
        },
    )
    field_path, side = save_field(res.terminal, out / "terminal_field.csv")
    return [traj, stop, field_path, side]


def cmd_ensemble(cfg: RunConfig, out: Path, threads: int) -> list[Path]:
    if cfg.ensemble is None:
        raise ConfigError(["the ensemble command needs an ensemble section"])
    from dataclasses import replace

    ens = replace(cfg.ensemble, threads=threads)
    stats = run_ensemble(ens, cfg.model, cfg.noise)
    paths = [out / "summary.json", out / "summary.csv", out / "bounds.csv"]
    paths[0].write_text(summary_json(stats))
    paths[1].write_text(summary_csv(stats))
    with paths[2].open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["R", "beta_sq", "kappa", "C1", "C1_source", "metric", "empirical", "ci_low", "ci_high", "bound", "passed"])
        for r in bound_report(stats):
            w.writerow(["" if v is None else (_f(v) if isinstance(v, float) else v) for v in r.to_dict().values()])
    ex = cfg.data["ensemble"]["exit_mc"]
    if ex is not None:
        est = exit_probability_mc(ex["beta"], ex["R_grid"], ex["n_paths"], seed=cfg.sim.seed, n_steps=ex["n_steps"])
        paths.append(_write_json(out / "exit_mc.json", est.to_dict()))
    return paths


def cmd_verify(cfg: RunConfig, out: Path, threads: int) -> list[Path]:
    v = cfg.data["verify"]
    model, g = cfg.model, cfg.model.grid
    s = model.s0 if v["s"] is None else v["s"]
    report: dict = {"model": model.kind, "config_digest": cfg.digest}

    if model.kind != "linear":
        fam = SampleFamily(g, v["m"], v["oracle_samples"], v["seed"], max_active=8, components=model.components)
        worst = 0.0
        for f in fam.fields():
            th = SpectralField(g, model.project_state(np.array(f.coeffs)))
            worst = max(worst, oracle_error(model, th, nonlinearity(model, th)))
        report["oracle"] = {"samples": fam.count, "max_active_modes": 8, "max_relative_error": worst}

    fam = SampleFamily(g, v["m"], v["samples"], v["seed"], components=model.components)
    est = coercivity_sample(model, fam, s, v["a_grid"], v["epsilon0"], refine=v["refine"])
    record = calibration_record(model, est, s, v["epsilon0"], fam)
    cal = _write_json(out / "calibration.json", record)
    report["coercivity"] = record

    if g.fourier:
        lfam = SampleFamily(g, v["lemma_m"], v["lemma_samples"], v["seed"], mean_zero=False)
        lem = {}
        for kind, exps in (("product", (2, math.inf, 2, math.inf, 2)), ("commutator", (2, 4, 4, 4, 4))):
            e = estimate_lemma_constant(kind, model.s0, exps, lfam)
            lem[kind] = e.to_dict() | {"s": model.s0, "exponents": list(exps)}
        report["lemma_constants"] = lem
    else:
        report["lemma_constants"] = "skipped: sampled on the Fourier basis only"

    if cfg.noise.linear and cfg.noise.beta != 0:
        cc = scheme_cross_check(
            model,
            cfg.noise,
            cfg.theta0(),
            v["cross_check_dt"],
            seed=cfg.sim.seed,
            horizon=v["cross_check_horizon"],
            n_paths=v["cross_check_paths"],
        )
        report["scheme_cross_check"] = cc.to_dict()
    diag = _write_json(out / "diagnostics.json", report)
    return [cal, diag]


def cmd_kappa(cfg: RunConfig, out: Path, threads: int) -> list[Path]:
    prof = coercivity_profile(cfg.model, cfg.C1, cfg.C1_source)
    rows = []
    for b2 in cfg.data["kappa"]["beta_sq_grid"]:
        for R in cfg.data["kappa"]["R_grid"]:
            try:
                k = kappa_threshold(prof, R, b2)
                note = ""
            except ValueError as exc:
                k, note = None, str(exc)
            rows.append({"R": float(R), "beta_sq": float(b2), "kappa": k, "note": note})
    doc = {
        "model": cfg.model.kind,
        "alpha": cfg.model.alpha,
        "s0": cfg.model.s0,
        "delta": delta_exponent(cfg.model),
        "C1": cfg.C1,
        "C1_source": cfg.C1_source,
        "beta0_sq": prof.beta0_sq,
        "rows": rows,
    }
    jpath = _write_json(out / "kappa.json", doc)
    cpath = out / "kappa.csv"
    with cpath.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["R", "beta_sq", "kappa"])
        for r in rows:
            w.writerow([_f(r["R"]), _f(r["beta_sq"]), "" if r["kappa"] is None else _f(r["kappa"])])
    print(f"{'R':>10} {'beta_sq':>10} {'kappa':>22}")
    for r in rows:
        k = "undefined" if r["kappa"] is None else f"{r['kappa']:.15g}"
        print(f"{r['R']:>10g} {r['beta_sq']:>10g} {k:>22}")
    return [jpath, cpath]


HANDLERS = {"simulate": cmd_simulate, "ensemble": cmd_ensemble, "verify": cmd_verify, "kappa": cmd_kappa}


# -- orchestration ------------------------------------------------------------------


def execute(command: str, cfg: RunConfig, out: Path, threads: int = 1, config_file: str = "") -> RunManifest:
    """Run one subcommand into ``out`` and write its manifest."""
    out.mkdir(parents=True, exist_ok=True)
    man = RunManifest(command, cfg.digest, cfg.sim.seed, __version__, config_file)
    man.started = RunManifest.now()
    cal = cfg.data["calibration"]["source"]
    if cal != "default":
        p = Path(cal) if Path(cal).is_absolute() else cfg.base_dir / cal
        man.inputs.append({"path": str(p.resolve()), "sha256": sha256_file(p)})
    for path in HANDLERS[command](cfg, out, threads):
        man.add(out, path)
    man.finished = RunManifest.now()
    man.runtime = {"threads": threads, "config": cfg.data, "base_dir": str(cfg.base_dir.resolve())}
    man.write(out / "manifest.json")
    return man


def replay(manifest_path: Path, out: Path | None = None, threads: int = 1) -> RunManifest:
    """Re-run the command recorded in a manifest and compare artifact checksums."""
    old = RunManifest.from_dict(json.loads(manifest_path.read_text()))
    mismatches = []
    for item in old.inputs:
        p = Path(item["path"])
        if not p.exists() or sha256_file(p) != item["sha256"]:
            mismatches.append({"input": item["path"], "reason": "input changed or missing"})
    if mismatches:
        raise ReplayMismatch(mismatches)
    data = old.runtime["config"]
    cfg = parse_config(json.dumps(data), old.runtime["base_dir"])
    if cfg.digest != old.config_digest:
        raise ReplayMismatch([{"config": "digest differs from the manifest"}])
    if out is None:
        out = Path(tempfile.mkdtemp(prefix="replay_", dir=manifest_path.parent))
    new = execute(old.command, cfg, out, threads, config_file=str(manifest_path))
    want = {a["path"]: a["sha256"] for a in old.artifacts}
    got = {a["path"]: a["sha256"] for a in new.artifacts}
    for p in sorted(set(want) | set(got)):
        if want.get(p) != got.get(p):
            mismatches.append({"artifact": p, "expected": want.get(p), "actual": got.get(p)})
    if mismatches:
        raise ReplayMismatch(mismatches)
    return new


def default_threads() -> int:
    try:
        return max(1, int(os.environ.get(THREADS_ENV, "1")))
    except ValueError:
        return 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fracspde", description="Stochastic fractional PDE laboratory.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", required=True, help="JSON run configuration")
        sp.add_argument("--seed", type=int, help="override sim.seed (master seed)")
        sp.add_argument("--out", help="override output.dir")
        sp.add_argument("--threads", type=int, help=f"worker threads (default ${THREADS_ENV} or 1)")
        sp.add_argument("--dt", type=float, help="override sim.dt")
        sp.add_argument("--horizon", type=float, help="override sim.horizon")
        sp.add_argument("--paths", type=int, help="override ensemble.n_paths")
    rp = sub.add_parser("replay")
    rp.add_argument("--manifest", required=True)
    rp.add_argument("--out", help="directory for the re-run (default: fresh directory next to the manifest)")
    rp.add_argument("--threads", type=int)
    sub.add_parser("schema", help="print the configuration schema")
    return p


def _fail(kind: str, message: str, code: int, **extra) -> int:
    sys.stderr.write(json.dumps({"error": kind, "message": message, **extra}, sort_keys=True) + "\n")
    return code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    threads = args.threads if getattr(args, "threads", None) else default_threads()
    if threads < 1:
        return _fail("usage", "--threads must be >= 1", 2)
    try:
        if args.command == "schema":
            print(json.dumps(schema_doc(), indent=2, sort_keys=True))
            return 0
        if args.command == "replay":
            man = replay(Path(args.manifest), Path(args.out) if args.out else None, threads)
            print(json.dumps({"replay": "identical", "artifacts": len(man.artifacts)}))
            return 0
        path = Path(args.config)
        raw = json.loads(path.read_text())
        raw = apply_overrides(raw, seed=args.seed, dt=args.dt, horizon=args.horizon, paths=args.paths, out=args.out)
        cfg = parse_config(json.dumps(raw), path.parent)
        out = Path(cfg.data["output"]["dir"])
        if not out.is_absolute() and args.out is None:
            out = path.parent / out
        man = execute(args.command, cfg, out, threads, config_file=str(path))
        print(json.dumps({"command": args.command, "out": str(out), "artifacts": [a["path"] for a in man.artifacts]}))
        return 0
    except ConfigError as exc:
        return _fail("config", str(exc), 2, errors=exc.errors)
    except ReplayMismatch as exc:
        return _fail("replay_mismatch", str(exc), 4, mismatches=exc.mismatches)
    except json.JSONDecodeError as exc:
        return _fail("config", f"invalid JSON: {exc}", 2, errors=[str(exc)])
    except OSError as exc:
        return _fail("io", str(exc), 3)
    except (ValueError, RuntimeError) as exc:
        return _fail("runtime", str(exc), 1)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
