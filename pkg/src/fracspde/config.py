"""Run configuration: strict JSON schema, defaults written back, stable digest, manifests."""

from __future__ import annotations

import copy
import hashlib
import json
import math
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

from .ensemble import EnsembleConfig, InitialCondition, config_digest
from .integrators import SimConfig
from .models import ConfigError, ModelSpec, NoiseSpec, coercivity_profile
from .spectral import Grid, real_field_from_modes

__all__ = [
    "SCHEMA",
    "RunConfig",
    "RunManifest",
    "parse_config",
    "load_config",
    "serialize_config",
    "apply_overrides",
    "sha256_file",
    "schema_doc",
]

REQUIRED = object()


def _num(v):
    return isinstance(v, (int, float)) and not isinstance(v, bool) and math.isfinite(v)


def _int(v):
    return isinstance(v, int) and not isinstance(v, bool)


def _opt(check):
    return lambda v: v is None or check(v)


def _list_of(check, nonempty=False):
    return lambda v: isinstance(v, list) and (len(v) > 0 or not nonempty) and all(check(x) for x in v)


def _rows(v):
    return isinstance(v, list) and all(isinstance(r, list) and all(_num(x) for x in r) for r in v)


_str = lambda v: isinstance(v, str)  # noqa: E731
_bool = lambda v: isinstance(v, bool)  # noqa: E731

# section -> key -> (check, default, description)
SCHEMA = {
    "model": {
        "kind": (_str, REQUIRED, "burgers | sqg | navier_stokes | kpz | surface_growth | reaction_diffusion | linear"),
        "alpha": (_num, REQUIRED, "fractional order in (0, 1]"),
        "s0": (_num, REQUIRED, "Sobolev index of the state space"),
        "kpz_lambda": (_num, 1.0, "KPZ coupling"),
        "reaction_poly": (_list_of(_num, True), [0.0, 0.0, 1.0], "ascending coefficients of p in f = p(v) v"),
        "burgers_eps2": (_opt(_num), None, "Burgers epsilon_2 (default alpha / 2)"),
        "burgers_q": (_opt(_num), None, "Burgers q (default midpoint of its interval)"),
        "strict": (_bool, True, "enforce the theorems' lower bounds on s0"),
    },
    "grid": {
        "dim": (_int, REQUIRED, "spatial dimension 1 or 2"),
        "basis": (_str, REQUIRED, "fourier | sine"),
        "n": (_int, REQUIRED, "modes per dimension"),
        "operator_order": (_int, 2, "2 for -Laplacian, 4 for d^4/dx^4"),
        "length": (_opt(_num), None, "domain length (default 2 pi / pi)"),
    },
    "noise": {
        "kind": (_str, "linear_multiplicative", "linear_multiplicative | trace_class"),
        "beta": (_num, 0.0, "noise intensity of beta theta dW"),
        "b_fields": (_list_of(_rows), [], "trace-class b_k as mode rows, one member per +-k pair"),
        "g_poly": (_list_of(_num, True), [0.0, 1.0], "ascending coefficients of g"),
    },
    "sim": {
        "dt": (_num, REQUIRED, "time step"),
        "horizon": (_num, REQUIRED, "final time T"),
        "cutoff_R": (_num, 1.0e6, "chi_R / tau_R radius"),
        "galerkin_n": (_opt(_int), None, "Galerkin cut |k| <= galerkin_n (default n // 3)"),
        "scheme": (_str, "em_ito", "em_ito | transformed_exponential"),
        "seed": (_int, 0, "master seed of the Brownian streams"),
        "record_stride": (_int, 1, "record every k-th step"),
        "rho_R": (_opt(_num), None, "level for sigma_R, sigma0_R (default cutoff_R)"),
        "decay_rel": (_num, 1e-3, "decay threshold relative to the initial norm"),
        "decay_epsilon": (_opt(_num), None, "absolute decay threshold (overrides decay_rel)"),
        "stop_at_tau": (_bool, True, "freeze a path at tau_R"),
        "envelope_tol": (_num, 0.0, "relative slack in the decay-envelope check"),
    },
    "initial": {
        "kind": (_str, "fixed", "fixed | random_trig"),
        "modes": (_rows, [[1, 0.0, -0.5]], "rows [component,] k..., re, im"),
        "m": (_int, 4, "mode bound of random_trig"),
        "seed": (_int, 0, "seed of random_trig"),
        "norm": (_opt(_num), None, "rescale to this H^s0 norm (simulate)"),
    },
    "ensemble": {
        "n_paths": (_int, REQUIRED, "number of paths per cell"),
        "R_grid": (_list_of(_num, True), [16.0], "R values"),
        "beta_grid": (_list_of(_num, True), [1.0], "beta values"),
        "initial_norm_rule": (_str, "kappa_fraction", "absolute | kappa_fraction"),
        "initial_norm": (_opt(_num), None, "H^s0 norm under the absolute rule"),
        "kappa_fraction": (_num, 1.0, "c in |theta0|^2 = c kappa(R, beta^2)"),
        "cutoff_factor": (_opt(_num), 1.0, "cut-off radius as a multiple of rho_1^-1(beta^2/4); null uses sim.cutoff_R"),
        "batch_size": (_int, 128, "paths advanced together"),
        "exit_mc": (_opt(lambda v: isinstance(v, dict)), None, "optional scalar exit MC {n_paths, beta, R_grid, n_steps}"),
    },
    "calibration": {
        "source": (_str, "default", "default | path to a calibration JSON"),
        "C1": (_num, 1.0, "C1 used with source = default"),
    },
    "verify": {
        "samples": (_int, 1000, "coercivity samples"),
        "m": (_int, 6, "mode bound of the sample family"),
        "seed": (_int, 0, "sample family seed"),
        "s": (_opt(_num), None, "Sobolev index s in [s0, s0 + 1] (default s0)"),
        "a_grid": (_list_of(_num, True), [0.5, 1.0, 2.0, 4.0], "amplitudes a"),
        "epsilon0": (_num, 0.5, "dissipation share epsilon_0"),
        "refine": (_int, 4, "local refinements of the best samples"),
        "oracle_samples": (_int, 200, "random <= 8-mode fields for the oracle check"),
        "lemma_samples": (_int, 500, "pairs for the product / commutator constants"),
        "lemma_m": (_int, 5, "mode bound for lemma samples"),
        "cross_check_dt": (_list_of(_num), [4e-3, 2e-3, 1e-3, 5e-4], "dt levels of the scheme cross check"),
        "cross_check_paths": (_int, 64, "paths of the scheme cross check"),
        "cross_check_horizon": (_num, 1.0, "horizon of the scheme cross check"),
    },
    "kappa": {
        "R_grid": (_list_of(_num, True), [1.0, 4.0, 16.0, 81.0, 256.0], "R values"),
        "beta_sq_grid": (_list_of(_num, True), [4.0], "beta^2 values"),
    },
    "output": {
        "dir": (_str, "out", "output directory"),
    },
}
OPTIONAL_SECTIONS = {"ensemble"}
TOP_LEVEL = set(SCHEMA)


def _fill(section: str, data, errors: list[str]) -> dict:
    spec = SCHEMA[section]
    if not isinstance(data, dict):
        errors.append(f"{section} must be an object")
        return {k: copy.deepcopy(d) for k, (_, d, _) in spec.items() if d is not REQUIRED}
    out = {}
    for key in sorted(set(data) - set(spec)):
        errors.append(f"unknown key {section}.{key}")
    for key, (check, default, _) in spec.items():
        if key in data:
            if check(data[key]):
                out[key] = copy.deepcopy(data[key])
            else:
                errors.append(f"{section}.{key} has an invalid value {data[key]!r}")
        elif default is REQUIRED:
            errors.append(f"missing required key {section}.{key}")
        else:
            out[key] = copy.deepcopy(default)
    return out


def _collect(fn, errors: list[str]):
    try:
        return fn()
    except ConfigError as exc:
        errors.extend(exc.errors)
    except (ValueError, TypeError) as exc:
        errors.append(str(exc))
    return None


@dataclass
class RunConfig:
    """Validated configuration with every default written back into ``data``."""

    data: dict
    model: ModelSpec
    noise: NoiseSpec
    sim: SimConfig
    initial: InitialCondition
    ensemble: EnsembleConfig | None
    C1: float
    C1_source: str
    base_dir: Path = field(default_factory=Path)

    @property
    def digest(self) -> str:
        # where results are written does not change what is computed
        return config_digest({k: v for k, v in self.data.items() if k != "output"})

    @property
    def output_dir(self) -> Path:
        return Path(self.data["output"]["dir"])

    def theta0(self):
        th = self.initial.build(self.model)
        norm = self.data["initial"]["norm"]
        if norm is not None:
            base = th.norm(self.model.s0)
            if base == 0:
                raise ConfigError(["initial.norm set but the initial field is zero"])
            th = th * (norm / base)
        return th


def _calibration(data: dict, base_dir: Path, kind: str, errors: list[str]):
    cal = data["calibration"]
    if cal["source"] == "default":
        if not cal["C1"] > 0:
            errors.append("calibration.C1 must be positive")
        return cal["C1"], "default"
    path = Path(cal["source"])
    if not path.is_absolute():
        path = base_dir / path
    try:
        doc = json.loads(path.read_text())
    except (OSError, ValueError) as exc:
        errors.append(f"calibration file {cal['source']!r} unreadable: {exc}")
        return None, cal["source"]
    if doc.get("model") != kind:
        errors.append(f"calibration file is for model {doc.get('model')!r}, config uses {kind!r}")
    C1 = doc.get("C_empirical")
    if not _num(C1) or not C1 > 0:
        errors.append("calibration file has no positive C_empirical")
        return None, cal["source"]
    if doc.get("diverged"):
        errors.append("calibration file reports a diverged estimate")
    return float(C1), cal["source"]


def parse_config(text: str, base_dir: str | Path = ".") -> RunConfig:
    """Validate a JSON config; raises ConfigError listing every problem found."""
    try:
        raw = json.loads(text)
    except ValueError as exc:
        raise ConfigError([f"config is not valid JSON: {exc}"]) from None
    if not isinstance(raw, dict):
        raise ConfigError(["config must be a JSON object"])
    errors: list[str] = []
    for key in sorted(set(raw) - TOP_LEVEL):
        errors.append(f"unknown top-level key {key!r}")
    data = {}
    for section in SCHEMA:
        if section == "grid":
            continue
        if section in OPTIONAL_SECTIONS and raw.get(section) is None:
            data[section] = None
            continue
        if section == "model":
            m = raw.get("model", {})
            if not isinstance(m, dict):
                errors.append("model must be an object")
                m = {}
            inner = {k: v for k, v in m.items() if k != "grid"}
            data["model"] = _fill("model", inner, errors)
            if "grid" not in m:
                errors.append("missing required key model.grid")
            data["model"]["grid"] = _fill("grid", m.get("grid", {}), [] if "grid" not in m else errors)
            continue
        data[section] = _fill(section, raw.get(section, {}), errors)
    if errors:
        raise ConfigError(errors)

    base = Path(base_dir)
    md = dict(data["model"])
    grid = _collect(lambda: Grid(**md.pop("grid")), errors)
    model = _collect(lambda: ModelSpec(grid=grid, **{**md, "reaction_poly": tuple(md["reaction_poly"])}), errors) if grid else None
    nd = data["noise"]
    noise = None
    if grid is not None:
        def mk_noise():
            b = tuple(real_field_from_modes(grid, rows) for rows in nd["b_fields"])
            return NoiseSpec(kind=nd["kind"], beta=nd["beta"], b_fields=b, g_poly=tuple(nd["g_poly"]))

        noise = _collect(mk_noise, errors)
    sim = _collect(lambda: SimConfig(**data["sim"]), errors)
    if sim is not None and grid is not None:
        errors.extend(e for e in sim.validate(grid) if "galerkin_n" in e)
    if sim is not None and data["sim"]["scheme"] == "transformed_exponential" and nd["kind"] != "linear_multiplicative":
        errors.append("sim.scheme transformed_exponential needs linear_multiplicative noise")
    ini = {k: v for k, v in data["initial"].items() if k != "norm"}
    initial = _collect(lambda: InitialCondition(**{**ini, "modes": tuple(tuple(r) for r in ini["modes"])}), errors)
    C1, source = _calibration(data, base, data["model"]["kind"], errors)
    ensemble = None
    if data["ensemble"] is not None and sim is not None and initial is not None and C1 is not None:
        ed = {k: v for k, v in data["ensemble"].items() if k != "exit_mc"}
        ensemble = _collect(
            lambda: EnsembleConfig(sim=sim, initial=initial, master_seed=sim.seed, C1=C1, C1_source=source, **ed), errors
        )
        if ensemble is not None and nd["kind"] != "linear_multiplicative":
            errors.append("ensemble runs need linear_multiplicative noise")
        if ensemble is not None and model is not None and ensemble.initial_norm_rule == "kappa_fraction":
            prof = _collect(lambda: coercivity_profile(model, C1, source), errors)
            for b in ensemble.beta_grid:
                if prof is not None and not b * b > prof.beta0_sq:
                    errors.append(
                        f"kappa(R, beta^2) undefined for beta^2 = {b * b:g} <= beta_0^2 = {prof.beta0_sq:g} (Theorem 4.1)"
                    )
        ex = data["ensemble"]["exit_mc"]
        if ex is not None:
            bad = set(ex) - {"n_paths", "beta", "R_grid", "n_steps"}
            if bad:
                errors.append(f"unknown key(s) in ensemble.exit_mc: {sorted(bad)}")
            filled = {"n_paths": 10000, "beta": 1.0, "R_grid": list(ensemble.R_grid) if ensemble else [16.0], "n_steps": 1000}
            filled.update(ex)
            if not (_int(filled["n_paths"]) and filled["n_paths"] >= 1 and _num(filled["beta"]) and filled["beta"] != 0):
                errors.append("ensemble.exit_mc needs n_paths >= 1 and non-zero beta")
            data["ensemble"]["exit_mc"] = filled
    v = data["verify"]
    if not 0 < v["epsilon0"] < 1:
        errors.append("verify.epsilon0 must lie in (0, 1)")
    if any(not a > 0 for a in v["a_grid"]):
        errors.append("verify.a_grid entries must be positive")
    if any(not r >= 1 for r in data["kappa"]["R_grid"]):
        errors.append("kappa.R_grid entries must be >= 1")
    if errors:
        raise ConfigError(errors)
    return RunConfig(data, model, noise, sim, initial, ensemble, C1, source, base)


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    return parse_config(path.read_text(), path.parent)


def serialize_config(cfg: RunConfig) -> str:
    return json.dumps(cfg.data, indent=2, sort_keys=True) + "\n"


_OVERRIDES = {
    "seed": ("sim", "seed"),
    "dt": ("sim", "dt"),
    "horizon": ("sim", "horizon"),
    "paths": ("ensemble", "n_paths"),
    "out": ("output", "dir"),
}


def apply_overrides(raw: dict, **values) -> dict:
    """Copy of a raw config dict with command-line scalars substituted."""
    raw = copy.deepcopy(raw)
    for name, value in values.items():
        if value is None:
            continue
        section, key = _OVERRIDES[name]
        if raw.get(section) is None:
            if section == "ensemble":
                raise ConfigError(["--paths given but the config has no ensemble section"])
            raw[section] = {}
        raw[section][key] = value
    return raw


def sha256_file(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass
class RunManifest:
    command: str
    config_digest: str
    master_seed: int
    tool_version: str
    config_file: str
    started: str = ""
    finished: str = ""
    artifacts: list = field(default_factory=list)
    inputs: list = field(default_factory=list)
    runtime: dict = field(default_factory=dict)

    @staticmethod
    def now() -> str:
        return datetime.now(timezone.utc).isoformat(timespec="seconds")

    def add(self, out_dir: Path, path: Path):
        rel = path.relative_to(out_dir).as_posix()
        self.artifacts.append({"path": rel, "sha256": sha256_file(path), "bytes": path.stat().st_size})

    def to_dict(self) -> dict:
        return {
            "command": self.command,
            "config_digest": self.config_digest,
            "master_seed": self.master_seed,
            "tool_version": self.tool_version,
            "config_file": self.config_file,
            "started": self.started,
            "finished": self.finished,
            "artifacts": self.artifacts,
            "inputs": self.inputs,
            "runtime": self.runtime,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RunManifest":
        return cls(**d)

    def write(self, path: Path):
        path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")


def schema_doc() -> dict:
    """Published schema: section -> key -> {default, description} (required keys have no default)."""
    out = {}
    for section, keys in SCHEMA.items():
        out[section] = {
            k: ({"required": True} if d is REQUIRED else {"default": d}) | {"description": desc} for k, (_, d, desc) in keys.items()
        }
    return out

