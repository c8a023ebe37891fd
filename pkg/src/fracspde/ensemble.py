"""Monte Carlo over noise paths: survival and decay statistics against the Theorem 4.1 bounds.

Path ``i`` of every cell draws its Brownian increments from
``SeedSequence(master_seed, spawn_key=(i,))`` (see :func:`integrators.path_rng`),
so cells share common random numbers and batching or thread count cannot
change any count.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from statistics import NormalDist
from typing import Sequence

import numpy as np
from scipy.special import ndtr

from .integrators import BrownianSource, SimConfig, decay_threshold, path_rng, run_batch
from .models import ConfigError, ModelSpec, NoiseSpec, coercivity_profile, kappa_threshold
from .spectral import SpectralField, random_trig_field, real_field_from_modes

__all__ = [
    "Z95",
    "InitialCondition",
    "EnsembleConfig",
    "CellStats",
    "EnsembleStats",
    "BoundRow",
    "ExitEstimate",
    "wilson_interval",
    "canonical_json",
    "config_digest",
    "run_ensemble",
    "exit_probability_mc",
    "exit_horizon",
    "residual_mass",
    "bound_report",
    "summary_json",
    "summary_csv",
]

Z95 = NormalDist().inv_cdf(0.975)


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def config_digest(obj) -> str:
    """sha256 of the canonical JSON form (sorted keys, no whitespace)."""
    return hashlib.sha256(canonical_json(obj).encode()).hexdigest()


def wilson_interval(successes: int, n: int, z: float = Z95) -> tuple[float, float]:
    if n <= 0:
        return (0.0, 1.0)
    p = successes / n
    den = 1 + z * z / n
    centre = (p + z * z / (2 * n)) / den
    half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / den
    lo = 0.0 if successes == 0 else max(0.0, centre - half)
    hi = 1.0 if successes == n else min(1.0, centre + half)
    return (lo, hi)


# -- configuration -------------------------------------------------------------


@dataclass(frozen=True)
class InitialCondition:
    """Initial-field recipe.

    ``fixed``: rows ``[component,] k..., re, im`` for one member of each +-k
    pair (``(1, 0, -A/2)`` is ``A sin x``); ``random_trig``: a seeded random
    polynomial with modes |k_j| <= m.
    """

    kind: str = "fixed"
    modes: tuple = ((1, 1.0, 0.0),)
    m: int = 4
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "modes", tuple(tuple(r) for r in self.modes))
        if self.kind not in ("fixed", "random_trig"):
            raise ConfigError([f"initial.kind must be 'fixed' or 'random_trig', got {self.kind!r}"])

    def build(self, model: ModelSpec) -> SpectralField:
        g = model.grid
        if self.kind == "fixed":
            c = np.asarray(real_field_from_modes(g, self.modes, model.components).coeffs)
        else:
            f = random_trig_field(g, self.m, np.random.default_rng(self.seed), components=model.components, mean_zero=model.mean_zero)
            c = np.asarray(f.coeffs)
        return SpectralField(g, model.project_state(np.array(c)))

    def to_dict(self) -> dict:
        return {"kind": self.kind, "modes": [list(r) for r in self.modes], "m": self.m, "seed": self.seed}

    @classmethod
    def from_dict(cls, d: dict) -> "InitialCondition":
        return cls(**d)


@dataclass(frozen=True)
class EnsembleConfig:
    n_paths: int
    sim: SimConfig
    R_grid: tuple[float, ...] = (16.0,)
    beta_grid: tuple[float, ...] = (1.0,)
    master_seed: int = 0
    initial: InitialCondition = field(default_factory=InitialCondition)
    initial_norm_rule: str = "kappa_fraction"
    initial_norm: float | None = None
    kappa_fraction: float = 1.0
    cutoff_factor: float | None = 1.0
    C1: float = 1.0
    C1_source: str = "default"
    batch_size: int = 128
    threads: int = 1

    def __post_init__(self):
        object.__setattr__(self, "R_grid", tuple(float(r) for r in self.R_grid))
        object.__setattr__(self, "beta_grid", tuple(float(b) for b in self.beta_grid))
        errors = self.validate()
        if errors:
            raise ConfigError(errors)

    def validate(self) -> list[str]:
        errors = []
        if self.n_paths < 1:
            errors.append("ensemble.n_paths must be >= 1")
        if not self.R_grid:
            errors.append("ensemble.R_grid must be non-empty")
        if any(not r >= 1 for r in self.R_grid):
            errors.append("ensemble.R_grid entries must be >= 1")
        if not self.beta_grid:
            errors.append("ensemble.beta_grid must be non-empty")
        if self.initial_norm_rule not in ("absolute", "kappa_fraction"):
            errors.append("ensemble.initial_norm_rule must be 'absolute' or 'kappa_fraction'")
        if self.initial_norm_rule == "kappa_fraction" and not 0 < self.kappa_fraction <= 1:
            errors.append("ensemble.kappa_fraction must lie in (0, 1] (hypothesis |theta0|^2 <= kappa)")
        if self.initial_norm is not None and not self.initial_norm >= 0:
            errors.append("ensemble.initial_norm must be nonnegative")
        if self.cutoff_factor is not None and not self.cutoff_factor > 0:
            errors.append("ensemble.cutoff_factor must be positive")
        if not self.C1 > 0:
            errors.append("ensemble.C1 must be positive")
        if self.batch_size < 1:
            errors.append("ensemble.batch_size must be >= 1")
        if self.threads < 1:
            errors.append("ensemble.threads must be >= 1")
        if not 0 <= self.master_seed < 2**64:
            errors.append("ensemble.master_seed must be a 64-bit unsigned integer")
        return errors

    def to_dict(self) -> dict:
        return {
            "n_paths": self.n_paths,
            "sim": self.sim.to_dict(),
            "R_grid": list(self.R_grid),
            "beta_grid": list(self.beta_grid),
            "master_seed": self.master_seed,
            "initial": self.initial.to_dict(),
            "initial_norm_rule": self.initial_norm_rule,
            "initial_norm": self.initial_norm,
            "kappa_fraction": self.kappa_fraction,
            "cutoff_factor": self.cutoff_factor,
            "C1": self.C1,
            "C1_source": self.C1_source,
            "batch_size": self.batch_size,
            "threads": self.threads,
        }


# -- statistics ----------------------------------------------------------------


@dataclass
class CellStats:
    R: float
    beta_sq: float
    n_paths: int
    kappa: float | None
    defined: bool
    initial_norm: float | None = None
    cutoff_R: float | None = None
    survived: int = 0
    decayed: int = 0
    numerical_blowup: int = 0
    tau_hit: int = 0
    sigma_hit: int = 0
    sigma_R_hit: int = 0
    sigma0_R_hit: int = 0
    envelope_checks: int = 0
    envelope_violations: int = 0
    decay_epsilon: float | None = None
    note: str = ""

    @property
    def survival(self) -> float:
        return self.survived / self.n_paths

    @property
    def decay(self) -> float:
        return self.decayed / self.n_paths

    def se(self, p: float) -> float:
        return math.sqrt(p * (1 - p) / self.n_paths)

    @property
    def survival_ci(self) -> tuple[float, float]:
        return wilson_interval(self.survived, self.n_paths)

    @property
    def decay_ci(self) -> tuple[float, float]:
        return wilson_interval(self.decayed, self.n_paths)

    @property
    def survival_bound(self) -> float:
        return 1 - self.R ** (-0.25)

    @property
    def decay_bound(self) -> float:
        return 1 - self.R ** (-0.125)


@dataclass
class EnsembleStats:
    cells: list[CellStats]
    horizon: float
    dt: float
    config_digest: str
    C1: float
    C1_source: str
    censoring: str = "paths without a tau_R crossing are censored at the horizon T"

    def cell(self, R: float, beta_sq: float) -> CellStats:
        for c in self.cells:
            if math.isclose(c.R, R) and math.isclose(c.beta_sq, beta_sq):
                return c
        raise KeyError((R, beta_sq))


def _cell_setup(cfg: EnsembleConfig, model: ModelSpec, profile, theta_shape: SpectralField, R: float, beta: float):
    beta_sq = beta * beta
    defined = beta_sq > profile.beta0_sq
    kappa = kappa_threshold(profile, R, beta_sq) if defined else None
    cell = CellStats(R=R, beta_sq=beta_sq, n_paths=cfg.n_paths, kappa=kappa, defined=defined)
    if not defined:
        cell.note = f"kappa undefined: beta^2 = {beta_sq:g} <= beta_0^2 = {profile.beta0_sq:g}"
    if cfg.initial_norm_rule == "kappa_fraction":
        if not defined:
            return cell, None, None
        target = math.sqrt(cfg.kappa_fraction * kappa)
    else:
        target = cfg.initial_norm
    base = theta_shape.norm(model.s0)
    if target is None:
        theta0 = theta_shape
    elif base == 0:
        if target > 0:
            raise ValueError("cannot rescale a zero initial field to a positive norm")
        theta0 = theta_shape
    else:
        theta0 = theta_shape * (target / base)
    thr = profile.sigma_threshold(beta_sq)
    cutoff = cfg.cutoff_factor * thr if (cfg.cutoff_factor is not None and thr is not None) else cfg.sim.cutoff_R
    cell.initial_norm = theta0.norm(model.s0)
    cell.cutoff_R = cutoff
    return cell, theta0, replace(cfg.sim, cutoff_R=cutoff, rho_R=R)


def run_ensemble(
    cfg: EnsembleConfig,
    model: ModelSpec,
    noise: NoiseSpec | None = None,
    path_indices: Sequence[int] | None = None,
) -> EnsembleStats:
    """Survival / decay counts for every (R, beta^2) cell.

    Survival: no tau crossing of the cut-off radius and no numerical blow-up
    by T.  Decay: terminal |Lambda^s0 theta| <= decay_epsilon.  A cell whose
    beta^2 <= beta_0^2 has no kappa; it is reported as undefined and, under
    the kappa-fraction rule, not simulated.
    """
    noise = noise if noise is not None else NoiseSpec()
    if not noise.linear:
        raise ValueError("ensembles over beta need linear multiplicative noise")
    profile = coercivity_profile(model, cfg.C1, cfg.C1_source)
    shape = cfg.initial.build(model)
    idx = list(range(cfg.n_paths)) if path_indices is None else [int(i) for i in path_indices]
    if len(idx) != cfg.n_paths:
        raise ValueError("path_indices must have n_paths entries")
    cells = []
    for beta in cfg.beta_grid:
        for R in cfg.R_grid:
            cell, theta0, sim = _cell_setup(cfg, model, profile, shape, R, beta)
            cells.append(cell)
            if theta0 is None:
                continue
            nz = noise.with_beta(beta)
            batches = [idx[i : i + cfg.batch_size] for i in range(0, len(idx), cfg.batch_size)]
            c0 = np.array(theta0.coeffs)

            def work(b, sim=sim, nz=nz, c0=c0):
                src = BrownianSource(cfg.master_seed, b, 1, sim.dt)
                return run_batch(model, nz, sim, np.repeat(c0[None], len(b), axis=0), src, profile=profile)

            if cfg.threads > 1:
                with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
                    results = list(pool.map(work, batches))
            else:
                results = [work(b) for b in batches]
            eps = None
            for res in results:
                eps_arr = decay_threshold(sim, res.initial_norm)
                eps = float(eps_arr[0])
                surv = res.survived
                cell.survived += int(surv.sum())
                cell.decayed += int((surv & (res.terminal_norm <= eps_arr)).sum())
                cell.numerical_blowup += int(res.blown_up.sum())
                cell.tau_hit += int(((res.tau_idx >= 0) & ~res.blown_up).sum())
                cell.sigma_hit += int((res.sigma_idx >= 0).sum())
                cell.sigma_R_hit += int((res.sigma_R_idx >= 0).sum())
                cell.sigma0_R_hit += int((res.sigma0_R_idx >= 0).sum())
                cell.envelope_checks += int(res.envelope_checks.sum())
                cell.envelope_violations += int(res.envelope_violations.sum())
            cell.decay_epsilon = eps
    # threads and batch size change how paths are scheduled, not the paths themselves
    ens = {k: v for k, v in cfg.to_dict().items() if k not in ("threads", "batch_size")}
    digest = config_digest({"ensemble": ens, "model": model.to_dict(), "noise": noise.to_dict()})
    return EnsembleStats(cells, cfg.sim.horizon, cfg.sim.dt, digest, cfg.C1, cfg.C1_source)


# -- bound report ----------------------------------------------------------------


@dataclass(frozen=True)
class BoundRow:
    R: float
    beta_sq: float
    kappa: float | None
    C1: float
    C1_source: str
    metric: str
    empirical: float | None
    ci_low: float | None
    ci_high: float | None
    bound: float
    passed: bool | None

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def bound_report(stats: EnsembleStats) -> list[BoundRow]:
    """Empirical survival/decay against 1 - R^-1/4 and 1 - R^-1/8; pass when the Wilson upper end reaches the bound."""
    rows = []
    for c in stats.cells:
        for metric, k, ci, bound in (
            ("survival", c.survived, c.survival_ci, c.survival_bound),
            ("decay", c.decayed, c.decay_ci, c.decay_bound),
        ):
            simulated = c.initial_norm is not None
            rows.append(
                BoundRow(
                    R=c.R,
                    beta_sq=c.beta_sq,
                    kappa=c.kappa,
                    C1=stats.C1,
                    C1_source=stats.C1_source,
                    metric=metric,
                    empirical=k / c.n_paths if simulated else None,
                    ci_low=ci[0] if simulated else None,
                    ci_high=ci[1] if simulated else None,
                    bound=bound,
                    passed=(ci[1] >= bound) if (simulated and c.defined) else None,
                )
            )
    return rows


def _cell_dict(c: CellStats) -> dict:
    simulated = c.initial_norm is not None
    return {
        "R": c.R,
        "beta_sq": c.beta_sq,
        "kappa": c.kappa,
        "defined": c.defined,
        "simulated": simulated,
        "note": c.note,
        "n_paths": c.n_paths,
        "initial_norm": c.initial_norm,
        "cutoff_R": c.cutoff_R,
        "decay_epsilon": c.decay_epsilon,
        "survived": c.survived,
        "decayed": c.decayed,
        "numerical_blowup": c.numerical_blowup,
        "tau_hit": c.tau_hit,
        "sigma_hit": c.sigma_hit,
        "sigma_R_hit": c.sigma_R_hit,
        "sigma0_R_hit": c.sigma0_R_hit,
        "envelope_checks": c.envelope_checks,
        "envelope_violations": c.envelope_violations,
        "ci": {"survival": list(c.survival_ci), "decay": list(c.decay_ci)} if simulated else None,
        "bounds": {"survival": c.survival_bound, "decay": c.decay_bound},
        "pass": {"survival": c.survival_ci[1] >= c.survival_bound, "decay": c.decay_ci[1] >= c.decay_bound}
        if (simulated and c.defined)
        else None,
    }


def summary_json(stats: EnsembleStats) -> str:
    doc = {
        "config_digest": stats.config_digest,
        "horizon": stats.horizon,
        "dt": stats.dt,
        "censoring": stats.censoring,
        "C1": stats.C1,
        "C1_source": stats.C1_source,
        "per_cell": [_cell_dict(c) for c in stats.cells],
    }
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


CSV_COLUMNS = (
    "R",
    "beta_sq",
    "kappa",
    "n_paths",
    "survived",
    "decayed",
    "numerical_blowup",
    "survival",
    "survival_ci_low",
    "survival_ci_high",
    "survival_bound",
    "survival_pass",
    "decay",
    "decay_ci_low",
    "decay_ci_high",
    "decay_bound",
    "decay_pass",
)


def summary_csv(stats: EnsembleStats) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for c in stats.cells:
        d = _cell_dict(c)
        ci = d["ci"] or {"survival": ["", ""], "decay": ["", ""]}
        ok = d["pass"] or {"survival": "", "decay": ""}
        sim = d["simulated"]
        w.writerow(
            [
                repr(c.R),
                repr(c.beta_sq),
                "" if c.kappa is None else repr(c.kappa),
                c.n_paths,
                c.survived,
                c.decayed,
                c.numerical_blowup,
                repr(c.survival) if sim else "",
                *[repr(v) if v != "" else "" for v in ci["survival"]],
                repr(c.survival_bound),
                ok["survival"],
                repr(c.decay) if sim else "",
                *[repr(v) if v != "" else "" for v in ci["decay"]],
                repr(c.decay_bound),
                ok["decay"],
            ]
        )
    return buf.getvalue()


# -- scalar exit probabilities -----------------------------------------------------


def residual_mass(a: float, mu: float, sigma: float, T: float) -> float:
    """P(sup_t X_t >= a) - P(sup_{t<=T} X_t >= a) for X_t = sigma B_t - mu t, mu > 0."""
    if a <= 0:
        return 0.0
    total = math.exp(-2 * mu * a / sigma**2)
    sT = sigma * math.sqrt(T)
    by_T = float(ndtr((-a - mu * T) / sT)) + total * float(ndtr((-a + mu * T) / sT))
    return max(total - by_T, 0.0)


def exit_horizon(beta: float, R_values: Sequence[float], tol: float = 1e-3) -> float:
    """Smallest horizon (to 1%) leaving residual crossing mass below ``tol`` for rho and rho0 at every R."""
    if beta == 0:
        raise ValueError("beta must be nonzero")
    sigma = 2 * abs(beta)
    T_max = 0.0
    for R in R_values:
        a = math.log(R)
        for mu in (beta**2 / 2, beta**2 / 4):
            lo, hi = 0.0, 1.0 / beta**2
            while residual_mass(a, mu, sigma, hi) >= tol:
                lo, hi = hi, 2 * hi
            for _ in range(60):
                mid = 0.5 * (lo + hi)
                if residual_mass(a, mu, sigma, mid) >= tol:
                    lo = mid
                else:
                    hi = mid
                if hi - lo < 0.005 * hi:
                    break
            T_max = max(T_max, hi)
    return T_max


@dataclass
class ExitEstimate:
    beta: float
    R: np.ndarray
    p_rho: np.ndarray
    p_rho0: np.ndarray
    se_rho: np.ndarray
    se_rho0: np.ndarray
    n_paths: int
    horizon: float
    dt: float
    bridge: bool
    residual: float
    tail: bool = False

    @property
    def target_rho(self) -> np.ndarray:
        return self.R ** (-0.25)

    @property
    def target_rho0(self) -> np.ndarray:
        return self.R ** (-0.125)

    def to_dict(self) -> dict:
        return {
            "beta": self.beta,
            "R": self.R.tolist(),
            "p_rho": self.p_rho.tolist(),
            "p_rho0": self.p_rho0.tolist(),
            "se_rho": self.se_rho.tolist(),
            "se_rho0": self.se_rho0.tolist(),
            "target_rho": self.target_rho.tolist(),
            "target_rho0": self.target_rho0.tolist(),
            "n_paths": self.n_paths,
            "horizon": self.horizon,
            "dt": self.dt,
            "bridge": self.bridge,
            "residual_mass": self.residual,
            "tail_corrected": self.tail,
        }


def exit_probability_mc(
    beta: float,
    R,
    n_paths: int,
    horizon: float | None = None,
    dt: float | None = None,
    seed: int = 0,
    bridge: bool = True,
    batch: int = 2000,
    residual_tol: float = 1e-3,
    n_steps: int = 1000,
    tail: bool = True,
) -> ExitEstimate:
    """P(sup_t rho(t) >= R) and P(sup_t rho0(t) >= R) from simulated scalar W paths.

    log rho = 2 beta W - beta^2 t / 2 and log rho0 = 2 beta W - beta^2 t / 4.
    With ``bridge`` on, each path contributes the exact conditional crossing
    probability given its grid values, 1 - prod_m (1 - exp(-2 (a - X_m)(a - X_m+1) / (sigma^2 dt))),
    which has no time-discretisation bias; otherwise the grid indicator is used
    and the estimate is biased low by O(sqrt(dt)).  With ``tail`` on, a path
    still below the level at T also contributes the exact probability
    exp(-2 mu (a - X_T) / sigma^2) of crossing after T, removing the residual
    mass.  The horizon defaults to :func:`exit_horizon`; ``dt`` defaults to
    horizon / n_steps.
    """
    R_arr = np.atleast_1d(np.asarray(R, dtype=float))
    if np.any(R_arr < 1):
        raise ValueError("R must be >= 1")
    if n_paths < 1:
        raise ValueError("n_paths must be >= 1")
    if beta == 0:
        p0 = (R_arr <= 1).astype(float)
        z = np.zeros_like(R_arr)
        return ExitEstimate(0.0, R_arr, p0, p0.copy(), z, z.copy(), n_paths, 0.0, 0.0, bridge, 0.0)
    T = exit_horizon(beta, R_arr, residual_tol) if horizon is None else float(horizon)
    steps = n_steps if dt is None else int(round(T / dt))
    dt = T / steps
    sigma2 = 4 * beta**2
    resid = max(
        residual_mass(math.log(r), mu, 2 * abs(beta), T) for r in R_arr for mu in (beta**2 / 2, beta**2 / 4)
    )
    t = dt * np.arange(steps + 1)
    a = np.log(R_arr)
    acc = {mu: np.zeros((len(R_arr), n_paths)) for mu in (0.5, 0.25)}
    for start in range(0, n_paths, batch):
        ids = range(start, min(start + batch, n_paths))
        dW = np.stack([path_rng(seed, i).standard_normal(steps) for i in ids]) * math.sqrt(dt)
        W = np.concatenate([np.zeros((len(ids), 1)), np.cumsum(dW, axis=1)], axis=1)
        for mu in (0.5, 0.25):
            X = 2 * beta * W - mu * beta**2 * t
            for j, aj in enumerate(a):
                hit = np.any(X >= aj, axis=1)
                if bridge:
                    gap = np.maximum(aj - X, 0.0)
                    p = np.exp(-2 * gap[:, :-1] * gap[:, 1:] / (sigma2 * dt))
                    with np.errstate(divide="ignore"):
                        log_stay = np.sum(np.log1p(-np.minimum(p, 1.0)), axis=1)
                        if tail:
                            log_stay = log_stay + np.log1p(-np.exp(-2 * mu * beta**2 * gap[:, -1] / sigma2))
                    val = np.where(hit, 1.0, -np.expm1(log_stay))
                else:
                    val = hit.astype(float)
                acc[mu][j, start : start + len(ids)] = val
    est = {mu: v.mean(axis=1) for mu, v in acc.items()}
    se = {mu: v.std(axis=1, ddof=1) / math.sqrt(n_paths) if n_paths > 1 else np.zeros(len(R_arr)) for mu, v in acc.items()}
    return ExitEstimate(beta, R_arr, est[0.5], est[0.25], se[0.5], se[0.25], n_paths, T, dt, bridge, resid, bridge and tail)
