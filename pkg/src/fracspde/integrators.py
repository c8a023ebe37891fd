"""Time stepping of the cut-off Galerkin system and stopping-time bookkeeping.

Two schemes advance the Galerkin state ``theta_n``:

``em_ito``
    Exponential (integrating-factor) Euler for ``A^alpha`` combined with an
    explicit Euler step for ``chi_R P_n f`` and the Ito left-point increment
    ``chi_R P_n G(theta) dW``::

        theta' = E (theta - dt chi f(theta) + chi G(theta) dW),
        E = exp(-lambda^alpha dt)

``transformed_exponential``
    Linear multiplicative noise only.  The random PDE for ``v = gamma theta``,
    ``gamma = exp(-beta W)``, is stepped with the exact factor
    ``exp(-(lambda^alpha + beta^2/2) dt)`` and explicit Euler on
    ``chi gamma f(gamma^{-1} v)``.  Mapping back through ``theta = v / gamma``
    gives the algebraically identical update that is stored::

        theta' = exp(beta dW - beta^2 dt / 2) E (theta - dt chi f(theta))

    which never forms ``gamma`` or ``1/gamma`` and so cannot overflow.

Paths are advanced in batches: every array carries a leading path axis.
Brownian increments for path ``i`` of master seed ``s`` come from
``numpy.random.default_rng(SeedSequence(s, spawn_key=(i,)))``, drawn as
standard normals in row-major ``(step, component)`` order, independently of
how paths are batched.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .models import CoercivityProfile, ModelSpec, NoiseSpec, coercivity_profile, noise_term, nonlinear_term
from .spectral import SpectralField

__all__ = [
    "SCHEMES",
    "SimConfig",
    "PathState",
    "StopTime",
    "StoppingRecord",
    "StopThresholds",
    "PathResult",
    "BrownianSource",
    "ArrayIncrements",
    "path_rng",
    "chi_cutoff",
    "step_em_ito",
    "step_transformed",
    "detect_stops",
    "run_path",
    "run_batch",
    "initial_state",
]

SCHEMES = ("em_ito", "transformed_exponential")


@dataclass(frozen=True)
class SimConfig:
    dt: float
    horizon: float
    cutoff_R: float = 1.0e6
    galerkin_n: int | None = None
    scheme: str = "em_ito"
    seed: int = 0
    record_stride: int = 1
    rho_R: float | None = None
    decay_rel: float = 1e-3
    decay_epsilon: float | None = None
    stop_at_tau: bool = True
    envelope_tol: float = 0.0

    def __post_init__(self):
        errors = self.validate()
        if errors:
            from .models import ConfigError

            raise ConfigError(errors)

    def validate(self, grid=None) -> list[str]:
        errors = []
        if not self.dt > 0:
            errors.append(f"sim.dt must be positive, got {self.dt}")
        if not self.horizon > 0:
            errors.append(f"sim.horizon must be positive, got {self.horizon}")
        elif self.dt > 0:
            if not self.dt < self.horizon:
                errors.append("sim.dt must be smaller than sim.horizon")
            ratio = self.horizon / self.dt
            if abs(ratio - round(ratio)) > 1e-6 * max(1.0, ratio):
                errors.append("sim.horizon must be an integer multiple of sim.dt")
        if not self.cutoff_R > 0:
            errors.append("sim.cutoff_R must be positive")
        if self.scheme not in SCHEMES:
            errors.append(f"sim.scheme must be one of {SCHEMES}, got {self.scheme!r}")
        if self.record_stride < 1:
            errors.append("sim.record_stride must be >= 1")
        if self.galerkin_n is not None and self.galerkin_n < 1:
            errors.append("sim.galerkin_n must be >= 1")
        if grid is not None and self.galerkin_n is not None and self.galerkin_n > grid.n:
            errors.append(f"sim.galerkin_n = {self.galerkin_n} exceeds grid size {grid.n}")
        if self.rho_R is not None and not self.rho_R >= 1:
            errors.append("sim.rho_R must be >= 1")
        if not 0 <= self.seed < 2**64:
            errors.append("sim.seed must be a 64-bit unsigned integer")
        return errors

    @property
    def n_steps(self) -> int:
        return int(round(self.horizon / self.dt))

    @property
    def sigma_R_level(self) -> float:
        return self.cutoff_R if self.rho_R is None else self.rho_R

    def to_dict(self) -> dict:
        return {
            "dt": self.dt,
            "horizon": self.horizon,
            "cutoff_R": self.cutoff_R,
            "galerkin_n": self.galerkin_n,
            "scheme": self.scheme,
            "seed": self.seed,
            "record_stride": self.record_stride,
            "rho_R": self.rho_R,
            "decay_rel": self.decay_rel,
            "decay_epsilon": self.decay_epsilon,
            "stop_at_tau": self.stop_at_tau,
            "envelope_tol": self.envelope_tol,
        }


def chi_cutoff(x, R: float):
    """Smooth cut-off: 1 on [0, R], 0 on [2R, inf).

    In between, chi(x) = phi(2 - x/R) / (phi(2 - x/R) + phi(x/R - 1)) with
    phi(s) = exp(-1/s) for s > 0 and 0 otherwise.
    """
    if not R > 0:
        raise ValueError("R must be positive")
    y = np.asarray(x, dtype=float) / R

    def phi(s):
        pos = s > 0
        return np.where(pos, np.exp(-1.0 / np.where(pos, s, 1.0)), 0.0)

    a = phi(2.0 - y)
    b = phi(y - 1.0)
    with np.errstate(invalid="ignore"):
        out = np.where(y <= 1.0, 1.0, np.where(y >= 2.0, 0.0, a / (a + b)))
    return out if out.ndim else float(out)


# -- Brownian increments -------------------------------------------------------


def path_rng(master_seed: int, path_index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(int(master_seed), spawn_key=(int(path_index),)))


class BrownianSource:
    """Per-path Brownian increments, drawn block-wise from independent streams."""

    def __init__(self, master_seed: int, path_indices: Sequence[int], n_components: int, dt: float):
        self.rngs = [path_rng(master_seed, i) for i in path_indices]
        self.k = n_components
        self.sqdt = math.sqrt(dt)

    def next_block(self, n: int) -> np.ndarray:
        """Array (n, B, K) of increments."""
        out = np.empty((n, len(self.rngs), self.k))
        for j, rng in enumerate(self.rngs):
            out[:, j, :] = rng.standard_normal((n, self.k))
        return out * self.sqdt


class ArrayIncrements:
    """Increments supplied explicitly as an array (B, n_steps, K)."""

    def __init__(self, dW: np.ndarray):
        dW = np.asarray(dW, dtype=float)
        if dW.ndim == 2:
            dW = dW[:, :, None]
        self.dW = dW
        self.pos = 0

    def next_block(self, n: int) -> np.ndarray:
        blk = self.dW[:, self.pos : self.pos + n, :]
        if blk.shape[1] != n:
            raise ValueError("not enough increments supplied")
        self.pos += n
        return np.transpose(blk, (1, 0, 2))


# -- state and records ---------------------------------------------------------


@dataclass(frozen=True)
class PathState:
    t: float
    theta: SpectralField
    W: float | np.ndarray = 0.0
    gamma: float = 1.0
    stopped: bool = False
    blown_up: bool = False

    @property
    def v(self) -> SpectralField:
        """Transformed unknown v = gamma theta."""
        return self.theta * self.gamma


@dataclass(frozen=True)
class StopTime:
    time: float
    hit: bool

    def to_dict(self) -> dict:
        return {"time": self.time, "status": "hit" if self.hit else "censored"}


@dataclass(frozen=True)
class StoppingRecord:
    tau_R: StopTime
    sigma: StopTime
    sigma_R: StopTime
    sigma0_R: StopTime

    def to_dict(self) -> dict:
        return {k: getattr(self, k).to_dict() for k in ("tau_R", "sigma", "sigma_R", "sigma0_R")}


@dataclass(frozen=True)
class StopThresholds:
    tau_R: float
    sigma: float | None
    sigma_R: float


def detect_stops(times, h_s0_norm, rho, rho0, thresholds: StopThresholds) -> StoppingRecord:
    """First grid times of each threshold crossing; censored at the last time otherwise.

    tau_R: |Lambda^s0 theta| >= R; sigma: |Lambda^s0 theta| > rho_1^{-1}(beta^2/4)
    (never hit when the threshold is undefined); sigma_R: rho >= R;
    sigma0_R: rho0 >= R.
    """
    times = np.asarray(times, dtype=float)
    if times.size == 0:
        raise ValueError("empty trajectory")
    if np.any(np.diff(times) <= 0):
        raise ValueError("time grid must be increasing")
    h = np.asarray(h_s0_norm, dtype=float)
    T = float(times[-1])

    def first(cond) -> StopTime:
        idx = np.flatnonzero(cond)
        return StopTime(float(times[idx[0]]), True) if idx.size else StopTime(T, False)

    sig = first(h > thresholds.sigma) if thresholds.sigma is not None else StopTime(T, False)
    return StoppingRecord(
        tau_R=first(h >= thresholds.tau_R),
        sigma=sig,
        sigma_R=first(np.asarray(rho) >= thresholds.sigma_R),
        sigma0_R=first(np.asarray(rho0) >= thresholds.sigma_R),
    )


@dataclass
class BatchResult:
    """Raw per-path outcome of :func:`run_batch` (indices into the time grid, -1 = none)."""

    dt: float
    n_steps: int
    tau_idx: np.ndarray
    sigma_idx: np.ndarray
    sigma_R_idx: np.ndarray
    sigma0_R_idx: np.ndarray
    blowup_idx: np.ndarray
    stop_idx: np.ndarray
    initial_norm: np.ndarray
    terminal_norm: np.ndarray
    terminal: np.ndarray
    terminal_W: np.ndarray
    envelope_checks: np.ndarray
    envelope_violations: np.ndarray
    trajectory: dict | None = None

    @property
    def blown_up(self) -> np.ndarray:
        return self.blowup_idx >= 0

    @property
    def survived(self) -> np.ndarray:
        return (self.tau_idx < 0) & ~self.blown_up


@dataclass
class PathResult:
    record: StoppingRecord
    times: np.ndarray
    h_s0_norm: np.ndarray
    l2_norm: np.ndarray
    rho: np.ndarray
    rho0: np.ndarray
    chi_active: np.ndarray
    survived: bool
    decayed: bool
    blown_up: bool
    terminal: SpectralField
    terminal_norm: float
    decay_epsilon: float
    envelope_checks: int
    envelope_violations: int

    def trajectory_rows(self):
        for row in zip(self.times, self.h_s0_norm, self.l2_norm, self.rho, self.rho0, self.chi_active):
            yield row


# -- the stepping kernel -------------------------------------------------------


class _Kernel:
    def __init__(self, model: ModelSpec, noise: NoiseSpec | None, cfg: SimConfig):
        g = model.grid
        self.model, self.cfg, self.grid = model, cfg, g
        self.noise = noise if noise is not None else NoiseSpec(beta=0.0)
        if cfg.scheme == "transformed_exponential" and not self.noise.linear:
            raise ValueError("the transformed scheme needs linear multiplicative noise")
        if not self.noise.linear:
            if model.components != 1:
                raise ValueError("trace-class noise is only implemented for scalar models")
            if self.noise.b_fields[0].grid != g:
                raise ValueError("noise fields and model live on different grids")
        gn = g.kmax if cfg.galerkin_n is None else cfg.galerkin_n
        errs = cfg.validate(g)
        if errs:
            raise ValueError("; ".join(errs))
        self.mask = (g.dealias_mask & g.galerkin_mask(gn)).astype(float)
        la = np.where(g.lam > 0, g.lam, 0.0) ** model.alpha
        self.E = np.exp(-la * cfg.dt) * self.mask
        self.dt = cfg.dt
        self.beta = self.noise.beta if self.noise.linear else 0.0
        self.fnd = len(model.field_shape)
        self.w_s0 = g.weight * g.lambda_power(2 * model.s0)
        self.K = self.noise.n_increments

    def project(self, c: np.ndarray) -> np.ndarray:
        c = self.model.project_state(c)
        return c * self.mask

    def _sum(self, a: np.ndarray) -> np.ndarray:
        return a.reshape(a.shape[0], int(np.prod(a.shape[1:]))).sum(axis=1)

    def norms(self, c: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        a = np.abs(c) ** 2
        h = np.sqrt(self._sum(a * self.w_s0))
        l2 = np.sqrt(self._sum(a) * self.grid.weight)
        return h, l2

    def _bcast(self, x: np.ndarray) -> np.ndarray:
        return x.reshape((-1,) + (1,) * self.fnd)

    def step(self, c: np.ndarray, dW: np.ndarray, chi: np.ndarray) -> np.ndarray:
        F = nonlinear_term(self.model, c) * self.mask
        ch = self._bcast(chi)
        if self.cfg.scheme == "em_ito":
            G = noise_term(self.noise, self.grid, c, dW, self.model.mean_zero) * self.mask
            inner = c - self.dt * ch * F + ch * G
            if self.model.kind == "navier_stokes" and not self.noise.linear:
                inner = self.project(inner)
            return self.E * inner
        fac = np.exp(self.beta * dW[:, 0] - 0.5 * self.beta**2 * self.dt)
        return self._bcast(fac) * (self.E * (c - self.dt * ch * F))


def _first_update(idx: np.ndarray, cond: np.ndarray, sel: np.ndarray, m: int):
    new = cond & (idx[sel] < 0)
    idx[sel[new]] = m


def run_batch(
    model: ModelSpec,
    noise: NoiseSpec | None,
    cfg: SimConfig,
    theta0: np.ndarray,
    increments,
    *,
    profile: CoercivityProfile | None = None,
    record: bool = False,
    block: int = 512,
) -> BatchResult:
    """Advance a batch of paths (leading axis of ``theta0``) to the horizon."""
    ker = _Kernel(model, noise, cfg)
    B = theta0.shape[0]
    c = ker.project(np.array(theta0, dtype=model.grid.dtype))
    n_steps, dt = cfg.n_steps, cfg.dt
    beta = ker.beta
    if profile is None:
        profile = coercivity_profile(model)
    sigma_thr = profile.sigma_threshold(beta**2) if ker.noise.linear else None
    log_R = math.log(cfg.sigma_R_level)

    tau_idx = np.full(B, -1)
    sigma_idx = np.full(B, -1)
    sR_idx = np.full(B, -1)
    s0R_idx = np.full(B, -1)
    blow_idx = np.full(B, -1)
    stop_idx = np.full(B, -1)
    env_checks = np.zeros(B, dtype=int)
    env_viol = np.zeros(B, dtype=int)
    W = np.zeros(B)
    active = np.ones(B, dtype=bool)
    h0, _ = ker.norms(c)
    h_last = h0.copy()

    traj = None
    if record:
        traj = {k: [] for k in ("t", "h_s0_norm", "l2_norm", "rho", "rho0", "chi_active")}

    buf = None
    pos = 0
    with np.errstate(over="ignore", invalid="ignore"):
        for m in range(n_steps + 1):
            t = m * dt
            sel = np.flatnonzero(active)
            cs = c[sel] if sel.size < B else c
            h, l2 = ker.norms(cs)
            h_last[sel] = h
            finite = np.isfinite(h) & np.isfinite(l2)
            if not np.all(finite):
                bad = sel[~finite]
                blow_idx[bad] = m
                stop_idx[bad] = m
                active[bad] = False
            chi = chi_cutoff(np.where(finite, h, np.inf), cfg.cutoff_R)
            # rho, rho0 are functions of the W path only and are tracked for every path
            log_rho = 2 * beta * W - 0.5 * beta**2 * t
            log_rho0 = 2 * beta * W - 0.25 * beta**2 * t
            if ker.noise.linear:
                _first_update(sR_idx, log_rho >= log_R, np.arange(B), m)
                _first_update(s0R_idx, log_rho0 >= log_R, np.arange(B), m)
            tau_hit = finite & (h >= cfg.cutoff_R)
            _first_update(tau_idx, tau_hit, sel, m)
            if sigma_thr is not None:
                before_sigma = finite & (sigma_idx[sel] < 0) & ~(h > sigma_thr)
                rho_sel = np.exp(log_rho[sel])
                env_checks[sel] += before_sigma
                env_viol[sel] += before_sigma & (h**2 > rho_sel * h0[sel] ** 2 * (1 + cfg.envelope_tol))
                _first_update(sigma_idx, finite & (h > sigma_thr), sel, m)
            if record and (m % cfg.record_stride == 0 or m == n_steps):
                hh = np.full(B, np.nan)
                ll = np.full(B, np.nan)
                ca = np.zeros(B, dtype=bool)
                hh[sel] = h
                ll[sel] = l2
                ca[sel] = chi < 1.0
                traj["t"].append(t)
                traj["h_s0_norm"].append(hh)
                traj["l2_norm"].append(ll)
                traj["rho"].append(np.exp(log_rho))
                traj["rho0"].append(np.exp(log_rho0))
                traj["chi_active"].append(ca)
            if cfg.stop_at_tau and np.any(tau_hit):
                hit = sel[tau_hit]
                stop_idx[hit] = m
                active[hit] = False
            if m == n_steps:
                break
            if buf is None or pos == buf.shape[0]:
                buf = increments.next_block(min(block, n_steps - m))
                pos = 0
            dW = buf[pos]
            pos += 1
            sel2 = np.flatnonzero(active)
            if sel2.size:
                keep = np.isin(sel, sel2) if sel2.size < sel.size else np.ones(sel.size, dtype=bool)
                chi2 = chi[keep]
                if sel2.size == B:
                    c = ker.step(c, dW, chi2)
                else:
                    c[sel2] = ker.step(c[sel2], dW[sel2], chi2)
            W = W + dW[:, 0]

    terminal_norm = np.where(blow_idx >= 0, np.inf, h_last)
    if traj is not None:
        traj = {k: np.array(v) for k, v in traj.items()}
    return BatchResult(
        dt=dt,
        n_steps=n_steps,
        tau_idx=tau_idx,
        sigma_idx=sigma_idx,
        sigma_R_idx=sR_idx,
        sigma0_R_idx=s0R_idx,
        blowup_idx=blow_idx,
        stop_idx=stop_idx,
        initial_norm=h0,
        terminal_norm=terminal_norm,
        terminal=c,
        terminal_W=W,
        envelope_checks=env_checks,
        envelope_violations=env_viol,
        trajectory=traj,
    )


# -- single-path API -----------------------------------------------------------


def initial_state(model: ModelSpec, theta0: SpectralField) -> PathState:
    return PathState(t=0.0, theta=theta0)


def _single_step(state: PathState, model, noise, cfg, dW, rng, scheme: str) -> PathState:
    if state.stopped:
        raise ValueError("cannot advance a stopped path")
    noise = noise if noise is not None else NoiseSpec(beta=0.0)
    K = noise.n_increments
    if dW is None:
        if rng is None:
            raise ValueError("either dW or rng is required")
        dW = rng.standard_normal(K) * math.sqrt(cfg.dt)
    dW = np.asarray(dW, dtype=float).reshape(1, K)
    ker = _Kernel(model, noise, replace(cfg, scheme=scheme))
    c = np.array(state.theta.coeffs)[None]
    h, _ = ker.norms(c)
    chi = np.atleast_1d(chi_cutoff(h, cfg.cutoff_R))
    with np.errstate(over="ignore", invalid="ignore"):
        new = ker.step(c, dW, chi)[0]
    W = np.asarray(state.W, dtype=float) + (dW[0, 0] if K == 1 else dW[0])
    W = float(W) if np.ndim(W) == 0 else W
    gamma = math.exp(-noise.beta * W) if noise.linear else 1.0
    blown = not np.all(np.isfinite(new))
    return PathState(
        t=state.t + cfg.dt,
        theta=SpectralField(model.grid, np.where(np.isfinite(new), new, 0.0) if blown else new),
        W=W,
        gamma=gamma,
        stopped=blown,
        blown_up=blown,
    )


def step_em_ito(state: PathState, model: ModelSpec, noise: NoiseSpec | None, cfg: SimConfig, dW=None, rng=None) -> PathState:
    """One exponential-Euler / Euler-Maruyama step of the cut-off Galerkin system."""
    return _single_step(state, model, noise, cfg, dW, rng, "em_ito")


def step_transformed(state: PathState, model: ModelSpec, noise: NoiseSpec, cfg: SimConfig, dW=None, rng=None) -> PathState:
    """One step of the transformed random PDE (linear multiplicative noise)."""
    if noise is None or not noise.linear:
        raise ValueError("the transformed scheme needs linear multiplicative noise")
    return _single_step(state, model, noise, cfg, dW, rng, "transformed_exponential")


def _record_from(res: BatchResult, i: int, sigma_defined: bool, T: float) -> StoppingRecord:
    dt = res.dt
    censor = T if res.stop_idx[i] < 0 else res.stop_idx[i] * dt

    def st(idx, censor_time):
        return StopTime(float(idx * dt), True) if idx >= 0 else StopTime(float(censor_time), False)

    return StoppingRecord(
        tau_R=st(res.tau_idx[i], censor),
        sigma=st(res.sigma_idx[i], censor),
        sigma_R=st(res.sigma_R_idx[i], T),
        sigma0_R=st(res.sigma0_R_idx[i], T),
    )


def decay_threshold(cfg: SimConfig, initial_norm):
    if cfg.decay_epsilon is not None:
        return np.full_like(np.asarray(initial_norm, dtype=float), cfg.decay_epsilon)
    return cfg.decay_rel * np.asarray(initial_norm, dtype=float)


def run_path(
    model: ModelSpec,
    noise: NoiseSpec | None,
    cfg: SimConfig,
    theta0: SpectralField,
    *,
    profile: CoercivityProfile | None = None,
    increments=None,
) -> PathResult:
    """Simulate one path to the horizon, recording norms every ``record_stride`` steps.

    The Brownian stream is path 0 of master seed ``cfg.seed``.
    """
    if theta0.grid != model.grid or theta0.coeffs.shape != model.field_shape:
        raise ValueError("initial condition does not live on the model grid")
    noise = noise if noise is not None else NoiseSpec(beta=0.0)
    if increments is None:
        increments = BrownianSource(cfg.seed, [0], noise.n_increments, cfg.dt)
    res = run_batch(model, noise, cfg, np.array(theta0.coeffs)[None], increments, profile=profile, record=True)
    tr = res.trajectory
    keep = ~np.isnan(tr["h_s0_norm"][:, 0])
    T = cfg.n_steps * cfg.dt
    eps = float(decay_threshold(cfg, res.initial_norm)[0])
    survived = bool(res.survived[0])
    term_norm = float(res.terminal_norm[0])
    return PathResult(
        record=_record_from(res, 0, True, T),
        times=tr["t"][keep],
        h_s0_norm=tr["h_s0_norm"][keep, 0],
        l2_norm=tr["l2_norm"][keep, 0],
        rho=tr["rho"][keep, 0],
        rho0=tr["rho0"][keep, 0],
        chi_active=tr["chi_active"][keep, 0],
        survived=survived,
        decayed=survived and term_norm <= eps,
        blown_up=bool(res.blown_up[0]),
        terminal=SpectralField(model.grid, np.where(np.isfinite(res.terminal[0]), res.terminal[0], 0.0)),
        terminal_norm=term_norm,
        decay_epsilon=eps,
        envelope_checks=int(res.envelope_checks[0]),
        envelope_violations=int(res.envelope_violations[0]),
    )
