"""Cut-off Galerkin integrators, stopping times and path bookkeeping."""

import math

import numpy as np
import pytest

from fracspde.integrators import (
    ArrayIncrements,
    PathState,
    SimConfig,
    StopThresholds,
    chi_cutoff,
    detect_stops,
    initial_state,
    run_path,
    step_em_ito,
    step_transformed,
)
from fracspde.models import CoercivityProfile, ConfigError, ModelSpec, NoiseSpec
from fracspde.spectral import Grid, SpectralField, real_field_from_modes

G1 = Grid(dim=1, basis="fourier", n=32)
LINEAR = ModelSpec(kind="linear", alpha=1.0, s0=1.0, grid=G1)
BURGERS = ModelSpec(kind="burgers", alpha=0.6, s0=1.1, grid=G1)
SIN = real_field_from_modes(G1, [(1, 0.0, -0.5)])


class TestCutoff:
    def test_boundaries(self):
        assert chi_cutoff(4.0, 4.0) == 1.0
        assert chi_cutoff(10.0, 4.0) == 0.0

    def test_transition_formula(self):
        phi = lambda s: math.exp(-1 / s)  # noqa: E731
        expect = phi(0.5) / (phi(0.5) + phi(0.5))
        assert chi_cutoff(6.0, 4.0) == pytest.approx(expect, abs=1e-15)
        y = 1.3
        assert chi_cutoff(y * 4, 4.0) == pytest.approx(phi(2 - y) / (phi(2 - y) + phi(y - 1)), abs=1e-15)

    def test_monotone(self):
        x = np.linspace(0, 3, 301)
        assert np.all(np.diff(chi_cutoff(x, 1.0)) <= 0)


class TestConfig:
    def test_bad_values(self):
        with pytest.raises(ConfigError):
            SimConfig(dt=-1.0, horizon=1.0)
        with pytest.raises(ConfigError):
            SimConfig(dt=0.3, horizon=1.0)
        with pytest.raises(ConfigError):
            SimConfig(dt=0.1, horizon=1.0, scheme="rk4")


class TestSteps:
    def test_heat_exact(self):
        k, dt, m = 3, 1e-2, 25
        th = real_field_from_modes(G1, [(k, 0.0, -0.5)])
        state = initial_state(LINEAR, th)
        cfg = SimConfig(dt=dt, horizon=1.0)
        for _ in range(m):
            state = step_em_ito(state, LINEAR, None, cfg, dW=[0.0])
        expect = th * math.exp(-(k**2) * m * dt)
        assert state.theta.allclose(expect, atol=1e-15)
        assert state.t == pytest.approx(m * dt)

    def test_zero_stays_zero(self):
        state = initial_state(BURGERS, SpectralField.zeros(G1))
        cfg = SimConfig(dt=1e-2, horizon=1.0)
        rng = np.random.default_rng(0)
        for _ in range(10):
            state = step_em_ito(state, BURGERS, NoiseSpec(beta=1.0), cfg, rng=rng)
        assert state.theta.norm() == 0

    def test_transformed_linear_closed_form(self):
        noise = NoiseSpec(beta=0.8)
        cfg = SimConfig(dt=1e-2, horizon=1.0)
        state = initial_state(LINEAR, SIN)
        W = 0.0
        rng = np.random.default_rng(1)
        for n in range(1, 51):
            dw = rng.standard_normal() * 0.1
            W += dw
            state = step_transformed(state, LINEAR, noise, cfg, dW=[dw])
            t = n * cfg.dt
            expect = SIN * math.exp(-t + 0.8 * W - 0.32 * t)
            assert state.theta.allclose(expect, atol=1e-14)
        assert state.gamma == pytest.approx(math.exp(-0.8 * W))

    def test_transformed_needs_linear_noise(self):
        b = real_field_from_modes(G1, [(1, 0.5, 0.0)])
        with pytest.raises(ValueError):
            step_transformed(initial_state(LINEAR, SIN), LINEAR, NoiseSpec(kind="trace_class", b_fields=(b,)), SimConfig(dt=0.1, horizon=1.0), dW=[0.1])

    def test_burgers_self_convergence(self):
        ends = []
        for dt in (4e-3, 2e-3, 1e-3):
            ends.append(run_path(BURGERS, None, SimConfig(dt=dt, horizon=0.5), SIN).terminal)
        d1 = (ends[0] - ends[1]).norm()
        d2 = (ends[1] - ends[2]).norm()
        assert 1.7 <= d1 / d2 <= 2.3


class TestStops:
    def test_constant_norm_censored(self):
        t = np.arange(5) * 0.1
        rec = detect_stops(t, np.ones(5), np.ones(5) * 0.5, np.ones(5) * 0.5, StopThresholds(4.0, 2.0, 4.0))
        assert not rec.tau_R.hit and rec.tau_R.time == pytest.approx(0.4)
        assert not rec.sigma.hit

    def test_first_crossing(self):
        t = np.array([0.0, 0.1, 0.2])
        rec = detect_stops(t, [1.0, 2.0, 5.0], [1, 1, 1], [1, 1, 1], StopThresholds(4.0, None, 4.0))
        assert rec.tau_R.hit and rec.tau_R.time == pytest.approx(0.2)

    def test_sigma_R_scalar_replay(self):
        dt, n = 1e-2, 400
        t = dt * np.arange(n + 1)
        for seed in range(100):  # first stored path that reaches the level
            dW = np.random.default_rng(seed).standard_normal(n) * math.sqrt(dt)
            W = np.concatenate([[0.0], np.cumsum(dW)])
            if np.any(2 * W - t / 2 >= 2):
                break
        cfg = SimConfig(dt=dt, horizon=n * dt, rho_R=math.e**2, scheme="transformed_exponential")
        res = run_path(LINEAR, NoiseSpec(beta=1.0), cfg, SIN, increments=ArrayIncrements(dW[None]))
        hits = np.flatnonzero(2 * W - t / 2 >= 2)
        assert res.record.sigma_R.hit
        assert res.record.sigma_R.time == pytest.approx(t[hits[0]])

    def test_immediate_tau(self):
        th = SIN * 10.0
        res = run_path(BURGERS, None, SimConfig(dt=1e-2, horizon=0.1, cutoff_R=1.0), th)
        assert res.record.tau_R.hit and res.record.tau_R.time == 0.0
        assert not res.survived


class TestRunPath:
    def test_heat_decay(self):
        res = run_path(LINEAR, None, SimConfig(dt=1e-2, horizon=1.0), SIN)
        assert abs(res.terminal.norm() - math.exp(-1) * math.sqrt(math.pi)) / (math.exp(-1) * math.sqrt(math.pi)) <= 1e-10

    def test_reproducible(self):
        cfg = SimConfig(dt=1e-2, horizon=0.5, seed=9)
        a = run_path(BURGERS, NoiseSpec(beta=1.0), cfg, SIN)
        b = run_path(BURGERS, NoiseSpec(beta=1.0), cfg, SIN)
        assert np.array_equal(a.h_s0_norm, b.h_s0_norm)
        assert np.array_equal(a.terminal.coeffs, b.terminal.coeffs)
        assert a.record == b.record

    def test_seed_changes_path(self):
        a = run_path(BURGERS, NoiseSpec(beta=1.0), SimConfig(dt=1e-2, horizon=0.5, seed=1), SIN)
        b = run_path(BURGERS, NoiseSpec(beta=1.0), SimConfig(dt=1e-2, horizon=0.5, seed=2), SIN)
        assert not np.array_equal(a.h_s0_norm, b.h_s0_norm)

    def test_linear_envelope(self):
        cfg = SimConfig(dt=1e-2, horizon=2.0, scheme="transformed_exponential", seed=3)
        # C1 small enough that sigma = rho_1^{-1}(beta^2/4) lies far above the data
        prof = CoercivityProfile(C1=1e-3, delta=1.0)
        res = run_path(LINEAR, NoiseSpec(beta=1.5), cfg, SIN + real_field_from_modes(G1, [(2, 0.3, 0.0)]), profile=prof)
        assert res.envelope_checks > 0
        assert res.envelope_violations == 0

    def test_numerical_blowup_flag(self):
        supercritical = ModelSpec(kind="burgers", alpha=0.3, s0=1.1, grid=G1, strict=False)
        res = run_path(supercritical, None, SimConfig(dt=1e-2, horizon=1.0, cutoff_R=1e300), SIN * 1000.0)
        assert res.blown_up and not res.survived
        assert not res.record.tau_R.hit

    def test_stride(self):
        res = run_path(LINEAR, None, SimConfig(dt=1e-2, horizon=1.0, record_stride=10), SIN)
        assert len(res.times) == 11
        np.testing.assert_allclose(res.times, np.linspace(0, 1, 11))

    def test_wrong_grid(self):
        with pytest.raises(ValueError):
            run_path(LINEAR, None, SimConfig(dt=0.1, horizon=1.0), SpectralField.zeros(Grid(dim=1, n=16)))


class TestPathState:
    def test_v(self):
        s = PathState(t=0.0, theta=SIN, gamma=0.5)
        assert s.v.allclose(SIN * 0.5)
