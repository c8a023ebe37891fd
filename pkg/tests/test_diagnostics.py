"""Brute-force oracle, sampled constants, scheme cross check and energy bookkeeping."""

import math

import numpy as np
import pytest

from fracspde.diagnostics import (
    LABEL,
    SampleFamily,
    active_modes,
    coercivity_sample,
    energy_budget,
    estimate_lemma_constant,
    lemma_ratio,
    oracle_error,
    oracle_nonlinearity,
    scheme_cross_check,
    skew_defect,
)
from fracspde.models import ModelSpec, NoiseSpec, nonlinearity
from fracspde.spectral import Grid, SpectralField, random_trig_field, real_field_from_modes, to_physical

G1 = Grid(dim=1, basis="fourier", n=32)
G2 = Grid(dim=2, basis="fourier", n=16)
BURGERS = ModelSpec(kind="burgers", alpha=0.6, s0=1.1, grid=G1)


class TestOracle:
    def test_burgers_sin(self):
        th = real_field_from_modes(G1, [(1, 0.0, -0.5)])
        (x,) = G1.points()
        assert np.max(np.abs(to_physical(oracle_nonlinearity(BURGERS, th)) - 0.5 * np.sin(2 * x))) <= 1e-14

    def test_sqg_single_direction(self):
        m = ModelSpec(kind="sqg", alpha=0.5, s0=1.5, grid=G2)
        th = real_field_from_modes(G2, [(1, 0, 0.5, 0.0)])
        assert oracle_nonlinearity(m, th).norm() <= 1e-14

    def test_burgers_two_modes(self):
        th = real_field_from_modes(G1, [(1, 0.0, -0.5), (2, 0.5, 0.0)])
        (x,) = G1.points()
        expect = 0.5 * np.sin(2 * x) - 0.5 * np.cos(x) + 1.5 * np.cos(3 * x) - np.sin(4 * x)
        assert np.max(np.abs(to_physical(oracle_nonlinearity(BURGERS, th)) - expect)) <= 1e-13

    def test_refuses_dense_fields(self):
        th = random_trig_field(G1, 10, np.random.default_rng(0))
        assert active_modes(th) > 8
        with pytest.raises(ValueError):
            oracle_nonlinearity(BURGERS, th)

    def test_agrees_with_fft(self):
        fam = SampleFamily(G1, 6, 20, seed=3, max_active=8)
        for th in fam.fields():
            assert oracle_error(BURGERS, th, nonlinearity(BURGERS, th)) <= 1e-12


class TestCoercivity:
    def test_zero_field_contributes_nothing(self):
        from fracspde.diagnostics import coercivity_ratios
        from fracspde.models import coercivity_profile

        z = np.zeros((1,) + G1.shape, dtype=complex)
        r = coercivity_ratios(BURGERS, z, 1.1, 1.0, 0.5, coercivity_profile(BURGERS))
        assert np.all(np.nan_to_num(r, nan=0.0) <= 0)

    def test_stable_under_doubling(self):
        fam = SampleFamily(G1, 6, 500, seed=7)
        a = coercivity_sample(BURGERS, fam)
        b = coercivity_sample(BURGERS, fam.with_count(1000))
        assert not a.diverged and not b.diverged
        assert a.label == LABEL
        assert abs(b.value - a.value) <= 0.2 * a.value

    def test_bad_s(self):
        with pytest.raises(ValueError):
            coercivity_sample(BURGERS, SampleFamily(G1, 4, 10), s=3.0)


class TestLemma:
    def test_product_fixture(self):
        # |Lambda(sin^2 x)|_2 / (2 |sin|_inf |Lambda sin|_2) = sqrt(pi) / (2 sqrt(pi)) = 1/2
        f = np.array(real_field_from_modes(G1, [(1, 0.0, -0.5)]).coeffs)[None]
        r = lemma_ratio("product", 1.0, (2, math.inf, 2, math.inf, 2), f, f, G1)
        assert r[0] == pytest.approx(0.5, rel=1e-12)

    def test_commutator_constant_f(self):
        f = np.array(real_field_from_modes(G1, [(0, 2.0, 0.0)]).coeffs)[None]
        g = np.array(random_trig_field(G1, 4, np.random.default_rng(1)).coeffs)[None]
        r = lemma_ratio("commutator", 1.0, (2, 4, 4, 4, 4), f, g, G1)
        assert r[0] == pytest.approx(0.0, abs=1e-12)

    def test_exponent_relation(self):
        f = np.zeros((1,) + G1.shape, dtype=complex)
        with pytest.raises(ValueError):
            lemma_ratio("product", 1.0, (2, 3, 3, 4, 4), f, f, G1)
        with pytest.raises(ValueError):
            lemma_ratio("commutator", 1.0, (2, math.inf, 2, math.inf, 2), f, f, G1)

    def test_bounded_and_stable(self):
        fam = SampleFamily(G1, 5, 250, seed=2, mean_zero=False)
        a = estimate_lemma_constant("product", 1.0, (2, math.inf, 2, math.inf, 2), fam)
        b = estimate_lemma_constant("product", 1.0, (2, math.inf, 2, math.inf, 2), fam.with_count(500))
        assert np.isfinite(a.value) and not b.diverged
        assert abs(b.value - a.value) <= 0.2 * a.value


class TestCrossCheck:
    def test_beta_zero_identical(self):
        th = real_field_from_modes(G1, [(1, 0.0, -0.5)])
        cc = scheme_cross_check(BURGERS, NoiseSpec(beta=0.0), th, [1e-2, 5e-3], horizon=0.2, n_paths=2)
        assert np.all(cc.error == 0)

    def test_dt_levels_must_nest(self):
        th = real_field_from_modes(G1, [(1, 0.0, -0.5)])
        with pytest.raises(ValueError):
            scheme_cross_check(BURGERS, NoiseSpec(beta=1.0), th, [3e-3, 2e-3], horizon=0.3)


class TestEnergy:
    def test_skew(self):
        for m in (BURGERS, ModelSpec(kind="sqg", alpha=0.5, s0=1.5, grid=G2)):
            for th in SampleFamily(m.grid, 4, 20, seed=0).fields():
                assert skew_defect(m, th) <= 1e-12

    def test_energy_decreases(self):
        th = random_trig_field(G1, 4, np.random.default_rng(0))
        b = energy_budget(BURGERS, th, 2e-3, 0.5)
        assert b.max_increase <= 0
        assert b.residual < 0.05
