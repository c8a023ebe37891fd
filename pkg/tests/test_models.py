"""Model nonlinearities, noise operators, coercivity profile and kappa."""

import math

import numpy as np
import pytest

from fracspde.models import (
    CoercivityProfile,
    ConfigError,
    ModelSpec,
    NoiseSpec,
    coercivity_profile,
    delta_exponent,
    kappa_threshold,
    noise_apply,
    nonlinearity,
)
from fracspde.spectral import Grid, SpectralField, real_field_from_modes, to_physical

G1 = Grid(dim=1, basis="fourier", n=32)
G2 = Grid(dim=2, basis="fourier", n=32)


def phys_err(field, expect):
    u = to_physical(field)
    return float(np.max(np.abs(u - expect)))


class TestNonlinearity:
    def test_burgers_sin(self):
        m = ModelSpec(kind="burgers", alpha=0.6, s0=1.1, grid=G1)
        th = real_field_from_modes(G1, [(1, 0.0, -0.5)])
        (x,) = G1.points()
        assert phys_err(nonlinearity(m, th), 0.5 * np.sin(2 * x)) <= 1e-13

    def test_burgers_two_modes(self):
        m = ModelSpec(kind="burgers", alpha=0.6, s0=1.1, grid=G1)
        th = real_field_from_modes(G1, [(1, 0.0, -0.5), (2, 0.5, 0.0)])
        (x,) = G1.points()
        expect = 0.5 * np.sin(2 * x) - 0.5 * np.cos(x) + 1.5 * np.cos(3 * x) - np.sin(4 * x)
        assert phys_err(nonlinearity(m, th), expect) <= 1e-13

    def test_sqg_single_direction(self):
        m = ModelSpec(kind="sqg", alpha=0.5, s0=1.5, grid=G2)
        th = real_field_from_modes(G2, [(1, 0, 0.5, 0.0)])
        assert nonlinearity(m, th).norm() <= 1e-13

    def test_sqg_two_modes(self):
        # theta = cos x1 + cos(x1 + x2); u = (-R2 theta, R1 theta) gives f = (1 - 1/sqrt2) sin x1 sin(x1 + x2)
        m = ModelSpec(kind="sqg", alpha=0.5, s0=1.5, grid=G2)
        th = real_field_from_modes(G2, [(1, 0, 0.5, 0.0), (1, 1, 0.5, 0.0)])
        x1, x2 = G2.points()
        expect = (1 - 1 / math.sqrt(2)) * np.sin(x1) * np.sin(x1 + x2)
        assert phys_err(nonlinearity(m, th), expect) <= 1e-13

    def test_kpz_mean_removed(self):
        m = ModelSpec(kind="kpz", alpha=0.75, s0=2.1, grid=G1)
        th = real_field_from_modes(G1, [(1, 0.0, -0.5)])
        (x,) = G1.points()
        assert phys_err(nonlinearity(m, th), 0.5 * np.cos(2 * x)) <= 1e-13

    def test_navier_stokes_divergence_free(self):
        from fracspde.spectral import divergence, random_trig_field

        m = ModelSpec(kind="navier_stokes", alpha=1.0, s0=2.0, grid=G2)
        th = SpectralField(G2, m.project_state(np.array(random_trig_field(G2, 4, np.random.default_rng(0), components=2).coeffs)))
        assert divergence(nonlinearity(m, th)).norm() <= 1e-11

    def test_zero_field(self):
        for m in (
            ModelSpec(kind="burgers", alpha=0.6, s0=1.1, grid=G1),
            ModelSpec(kind="reaction_diffusion", alpha=0.5, s0=1.0, grid=Grid(dim=1, basis="sine", n=16)),
        ):
            assert nonlinearity(m, SpectralField.zeros(m.grid)).norm() == 0


class TestModelSpec:
    def test_kpz_alpha_constraint(self):
        with pytest.raises(ConfigError, match="Theorem 5.9"):
            ModelSpec(kind="kpz", alpha=0.4, s0=2.1, grid=G1)

    def test_burgers_s0_constraint(self):
        with pytest.raises(ConfigError, match="Theorem 5.5"):
            ModelSpec(kind="burgers", alpha=0.3, s0=1.1, grid=G1)
        ModelSpec(kind="burgers", alpha=0.3, s0=1.1, grid=G1, strict=False)

    def test_grid_mismatch(self):
        with pytest.raises(ConfigError):
            ModelSpec(kind="sqg", alpha=0.5, s0=1.5, grid=G1)

    def test_collects_every_error(self):
        with pytest.raises(ConfigError) as exc:
            ModelSpec(kind="kpz", alpha=1.5, s0=0.5, grid=G1)
        assert len(exc.value.errors) >= 2


class TestNoise:
    def test_linear(self):
        th = real_field_from_modes(G1, [(1, 0.0, -0.5)])
        out = noise_apply(NoiseSpec(beta=2.0), th, [0.1])
        assert out.allclose(th * 0.2, atol=1e-15)

    def test_zero_increment(self):
        th = real_field_from_modes(G1, [(1, 0.0, -0.5)])
        b = real_field_from_modes(G1, [(1, 0.5, 0.0)])
        for nz in (NoiseSpec(beta=2.0), NoiseSpec(kind="trace_class", b_fields=(b,), g_poly=(0, 0, 1))):
            assert noise_apply(nz, th, [0.0]).norm() == 0

    def test_trace_class_product(self):
        # cos x sin^2 x = cos x / 4 - cos 3x / 4
        th = real_field_from_modes(G1, [(1, 0.0, -0.5)])
        b = real_field_from_modes(G1, [(1, 0.5, 0.0)])
        nz = NoiseSpec(kind="trace_class", b_fields=(b,), g_poly=(0, 0, 1))
        (x,) = G1.points()
        assert phys_err(noise_apply(nz, th, [1.0]), 0.25 * np.cos(x) - 0.25 * np.cos(3 * x)) <= 1e-14

    def test_trace_class_needs_fields(self):
        with pytest.raises(ConfigError):
            NoiseSpec(kind="trace_class")


class TestDelta:
    def test_sqg(self):
        assert delta_exponent(ModelSpec(kind="sqg", alpha=0.5, s0=1.5, grid=G2)) == pytest.approx(1.0)

    def test_navier_stokes(self):
        assert delta_exponent(ModelSpec(kind="navier_stokes", alpha=1.0, s0=2.0, grid=G2)) == pytest.approx(0.5)

    def test_kpz(self):
        assert delta_exponent(ModelSpec(kind="kpz", alpha=0.75, s0=2.1, grid=G1), s=2.1) == pytest.approx(2 / 3)


class TestProfile:
    def test_inverse(self):
        for kind, grid, a, s0 in (("burgers", G1, 0.6, 1.1), ("surface_growth", Grid(dim=1, n=32, operator_order=4), 0.9, 1.6)):
            prof = coercivity_profile(ModelSpec(kind=kind, alpha=a, s0=s0, grid=grid), C1=0.7)
            x = np.array([0.1, 1.0, 3.0])
            # the offset profile loses digits to cancellation when x^p << 1
            np.testing.assert_allclose(prof.rho1_inv(prof.rho1(x)), x, rtol=1e-10)
            assert np.all(np.diff(prof.rho1(x)) > 0)

    def test_kappa_sqg(self):
        prof = CoercivityProfile(C1=1.0, delta=1.0)
        assert kappa_threshold(prof, 1, 4) == pytest.approx(1.0)
        assert kappa_threshold(prof, 4, 4) == pytest.approx(0.25)

    def test_kappa_burgers(self):
        prof = CoercivityProfile(C1=1.0, delta=0.5, exponent_multiplier=2)
        assert kappa_threshold(prof, 4, 16) == pytest.approx(1.0)

    def test_kappa_monotone(self):
        prof = CoercivityProfile(C1=0.3, delta=0.8, exponent_multiplier=1, offset=1)
        Rs = [1, 4, 16, 256]
        k = [kappa_threshold(prof, R, 4.0) for R in Rs]
        assert all(a > b for a, b in zip(k, k[1:]))
        b2 = [1.5, 2.0, 8.0, 100.0]
        k = [kappa_threshold(prof, 16, b) for b in b2]
        assert all(a < b for a, b in zip(k, k[1:]))

    def test_kappa_undefined(self):
        prof = CoercivityProfile(C1=1.0, delta=1.0, offset=1)
        with pytest.raises(ValueError, match="Theorem 4.1"):
            kappa_threshold(prof, 16, 4.0)
