"""Spectral core: transforms, fractional powers, norms, projections, multipliers."""

import math

import numpy as np
import pytest

from fracspde.spectral import (
    Grid,
    SpectralField,
    apply_lambda_power,
    dealias,
    divergence,
    leray_project,
    load_field,
    project_galerkin,
    random_trig_field,
    real_field_from_modes,
    riesz_transform,
    save_field,
    sobolev_norm,
    to_physical,
    to_spectral,
)


def rel(a, b):
    a, b = np.asarray(a), np.asarray(b)
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-300))


class TestGrid:
    def test_defaults(self):
        g = Grid(dim=1, basis="fourier", n=16)
        assert math.isclose(g.length, 2 * math.pi)
        assert g.kmax == 5
        assert Grid(dim=1, basis="sine", n=16).length == pytest.approx(math.pi)

    def test_rejects_bad_grid(self):
        with pytest.raises(ValueError):
            Grid(dim=3, basis="fourier", n=16)
        with pytest.raises(ValueError):
            Grid(dim=1, basis="chebyshev", n=16)

    def test_eigenvalues(self):
        g = Grid(dim=1, basis="fourier", n=16, operator_order=4)
        k = g.index[0]
        np.testing.assert_allclose(g.lam, k.astype(float) ** 4)


class TestTransforms:
    def test_sine_samples(self):
        g = Grid(dim=1, basis="fourier", n=16)
        f = real_field_from_modes(g, [(1, 0.0, -0.5)])
        x = 2 * np.pi * np.arange(16) / 16
        assert rel(to_physical(f), np.sin(x)) <= 1e-14

    def test_zero_field(self):
        g = Grid(dim=2, basis="fourier", n=8)
        assert np.all(to_physical(SpectralField.zeros(g)) == 0)

    def test_direct_summation(self):
        g = Grid(dim=1, basis="fourier", n=16)
        rng = np.random.default_rng(3)
        ks = [1, -2, 3, 4]
        c = np.zeros(16, dtype=complex)
        for k in ks:
            c[k % 16] = rng.standard_normal() + 1j * rng.standard_normal()
        c = c + np.conj(np.roll(c[::-1], 1))
        x = 2 * np.pi * np.arange(16) / 16
        direct = sum(c[k % 16] * np.exp(1j * k * x) for k in set(ks) | {-k for k in ks})
        assert rel(to_physical(SpectralField(g, c)), direct.real) <= 1e-12

    def test_round_trip(self):
        for g in (Grid(dim=2, basis="fourier", n=16), Grid(dim=1, basis="sine", n=16)):
            f = random_trig_field(g, 4, np.random.default_rng(0))
            back = to_spectral(g, to_physical(f))
            assert back.allclose(f, atol=1e-13)

    def test_non_finite_rejected(self):
        g = Grid(dim=1, basis="fourier", n=8)
        c = np.zeros(8, dtype=complex)
        c[1] = np.nan
        with pytest.raises(ValueError):
            to_physical(SpectralField(g, c))


class TestLambdaPower:
    @pytest.mark.parametrize(
        "order,k,s,factor",
        [(2, 3, 1.0, 3.0), (4, 2, 1.0, 4.0), (2, 3, 0.5, math.sqrt(3.0))],
    )
    def test_eigenfunctions(self, order, k, s, factor):
        g = Grid(dim=1, basis="fourier", n=32, operator_order=order)
        f = real_field_from_modes(g, [(k, 0.0, -0.5)])
        out = apply_lambda_power(f, s)
        assert rel(out.coeffs, factor * f.coeffs) <= 1e-12

    def test_negative_power_with_mean_rejected(self):
        g = Grid(dim=1, basis="fourier", n=16)
        f = real_field_from_modes(g, [(0, 1.0, 0.0)])
        with pytest.raises(ValueError):
            apply_lambda_power(f, -1.0)

    def test_sine_basis(self):
        g = Grid(dim=1, basis="sine", n=16)
        f = real_field_from_modes(g, [(3, 1.0)])
        assert rel(apply_lambda_power(f, 1.0).coeffs, 3.0 * f.coeffs) <= 1e-12


class TestSobolevNorm:
    def test_sin_l2(self):
        g = Grid(dim=1, basis="fourier", n=16)
        f = real_field_from_modes(g, [(1, 0.0, -0.5)])
        assert sobolev_norm(f, 0).value == pytest.approx(math.sqrt(math.pi), rel=1e-14)

    def test_parseval_h2(self):
        g = Grid(dim=1, basis="fourier", n=16)
        f = real_field_from_modes(g, [(1, 0.0, -0.5), (2, 0.0, -0.5)])
        assert f.norm(2.0) == pytest.approx(math.sqrt(math.pi * 17), rel=1e-14)

    def test_quadrature(self):
        for g in (Grid(dim=2, basis="fourier", n=32), Grid(dim=1, basis="sine", n=32)):
            f = random_trig_field(g, 6, np.random.default_rng(1))
            for s in (0.0, 0.7, 1.5):
                u = to_physical(apply_lambda_power(f, s))
                # trapezoid on the periodic grid; interior-point rule h = L/(n+1) for sine samples
                h = g.length / (g.n if g.fourier else g.n + 1)
                quad = math.sqrt(np.sum(u**2) * h**g.dim)
                assert abs(f.norm(s) - quad) / quad <= 1e-10


class TestProjections:
    def test_galerkin(self):
        g = Grid(dim=1, basis="fourier", n=32)
        f = real_field_from_modes(g, [(1, 0.0, -0.5), (5, 0.0, -0.5)])
        assert project_galerkin(f, 2).allclose(real_field_from_modes(g, [(1, 0.0, -0.5)]))

    def test_dealias_idempotent(self):
        g = Grid(dim=2, basis="fourier", n=16)
        f = SpectralField(g, np.ones(g.shape))
        once = dealias(f)
        assert dealias(once).allclose(once)
        assert once.norm() <= f.norm()


class TestRiesz:
    g = Grid(dim=2, basis="fourier", n=16)

    def test_r1_cos(self):
        f = real_field_from_modes(self.g, [(1, 0, 0.5, 0.0)])
        expect = real_field_from_modes(self.g, [(1, 0, 0.0, 0.5)])  # -sin x1
        assert riesz_transform(f, 0).allclose(expect, atol=1e-14)

    def test_r2_cos_x1(self):
        f = real_field_from_modes(self.g, [(1, 0, 0.5, 0.0)])
        assert riesz_transform(f, 1).norm() <= 1e-14

    def test_r2_sin_x2(self):
        f = real_field_from_modes(self.g, [(0, 1, 0.0, -0.5)])
        expect = real_field_from_modes(self.g, [(0, 1, 0.5, 0.0)])  # cos x2
        assert riesz_transform(f, 1).allclose(expect, atol=1e-14)

    def test_sine_basis_rejected(self):
        g = Grid(dim=1, basis="sine", n=8)
        with pytest.raises(ValueError):
            riesz_transform(SpectralField.zeros(g), 0)


class TestLeray:
    g = Grid(dim=2, basis="fourier", n=16)

    def test_gradient_annihilated(self):
        # grad cos x1 = (-sin x1, 0)
        f = real_field_from_modes(self.g, [(0, 1, 0, 0.0, 0.5)], components=2)
        assert leray_project(f).norm() <= 1e-14

    def test_divergence_free_fixed(self):
        f = real_field_from_modes(self.g, [(0, 0, 1, 0.0, -0.5), (1, 1, 0, 0.0, -0.5)], components=2)
        assert leray_project(f).allclose(f, atol=1e-14)

    def test_random_divergence(self):
        f = random_trig_field(self.g, 5, np.random.default_rng(2), components=2)
        assert divergence(leray_project(f)).norm() <= 1e-12 * f.norm(1)

    def test_scalar_rejected(self):
        with pytest.raises(ValueError):
            leray_project(SpectralField.zeros(self.g))


class TestSnapshots:
    def test_save_load(self, tmp_path):
        g = Grid(dim=2, basis="fourier", n=8)
        f = random_trig_field(g, 2, np.random.default_rng(4), components=2)
        path, side = save_field(f, tmp_path / "f.csv")
        assert side.exists()
        assert load_field(path).allclose(f, atol=0)
