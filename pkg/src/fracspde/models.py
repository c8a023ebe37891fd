"""Nonlinearities, noise operators and coercivity profiles of the six model problems.

``f`` enters the equation as ``d theta + (f(theta) + A^alpha theta) dt = G(theta) dW``.
All products are evaluated in physical space on a grid large enough that the
result is exact on the dealiased band.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from numpy.polynomial import polynomial as P

from .spectral import Grid, SpectralField, leray_array, riesz_multiplier

__all__ = [
    "KINDS",
    "ConfigError",
    "ModelSpec",
    "CoercivityProfile",
    "NoiseSpec",
    "nonlinearity",
    "nonlinear_term",
    "noise_apply",
    "noise_term",
    "kappa_threshold",
    "delta_exponent",
    "coercivity_profile",
    "burgers_q_interval",
]

KINDS = ("burgers", "sqg", "navier_stokes", "kpz", "surface_growth", "reaction_diffusion", "linear")
MEAN_ZERO = {"burgers", "sqg", "navier_stokes", "kpz", "surface_growth"}


class ConfigError(ValueError):
    """Invalid configuration; ``errors`` lists every violated constraint."""

    def __init__(self, errors: Sequence[str]):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


@dataclass(frozen=True)
class ModelSpec:
    """One model problem on a grid.

    ``strict`` enforces the lower bounds on ``s0`` and ``alpha`` under which the
    well-posedness theorems are stated.  Turning it off still rejects
    configurations for which the coercivity exponent is undefined.
    """

    kind: str
    alpha: float
    s0: float
    grid: Grid
    kpz_lambda: float = 1.0
    reaction_poly: tuple[float, ...] = (0.0, 0.0, 1.0)
    burgers_eps2: float | None = None
    burgers_q: float | None = None
    strict: bool = True

    def __post_init__(self):
        object.__setattr__(self, "reaction_poly", tuple(float(a) for a in self.reaction_poly))
        errors = self.validate()
        if errors:
            raise ConfigError(errors)

    def validate(self) -> list[str]:
        k, a, s0, g = self.kind, self.alpha, self.s0, self.grid
        errors: list[str] = []
        if k not in KINDS:
            return [f"unknown model kind {k!r}; expected one of {KINDS}"]
        if not 0 < a <= 1:
            errors.append(f"alpha must lie in (0, 1], got {a}")
        d = g.dim
        geometry = {
            "burgers": g.fourier and d == 1 and g.operator_order == 2,
            "sqg": g.fourier and d == 2 and g.operator_order == 2,
            "navier_stokes": g.fourier and d == 2 and g.operator_order == 2,
            "kpz": g.fourier and g.operator_order == 2,
            "surface_growth": g.fourier and d == 1 and g.operator_order == 4,
            "reaction_diffusion": (not g.fourier) and g.operator_order == 2,
            "linear": True,
        }[k]
        if not geometry:
            errors.append(f"{k} is not available on grid {g.to_dict()}")
        if self.strict:
            if k == "burgers":
                lo = max(1.5 - a, 1.0)
                if s0 < lo:
                    errors.append(f"burgers requires s0 >= max(3/2 - alpha, 1) = {lo:g} (Theorem 5.5), got {s0}")
                if a >= 1:
                    errors.append("burgers requires alpha < 1 (Theorem 5.5)")
            elif k == "sqg":
                if s0 < 2 - a:
                    errors.append(f"sqg requires s0 >= 2 - alpha = {2 - a:g} (Theorem 5.6), got {s0}")
                if a >= 1:
                    errors.append("sqg requires alpha < 1 (Theorem 5.6)")
            elif k == "navier_stokes":
                lo = 1 + d / 2 - a
                if s0 < lo:
                    errors.append(f"navier_stokes requires s0 >= 1 + d/2 - alpha = {lo:g} (Theorem 5.8), got {s0}")
            elif k == "kpz":
                if not s0 > 1 + d / 2:
                    errors.append(f"kpz requires s0 > 1 + d/2 = {1 + d / 2:g} (Theorem 5.9), got {s0}")
            elif k == "surface_growth":
                if s0 < 1.5:
                    errors.append(f"surface_growth requires s0 >= 3/2 (Theorem 5.10), got {s0}")
            elif k == "reaction_diffusion":
                if not s0 > d / 2:
                    errors.append(f"reaction_diffusion requires s0 > d/2 = {d / 2:g} (Theorem 5.11), got {s0}")
        # conditions without which delta(s0) is undefined, checked regardless of strictness
        if k == "kpz" and not a > 0.5:
            errors.append(f"kpz requires alpha > 1/2 (Theorem 5.9), got {a}")
        if k == "surface_growth" and not a > 0.75:
            errors.append(f"surface_growth requires alpha > 3/4 (Theorem 5.10), got {a}")
        if k == "sqg" and not s0 + 2 * a - 2 > 0:
            errors.append("sqg needs s0 + 2 alpha - 2 > 0 for a positive coercivity exponent")
        if k == "navier_stokes" and not s0 + 2 * a - 1 - d / 2 > 0:
            errors.append("navier_stokes needs s0 + 2 alpha - 1 - d/2 > 0 for a positive coercivity exponent")
        if k == "reaction_diffusion" and (len(self.reaction_poly) < 2 or self.reaction_poly[-1] == 0):
            errors.append("reaction_diffusion needs p of degree >= 1 with non-zero leading coefficient")
        if k == "burgers" and 0 < a <= 1:
            try:
                self.burgers_parameters()
            except ValueError as exc:
                errors.append(str(exc))
        return errors

    @property
    def mean_zero(self) -> bool:
        return self.kind in MEAN_ZERO

    @property
    def components(self) -> int:
        return self.grid.dim if self.kind == "navier_stokes" else 1

    @property
    def field_shape(self) -> tuple[int, ...]:
        g = self.grid
        return g.shape if self.components == 1 else (self.components,) + g.shape

    @property
    def degree(self) -> int:
        """Polynomial degree of f in theta."""
        if self.kind == "reaction_diffusion":
            return len(self.reaction_poly)
        return 0 if self.kind == "linear" else 2

    def burgers_parameters(self) -> tuple[float, float]:
        """(eps2, q) used in the Burgers coercivity exponent."""
        a, s = self.alpha, self.s0
        eps2 = a / 2 if self.burgers_eps2 is None else self.burgers_eps2
        if not 0 < eps2 < a:
            raise ValueError(f"burgers eps2 must lie in (0, alpha), got {eps2}")
        lo, hi = burgers_q_interval(a, s, eps2)
        if not lo < hi:
            raise ValueError(f"burgers admissible interval for q is empty for alpha={a}, s0={s}, eps2={eps2}")
        q = 0.5 * (lo + hi) if self.burgers_q is None else self.burgers_q
        if not lo < q < hi:
            raise ValueError(f"burgers q={q} outside its admissible interval ({lo:g}, {hi:g})")
        return eps2, q

    def project_state(self, c: np.ndarray) -> np.ndarray:
        """Restrict a coefficient array to the model's state space."""
        g = self.grid
        c = c * g.dealias_mask
        if self.mean_zero:
            c[(...,) + g.zero_mode] = 0.0
        if self.kind == "navier_stokes":
            c = leray_array(g, c)
        return c

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "alpha": self.alpha,
            "s0": self.s0,
            "grid": self.grid.to_dict(),
            "kpz_lambda": self.kpz_lambda,
            "reaction_poly": list(self.reaction_poly),
            "burgers_eps2": self.burgers_eps2,
            "burgers_q": self.burgers_q,
            "strict": self.strict,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        d = dict(d)
        d["grid"] = Grid.from_dict(d["grid"])
        if "reaction_poly" in d:
            d["reaction_poly"] = tuple(d["reaction_poly"])
        return cls(**d)


def burgers_q_interval(alpha: float, s: float, eps2: float) -> tuple[float, float]:
    """Open interval of admissible q: 3/2 - 2(alpha - eps2) < q < s + alpha - eps2."""
    return 1.5 - 2 * (alpha - eps2), s + alpha - eps2


# -- nonlinearities -----------------------------------------------------------


def _phys(g: Grid, c: np.ndarray, M: int) -> np.ndarray:
    return g.eval_physical(c, M)


def nonlinear_term(model: ModelSpec, c: np.ndarray) -> np.ndarray:
    """f(theta) for coefficient arrays with arbitrary leading batch axes."""
    g = model.grid
    kind = model.kind
    c = c * g.dealias_mask
    if kind == "linear":
        return np.zeros_like(c)
    M = g.product_size(model.degree)
    if kind == "burgers":
        th = _phys(g, c, M)
        thx = _phys(g, g.derivative(c, 0), M)
        out = g.project_physical(th * thx)
    elif kind == "sqg":
        r1 = riesz_multiplier(g, 0)
        r2 = riesz_multiplier(g, 1)
        u1 = _phys(g, -r2 * c, M)
        u2 = _phys(g, r1 * c, M)
        d1 = _phys(g, g.derivative(c, 0), M)
        d2 = _phys(g, g.derivative(c, 1), M)
        out = g.project_physical(u1 * d1 + u2 * d2)
    elif kind == "navier_stokes":
        v = [_phys(g, c[..., j, :, :], M) for j in range(2)]
        comps = []
        for i in range(2):
            acc = sum(v[j] * _phys(g, g.derivative(c[..., i, :, :], j), M) for j in range(2))
            comps.append(g.project_physical(acc))
        out = leray_array(g, np.stack(comps, axis=-3))
    elif kind == "kpz":
        grad2 = sum(_phys(g, g.derivative(c, j), M) ** 2 for j in range(g.dim))
        out = g.project_physical(model.kpz_lambda * grad2)
    elif kind == "surface_growth":
        vx = _phys(g, g.derivative(c, 0), M)
        sq = g.project_physical(vx * vx)
        out = g.derivative(c, 0, 2) - g.derivative(sq, 0, 2)
    elif kind == "reaction_diffusion":
        v = _phys(g, c, M)
        out = g.project_physical(P.polyval(v, model.reaction_poly) * v)
    else:  # pragma: no cover - guarded by ModelSpec
        raise ValueError(kind)
    out = out * g.dealias_mask
    if model.mean_zero:
        out[(...,) + g.zero_mode] = 0.0
    return out


def _check_field(model_grid: Grid, theta: SpectralField, shape: tuple[int, ...]):
    if theta.grid != model_grid:
        raise ValueError("field grid does not match the model grid")
    if theta.coeffs.shape != shape:
        raise ValueError(f"field shape {theta.coeffs.shape} does not match model state shape {shape}")


def nonlinearity(model: ModelSpec, theta: SpectralField) -> SpectralField:
    """f(theta) as a dealiased field (mean-free / divergence-free where the model requires)."""
    _check_field(model.grid, theta, model.field_shape)
    return SpectralField(model.grid, nonlinear_term(model, np.array(theta.coeffs)))


# -- noise -------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class NoiseSpec:
    """Multiplicative noise.

    ``linear_multiplicative``: G(theta) dW = beta theta dW with scalar W.
    ``trace_class``: G(theta) dW = sum_k b_k g(theta) dW_k with finitely many
    smooth b_k and polynomial g (ascending coefficients ``g_poly``).
    """

    kind: str = "linear_multiplicative"
    beta: float = 0.0
    b_fields: tuple[SpectralField, ...] = ()
    g_poly: tuple[float, ...] = (0.0, 1.0)

    def __post_init__(self):
        object.__setattr__(self, "b_fields", tuple(self.b_fields))
        object.__setattr__(self, "g_poly", tuple(float(a) for a in self.g_poly))
        errors = []
        if self.kind not in ("linear_multiplicative", "trace_class"):
            errors.append(f"unknown noise kind {self.kind!r}")
        if self.kind == "trace_class":
            if not self.b_fields:
                errors.append("trace_class noise needs at least one b_k field")
            grids = {b.grid for b in self.b_fields}
            if len(grids) > 1:
                errors.append("all b_k fields must share one grid")
            if any(b.is_vector for b in self.b_fields):
                errors.append("b_k fields must be scalar")
            if not self.g_poly:
                errors.append("g_poly must be non-empty")
        if not math.isfinite(self.beta):
            errors.append("beta must be finite")
        if errors:
            raise ConfigError(errors)

    @property
    def linear(self) -> bool:
        return self.kind == "linear_multiplicative"

    @property
    def n_increments(self) -> int:
        return 1 if self.linear else len(self.b_fields)

    @property
    def beta_sq(self) -> float:
        return self.beta**2

    def with_beta(self, beta: float) -> "NoiseSpec":
        return replace(self, beta=float(beta))

    def to_dict(self) -> dict:
        if self.linear:
            return {"kind": self.kind, "beta": self.beta}
        rows = []
        for b in self.b_fields:
            g = b.grid
            modes = []
            for pos in zip(*np.nonzero(b.coeffs)):
                v = complex(b.coeffs[pos])
                modes.append([int(g.index[j][pos]) for j in range(g.dim)] + [v.real, v.imag])
            rows.append(modes)
        return {"kind": self.kind, "beta": self.beta, "b_fields": rows, "g_poly": list(self.g_poly)}


def noise_term(noise: NoiseSpec, grid: Grid, c: np.ndarray, dW: np.ndarray, mean_zero: bool = False) -> np.ndarray:
    """G(theta) dW for coefficient arrays ``c`` of shape (B, *field) and ``dW`` of shape (B, K)."""
    dW = np.asarray(dW, dtype=float)
    extra = c.ndim - 1
    if noise.linear:
        return noise.beta * c * dW[:, 0].reshape((-1,) + (1,) * extra)
    c = c * grid.dealias_mask
    deg = len(noise.g_poly)  # degree of g plus one for the b_k factor
    M = grid.product_size(deg)
    bphys = np.stack([grid.eval_physical(np.asarray(b.coeffs) * grid.dealias_mask, M) for b in noise.b_fields])
    comb = np.tensordot(dW, bphys, axes=([1], [0]))  # (B, *phys)
    gval = P.polyval(grid.eval_physical(c, M), noise.g_poly)
    out = grid.project_physical(comb * gval)
    if mean_zero:
        out[(...,) + grid.zero_mode] = 0.0
    return out


def noise_apply(noise: NoiseSpec, theta: SpectralField, dW: Sequence[float], mean_zero: bool = False) -> SpectralField:
    dW = np.asarray(dW, dtype=float).reshape(-1)
    if dW.size != noise.n_increments:
        raise ValueError(f"expected {noise.n_increments} increments, got {dW.size}")
    if theta.is_vector and not noise.linear:
        raise ValueError("trace-class noise is only implemented for scalar fields")
    if not noise.linear and noise.b_fields[0].grid != theta.grid:
        raise ValueError("noise fields and theta live on different grids")
    out = noise_term(noise, theta.grid, np.array(theta.coeffs)[None], dW[None], mean_zero)[0]
    return SpectralField(theta.grid, out)


# -- coercivity profiles and kappa -------------------------------------------


@dataclass(frozen=True)
class CoercivityProfile:
    """rho_1(x) = C1 (x^p + offset) with p = 2 / (exponent_multiplier * delta).

    With this normalisation rho_1^{-1}(beta^2/4)^2 equals
    (beta^2 / (4 C1) - offset)^(exponent_multiplier * delta), which is the
    per-model threshold formula.
    """

    C1: float
    delta: float
    exponent_multiplier: int = 1
    offset: float = 0.0
    source: str = "default"

    def __post_init__(self):
        if not self.C1 > 0:
            raise ValueError(f"C1 must be positive, got {self.C1}")
        if not self.delta > 0:
            raise ValueError(f"delta must be positive, got {self.delta}")
        if self.exponent_multiplier not in (1, 2):
            raise ValueError("exponent_multiplier must be 1 or 2")
        if self.offset not in (0, 1):
            raise ValueError("offset must be 0 or 1")

    @property
    def power(self) -> float:
        return 2.0 / (self.exponent_multiplier * self.delta)

    @property
    def beta0_sq(self) -> float:
        return 4.0 * self.C1 * self.offset

    def rho1(self, x):
        x = np.asarray(x, dtype=float)
        return self.C1 * (x**self.power + self.offset)

    def rho1_inv(self, y):
        y = np.asarray(y, dtype=float)
        base = y / self.C1 - self.offset
        if np.any(base < 0):
            raise ValueError("rho_1^{-1} is undefined below rho_1(0)")
        return base ** (1.0 / self.power)

    def sigma_threshold(self, beta_sq: float) -> float | None:
        """rho_1^{-1}(beta^2/4), or None when it is not positive."""
        if beta_sq <= self.beta0_sq:
            return None
        return float(self.rho1_inv(beta_sq / 4.0))

    def with_C1(self, C1: float, source: str) -> "CoercivityProfile":
        return replace(self, C1=float(C1), source=source)

    def to_dict(self) -> dict:
        return {
            "C1": self.C1,
            "delta": self.delta,
            "exponent_multiplier": self.exponent_multiplier,
            "offset": self.offset,
            "source": self.source,
        }


def delta_exponent(model: ModelSpec, s: float | None = None) -> float:
    """Exponent delta(s) of the coercivity profile, evaluated at s (default s0)."""
    a, s0 = model.alpha, model.s0
    s = s0 if s is None else s
    d = model.grid.dim
    k = model.kind
    if k == "burgers":
        eps2, q = model.burgers_parameters()
        den = s + a - q
        num = eps2
    elif k == "sqg":
        num, den = a, s + 2 * a - 2
    elif k == "navier_stokes":
        num, den = a, s + 2 * a - 1 - d / 2
    elif k == "kpz":
        num, den = 2 * a - 1, s + a - s0
    elif k == "surface_growth":
        num, den = 2 * a - 1.5, s + a - s0
    elif k == "reaction_diffusion":
        r = max((s - a - s0) / (s + a - s0), 0.0)
        num, den = 1 - r, 2 * (len(model.reaction_poly) - 1)
    elif k == "linear":
        return 1.0
    else:  # pragma: no cover
        raise ValueError(k)
    if not (num > 0 and den > 0):
        raise ValueError(f"delta undefined for {k} with alpha={a}, s0={s0}, s={s}")
    return num / den


_PROFILE_SHAPE = {
    # kind: (exponent_multiplier, offset)
    "burgers": (2, 0),
    "sqg": (1, 0),
    "navier_stokes": (1, 0),
    "kpz": (1, 0),
    "surface_growth": (1, 1),
    "reaction_diffusion": (2, 1),
    "linear": (1, 0),
}


def coercivity_profile(model: ModelSpec, C1: float = 1.0, source: str = "default") -> CoercivityProfile:
    mult, offset = _PROFILE_SHAPE[model.kind]
    return CoercivityProfile(C1=C1, delta=delta_exponent(model), exponent_multiplier=mult, offset=offset, source=source)


def kappa_threshold(profile: CoercivityProfile, R: float, beta_sq: float) -> float:
    """Initial-norm threshold kappa(R, beta^2) = (beta^2/(4 C1) - offset)^(m delta) / R."""
    if not R >= 1:
        raise ValueError(f"R must be >= 1, got {R}")
    if not beta_sq > profile.beta0_sq:
        raise ValueError(f"kappa undefined: beta^2 = {beta_sq} <= beta_0^2 = {profile.beta0_sq} (Theorem 4.1)")
    base = beta_sq / (4.0 * profile.C1) - profile.offset
    return base ** (profile.exponent_multiplier * profile.delta) / R
