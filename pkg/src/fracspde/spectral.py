"""Coefficient-space fields, fractional powers of A and Sobolev norms.

Two bases are supported:

* ``fourier`` on the torus ``[0, L)^d`` (d = 1, 2), eigenfunctions
  ``exp(i k.x)`` of ``A = -Laplacian`` (or ``A = d^4/dx^4`` when
  ``operator_order == 4``).  Coefficients ``c_k`` are stored in FFT order so
  that ``f(x) = sum_k c_k exp(i k.x)``; real fields are Hermitian symmetric.
* ``sine`` on the interval ``[0, L]`` with Dirichlet conditions,
  ``f(x) = sum_{k>=1} b_k sin(pi k x / L)`` and real ``b_k``.

Every array helper accepts arbitrary leading (batch / component) axes; the
trailing ``grid.dim`` axes are spectral.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np
import scipy.fft as sfft

__all__ = [
    "Grid",
    "SpectralField",
    "FieldNorm",
    "to_physical",
    "to_spectral",
    "apply_lambda_power",
    "sobolev_norm",
    "project_galerkin",
    "riesz_transform",
    "leray_project",
    "dealias",
    "inner",
    "random_trig_field",
    "save_field",
    "load_field",
    "field_from_modes",
    "real_field_from_modes",
    "riesz_multiplier",
    "leray_array",
    "divergence",
]

BASES = ("fourier", "sine")


@dataclass(frozen=True)
class Grid:
    """Discretisation of the spatial domain.

    ``n`` is the number of modes (and collocation points) per dimension.  The
    state of every simulation lives on the dealiased band ``|k_j| <= n // 3``.
    """

    dim: int = 1
    basis: str = "fourier"
    n: int = 32
    operator_order: int = 2
    length: float | None = None

    def __post_init__(self):
        errors = self.validate()
        if errors:
            raise ValueError("; ".join(errors))
        if self.length is None:
            object.__setattr__(self, "length", 2 * math.pi if self.basis == "fourier" else math.pi)

    def validate(self) -> list[str]:
        errors = []
        if self.dim not in (1, 2):
            errors.append(f"grid.dim must be 1 or 2, got {self.dim}")
        if self.basis not in BASES:
            errors.append(f"grid.basis must be one of {BASES}, got {self.basis!r}")
        if not isinstance(self.n, (int, np.integer)) or self.n < 2:
            errors.append(f"grid.n must be an integer >= 2, got {self.n}")
        elif self.basis == "fourier" and self.n % 2:
            errors.append(f"grid.n must be even for the Fourier basis, got {self.n}")
        if self.operator_order not in (2, 4):
            errors.append(f"grid.operator_order must be 2 or 4, got {self.operator_order}")
        elif self.operator_order == 4 and self.dim != 1:
            errors.append("operator_order = 4 is only available in one dimension")
        if self.basis == "sine" and self.dim != 1:
            errors.append("the sine basis is one-dimensional")
        if self.length is not None and not self.length > 0:
            errors.append(f"grid.length must be positive, got {self.length}")
        return errors

    def to_dict(self) -> dict:
        return {
            "dim": self.dim,
            "basis": self.basis,
            "n": int(self.n),
            "operator_order": self.operator_order,
            "length": float(self.length),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Grid":
        return cls(**d)

    # -- index bookkeeping -------------------------------------------------

    @property
    def fourier(self) -> bool:
        return self.basis == "fourier"

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.n,) * self.dim

    @property
    def axes(self) -> tuple[int, ...]:
        return tuple(range(-self.dim, 0))

    @property
    def kmax(self) -> int:
        """Largest index kept by the 2/3 rule."""
        return self.n // 3

    @property
    def dtype(self):
        return np.complex128 if self.fourier else np.float64

    @cached_property
    def index(self) -> tuple[np.ndarray, ...]:
        """Integer wave-vector components, broadcast to ``shape``."""
        if self.fourier:
            k1 = np.fft.fftfreq(self.n, 1.0 / self.n).round().astype(int)
        else:
            k1 = np.arange(1, self.n + 1)
        return tuple(np.meshgrid(*([k1] * self.dim), indexing="ij"))

    @cached_property
    def kvec(self) -> tuple[np.ndarray, ...]:
        """Physical wavenumbers along each axis."""
        scale = (2 * math.pi if self.fourier else math.pi) / self.length
        return tuple(scale * k for k in self.index)

    @cached_property
    def k_abs2(self) -> np.ndarray:
        return sum(k.astype(float) ** 2 for k in self.kvec)

    @cached_property
    def lam(self) -> np.ndarray:
        """Eigenvalues of A: |k|^2 for -Laplacian, k^4 for d^4/dx^4."""
        return self.k_abs2 if self.operator_order == 2 else self.k_abs2**2

    @cached_property
    def dealias_mask(self) -> np.ndarray:
        m = np.ones(self.shape, dtype=bool)
        for k in self.index:
            m &= np.abs(k) <= self.kmax
        return m

    @cached_property
    def resolved_mask(self) -> np.ndarray:
        """Modes represented without ambiguity (Nyquist excluded)."""
        m = np.ones(self.shape, dtype=bool)
        if self.fourier:
            for k in self.index:
                m &= k != -(self.n // 2)
        return m

    @cached_property
    def zero_mode(self) -> tuple[int, ...] | None:
        return (0,) * self.dim if self.fourier else None

    def galerkin_mask(self, n: int) -> np.ndarray:
        """Modes with lambda_k <= lambda_n, i.e. |k| <= n in index units."""
        k2 = sum(k.astype(float) ** 2 for k in self.index)
        return (k2 <= n * n) & self.resolved_mask

    @property
    def weight(self) -> float:
        """Factor turning sum |c_k|^2 into the squared L^2 norm."""
        return self.length**self.dim if self.fourier else self.length / 2

    def lambda_power(self, s: float) -> np.ndarray:
        """Multiplier lambda_k^(s/2) of Lambda^s; the mean mode maps to 1 at s = 0 and 0 otherwise."""
        lam = self.lam
        with np.errstate(divide="ignore"):
            out = np.where(lam > 0, np.abs(lam) ** (s / 2.0), 1.0 if s == 0 else 0.0)
        return out

    def points(self, oversample: float = 1) -> tuple[np.ndarray, ...]:
        """Collocation points of the physical grid returned by ``to_physical``."""
        M = self.physical_size(oversample)
        if self.fourier:
            x = np.arange(M) * self.length / M
        else:
            x = np.arange(1, M + 1) * self.length / (M + 1)
        return tuple(np.meshgrid(*([x] * self.dim), indexing="ij"))

    def physical_size(self, oversample: float = 1) -> int:
        if oversample < 1:
            raise ValueError("oversample factor must be >= 1")
        M = int(math.ceil(self.n * oversample - 1e-9))
        if self.fourier and M % 2:
            M += 1
        return M

    # -- transforms on raw coefficient arrays -----------------------------

    def _pad(self, c: np.ndarray, M: int) -> np.ndarray:
        n, h = self.n, self.n // 2
        for ax in self.axes:
            shape = list(c.shape)
            shape[ax] = M
            out = np.zeros(shape, dtype=complex)
            idx_lo = [slice(None)] * c.ndim
            idx_lo[ax] = slice(0, h)
            out[tuple(idx_lo)] = c[tuple(idx_lo)]
            src = [slice(None)] * c.ndim
            src[ax] = slice(h + 1, n)
            dst = [slice(None)] * c.ndim
            dst[ax] = slice(M - h + 1, M)
            out[tuple(dst)] = c[tuple(src)]
            c = out
        return c

    def _truncate(self, C: np.ndarray, M: int) -> np.ndarray:
        n, h = self.n, self.n // 2
        for ax in self.axes:
            shape = list(C.shape)
            shape[ax] = n
            out = np.zeros(shape, dtype=complex)
            idx_lo = [slice(None)] * C.ndim
            idx_lo[ax] = slice(0, h)
            out[tuple(idx_lo)] = C[tuple(idx_lo)]
            src = [slice(None)] * C.ndim
            src[ax] = slice(M - h + 1, M)
            dst = [slice(None)] * C.ndim
            dst[ax] = slice(h + 1, n)
            out[tuple(dst)] = C[tuple(src)]
            C = out
        return C

    def to_physical_array(self, c: np.ndarray, M: int | None = None) -> np.ndarray:
        """Samples on the uniform collocation grid of size ``M`` per axis."""
        M = self.n if M is None else M
        if self.fourier:
            return sfft.ifftn(self._pad(c, M), axes=self.axes, norm="forward").real
        b = np.real(c)
        if M != self.n:
            shape = b.shape[:-1] + (M,)
            out = np.zeros(shape)
            k = min(M, self.n)
            out[..., :k] = b[..., :k]
            b = out
        return sfft.dst(b, type=1, axis=-1) / 2.0

    def to_spectral_array(self, u: np.ndarray) -> np.ndarray:
        """Inverse of ``to_physical_array`` on the resolved modes."""
        M = u.shape[-1]
        if self.fourier:
            C = sfft.fftn(u, axes=self.axes, norm="forward")
            return self._truncate(C, M)
        B = 2.0 * sfft.idst(u, type=1, axis=-1)
        out = np.zeros(u.shape[:-1] + (self.n,))
        k = min(M, self.n)
        out[..., :k] = B[..., :k]
        return out

    # -- exact products of band-limited fields ----------------------------

    def product_size(self, degree: int) -> int:
        """Collocation size making degree-``degree`` products exact on the dealiased band."""
        K = self.kmax
        if self.fourier:
            M = max(self.n, (degree + 1) * K + 1)
            return M + (M % 2)
        M = 2 * degree * K + 2
        return M + (M % 2)

    def eval_physical(self, c: np.ndarray, M: int) -> np.ndarray:
        """Physical samples used for products (full period for the sine basis)."""
        if self.fourier:
            return self.to_physical_array(c, M)
        full = np.zeros(c.shape[:-1] + (M,), dtype=complex)
        K = min(self.n, M // 2 - 1)
        b = np.real(c[..., :K])
        full[..., 1 : K + 1] = b / 2j
        full[..., M - K :] = (-b / 2j)[..., ::-1]
        return sfft.ifft(full, axis=-1, norm="forward").real

    def project_physical(self, g: np.ndarray) -> np.ndarray:
        """L^2 projection onto the dealiased band of samples from ``eval_physical``."""
        M = g.shape[-1]
        if self.fourier:
            return self.to_spectral_array(g) * self.dealias_mask
        ghat = sfft.fft(g, axis=-1, norm="forward")
        proj = self._sine_projector(M)
        out = np.zeros(g.shape[:-1] + (self.n,))
        out[..., : self.kmax] = np.real(ghat @ proj)
        return out

    def _sine_projector(self, M: int) -> np.ndarray:
        cache = self.__dict__.setdefault("_sine_proj_cache", {})
        if M not in cache:
            m = np.fft.fftfreq(M, 1.0 / M).round()[:, None]
            k = np.arange(1, self.kmax + 1)[None, :].astype(float)
            # int_0^pi exp(i m y) sin(k y) dy
            same = np.abs(m) == k
            with np.errstate(divide="ignore", invalid="ignore"):
                cos_part = np.where(same, 0.0, k * (1 - (-1.0) ** (m + k)) / (k * k - m * m))
            sin_part = np.where(m == k, math.pi / 2, np.where(m == -k, -math.pi / 2, 0.0))
            cache[M] = (2.0 / math.pi) * (cos_part + 1j * sin_part)
        return cache[M]

    # -- multipliers -------------------------------------------------------

    def derivative(self, c: np.ndarray, axis: int = 0, order: int = 1) -> np.ndarray:
        if not self.fourier:
            raise ValueError("spectral derivatives are only closed in the Fourier basis")
        return c * (1j * self.kvec[axis]) ** order * self.resolved_mask

    def hermitian_flip(self, c: np.ndarray) -> np.ndarray:
        """conj(c(-k)) in FFT ordering."""
        out = np.flip(c, axis=self.axes)
        out = np.roll(out, 1, axis=self.axes)
        return np.conj(out)

    def symmetrize(self, c: np.ndarray) -> np.ndarray:
        if not self.fourier:
            return np.real(c)
        return 0.5 * (c + self.hermitian_flip(c)) * self.resolved_mask

    def norm_sq_array(self, c: np.ndarray, s: float = 0.0, field_ndim: int | None = None) -> np.ndarray:
        """Squared H^s norms over the trailing ``field_ndim`` axes."""
        field_ndim = self.dim if field_ndim is None else field_ndim
        w = self.weight * self.lambda_power(2 * s) if s != 0 else self.weight
        a = np.abs(c) ** 2 * w
        return a.sum(axis=tuple(range(-field_ndim, 0)))


@dataclass(frozen=True)
class FieldNorm:
    s: float
    value: float

    def __float__(self) -> float:
        return float(self.value)


@dataclass(frozen=True, eq=False)
class SpectralField:
    """Immutable coefficient array on a :class:`Grid`.

    Scalar fields have ``coeffs.shape == grid.shape``; vector fields carry a
    leading component axis of length ``grid.dim``.
    """

    grid: Grid
    coeffs: np.ndarray

    def __post_init__(self):
        g = self.grid
        c = np.array(self.coeffs, copy=True)
        if not g.fourier:
            if np.iscomplexobj(c):
                if np.any(np.abs(c.imag) > 1e-12 * max(1.0, np.abs(c).max(initial=0.0))):
                    raise ValueError("sine-basis coefficients must be real")
                c = c.real
            c = c.astype(np.float64)
        else:
            c = c.astype(np.complex128)
        if c.shape == g.shape:
            pass
        elif c.shape == (g.dim,) + g.shape and g.dim > 1:
            pass
        else:
            raise ValueError(f"coefficient shape {c.shape} does not fit grid of shape {g.shape}")
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)

    # constructors
    @classmethod
    def zeros(cls, grid: Grid, components: int = 1) -> "SpectralField":
        shape = grid.shape if components == 1 else (components,) + grid.shape
        return cls(grid, np.zeros(shape, dtype=grid.dtype))

    @classmethod
    def from_physical(cls, grid: Grid, samples: np.ndarray) -> "SpectralField":
        return to_spectral(grid, samples)

    @classmethod
    def from_function(cls, grid: Grid, fn: Callable, oversample: float = 1) -> "SpectralField":
        """Sample ``fn(x1[, x2])`` on the collocation grid and transform.

        ``fn`` may return a sequence for vector fields.
        """
        pts = grid.points(oversample)
        vals = fn(*pts)
        if isinstance(vals, (list, tuple)):
            vals = np.stack([np.broadcast_to(v, pts[0].shape) for v in vals])
        else:
            vals = np.broadcast_to(vals, pts[0].shape)
        return to_spectral(grid, np.asarray(vals, dtype=float))

    # properties
    @property
    def components(self) -> int:
        return 1 if self.coeffs.shape == self.grid.shape else self.coeffs.shape[0]

    @property
    def is_vector(self) -> bool:
        return self.coeffs.shape != self.grid.shape

    @property
    def field_ndim(self) -> int:
        return self.coeffs.ndim

    def mean(self) -> complex | np.ndarray:
        if not self.grid.fourier:
            return 0.0
        return self.coeffs[(...,) + self.grid.zero_mode]

    def hermitian_defect(self) -> float:
        if not self.grid.fourier:
            return 0.0
        c = self.coeffs * self.grid.resolved_mask
        return float(np.abs(c - self.grid.hermitian_flip(c)).max(initial=0.0))

    def with_coeffs(self, coeffs: np.ndarray) -> "SpectralField":
        return SpectralField(self.grid, coeffs)

    def norm(self, s: float = 0.0) -> float:
        return sobolev_norm(self, s).value

    # arithmetic
    def _check(self, other: "SpectralField"):
        if other.grid != self.grid or other.coeffs.shape != self.coeffs.shape:
            raise ValueError("fields live on different grids or have different shapes")

    def __add__(self, other: "SpectralField") -> "SpectralField":
        self._check(other)
        return self.with_coeffs(self.coeffs + other.coeffs)

    def __sub__(self, other: "SpectralField") -> "SpectralField":
        self._check(other)
        return self.with_coeffs(self.coeffs - other.coeffs)

    def __mul__(self, a: float) -> "SpectralField":
        return self.with_coeffs(self.coeffs * a)

    __rmul__ = __mul__

    def __neg__(self) -> "SpectralField":
        return self.with_coeffs(-self.coeffs)

    def allclose(self, other: "SpectralField", atol: float = 1e-12) -> bool:
        self._check(other)
        return bool(np.abs(self.coeffs - other.coeffs).max(initial=0.0) <= atol)


def _check_finite(field: SpectralField):
    if not np.all(np.isfinite(field.coeffs)):
        raise ValueError("field has non-finite coefficients")


def to_physical(field: SpectralField, oversample: float = 1) -> np.ndarray:
    """Real samples on the uniform collocation grid ``field.grid.points(oversample)``."""
    _check_finite(field)
    g = field.grid
    scale = max(1.0, float(np.abs(field.coeffs).max(initial=0.0)))
    if field.hermitian_defect() > 1e-9 * scale:
        raise ValueError("coefficients are not Hermitian symmetric; field is not real")
    return g.to_physical_array(field.coeffs, g.physical_size(oversample))


def to_spectral(grid: Grid, samples: np.ndarray) -> SpectralField:
    samples = np.asarray(samples, dtype=float)
    if not np.all(np.isfinite(samples)):
        raise ValueError("samples must be finite")
    c = grid.to_spectral_array(samples)
    if grid.fourier:
        c = c * grid.resolved_mask
    return SpectralField(grid, c)


def apply_lambda_power(field: SpectralField, s: float) -> SpectralField:
    """Lambda^s = A^(s/2): multiply mode k by lambda_k^(s/2)."""
    _check_finite(field)
    g = field.grid
    if s < 0 and g.fourier and np.any(np.abs(field.mean()) > 0):
        raise ValueError("negative powers of Lambda need a mean-zero field")
    return field.with_coeffs(field.coeffs * g.lambda_power(s))


def sobolev_norm(field: SpectralField, s: float) -> FieldNorm:
    """|Lambda^s f| in the L^2 normalisation of the domain."""
    _check_finite(field)
    g = field.grid
    if s < 0 and g.fourier and np.any(np.abs(field.mean()) > 0):
        raise ValueError("negative Sobolev index needs a mean-zero field")
    val = g.norm_sq_array(field.coeffs, s, field.field_ndim)
    return FieldNorm(float(s), float(np.sqrt(val)))


def inner(f: SpectralField, g: SpectralField) -> float:
    """Real L^2 inner product."""
    f._check(g)
    return float(f.grid.weight * np.real(np.sum(f.coeffs * np.conj(g.coeffs))))


def project_galerkin(field: SpectralField, n: int) -> SpectralField:
    """P_n: keep the modes with lambda_k <= lambda_n (|k| <= n)."""
    if n > field.grid.n:
        raise ValueError(f"Galerkin index {n} exceeds grid size {field.grid.n}")
    return field.with_coeffs(field.coeffs * field.grid.galerkin_mask(n))


def dealias(field: SpectralField) -> SpectralField:
    """2/3 rule: zero every mode with some |k_j| > n // 3."""
    return field.with_coeffs(field.coeffs * field.grid.dealias_mask)


def riesz_multiplier(grid: Grid, j: int) -> np.ndarray:
    with np.errstate(divide="ignore", invalid="ignore"):
        kk = np.sqrt(grid.k_abs2)
        m = np.where(kk > 0, 1j * grid.kvec[j] / np.where(kk > 0, kk, 1.0), 0.0)
    return m * grid.resolved_mask


def riesz_transform(field: SpectralField, j: int) -> SpectralField:
    """j-th Riesz transform, multiplier i xi_j / |xi| (axis ``j`` counted from 0)."""
    g = field.grid
    if not g.fourier:
        raise ValueError("the Riesz transform is only available in the Fourier basis")
    if not 0 <= j < g.dim:
        raise ValueError(f"axis {j} out of range for dimension {g.dim}")
    return field.with_coeffs(field.coeffs * riesz_multiplier(g, j))


def leray_array(grid: Grid, c: np.ndarray) -> np.ndarray:
    """Apply I - xi xi^T / |xi|^2 to ``c`` with component axis at ``-dim-1``."""
    k2 = grid.k_abs2
    safe = np.where(k2 > 0, k2, 1.0)
    div = grid.kvec[0] * c[..., 0, :, :] + grid.kvec[1] * c[..., 1, :, :]
    out = np.empty_like(c)
    for j in range(2):
        out[..., j, :, :] = c[..., j, :, :] - grid.kvec[j] * div / safe
    return out


def leray_project(field: SpectralField) -> SpectralField:
    g = field.grid
    if not g.fourier:
        raise ValueError("the Leray projection is only available in the Fourier basis")
    if not field.is_vector or field.components != g.dim or g.dim != 2:
        raise ValueError("the Leray projection needs a vector field with grid.dim = 2 components")
    return field.with_coeffs(leray_array(g, field.coeffs))


def divergence(field: SpectralField) -> SpectralField:
    g = field.grid
    c = sum(1j * g.kvec[j] * field.coeffs[j] for j in range(g.dim))
    return SpectralField(g, c)


def random_trig_field(
    grid: Grid,
    m: int,
    rng: np.random.Generator,
    *,
    components: int = 1,
    mean_zero: bool = True,
    scale: float = 1.0,
) -> SpectralField:
    """Random real trigonometric polynomial with modes |k_j| <= m.

    Coefficients are independent standard complex Gaussians, symmetrised to
    give a real field (standard real Gaussians in the sine basis).
    """
    m = min(m, grid.kmax)
    shape = grid.shape if components == 1 else (components,) + grid.shape
    band = np.ones(grid.shape, dtype=bool)
    for k in grid.index:
        band &= np.abs(k) <= m
    if grid.fourier:
        c = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
        c = grid.symmetrize(c * band)
        if mean_zero:
            c[(...,) + grid.zero_mode] = 0.0
    else:
        c = rng.standard_normal(shape) * band
    return SpectralField(grid, scale * c)


# -- snapshot files ----------------------------------------------------------


def save_field(field: SpectralField, path: str | Path) -> tuple[Path, Path]:
    """Write a coefficient dump ``k_1[,k_2],re,im`` plus a JSON grid sidecar."""
    path = Path(path)
    g = field.grid
    header = [f"k_{j + 1}" for j in range(g.dim)]
    if field.is_vector:
        header = ["component"] + header
    lines = [",".join(header + ["re", "im"])]
    coeffs = field.coeffs if field.is_vector else field.coeffs[None]
    for comp, c in enumerate(coeffs):
        for pos in np.ndindex(*g.shape):
            v = complex(c[pos])
            if v == 0:
                continue
            ks = [str(int(g.index[j][pos])) for j in range(g.dim)]
            row = ([str(comp)] if field.is_vector else []) + ks + [repr(v.real), repr(v.imag)]
            lines.append(",".join(row))
    path.write_text("\n".join(lines) + "\n")
    side = path.with_suffix(path.suffix + ".json")
    meta = {"grid": g.to_dict(), "components": field.components}
    side.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return path, side


def load_field(path: str | Path) -> SpectralField:
    path = Path(path)
    meta = json.loads(path.with_suffix(path.suffix + ".json").read_text())
    g = Grid.from_dict(meta["grid"])
    comps = meta["components"]
    shape = g.shape if comps == 1 else (comps,) + g.shape
    c = np.zeros(shape, dtype=complex)
    rows = path.read_text().strip().splitlines()
    header = rows[0].split(",")
    vec = header[0] == "component"
    for line in rows[1:]:
        parts = line.split(",")
        comp = int(parts[0]) if vec else None
        ks = [int(p) for p in parts[int(vec) : int(vec) + g.dim]]
        re, im = float(parts[-2]), float(parts[-1])
        pos = tuple(k % g.n for k in ks) if g.fourier else tuple(k - 1 for k in ks)
        if vec:
            c[(comp,) + pos] = re + 1j * im
        else:
            c[pos] = re + 1j * im
    return SpectralField(g, c)


def field_from_modes(grid: Grid, modes: Iterable[Sequence[float]], components: int = 1) -> SpectralField:
    """Build a field from rows ``[component,] k_1[, k_2], re, im`` (Fourier index / sine mode)."""
    shape = grid.shape if components == 1 else (components,) + grid.shape
    c = np.zeros(shape, dtype=complex)
    for row in modes:
        row = list(row)
        comp = int(row.pop(0)) if components > 1 else None
        ks = [int(v) for v in row[: grid.dim]]
        re = float(row[grid.dim])
        im = float(row[grid.dim + 1]) if len(row) > grid.dim + 1 else 0.0
        pos = tuple(k % grid.n for k in ks) if grid.fourier else tuple(k - 1 for k in ks)
        key = pos if comp is None else (comp,) + pos
        c[key] += re + 1j * im
    return SpectralField(grid, c)


def real_field_from_modes(grid: Grid, modes: Iterable[Sequence[float]], components: int = 1) -> SpectralField:
    """Real field from rows giving one member of each +k/-k pair.

    Each row ``[component,] k..., re[, im]`` sets the coefficient of
    ``exp(i k.x)``; the conjugate partner at ``-k`` is filled in.  In the sine
    basis rows are plain mode amplitudes.
    """
    c = np.asarray(field_from_modes(grid, modes, components).coeffs)
    if not grid.fourier:
        return SpectralField(grid, np.real(c))
    full = c + grid.hermitian_flip(c)
    full[(...,) + grid.zero_mode] = np.real(c[(...,) + grid.zero_mode])
    return SpectralField(grid, full * grid.resolved_mask)

