"""Lattice and field representation for the rational-period torus.

Fields live on a uniform periodic grid with axis lengths ``2*pi*b_h`` and are
represented either by grid samples (:class:`GridField`) or by a truncated
table of Fourier coefficients (:class:`SpectralField`).  The coefficient
convention is

    g(x) = sum_k  g_k  exp(i k.x) / sqrt(vol),
    g_k  = integral of g(x) exp(-i k.x) dx / sqrt(vol),

where ``vol`` is the torus volume and the wavevectors are ``k_h = n_h / b_h``
with integer ``n_h``.  With this normalization Parseval's identity holds with
constant one: ``integral |g|^2 = sum_k |g_k|^2``.  All norm code downstream
relies on that.

Coefficients are stored on the full FFT index grid with a sharp dealiasing
mask applied; the retained per-axis cutoff guarantees that quadratic products
evaluated on the grid agree exactly with the truncated Fourier convolution
(the classical 2/3 rule).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

import numpy as np

__all__ = [
    "LatticeSpec",
    "GridField",
    "SpectralField",
    "forward_transform",
    "inverse_transform",
    "spectral_derivative",
    "dealiased_product",
    "convolution_product",
    "zero_mean_split",
]


def _as_fraction(value) -> Fraction:
    if isinstance(value, Fraction):
        return value
    if isinstance(value, int):
        return Fraction(value)
    if isinstance(value, str):
        return Fraction(value)
    if isinstance(value, float):
        frac = Fraction(value).limit_denominator(10**6)
        if abs(float(frac) - value) > 1e-12 * max(1.0, abs(value)):
            raise ValueError(f"period {value!r} is not recognizably rational")
        return frac
    raise TypeError(f"cannot interpret period {value!r} as a rational number")


def _axis_cutoff(n: int, fraction: Fraction) -> int:
    """Largest retained |index| on an axis of n points.

    The cutoff satisfies ``cut <= fraction*n/2`` and, additionally,
    ``3*cut < n`` so that pointwise quadratic products are alias-free on the
    retained modes.
    """
    cut = int(fraction * n // 2)
    if 3 * cut >= n:
        cut = (n - 1) // 3
    return max(cut, 1)


@dataclass(frozen=True)
class LatticeSpec:
    """Discretization of the d-torus with periods ``2*pi*b_h``.

    Parameters
    ----------
    periods:
        Tuple of positive rationals ``b_h`` (wavevectors are ``n_h/b_h``).
    resolution:
        Even number of grid points per axis.
    dealias_fraction:
        Fraction of retained modes per axis; at most 2/3 so products of
        retained fields are exact on retained modes.
    """

    periods: tuple[Fraction, ...]
    resolution: tuple[int, ...]
    dealias_fraction: Fraction = Fraction(2, 3)

    def __post_init__(self):
        periods = tuple(_as_fraction(b) for b in self.periods)
        object.__setattr__(self, "periods", periods)
        resolution = tuple(int(n) for n in self.resolution)
        object.__setattr__(self, "resolution", resolution)
        frac = _as_fraction(self.dealias_fraction)
        object.__setattr__(self, "dealias_fraction", frac)
        if len(periods) != len(resolution) or not periods:
            raise ValueError("periods and resolution must have equal positive length")
        if any(b <= 0 for b in periods):
            raise ValueError("periods must be positive")
        if any(n < 4 or n % 2 for n in resolution):
            raise ValueError("resolution must be even and at least 4 per axis")
        if not (0 < frac <= Fraction(2, 3)):
            raise ValueError("dealias_fraction must lie in (0, 2/3]")
        cache: dict = {}
        object.__setattr__(self, "_cache", cache)

    # -- basic geometry -------------------------------------------------

    @property
    def d(self) -> int:
        return len(self.periods)

    @property
    def volume(self) -> float:
        vol = 1.0
        for b in self.periods:
            vol *= 2.0 * math.pi * float(b)
        return vol

    @property
    def cutoffs(self) -> tuple[int, ...]:
        return tuple(_axis_cutoff(n, self.dealias_fraction) for n in self.resolution)

    def _cached(self, key, builder):
        cache = self._cache
        if key not in cache:
            cache[key] = builder()
        return cache[key]

    # -- mode bookkeeping -----------------------------------------------

    def index_grids(self) -> tuple[np.ndarray, ...]:
        """Integer mode indices n_h on the full FFT grid, one array per axis."""

        def build():
            axes = [
                np.fft.fftfreq(n, 1.0 / n).astype(np.int64) for n in self.resolution
            ]
            grids = np.meshgrid(*axes, indexing="ij")
            for g in grids:
                g.flags.writeable = False
            return tuple(grids)

        return self._cached("index_grids", build)

    def wavevectors(self) -> tuple[np.ndarray, ...]:
        """Wavevector components k_h = n_h/b_h on the full FFT grid."""

        def build():
            grids = tuple(
                g / float(b) for g, b in zip(self.index_grids(), self.periods)
            )
            for g in grids:
                g.flags.writeable = False
            return grids

        return self._cached("wavevectors", build)

    def k_squared(self) -> np.ndarray:
        def build():
            ksq = sum(k * k for k in self.wavevectors())
            ksq.flags.writeable = False
            return ksq

        return self._cached("k_squared", build)

    def k_modulus(self) -> np.ndarray:
        def build():
            km = np.sqrt(self.k_squared())
            km.flags.writeable = False
            return km

        return self._cached("k_modulus", build)

    def dealias_mask(self) -> np.ndarray:
        def build():
            mask = np.ones(self.resolution, dtype=bool)
            for grid, cut in zip(self.index_grids(), self.cutoffs):
                mask &= np.abs(grid) <= cut
            mask.flags.writeable = False
            return mask

        return self._cached("dealias_mask", build)

    def norm_scale(self) -> int:
        """Integer D such that D*|k|^2 is an integer for every lattice mode."""

        def build():
            scale = 1
            for b in self.periods:
                bsq = b * b
                scale = scale * bsq.numerator // math.gcd(scale, bsq.numerator)
            return scale

        return self._cached("norm_scale", build)

    def scaled_norms(self) -> np.ndarray:
        """Exact integers D*|k|^2 on the full FFT grid (D = :meth:`norm_scale`)."""

        def build():
            scale = self.norm_scale()
            total = np.zeros(self.resolution, dtype=np.int64)
            for grid, b in zip(self.index_grids(), self.periods):
                bsq = b * b
                factor = scale * bsq.denominator // bsq.numerator
                total += factor * grid * grid
            total.flags.writeable = False
            return total

        return self._cached("scaled_norms", build)

    def sign_grid(self) -> np.ndarray:
        """Generalized sign: +1 where the first nonzero index is positive."""

        def build():
            sg = np.zeros(self.resolution, dtype=np.int8)
            undecided = np.ones(self.resolution, dtype=bool)
            for grid in self.index_grids():
                sg = np.where(undecided & (grid > 0), 1, sg)
                sg = np.where(undecided & (grid < 0), -1, sg)
                undecided &= grid == 0
            sg.flags.writeable = False
            return sg

        return self._cached("sign_grid", build)

    def grid_points(self) -> tuple[np.ndarray, ...]:
        def build():
            axes = [
                np.arange(n) * (2.0 * math.pi * float(b) / n)
                for n, b in zip(self.resolution, self.periods)
            ]
            grids = np.meshgrid(*axes, indexing="ij")
            for g in grids:
                g.flags.writeable = False
            return tuple(grids)

        return self._cached("grid_points", build)

    def min_nonzero_modulus(self) -> float:
        return float(min(1.0 / float(b) for b in self.periods))

    def max_modulus(self) -> float:
        return math.sqrt(
            sum((c / float(b)) ** 2 for c, b in zip(self.cutoffs, self.periods))
        )

    def descriptor(self) -> dict:
        """JSON-ready description used for caching and file headers."""
        return {
            "d": self.d,
            "periods": [[b.numerator, b.denominator] for b in self.periods],
            "resolution": list(self.resolution),
            "dealias_fraction": [
                self.dealias_fraction.numerator,
                self.dealias_fraction.denominator,
            ],
        }

    @classmethod
    def from_descriptor(cls, desc: dict) -> "LatticeSpec":
        return cls(
            periods=tuple(Fraction(p, q) for p, q in desc["periods"]),
            resolution=tuple(desc["resolution"]),
            dealias_fraction=Fraction(*desc["dealias_fraction"]),
        )

    @classmethod
    def square(cls, d: int, resolution: int, period=1, dealias_fraction=Fraction(2, 3)):
        """Isotropic lattice: d axes, identical period and resolution."""
        return cls(
            periods=tuple(_as_fraction(period) for _ in range(d)),
            resolution=tuple(resolution for _ in range(d)),
            dealias_fraction=dealias_fraction,
        )


@dataclass
class GridField:
    """Physical samples of a scalar or vector field on the uniform grid."""

    lattice: LatticeSpec
    values: np.ndarray  # shape (components, *resolution)

    def __post_init__(self):
        self.values = np.asarray(self.values)
        if self.values.ndim == self.lattice.d:
            self.values = self.values[None]
        expected = self.lattice.resolution
        if self.values.shape[1:] != expected:
            raise ValueError(
                f"grid shape {self.values.shape[1:]} does not match lattice {expected}"
            )

    @property
    def components(self) -> int:
        return self.values.shape[0]


class SpectralField:
    """Dealiased Fourier coefficient table of a scalar or vector field.

    Coefficients are stored over the full FFT index grid with zeros outside
    the dealiasing mask.  Instances are treated as immutable values: all
    operations return new fields.
    """

    __slots__ = ("lattice", "coeffs", "reality")

    def __init__(self, lattice: LatticeSpec, coeffs: np.ndarray, reality: bool = False):
        coeffs = np.asarray(coeffs, dtype=np.complex128)
        if coeffs.ndim == lattice.d:
            coeffs = coeffs[None]
        if coeffs.shape[1:] != lattice.resolution:
            raise ValueError(
                f"coefficient shape {coeffs.shape[1:]} does not match lattice"
            )
        self.lattice = lattice
        self.coeffs = coeffs * lattice.dealias_mask()
        self.reality = bool(reality)

    # -- constructors ----------------------------------------------------

    @classmethod
    def zeros(cls, lattice: LatticeSpec, components: int = 1, reality: bool = True):
        shape = (components,) + lattice.resolution
        return cls(lattice, np.zeros(shape, dtype=np.complex128), reality=reality)

    @classmethod
    def from_modes(
        cls,
        lattice: LatticeSpec,
        entries: dict,
        components: int = 1,
        reality: bool = False,
    ):
        """Build a field from ``{mode index tuple: coefficient}`` entries.

        For vector fields the coefficient value must be a length-d sequence.
        """
        field = np.zeros((components,) + lattice.resolution, dtype=np.complex128)
        for mode, value in entries.items():
            idx = tuple(int(m) % n for m, n in zip(mode, lattice.resolution))
            if components == 1 and np.isscalar(value):
                field[(0,) + idx] = value
            else:
                vals = np.atleast_1d(np.asarray(value, dtype=np.complex128))
                if vals.shape != (components,):
                    raise ValueError("mode value has wrong number of components")
                for c in range(components):
                    field[(c,) + idx] = vals[c]
        return cls(lattice, field, reality=reality)

    # -- basic properties --------------------------------------------------

    @property
    def components(self) -> int:
        return self.coeffs.shape[0]

    def mode(self, index: Sequence[int]) -> np.ndarray:
        idx = tuple(int(m) % n for m, n in zip(index, self.lattice.resolution))
        return self.coeffs[(slice(None),) + idx]

    def mean_coefficient(self) -> np.ndarray:
        return self.coeffs[(slice(None),) + (0,) * self.lattice.d]

    def mode_power(self) -> np.ndarray:
        """Per-mode squared magnitude summed over components."""
        return np.sum(np.abs(self.coeffs) ** 2, axis=0)

    def l2_norm(self) -> float:
        return math.sqrt(float(np.sum(self.mode_power())))

    def conjugate_symmetry_defect(self) -> float:
        rev = self.coeffs
        for axis in range(1, self.lattice.d + 1):
            rev = np.flip(rev, axis=axis)
        rev = np.roll(rev, 1, axis=tuple(range(1, self.lattice.d + 1)))
        return float(np.max(np.abs(self.coeffs - np.conj(rev))))

    def is_reality_symmetric(self, tol: float = 1e-12) -> bool:
        scale = max(1.0, float(np.max(np.abs(self.coeffs), initial=0.0)))
        return self.conjugate_symmetry_defect() <= tol * scale

    # -- arithmetic --------------------------------------------------------

    def _like(self, coeffs, reality):
        out = SpectralField.__new__(SpectralField)
        out.lattice = self.lattice
        out.coeffs = coeffs
        out.reality = reality
        return out

    def __add__(self, other: "SpectralField") -> "SpectralField":
        self._check_compatible(other)
        return self._like(self.coeffs + other.coeffs, self.reality and other.reality)

    def __sub__(self, other: "SpectralField") -> "SpectralField":
        self._check_compatible(other)
        return self._like(self.coeffs - other.coeffs, self.reality and other.reality)

    def __mul__(self, scalar) -> "SpectralField":
        reality = self.reality and abs(complex(scalar).imag) == 0.0
        return self._like(self.coeffs * scalar, reality)

    __rmul__ = __mul__

    def __neg__(self) -> "SpectralField":
        return self._like(-self.coeffs, self.reality)

    def component(self, c: int) -> "SpectralField":
        return self._like(self.coeffs[c : c + 1], self.reality)

    def scale_modes(self, weights: np.ndarray) -> "SpectralField":
        """Multiply coefficients by a real, radially even mode-weight array."""
        return self._like(self.coeffs * weights, self.reality)

    def _check_compatible(self, other: "SpectralField"):
        if other.lattice is not self.lattice and other.lattice != self.lattice:
            raise ValueError("fields live on different lattices")
        if other.components != self.components:
            raise ValueError("component count mismatch")

    def copy(self) -> "SpectralField":
        return self._like(self.coeffs.copy(), self.reality)

    def copy_with_reality(self, reality: bool) -> "SpectralField":
        return self._like(self.coeffs, reality)


def forward_transform(grid: GridField) -> SpectralField:
    """Grid samples to normalized, dealiased Fourier coefficients."""
    lattice = grid.lattice
    npoints = float(np.prod(lattice.resolution))
    axes = tuple(range(1, lattice.d + 1))
    coeffs = np.fft.fftn(grid.values, axes=axes) * (
        math.sqrt(lattice.volume) / npoints
    )
    reality = bool(np.isrealobj(grid.values)) or bool(
        np.max(np.abs(grid.values.imag), initial=0.0) == 0.0
    )
    return SpectralField(lattice, coeffs, reality=reality)


def inverse_transform(field: SpectralField) -> GridField:
    """Fourier coefficients to grid samples (exact inverse on retained modes)."""
    lattice = field.lattice
    npoints = float(np.prod(lattice.resolution))
    axes = tuple(range(1, lattice.d + 1))
    values = np.fft.ifftn(field.coeffs, axes=axes) * (
        npoints / math.sqrt(lattice.volume)
    )
    if field.reality:
        values = values.real
    return GridField(lattice, values)


def spectral_derivative(field: SpectralField, kind: str) -> SpectralField:
    """Symbol calculus: grad (scalar->vector), div (vector->scalar), laplacian."""
    lattice = field.lattice
    kvecs = lattice.wavevectors()
    if kind == "grad":
        if field.components != 1:
            raise ValueError("grad acts on scalar fields")
        out = np.stack([1j * k * field.coeffs[0] for k in kvecs], axis=0)
    elif kind == "div":
        if field.components != lattice.d:
            raise ValueError("div acts on vector fields")
        out = sum(1j * k * field.coeffs[c] for c, k in enumerate(kvecs))[None]
    elif kind == "laplacian":
        out = -lattice.k_squared() * field.coeffs
    else:
        raise ValueError(f"unknown derivative kind {kind!r}")
    return SpectralField(lattice, out, reality=field.reality)


def dealiased_product(f: SpectralField, g: SpectralField) -> SpectralField:
    """Pointwise product, exact on retained modes by the 2/3-rule cutoff.

    Operand component counts must match, or one operand must be scalar (which
    is then broadcast against the other).
    """
    if f.lattice is not g.lattice and f.lattice != g.lattice:
        raise ValueError("fields live on different lattices")
    lattice = f.lattice
    fg_real = f.reality and g.reality
    fvals = inverse_transform(f.copy_with_reality(False)).values
    gvals = inverse_transform(g.copy_with_reality(False)).values
    if f.components == g.components:
        prod = fvals * gvals
    elif f.components == 1:
        prod = fvals[0][None] * gvals
    elif g.components == 1:
        prod = fvals * gvals[0][None]
    else:
        raise ValueError("incompatible component counts for product")
    out = forward_transform(GridField(lattice, prod))
    out.reality = fg_real
    return out


def convolution_product(f: SpectralField, g: SpectralField) -> SpectralField:
    """Direct truncated Fourier convolution.

    Exact-arithmetic reference for :func:`dealiased_product`; coefficients of
    the result at modes unreachable by retained-mode sums are exactly zero.
    Cost is quadratic in the number of retained modes, so this is only for
    small lattices and frequency-support tests.
    """
    if f.lattice != g.lattice:
        raise ValueError("fields live on different lattices")
    if f.components != 1 or g.components != 1:
        raise ValueError("convolution oracle handles scalar fields")
    lattice = f.lattice
    mask = lattice.dealias_mask()
    res = lattice.resolution
    norm = 1.0 / math.sqrt(lattice.volume)
    out = np.zeros(res, dtype=np.complex128)
    f_idx = np.argwhere(mask)
    for idx in f_idx:
        fval = f.coeffs[(0,) + tuple(idx)]
        if fval == 0:
            continue
        shifted = np.roll(
            g.coeffs[0], shift=tuple(int(i) for i in idx), axis=tuple(range(lattice.d))
        )
        out += fval * shifted
    out *= norm
    return SpectralField(lattice, out[None], reality=f.reality and g.reality)


def zero_mean_split(field: SpectralField) -> tuple[SpectralField, SpectralField]:
    """Split into (mean part, zero-mean remainder); the parts sum to the field."""
    mean = np.zeros_like(field.coeffs)
    zero_idx = (slice(None),) + (0,) * field.lattice.d
    mean[zero_idx] = field.coeffs[zero_idx]
    rest = field.coeffs - mean
    return (
        SpectralField(field.lattice, mean, reality=field.reality),
        SpectralField(field.lattice, rest, reality=field.reality),
    )
