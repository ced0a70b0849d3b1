"""Dyadic frequency decomposition, Besov/Sobolev norms, and paraproducts.

The decomposition uses a fixed smooth radial bump ``phi`` supported exactly in
``{3/4 <= r <= 8/3}`` with ``sum_j phi(2^-j r) = 1`` for ``r != 0``.  The
concrete profile is ``phi(r) = chi(r/2) - chi(r)`` where ``chi`` is a smooth
plateau equal to 1 on ``[0, 3/4]`` and 0 on ``[4/3, inf)``, built from the
standard ``exp(-1/s)`` partition.  All golden constants in the test-suite
(e.g. the Besov/Sobolev equivalence constant) are regenerated from this
profile.

Norms are addressable programmatically through :class:`NormSpec` and as
strings, e.g. ``"B:s=1:p=2:r=1:band=h:eta=32"``; see :func:`parse_norm_spec`
for the grammar.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Sequence

import numpy as np

from .lattice import (
    LatticeSpec,
    SpectralField,
    dealiased_product,
    inverse_transform,
    zero_mean_split,
)

__all__ = [
    "BumpProfile",
    "DEFAULT_PROFILE",
    "NormSpec",
    "parse_norm_spec",
    "compute_jb",
    "block_range",
    "dyadic_block",
    "low_cut",
    "block_l2_norms",
    "norm",
    "time_norm",
    "chemin_lerner_norm",
    "bony_paraproduct",
    "mode_truncate",
]

_INF = float("inf")


def _smooth_step(s: np.ndarray) -> np.ndarray:
    """C-infinity step: exactly 0 for s<=0, exactly 1 for s>=1."""
    s = np.asarray(s, dtype=np.float64)
    out = np.zeros_like(s)
    out[s >= 1.0] = 1.0
    mid = (s > 0.0) & (s < 1.0)
    sm = s[mid]
    a = np.exp(-1.0 / sm)
    b = np.exp(-1.0 / (1.0 - sm))
    out[mid] = a / (a + b)
    return out


class BumpProfile:
    """Radial bump with support [3/4, 8/3] and dyadic partition of unity."""

    lower = 0.75
    upper = 8.0 / 3.0

    def plateau(self, r) -> np.ndarray:
        """chi: 1 on [0, 3/4], 0 on [4/3, inf), smooth in between."""
        r = np.abs(np.asarray(r, dtype=np.float64))
        return _smooth_step((4.0 / 3.0 - r) / (4.0 / 3.0 - 3.0 / 4.0))

    def __call__(self, r) -> np.ndarray:
        r = np.abs(np.asarray(r, dtype=np.float64))
        return self.plateau(r / 2.0) - self.plateau(r)

    def partition_sum(self, r, jmin: int, jmax: int) -> np.ndarray:
        r = np.asarray(r, dtype=np.float64)
        total = np.zeros_like(r)
        for j in range(jmin, jmax + 1):
            total = total + self(np.ldexp(r, -j))
        return total


DEFAULT_PROFILE = BumpProfile()


def compute_jb(lattice: LatticeSpec) -> int:
    """Largest j for which every dyadic block of every lattice field vanishes.

    Blocks with index ``j <= jb`` are identically zero because the bump
    support misses all nonzero lattice frequencies.
    """
    bmax = max(lattice.periods)
    j = int(math.floor(-math.log2(8.0 / 3.0 * float(bmax))))
    while 8 * bmax * Fraction(2) ** j <= 3:
        j += 1
    while 8 * bmax * Fraction(2) ** j > 3:
        j -= 1
    return j


def block_range(lattice: LatticeSpec) -> range:
    """Indices j of possibly non-vanishing blocks for fields on the lattice."""
    jb = compute_jb(lattice)
    kmax = lattice.max_modulus()
    jmax = int(math.floor(math.log2(kmax * 4.0 / 3.0) + 1e-12))
    return range(jb + 1, jmax + 1)


def _block_weights(lattice: LatticeSpec, j: int, profile: BumpProfile) -> np.ndarray:
    key = ("block_weights", j, id(profile))
    cached = lattice._cache.get(key)
    if cached is None:
        cached = profile(np.ldexp(lattice.k_modulus(), -j))
        cached.flags.writeable = False
        lattice._cache[key] = cached
    return cached


def dyadic_block(field, j: int, profile: BumpProfile = DEFAULT_PROFILE):
    """Frequency-localized piece at scale 2^j (mean mode always excluded)."""
    return field.scale_modes(_block_weights(field.lattice, j, profile))


def low_cut(field, j: int, profile: BumpProfile = DEFAULT_PROFILE):
    """Mean plus all blocks strictly below j."""
    lattice = field.lattice
    weights = np.zeros(lattice.resolution)
    weights[(0,) * lattice.d] = 1.0
    for jp in block_range(lattice):
        if jp <= j - 1:
            weights = weights + _block_weights(lattice, jp, profile)
    return field.scale_modes(weights)


# ---------------------------------------------------------------------------
# Norm specifications
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class NormSpec:
    """Spatial norm description.

    kind "B": Besov with indices (s, p, r); kind "H": Sobolev with index s.
    ``band`` restricts the dyadic sum: "full", "h" (2^j >= eta), "m"
    (zeta <= 2^j < eta), or "l" (2^j < zeta).  The mean mode contributes to
    "full" and "l" norms unless ``underlined`` drops it; "h"/"m" norms never
    see the mean.
    """

    kind: str = "B"
    s: float = 0.0
    p: float = 2
    r: float = 1
    band: str = "full"
    eta: float | None = None
    zeta: float | None = None
    underlined: bool = False

    def __post_init__(self):
        if self.kind not in ("B", "H"):
            raise ValueError("kind must be 'B' or 'H'")
        if self.kind == "B":
            if self.p not in (2, _INF):
                raise ValueError("p must be 2 or inf")
            if self.r not in (1, 2, _INF):
                raise ValueError("r must be 1, 2, or inf")
            if self.band not in ("full", "h", "m", "l"):
                raise ValueError(f"unknown band {self.band!r}")
            if self.band in ("h", "m") and self.eta is None:
                raise ValueError("h/m band needs eta")
            if self.band in ("m", "l") and self.zeta is None:
                raise ValueError("m/l band needs zeta")
            if self.band == "m" and not (0 < self.zeta < self.eta):
                raise ValueError("medium band requires 0 < zeta < eta")

    @property
    def includes_mean(self) -> bool:
        return self.band in ("full", "l") and not self.underlined

    def block_active(self, j: int) -> bool:
        scale = 2.0**j
        if self.band == "h":
            return scale >= self.eta
        if self.band == "m":
            return self.zeta <= scale < self.eta
        if self.band == "l":
            return scale < self.zeta
        return True

    def key(self) -> str:
        parts = [self.kind, f"s={self.s:g}"]
        if self.kind == "B":
            parts += [
                f"p={'inf' if self.p == _INF else int(self.p)}",
                f"r={'inf' if self.r == _INF else int(self.r)}",
            ]
            if self.band != "full":
                parts.append(f"band={self.band}")
            if self.eta is not None:
                parts.append(f"eta={self.eta:g}")
            if self.zeta is not None:
                parts.append(f"zeta={self.zeta:g}")
        if self.underlined:
            parts.append("mean=excl")
        return ":".join(parts)


def parse_norm_spec(text: str) -> NormSpec:
    """Parse the documented string grammar for norm specs.

    Grammar (fields after the kind may appear in any order)::

        spec  := kind (":" field)*
        kind  := "B" | "H"
        field := "s=" float | "p=" ("2"|"inf") | "r=" ("1"|"2"|"inf")
               | "band=" ("full"|"h"|"m"|"l") | "eta=" float | "zeta=" float
               | "mean=" ("incl"|"excl")
    """
    parts = text.strip().split(":")
    kind = parts[0].strip()
    kwargs: dict = {"kind": kind}
    for part in parts[1:]:
        if not part:
            continue
        name, _, value = part.partition("=")
        name = name.strip()
        value = value.strip()
        if name == "s":
            kwargs["s"] = float(value)
        elif name in ("p", "r"):
            kwargs[name] = _INF if value == "inf" else float(value)
        elif name == "band":
            kwargs["band"] = value
        elif name in ("eta", "zeta"):
            kwargs[name] = float(value)
        elif name == "mean":
            kwargs["underlined"] = value == "excl"
        else:
            raise ValueError(f"unknown norm-spec field {name!r} in {text!r}")
    return NormSpec(**kwargs)


# ---------------------------------------------------------------------------
# Norm evaluation
# ---------------------------------------------------------------------------


def _mode_power(obj) -> np.ndarray:
    if isinstance(obj, (tuple, list)):
        return sum(o.mode_power() for o in obj)
    return obj.mode_power()


def _lattice_of(obj) -> LatticeSpec:
    if isinstance(obj, (tuple, list)):
        return obj[0].lattice
    return obj.lattice


def _mean_l2(obj) -> float:
    if isinstance(obj, (tuple, list)):
        return math.sqrt(sum(_mean_l2(o) ** 2 for o in obj))
    mean = obj.mean_coefficient()
    return float(np.sqrt(np.sum(np.abs(mean) ** 2)))


def block_l2_norms(obj, profile: BumpProfile = DEFAULT_PROFILE) -> dict[int, float]:
    """L2 norms of every possibly-active dyadic block."""
    lattice = _lattice_of(obj)
    power = _mode_power(obj)
    return {
        j: math.sqrt(float(np.sum(_block_weights(lattice, j, profile) ** 2 * power)))
        for j in block_range(lattice)
    }


def _block_linf(obj, j: int, profile: BumpProfile) -> float:
    if not isinstance(obj, SpectralField):
        raise TypeError("p=inf norms require a plain spectral field")
    block = dyadic_block(obj, j, profile)
    grid = inverse_transform(block.copy_with_reality(False))
    mag = np.sqrt(np.sum(np.abs(grid.values) ** 2, axis=0))
    return float(np.max(mag))


def _mean_linf(obj) -> float:
    if not isinstance(obj, SpectralField):
        raise TypeError("p=inf norms require a plain spectral field")
    mean = obj.mean_coefficient()
    return float(np.sqrt(np.sum(np.abs(mean) ** 2)) / math.sqrt(obj.lattice.volume))


def _ell_r(values: Sequence[float], r: float) -> float:
    arr = np.asarray(values, dtype=np.float64)
    if arr.size == 0:
        return 0.0
    if r == _INF:
        return float(np.max(arr))
    return float(np.sum(arr**r) ** (1.0 / r))


def norm(obj, spec, profile: BumpProfile = DEFAULT_PROFILE) -> float:
    """Evaluate a Besov or Sobolev norm of a field or bundle of fields."""
    if isinstance(spec, str):
        spec = parse_norm_spec(spec)
    lattice = _lattice_of(obj)
    if spec.kind == "H":
        power = _mode_power(obj)
        ksq = lattice.k_squared()
        weights = np.zeros_like(ksq)
        nonzero = ksq > 0
        weights[nonzero] = ksq[nonzero] ** spec.s
        total = float(np.sum(weights * power))
        if not spec.underlined:
            total += _mean_l2(obj) ** 2
        return math.sqrt(total)

    power = _mode_power(obj) if spec.p == 2 else None
    terms = []
    for j in block_range(lattice):
        if not spec.block_active(j):
            continue
        if spec.p == 2:
            bn = math.sqrt(
                float(np.sum(_block_weights(lattice, j, profile) ** 2 * power))
            )
        else:
            bn = _block_linf(obj, j, profile)
        terms.append(2.0 ** (j * spec.s) * bn)
    if spec.includes_mean:
        terms.append(_mean_l2(obj) if spec.p == 2 else _mean_linf(obj))
    return _ell_r(terms, spec.r)


def _time_lq(times: np.ndarray, values: np.ndarray, q: float) -> float:
    if q == _INF:
        return float(np.max(values)) if values.size else 0.0
    return float(np.trapezoid(values**q, times) ** (1.0 / q))


def time_norm(times, fields, q: float, spec, profile: BumpProfile = DEFAULT_PROFILE):
    """L^q-in-time of the spatial norm along a sampled trajectory."""
    if isinstance(spec, str):
        spec = parse_norm_spec(spec)
    times = np.asarray(times, dtype=np.float64)
    values = np.array([norm(f, spec, profile) for f in fields])
    return _time_lq(times, values, q)


def chemin_lerner_norm(
    times, fields, q: float, spec, profile: BumpProfile = DEFAULT_PROFILE
) -> float:
    """Time-inside norm: ell^r over blocks of the L^q-in-time block norms.

    Compared with :func:`time_norm` the order of the time integral and the
    block summation is swapped.  Time integrals use the trapezoid rule on the
    sample grid; q = inf takes the max over samples.
    """
    if isinstance(spec, str):
        spec = parse_norm_spec(spec)
    if spec.kind == "H":
        spec = NormSpec(kind="B", s=spec.s, p=2, r=2, underlined=spec.underlined)
    if spec.p != 2:
        raise ValueError("time-inside norms are implemented for p = 2")
    times = np.asarray(times, dtype=np.float64)
    if len(fields) < 2:
        raise ValueError("trajectory norms need at least two samples")
    lattice = _lattice_of(fields[0])
    powers = [_mode_power(f) for f in fields]
    terms = []
    for j in block_range(lattice):
        if not spec.block_active(j):
            continue
        w2 = _block_weights(lattice, j, profile) ** 2
        series = np.array([math.sqrt(float(np.sum(w2 * p))) for p in powers])
        terms.append(2.0 ** (j * spec.s) * _time_lq(times, series, q))
    if spec.includes_mean:
        series = np.array([_mean_l2(f) for f in fields])
        terms.append(_time_lq(times, series, q))
    return _ell_r(terms, spec.r)


# ---------------------------------------------------------------------------
# Paraproducts and truncations
# ---------------------------------------------------------------------------


def bony_paraproduct(
    f: SpectralField,
    g: SpectralField,
    profile: BumpProfile = DEFAULT_PROFILE,
    product: Callable = dealiased_product,
):
    """Four-part product splitting: (T_f g, T_g f, R(f, g), mean*mean).

    The parts sum to the dealiased product of f and g on retained modes.  A
    different ``product`` callable (e.g. the exact convolution oracle) can be
    supplied for exact-arithmetic frequency-support checks.
    """
    lattice = f.lattice
    js = list(block_range(lattice))
    blocks_f = {j: dyadic_block(f, j, profile) for j in js}
    blocks_g = {j: dyadic_block(g, j, profile) for j in js}

    t_fg = SpectralField.zeros(lattice, f.components, reality=f.reality and g.reality)
    t_gf = SpectralField.zeros(lattice, f.components, reality=f.reality and g.reality)
    rem = SpectralField.zeros(lattice, f.components, reality=f.reality and g.reality)
    for j in js:
        t_fg = t_fg + product(low_cut(f, j - 2, profile), blocks_g[j])
        t_gf = t_gf + product(low_cut(g, j - 2, profile), blocks_f[j])
        for jp in js:
            if abs(j - jp) <= 2:
                rem = rem + product(blocks_f[j], blocks_g[jp])
    mean_f, _ = zero_mean_split(f)
    mean_g, _ = zero_mean_split(g)
    mean_mean = product(mean_f, mean_g)
    return t_fg, t_gf, rem, mean_mean


def mode_truncate(obj, cutoff: float, keep: str = "low"):
    """Sharp modulus truncation: keep |k| <= cutoff ("low") or > ("high").

    The mean mode counts as |k| = 0 and is retained by the low part.
    """
    lattice = _lattice_of(obj)
    low = lattice.k_modulus() <= cutoff + 1e-12
    weights = low.astype(np.float64) if keep == "low" else (~low).astype(np.float64)
    return obj.scale_modes(weights)
