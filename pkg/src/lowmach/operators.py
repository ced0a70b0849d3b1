"""Helmholtz projection, acoustic eigenbasis, wave group, and filtered forms.

The wave operator ``L(a, u) = (div u, grad a)`` is diagonalized over nonzero
modes by the orthonormal basis

    Phi_k^alpha = c_d * (1, -alpha*sg(k)*k/|k|)^T * exp(i k.x),
    c_d = (2*vol)^(-1/2),  alpha in {+1, -1},

with eigenvalue ``-i*alpha*sg(k)*|k|``; ``sg`` is +1 iff the first nonzero
component of k is positive.  :class:`AcousticCoeffs` stores a state of the
orthogonal complement of Ker L in this basis; the wave group ``exp(-tau*L)``
is then a per-mode phase rotation.

The filtered quadratic forms are provided twice: a pseudospectral evaluation
(grid products, FFT cost) used by the solvers, and a direct mode-sum path
(quadratic cost) kept as an oracle plus closed-form time averages.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .lattice import (
    GridField,
    LatticeSpec,
    SpectralField,
    dealiased_product,
    forward_transform,
    inverse_transform,
    spectral_derivative,
)

__all__ = [
    "VacuumError",
    "sg",
    "helmholtz_project",
    "AcousticCoeffs",
    "acoustic_transform",
    "acoustic_inverse",
    "wave_group",
    "PressureLaw",
    "nonlinear_coefficients",
    "advect",
    "q1_eps",
    "q2_eps",
    "a2_eps",
    "q1_eps_modesum",
    "q2_eps_modesum",
    "q1_eps_time_average",
    "q2_eps_time_average",
    "a2_eps_time_average",
]


class VacuumError(RuntimeError):
    """Raised when eps*||a||_inf leaves the regime where 1 + eps*a stays away from zero."""


def sg(k) -> int:
    """Generalized sign: +1 iff the first nonzero component of k is positive."""
    for comp in np.atleast_1d(np.asarray(k)).ravel():
        if comp > 0:
            return 1
        if comp < 0:
            return -1
    raise ValueError("sg is undefined at k = 0")


def _signed_modulus(lattice: LatticeSpec) -> np.ndarray:
    """sg(k)*|k| on the full FFT grid (0 at the mean mode)."""

    def build():
        arr = lattice.sign_grid() * lattice.k_modulus()
        arr.flags.writeable = False
        return arr

    return lattice._cached("signed_modulus", build)


def _safe_inv_ksq(lattice: LatticeSpec) -> np.ndarray:
    def build():
        ksq = lattice.k_squared().copy()
        zero = (0,) * lattice.d
        ksq[zero] = 1.0
        inv = 1.0 / ksq
        inv[zero] = 0.0
        inv.flags.writeable = False
        return inv

    return lattice._cached("inv_ksq", build)


def helmholtz_project(u: SpectralField, which: str) -> SpectralField:
    """Divergence-free ("P") or gradient ("Q") part; the mean mode goes to P."""
    lattice = u.lattice
    if u.components != lattice.d:
        raise ValueError("Helmholtz projection acts on vector fields")
    kvecs = lattice.wavevectors()
    dot = sum(k * u.coeffs[c] for c, k in enumerate(kvecs))
    inv_ksq = _safe_inv_ksq(lattice)
    q_coeffs = np.stack([dot * inv_ksq * k for k in kvecs], axis=0)
    if which == "Q":
        return SpectralField(lattice, q_coeffs, reality=u.reality)
    if which == "P":
        return SpectralField(lattice, u.coeffs - q_coeffs, reality=u.reality)
    raise ValueError("which must be 'P' or 'Q'")


class AcousticCoeffs:
    """Coefficients of a (Ker L)-orthogonal state in the acoustic eigenbasis.

    Two complex arrays over the FFT index grid, one per branch alpha = +1 and
    alpha = -1; the mean mode and modes outside the dealias cutoff are zero.
    The squared coefficient magnitudes sum to the squared L2 norm of the
    reconstructed (scalar, gradient-vector) pair.
    """

    __slots__ = ("lattice", "plus", "minus")

    def __init__(self, lattice: LatticeSpec, plus: np.ndarray, minus: np.ndarray):
        mask = lattice.dealias_mask().copy()
        mask[(0,) * lattice.d] = False
        self.lattice = lattice
        self.plus = np.asarray(plus, dtype=np.complex128) * mask
        self.minus = np.asarray(minus, dtype=np.complex128) * mask

    @classmethod
    def zeros(cls, lattice: LatticeSpec) -> "AcousticCoeffs":
        shape = lattice.resolution
        return cls(lattice, np.zeros(shape, np.complex128), np.zeros(shape, np.complex128))

    @classmethod
    def from_modes(cls, lattice: LatticeSpec, entries: dict) -> "AcousticCoeffs":
        """Build from ``{(mode tuple, alpha): value}`` entries."""
        out = cls.zeros(lattice)
        for (mode, alpha), value in entries.items():
            idx = tuple(int(m) % n for m, n in zip(mode, lattice.resolution))
            if alpha == 1:
                out.plus[idx] = value
            elif alpha == -1:
                out.minus[idx] = value
            else:
                raise ValueError("alpha must be +1 or -1")
        return out

    def branch(self, alpha: int) -> np.ndarray:
        return self.plus if alpha == 1 else self.minus

    def mode_power(self) -> np.ndarray:
        return np.abs(self.plus) ** 2 + np.abs(self.minus) ** 2

    def mean_coefficient(self) -> np.ndarray:
        return np.zeros(1, dtype=np.complex128)

    def l2_norm(self) -> float:
        return math.sqrt(float(np.sum(self.mode_power())))

    def scale_modes(self, weights: np.ndarray) -> "AcousticCoeffs":
        out = AcousticCoeffs.__new__(AcousticCoeffs)
        out.lattice = self.lattice
        out.plus = self.plus * weights
        out.minus = self.minus * weights
        return out

    def _like(self, plus, minus) -> "AcousticCoeffs":
        out = AcousticCoeffs.__new__(AcousticCoeffs)
        out.lattice = self.lattice
        out.plus = plus
        out.minus = minus
        return out

    def __add__(self, other):
        return self._like(self.plus + other.plus, self.minus + other.minus)

    def __sub__(self, other):
        return self._like(self.plus - other.plus, self.minus - other.minus)

    def __mul__(self, scalar):
        return self._like(self.plus * scalar, self.minus * scalar)

    __rmul__ = __mul__

    def __neg__(self):
        return self._like(-self.plus, -self.minus)

    def copy(self) -> "AcousticCoeffs":
        return self._like(self.plus.copy(), self.minus.copy())

    def conjugate_symmetry_defect(self) -> float:
        d = self.lattice.d
        axes = tuple(range(d))
        worst = 0.0
        for arr in (self.plus, self.minus):
            rev = arr
            for ax in axes:
                rev = np.flip(rev, axis=ax)
            rev = np.roll(rev, 1, axis=axes)
            worst = max(worst, float(np.max(np.abs(arr - np.conj(rev)))))
        return worst


def acoustic_transform(
    a: SpectralField, qu: SpectralField, check: bool = True, tol: float = 1e-10
) -> AcousticCoeffs:
    """Expand a (zero-mean scalar, gradient vector) pair in the eigenbasis.

    With the longitudinal amplitude ``mu_k = (k/|k|) . qu_k`` the coefficients
    are ``V_k^alpha = (a_k - alpha*sg(k)*mu_k)/sqrt(2)``.
    """
    lattice = a.lattice
    if check:
        scale = max(1.0, float(np.max(np.abs(a.coeffs))), float(np.max(np.abs(qu.coeffs))))
        if abs(a.mean_coefficient()[0]) > tol * scale:
            raise ValueError("scalar part must be zero-mean")
        p_part = helmholtz_project(qu, "P")
        if np.max(np.abs(p_part.coeffs)) > tol * scale:
            raise ValueError("vector part must be a gradient field")
    kvecs = lattice.wavevectors()
    kmod = lattice.k_modulus().copy()
    kmod[(0,) * lattice.d] = 1.0
    mu = sum(k * qu.coeffs[c] for c, k in enumerate(kvecs)) / kmod
    sgk = lattice.sign_grid()
    ahat = a.coeffs[0]
    inv_sqrt2 = 1.0 / math.sqrt(2.0)
    plus = (ahat - sgk * mu) * inv_sqrt2
    minus = (ahat + sgk * mu) * inv_sqrt2
    return AcousticCoeffs(lattice, plus, minus)


def acoustic_inverse(V: AcousticCoeffs) -> tuple[SpectralField, SpectralField]:
    """Reconstruct the (zero-mean scalar, gradient vector) pair."""
    lattice = V.lattice
    inv_sqrt2 = 1.0 / math.sqrt(2.0)
    ahat = (V.plus + V.minus) * inv_sqrt2
    sgk = lattice.sign_grid()
    mu = -sgk * (V.plus - V.minus) * inv_sqrt2
    kmod = lattice.k_modulus().copy()
    kmod[(0,) * lattice.d] = 1.0
    kvecs = lattice.wavevectors()
    qu = np.stack([mu * k / kmod for k in kvecs], axis=0)
    reality = V.conjugate_symmetry_defect() <= 1e-12 * max(
        1.0, float(np.max(np.abs(V.plus))), float(np.max(np.abs(V.minus)))
    )
    return (
        SpectralField(lattice, ahat[None], reality=reality),
        SpectralField(lattice, qu, reality=reality),
    )


def wave_group(V: AcousticCoeffs, tau: float) -> AcousticCoeffs:
    """Acoustic propagator exp(-tau*L): phase e^{i*alpha*sg(k)*|k|*tau} per mode."""
    rate = _signed_modulus(V.lattice)
    phase = np.exp(1j * tau * rate)
    return V._like(V.plus * phase, V.minus * np.conj(phase))


# ---------------------------------------------------------------------------
# Pressure law
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PressureLaw:
    """Normalized pressure law through P'(1+a)/(1+a) = 1 + kappa*a + a*K(a).

    Either a power law with exponent ``gamma`` (closed-form remainder K) or a
    truncated Taylor description of K.
    """

    kappa: float
    gamma: float | None = None
    taylor: tuple[float, ...] = ()

    @classmethod
    def gamma_law(cls, gamma: float = 2.0) -> "PressureLaw":
        """P(rho) = rho^gamma / gamma, so P'(1) = 1 and kappa = gamma - 2."""
        return cls(kappa=float(gamma) - 2.0, gamma=float(gamma))

    @classmethod
    def from_taylor(cls, kappa: float, coeffs) -> "PressureLaw":
        """K(a) = sum_n coeffs[n-1] * a^n, truncated Taylor representation."""
        coeffs = tuple(float(c) for c in coeffs)
        if len(coeffs) > 8:
            raise ValueError("at most 8 Taylor coefficients are supported")
        return cls(kappa=float(kappa), taylor=coeffs)

    def remainder(self, a: np.ndarray) -> np.ndarray:
        """K(a), smooth with K(0) = 0."""
        a = np.asarray(a, dtype=np.float64)
        if self.gamma is not None:
            e = self.gamma - 2.0
            out = np.empty_like(a)
            small = np.abs(a) < 1e-4
            asafe = np.where(small, 1.0, a)
            out = ((1.0 + asafe) ** e - 1.0 - e * asafe) / asafe
            # quadratic Taylor start, relative error O(a^2) below the switch
            coef2 = 0.5 * e * (e - 1.0)
            coef3 = e * (e - 1.0) * (e - 2.0) / 6.0
            out = np.where(small, coef2 * a + coef3 * a * a, out)
            return out
        out = np.zeros_like(a)
        for c in reversed(self.taylor):
            out = a * (out + c)
        return out

    def quotient(self, a: np.ndarray) -> np.ndarray:
        """I(a) = a / (1 + a)."""
        a = np.asarray(a, dtype=np.float64)
        return a / (1.0 + a)

    def expansion_defect(self, amax: float = 0.5, samples: int = 512) -> float:
        """Max deviation of 1 + kappa*a + a*K(a) from P'(1+a)/(1+a) on [-amax, amax]."""
        if self.gamma is None:
            return 0.0
        a = np.linspace(-amax, amax, samples)
        exact = (1.0 + a) ** (self.gamma - 2.0)
        model = 1.0 + self.kappa * a + a * self.remainder(a)
        return float(np.max(np.abs(exact - model)))


def nonlinear_coefficients(law: PressureLaw, a: SpectralField, eps: float, as_grid=False):
    """Pointwise grid evaluation of (I(eps*a), K(eps*a)), plus kappa.

    Returns spectral fields by default (grid values then a forward transform,
    which truncates the non-band-limited quotients); with ``as_grid`` the
    untruncated grid samples are returned instead.  Raises
    :class:`VacuumError` when eps*||a||_inf exceeds 1/2, where the uniform
    non-vacuum bound is lost.
    """
    grid = inverse_transform(a)
    vals = np.real(grid.values)
    amax = float(np.max(np.abs(vals)))
    if eps * amax > 0.5:
        raise VacuumError(
            f"eps*||a||_inf = {eps * amax:.3f} > 1/2: too close to vacuum"
        )
    i_vals = law.quotient(eps * vals)
    k_vals = law.remainder(eps * vals)
    if as_grid:
        return GridField(a.lattice, i_vals), GridField(a.lattice, k_vals), law.kappa
    i_field = forward_transform(GridField(a.lattice, i_vals))
    k_field = forward_transform(GridField(a.lattice, k_vals))
    return i_field, k_field, law.kappa


# ---------------------------------------------------------------------------
# Filtered quadratic forms: pseudospectral path
# ---------------------------------------------------------------------------


def advect(p: SpectralField, q: SpectralField) -> SpectralField:
    """(p . grad) q for vector fields p, q, dealiased."""
    lattice = p.lattice
    out = SpectralField.zeros(lattice, q.components, reality=p.reality and q.reality)
    for c in range(lattice.d):
        dq = SpectralField(
            lattice,
            1j * lattice.wavevectors()[c] * q.coeffs,
            reality=q.reality,
        )
        out = out + dealiased_product(p.component(c), dq)
    return out


def q1_eps(
    u: SpectralField, B: AcousticCoeffs, t: float, eps: float
) -> AcousticCoeffs:
    """Filtered advection form: L(-t/e)(div(u L1 B); Q(u.grad L2 B + L2 B.grad u)).

    ``u`` must be divergence-free (its mean mode may be nonzero).
    """
    scalar, vector = acoustic_inverse(wave_group(B, t / eps))
    s_part = spectral_derivative(dealiased_product(u, scalar), "div")
    v_part = helmholtz_project(advect(u, vector) + advect(vector, u), "Q")
    out = acoustic_transform(s_part, v_part, check=False)
    return wave_group(out, -t / eps)


def q2_eps(
    A: AcousticCoeffs, B: AcousticCoeffs, t: float, eps: float, kappa: float = 0.0
) -> AcousticCoeffs:
    """Filtered symmetric acoustic form, including the kappa pressure term."""
    aA, wA = acoustic_inverse(wave_group(A, t / eps))
    aB, wB = acoustic_inverse(wave_group(B, t / eps))
    mixed = dealiased_product(aA, wB) + dealiased_product(aB, wA)
    s_part = 0.5 * spectral_derivative(mixed, "div")
    dot = SpectralField.zeros(A.lattice, 1, reality=True)
    for c in range(A.lattice.d):
        dot = dot + dealiased_product(wA.component(c), wB.component(c))
    v_part = 0.5 * spectral_derivative(
        dot + kappa * dealiased_product(aA, aB), "grad"
    )
    out = acoustic_transform(s_part, v_part, check=False)
    return wave_group(out, -t / eps)


def a2_eps(B: AcousticCoeffs, t: float, eps: float) -> AcousticCoeffs:
    """Filtered viscous symbol: per mode
    -(1/2) sum_alpha alpha*gamma*|k|^2 B_k^alpha e^{i(t/eps)(alpha-gamma)sg(k)|k|}."""
    lattice = B.lattice
    ksq = lattice.k_squared()
    rate = _signed_modulus(lattice)
    osc = np.exp(-2j * (t / eps) * rate)
    plus = -0.5 * ksq * (B.plus - B.minus * osc)
    minus = -0.5 * ksq * (B.minus - B.plus * np.conj(osc))
    return B._like(plus, minus)


# ---------------------------------------------------------------------------
# Mode-sum oracles and closed-form time averages
# ---------------------------------------------------------------------------


def _box_modes(lattice: LatticeSpec, include_zero: bool = False):
    key = ("box_modes", include_zero)

    def build():
        mask = lattice.dealias_mask()
        grids = lattice.index_grids()
        idx = np.argwhere(mask)
        out = []
        for raw in idx:
            raw = tuple(int(i) for i in raw)
            n = tuple(int(g[raw]) for g in grids)
            if not include_zero and all(c == 0 for c in n):
                continue
            out.append((n, raw))
        return out

    return lattice._cached(key, build)


def _mod_vec(n, b):
    return math.sqrt(sum((c / float(bb)) ** 2 for c, bb in zip(n, b)))


def _phase_factor(omega: float, t: float, eps: float) -> complex:
    return complex(np.exp(1j * (t / eps) * omega))


def _average_factor(omega: float, T: float, eps: float) -> complex:
    """(1/T) * integral_0^T e^{i omega t / eps} dt, exactly."""
    if omega == 0.0:
        return 1.0 + 0.0j
    x = omega * T / eps
    return (np.exp(1j * x) - 1.0) / (1j * x)


def _band_keeps(lattice, band, kmod, lmod) -> bool:
    """Interaction-band predicate for the low/high frequency split."""
    if band is None:
        return True
    side, M = band
    low = kmod <= M + 1e-12 and lmod <= M + 1e-12
    return low if side == "low" else not low


def _q1_modesum_generic(u, B, t, eps, factor, band=None) -> AcousticCoeffs:
    lattice = u.lattice
    b = lattice.periods
    vol = lattice.volume
    out = AcousticCoeffs.zeros(lattice)
    modes = _box_modes(lattice)
    uhat = {}
    for n, raw in _box_modes(lattice, include_zero=True):
        uhat[n] = np.array([u.coeffs[c][raw] for c in range(lattice.d)])
    for m, raw_m in modes:
        mmod = _mod_vec(m, b)
        sgm = sg(m)
        for gamma, target in ((1, out.plus), (-1, out.minus)):
            total = 0.0 + 0.0j
            for k, raw_k in modes:
                l = tuple(mi - ki for mi, ki in zip(m, k))
                ul = uhat.get(l)
                if ul is None:
                    continue
                kmod = _mod_vec(k, b)
                if not _band_keeps(lattice, band, kmod, _mod_vec(l, b)):
                    continue
                sgk = sg(k)
                k_dot_u = sum(ki / float(bi) * uc for ki, bi, uc in zip(k, b, ul))
                lm_dot_k = sum(
                    (li + mi) / float(bi) * ki / float(bi)
                    for li, mi, ki, bi in zip(l, m, k, b)
                )
                for alpha, coeff in ((1, B.plus[raw_k]), (-1, B.minus[raw_k])):
                    if coeff == 0:
                        continue
                    bracket = 1.0 + alpha * gamma * sgk * sgm * lm_dot_k / (kmod * mmod)
                    omega = alpha * sgk * kmod - gamma * sgm * mmod
                    total += coeff * k_dot_u * bracket * factor(omega, t, eps)
            target[raw_m] = 1j / (2.0 * math.sqrt(vol)) * total
    return out


def q1_eps_modesum(u, B, t: float, eps: float, band=None) -> AcousticCoeffs:
    """Direct double-sum evaluation of the filtered advection form."""
    return _q1_modesum_generic(u, B, t, eps, _phase_factor, band=band)


def q1_eps_time_average(u, B, T: float, eps: float) -> AcousticCoeffs:
    """(1/T) * integral over [0, T] of the filtered advection form, exactly."""
    return _q1_modesum_generic(u, B, T, eps, _average_factor)


def _q2_modesum_generic(A, B, t, eps, kappa, factor, band=None) -> AcousticCoeffs:
    lattice = A.lattice
    b = lattice.periods
    c_d = 1.0 / math.sqrt(2.0 * lattice.volume)
    out = AcousticCoeffs.zeros(lattice)
    modes = _box_modes(lattice)
    index = {n: raw for n, raw in modes}
    for m, raw_m in modes:
        mmod = _mod_vec(m, b)
        sgm = sg(m)
        for gamma, target in ((1, out.plus), (-1, out.minus)):
            total = 0.0 + 0.0j
            for k, raw_k in modes:
                l = tuple(mi - ki for mi, ki in zip(m, k))
                raw_l = index.get(l)
                if raw_l is None or all(c == 0 for c in l):
                    continue
                kmod = _mod_vec(k, b)
                lmod = _mod_vec(l, b)
                if not _band_keeps(lattice, band, kmod, lmod):
                    continue
                sgk, sgl = sg(k), sg(l)
                l_dot_m = sum(
                    li / float(bi) * mi / float(bi) for li, mi, bi in zip(l, m, b)
                )
                k_dot_l = sum(
                    ki / float(bi) * li / float(bi) for ki, li, bi in zip(k, l, b)
                )
                for alpha in (1, -1):
                    a_k = A.branch(alpha)[raw_k]
                    b_k = B.branch(alpha)[raw_k]
                    for beta in (1, -1):
                        b_l = B.branch(beta)[raw_l]
                        a_l = A.branch(beta)[raw_l]
                        sym = 0.5 * (a_k * b_l + b_k * a_l)
                        if sym == 0:
                            continue
                        bracket = (
                            beta * sgl * sgm * l_dot_m / (lmod * mmod)
                            + gamma * kappa / 2.0
                            + alpha * beta * gamma / 2.0 * sgk * sgl * k_dot_l / (kmod * lmod)
                        )
                        omega = alpha * sgk * kmod + beta * sgl * lmod - gamma * sgm * mmod
                        total += sym * bracket * factor(omega, t, eps)
            target[raw_m] = -1j * c_d / 2.0 * sgm * mmod * total
    return out


def q2_eps_modesum(
    A, B, t: float, eps: float, kappa: float = 0.0, band=None
) -> AcousticCoeffs:
    """Direct double-sum evaluation of the filtered symmetric form."""
    return _q2_modesum_generic(A, B, t, eps, kappa, _phase_factor, band=band)


def q2_eps_time_average(A, B, T: float, eps: float, kappa: float = 0.0) -> AcousticCoeffs:
    """(1/T) * integral over [0, T] of the filtered symmetric form, exactly."""
    return _q2_modesum_generic(A, B, T, eps, kappa, _average_factor)


def a2_eps_time_average(B: AcousticCoeffs, T: float, eps: float) -> AcousticCoeffs:
    """(1/T) * integral over [0, T] of the filtered viscous symbol, exactly."""
    lattice = B.lattice
    ksq = lattice.k_squared()
    rate = _signed_modulus(lattice)
    x = -2.0 * (T / eps) * rate
    with np.errstate(divide="ignore", invalid="ignore"):
        avg = np.where(x != 0.0, (np.exp(1j * x) - 1.0) / (1j * np.where(x == 0, 1, x)), 1.0)
    plus = -0.5 * ksq * (B.plus - B.minus * avg)
    minus = -0.5 * ksq * (B.minus - B.plus * np.conj(avg))
    return B._like(plus, minus)
