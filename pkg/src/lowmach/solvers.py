"""Time integration for the slightly compressible, incompressible, and
averaged (limit) systems, with exact per-mode propagators for the stiff part.

All three steppers use a Lawson-type exponential RK2: nonlinear terms are
evaluated pseudospectrally with dealiasing, while the linear part is applied
through its exact per-mode exponential.  For the compressible system the
longitudinal (acoustic-viscous) 2x2 block

    d/dt [a_k, mu_k] = [[0, -i|k|/eps], [-i|k|/eps, -nu |k|^2]] [a_k, mu_k]

is exponentiated in closed form, which removes the acoustic time-step
restriction; only the advective CFL limit remains.
"""

from __future__ import annotations

import json
import math
import struct
import warnings
from dataclasses import dataclass, field

import numpy as np

from .lattice import (
    GridField,
    LatticeSpec,
    SpectralField,
    dealiased_product,
    forward_transform,
    inverse_transform,
    spectral_derivative,
    zero_mean_split,
)
from .dyadic import NormSpec, norm
from .operators import (
    AcousticCoeffs,
    PressureLaw,
    VacuumError,
    acoustic_transform,
    advect,
    helmholtz_project,
    wave_group,
)
from .resonance import ResonanceTable, limit_q1, limit_q2

__all__ = [
    "CFLError",
    "ForcingMode",
    "Forcing",
    "SolverConfig",
    "CompressibleState",
    "LimitState",
    "Trajectory",
    "acoustic_viscous_propagator",
    "step_compressible",
    "step_incompressible",
    "step_limit",
    "run_trajectory",
    "generate_initial_data",
    "CubicTimeInterpolant",
    "save_checkpoint",
    "load_checkpoint",
]


class CFLError(RuntimeError):
    """Raised when the advective CFL constraint is violated."""


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ForcingMode:
    mode: tuple
    amplitude: tuple  # complex amplitude per velocity component
    envelope: str = "const"  # const | cos | exp
    omega: float = 0.0

    def factor(self, t: float) -> float:
        if self.envelope == "const":
            return 1.0
        if self.envelope == "cos":
            return math.cos(self.omega * t)
        if self.envelope == "exp":
            return math.exp(-self.omega * t)
        raise ValueError(f"unknown envelope {self.envelope!r}")


class Forcing:
    """Sum of fixed Fourier modes with scalar time envelopes.

    Modes are mirrored automatically so the force is real-valued.
    """

    def __init__(self, lattice: LatticeSpec, modes: list[ForcingMode]):
        self.lattice = lattice
        self.modes = list(modes)

    def __call__(self, t: float) -> SpectralField:
        lattice = self.lattice
        coeffs = np.zeros((lattice.d,) + lattice.resolution, dtype=np.complex128)
        for fm in self.modes:
            idx = tuple(int(c) % n for c, n in zip(fm.mode, lattice.resolution))
            mirror = tuple((-int(c)) % n for c, n in zip(fm.mode, lattice.resolution))
            fac = fm.factor(t)
            for comp, amp in enumerate(fm.amplitude):
                coeffs[(comp,) + idx] += fac * amp
                coeffs[(comp,) + mirror] += fac * np.conj(amp)
        return SpectralField(lattice, coeffs, reality=True)

    def to_json(self) -> list:
        return [
            {
                "mode": list(fm.mode),
                "amplitude": [[z.real, z.imag] for z in map(complex, fm.amplitude)],
                "envelope": fm.envelope,
                "omega": fm.omega,
            }
            for fm in self.modes
        ]

    @classmethod
    def from_json(cls, lattice: LatticeSpec, data: list) -> "Forcing":
        modes = [
            ForcingMode(
                mode=tuple(entry["mode"]),
                amplitude=tuple(complex(re, im) for re, im in entry["amplitude"]),
                envelope=entry.get("envelope", "const"),
                omega=float(entry.get("omega", 0.0)),
            )
            for entry in data
        ]
        return cls(lattice, modes)


@dataclass(frozen=True)
class SolverConfig:
    """Run description shared by the three steppers."""

    lattice: LatticeSpec
    mu: float = 0.1
    lam: float = 0.0
    eps: float = 0.1
    law: PressureLaw = field(default_factory=PressureLaw.gamma_law)
    dt: float = 1e-2
    t_final: float = 1.0
    forcing: Forcing | None = None
    sample_stride: int = 1
    cfl_safety: float = 0.5
    include_nonlinear: bool = True

    def __post_init__(self):
        if self.mu < 0 or self.nu < 0:
            raise ValueError("viscosities must satisfy mu >= 0 and nu = 2*mu+lam >= 0")
        if not (0 < self.eps <= 1):
            raise ValueError("Mach number must lie in (0, 1]")
        if self.dt <= 0 or self.t_final <= 0:
            raise ValueError("dt and t_final must be positive")
        if self.sample_stride < 1:
            raise ValueError("sample_stride must be at least 1")

    @property
    def nu(self) -> float:
        return 2.0 * self.mu + self.lam

    @property
    def n_steps(self) -> int:
        return max(1, int(round(self.t_final / self.dt)))


# ---------------------------------------------------------------------------
# States and trajectories
# ---------------------------------------------------------------------------


@dataclass
class CompressibleState:
    a: SpectralField  # zero-mean rescaled density fluctuation
    u: SpectralField  # velocity
    t: float = 0.0


@dataclass
class LimitState:
    V: AcousticCoeffs
    t: float = 0.0


@dataclass
class Trajectory:
    """Time-stamped samples of solver states plus derived fields."""

    times: np.ndarray
    states: list
    meta: dict = field(default_factory=dict)

    def series(self, key: str) -> list:
        return [s[key] for s in self.states]

    def __len__(self) -> int:
        return len(self.states)

    def restricted(self, t_max: float) -> "Trajectory":
        keep = [i for i, t in enumerate(self.times) if t <= t_max + 1e-12]
        return Trajectory(
            times=self.times[keep],
            states=[self.states[i] for i in keep],
            meta=dict(self.meta),
        )


# ---------------------------------------------------------------------------
# Exact propagators
# ---------------------------------------------------------------------------


class AcousticViscousPropagator:
    """Per-mode exact exponential of the linear compressible operator."""

    def __init__(self, lattice: LatticeSpec, dt: float, eps: float, nu: float, mu: float):
        self.lattice = lattice
        self.dt = dt
        ksq = lattice.k_squared()
        kmod = lattice.k_modulus()
        c = -nu * ksq  # longitudinal damping
        delta_sq = (c / 2.0) ** 2 - ksq / eps**2  # Delta^2 = (c/2)^2 + b^2
        delta = np.sqrt(delta_sq.astype(np.complex128))
        x = delta * dt
        cosh = np.cosh(x)
        small = np.abs(x) < 1e-6
        with np.errstate(divide="ignore", invalid="ignore"):
            sinhc = np.where(small, 1.0, np.sinh(np.where(small, 1.0, x)) / np.where(small, 1.0, x))
        # series fallback: sinh(x)/x = 1 + x^2/6 + x^4/120
        xs = np.where(small, x, 0.0)
        sinhc = np.where(small, 1.0 + xs**2 / 6.0 + xs**4 / 120.0, sinhc)
        cosh = np.where(small, 1.0 + xs**2 / 2.0 + xs**4 / 24.0, cosh)
        s = sinhc * dt  # sinh(Delta dt)/Delta
        front = np.exp(c * dt / 2.0)
        b = -1j * kmod / eps
        self.e11 = front * (cosh - (c / 2.0) * s)
        self.e12 = front * b * s
        self.e22 = front * (cosh + (c / 2.0) * s)
        zero = (0,) * lattice.d
        self.e11[zero] = 1.0
        self.e12[zero] = 0.0
        self.e22[zero] = 1.0
        self.transverse = np.exp(-mu * ksq * dt)

    def apply(self, a: SpectralField, u: SpectralField):
        lattice = self.lattice
        kvecs = lattice.wavevectors()
        kmod = lattice.k_modulus().copy()
        kmod[(0,) * lattice.d] = 1.0
        mu_long = sum(k * u.coeffs[c] for c, k in enumerate(kvecs)) / kmod
        khat = [k / kmod for k in kvecs]
        a_hat = a.coeffs[0]
        new_a = self.e11 * a_hat + self.e12 * mu_long
        new_mu = self.e12 * a_hat + self.e22 * mu_long
        mean_idx = (0,) * lattice.d
        new_u = np.empty_like(u.coeffs)
        for c in range(lattice.d):
            trans = u.coeffs[c] - mu_long * khat[c]
            new_u[c] = self.transverse * trans + new_mu * khat[c]
        # the mean velocity mode is untouched by the linear part
        new_u[(slice(None),) + mean_idx] = u.coeffs[(slice(None),) + mean_idx]
        return (
            SpectralField(lattice, new_a[None], reality=a.reality),
            SpectralField(lattice, new_u, reality=u.reality),
        )


def acoustic_viscous_propagator(
    lattice: LatticeSpec, dt: float, eps: float, nu: float, mu: float
) -> AcousticViscousPropagator:
    """Exact linear propagator for one time step."""
    return AcousticViscousPropagator(lattice, dt, eps, nu, mu)


# ---------------------------------------------------------------------------
# Compressible stepper
# ---------------------------------------------------------------------------


def _viscous_operator(u: SpectralField, mu: float, lam: float) -> SpectralField:
    lap = spectral_derivative(u, "laplacian")
    graddiv = spectral_derivative(spectral_derivative(u, "div"), "grad")
    return mu * lap + (mu + lam) * graddiv


def _compressible_nonlinear(
    state_a: SpectralField,
    state_u: SpectralField,
    t: float,
    cfg: SolverConfig,
    warn_state: dict,
) -> tuple[SpectralField, SpectralField]:
    """Right-hand side beyond the exactly-propagated linear part."""
    lattice = cfg.lattice
    if not cfg.include_nonlinear:
        na = SpectralField.zeros(lattice, 1)
        nu_field = SpectralField.zeros(lattice, lattice.d)
        if cfg.forcing is not None:
            nu_field = nu_field + cfg.forcing(t)
        return na, nu_field

    a_grid = inverse_transform(state_a).values[0].real
    amax = float(np.max(np.abs(a_grid)))
    if cfg.eps * amax >= 1.0:
        raise VacuumError(
            f"eps*||a||_inf = {cfg.eps * amax:.3f} >= 1: density reached vacuum"
        )
    if cfg.eps * amax > 0.5 and not warn_state.get("vacuum_warned"):
        warn_state["vacuum_warned"] = True
        warnings.warn(
            f"eps*||a||_inf = {cfg.eps * amax:.3f} > 1/2: uniform bound lost",
            RuntimeWarning,
        )
    u_grid = inverse_transform(state_u).values.real
    umax = float(np.max(np.sqrt(np.sum(u_grid**2, axis=0))))
    dx_min = min(
        2.0 * math.pi * float(b) / n for b, n in zip(lattice.periods, lattice.resolution)
    )
    if umax > 0 and cfg.dt > cfg.cfl_safety * dx_min / umax:
        raise CFLError(
            f"dt = {cfg.dt:.3e} exceeds advective CFL bound "
            f"{cfg.cfl_safety * dx_min / umax:.3e} (max|u| = {umax:.3f})"
        )

    # continuity: -div(a u)
    au = dealiased_product(state_a, state_u)
    n_a = -1.0 * spectral_derivative(au, "div")

    # momentum: -(u.grad)u - kappa a grad a - K(eps a) a grad a - I(eps a) Au + f
    grad_a = spectral_derivative(state_a, "grad")
    a_grad_a = dealiased_product(state_a, grad_a)
    n_u = -1.0 * advect(state_u, state_u) - cfg.law.kappa * a_grad_a

    visc = _viscous_operator(state_u, cfg.mu, cfg.lam)
    i_vals = cfg.law.quotient(cfg.eps * a_grid)
    k_vals = cfg.law.remainder(cfg.eps * a_grid)
    a_grad_a_grid = inverse_transform(a_grad_a.copy_with_reality(True)).values.real
    visc_grid = inverse_transform(visc.copy_with_reality(True)).values.real
    correction = k_vals[None] * a_grad_a_grid + i_vals[None] * visc_grid
    n_u = n_u - forward_transform(GridField(lattice, correction))
    if cfg.forcing is not None:
        n_u = n_u + cfg.forcing(t)
    return n_a, n_u


def step_compressible(
    state: CompressibleState,
    cfg: SolverConfig,
    propagator: AcousticViscousPropagator | None = None,
    warn_state: dict | None = None,
) -> CompressibleState:
    """One Lawson RK2 step of the rescaled compressible system."""
    if propagator is None:
        propagator = acoustic_viscous_propagator(
            cfg.lattice, cfg.dt, cfg.eps, cfg.nu, cfg.mu
        )
    if warn_state is None:
        warn_state = {}
    dt = cfg.dt
    na0, nu0 = _compressible_nonlinear(state.a, state.u, state.t, cfg, warn_state)
    pa, pu = propagator.apply(state.a + dt * na0, state.u + dt * nu0)
    la, lu = propagator.apply(state.a, state.u)
    pna0, pnu0 = propagator.apply(na0, nu0)
    na1, nu1 = _compressible_nonlinear(pa, pu, state.t + dt, cfg, warn_state)
    new_a = la + (dt / 2.0) * (pna0 + na1)
    new_u = lu + (dt / 2.0) * (pnu0 + nu1)
    return CompressibleState(a=new_a, u=new_u, t=state.t + dt)


# ---------------------------------------------------------------------------
# Incompressible stepper
# ---------------------------------------------------------------------------


def _incompressible_nonlinear(v: SpectralField, t: float, cfg: SolverConfig) -> SpectralField:
    out = SpectralField.zeros(cfg.lattice, cfg.lattice.d)
    if cfg.include_nonlinear:
        out = out - helmholtz_project(advect(v, v), "P")
    if cfg.forcing is not None:
        out = out + helmholtz_project(cfg.forcing(t), "P")
    return out


def step_incompressible(
    v: SpectralField, t: float, cfg: SolverConfig, heat: np.ndarray | None = None
) -> SpectralField:
    """One Lawson RK2 step of the incompressible system (heat integrating factor)."""
    lattice = cfg.lattice
    if heat is None:
        heat = np.exp(-cfg.mu * lattice.k_squared() * cfg.dt)
    dt = cfg.dt
    n0 = _incompressible_nonlinear(v, t, cfg)
    predictor = (v + dt * n0).scale_modes(heat)
    n1 = _incompressible_nonlinear(predictor, t + dt, cfg)
    return v.scale_modes(heat) + (dt / 2.0) * (n0.scale_modes(heat) + n1)


# ---------------------------------------------------------------------------
# Limit stepper
# ---------------------------------------------------------------------------


def _limit_nonlinear(V: AcousticCoeffs, v: SpectralField, cfg, table) -> AcousticCoeffs:
    out = -1.0 * limit_q1(v, V, table) - limit_q2(V, V, table, kappa=cfg.law.kappa)
    return out


def step_limit(
    state: LimitState,
    v_at: "CubicTimeInterpolant",
    cfg: SolverConfig,
    table: ResonanceTable,
    heat: np.ndarray | None = None,
) -> LimitState:
    """One Lawson RK2 step of the averaged system (half-viscosity heat factor)."""
    lattice = cfg.lattice
    if heat is None:
        heat = np.exp(-0.5 * cfg.nu * lattice.k_squared() * cfg.dt)
    dt = cfg.dt
    n0 = _limit_nonlinear(state.V, v_at(state.t), cfg, table)
    predictor = (state.V + dt * n0).scale_modes(heat)
    n1 = _limit_nonlinear(predictor, v_at(state.t + dt), cfg, table)
    new_v = state.V.scale_modes(heat) + (dt / 2.0) * (n0.scale_modes(heat) + n1)
    return LimitState(V=new_v, t=state.t + dt)


# ---------------------------------------------------------------------------
# Trajectory runner
# ---------------------------------------------------------------------------


def _compressible_record(state: CompressibleState, cfg: SolverConfig) -> dict:
    pu = helmholtz_project(state.u, "P")
    qu = state.u - pu
    veps = wave_group(
        acoustic_transform(state.a, qu, check=False), -state.t / cfg.eps
    )
    return {"a": state.a, "u": state.u, "Pu": pu, "Qu": qu, "Veps": veps}


def run_trajectory(
    initial,
    cfg: SolverConfig,
    kind: str,
    table: ResonanceTable | None = None,
    v_at: "CubicTimeInterpolant | None" = None,
) -> Trajectory:
    """Advance to t_final, sampling every ``sample_stride`` steps.

    ``kind`` selects the system: "compressible" (initial = (a0, u0)),
    "incompressible" (initial = v0), or "limit" (initial = V0, which also
    needs the resonance table and the incompressible interpolant).
    """
    times = [0.0]
    states = []
    warn_state: dict = {}
    n_steps = cfg.n_steps
    if kind == "compressible":
        a0, u0 = initial
        state = CompressibleState(a=a0, u=u0, t=0.0)
        states.append(_compressible_record(state, cfg))
        prop = acoustic_viscous_propagator(cfg.lattice, cfg.dt, cfg.eps, cfg.nu, cfg.mu)
        for step in range(1, n_steps + 1):
            state = step_compressible(state, cfg, prop, warn_state)
            state.t = step * cfg.dt  # keep sample times exact multiples
            if step % cfg.sample_stride == 0 or step == n_steps:
                times.append(state.t)
                states.append(_compressible_record(state, cfg))
    elif kind == "incompressible":
        v = initial
        states.append({"v": v})
        heat = np.exp(-cfg.mu * cfg.lattice.k_squared() * cfg.dt)
        t = 0.0
        for step in range(1, n_steps + 1):
            v = step_incompressible(v, t, cfg, heat)
            t = step * cfg.dt
            if step % cfg.sample_stride == 0 or step == n_steps:
                times.append(t)
                states.append({"v": v})
    elif kind == "limit":
        if table is None or v_at is None:
            raise ValueError("limit runs need a resonance table and v interpolant")
        state = LimitState(V=initial, t=0.0)
        states.append({"V": state.V})
        heat = np.exp(-0.5 * cfg.nu * cfg.lattice.k_squared() * cfg.dt)
        for step in range(1, n_steps + 1):
            state = step_limit(state, v_at, cfg, table, heat)
            state.t = step * cfg.dt  # keep sample times exact multiples
            if step % cfg.sample_stride == 0 or step == n_steps:
                times.append(state.t)
                states.append({"V": state.V})
    else:
        raise ValueError(f"unknown trajectory kind {kind!r}")
    return Trajectory(times=np.array(times), states=states, meta={"kind": kind})


# ---------------------------------------------------------------------------
# Initial data
# ---------------------------------------------------------------------------


def generate_initial_data(
    lattice: LatticeSpec,
    amplitude_a: float,
    amplitude_u: float,
    smoothness: float = 3.0,
    seed: int = 0,
):
    """Random band-limited data with prescribed critical-space norms.

    Spectrum |g_k| ~ (1 + |k|)^(-smoothness) with random phases, mirrored to
    be real-valued; the scalar part is zero-mean.  Both parts are rescaled so
    that the d/2-regularity norm of a0 and the (d/2 - 1)-norm of u0 match the
    requested amplitudes exactly.
    """
    rng = np.random.default_rng(seed)
    shape = (1 + lattice.d,) + lattice.resolution
    raw = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    envelope = (1.0 + lattice.k_modulus()) ** (-smoothness)
    raw *= envelope
    # mirror for reality
    axes = tuple(range(1, lattice.d + 1))
    mirrored = raw
    for ax in axes:
        mirrored = np.flip(mirrored, axis=ax)
    mirrored = np.roll(mirrored, 1, axis=axes)
    sym = 0.5 * (raw + np.conj(mirrored))
    a = SpectralField(lattice, sym[:1], reality=True)
    _, a = zero_mean_split(a)
    u = SpectralField(lattice, sym[1:], reality=True)
    d = lattice.d
    na = norm(a, NormSpec(s=d / 2.0, r=1))
    nu_ = norm(u, NormSpec(s=d / 2.0 - 1.0, r=1))
    if na == 0 or nu_ == 0:
        raise ValueError("degenerate random draw; change the seed")
    return (amplitude_a / na) * a, (amplitude_u / nu_) * u


# ---------------------------------------------------------------------------
# Interpolation in time
# ---------------------------------------------------------------------------


class CubicTimeInterpolant:
    """Natural cubic spline through sampled spectral fields."""

    def __init__(self, times, fields):
        self.times = np.asarray(times, dtype=np.float64)
        if len(fields) != self.times.size or len(fields) < 2:
            raise ValueError("need matching times and at least two samples")
        self.template = fields[0]
        self.values = np.stack([f.coeffs for f in fields], axis=0)
        n = self.times.size
        h = np.diff(self.times)
        if np.any(h <= 0):
            raise ValueError("times must be strictly increasing")
        # second derivatives from the natural-spline tridiagonal system
        m = np.zeros_like(self.values)
        if n > 2:
            flat = self.values.reshape(n, -1)
            rhs = np.zeros((n - 2, flat.shape[1]), dtype=np.complex128)
            for i in range(1, n - 1):
                rhs[i - 1] = 6.0 * (
                    (flat[i + 1] - flat[i]) / h[i] - (flat[i] - flat[i - 1]) / h[i - 1]
                )
            lower = h[:-1].copy()
            diag = 2.0 * (h[:-1] + h[1:])
            upper = h[1:].copy()
            # Thomas algorithm
            for i in range(1, n - 2):
                w = lower[i] / diag[i - 1]
                diag[i] -= w * upper[i - 1]
                rhs[i] -= w * rhs[i - 1]
            sol = np.zeros_like(rhs)
            sol[-1] = rhs[-1] / diag[-1]
            for i in range(n - 4, -1, -1):
                sol[i] = (rhs[i] - upper[i] * sol[i + 1]) / diag[i]
            m.reshape(n, -1)[1 : n - 1] = sol
        self.second = m

    def __call__(self, t: float) -> SpectralField:
        times = self.times
        t = float(min(max(t, times[0]), times[-1]))
        i = int(np.searchsorted(times, t, side="right") - 1)
        i = min(max(i, 0), times.size - 2)
        h = times[i + 1] - times[i]
        x0 = (times[i + 1] - t) / h
        x1 = (t - times[i]) / h
        y = (
            x0 * self.values[i]
            + x1 * self.values[i + 1]
            + ((x0**3 - x0) * self.second[i] + (x1**3 - x1) * self.second[i + 1])
            * (h * h / 6.0)
        )
        return SpectralField(self.template.lattice, y, reality=self.template.reality)


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

_MAGIC = b"LOWMACHK1\n"


def save_checkpoint(path: str, lattice: LatticeSpec, time: float, fields: dict, meta=None):
    """Binary checkpoint: magic, JSON header, then raw little-endian complex128.

    Header schema: {"schema": 1, "time": t, "lattice": descriptor,
    "fields": [{"name": ..., "shape": [...]}], "meta": {...}}; payload is the
    concatenation of each field's coefficients as '<c16' in C order.
    """
    entries = []
    blobs = []
    for name, value in fields.items():
        if isinstance(value, SpectralField):
            arr = value.coeffs
        elif isinstance(value, AcousticCoeffs):
            arr = np.stack([value.plus, value.minus], axis=0)
        else:
            arr = np.asarray(value, dtype=np.complex128)
        arr = np.ascontiguousarray(arr.astype("<c16"))
        entries.append({"name": name, "shape": list(arr.shape)})
        blobs.append(arr.tobytes())
    header = json.dumps(
        {
            "schema": 1,
            "time": time,
            "lattice": lattice.descriptor(),
            "fields": entries,
            "meta": meta or {},
        },
        sort_keys=True,
    ).encode()
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        for blob in blobs:
            fh.write(blob)


def load_checkpoint(path: str):
    """Inverse of :func:`save_checkpoint`; returns (lattice, time, arrays, meta)."""
    with open(path, "rb") as fh:
        magic = fh.read(len(_MAGIC))
        if magic != _MAGIC:
            raise ValueError("not a checkpoint file")
        (hlen,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(hlen).decode())
        lattice = LatticeSpec.from_descriptor(header["lattice"])
        arrays = {}
        for entry in header["fields"]:
            count = int(np.prod(entry["shape"]))
            raw = fh.read(count * 16)
            arrays[entry["name"]] = np.frombuffer(raw, dtype="<c16").reshape(
                entry["shape"]
            )
    return lattice, header["time"], arrays, header.get("meta", {})
