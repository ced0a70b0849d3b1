"""Exact resonance classification, limit forms, small divisors, correctors.

On lattices whose squared periods are rational, every frequency modulus is
``sqrt(N/D)`` with integers N and a common denominator D, so conditions like
``sg(k)|k| + sg(l)|l| = sg(m)|m|`` reduce to signed comparisons of integer
square roots and are decided exactly:

    sqrt(a) + sqrt(b) = sqrt(c)   iff   c >= a + b and (c - a - b)^2 = 4ab.

The resonant triples drive the averaged (limit) quadratic forms; the
non-resonant ones carry the small divisors and build the two-time-scale
correctors.  Tables are enumerated once per (lattice, cutoff) and can be
cached on disk.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .lattice import LatticeSpec, SpectralField
from .operators import AcousticCoeffs, sg

__all__ = [
    "ResonanceResult",
    "resonance_test",
    "ResonanceTable",
    "enumerate_resonance_sets",
    "build_limit_tables",
    "limit_q1",
    "limit_q2",
    "SmallDivisorReport",
    "small_divisors",
    "CorrectorSet",
    "assemble_correctors",
    "remainder_fields",
    "low_freq_split",
]


# ---------------------------------------------------------------------------
# Exact signed square-root arithmetic
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ResonanceResult:
    resonant: bool
    divisor: float  # |sum of signed roots|; 0.0 when resonant

    def __bool__(self):
        return self.resonant


def _sqrt_sum_is_zero(terms) -> bool:
    """Exact test of sum_i sigma_i * sqrt(n_i) == 0 for up to three terms."""
    terms = [(int(s), int(n)) for s, n in terms if n != 0]
    for s, n in terms:
        if n < 0 or s not in (-1, 1):
            raise ValueError("terms must be (sign, nonnegative integer)")
    if not terms:
        return True
    if len(terms) == 1:
        return False
    if len(terms) == 2:
        (s1, n1), (s2, n2) = terms
        return n1 == n2 and s1 != s2
    if len(terms) == 3:
        pos = sorted(n for s, n in terms if s > 0)
        neg = sorted(n for s, n in terms if s < 0)
        if not pos or not neg:
            return False
        if len(pos) == 1:
            pos, neg = neg, pos
        a, b = pos
        c = neg[0]
        return c >= a + b and (c - a - b) ** 2 == 4 * a * b
    raise ValueError("at most three signed roots are supported")


def resonance_test(signed_freqs) -> ResonanceResult:
    """Classify a signed-root combination, e.g. [(1, 1), (1, 1), (-1, 4)].

    Each entry is (sigma, n) standing for sigma*sqrt(n); the test decides
    exactly whether the combination sums to zero.  Non-resonant combinations
    report |sum| as the divisor (in floating point).
    """
    if _sqrt_sum_is_zero(signed_freqs):
        return ResonanceResult(True, 0.0)
    value = sum(s * math.sqrt(n) for s, n in signed_freqs)
    return ResonanceResult(False, abs(value))


def _vec_three_term_zero(s1, n1, s2, n2, s3, n3) -> np.ndarray:
    """Vectorized exact test of s1*sqrt(n1) + s2*sqrt(n2) + s3*sqrt(n3) == 0.

    All n arrays must be positive integers small enough that (c-a-b)^2 fits
    in int64 (guarded by the callers).
    """
    pair_a = (s1 == s2) & (s1 != s3)
    pair_b = (s1 == s3) & (s1 != s2)
    pair_c = (s2 == s3) & (s1 != s2)
    a = np.where(pair_a, n1, np.where(pair_b, n1, n2))
    b = np.where(pair_a, n2, np.where(pair_b, n3, n3))
    c = np.where(pair_a, n3, np.where(pair_b, n2, n1))
    diff = c - a - b
    return (pair_a | pair_b | pair_c) & (diff >= 0) & (diff * diff == 4 * a * b)


# ---------------------------------------------------------------------------
# Mode bookkeeping helpers
# ---------------------------------------------------------------------------


def _ball_modes(lattice: LatticeSpec, M: float):
    """Lattice vectors with 0 < |k| <= M, as integer index tuples."""
    scale = lattice.norm_scale()
    bound = int(math.floor(M * M * scale + 1e-9))
    ranges = [
        range(-int(math.floor(M * float(b) + 1e-9)), int(math.floor(M * float(b) + 1e-9)) + 1)
        for b in lattice.periods
    ]
    out = []

    def rec(prefix, rest):
        if not rest:
            n = tuple(prefix)
            if any(n):
                bsqs = [bb * bb for bb in lattice.periods]
                N = sum(
                    (scale * bsq.denominator // bsq.numerator) * c * c
                    for c, bsq in zip(n, bsqs)
                )
                if N <= bound:
                    out.append(n)
            return
        for c in rest[0]:
            rec(prefix + [c], rest[1:])

    rec([], ranges)
    return out


def _scaled_norm_of(lattice: LatticeSpec, n) -> int:
    scale = lattice.norm_scale()
    total = 0
    for c, b in zip(n, lattice.periods):
        bsq = b * b
        total += (scale * bsq.denominator // bsq.numerator) * c * c
    return total


def _modulus_of(lattice: LatticeSpec, n) -> float:
    return math.sqrt(sum((c / float(b)) ** 2 for c, b in zip(n, lattice.periods)))


def _wavevector_of(lattice: LatticeSpec, n):
    return tuple(c / float(b) for c, b in zip(n, lattice.periods))


def _in_box(lattice: LatticeSpec, n) -> bool:
    return all(abs(c) <= cut for c, cut in zip(n, lattice.cutoffs))


def _flat_index(lattice: LatticeSpec, n) -> int:
    idx = tuple(int(c) % r for c, r in zip(n, lattice.resolution))
    return int(np.ravel_multi_index(idx, lattice.resolution))


# ---------------------------------------------------------------------------
# Resonance tables
# ---------------------------------------------------------------------------


@dataclass
class ResonanceTable:
    """Classified interaction triples up to a cutoff.

    Resonant entries feed the limit forms; non-resonant entries (when kept)
    carry divisors, brackets, and oscillation rates for the correctors.  All
    index arrays are flat indices into the lattice's FFT grid; entries whose
    output mode m falls outside the dealiased box are kept only in the
    divisor statistics, not in the field-building arrays.
    """

    lattice: LatticeSpec
    M: float
    # q1 resonant: |k| = |m|, alpha = gamma*sg(m)*sg(k); l = m - k may be 0
    q1_m: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int64))
    q1_k: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int64))
    q1_l: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int64))
    q1_ss: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int8))
    q1_weight: np.ndarray = field(default_factory=lambda: np.zeros(0))
    q1_kvec: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))
    # q2 resonant, per output branch gamma
    q2_m: dict = field(default_factory=dict)
    q2_k: dict = field(default_factory=dict)
    q2_l: dict = field(default_factory=dict)
    q2_smod: dict = field(default_factory=dict)
    # non-resonant (corrector) entries, optional
    nonres_q1: dict | None = None
    nonres_q2: dict | None = None

    def counts(self) -> dict:
        out = {
            "q1_resonant": int(self.q1_m.size),
            "q2_resonant": int(sum(v.size for v in self.q2_m.values())),
        }
        if self.nonres_q1 is not None:
            out["q1_nonresonant"] = int(self.nonres_q1["m"].size)
        if self.nonres_q2 is not None:
            out["q2_nonresonant"] = int(self.nonres_q2["m"].size)
        return out


def _box_mode_list(lattice: LatticeSpec):
    key = "res_box_modes"

    def build():
        mask = lattice.dealias_mask()
        grids = lattice.index_grids()
        idx = np.argwhere(mask)
        modes = []
        for raw in idx:
            n = tuple(int(g[tuple(raw)]) for g in grids)
            if any(n):
                modes.append(n)
        return modes

    return lattice._cached(key, build)


def _guard_int64(lattice: LatticeSpec, max_scaled_norm: int):
    if (3 * max_scaled_norm) ** 2 > 2**62:
        raise ValueError(
            "scaled norms too large for vectorized exact tests; "
            "use smaller periods denominators or resolution"
        )


def build_limit_tables(lattice: LatticeSpec, cache_dir: str | None = None) -> ResonanceTable:
    """Resonant triples over the full dealiased box (for the limit solver)."""
    cached = _load_cached(lattice, "limit", cache_dir)
    if cached is not None:
        return cached
    modes = _box_mode_list(lattice)
    nvecs = np.array(modes, dtype=np.int64)
    nmodes = len(modes)
    res = lattice.resolution
    flat = np.array([_flat_index(lattice, n) for n in modes], dtype=np.int64)
    norms = np.array([_scaled_norm_of(lattice, n) for n in modes], dtype=np.int64)
    sgs = np.array([sg(n) for n in modes], dtype=np.int64)
    mods = np.array([_modulus_of(lattice, n) for n in modes])
    kvecs = np.array([_wavevector_of(lattice, n) for n in modes])
    _guard_int64(lattice, int(np.max(norms)) * 4)

    flat_of = -np.ones(int(np.prod(res)), dtype=np.int64)
    flat_of[flat] = np.arange(nmodes)
    zero_flat = _flat_index(lattice, (0,) * lattice.d)

    # --- q1: same-modulus shells -------------------------------------
    q1_m, q1_k, q1_l, q1_ss, q1_w, q1_kv = [], [], [], [], [], []
    shells: dict[int, list[int]] = {}
    for i, N in enumerate(norms):
        shells.setdefault(int(N), []).append(i)
    for shell in shells.values():
        for im in shell:
            m = nvecs[im]
            for ik in shell:
                l = m - nvecs[ik]
                if np.all(np.abs(l) <= np.array(lattice.cutoffs)):
                    lf = _flat_index(lattice, tuple(int(c) for c in l))
                    q1_m.append(flat[im])
                    q1_k.append(flat[ik])
                    q1_l.append(lf)
                    q1_ss.append(sgs[im] * sgs[ik])
                    kdotm = float(np.dot(kvecs[ik], kvecs[im]))
                    q1_w.append(kdotm / (mods[ik] * mods[im]))
                    q1_kv.append(kvecs[ik])

    # --- q2: exact three-root condition, vectorized over l -----------
    # With equal branches alpha = beta = gamma the oscillation exponent is
    # gamma*(sg(k)|k| + sg(l)|l| - sg(m)|m|), so the resonant pair set is the
    # same for both output branches.
    q2 = ([], [], [], [])
    cut = np.array(lattice.cutoffs)
    for ik in range(nmodes):
        lvec = nvecs  # all candidate l
        mvec = nvecs[ik] + lvec
        inbox = np.all(np.abs(mvec) <= cut, axis=1) & np.any(mvec != 0, axis=1)
        if not np.any(inbox):
            continue
        lsel = np.nonzero(inbox)[0]
        msel = mvec[lsel]
        m_flat_idx = np.array(
            [_flat_index(lattice, tuple(int(c) for c in mm)) for mm in msel],
            dtype=np.int64,
        )
        m_pos = flat_of[m_flat_idx]
        valid = m_pos >= 0
        lsel, msel, m_pos = lsel[valid], msel[valid], m_pos[valid]
        if lsel.size == 0:
            continue
        sk = int(sgs[ik])
        nk = int(norms[ik])
        sl = sgs[lsel]
        nl = norms[lsel]
        sm = sgs[m_pos]
        nm = norms[m_pos]
        hit = _vec_three_term_zero(
            np.full(sl.shape, sk, dtype=np.int64),
            np.full(sl.shape, nk, dtype=np.int64),
            sl,
            nl,
            -sm,
            nm,
        )
        if not np.any(hit):
            continue
        sel = np.nonzero(hit)[0]
        ms, ks, ls, smods = q2
        ms.extend(flat[m_pos[sel]].tolist())
        ks.extend([int(flat[ik])] * sel.size)
        ls.extend(flat[lsel[sel]].tolist())
        smods.extend((sm[sel] * mods[m_pos[sel]]).tolist())

    table = ResonanceTable(
        lattice=lattice,
        M=float(lattice.max_modulus()),
        q1_m=np.array(q1_m, dtype=np.int64),
        q1_k=np.array(q1_k, dtype=np.int64),
        q1_l=np.array(q1_l, dtype=np.int64),
        q1_ss=np.array(q1_ss, dtype=np.int8),
        q1_weight=np.array(q1_w),
        q1_kvec=np.array(q1_kv) if q1_kv else np.zeros((0, lattice.d)),
        q2_m={g: np.array(q2[0], dtype=np.int64) for g in (1, -1)},
        q2_k={g: np.array(q2[1], dtype=np.int64) for g in (1, -1)},
        q2_l={g: np.array(q2[2], dtype=np.int64) for g in (1, -1)},
        q2_smod={g: np.array(q2[3]) for g in (1, -1)},
    )
    _store_cached(table, "limit", cache_dir)
    return table


def enumerate_resonance_sets(
    lattice: LatticeSpec, M: float, cache_dir: str | None = None
) -> ResonanceTable:
    """Classify every triple with |k|, |l| <= M (paper-style modulus balls).

    Returns resonant entries (restricted to output modes representable on the
    dealiased box) plus the complete non-resonant complements with divisors,
    brackets, and oscillation rates for corrector assembly and small-divisor
    reports.
    """
    cached = _load_cached(lattice, f"sets_M{M:g}", cache_dir)
    if cached is not None:
        return cached
    d = lattice.d
    for b, n in zip(lattice.periods, lattice.resolution):
        if math.floor(M * float(b) + 1e-9) > n // 2 - 1:
            raise ValueError(
                f"cutoff M = {M} exceeds the index range of the {n}-point axis"
            )
    ball = _ball_modes(lattice, M)

    q1_res = {"m": [], "k": [], "l": [], "ss": [], "w": [], "kv": []}
    nq1 = {k: [] for k in ("m", "k", "l", "alpha", "gamma", "div", "bracket", "mn", "kn", "ln")}
    nq2 = {
        k: []
        for k in ("m", "k", "l", "alpha", "beta", "gamma", "div", "base", "smod", "mn", "kn", "ln")
    }

    def record_q1(m, k, l):
        nm = _scaled_norm_of(lattice, m)
        nk = _scaled_norm_of(lattice, k)
        mmod, kmod = _modulus_of(lattice, m), _modulus_of(lattice, k)
        sgm, sgk = sg(m), sg(k)
        kv, mv, lv = (
            np.array(_wavevector_of(lattice, k)),
            np.array(_wavevector_of(lattice, m)),
            np.array(_wavevector_of(lattice, l)),
        )
        for gamma in (1, -1):
            for alpha in (1, -1):
                resonant = nk == nm and alpha * sgk == gamma * sgm
                if resonant:
                    if gamma == 1 and _in_box(lattice, m) and _in_box(lattice, l):
                        q1_res["m"].append(_flat_index(lattice, m))
                        q1_res["k"].append(_flat_index(lattice, k))
                        q1_res["l"].append(_flat_index(lattice, l))
                        q1_res["ss"].append(sgm * sgk)
                        q1_res["w"].append(float(np.dot(kv, mv)) / (kmod * mmod))
                        q1_res["kv"].append(kv)
                else:
                    div = alpha * sgk * kmod - gamma * sgm * mmod
                    bracket = 1.0 + alpha * gamma * sgk * sgm * float(
                        np.dot(lv + mv, kv)
                    ) / (kmod * mmod)
                    nq1["m"].append(_flat_index(lattice, m) if _in_box(lattice, m) else -1)
                    nq1["k"].append(_flat_index(lattice, k))
                    nq1["l"].append(_flat_index(lattice, l) if _in_box(lattice, l) else -1)
                    nq1["alpha"].append(alpha)
                    nq1["gamma"].append(gamma)
                    nq1["div"].append(div)
                    nq1["bracket"].append(bracket)
                    nq1["mn"].append(m)
                    nq1["kn"].append(k)
                    nq1["ln"].append(l)

    def record_q2(m, k, l):
        nm, nk, nl = (
            _scaled_norm_of(lattice, m),
            _scaled_norm_of(lattice, k),
            _scaled_norm_of(lattice, l),
        )
        mmod, kmod, lmod = (
            _modulus_of(lattice, m),
            _modulus_of(lattice, k),
            _modulus_of(lattice, l),
        )
        sgm, sgk, sgl = sg(m), sg(k), sg(l)
        kv, lv, mv = (
            np.array(_wavevector_of(lattice, k)),
            np.array(_wavevector_of(lattice, l)),
            np.array(_wavevector_of(lattice, m)),
        )
        l_dot_m = float(np.dot(lv, mv))
        k_dot_l = float(np.dot(kv, lv))
        for gamma in (1, -1):
            for alpha in (1, -1):
                for beta in (1, -1):
                    resonant = _sqrt_sum_is_zero(
                        [(alpha * sgk, nk), (beta * sgl, nl), (-gamma * sgm, nm)]
                    )
                    if not resonant:
                        div = (
                            alpha * sgk * kmod + beta * sgl * lmod - gamma * sgm * mmod
                        )
                        base = beta * sgl * sgm * l_dot_m / (
                            lmod * mmod
                        ) + alpha * beta * gamma / 2.0 * sgk * sgl * k_dot_l / (
                            kmod * lmod
                        )
                        nq2["m"].append(
                            _flat_index(lattice, m) if _in_box(lattice, m) else -1
                        )
                        nq2["k"].append(_flat_index(lattice, k))
                        nq2["l"].append(_flat_index(lattice, l))
                        nq2["alpha"].append(alpha)
                        nq2["beta"].append(beta)
                        nq2["gamma"].append(gamma)
                        nq2["div"].append(div)
                        nq2["base"].append(base)
                        nq2["smod"].append(sgm * mmod)
                        nq2["mn"].append(m)
                        nq2["kn"].append(k)
                        nq2["ln"].append(l)

    q2_res = {1: ([], [], [], []), -1: ([], [], [], [])}
    ball_with_zero = ball + [(0,) * d]
    for k in ball:
        for l in ball_with_zero:
            m = tuple(ki + li for ki, li in zip(k, l))
            if not any(m):
                continue
            record_q1(m, k, l)
            if any(l):
                record_q2(m, k, l)
                # equal-branch resonant entries for the limit form
                nm = _scaled_norm_of(lattice, m)
                nk = _scaled_norm_of(lattice, k)
                nl = _scaled_norm_of(lattice, l)
                sgm, sgk, sgl = sg(m), sg(k), sg(l)
                for gamma in (1, -1):
                    if _sqrt_sum_is_zero(
                        [(gamma * sgk, nk), (gamma * sgl, nl), (-gamma * sgm, nm)]
                    ) and _in_box(lattice, m) and _in_box(lattice, k) and _in_box(lattice, l):
                        ms, ks, ls, smods = q2_res[gamma]
                        ms.append(_flat_index(lattice, m))
                        ks.append(_flat_index(lattice, k))
                        ls.append(_flat_index(lattice, l))
                        smods.append(sgm * _modulus_of(lattice, m))

    table = ResonanceTable(
        lattice=lattice,
        M=float(M),
        q1_m=np.array(q1_res["m"], dtype=np.int64),
        q1_k=np.array(q1_res["k"], dtype=np.int64),
        q1_l=np.array(q1_res["l"], dtype=np.int64),
        q1_ss=np.array(q1_res["ss"], dtype=np.int8),
        q1_weight=np.array(q1_res["w"]),
        q1_kvec=np.array(q1_res["kv"]) if q1_res["kv"] else np.zeros((0, d)),
        q2_m={g: np.array(q2_res[g][0], dtype=np.int64) for g in (1, -1)},
        q2_k={g: np.array(q2_res[g][1], dtype=np.int64) for g in (1, -1)},
        q2_l={g: np.array(q2_res[g][2], dtype=np.int64) for g in (1, -1)},
        q2_smod={g: np.array(q2_res[g][3]) for g in (1, -1)},
        nonres_q1={
            "m": np.array(nq1["m"], dtype=np.int64),
            "k": np.array(nq1["k"], dtype=np.int64),
            "l": np.array(nq1["l"], dtype=np.int64),
            "alpha": np.array(nq1["alpha"], dtype=np.int8),
            "gamma": np.array(nq1["gamma"], dtype=np.int8),
            "div": np.array(nq1["div"]),
            "bracket": np.array(nq1["bracket"]),
            "mn": np.array(nq1["mn"], dtype=np.int64),
            "kn": np.array(nq1["kn"], dtype=np.int64),
            "ln": np.array(nq1["ln"], dtype=np.int64),
        },
        nonres_q2={
            "m": np.array(nq2["m"], dtype=np.int64),
            "k": np.array(nq2["k"], dtype=np.int64),
            "l": np.array(nq2["l"], dtype=np.int64),
            "alpha": np.array(nq2["alpha"], dtype=np.int8),
            "beta": np.array(nq2["beta"], dtype=np.int8),
            "gamma": np.array(nq2["gamma"], dtype=np.int8),
            "div": np.array(nq2["div"]),
            "base": np.array(nq2["base"]),
            "smod": np.array(nq2["smod"]),
            "mn": np.array(nq2["mn"], dtype=np.int64),
            "kn": np.array(nq2["kn"], dtype=np.int64),
            "ln": np.array(nq2["ln"], dtype=np.int64),
        },
    )
    _store_cached(table, f"sets_M{M:g}", cache_dir)
    return table


# ---------------------------------------------------------------------------
# Disk cache (documented npz schema)
# ---------------------------------------------------------------------------


def _cache_path(lattice: LatticeSpec, tag: str, cache_dir: str) -> str:
    desc = json.dumps(lattice.descriptor(), sort_keys=True)
    digest = hashlib.sha1(desc.encode()).hexdigest()[:16]
    return os.path.join(cache_dir, f"resonance_{digest}_{tag}.npz")


def _store_cached(table: ResonanceTable, tag: str, cache_dir: str | None):
    if cache_dir is None:
        return
    os.makedirs(cache_dir, exist_ok=True)
    payload = {
        "descriptor": np.frombuffer(
            json.dumps(table.lattice.descriptor(), sort_keys=True).encode(), dtype=np.uint8
        ),
        "M": np.array([table.M]),
        "q1_m": table.q1_m,
        "q1_k": table.q1_k,
        "q1_l": table.q1_l,
        "q1_ss": table.q1_ss,
        "q1_weight": table.q1_weight,
        "q1_kvec": table.q1_kvec,
    }
    for g, name in ((1, "p"), (-1, "m")):
        payload[f"q2_m_{name}"] = table.q2_m[g]
        payload[f"q2_k_{name}"] = table.q2_k[g]
        payload[f"q2_l_{name}"] = table.q2_l[g]
        payload[f"q2_smod_{name}"] = table.q2_smod[g]
    if table.nonres_q1 is not None:
        for key, arr in table.nonres_q1.items():
            payload[f"nq1_{key}"] = arr
        for key, arr in table.nonres_q2.items():
            payload[f"nq2_{key}"] = arr
    np.savez_compressed(_cache_path(table.lattice, tag, cache_dir), **payload)


def _load_cached(lattice: LatticeSpec, tag: str, cache_dir: str | None):
    if cache_dir is None:
        return None
    path = _cache_path(lattice, tag, cache_dir)
    if not os.path.exists(path):
        return None
    data = np.load(path, allow_pickle=False)
    desc = json.loads(bytes(data["descriptor"]).decode())
    if desc != json.loads(json.dumps(lattice.descriptor())):
        return None
    nonres_q1 = None
    nonres_q2 = None
    if "nq1_m" in data:
        nonres_q1 = {k[4:]: data[k] for k in data.files if k.startswith("nq1_")}
        nonres_q2 = {k[4:]: data[k] for k in data.files if k.startswith("nq2_")}
    return ResonanceTable(
        lattice=lattice,
        M=float(data["M"][0]),
        q1_m=data["q1_m"],
        q1_k=data["q1_k"],
        q1_l=data["q1_l"],
        q1_ss=data["q1_ss"],
        q1_weight=data["q1_weight"],
        q1_kvec=data["q1_kvec"],
        q2_m={1: data["q2_m_p"], -1: data["q2_m_m"]},
        q2_k={1: data["q2_k_p"], -1: data["q2_k_m"]},
        q2_l={1: data["q2_l_p"], -1: data["q2_l_m"]},
        q2_smod={1: data["q2_smod_p"], -1: data["q2_smod_m"]},
        nonres_q1=nonres_q1,
        nonres_q2=nonres_q2,
    )


# ---------------------------------------------------------------------------
# Limit forms
# ---------------------------------------------------------------------------


def limit_q1(u: SpectralField, B: AcousticCoeffs, table: ResonanceTable) -> AcousticCoeffs:
    """Averaged advection form: resonant sum over same-modulus pairs.

    ``u`` is divergence-free (its mean mode participates through the l = 0
    entries, which average trivially).
    """
    lattice = table.lattice
    out = AcousticCoeffs.zeros(lattice)
    if table.q1_m.size == 0:
        return out
    prefactor = 1j / math.sqrt(lattice.volume)
    uflat = [u.coeffs[c].reshape(-1) for c in range(lattice.d)]
    k_dot_u = sum(
        table.q1_kvec[:, c] * uflat[c][table.q1_l] for c in range(lattice.d)
    )
    plus_flat = B.plus.reshape(-1)
    minus_flat = B.minus.reshape(-1)
    for gamma, target in ((1, "plus"), (-1, "minus")):
        alpha_sign = gamma * table.q1_ss  # alpha = gamma*sg(m)*sg(k)
        bsel = np.where(alpha_sign == 1, plus_flat[table.q1_k], minus_flat[table.q1_k])
        contrib = prefactor * bsel * k_dot_u * table.q1_weight
        acc = np.zeros(int(np.prod(lattice.resolution)), dtype=np.complex128)
        np.add.at(acc, table.q1_m, contrib)
        if target == "plus":
            out.plus = acc.reshape(lattice.resolution)
        else:
            out.minus = acc.reshape(lattice.resolution)
    return out


def limit_q2(
    A: AcousticCoeffs, B: AcousticCoeffs, table: ResonanceTable, kappa: float = 0.0
) -> AcousticCoeffs:
    """Averaged symmetric form: equal-branch collinear resonances only."""
    lattice = table.lattice
    out = AcousticCoeffs.zeros(lattice)
    c_d = 1.0 / math.sqrt(2.0 * lattice.volume)
    front = -1j * c_d * (kappa + 3.0) / 4.0
    size = int(np.prod(lattice.resolution))
    for gamma in (1, -1):
        m_idx = table.q2_m[gamma]
        if m_idx.size == 0:
            continue
        a_flat = (A.plus if gamma == 1 else A.minus).reshape(-1)
        b_flat = (B.plus if gamma == 1 else B.minus).reshape(-1)
        sym = 0.5 * (
            a_flat[table.q2_k[gamma]] * b_flat[table.q2_l[gamma]]
            + b_flat[table.q2_k[gamma]] * a_flat[table.q2_l[gamma]]
        )
        contrib = front * gamma * table.q2_smod[gamma] * sym
        acc = np.zeros(size, dtype=np.complex128)
        np.add.at(acc, m_idx, contrib)
        if gamma == 1:
            out.plus = acc.reshape(lattice.resolution)
        else:
            out.minus = acc.reshape(lattice.resolution)
    return out


# ---------------------------------------------------------------------------
# Small divisors
# ---------------------------------------------------------------------------


@dataclass
class SmallDivisorReport:
    M: float
    c1: float
    c2: float
    attaining_q1: dict
    attaining_q2: dict
    c_combined: float

    def to_json(self) -> dict:
        return {
            "M": self.M,
            "C1": self.c1,
            "C2": self.c2,
            "C_combined": self.c_combined,
            "attaining_q1": self.attaining_q1,
            "attaining_q2": self.attaining_q2,
        }


def small_divisors(
    lattice: LatticeSpec,
    M: float,
    theta: float = 0.25,
    forcing_regularity: float = 1.0,
    cache_dir: str | None = None,
) -> SmallDivisorReport:
    """Reciprocal worst non-resonant frequency mismatches up to cutoff M.

    ``c_combined`` aggregates the truncation powers used by the corrector
    error budget: max{M, M^((d/2+S-2*theta+1)/2), M^(d/2+S-1),
    (C1+C2)*M^(2+2*theta)} with generic constant 1.
    """
    table = enumerate_resonance_sets(lattice, M, cache_dir=cache_dir)
    nq1, nq2 = table.nonres_q1, table.nonres_q2

    def attaining(entries, names):
        i = int(np.argmin(np.abs(entries["div"])))
        info = {"divisor": float(abs(entries["div"][i]))}
        for name in names:
            info[name] = (
                int(entries[name][i])
                if entries[name].ndim == 1
                else [int(v) for v in entries[name][i]]
            )
        return info

    c1 = float(1.0 / np.min(np.abs(nq1["div"]))) if nq1["div"].size else 0.0
    c2 = float(1.0 / np.min(np.abs(nq2["div"]))) if nq2["div"].size else 0.0
    att1 = attaining(nq1, ("alpha", "gamma", "kn", "ln", "mn")) if nq1["div"].size else {}
    att2 = (
        attaining(nq2, ("alpha", "beta", "gamma", "kn", "ln", "mn"))
        if nq2["div"].size
        else {}
    )
    d = lattice.d
    s_forcing = forcing_regularity
    c_comb = max(
        M,
        M ** ((d / 2.0 + s_forcing - 2 * theta + 1) / 2.0),
        M ** (d / 2.0 + s_forcing - 1.0),
        (c1 + c2) * M ** (2.0 + 2.0 * theta),
    )
    return SmallDivisorReport(
        M=float(M), c1=c1, c2=c2, attaining_q1=att1, attaining_q2=att2, c_combined=c_comb
    )


# ---------------------------------------------------------------------------
# Correctors and remainder fields
# ---------------------------------------------------------------------------


@dataclass
class CorrectorSet:
    r1: AcousticCoeffs
    r2: AcousticCoeffs
    r3: AcousticCoeffs
    s: AcousticCoeffs

    def total(self) -> AcousticCoeffs:
        return self.r1 + self.r2 + self.r3 + self.s


def _accumulate(lattice, m_idx, branch_sign, values):
    """Scatter complex values into (plus, minus) arrays by branch sign."""
    size = int(np.prod(lattice.resolution))
    plus = np.zeros(size, dtype=np.complex128)
    minus = np.zeros(size, dtype=np.complex128)
    pos = branch_sign == 1
    np.add.at(plus, m_idx[pos], values[pos])
    np.add.at(minus, m_idx[~pos], values[~pos])
    return AcousticCoeffs(
        lattice, plus.reshape(lattice.resolution), minus.reshape(lattice.resolution)
    )


def _branch_gather(V: AcousticCoeffs, idx: np.ndarray, alpha: np.ndarray) -> np.ndarray:
    plus = V.plus.reshape(-1)[idx]
    minus = V.minus.reshape(-1)[idx]
    return np.where(alpha == 1, plus, minus)


def _band_weights(lattice: LatticeSpec, M: float) -> np.ndarray:
    return (lattice.k_modulus() <= M + 1e-12).astype(np.float64)


def _s_corrector(V: AcousticCoeffs, M: float, t: float, eps: float, nu: float, tilde: bool):
    """Viscous corrector (tilde=True) or its driving remainder S^eps (low band)."""
    lattice = V.lattice
    from .operators import _signed_modulus

    rate = _signed_modulus(lattice)
    low = _band_weights(lattice, M)
    osc_plus = np.exp(2j * (t / eps) * rate)  # branch alpha = +1 oscillation
    if tilde:
        amp_p = -0.25j * nu * rate * V.plus * osc_plus * low
        amp_m = -0.25j * nu * (-rate) * V.minus * np.conj(osc_plus) * low
    else:
        ksq = lattice.k_squared()
        amp_p = 0.5 * nu * ksq * V.plus * osc_plus * low
        amp_m = 0.5 * nu * ksq * V.minus * np.conj(osc_plus) * low
    # source branch alpha lands on branch -alpha
    return AcousticCoeffs(lattice, amp_m, amp_p)


def _r1_corrector(f_minus_lam: AcousticCoeffs, M: float, t: float, eps: float, tilde: bool):
    lattice = f_minus_lam.lattice
    from .operators import _signed_modulus

    rate = _signed_modulus(lattice)
    kmod = lattice.k_modulus().copy()
    kmod[(0,) * lattice.d] = 1.0
    low = _band_weights(lattice, M)
    phase_p = np.exp(-1j * (t / eps) * rate)  # alpha = +1
    if tilde:
        sgk = lattice.sign_grid()
        plus = 1j * sgk / kmod * f_minus_lam.plus * phase_p * low
        minus = -1j * sgk / kmod * f_minus_lam.minus * np.conj(phase_p) * low
    else:
        plus = f_minus_lam.plus * phase_p * low
        minus = f_minus_lam.minus * np.conj(phase_p) * low
    return AcousticCoeffs(lattice, plus, minus)


def _r2_sum(entries, V, v, t, eps, vol, tilde, dV=None, dv=None):
    keep = entries["m"] >= 0
    m_idx = entries["m"][keep]
    k_idx = entries["k"][keep]
    l_idx = entries["l"][keep]
    alpha = entries["alpha"][keep]
    gamma = entries["gamma"][keep]
    div = entries["div"][keep]
    bracket = entries["bracket"][keep]
    lattice = V.lattice
    d = lattice.d
    kvecs = [g.reshape(-1) for g in lattice.wavevectors()]

    def k_dot(vfield, li, ki):
        vals = 0.0
        for c in range(d):
            vflat = vfield.coeffs[c].reshape(-1)
            good = li >= 0
            arr = np.zeros(li.shape, dtype=np.complex128)
            arr[good] = vflat[li[good]]
            vals = vals + kvecs[c][ki] * arr
        return vals

    vk = _branch_gather(V, k_idx, alpha)
    kv = k_dot(v, l_idx, k_idx)
    if tilde:
        coeff = vk * kv / div
        if dV is not None:
            coeff = (_branch_gather(dV, k_idx, alpha) * kv + vk * k_dot(dv, l_idx, k_idx)) / div
        phase = np.exp(1j * (t / eps) * div)
        vals = -1.0 / (2.0 * math.sqrt(vol)) * coeff * bracket * phase
    else:
        phase = np.exp(1j * (t / eps) * div)
        vals = -1j / (2.0 * math.sqrt(vol)) * vk * kv * bracket * phase
    return _accumulate(V.lattice, m_idx, gamma, vals)


def _r3_sum(entries, V, t, eps, kappa, c_d, tilde, dV=None):
    keep = entries["m"] >= 0
    m_idx = entries["m"][keep]
    k_idx = entries["k"][keep]
    l_idx = entries["l"][keep]
    alpha = entries["alpha"][keep]
    beta = entries["beta"][keep]
    gamma = entries["gamma"][keep]
    div = entries["div"][keep]
    base = entries["base"][keep]
    smod = entries["smod"][keep]
    bracket = base + gamma * kappa / 2.0
    vk = _branch_gather(V, k_idx, alpha)
    vl = _branch_gather(V, l_idx, beta)
    prod = vk * vl
    if dV is not None:
        prod = _branch_gather(dV, k_idx, alpha) * vl + vk * _branch_gather(dV, l_idx, beta)
    phase = np.exp(1j * (t / eps) * div)
    if tilde:
        vals = c_d / 2.0 * prod / div * smod * bracket * phase
    else:
        vals = 1j * c_d / 2.0 * prod * smod * bracket * phase
    return _accumulate(V.lattice, m_idx, gamma, vals)


def _lambda_coeffs(v: SpectralField) -> AcousticCoeffs:
    """Acoustic coefficients of (0, Q(v.grad v))."""
    from .operators import acoustic_transform, advect, helmholtz_project

    nonlin = helmholtz_project(advect(v, v), "Q")
    zero = SpectralField.zeros(v.lattice)
    return acoustic_transform(zero, nonlin, check=False)


def assemble_correctors(
    V: AcousticCoeffs,
    v: SpectralField,
    f_ac: AcousticCoeffs | None,
    M: float,
    t: float,
    eps: float,
    *,
    kappa: float = 0.0,
    nu: float = 1.0,
    table: ResonanceTable | None = None,
    lam_ac: AcousticCoeffs | None = None,
    time_derivatives: tuple | None = None,
    cache_dir: str | None = None,
):
    """Two-time-scale correctors (R1~, R2~, R3~, S~) truncated at cutoff M.

    ``f_ac`` holds the acoustic decomposition of (0, Qf); the advected-flow
    coefficients are derived from ``v`` unless ``lam_ac`` overrides them.
    When ``time_derivatives = (dV, dv, df_ac, dlam_ac)`` is given, the set of
    time-derivative correctors is returned as well, so that

        eps * d/dt corrector_total = low-band remainder + eps * derivative_total.
    """
    lattice = V.lattice
    if table is None or table.nonres_q1 is None:
        table = enumerate_resonance_sets(lattice, M, cache_dir=cache_dir)
    vol = lattice.volume
    c_d = 1.0 / math.sqrt(2.0 * vol)
    if lam_ac is None:
        lam_ac = _lambda_coeffs(v)
    if f_ac is None:
        f_ac = AcousticCoeffs.zeros(lattice)
    fml = f_ac - lam_ac

    base = CorrectorSet(
        r1=_r1_corrector(fml, M, t, eps, tilde=True),
        r2=_r2_sum(table.nonres_q1, V, v, t, eps, vol, tilde=True),
        r3=_r3_sum(table.nonres_q2, V, t, eps, kappa, c_d, tilde=True),
        s=_s_corrector(V, M, t, eps, nu, tilde=True),
    )
    if time_derivatives is None:
        return base, None
    dV, dv, df_ac, dlam_ac = time_derivatives
    if dlam_ac is None:
        # product rule on the derived advected-flow coefficients
        from .operators import acoustic_transform, advect, helmholtz_project

        nonlin = helmholtz_project(advect(dv, v) + advect(v, dv), "Q")
        dlam_ac = acoustic_transform(SpectralField.zeros(lattice), nonlin, check=False)
    dfml = (df_ac if df_ac is not None else AcousticCoeffs.zeros(lattice)) - dlam_ac
    deriv = CorrectorSet(
        r1=_r1_corrector(dfml, M, t, eps, tilde=True),
        r2=_r2_sum(table.nonres_q1, V, v, t, eps, vol, tilde=True, dV=dV, dv=dv),
        r3=_r3_sum(table.nonres_q2, V, t, eps, kappa, c_d, tilde=True, dV=dV),
        s=_s_corrector(dV, M, t, eps, nu, tilde=True),
    )
    return base, deriv


def remainder_fields(
    V: AcousticCoeffs,
    v: SpectralField,
    f_ac: AcousticCoeffs | None,
    M: float,
    t: float,
    eps: float,
    *,
    kappa: float = 0.0,
    nu: float = 1.0,
    table: ResonanceTable | None = None,
    lam_ac: AcousticCoeffs | None = None,
    cache_dir: str | None = None,
) -> AcousticCoeffs:
    """Low-band oscillatory remainder R_M = (R1 + R2 + R3 + S)_M at time t."""
    lattice = V.lattice
    if table is None or table.nonres_q1 is None:
        table = enumerate_resonance_sets(lattice, M, cache_dir=cache_dir)
    vol = lattice.volume
    c_d = 1.0 / math.sqrt(2.0 * vol)
    if lam_ac is None:
        lam_ac = _lambda_coeffs(v)
    if f_ac is None:
        f_ac = AcousticCoeffs.zeros(lattice)
    fml = f_ac - lam_ac
    # restrict the bilinear sums to |k|, |l| <= M exactly as the corrector does
    kmod_flat = lattice.k_modulus().reshape(-1)

    def band_filter(entries):
        keep = (kmod_flat[entries["k"]] <= M + 1e-12)
        lk = entries["l"] >= 0
        lmod = np.full(entries["l"].shape, 0.0)
        lmod[lk] = kmod_flat[entries["l"][lk]]
        keep &= lmod <= M + 1e-12
        return {key: arr[keep] for key, arr in entries.items()}

    r1 = _r1_corrector(fml, M, t, eps, tilde=False)
    r2 = _r2_sum(band_filter(table.nonres_q1), V, v, t, eps, vol, tilde=False)
    r3 = _r3_sum(band_filter(table.nonres_q2), V, t, eps, kappa, c_d, tilde=False)
    s = _s_corrector(V, M, t, eps, nu, tilde=False)
    return r1 + r2 + r3 + s


def low_freq_split(form, M: float, *args, **kwargs):
    """Split a mode-sum bilinear form into (low, high) frequency parts.

    ``form`` must accept a ``band`` keyword ("low"/"high" with cutoff M); the
    two parts reconstruct the unrestricted sum exactly (disjoint partition of
    the interaction indices).
    """
    low = form(*args, band=("low", M), **kwargs)
    high = form(*args, band=("high", M), **kwargs)
    return low, high
