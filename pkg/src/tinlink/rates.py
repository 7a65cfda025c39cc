"""Mutual information, dispersion, and second-order achievable rates.

Conventions used throughout: logarithms are base 2 (rates in bits per complex
symbol), the noise is circularly symmetric complex Gaussian with unit total
variance, and the channel law is y = h x + z.  For discrete inputs the
per-symbol information density is evaluated by exact enumeration over the
symbol tuples of the desired and interfering constellations, with Monte Carlo
only over the noise.  All inner sums of Gaussian likelihoods go through
log-sum-exp, so estimates stay finite for arbitrarily large amplitudes.

Noise samples come from counter-based Philox substreams keyed by
(seed, batch index), so an estimate depends only on (seed, sample count) and
not on how batches are scheduled across workers.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
from scipy.optimize import brentq
from scipy.special import erfc

LN2 = math.log(2.0)
LOG2E = 1.0 / LN2

MAX_TUPLES = 4096
MIN_NOISE_SAMPLES = 1000

_BATCH = 4096
_ELEM_BUDGET = 1 << 23


class RateEngineError(ValueError):
    """Invalid input to a rate computation."""


# ---------------------------------------------------------------------------
# Q function and inverse
# ---------------------------------------------------------------------------

def qfunc(x):
    """Gaussian tail probability Q(x); accepts scalars or arrays."""
    if np.ndim(x) == 0:
        return 0.5 * math.erfc(float(x) / math.sqrt(2.0))
    return 0.5 * erfc(np.asarray(x, dtype=float) / math.sqrt(2.0))


def qfunc_inv(p: float) -> float:
    """Inverse of the Q function on (0, 0.5], by bracketed root finding."""
    p = float(p)
    if not 0.0 < p <= 0.5:
        raise RateEngineError(f"qfunc_inv requires p in (0, 0.5], got {p}")
    if p == 0.5:
        return 0.0
    x = brentq(lambda t: qfunc(t) - p, 0.0, 45.0, xtol=1e-14, rtol=8.9e-16)
    return float(x)


# ---------------------------------------------------------------------------
# Noise substreams
# ---------------------------------------------------------------------------

def _noise_batch(seed: int, batch_index: int, size: int) -> tuple[np.ndarray, np.ndarray]:
    """Real/imag parts of `size` CN(0,1) samples; stream fixed by (seed, batch)."""
    bitgen = np.random.Philox(key=seed, counter=batch_index << 128)
    raw = np.random.Generator(bitgen).standard_normal(2 * size)
    s = math.sqrt(0.5)
    return s * raw[0::2], s * raw[1::2]


def _batch_plan(n_samples: int, batch: int = _BATCH) -> list[tuple[int, int]]:
    plan = []
    done = 0
    idx = 0
    while done < n_samples:
        take = min(batch, n_samples - done)
        plan.append((idx, take))
        done += take
        idx += 1
    return plan


# ---------------------------------------------------------------------------
# Exact-enumeration information density statistics
# ---------------------------------------------------------------------------

def _combo_sums(sets: Sequence[np.ndarray]) -> np.ndarray:
    """All sums over the cartesian product of the given symbol sets."""
    acc = np.zeros(1, dtype=complex)
    for arr in sets:
        arr = np.asarray(arr, dtype=complex)
        acc = (acc[:, None] + arr[None, :]).ravel()
    return acc


def _lse_over_alts(xt: np.ndarray, xa: np.ndarray, zr: np.ndarray,
                   zi: np.ndarray) -> np.ndarray:
    """log sum_a exp(-|z + xt[r] - xa[a]|^2) for each true row r and sample.

    xt, xa are complex receive-scaled symbols; zr, zi the noise coordinates.
    Returns an array of shape (len(xt), len(zr)).
    """
    n_alt = xa.size
    n_z = zr.size
    out = np.empty((xt.size, n_z))
    rows_per = max(1, _ELEM_BUDGET // max(1, n_alt * n_z))
    for lo in range(0, xt.size, rows_per):
        hi = min(xt.size, lo + rows_per)
        dr = xt.real[lo:hi, None] - xa.real[None, :]
        di = xt.imag[lo:hi, None] - xa.imag[None, :]
        a = dr[:, :, None] + zr[None, None, :]
        np.square(a, out=a)
        b = di[:, :, None] + zi[None, None, :]
        np.square(b, out=b)
        a += b
        np.negative(a, out=a)
        mx = a.max(axis=1)
        a -= mx[:, None, :]
        np.exp(a, out=a)
        s = a.sum(axis=1)
        np.log(s, out=s)
        out[lo:hi] = mx + s
    return out


@dataclass(frozen=True)
class SubBlockRateStats:
    """Per-(user, sub-block) mutual information and dispersion estimates.

    mi and dispersion are in bits and bits**2 per complex symbol; the standard
    errors reflect the Monte Carlo noise averaging only (symbol tuples are
    enumerated exactly).  third_abs_moment is the centred third absolute
    moment of the information density, filled only on request.
    """

    mi: float
    dispersion: float
    sample_count: int
    std_err_mi: float
    std_err_dispersion: float
    third_abs_moment: float | None = None


ZERO_STATS = SubBlockRateStats(0.0, 0.0, 0, 0.0, 0.0, 0.0)


class _DensityContext:
    """Receive-side enumeration structure for one (user, sub-block) link."""

    def __init__(self, desired, interferers, h):
        desired = np.asarray(desired, dtype=complex)
        if desired.size < 1:
            raise RateEngineError("desired constellation is empty")
        combos = _combo_sums(list(interferers))
        n_tuples = desired.size * combos.size
        if n_tuples > MAX_TUPLES:
            raise RateEngineError(
                f"tuple count {n_tuples} exceeds cap {MAX_TUPLES}")
        self.m_bits = math.log2(desired.size)
        self.h = complex(h)
        self.x_den = self.h * combos
        self.x_num = (self.h * desired[:, None] + self.x_den[None, :]).ravel()
        self.n_combos = combos.size

    def densities(self, zr: np.ndarray, zi: np.ndarray) -> np.ndarray:
        """Information density per (true tuple, noise sample), in bits."""
        lse_num = _lse_over_alts(self.x_num, self.x_num, zr, zi)
        lse_den = _lse_over_alts(self.x_den, self.x_den, zr, zi)
        rows = np.arange(self.x_num.size)
        lse_num -= lse_den[rows % self.n_combos]
        lse_num /= -LN2
        lse_num += self.m_bits
        return lse_num


def estimate_mi_dispersion(desired, interferers, h, n_noise_samples: int,
                           seed: int, *, third_moment: bool = False,
                           workers: int = 1) -> SubBlockRateStats:
    """Estimate (I, V) for a discrete input under additive interference.

    desired: complex transmit amplitudes of the wanted constellation (uniform
    input); interferers: list of interfering constellations, each uniform and
    independent; h: complex channel applied to everything.  Interference-free
    links pass an empty interferer list.  Symbol tuples are enumerated exactly
    (product cardinality capped at 4096); the expectation over the unit
    complex Gaussian noise uses n_noise_samples common random numbers shared
    by all tuples.  Noise batches may be spread over `workers` threads; the
    result is identical for any worker count.
    """
    n_noise_samples = int(n_noise_samples)
    if n_noise_samples < MIN_NOISE_SAMPLES:
        raise RateEngineError(
            f"n_noise_samples must be >= {MIN_NOISE_SAMPLES}")
    ctx = _DensityContext(desired, interferers, h)
    batches = _batch_plan(n_noise_samples)

    def batch_moments(batch):
        idx, take = batch
        zr, zi = _noise_batch(seed, idx, take)
        dens = ctx.densities(zr, zi)
        return dens.mean(axis=0), np.mean(dens * dens, axis=0)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            moments = list(pool.map(batch_moments, batches))
    else:
        moments = [batch_moments(b) for b in batches]
    per_z_mean = np.concatenate([m for m, _ in moments])
    per_z_sq = np.concatenate([q for _, q in moments])
    n = per_z_mean.size
    mi = float(per_z_mean.mean())
    second = float(per_z_sq.mean())
    dispersion = max(second - mi * mi, 0.0)
    se_mi = float(per_z_mean.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    g = per_z_sq - 2.0 * mi * per_z_mean
    se_v = float(g.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    t3 = None
    if third_moment:
        acc = []
        for idx, take in batches:
            zr, zi = _noise_batch(seed, idx, take)
            dens = ctx.densities(zr, zi)
            acc.append(np.mean(np.abs(dens - mi) ** 3, axis=0))
        t3 = float(np.concatenate(acc).mean())
    return SubBlockRateStats(mi, dispersion, n, se_mi, se_v, t3)


def quadrature_mi(points, h, n_nodes: int = 64) -> float:
    """Interference-free mutual information by 2-D Gauss-Hermite quadrature.

    Deterministic oracle for validating the Monte Carlo estimator; supports
    constellations of up to 256 points and targets absolute accuracy around
    1e-6 bits.
    """
    points = np.asarray(points, dtype=complex)
    if points.size > 256:
        raise RateEngineError("quadrature oracle limited to 256 points")
    if points.size < 1:
        raise RateEngineError("empty constellation")
    nodes, weights = np.polynomial.hermite.hermgauss(n_nodes)
    x = complex(h) * points
    m_bits = math.log2(points.size)
    # E over Z ~ CN(0,1): (1/pi) sum_ij w_i w_j f(t_i + 1j t_j)
    zr_grid, zi_grid = np.meshgrid(nodes, nodes, indexing="ij")
    wgt = (weights[:, None] * weights[None, :]).ravel() / math.pi
    zr_flat = zr_grid.ravel()
    zi_flat = zi_grid.ravel()
    total = 0.0
    chunk = 512
    for lo in range(0, zr_flat.size, chunk):
        zr = zr_flat[lo:lo + chunk]
        zi = zi_flat[lo:lo + chunk]
        lse = _lse_over_alts(x, x, zr, zi)
        # log2(num/den) with den = exp(-|z|^2)
        val = (lse + (zr * zr + zi * zi)[None, :]) / LN2
        total += float(val.mean(axis=0) @ wgt[lo:lo + chunk])
    return m_bits - total


# ---------------------------------------------------------------------------
# Second-order rate combiners
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SecondOrderRate:
    """Normal-approximation achievable rate, bits per complex symbol."""

    rate: float
    first_order: float
    penalty: float
    nonpositive: bool


def combine_second_order(lengths, mis, dispersions, eps: float,
                         n_total: int) -> SecondOrderRate:
    """General sub-block combiner: (sum L_j I_j - sqrt(sum L_j V_j) Qinv) / N."""
    lengths = np.asarray(lengths, dtype=float)
    mis = np.asarray(mis, dtype=float)
    dispersions = np.asarray(dispersions, dtype=float)
    if np.any(dispersions < 0):
        raise RateEngineError("negative dispersion")
    first = float(lengths @ mis)
    radicand = float(lengths @ dispersions)
    penalty = math.sqrt(radicand) * qfunc_inv(eps)
    rate = (first - penalty) / n_total
    return SecondOrderRate(rate, first / n_total, penalty / n_total, rate <= 0.0)


def second_order_rate(lengths, stats: Sequence[SubBlockRateStats], eps: float,
                      n_total: int) -> SecondOrderRate:
    """Second-order rate for one user from its per-sub-block statistics."""
    return combine_second_order(
        lengths, [s.mi for s in stats], [s.dispersion for s in stats],
        eps, n_total)


def rate_single_block(mi: float, dispersion: float, n: int, eps: float) -> float:
    """Single-block closed form I - sqrt(V/n) Qinv(eps)."""
    return mi - math.sqrt(dispersion / n) * qfunc_inv(eps)


def rate_two_segment(len1: int, stats1: SubBlockRateStats, len2: int,
                     stats2: SubBlockRateStats, eps: float, n_total: int) -> float:
    """Two-segment closed form (partially interfered frame)."""
    first = len1 * stats1.mi + len2 * stats2.mi
    rad = len1 * stats1.dispersion + len2 * stats2.dispersion
    return (first - math.sqrt(rad) * qfunc_inv(eps)) / n_total


def berry_esseen_diagnostic(lengths, stats: Sequence[SubBlockRateStats],
                            n_total: int, c0: float = 0.5600) -> float:
    """Berry-Esseen constant of the length-weighted density sum (diagnostic).

    Requires stats computed with third_moment=True.
    """
    w = np.asarray(lengths, dtype=float) / float(n_total)
    t3 = []
    for s in stats:
        if s.third_abs_moment is None:
            raise RateEngineError("third moments not available")
        t3.append(s.third_abs_moment)
    denom = float(w @ [s.dispersion for s in stats]) ** 1.5
    if denom == 0.0:
        return math.inf
    return c0 * float(w @ t3) / denom


# ---------------------------------------------------------------------------
# Gaussian and shell benchmarks (complex channel)
# ---------------------------------------------------------------------------

def gaussian_stats(sinr: float) -> tuple[float, float]:
    """Capacity and dispersion of i.i.d. Gaussian codes at the given SINR."""
    if sinr < 0:
        raise RateEngineError("negative SINR")
    mi = math.log2(1.0 + sinr)
    v = 2.0 * LOG2E ** 2 * sinr / (sinr + 1.0)
    return mi, v


def shell_stats(p_eff: float) -> tuple[float, float]:
    """Capacity and dispersion of shell codes at the given receive SNR."""
    if p_eff < 0:
        raise RateEngineError("negative power")
    mi = math.log2(1.0 + p_eff)
    v = LOG2E ** 2 * p_eff * (p_eff + 2.0) / (p_eff + 1.0) ** 2
    return mi, v


def gaussian_benchmark(sinrs, lengths, eps: float, n_total: int) -> SecondOrderRate:
    """Second-order rate of Gaussian codes over heterogeneous sub-blocks."""
    mis, vs = zip(*(gaussian_stats(g) for g in sinrs))
    return combine_second_order(lengths, mis, vs, eps, n_total)


def shell_benchmark(p_eff: float, n: int, eps: float,
                    interference_power: float = 0.0) -> SecondOrderRate:
    """Second-order rate of shell codes on an interference-free link."""
    if interference_power != 0.0:
        raise RateEngineError(
            "shell benchmark is defined for interference-free links only")
    mi, v = shell_stats(p_eff)
    return combine_second_order([n], [mi], [v], eps, n)


def sinr(signal_power: float, interference_power: float) -> float:
    """Signal to interference-plus-unit-noise ratio."""
    return signal_power / (interference_power + 1.0)


def bc_gaussian_rates(spec, layout, powers: Mapping[tuple[int, int], float],
                      mode: str = "sic") -> list[SecondOrderRate]:
    """Gaussian-code benchmark rates for every user of a broadcast spec.

    powers maps (user, sub_block) to the per-symbol power that user spends
    there.  mode "tin" counts all co-scheduled powers as interference; mode
    "sic" assumes each user perfectly cancels every weaker-channel user and
    is only interfered by stronger-channel users.
    """
    if mode not in ("sic", "tin"):
        raise RateEngineError(f"unknown benchmark mode {mode!r}")
    out = []
    for k, user in enumerate(spec.users):
        lengths, mis, vs = [], [], []
        gain = abs(user.h) ** 2
        for sb in layout.sub_blocks[:k + 1]:
            if sb.length == 0:
                continue
            p_own = powers.get((k, sb.index), 0.0)
            interf = 0.0
            for other in sb.participants:
                if other == k:
                    continue
                if mode == "sic" and abs(spec.users[other].h) <= abs(user.h):
                    continue
                interf += powers.get((other, sb.index), 0.0)
            g = sinr(p_own * gain, interf * gain)
            mi, v = gaussian_stats(g)
            lengths.append(sb.length)
            mis.append(mi)
            vs.append(v)
        out.append(combine_second_order(lengths, mis, vs, user.eps, user.N))
    return out


def bc_shell_rates(spec, layout, powers: Mapping[tuple[int, int], float],
                   mode: str = "sic") -> list[SecondOrderRate | None]:
    """Shell-code benchmark rates; None for users that see any interference."""
    if mode not in ("sic", "tin"):
        raise RateEngineError(f"unknown benchmark mode {mode!r}")
    out = []
    for k, user in enumerate(spec.users):
        lengths, mis, vs = [], [], []
        gain = abs(user.h) ** 2
        clean = True
        for sb in layout.sub_blocks[:k + 1]:
            if sb.length == 0:
                continue
            p_own = powers.get((k, sb.index), 0.0)
            interf = 0.0
            for other in sb.participants:
                if other == k:
                    continue
                if mode == "sic" and abs(spec.users[other].h) <= abs(user.h):
                    continue
                interf += powers.get((other, sb.index), 0.0)
            if p_own > 0.0 and interf > 0.0:
                clean = False
                break
            mi, v = shell_stats(p_own * gain) if interf == 0.0 else (0.0, 0.0)
            lengths.append(sb.length)
            mis.append(mi)
            vs.append(v)
        if not clean:
            out.append(None)
            continue
        out.append(combine_second_order(lengths, mis, vs, user.eps, user.N))
    return out


# ---------------------------------------------------------------------------
# Plan-level rate evaluation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class UserRate:
    """Second-order rate of one user together with its ingredients."""

    user: int
    rate: float
    nonpositive: bool
    eps: float
    n_symbols: int
    lengths: tuple[int, ...]
    stats: tuple[SubBlockRateStats, ...]
    be_diagnostic: float | None = None


@dataclass(frozen=True)
class RateResult:
    """Per-user second-order rates for one transmission plan."""

    users: tuple[UserRate, ...]

    @property
    def rates(self) -> tuple[float, ...]:
        return tuple(u.rate for u in self.users)


def compute_plan_rates(plan, *, n_noise_samples: int, seed: int,
                       third_moment: bool = False,
                       stats_cache: dict | None = None,
                       workers: int = 1) -> RateResult:
    """Evaluate every user's second-order rate for a transmission plan.

    Per-(user, sub-block) statistics are cached by the sub-block's rank order
    vector and the user's rank inside it, which is what they depend on for a
    fixed spec; pass a shared dict to reuse them across plans, e.g. during a
    design search.
    """
    spec = plan.spec
    layout = plan.layout
    users = []
    for k, user in enumerate(spec.users):
        lengths = []
        stats = []
        for sb in layout.sub_blocks[:k + 1]:
            lengths.append(sb.length)
            order = plan.orders[k][sb.index]
            if sb.length == 0 or order == 0:
                stats.append(ZERO_STATS)
                continue
            rank_orders = tuple(plan.orders[u][sb.index] for u in sb.ranks)
            key = (sb.index, rank_orders, sb.ranks.index(k),
                   n_noise_samples, third_moment)
            cached = stats_cache.get(key) if stats_cache is not None else None
            if cached is None:
                desired, interferers = plan.sub_block_signals(k, sb.index)
                cached = estimate_mi_dispersion(
                    desired, interferers, user.h, n_noise_samples, seed,
                    third_moment=third_moment, workers=workers)
                if stats_cache is not None:
                    stats_cache[key] = cached
            stats.append(cached)
        result = second_order_rate(lengths, stats, user.eps, user.N)
        diag = None
        if third_moment:
            active = [(L, s) for L, s in zip(lengths, stats) if L > 0]
            diag = berry_esseen_diagnostic(
                [L for L, _ in active], [s for _, s in active], user.N)
        users.append(UserRate(
            user=k, rate=result.rate, nonpositive=result.nonpositive,
            eps=user.eps, n_symbols=user.N, lengths=tuple(lengths),
            stats=tuple(stats), be_diagnostic=diag))
    return RateResult(users=tuple(users))
