"""Monte Carlo generation of detection time-tag streams.

Pipeline (order fixed): photon arrivals -> routing to channels with
probability ``q_i = r_i eta_i`` -> Gaussian timing jitter -> per-channel
dark counts merged -> dead time -> floor quantisation to ticks.

Thermal arrivals are a Cox process driven by ``I(t) = |E(t)|^2`` with
``E`` a stationary circular complex Gaussian field of spectrum ``S``.
Two exact samplers are provided:

``dense``
    The field is synthesised on a grid (frequency-domain colouring in
    segments joined by power-complementary crossfades), interpolated with
    a windowed-sinc kernel at candidate times and thinned against local
    intensity bounds.
``sparse``
    For low photon density the field is only drawn where candidate points
    fall close together (jointly Gaussian by Cholesky factorisation);
    isolated candidates are accepted with probability ``1 / I_max``. This
    costs O(1) per photon, independent of the field bandwidth.

Randomness comes from Philox generators keyed by ``(seed, purpose,
block)`` so changing one stage leaves the draws of the others unchanged.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, asdict, replace
from typing import Iterator, Mapping, Sequence

import numpy as np
import scipy.fft as sfft
from numba import njit

from .errors import ConfigError
from .spectral import (SpectralModel, coherence_extent_s, coherence_from_spectrum, coherence_time_s)
from .tagstream import DEFAULT_TICK_PS, StreamHeader, TagStream, concat_blocks

PURPOSES = {"field": 0, "thinning": 1, "routing": 2, "dark": 3, "jitter": 4}

DEFAULT_SEGMENT = 2**20
INTERP_HALF_TAPS = 12
INTERP_PHASES = 4096
KAISER_BETA = 9.0
SUBBLOCK = 256
BOUND_MARGIN = 1.5
SPARSE_IMAX = 20.0
SPARSE_CUTOFF = 1e-4
JITTER_CLIP = 10.0


def substream(seed: int, purpose: str, block: int = 0) -> np.random.Generator:
    """Independent Philox generator for one (purpose, block)."""
    ss = np.random.SeedSequence(entropy=int(seed) & (2**64 - 1), spawn_key=(PURPOSES[purpose], int(block)))
    return np.random.Generator(np.random.Philox(ss))


# --------------------------------------------------------------------------- configuration

def _tuple(x, n, name) -> tuple:
    if np.isscalar(x):
        return (float(x),) * n
    t = tuple(float(v) for v in x)
    if len(t) != n:
        raise ConfigError(f"{name}: expected {n} values, got {len(t)}")
    return t


@dataclass(frozen=True)
class DetectorArrayModel:
    efficiency: tuple
    dark_rate_hz: tuple
    jitter_sigma_ps: tuple
    dead_time_ps: tuple
    routing: tuple

    def __post_init__(self):
        n = len(self.efficiency)
        if n < 1:
            raise ConfigError("detector array needs at least one channel")
        for name in ("efficiency", "dark_rate_hz", "jitter_sigma_ps", "dead_time_ps", "routing"):
            object.__setattr__(self, name, _tuple(getattr(self, name), n, name))
        if any(not 0.0 <= e <= 1.0 for e in self.efficiency):
            raise ConfigError("efficiencies must lie in [0, 1]")
        for name in ("dark_rate_hz", "jitter_sigma_ps", "dead_time_ps", "routing"):
            if any(not (v >= 0 and math.isfinite(v)) for v in getattr(self, name)):
                raise ConfigError(f"{name} must be finite and >= 0")
        if sum(self.routing) > 1.0 + 1e-12:
            raise ConfigError(f"routing probabilities sum to {sum(self.routing)} > 1")
        if self.q.sum() > 1.0 + 1e-12:
            raise ConfigError("sum of r_i * eta_i exceeds 1")

    @classmethod
    def balanced(cls, channels: int = 3, efficiency: float = 1.0, dark_rate_hz=0.0, jitter_sigma_ps=0.0,
                 dead_time_ps=0.0) -> "DetectorArrayModel":
        return cls(_tuple(efficiency, channels, "efficiency"), _tuple(dark_rate_hz, channels, "dark"),
                   _tuple(jitter_sigma_ps, channels, "jitter"), _tuple(dead_time_ps, channels, "dead"),
                   (1.0 / channels,) * channels)

    @property
    def channel_count(self) -> int:
        return len(self.efficiency)

    @property
    def q(self) -> np.ndarray:
        """Per-photon click probability of each channel."""
        return np.array(self.routing) * np.array(self.efficiency)

    def to_dict(self) -> dict:
        return {k: list(v) for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, d: Mapping) -> "DetectorArrayModel":
        try:
            n = len(d["efficiency"]) if not np.isscalar(d["efficiency"]) else int(d.get("channels", 3))
            return cls(_tuple(d["efficiency"], n, "efficiency"), _tuple(d.get("dark_rate_hz", 0.0), n, "dark_rate_hz"),
                       _tuple(d.get("jitter_sigma_ps", 0.0), n, "jitter_sigma_ps"),
                       _tuple(d.get("dead_time_ps", 0.0), n, "dead_time_ps"),
                       _tuple(d.get("routing", 1.0 / n), n, "routing"))
        except KeyError as exc:
            raise ConfigError(f"detector array lacks key {exc}") from None


SOURCES = ("thermal", "coherent")
METHODS = ("auto", "dense", "sparse")


@dataclass(frozen=True)
class ScenarioConfig:
    """Everything needed to simulate one acquisition.

    ``mean_detected_rate_hz`` is the total rate of photon (non-dark) tags
    before dead time; the incident rate is this divided by ``sum(q)``.
    """

    spectrum: SpectralModel | None
    detectors: DetectorArrayModel
    mean_detected_rate_hz: float
    duration_s: float
    tick_ps: float = DEFAULT_TICK_PS
    seed: int = 0
    field_sample_dt_ps: float = 648.0
    source: str = "thermal"
    method: str = "auto"
    segment_samples: int = DEFAULT_SEGMENT
    block_photons: int = 1_000_000
    metadata: Mapping = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.source not in SOURCES:
            raise ConfigError(f"source must be one of {SOURCES}")
        if self.method not in METHODS:
            raise ConfigError(f"method must be one of {METHODS}")
        if not (self.mean_detected_rate_hz >= 0 and math.isfinite(self.mean_detected_rate_hz)):
            raise ConfigError("mean_detected_rate_hz must be >= 0")
        if not (self.duration_s >= 0 and math.isfinite(self.duration_s)):
            raise ConfigError("duration_s must be >= 0")
        if not self.tick_ps > 0:
            raise ConfigError("tick_ps must be > 0")
        if not 0 <= int(self.seed) < 2**64:
            raise ConfigError("seed must be a 64-bit unsigned integer")
        if self.segment_samples < 1024 or self.segment_samples & (self.segment_samples - 1):
            raise ConfigError("segment_samples must be a power of two >= 1024")
        if self.source == "thermal":
            if self.spectrum is None:
                raise ConfigError("a thermal source needs a spectral model")
            check_nyquist(self.spectrum, self.field_sample_dt_ps)

    @property
    def duration_ticks(self) -> int:
        return int(round(self.duration_s * 1e12 / self.tick_ps))

    @property
    def incident_rate_hz(self) -> float:
        qs = float(self.detectors.q.sum())
        return self.mean_detected_rate_hz / qs if qs > 0 else 0.0

    def resolved_method(self) -> str:
        if self.source != "thermal":
            return "poisson"
        if self.method != "auto":
            return self.method
        return "sparse" if sparse_density(self) < 1.0 else "dense"

    def to_dict(self) -> dict:
        return {
            "spectrum": None if self.spectrum is None else self.spectrum.to_dict(),
            "detectors": self.detectors.to_dict(),
            "mean_detected_rate_hz": self.mean_detected_rate_hz,
            "duration_s": self.duration_s,
            "tick_ps": self.tick_ps,
            "seed": int(self.seed),
            "field_sample_dt_ps": self.field_sample_dt_ps,
            "source": self.source,
            "method": self.method,
            "segment_samples": self.segment_samples,
            "block_photons": self.block_photons,
            "metadata": dict(self.metadata),
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "ScenarioConfig":
        d = dict(d)
        try:
            spec = d.pop("spectrum", None)
            det = DetectorArrayModel.from_dict(d.pop("detectors"))
            return cls(spectrum=None if spec is None else SpectralModel.from_dict(spec), detectors=det, **d)
        except KeyError as exc:
            raise ConfigError(f"scenario lacks key {exc}") from None
        except TypeError as exc:
            raise ConfigError(f"bad scenario keys: {exc}") from None


def check_nyquist(model: SpectralModel, dt_ps: float) -> None:
    """The model support (6 sigma / 3 FWHM) must lie below ``1 / (2 dt)``."""
    if not dt_ps > 0:
        raise ConfigError("field_sample_dt_ps must be > 0")
    lo, hi = model.support()
    nyq = 0.5e12 / dt_ps
    if max(abs(lo), abs(hi)) >= nyq:
        raise ConfigError(
            f"spectral support [{lo / 1e6:.1f}, {hi / 1e6:.1f}] MHz exceeds the Nyquist frequency "
            f"{nyq / 1e6:.1f} MHz of field_sample_dt_ps={dt_ps}")


def sparse_density(cfg: ScenarioConfig) -> float:
    """Expected candidate points per coherence cutoff for the sparse sampler."""
    lam = cfg.incident_rate_hz * SPARSE_IMAX
    return lam * coherence_extent_s(cfg.spectrum, SPARSE_CUTOFF)


def rate_for_nbar(model: SpectralModel, nbar: float) -> float:
    """Detected rate giving ``nbar`` photons per coherence time ``int |g1|^2``."""
    return nbar / coherence_time_s(model)


# --------------------------------------------------------------------------- field synthesis

@njit(cache=True)
def _fill_spectrum(rng, idx, amp, out):
    s = 1.0 / math.sqrt(2.0)
    for k in range(idx.shape[0]):
        out[idx[k]] = amp[k] * s * complex(rng.standard_normal(), rng.standard_normal())


@dataclass(frozen=True)
class _FieldPlan:
    n_fft: int
    used: int
    hop: int
    overlap: int
    idx: np.ndarray
    amp: np.ndarray


def _field_plan(model: SpectralModel, n_total: int, dt_ps: float, segment: int) -> _FieldPlan:
    dt = dt_ps * 1e-12
    if n_total <= segment:
        n = max(1 << int(math.ceil(math.log2(max(n_total, 16)))), 16)
        used, hop, overlap = n, n, 0
    else:
        n = segment
        ext = coherence_extent_s(model, 1e-6)
        pad = min(int(math.ceil(ext / dt)) + 1, n // 4)
        overlap = min(max(8 * pad, 256), n // 4)
        used = n - pad
        hop = used - overlap
    nu = np.fft.fftfreq(n, d=dt)
    s = model.density(nu)
    smax = s.max()
    keep = np.flatnonzero(s > 1e-14 * smax) if smax > 0 else np.array([int(np.argmin(np.abs(nu)))])
    if keep.size == 0 or not smax > 0:
        # narrower than one bin: all power in the bin nearest the centre
        c = model.active[0].center_offset_hz
        keep = np.array([int(np.argmin(np.abs(nu - c)))])
        s = np.zeros(n)
        s[keep] = 1.0
    a = np.sqrt(s[keep] / s[keep].sum())
    return _FieldPlan(n, used, hop, overlap, keep.astype(np.int64), a)


def _segment(plan: _FieldPlan, seed: int, k: int) -> np.ndarray:
    x = np.zeros(plan.n_fft, dtype=np.complex128)
    _fill_spectrum(substream(seed, "field", k), plan.idx, plan.amp, x)
    return sfft.ifft(x, overwrite_x=True) * plan.n_fft


def field_pieces(model: SpectralModel, n_total: int, dt_ps: float, seed: int,
                 segment: int = DEFAULT_SEGMENT) -> Iterator[np.ndarray]:
    """Consecutive pieces whose concatenation is the field ``E[0 .. n_total)``.

    ``E[|E|^2] = 1``. Segments are circular syntheses of ``segment`` samples;
    the last ``pad`` samples (longer than the coherence range) are dropped
    so no wrap-around correlation survives, and consecutive segments are
    joined by a cos/sin crossfade over ``overlap`` samples.
    """
    if n_total <= 0:
        return
    plan = _field_plan(model, n_total, dt_ps, segment)
    if plan.overlap == 0:
        yield _segment(plan, seed, 0)[:n_total]
        return
    theta = 0.5 * math.pi * (np.arange(plan.overlap) + 0.5) / plan.overlap
    fade_out, fade_in = np.cos(theta), np.sin(theta)
    prev_tail = None
    done, k = 0, 0
    while done < n_total:
        seg = _segment(plan, seed, k)
        piece = seg[: plan.hop].copy()
        if prev_tail is not None:
            piece[: plan.overlap] = fade_out * prev_tail + fade_in * seg[: plan.overlap]
        prev_tail = seg[plan.hop: plan.used]
        take = min(plan.hop, n_total - done)
        yield piece[:take]
        done += take
        k += 1


@dataclass(frozen=True)
class FieldTrace:
    values: np.ndarray
    dt_ps: float

    @property
    def intensity(self) -> "IntensityTrace":
        return IntensityTrace(np.abs(self.values) ** 2, self.dt_ps)


@dataclass(frozen=True)
class IntensityTrace:
    values: np.ndarray
    dt_ps: float


def synthesize_field(model: SpectralModel, duration_s: float, dt_s: float, seed: int,
                     segment: int = DEFAULT_SEGMENT) -> FieldTrace:
    dt_ps = dt_s * 1e12
    check_nyquist(model, dt_ps)
    n = int(math.ceil(duration_s / dt_s))
    pieces = list(field_pieces(model, n, dt_ps, seed, segment))
    return FieldTrace(np.concatenate(pieces) if pieces else np.zeros(0, complex), dt_ps)


def synthesize_intensity(model: SpectralModel, duration_s: float, dt_s: float, seed: int,
                         segment: int = DEFAULT_SEGMENT) -> IntensityTrace:
    """``I(t) = |E(t)|^2`` of a single-mode thermal field with spectrum ``model``.

    Normalised so that ``E[I] = 1`` (the ensemble mean, not the record mean:
    a record much shorter than the coherence time is a single exponential
    draw, as thermal light should be).
    """
    return synthesize_field(model, duration_s, dt_s, seed, segment).intensity


# --------------------------------------------------------------------------- dense thinning

def _interp_table(half: int = INTERP_HALF_TAPS, phases: int = INTERP_PHASES) -> np.ndarray:
    p = np.arange(phases + 1)[:, None] / phases
    j = np.arange(2 * half)[None, :]
    x = p - (j - (half - 1))
    w = np.sinc(x) * np.i0(KAISER_BETA * np.sqrt(np.clip(1.0 - (x / half) ** 2, 0.0, None))) / np.i0(KAISER_BETA)
    return w / w.sum(axis=1, keepdims=True)


_TABLE = _interp_table()


@njit(cache=True)
def _thin_field(E, v0, v1, lam_dt, table, half, rng, out):
    """Thin candidates in field-index units ``[v0, v1)`` against ``|E(v)|^2``.

    Returns (accepted, exceedances); accepted = -1 when ``out`` is full.
    """
    phases = table.shape[0] - 1
    n_out = 0
    exceed = 0
    s = v0
    while s < v1:
        e = min(s + 256, v1)
        m = 0.0
        for k in range(s - 2, e + 3):
            a = E[k].real * E[k].real + E[k].imag * E[k].imag
            if a > m:
                m = a
        bound = 1.5 * m
        if bound > 0.0:
            mu = lam_dt * bound
            u = s + rng.exponential() / mu
            while u < e:
                n0 = int(math.floor(u))
                p = int((u - n0) * phases + 0.5)
                base = n0 - half + 1
                xr = 0.0
                xi = 0.0
                for j in range(2 * half):
                    w = table[p, j]
                    xr += w * E[base + j].real
                    xi += w * E[base + j].imag
                inten = xr * xr + xi * xi
                if inten > bound:
                    exceed += 1
                if rng.random() * bound < inten:
                    if n_out >= out.shape[0]:
                        return -1, exceed
                    out[n_out] = u
                    n_out += 1
                u += rng.exponential() / mu
        s = e
    return n_out, exceed


@dataclass
class _Stats:
    candidates_exceeding_bound: int = 0
    photons: int = 0
    clusters_truncated: int = 0


def _dense_arrivals(cfg: ScenarioConfig, stats: _Stats) -> Iterator[tuple]:
    """Yield ``(offset_ticks, start_ps, end_ps, times_ps)`` blocks of arrivals."""
    dt = cfg.field_sample_dt_ps
    T_ps = cfg.duration_ticks * cfg.tick_ps
    half = INTERP_HALF_TAPS
    n_time = int(math.ceil(T_ps / dt)) + 1
    n_field = n_time + 2 * half + 4
    lam_dt = cfg.incident_rate_hz * dt * 1e-12
    v_end = half + T_ps / dt  # field index v corresponds to t = (v - half) dt
    buf = np.zeros(0, np.complex128)
    buf_start = 0  # field index of buf[0]
    done = half  # next field index to thin
    block = 0
    for piece in field_pieces(cfg.spectrum, n_field, dt, cfg.seed, cfg.segment_samples):
        keep_from = max(done - half - 4 - buf_start, 0)
        buf = np.concatenate((buf[keep_from:], piece))
        buf_start += keep_from
        buf_end = buf_start + buf.size
        stop = min(buf_end - half - 4, int(math.ceil(v_end)))
        if stop <= done:
            continue
        times = _run_thin(buf, done - buf_start, stop - buf_start, lam_dt, cfg.seed, block, stats)
        times = (times + buf_start - half) * dt
        times = times[times < T_ps]
        yield 0, (done - half) * dt, min((stop - half) * dt, T_ps), times
        done = stop
        block += 1


def _run_thin(E, v0, v1, lam_dt, seed, block, stats: _Stats) -> np.ndarray:
    expect = lam_dt * (v1 - v0) * 4.0 + 1000
    size = int(expect)
    while True:
        out = np.empty(size, np.float64)
        n, exc = _thin_field(E, v0, v1, lam_dt, _TABLE, INTERP_HALF_TAPS, substream(seed, "thinning", block), out)
        if n >= 0:
            stats.candidates_exceeding_bound += exc
            return out[:n]
        size *= 2


# --------------------------------------------------------------------------- sparse sampler

@njit(cache=True)
def _g1_at(lag, tab_re, tab_im, step):
    # g1 at lag (s); g1(-t) = conj g1(t)
    a = lag if lag >= 0 else -lag
    x = a / step
    i = int(x)
    if i + 1 >= tab_re.shape[0]:
        return 0.0 + 0.0j
    f = x - i
    re = tab_re[i] * (1 - f) + tab_re[i + 1] * f
    im = tab_im[i] * (1 - f) + tab_im[i + 1] * f
    if lag < 0:
        im = -im
    return complex(re, im)


@njit(cache=True)
def _accept_cluster(pos, m, tab_re, tab_im, step, imax, rng, out, n_out, L, cov):
    for a in range(m):
        for b in range(a + 1):
            # E[E_a conj(E_b)] = g1(t_b - t_a)
            cov[a, b] = _g1_at(pos[b] - pos[a], tab_re, tab_im, step)
    for j in range(m):
        s = 0.0
        for k in range(j):
            s += L[j, k].real * L[j, k].real + L[j, k].imag * L[j, k].imag
        d = cov[j, j].real - s
        if d < 1e-12:
            d = 1e-12
        L[j, j] = math.sqrt(d)
        for i in range(j + 1, m):
            acc = cov[i, j]
            for k in range(j):
                acc -= L[i, k] * L[j, k].conjugate()
            L[i, j] = acc / L[j, j].real
    exceed = 0
    r = 1.0 / math.sqrt(2.0)
    z = np.empty(m, np.complex128)
    for k in range(m):
        z[k] = r * complex(rng.standard_normal(), rng.standard_normal())
    for i in range(m):
        e = 0.0 + 0.0j
        for k in range(i + 1):
            e += L[i, k] * z[k]
        inten = e.real * e.real + e.imag * e.imag
        if inten > imax:
            exceed += 1
        if rng.random() * imax < inten:
            if n_out >= out.shape[0]:
                return -1, exceed
            out[n_out] = pos[i]
            n_out += 1
    return n_out, exceed


@njit(cache=True)
def _sparse_block(Tb, lam, L, imax, tab_re, tab_im, step, max_cluster, rng, out):
    """Accepted arrival times (s) in ``[0, Tb)`` of a thermal Cox process.

    Candidates form a Poisson process of rate ``lam = rate * imax``; gaps
    shorter than ``L`` chain candidates into clusters whose field values are
    drawn jointly, all other candidates are isolated and accepted with
    probability ``1 / imax``. Returns (count or -1 if ``out`` is full,
    exceedances, truncated clusters).
    """
    p_short = 1.0 - math.exp(-lam * L)
    pacc = 1.0 / imax
    n_out = 0
    exceed = 0
    truncated = 0
    pos = np.empty(max_cluster)
    cov = np.zeros((max_cluster, max_cluster), np.complex128)
    Lm = np.zeros((max_cluster, max_cluster), np.complex128)
    t = -L  # end of the previous (virtual) cluster; the next gap is long
    while True:
        # run of isolated candidates, then a cluster start
        n_iso = rng.geometric(p_short) - 1 if p_short > 0 else 1 << 62
        while True:
            j = rng.geometric(pacc)
            if j > n_iso:
                break
            t += j * L + rng.gamma(j, 1.0 / lam)
            n_iso -= j
            if t >= Tb:
                return n_out, exceed, truncated
            if n_out >= out.shape[0]:
                return -1, exceed, truncated
            out[n_out] = t
            n_out += 1
        k = n_iso + 1
        t += k * L + rng.gamma(k, 1.0 / lam)
        if t >= Tb:
            return n_out, exceed, truncated
        # cluster: first gap short by construction, later ones with p_short
        m = 0
        pos[m] = t
        m += 1
        more = True
        while more:
            u = rng.random()
            g = -math.log(1.0 - u * p_short) / lam
            t += g
            if t >= Tb:
                break
            pos[m] = t
            m += 1
            more = rng.random() < p_short
            if m == max_cluster:
                truncated += 1
                break
        n_new, exc = _accept_cluster(pos, m, tab_re, tab_im, step, imax, rng, out, n_out, Lm, cov)
        exceed += exc
        if n_new < 0:
            return -1, exceed, truncated
        n_out = n_new
        if t >= Tb:
            return n_out, exceed, truncated


def _g1_table(model: SpectralModel, L: float, points: int = 8192) -> tuple:
    step = 2.0 * L / points
    tau = np.arange(points + 2) * step
    g1 = coherence_from_spectrum(model, tau * 1e12).g1
    return g1.real.copy(), g1.imag.copy(), step


def _sparse_arrivals(cfg: ScenarioConfig, stats: _Stats) -> Iterator[tuple]:
    rate = cfg.incident_rate_hz
    lam = rate * SPARSE_IMAX
    L = coherence_extent_s(cfg.spectrum, SPARSE_CUTOFF)
    tab_re, tab_im, step = _g1_table(cfg.spectrum, L)
    T_ticks = cfg.duration_ticks
    blk = max(int(cfg.block_photons / max(rate, 1e-300) * 1e12 / cfg.tick_ps), 1)
    blk = min(blk, max(T_ticks, 1))
    k = 0
    for start in range(0, T_ticks, blk):
        n_ticks = min(blk, T_ticks - start)
        Tb = n_ticks * cfg.tick_ps * 1e-12
        size = int(rate * Tb * 1.5 + 10 * math.sqrt(rate * Tb + 1) + 100)
        while True:
            out = np.empty(size)
            n, exc, trunc = _sparse_block(Tb, lam, L, SPARSE_IMAX, tab_re, tab_im, step, 256,
                                          substream(cfg.seed, "thinning", k), out)
            if n >= 0:
                break
            size *= 2
        stats.candidates_exceeding_bound += exc
        stats.clusters_truncated += trunc
        yield start, 0.0, n_ticks * cfg.tick_ps, out[:n] * 1e12
        k += 1


def _poisson_arrivals(cfg: ScenarioConfig, stats: _Stats) -> Iterator[tuple]:
    rate = cfg.incident_rate_hz
    T_ticks = cfg.duration_ticks
    blk = max(int(cfg.block_photons / max(rate, 1e-300) * 1e12 / cfg.tick_ps), 1)
    blk = min(blk, max(T_ticks, 1))
    for k, start in enumerate(range(0, T_ticks, blk)):
        n_ticks = min(blk, T_ticks - start)
        span = n_ticks * cfg.tick_ps
        rng = substream(cfg.seed, "thinning", k)
        n = rng.poisson(rate * span * 1e-12)
        yield start, 0.0, span, np.sort(rng.random(n) * span)


# --------------------------------------------------------------------------- detection stage

@njit(cache=True)
def _dead_time(t, ch, dead, last, keep):
    for k in range(t.shape[0]):
        c = ch[k]
        if t[k] - last[c] >= dead[c]:
            keep[k] = True
            last[c] = t[k]
        else:
            keep[k] = False


class _Detector:
    """Stateful routing/jitter/dark/dead-time/quantisation stage over blocks."""

    def __init__(self, array: DetectorArrayModel, tick_ps: float, duration_ticks: int, seed: int):
        self.array = array
        self.tick = tick_ps
        self.T = duration_ticks
        self.seed = seed
        self.q = array.q
        self.cq = np.cumsum(self.q)
        self.sig = np.array(array.jitter_sigma_ps)
        self.dead = np.array(array.dead_time_ps)
        self.dark = np.array(array.dark_rate_hz)
        self.hold = JITTER_CLIP * float(self.sig.max()) + tick_ps
        self.carry_t = np.zeros(0)
        self.carry_c = np.zeros(0, np.int64)
        self.offset = 0  # ticks; carry times are relative to it
        self.last = np.full(array.channel_count, -np.inf)
        self.block = 0

    def _rebase(self, offset: int) -> None:
        shift = (self.offset - offset) * self.tick
        self.carry_t = self.carry_t + shift
        self.last = self.last + shift
        self.offset = offset

    def process(self, offset: int, start_ps: float, end_ps: float, photons: np.ndarray, final: bool) -> TagStream:
        k = self.block
        self.block += 1
        self._rebase(offset)
        n = photons.size
        u = substream(self.seed, "routing", k).random(n)
        ch = np.searchsorted(self.cq, u, side="right")
        hit = ch < self.q.size
        t, ch = photons[hit], ch[hit].astype(np.int64)
        if self.sig.max() > 0 and t.size:
            z = np.clip(substream(self.seed, "jitter", k).standard_normal(t.size), -JITTER_CLIP, JITTER_CLIP)
            t = t + self.sig[ch] * z
        if self.dark.max() > 0 and end_ps > start_ps:
            rng = substream(self.seed, "dark", k)
            span = end_ps - start_ps
            nd = rng.poisson(self.dark * span * 1e-12)
            dt_ = start_ps + rng.random(int(nd.sum())) * span
            dc = np.repeat(np.arange(self.dark.size), nd)
            t = np.concatenate((t, dt_))
            ch = np.concatenate((ch, dc))
        t = np.concatenate((self.carry_t, t))
        ch = np.concatenate((self.carry_c, ch))
        order = np.argsort(t, kind="stable")
        t, ch = t[order], ch[order]
        if final:
            emit = t.size
        else:
            emit = int(np.searchsorted(t, end_ps - self.hold, "left"))
        self.carry_t, self.carry_c = t[emit:], ch[emit:]
        t, ch = t[:emit], ch[:emit]
        if self.dead.max() > 0 and t.size:
            keep = np.empty(t.size, np.bool_)
            _dead_time(t, ch, self.dead, self.last, keep)
            t, ch = t[keep], ch[keep]
        ticks = offset + np.floor(t / self.tick).astype(np.int64)
        ok = (ticks >= 0) & (ticks <= self.T)
        ticks, ch = ticks[ok], ch[ok]
        if ticks.size > 1:
            dtk = np.diff(ticks)
            if np.any((dtk == 0) & (np.diff(ch) < 0)):
                o = np.lexsort((ch, ticks))
                ticks, ch = ticks[o], ch[o]
        return ticks.astype(np.uint64), ch.astype(np.uint16)


def _arrivals(cfg: ScenarioConfig, stats: _Stats) -> Iterator[tuple]:
    if cfg.incident_rate_hz <= 0 or cfg.duration_ticks == 0:
        T_ps = cfg.duration_ticks * cfg.tick_ps
        yield 0, 0.0, T_ps, np.zeros(0)
        return
    method = cfg.resolved_method()
    if method == "poisson":
        yield from _poisson_arrivals(cfg, stats)
    elif method == "sparse":
        yield from _sparse_arrivals(cfg, stats)
    else:
        yield from _dense_arrivals(cfg, stats)


def _header(cfg: ScenarioConfig, extra: Mapping | None = None) -> StreamHeader:
    origin = {"scenario": cfg.to_dict(), "method": cfg.resolved_method()}
    origin.update(extra or {})
    return StreamHeader(cfg.tick_ps, cfg.detectors.channel_count, cfg.duration_ticks, origin)


def iter_simulate(cfg: ScenarioConfig, stats: dict | None = None) -> Iterator[TagStream]:
    """Time-ordered blocks of the simulated stream (bounded memory)."""
    st = _Stats()
    header = _header(cfg)
    det = _Detector(cfg.detectors, cfg.tick_ps, cfg.duration_ticks, cfg.seed)
    pending = None
    for item in _arrivals(cfg, st):
        if pending is not None:
            st.photons += pending[3].size
            ts, ch = det.process(*pending, final=False)
            yield TagStream(header, ts, ch, check=False)
        pending = item
    if pending is not None:
        st.photons += pending[3].size
        ts, ch = det.process(*pending, final=True)
        yield TagStream(header, ts, ch, check=False)
    if stats is not None:
        stats.update(asdict(st))


def simulate(cfg: ScenarioConfig, stats: dict | None = None) -> TagStream:
    """Simulate a full acquisition; identical output for identical config."""
    return concat_blocks(iter_simulate(cfg, stats), _header(cfg))


def detect(trace, array: DetectorArrayModel, rate_hz: float, tick_ps: float = DEFAULT_TICK_PS,
           seed: int = 0) -> TagStream:
    """Photodetection of a sampled intensity or field trace.

    ``rate_hz`` is the incident photon rate at unit intensity. An
    :class:`IntensityTrace` is held constant over each sample; a
    :class:`FieldTrace` is interpolated band-limited between samples.
    """
    if not rate_hz >= 0:
        raise ConfigError("rate must be >= 0")
    dt = trace.dt_ps
    n = trace.values.size
    T_ps = n * dt
    T_ticks = int(math.floor(T_ps / tick_ps))
    stats = _Stats()
    if rate_hz == 0 or n == 0:
        times = np.zeros(0)
    elif isinstance(trace, FieldTrace):
        half = INTERP_HALF_TAPS
        E = np.concatenate((np.zeros(half + 4, complex), trace.values, np.zeros(half + 4, complex)))
        times = _run_thin(E, half + 4, half + 4 + n, rate_hz * dt * 1e-12, seed, 0, stats)
        times = (times - (half + 4)) * dt
    else:
        rng = substream(seed, "thinning", 0)
        counts = rng.poisson(rate_hz * np.asarray(trace.values) * dt * 1e-12)
        k = np.repeat(np.arange(n), counts)
        times = (k + rng.random(k.size)) * dt
        times.sort()
    header = StreamHeader(tick_ps, array.channel_count, T_ticks, {"detect": {"rate_hz": rate_hz}})
    det = _Detector(array, tick_ps, T_ticks, seed)
    ts, ch = det.process(0, 0.0, T_ticks * tick_ps, times[times < T_ticks * tick_ps], final=True)
    return TagStream(header, ts, ch)


def simulate_pulsed_reference(period_ps: float, array: DetectorArrayModel, counts_per_channel: int,
                              seed: int = 0, tick_ps: float = DEFAULT_TICK_PS) -> TagStream:
    """One tag per pulse and channel at ``k * period`` plus Gaussian jitter."""
    sig = np.array(array.jitter_sigma_ps)
    if not period_ps > 2 * JITTER_CLIP * sig.max():
        raise ConfigError("period must exceed the jitter range by a wide margin")
    n = int(counts_per_channel)
    c = array.channel_count
    base = np.arange(1, n + 1, dtype=np.float64) * period_ps
    ts, chs = [], []
    for ch in range(c):
        z = np.clip(substream(seed, "jitter", ch).standard_normal(n), -JITTER_CLIP, JITTER_CLIP)
        ts.append(np.floor((base + sig[ch] * z) / tick_ps).astype(np.int64))
        chs.append(np.full(n, ch, np.int64))
    t = np.concatenate(ts)
    ch = np.concatenate(chs)
    o = np.lexsort((ch, t))
    T = int(math.ceil((n + 1) * period_ps / tick_ps))
    return TagStream(StreamHeader(tick_ps, c, T, {"pulsed_reference": {"period_ps": period_ps}}),
                     t[o].astype(np.uint64), ch[o].astype(np.uint16))
