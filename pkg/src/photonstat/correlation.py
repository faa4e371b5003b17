"""Second-order correlation estimation from time-tag streams.

Delays are integer ticks and bins are symmetric (see
:class:`photonstat.spectral.Binning`). All pairs within ``+-tau_max`` are
counted, not only start-stop pairs, and the normalisation uses the singles
accidental estimate::

    g2_k = C_k / (N_i N_j / T^2 * sum_{d in bin k} (T - |d|))

which is exactly 1 in expectation for independent Poisson streams.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Sequence

import numpy as np
from numba import njit
from scipy import stats

from .errors import ConfigError, EstimationError
from .spectral import (Binning, FitData, FitOptions, FitResult, _binned_curves, _excess_grid,
                       _kernel, fit_data_from_histogram, fit_datasets, get_family)
from .tagstream import TagStream, chunks

DEFAULT_BIN_PS = 648.0
DEFAULT_TAU_MAX_PS = 200e3


# --------------------------------------------------------------------------- counting

@njit(cache=True)
def _count_pairs(A, B, a_core, b_core, a_first_on_tie, D, w, K, out):
    """Histogram of ``b - a`` over pairs with ``|b - a| <= D``.

    A pair is counted only when its earlier member in (timestamp, channel)
    order is flagged in ``*_core``; with all flags set every pair counts.
    """
    nb = B.shape[0]
    lo = 0
    for ia in range(A.shape[0]):
        a = A[ia]
        while lo < nb and B[lo] < a - D:
            lo += 1
        ib = lo
        while ib < nb and B[ib] <= a + D:
            d = B[ib] - a
            if d > 0 or (d == 0 and a_first_on_tie):
                ok = a_core[ia]
            else:
                ok = b_core[ib]
            if ok:
                ad = d if d >= 0 else -d
                k = (2 * ad + w) // (2 * w)
                if d < 0:
                    k = -k
                out[k + K] += 1
            ib += 1


def _pairs_into(out, A, B, i, j, binning, a_core=None, b_core=None):
    if A.size == 0 or B.size == 0:
        return
    a_core = np.ones(A.size, np.bool_) if a_core is None else a_core
    b_core = np.ones(B.size, np.bool_) if b_core is None else b_core
    _count_pairs(A, B, a_core, b_core, i < j, binning.max_delay_ticks, binning.bin_width_ticks,
                 binning.n_side, out)


@dataclass(frozen=True)
class PairCounts:
    """Raw coincidence counts of one ordered channel pair (delay = t_j - t_i)."""

    pair: tuple
    binning: Binning
    counts: np.ndarray


def _check_pair(stream: TagStream, pair) -> tuple:
    i, j = (int(pair[0]), int(pair[1]))
    if i == j:
        raise ConfigError("pair channels must differ")
    for c in (i, j):
        if not 0 <= c < stream.channel_count:
            raise ConfigError(f"channel {c} outside 0..{stream.channel_count - 1}")
    return i, j


def make_binning(tick_ps: float, bin_width_ps: float = DEFAULT_BIN_PS,
                 tau_max_ps: float = DEFAULT_TAU_MAX_PS) -> Binning:
    """Bins of ``round(bin_width_ps / tick)`` ticks; ``tau_max`` is rounded to
    a whole number of bins and counting stops at the outer bin edge."""
    return Binning.from_ps(bin_width_ps, tau_max_ps, tick_ps)


def pair_histogram(stream: TagStream, pair, binning: Binning | None = None,
                   chunk_ticks: int | None = None) -> PairCounts:
    """All-pairs delay histogram ``t_j - t_i`` for one channel pair.

    With ``chunk_ticks`` the stream is processed in cores with a halo of
    ``tau_max``; each pair is counted in the chunk whose core holds its
    earlier tag, so the result equals the single pass exactly.
    """
    i, j = _check_pair(stream, pair)
    binning = binning or make_binning(stream.tick_ps)
    if binning.tick_ps != stream.tick_ps:
        raise ConfigError("binning tick differs from stream tick")
    out = np.zeros(2 * binning.n_side + 1, dtype=np.int64)
    if chunk_ticks is None:
        _pairs_into(out, stream.channel_times(i), stream.channel_times(j), i, j, binning)
    else:
        for ch in chunks(stream, chunk_ticks, binning.max_delay_ticks):
            s = ch.stream
            mi, mj = s.channels == i, s.channels == j
            _pairs_into(out, s.timestamps[mi].astype(np.int64), s.timestamps[mj].astype(np.int64),
                        i, j, binning, ch.in_core[mi], ch.in_core[mj])
    return PairCounts((i, j), binning, out)


class PairAccumulator:
    """Streaming pair histograms over time-ordered blocks of one stream.

    Each block is paired with itself and with the tail of earlier tags
    within ``tau_max``, so the totals equal a single pass over the
    concatenated stream.
    """

    def __init__(self, channel_count: int, pairs: Sequence, binning: Binning):
        self.channel_count = int(channel_count)
        self.pairs = [tuple(int(c) for c in p) for p in pairs]
        for i, j in self.pairs:
            if i == j or not (0 <= i < channel_count and 0 <= j < channel_count):
                raise ConfigError(f"invalid pair {(i, j)}")
        self.binning = binning
        self.counts = {p: np.zeros(2 * binning.n_side + 1, np.int64) for p in self.pairs}
        self.singles = np.zeros(self.channel_count, np.int64)
        self._tails = [np.zeros(0, np.int64) for _ in range(self.channel_count)]
        self._last = -1
        self.duration_ticks = 0
        self.tick_ps = binning.tick_ps

    def add(self, block: TagStream) -> None:
        if block.tick_ps != self.tick_ps:
            raise ConfigError("block tick differs from accumulator binning")
        self.duration_ticks = max(self.duration_ticks, block.duration_ticks)
        if len(block) == 0:
            return
        ts = block.timestamps.astype(np.int64)
        if ts[0] < self._last:
            raise ConfigError("blocks must be added in time order")
        new = [ts[block.channels == c] for c in range(self.channel_count)]
        self.singles += np.array([len(x) for x in new])
        b = self.binning
        for (i, j), out in self.counts.items():
            _pairs_into(out, new[i], new[j], i, j, b)
            _pairs_into(out, self._tails[i], new[j], i, j, b)
            _pairs_into(out, new[i], self._tails[j], i, j, b)
        self._last = int(ts[-1])
        cut = self._last - b.max_delay_ticks
        for c in range(self.channel_count):
            t = np.concatenate((self._tails[c], new[c])) if self._tails[c].size else new[c]
            self._tails[c] = t[np.searchsorted(t, cut, "left"):]

    def histograms(self, duration_ticks: int | None = None) -> dict:
        T = self.duration_ticks if duration_ticks is None else int(duration_ticks)
        return {p: normalize(PairCounts(p, self.binning, c.copy()),
                             (int(self.singles[p[0]]), int(self.singles[p[1]])), T)
                for p, c in self.counts.items()}


# --------------------------------------------------------------------------- histogram

@dataclass(frozen=True)
class G2Histogram:
    """Normalised g2 estimate on symmetric delay bins.

    ``raw_counts`` sums over ``pairs``; ``singles`` maps channel to counts over
    ``live_ticks``. Averaged histograms keep their per-pair ``components``
    and the per-bin averaging ``weights`` (rows follow ``components``).
    """

    binning: Binning
    values: np.ndarray
    stderr: np.ndarray
    raw_counts: np.ndarray
    expected: np.ndarray
    pairs: tuple
    singles: Mapping
    live_ticks: int
    dark_corrected: bool = False
    pair_averaged: bool = False
    components: tuple = ()
    weights: np.ndarray | None = None
    dark_rates_hz: Mapping = field(default_factory=dict)
    gain: float = 1.0

    @property
    def tick_ps(self) -> float:
        return self.binning.tick_ps

    @property
    def bin_width_ticks(self) -> int:
        return self.binning.bin_width_ticks

    @property
    def tau_ps(self) -> np.ndarray:
        return self.binning.tau_ps

    @property
    def tau_max_ps(self) -> float:
        return self.binning.max_delay_ticks * self.tick_ps

    @property
    def live_s(self) -> float:
        return self.live_ticks * self.tick_ps * 1e-12

    def rate_hz(self, channel: int) -> float:
        return self.singles[channel] / self.live_s

    @property
    def zero_bin(self) -> tuple:
        k = self.binning.n_side
        return float(self.values[k]), float(self.stderr[k])

    def precision(self) -> np.ndarray:
        """Per-bin weights proportional to the inverse variance at a common g2.

        Using the expected accidental counts rather than the observed counts
        keeps weighted means unbiased when counts per bin are small.
        """
        if self.pair_averaged:
            return np.sum([c.precision() for c in self.components], axis=0)
        return self.expected * self.gain ** 2

    def far_wing(self, min_tau_ps: float) -> tuple:
        """Weighted mean and error of bins with ``|tau| >= min_tau_ps``."""
        m = (np.abs(self.tau_ps) >= min_tau_ps) & np.isfinite(self.stderr)
        if not m.any():
            raise EstimationError("no bins in the far wing")
        w = self.precision()[m]
        w = w / w.sum()
        return float(np.sum(w * self.values[m])), float(math.sqrt(np.sum((w * self.stderr[m]) ** 2)))

    def pair_label(self) -> str:
        return "+".join(f"{i}-{j}" for i, j in self.pairs)

    def csv_rows(self) -> list:
        label = self.pair_label()
        return [(float(t), float(v), float(e), int(c), label)
                for t, v, e, c in zip(self.tau_ps, self.values, self.stderr, self.raw_counts)]

    def summary(self) -> dict:
        v, e = self.zero_bin
        return {
            "pairs": [list(p) for p in self.pairs],
            "g2_zero_bin": v,
            "g2_zero_bin_err": e,
            "bin_width_ps": self.bin_width_ticks * self.tick_ps,
            "tau_max_ps": self.tau_max_ps,
            "live_s": self.live_s,
            "singles": {str(k): int(n) for k, n in self.singles.items()},
            "dark_corrected": self.dark_corrected,
            "pair_averaged": self.pair_averaged,
        }


def _abs_delay_sums(lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    def tri(n):
        return n * (n + 1) // 2
    pos = tri(hi) - tri(np.maximum(lo - 1, 0))
    neg = tri(-lo) - tri(np.maximum(-hi - 1, 0))
    return np.where(lo >= 0, pos, np.where(hi <= 0, neg, tri(-lo) + tri(hi)))


def normalize(raw: PairCounts, singles: Sequence, live_ticks: int) -> G2Histogram:
    """Normalise raw pair counts by the accidental-coincidence level."""
    ni, nj = (int(singles[0]), int(singles[1]))
    T = int(live_ticks)
    if ni <= 0 or nj <= 0 or T <= 0:
        raise EstimationError(f"cannot normalise: singles ({ni}, {nj}) over {T} ticks")
    b = raw.binning
    overlap = b.widths * float(T) - _abs_delay_sums(b.lo, b.hi).astype(float)
    expected = ni * (nj / float(T)) * (overlap / float(T))
    c = raw.counts.astype(float)
    values = c / expected
    stderr = np.sqrt(np.maximum(c, 1.0)) / expected
    i, j = raw.pair
    return G2Histogram(b, values, stderr, raw.counts.copy(), expected, (raw.pair,), {i: ni, j: nj}, T)


def all_pairs(channel_count: int) -> list:
    return [(i, j) for i in range(channel_count) for j in range(i + 1, channel_count)]


def g2_from_stream(stream: TagStream, pairs: Sequence | None = None, binning: Binning | None = None,
                   chunk_ticks: int | None = None) -> dict:
    """Normalised histograms for each pair (default: all pairs i < j)."""
    binning = binning or make_binning(stream.tick_ps)
    pairs = pairs or all_pairs(stream.channel_count)
    counts = stream.counts()
    out = {}
    for p in pairs:
        raw = pair_histogram(stream, p, binning, chunk_ticks)
        out[raw.pair] = normalize(raw, (counts[raw.pair[0]], counts[raw.pair[1]]), stream.duration_ticks)
    return out


# --------------------------------------------------------------------------- corrections

def dark_correct(g2: G2Histogram, dark_rates_hz) -> G2Histogram:
    """Remove the flat contribution of uncorrelated dark counts.

    ``g2_c = (g2 - (1 - k_i k_j)) / (k_i k_j)`` with ``k = (R - D) / R``.
    ``dark_rates_hz`` is a per-channel sequence or a channel -> rate map.
    """
    if not isinstance(dark_rates_hz, Mapping):
        dark_rates_hz = dict(enumerate(float(x) for x in dark_rates_hz))
    if g2.pair_averaged:
        return average_pairs([dark_correct(c, dark_rates_hz) for c in g2.components])
    if g2.dark_corrected:
        raise ConfigError("histogram is already dark corrected")
    (i, j), = g2.pairs
    kap = []
    for c in (i, j):
        r = g2.rate_hz(c)
        d = float(dark_rates_hz.get(c, 0.0))
        k = (r - d) / r
        if not k > 0:
            raise EstimationError(f"channel {c}: dark rate {d} Hz is not below singles rate {r:.4g} Hz")
        kap.append(k)
    kk = kap[0] * kap[1]
    return replace(g2, values=(g2.values - (1.0 - kk)) / kk, stderr=g2.stderr / kk, dark_corrected=True, gain=kk,
                   dark_rates_hz={i: dark_rates_hz.get(i, 0.0), j: dark_rates_hz.get(j, 0.0)})


def average_pairs(hists: Sequence[G2Histogram]) -> G2Histogram:
    """Inverse-variance weighted per-bin mean of pair histograms.

    The variance of each pair is taken at a common g2 value (expected
    accidentals times the squared dark-correction gain), so weights do not
    correlate with the fluctuations being averaged; errors are propagated
    from each pair's own standard error.
    """
    hists = list(hists)
    if not hists:
        raise ConfigError("nothing to average")
    comps = []
    for h in hists:
        comps.extend(h.components if h.pair_averaged else (h,))
    b = comps[0].binning
    if any(h.binning != b for h in comps):
        raise ConfigError("histograms have different binning")
    V = np.array([h.values for h in comps])
    E = np.array([h.stderr for h in comps])
    w = np.array([h.precision() for h in comps])
    wsum = w.sum(axis=0)
    ok = wsum > 0
    weights = w / np.where(ok, wsum, 1.0)
    vals = np.where(ok, (weights * V).sum(axis=0), np.nan)
    err = np.where(ok, np.sqrt((weights ** 2 * E ** 2).sum(axis=0)), np.inf)
    singles, darks = {}, {}
    for h in comps:
        singles.update(h.singles)
        darks.update(h.dark_rates_hz)
    return G2Histogram(
        b, vals, err, np.sum([h.raw_counts for h in comps], axis=0),
        np.sum([h.expected for h in comps], axis=0), tuple(p for h in comps for p in h.pairs),
        singles, comps[0].live_ticks, all(h.dark_corrected for h in comps), True, tuple(comps), weights, darks)


# --------------------------------------------------------------------------- jitter calibration

@dataclass(frozen=True)
class JitterCalibration:
    sigma_ps: np.ndarray
    sigma_err_ps: np.ndarray
    offset_ps: np.ndarray = None
    counts: np.ndarray = None
    excess_kurtosis: np.ndarray = None
    normality_warning: np.ndarray = None
    period_ps: float | None = None

    def __post_init__(self):
        s = np.asarray(self.sigma_ps, float)
        if np.any(s < 0):
            raise ConfigError("jitter sigma must be >= 0")
        object.__setattr__(self, "sigma_ps", s)
        object.__setattr__(self, "sigma_err_ps", np.asarray(self.sigma_err_ps, float))

    @classmethod
    def from_sigmas(cls, sigma_ps: Sequence, sigma_err_ps: Sequence | None = None) -> "JitterCalibration":
        s = np.asarray(sigma_ps, float)
        return cls(s, np.zeros_like(s) if sigma_err_ps is None else np.asarray(sigma_err_ps, float))

    def pair_sigma(self, i: int, j: int) -> float:
        return float(math.hypot(self.sigma_ps[i], self.sigma_ps[j]))

    def shifted(self, channel: int, delta_ps: float) -> "JitterCalibration":
        s = self.sigma_ps.copy()
        s[channel] = max(s[channel] + delta_ps, 0.0)
        return replace(self, sigma_ps=s)

    def to_dict(self) -> dict:
        d = {"sigma_ps": self.sigma_ps.tolist(), "sigma_err_ps": self.sigma_err_ps.tolist(),
             "period_ps": self.period_ps}
        for k in ("offset_ps", "counts", "excess_kurtosis", "normality_warning"):
            v = getattr(self, k)
            d[k] = None if v is None else np.asarray(v).tolist()
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "JitterCalibration":
        try:
            return cls.from_sigmas(d["sigma_ps"], d.get("sigma_err_ps"))
        except KeyError as exc:
            raise ConfigError(f"calibration lacks {exc}") from None


def jitter_calibrate(stream: TagStream, period_ps: float, min_counts: int = 10_000,
                     channels: Sequence | None = None) -> JitterCalibration:
    """Per-channel Gaussian timing spread from a pulsed reference stream.

    The pulse phase is the circular mean of ``t mod period``; residuals to
    the nearest pulse are fitted by a maximum-likelihood Gaussian. A large
    excess kurtosis sets the normality warning flag.
    """
    if not period_ps > 0:
        raise ConfigError("period must be > 0")
    channels = range(stream.channel_count) if channels is None else channels
    sig, err, off, cnt, kur, warn = [], [], [], [], [], []
    for c in channels:
        t = stream.channel_times(c).astype(np.float64) * stream.tick_ps
        n = t.size
        if n < min_counts:
            raise ConfigError(f"channel {c}: {n} tags, need >= {min_counts} for calibration")
        ph = 2.0 * math.pi * np.mod(t, period_ps) / period_ps
        phi = math.atan2(np.sin(ph).mean(), np.cos(ph).mean())
        phase = phi / (2.0 * math.pi) * period_ps
        r = np.mod(t - phase + 0.5 * period_ps, period_ps) - 0.5 * period_ps
        mu = r.mean()
        s = math.sqrt(np.mean((r - mu) ** 2))
        k = float(stats.kurtosis(r)) if s > 0 else 0.0
        sig.append(s)
        err.append(s / math.sqrt(2.0 * n))
        off.append(phase + mu)
        cnt.append(n)
        kur.append(k)
        warn.append(bool(abs(k) > 0.1 + 5.0 * math.sqrt(24.0 / n)))
    return JitterCalibration(np.array(sig), np.array(err), np.array(off), np.array(cnt),
                             np.array(kur), np.array(warn), float(period_ps))


# --------------------------------------------------------------------------- deconvolution

@dataclass(frozen=True)
class DeconvolutionResult:
    method: str
    fit: FitResult | None
    measured_g2_zero: float
    measured_g2_zero_err: float
    measured_peak_model: float | None
    deconvolved_g2_zero: float
    deconvolved_err: float
    fit_err: float
    calibration_err: float
    reduced_chi2: float | None
    details: Mapping = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in ("method", "measured_g2_zero", "measured_g2_zero_err",
                                           "measured_peak_model", "deconvolved_g2_zero", "deconvolved_err",
                                           "fit_err", "calibration_err", "reduced_chi2")}
        d["fit"] = None if self.fit is None else self.fit.to_dict()
        d["details"] = dict(self.details)
        return d


def _response_datasets(g2: G2Histogram, cal: JitterCalibration, per_pair: bool,
                       tau_window_ps: float | None) -> tuple:
    if g2.pair_averaged and per_pair:
        data = [fit_data_from_histogram(h, cal.pair_sigma(*h.pairs[0]), tau_window_ps, f"{h.pairs[0]}")
                for h in g2.components]
        return data, None
    if g2.pair_averaged:
        k0 = g2.binning.n_side
        w = g2.weights[:, k0] if g2.weights is not None else np.ones(len(g2.components))
        mix = [(float(wi), cal.pair_sigma(*h.pairs[0])) for wi, h in zip(w, g2.components)]
        return [fit_data_from_histogram(g2, mix, tau_window_ps, "averaged")], w
    (i, j), = g2.pairs
    return [fit_data_from_histogram(g2, cal.pair_sigma(i, j), tau_window_ps, f"{(i, j)}")], None


def deconvolve_jitter(g2: G2Histogram, cal: JitterCalibration, family: str = "free-gaussian",
                      options: FitOptions | None = None, method: str = "parametric",
                      per_pair: bool = True, epsilon: float = 1e-3,
                      propagate_calibration: bool = True) -> DeconvolutionResult:
    """Recover the zero-delay bunching of the light behind detector jitter.

    ``parametric``: joint fit of ``1 + A (K_ij * |g1_theta|^2)`` with each
    pair's own Gaussian response (or, for an averaged histogram without
    per-pair use, the weighted response mixture); the answer is ``1 + A``.
    The calibration uncertainty enters through refits with each channel's
    sigma shifted by its error. ``fourier``: Tikhonov-regularised division
    of the excess by the response transfer function, for cross-checks.
    """
    opts = options or FitOptions()
    mv, me = g2.zero_bin
    if method == "fourier":
        return _deconvolve_fourier(g2, cal, epsilon, per_pair)
    if method != "parametric":
        raise ConfigError(f"unknown deconvolution method {method!r}")
    data, wts = _response_datasets(g2, cal, per_pair, opts.tau_window_ps)
    fit = fit_datasets(data, family, opts)
    A = fit.amplitude
    fit_err = fit.param_err("A")
    cal_var = 0.0
    shifts = {}
    if propagate_calibration:
        chans = sorted({c for p in g2.pairs for c in p})
        one = replace(opts, initial=dict(zip(fit.param_names, fit.params)), starts=1)
        for c in chans:
            u = float(cal.sigma_err_ps[c]) if c < len(cal.sigma_err_ps) else 0.0
            if u <= 0:
                continue
            d2, _ = _response_datasets(g2, cal.shifted(c, u), per_pair, opts.tau_window_ps)
            dA = fit_datasets(d2, family, one).amplitude - A
            shifts[c] = dA
            cal_var += dA * dA
    peaks = fit.derived["peak_convolved"]
    if len(peaks) > 1:
        k0 = g2.binning.n_side
        w = g2.weights[:, k0] if g2.weights is not None else np.full(len(peaks), 1.0 / len(peaks))
        peak = float(np.dot(w, peaks))
    else:
        peak = float(peaks[0])
    return DeconvolutionResult(
        "parametric", fit, mv, me, peak, 1.0 + A, math.sqrt(fit_err ** 2 + cal_var), fit_err,
        math.sqrt(cal_var), fit.reduced_chi2, {"calibration_shifts": {str(k): v for k, v in shifts.items()},
                                               "per_pair_peaks": list(peaks)})


def response_transfer(freq_per_tick: np.ndarray, tick_ps: float, bin_ticks: int, kernel: tuple) -> np.ndarray:
    """Transfer function of Gaussian response x tick quantisation x bin box."""
    f = freq_per_tick / tick_ps  # cycles per ps
    g = sum(w * np.exp(-2.0 * (math.pi * s * f) ** 2) for w, s in kernel)
    return g * np.sinc(freq_per_tick) ** 2 * np.sinc(freq_per_tick * bin_ticks)


def _deconvolve_fourier(g2: G2Histogram, cal: JitterCalibration, epsilon: float, per_pair: bool) -> DeconvolutionResult:
    hists = list(g2.components) if (g2.pair_averaged and per_pair) else [g2]
    ests, vars_ = [], []
    for h in hists:
        if h.pair_averaged:
            k0 = h.binning.n_side
            kern = _kernel([(float(w), cal.pair_sigma(*c.pairs[0])) for w, c in zip(h.weights[:, k0], h.components)])
        else:
            kern = _kernel(cal.pair_sigma(*h.pairs[0]))
        e = np.nan_to_num(h.values - 1.0)
        n = e.size
        w = h.bin_width_ticks
        f = np.fft.fftfreq(n) / w  # cycles per tick
        H = response_transfer(f, h.tick_ps, w, kern)
        G = H / (H * H + epsilon * np.max(H * H))
        c = np.real(np.fft.fft(G)) / n
        e0 = np.fft.ifftshift(e)
        se0 = np.fft.ifftshift(np.where(np.isfinite(h.stderr), h.stderr, 0.0))
        ests.append(float(np.dot(c, e0)))
        vars_.append(float(np.dot(c * c, se0 * se0)))
    v = np.array(vars_)
    wts = 1.0 / v if np.all(v > 0) else np.ones_like(v)
    est = float(np.dot(wts, ests) / wts.sum())
    err = float(1.0 / math.sqrt(wts.sum())) if np.all(v > 0) else float("nan")
    mv, me = g2.zero_bin
    return DeconvolutionResult("fourier", None, mv, me, None, 1.0 + est, err, err, 0.0, None,
                               {"epsilon": epsilon, "per_histogram": ests})
