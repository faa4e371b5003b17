"""Parametric spectra, first-order coherence and Siegert-relation g2 models.

Conventions
-----------
* A Gaussian component's ``width_hz`` is its standard deviation, a
  Lorentzian's is its FWHM.
* Emission components are unit-area profiles scaled by ``weight``; the
  filter is a peak-normalised transmission multiplying their sum.
* ``g1(tau) = int S(nu) exp(-2j pi nu tau) dnu / int S(nu) dnu``.
* Within a model several emission components add at the spectrum (field)
  level, so they share one Siegert relation ``g2 = 1 + A |g1|^2``.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field, asdict
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy import ndimage
from scipy.interpolate import CubicSpline
from scipy.optimize import least_squares

from .errors import ConfigError, EstimationError

GAUSSIAN = "gaussian"
LORENTZIAN = "lorentzian"
_KINDS = (GAUSSIAN, LORENTZIAN)

FFT_MIN_POINTS = 2**16
FFT_MAX_POINTS = 2**24
DEFAULT_DTAU_PS = 25.0
REWEIGHT_ITERATIONS = 10

SQRT2PI = math.sqrt(2.0 * math.pi)
FWHM_PER_SIGMA = 2.0 * math.sqrt(2.0 * math.log(2.0))


# --------------------------------------------------------------------------- model types

@dataclass(frozen=True)
class SpectralComponent:
    kind: str
    center_offset_hz: float = 0.0
    width_hz: float = 1.0
    weight: float = 1.0

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ConfigError(f"unknown component kind {self.kind!r}; expected one of {_KINDS}")
        if not (math.isfinite(self.width_hz) and self.width_hz > 0):
            raise ConfigError(f"component width must be > 0, got {self.width_hz}")
        if not (math.isfinite(self.weight) and self.weight >= 0):
            raise ConfigError(f"component weight must be >= 0, got {self.weight}")
        if not math.isfinite(self.center_offset_hz):
            raise ConfigError("component center must be finite")

    def density(self, nu) -> np.ndarray:
        """Unit-area profile at ``nu`` (Hz)."""
        x = np.asarray(nu, dtype=float) - self.center_offset_hz
        w = self.width_hz
        if self.kind == GAUSSIAN:
            return np.exp(-0.5 * (x / w) ** 2) / (w * SQRT2PI)
        h = 0.5 * w
        return (h / math.pi) / (x * x + h * h)

    def transmission(self, nu) -> np.ndarray:
        """Peak-normalised profile (used for filters)."""
        x = np.asarray(nu, dtype=float) - self.center_offset_hz
        w = self.width_hz
        if self.kind == GAUSSIAN:
            return np.exp(-0.5 * (x / w) ** 2)
        h = 0.5 * w
        return (h * h) / (x * x + h * h)

    def coherence(self, tau_s) -> np.ndarray:
        """Analytic Fourier transform of the unit-area profile."""
        t = np.asarray(tau_s, dtype=float)
        phase = np.exp(-2j * math.pi * self.center_offset_hz * t)
        if self.kind == GAUSSIAN:
            with np.errstate(over="ignore"):  # overflow means exp(-inf) = 0
                mag = np.exp(-2.0 * (math.pi * self.width_hz * t) ** 2)
        else:
            mag = np.exp(-math.pi * self.width_hz * np.abs(t))
        return mag * phase

    @property
    def support_half_width_hz(self) -> float:
        # total support of 6 sigma (Gaussian) or 3 FWHM (Lorentzian)
        return 3.0 * self.width_hz if self.kind == GAUSSIAN else 1.5 * self.width_hz

    @property
    def coverage_half_width_hz(self) -> float:
        return 3.0 * self.width_hz if self.kind == GAUSSIAN else 10.0 * self.width_hz

    @property
    def extent_half_width_hz(self) -> float:
        # where the profile is negligible for numerical transforms
        return 9.0 * self.width_hz if self.kind == GAUSSIAN else 200.0 * self.width_hz

    def to_dict(self) -> dict:
        return asdict(self)


def _interval(comps, attr) -> tuple:
    lo = min(c.center_offset_hz - getattr(c, attr) for c in comps)
    hi = max(c.center_offset_hz + getattr(c, attr) for c in comps)
    return lo, hi


@dataclass(frozen=True)
class SpectralModel:
    emission: tuple
    filter: SpectralComponent | None = None
    metadata: Mapping = field(default_factory=dict, compare=False)

    def __post_init__(self):
        em = tuple(self.emission)
        if not em:
            raise ConfigError("a spectral model needs at least one emission component")
        if not all(isinstance(c, SpectralComponent) for c in em):
            raise ConfigError("emission entries must be SpectralComponent")
        if sum(c.weight for c in em) <= 0:
            raise ConfigError("emission weights must not all be zero")
        object.__setattr__(self, "emission", em)

    @property
    def active(self) -> tuple:
        return tuple(c for c in self.emission if c.weight > 0)

    def density(self, nu) -> np.ndarray:
        nu = np.asarray(nu, dtype=float)
        total = sum(c.weight for c in self.emission)
        s = sum(c.weight * c.density(nu) for c in self.active) / total
        if self.filter is not None:
            s = s * self.filter.transmission(nu)
        return s

    def _filtered_interval(self, attr) -> tuple:
        lo, hi = _interval(self.active, attr)
        if self.filter is not None:
            flo, fhi = _interval((self.filter,), attr)
            if max(lo, flo) < min(hi, fhi):
                lo, hi = max(lo, flo), min(hi, fhi)
        return lo, hi

    def support(self) -> tuple:
        """Frequency interval holding the spectrum (6 sigma / 3 FWHM rule)."""
        return self._filtered_interval("support_half_width_hz")

    def coverage(self) -> tuple:
        """Interval an evaluation grid must span."""
        return self._filtered_interval("coverage_half_width_hz")

    def extent(self) -> tuple:
        return self._filtered_interval("extent_half_width_hz")

    @property
    def narrowest_width_hz(self) -> float:
        comps = self.active + ((self.filter,) if self.filter is not None else ())
        return min(c.width_hz for c in comps)

    @property
    def is_filtered(self) -> bool:
        return self.filter is not None

    def to_dict(self) -> dict:
        return {
            "emission": [c.to_dict() for c in self.emission],
            "filter": None if self.filter is None else self.filter.to_dict(),
            "metadata": dict(self.metadata),
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "SpectralModel":
        try:
            em = tuple(SpectralComponent(**c) for c in d["emission"])
            flt = d.get("filter")
            flt = SpectralComponent(**flt) if flt else None
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"bad spectral model description: {exc}") from None
        return cls(em, flt, dict(d.get("metadata", {})))


def gaussian(sigma_hz: float, weight: float = 1.0, center_hz: float = 0.0) -> SpectralComponent:
    return SpectralComponent(GAUSSIAN, center_hz, sigma_hz, weight)


def lorentzian(fwhm_hz: float, weight: float = 1.0, center_hz: float = 0.0) -> SpectralComponent:
    return SpectralComponent(LORENTZIAN, center_hz, fwhm_hz, weight)


# --------------------------------------------------------------------------- spectrum and coherence

def eval_spectrum(model: SpectralModel, nu_hz, check_coverage: bool = True) -> np.ndarray:
    """Spectral density of ``model`` on the frequency grid ``nu_hz``.

    The grid has to span the model's coverage interval (6 sigma for
    Gaussians, 20 FWHM for Lorentzians, clipped by the filter) unless
    ``check_coverage`` is False.
    """
    nu = np.asarray(nu_hz, dtype=float)
    if check_coverage:
        lo, hi = model.coverage()
        if nu.size == 0 or nu.min() > lo or nu.max() < hi:
            raise ConfigError(
                f"frequency grid does not cover the model support [{lo:.4g}, {hi:.4g}] Hz")
    return model.density(nu)


@dataclass(frozen=True)
class CoherenceFunction:
    tau_ps: np.ndarray
    g1: np.ndarray
    normalization: Mapping

    @property
    def magnitude(self) -> np.ndarray:
        return np.abs(self.g1)


def _fft_points(model: SpectralModel, dtau_s: float, tau_extent_s: float, min_points: int) -> int:
    with np.errstate(divide="ignore", over="ignore"):
        ratio = max(2.0 * tau_extent_s, 40.0 / model.narrowest_width_hz) / dtau_s
    if not ratio <= FFT_MAX_POINTS:
        raise ConfigError(f"coherence transform needs more than {FFT_MAX_POINTS} points")
    return max(min_points, 1 << int(math.ceil(math.log2(max(ratio, 2.0)))))


def _default_dtau_s(model: SpectralModel) -> float:
    lo, hi = model.extent()
    return min(DEFAULT_DTAU_PS * 1e-12, 1.0 / (2.0 * max(abs(lo), abs(hi))))


@functools.lru_cache(maxsize=16)
def _fft_coherence(model: SpectralModel, dtau_s: float, n: int) -> tuple:
    """g1 at ``j * dtau`` for j in FFT order plus the raw (unnormalised) g1(0)."""
    dnu = 1.0 / (n * dtau_s)
    nu = np.fft.fftfreq(n, d=dtau_s)
    s = model.density(nu)
    raw = np.fft.fft(s) * dnu
    g1 = raw / raw[0].real
    g1.flags.writeable = False
    return g1, float(raw[0].real)


def coherence_from_spectrum(model: SpectralModel, tau_ps, method: str = "auto",
                            min_points: int = FFT_MIN_POINTS, dtau_ps: float | None = None) -> CoherenceFunction:
    """Normalised first-order coherence of ``model`` at delays ``tau_ps``.

    Unfiltered models use the closed-form transforms (the Lorentzian's heavy
    tails make a truncated discrete transform inaccurate at 1e-4). Filtered
    models use a discrete transform of at least ``min_points`` points; when
    ``tau_ps`` is a uniform grid anchored on a multiple of its step, the
    transform step divides it so no interpolation is needed.
    """
    tau = np.asarray(tau_ps, dtype=float)
    if method not in ("auto", "analytic", "fft"):
        raise ConfigError(f"unknown coherence method {method!r}")
    if method == "analytic" and model.is_filtered:
        raise ConfigError("analytic coherence is only available for unfiltered models")
    if method == "analytic" or (method == "auto" and not model.is_filtered):
        total = sum(c.weight for c in model.emission)
        g1 = sum(c.weight * c.coherence(tau * 1e-12) for c in model.active) / total
        g1 = np.asarray(g1, dtype=complex).reshape(tau.shape)
        return CoherenceFunction(tau, g1, {"method": "analytic"})

    base = dtau_ps * 1e-12 if dtau_ps else _default_dtau_s(model)
    extent = float(np.max(np.abs(tau))) * 1e-12 if tau.size else 0.0
    step = _uniform_step(tau)
    if step is not None:
        m = max(1, int(math.ceil(step * 1e-12 / base - 1e-9)))
        dtau = step * 1e-12 / m
        n = _fft_points(model, dtau, extent, min_points)
        g1_grid, raw0 = _fft_coherence(model, dtau, n)
        idx = np.rint(tau * 1e-12 / dtau).astype(np.int64) % n
        g1 = g1_grid[idx]
    else:
        dtau = base
        n = _fft_points(model, dtau, extent, min_points)
        g1_grid, raw0 = _fft_coherence(model, dtau, n)
        jmax = int(math.ceil(extent / dtau)) + 3
        j = np.arange(-jmax, jmax + 1)
        vals = g1_grid[j % n]
        t = j * dtau * 1e12
        g1 = CubicSpline(t, vals.real)(tau) + 1j * CubicSpline(t, vals.imag)(tau)
    norm = {"method": "fft", "dtau_ps": dtau * 1e12, "points": n, "raw_g1_0": raw0}
    return CoherenceFunction(tau, np.asarray(g1, dtype=complex), norm)


def _uniform_step(tau: np.ndarray) -> float | None:
    if tau.ndim != 1 or tau.size < 2:
        return None
    d = np.diff(tau)
    step = d[0]
    if step <= 0 or not np.allclose(d, step, rtol=0, atol=1e-9 * max(step, 1.0)):
        return None
    k = tau[0] / step
    return float(step) if abs(k - round(k)) < 1e-9 else None


def coherence_extent_s(model: SpectralModel, threshold: float = 1e-4) -> float:
    """Smallest delay beyond which ``|g1| < threshold`` (conservative)."""
    comps = model.active
    if not model.is_filtered:
        ts = []
        for c in comps:
            if c.kind == GAUSSIAN:
                ts.append(math.sqrt(math.log(1.0 / threshold) / 2.0) / (math.pi * c.width_hz))
            else:
                ts.append(math.log(1.0 / threshold) / (math.pi * c.width_hz))
        return max(ts)
    # numeric: scan |g1| on the transform grid
    dtau = _default_dtau_s(model)
    n = _fft_points(model, dtau, 0.0, FFT_MIN_POINTS)
    g1, _ = _fft_coherence(model, dtau, n)
    mag = np.abs(g1[: n // 2])
    above = np.flatnonzero(mag >= threshold)
    return (above[-1] + 1) * dtau if above.size else dtau


def coherence_time_s(model: SpectralModel) -> float:
    """``int |g1(tau)|^2 dtau``, the coherence time used to express n-bar."""
    if not model.is_filtered and len(model.active) == 1:
        c = model.active[0]
        return 1.0 / (2.0 * math.sqrt(math.pi) * c.width_hz) if c.kind == GAUSSIAN else 1.0 / (math.pi * c.width_hz)
    dtau = _default_dtau_s(model)
    n = _fft_points(model, dtau, coherence_extent_s(model, 1e-6) if model.is_filtered else 0.0, FFT_MIN_POINTS)
    if not model.is_filtered:
        t = (np.arange(n) - n // 2) * dtau
        g1 = coherence_from_spectrum(model, t * 1e12, method="analytic").g1
        return float(np.sum(np.abs(g1) ** 2) * dtau)
    g1, _ = _fft_coherence(model, dtau, n)
    return float(np.sum(np.abs(g1) ** 2) * dtau)


# --------------------------------------------------------------------------- g2 models

def _kernel(jitter) -> tuple:
    """Normalise a response description into ``((weight, sigma_ps), ...)``."""
    if jitter is None:
        return ((1.0, 0.0),)
    if np.isscalar(jitter):
        s = float(jitter)
        if s < 0:
            raise ConfigError("jitter sigma must be >= 0")
        return ((1.0, s),)
    pairs = tuple((float(w), float(s)) for w, s in jitter)
    tot = sum(w for w, _ in pairs)
    if tot <= 0 or any(s < 0 or w < 0 for w, s in pairs):
        raise ConfigError("invalid response mixture")
    return tuple((w / tot, s) for w, s in pairs)


def _smooth(y: np.ndarray, h_ps: float, kernel: tuple) -> np.ndarray:
    out = np.zeros_like(y)
    for w, s in kernel:
        if s / h_ps < 1e-3:
            out += w * y
        else:
            out += w * ndimage.gaussian_filter1d(y, s / h_ps, mode="nearest", truncate=8.0)
    return out


def g2_model(model: SpectralModel, tau_ps, amplitude: float = 1.0, jitter_sigma_ps=None) -> np.ndarray:
    """``1 + A |g1|^2`` at ``tau_ps``, optionally convolved with a Gaussian
    response (a std in ps, or a ``(weight, sigma)`` mixture)."""
    tau = np.asarray(tau_ps, dtype=float)
    kernel = _kernel(jitter_sigma_ps)
    smax = max(s for _, s in kernel)
    if smax == 0:
        g1 = coherence_from_spectrum(model, tau).g1
        return 1.0 + amplitude * np.abs(g1) ** 2
    smin = min(s for _, s in kernel if s > 0)
    h = min(DEFAULT_DTAU_PS, smin / 10.0)
    pad = 8.0 * smax + 4 * h
    lo = math.floor((tau.min() - pad) / h)
    hi = math.ceil((tau.max() + pad) / h)
    grid = np.arange(lo, hi + 1) * h
    ex = np.abs(coherence_from_spectrum(model, grid).g1) ** 2
    ex = _smooth(ex, h, kernel)
    return 1.0 + amplitude * CubicSpline(grid, ex)(tau)


@dataclass(frozen=True)
class Binning:
    """Symmetric delay bins in integer ticks.

    A delay ``d`` falls in bin ``sign(d) * floor((2|d| + w) / (2 w))``.
    Bin ``k`` holds the integer delays ``lo[k] .. hi[k]``; for even ``w``
    the central bin is one tick narrower than the others.
    """

    bin_width_ticks: int
    n_side: int
    tick_ps: float

    def __post_init__(self):
        if self.bin_width_ticks < 1:
            raise ConfigError("bin width must be >= 1 tick")
        if self.n_side < 0:
            raise ConfigError("n_side must be >= 0")

    @classmethod
    def from_ps(cls, bin_width_ps: float, tau_max_ps: float, tick_ps: float) -> "Binning":
        w = max(1, int(round(bin_width_ps / tick_ps)))
        k = int(round(tau_max_ps / (w * tick_ps)))
        return cls(w, k, tick_ps)

    @property
    def index(self) -> np.ndarray:
        return np.arange(-self.n_side, self.n_side + 1)

    @property
    def hi(self) -> np.ndarray:
        k, w = self.index, self.bin_width_ticks
        pos = -(-(2 * np.abs(k) * w + w) // 2) - 1  # ceil((2kw + w)/2) - 1
        neg = -(-(2 * np.abs(k) * w - w) // 2)      # ceil((2kw - w)/2)
        return np.where(k >= 0, pos, -neg)

    @property
    def lo(self) -> np.ndarray:
        return -self.hi[::-1]

    @property
    def max_delay_ticks(self) -> int:
        return int(self.hi[-1])

    @property
    def widths(self) -> np.ndarray:
        return self.hi - self.lo + 1

    @property
    def tau_ps(self) -> np.ndarray:
        return 0.5 * (self.lo + self.hi) * self.tick_ps

    def bin_of(self, d) -> np.ndarray:
        d = np.asarray(d, dtype=np.int64)
        w = self.bin_width_ticks
        return np.sign(d) * ((2 * np.abs(d) + w) // (2 * w))


def binned_g2_model(model: SpectralModel, binning: Binning, amplitude: float = 1.0,
                    jitter_sigma_ps=None) -> np.ndarray:
    """Expected normalised g2 per bin for tick-quantised timestamps.

    The continuous curve ``1 + A (K * |g1|^2)`` is convolved with the unit
    triangle that floor-quantisation of both tags induces on the integer
    delay, sampled at integer ticks and averaged over each bin's delays.
    """
    return _binned_curves(_excess_grid(model, binning, _kernel(jitter_sigma_ps)), binning,
                          (_kernel(jitter_sigma_ps),), amplitude)[0]


def _excess_grid(model: SpectralModel, binning: Binning, *kernels) -> tuple:
    smax = max(s for k in kernels for _, s in k)
    tick = binning.tick_ps
    margin = int(math.ceil(8.0 * smax / tick)) + 4
    jmax = 4 * (binning.max_delay_ticks + margin)
    grid = np.arange(-jmax, jmax + 1) * (tick / 4.0)
    ex = np.abs(coherence_from_spectrum(model, grid).g1) ** 2
    return grid, ex


_TRIANGLE = np.array([1.0, 2.0, 3.0, 4.0, 3.0, 2.0, 1.0]) / 16.0


def _binned_curves(excess: tuple, binning: Binning, kernels: Sequence[tuple], amplitude: float) -> list:
    grid, ex = excess
    h = binning.tick_ps / 4.0
    jmax = (len(grid) - 1) // 2
    out = []
    lo, hi = binning.lo, binning.hi
    for kern in kernels:
        y = _smooth(ex, h, kern)
        y = ndimage.convolve1d(y, _TRIANGLE, mode="nearest")
        ticks = y[jmax % 4::4]  # integer-tick samples, index 0 <-> d = -(jmax // 4)
        d0 = jmax // 4
        c = np.concatenate(([0.0], np.cumsum(ticks)))
        mean = (c[hi + d0 + 1] - c[lo + d0]) / (hi - lo + 1)
        out.append(1.0 + amplitude * mean)
    return out


# --------------------------------------------------------------------------- fitting

@dataclass(frozen=True)
class FitOptions:
    """Options shared by :func:`fit_g2` and jitter deconvolution.

    ``doppler_sigma_hz`` fixes the emission width of the narrowband family,
    ``filter_fwhm_hz`` the cavity filter of the two-Gaussian family.
    """

    jitter_sigma_ps: float | None = None
    doppler_sigma_hz: float = 260e6
    filter_fwhm_hz: float = 818e6
    initial: Mapping | None = None
    starts: int = 5
    seed: int = 0
    ftol: float = 1e-9
    max_iter: int = 200
    tau_window_ps: float | None = None


@dataclass(frozen=True)
class ModelFamily:
    name: str
    param_names: tuple
    log_params: tuple
    build: Callable
    guess: Callable


def _build_lorentz_filtered(p, o: FitOptions) -> SpectralModel:
    return SpectralModel((gaussian(o.doppler_sigma_hz),), lorentzian(p[1]))


def _build_two_gauss(p, o: FitOptions) -> SpectralModel:
    return SpectralModel((gaussian(p[1], 1.0), gaussian(p[2], p[3])), lorentzian(o.filter_fwhm_hz))


def _build_free_gauss(p, o: FitOptions) -> SpectralModel:
    return SpectralModel((gaussian(p[1]),))


def _hwhm_ps(datasets) -> float:
    """Half width at half maximum of the excess, from the first dataset."""
    d = datasets[0]
    tau = d.binning.tau_ps
    e = np.convolve(d.values - 1.0, np.ones(3) / 3.0, mode="same")
    k0 = len(tau) // 2
    peak = e[k0]
    if not peak > 0:
        return 1000.0
    right = np.flatnonzero(e[k0:] < 0.5 * peak)
    hw = tau[k0 + right[0]] if right.size else tau[-1]
    hw2 = hw * hw - max(s for _, s in d.kernel) ** 2
    return math.sqrt(max(hw2, (0.5 * d.binning.tick_ps * d.binning.bin_width_ticks) ** 2))


def _guess_lorentz(datasets, o):
    hw = _hwhm_ps(datasets) * 1e-12
    return {"A": 1.0, "fwhm_hz": math.log(2.0) / (2.0 * math.pi * hw)}


def _guess_two_gauss(datasets, o):
    return {"A": 1.0, "sigma_broad_hz": 260e6, "sigma_narrow_hz": 20e6, "ratio": 0.1}


def _guess_free_gauss(datasets, o):
    hw = _hwhm_ps(datasets) * 1e-12
    s_tau = hw / math.sqrt(2.0 * math.log(2.0))
    return {"A": 1.0, "sigma_hz": 1.0 / (2.0 * math.sqrt(2.0) * math.pi * s_tau)}


FAMILIES = {
    "single-lorentzian-filtered": ModelFamily(
        "single-lorentzian-filtered", ("A", "fwhm_hz"), (False, True), _build_lorentz_filtered, _guess_lorentz),
    "two-gaussian-plus-filter": ModelFamily(
        "two-gaussian-plus-filter", ("A", "sigma_broad_hz", "sigma_narrow_hz", "ratio"),
        (False, True, True, True), _build_two_gauss, _guess_two_gauss),
    "free-gaussian": ModelFamily(
        "free-gaussian", ("A", "sigma_hz"), (False, True), _build_free_gauss, _guess_free_gauss),
}


def get_family(name: str) -> ModelFamily:
    try:
        return FAMILIES[name]
    except KeyError:
        raise ConfigError(f"unknown model family {name!r}; choose from {sorted(FAMILIES)}") from None


@dataclass(frozen=True)
class FitData:
    """One histogram entering a fit, with its own response kernel."""

    binning: Binning
    values: np.ndarray
    stderr: np.ndarray
    kernel: tuple
    mask: np.ndarray
    label: str = ""
    precision: np.ndarray | None = None


def fit_data_from_histogram(hist, jitter=None, tau_window_ps=None, label="") -> FitData:
    """Bins usable for fitting.

    With a per-bin ``precision`` (inverse variance at g2 = 1) the fit weights
    each bin by its model value, so empty bins carry information and are
    kept; otherwise only bins with counts and positive errors are used.
    """
    binning = hist.binning
    prec = hist.precision() if hasattr(hist, "precision") else None
    if prec is not None and not np.all(np.isfinite(prec)):
        prec = None
    if prec is not None:
        mask = np.isfinite(hist.values) & (prec > 0)
    else:
        mask = np.isfinite(hist.values) & (hist.stderr > 0) & (np.asarray(hist.raw_counts) > 0)
    if tau_window_ps is not None:
        mask &= np.abs(binning.tau_ps) <= tau_window_ps
    return FitData(binning, np.asarray(hist.values, float), np.asarray(hist.stderr, float),
                   _kernel(jitter), mask, label, None if prec is None else np.asarray(prec, float))


@dataclass(frozen=True)
class FitResult:
    family: str
    param_names: tuple
    params: np.ndarray
    covariance: np.ndarray
    chi2: float
    dof: int
    converged: bool
    nfev: int
    options: FitOptions
    derived: Mapping

    @property
    def stderr(self) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.covariance), 0, None))

    @property
    def reduced_chi2(self) -> float:
        return self.chi2 / self.dof if self.dof > 0 else float("nan")

    def param(self, name: str) -> float:
        return float(self.params[self.param_names.index(name)])

    def param_err(self, name: str) -> float:
        return float(self.stderr[self.param_names.index(name)])

    @property
    def model(self) -> SpectralModel:
        return get_family(self.family).build(self.params, self.options)

    @property
    def amplitude(self) -> float:
        return self.param("A")

    def to_dict(self) -> dict:
        return {
            "family": self.family,
            "parameters": {n: float(v) for n, v in zip(self.param_names, self.params)},
            "stderr": {n: float(v) for n, v in zip(self.param_names, self.stderr)},
            "covariance": self.covariance.tolist(),
            "chi2": self.chi2,
            "dof": self.dof,
            "reduced_chi2": self.reduced_chi2,
            "converged": self.converged,
            "nfev": self.nfev,
            "derived": _jsonable(self.derived),
        }


def _jsonable(x):
    if isinstance(x, Mapping):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    return x


class _Problem:
    def __init__(self, fam: ModelFamily, datasets: Sequence[FitData], opts: FitOptions):
        self.fam, self.data, self.opts = fam, list(datasets), opts
        self.logs = np.array(fam.log_params)
        self.binning = self.data[0].binning
        if any(d.binning != self.binning for d in self.data):
            raise ConfigError("all fitted histograms must share one binning")
        self.kernels = [d.kernel for d in self.data]
        self.nres = int(sum(d.mask.sum() for d in self.data))
        self.sigma = [d.stderr for d in self.data]
        self.last = None

    def to_params(self, x):
        return np.where(self.logs, np.exp(np.clip(x, -700, 700)), x)

    def to_x(self, p):
        p = np.asarray(p, float)
        return np.where(self.logs, np.log(np.where(self.logs, p, 1.0)), p)

    def curves(self, p) -> list:
        model = self.fam.build(p, self.opts)
        return _binned_curves(_excess_grid(model, self.binning, *self.kernels), self.binning,
                              self.kernels, p[0])

    def residuals(self, x):
        p = self.to_params(x)
        self.last = p
        try:
            curves = self.curves(p)
        except ConfigError:
            return np.full(self.nres, 1e6)
        r = [((d.values - c) / np.where(s > 0, s, 1.0))[d.mask] for d, c, s in zip(self.data, curves, self.sigma)]
        return np.concatenate(r)

    def reweight(self, p) -> bool:
        """Variances from the model at ``p``; False when nothing to update."""
        if not any(d.precision is not None for d in self.data):
            return False
        curves = self.curves(p)
        self.sigma = [d.stderr if d.precision is None else
                      np.sqrt(np.maximum(c, 1e-3) / np.where(d.precision > 0, d.precision, 1.0))
                      for d, c in zip(self.data, curves)]
        return True


def fit_datasets(datasets: Sequence[FitData], family: str, options: FitOptions | None = None) -> FitResult:
    """Levenberg-Marquardt fit of a model family to one or more histograms."""
    opts = options or FitOptions()
    fam = get_family(family)
    prob = _Problem(fam, datasets, opts)
    npar = len(fam.param_names)
    if prob.nres < max(10, npar + 1):
        raise EstimationError(f"need >= 10 bins with counts to fit, have {prob.nres}")
    init = dict(fam.guess(prob.data, opts))
    init.update(opts.initial or {})
    p0 = np.array([float(init[n]) for n in fam.param_names])
    x0 = prob.to_x(p0)
    rng = np.random.default_rng(opts.seed)
    starts = [x0]
    for _ in range(max(opts.starts, 1) - 1):
        jit = rng.normal(0.0, 0.3, npar)
        starts.append(np.where(prob.logs, x0 + jit, x0 * (1.0 + 0.3 * jit)))
    def solve(xs):
        return least_squares(prob.residuals, xs, method="lm", ftol=opts.ftol, xtol=1e-12,
                             gtol=1e-12, max_nfev=opts.max_iter * (npar + 1))

    best, tried = None, []
    for xs in starts:
        try:
            res = solve(xs)
        except (ValueError, FloatingPointError, OverflowError) as exc:
            tried.append({"start": prob.to_params(xs).tolist(), "error": str(exc)})
            continue
        tried.append({"start": prob.to_params(xs).tolist(), "cost": float(res.cost), "status": int(res.status)})
        if res.status > 0 and np.all(np.isfinite(res.x)) and (best is None or res.cost < best.cost):
            best = res
    if best is None:
        raise EstimationError("fit did not converge from any start",
                              {"family": family, "starts": tried,
                               "last_iterate": None if prob.last is None else prob.last.tolist()})
    # iteratively reweighted: the fixed point solves the Poisson score
    # equations, which observed-count weights bias low at small counts
    reweighted = False
    for _ in range(REWEIGHT_ITERATIONS):
        sigma = prob.sigma
        if not prob.reweight(prob.to_params(best.x)):
            break
        try:
            res = solve(best.x)
        except (ValueError, FloatingPointError, OverflowError):
            res = None
        if res is None or not (res.status > 0 and np.all(np.isfinite(res.x))):
            prob.sigma = sigma  # keep the last converged weighting
            break
        step = np.max(np.abs(res.x - best.x))
        best, reweighted = res, True
        if step < 1e-8:
            break
    p = prob.to_params(best.x)
    J = best.jac
    try:
        cov_x = np.linalg.inv(J.T @ J)
    except np.linalg.LinAlgError:
        cov_x = np.linalg.pinv(J.T @ J)
    D = np.diag(np.where(prob.logs, p, 1.0))
    cov = D @ cov_x @ D
    chi2 = float(2.0 * best.cost)
    curves = prob.curves(p)
    k0 = prob.binning.n_side
    derived = {
        "g2_zero_model": 1.0 + p[0],
        "g2_zero_model_err": math.sqrt(max(cov[0, 0], 0.0)),
        "peak_convolved": [float(c[k0]) for c in curves],
        "starts": tried,
        "model_weighted": reweighted,
    }
    if family == "two-gaussian-plus-filter":
        derived["ratio"] = float(p[3])
        derived["ratio_err"] = math.sqrt(max(cov[3, 3], 0.0))
    return FitResult(family, fam.param_names, p, cov, chi2, prob.nres - npar, True, int(best.nfev), opts, derived)


def fit_g2(hist, family: str = "free-gaussian", options: FitOptions | None = None) -> FitResult:
    """Weighted least-squares fit of a Siegert-relation model to a histogram.

    The model is convolved with ``options.jitter_sigma_ps`` (default none),
    tick quantisation and the bin width, so the fitted ``A`` is the bunching
    amplitude of the underlying light: ``g2(0) = 1 + A``.
    """
    opts = options or FitOptions()
    data = fit_data_from_histogram(hist, opts.jitter_sigma_ps, opts.tau_window_ps)
    return fit_datasets([data], family, opts)


# --------------------------------------------------------------------------- bandwidth

@dataclass(frozen=True)
class BandwidthEstimate:
    sigma_tau_ns: float
    sigma_tau_err_ns: float
    sigma_nu_mhz: float | None
    sigma_nu_err_mhz: float | None
    fwhm_mhz: float | None
    fwhm_err_mhz: float | None
    naive_sigma_nu_mhz: float
    naive_sigma_nu_err_mhz: float
    convention: str
    source: str

    def to_dict(self) -> dict:
        return asdict(self)


NAIVE_CONVENTION = "gaussian-excess: sigma_nu = 1/(2 sqrt(2) pi sigma_tau)"
MODEL_CONVENTION = "model-spectrum: moments and half-maximum of fitted S(nu)"


def excess_moments(tau_ps, excess, widths=None, stderr=None) -> tuple:
    """Standard deviation (ps) of the normalised excess ``w = e / sum(e)``
    and its propagated error when per-point errors are given."""
    tau = np.asarray(tau_ps, float)
    e = np.asarray(excess, float)
    wt = np.ones_like(tau) if widths is None else np.asarray(widths, float)
    m0 = np.sum(e * wt)
    if not m0 > 0:
        raise EstimationError("non-positive excess mass; no bunching peak to measure")
    mu = np.sum(e * wt * tau) / m0
    var = np.sum(e * wt * tau * tau) / m0 - mu * mu
    if not var > 0:
        raise EstimationError("non-positive excess variance")
    sig = math.sqrt(var)
    err = float("nan")
    if stderr is not None:
        grad = wt * ((tau - mu) ** 2 - var) / m0 / (2.0 * sig)
        err = float(math.sqrt(np.sum((grad * np.asarray(stderr, float)) ** 2)))
    return sig, err


def _naive(sig_tau_ps: float, err_ps: float) -> tuple:
    s = sig_tau_ps * 1e-12
    nu = 1.0 / (2.0 * math.sqrt(2.0) * math.pi * s)
    return nu * 1e-6, nu * (err_ps / sig_tau_ps) * 1e-6 if math.isfinite(err_ps) else float("nan")


def spectrum_widths(model: SpectralModel, points: int = 2**16) -> tuple:
    """(standard deviation, FWHM) of ``S(nu)`` in Hz, by direct computation."""
    lo, hi = model.extent()
    nu = np.linspace(lo, hi, points)
    s = model.density(nu)
    m0 = np.sum(s)
    mu = np.sum(s * nu) / m0
    std = math.sqrt(max(np.sum(s * (nu - mu) ** 2) / m0, 0.0))
    k = int(np.argmax(s))
    half = 0.5 * s[k]
    above = np.flatnonzero(s >= half)
    i0, i1 = above[0], above[-1]

    def cross(a, b):
        return nu[a] + (half - s[a]) * (nu[b] - nu[a]) / (s[b] - s[a])

    left = cross(i0 - 1, i0) if i0 > 0 else nu[0]
    right = cross(i1, i1 + 1) if i1 < points - 1 else nu[-1]
    return std, right - left


def bandwidth_estimate(source, convention: str = "model", response_sigma_ps: float = 0.0,
                       tau_window_ps: float | None = None) -> BandwidthEstimate:
    """Temporal and spectral width of the bunching peak.

    ``source`` is a g2 histogram or a :class:`FitResult`. For histograms the
    temporal std comes from the bin moments of ``g2 - 1`` (the response
    variance ``response_sigma_ps**2`` is subtracted); only the naive Gaussian
    mapping is then available in frequency. For fits, the temporal std is
    that of the fitted ``|g1|^2`` and the frequency widths are computed from
    the fitted spectrum with errors propagated through the covariance.
    ``convention`` selects which frequency width is reported as primary
    (``"model"`` or ``"naive"``).
    """
    if convention not in ("model", "naive"):
        raise ConfigError("convention must be 'model' or 'naive'")
    if isinstance(source, FitResult):
        return _bandwidth_from_fit(source, convention)
    b = source.binning
    mask = np.isfinite(source.values)
    if tau_window_ps is not None:
        mask &= np.abs(b.tau_ps) <= tau_window_ps
    sig, err = excess_moments(b.tau_ps[mask], source.values[mask] - 1.0, b.widths[mask], source.stderr[mask])
    var = sig * sig - response_sigma_ps ** 2
    if var <= 0:
        raise EstimationError("measured width is below the detector response")
    s = math.sqrt(var)
    err = err * sig / s
    nu, nu_err = _naive(s, err)
    return BandwidthEstimate(s * 1e-3, err * 1e-3, nu if convention == "naive" else None,
                             nu_err if convention == "naive" else None, None, None, nu, nu_err,
                             NAIVE_CONVENTION, "histogram")


def _fit_widths(fit: FitResult, p) -> np.ndarray:
    model = get_family(fit.family).build(p, fit.options)
    std, fwhm = spectrum_widths(model)
    ext = coherence_extent_s(model, 1e-7) * 1e12
    t = np.linspace(-ext, ext, 8001)
    e = np.abs(coherence_from_spectrum(model, t).g1) ** 2
    sig_tau, _ = excess_moments(t, e)
    return np.array([std, fwhm, sig_tau])


def _bandwidth_from_fit(fit: FitResult, convention: str) -> BandwidthEstimate:
    p = np.asarray(fit.params, float)
    base = _fit_widths(fit, p)
    grads = []
    for i in range(len(p)):
        dp = 1e-4 * abs(p[i]) if p[i] != 0 else 1e-6
        q = p.copy()
        q[i] += dp
        grads.append((_fit_widths(fit, q) - base) / dp)
    G = np.array(grads).T
    cov = G @ fit.covariance @ G.T
    errs = np.sqrt(np.clip(np.diag(cov), 0, None))
    std, fwhm, sig_tau = base
    nu, nu_err = _naive(sig_tau, errs[2])
    primary = (std * 1e-6, errs[0] * 1e-6) if convention == "model" else (nu, nu_err)
    return BandwidthEstimate(sig_tau * 1e-3, errs[2] * 1e-3, primary[0], primary[1],
                             fwhm * 1e-6, errs[1] * 1e-6, nu, nu_err,
                             MODEL_CONVENTION if convention == "model" else NAIVE_CONVENTION, fit.family)
