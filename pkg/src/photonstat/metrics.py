"""Photon-number metrics and their Monte Carlo uncertainties.

All entropies use the natural logarithm unless a base is given; every
reported entropy carries its base.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
from scipy.special import entr, rel_entr, xlogy

from .errors import ConfigError, EstimationError, UndefinedMetricError
from .pnr import ESTIMATORS, MeasurementMatrix, PhotonNumberDistribution
from .tagstream import ClickStatistics

REFERENCE_N_MAX = 50
LOG_BASES = {"e": 1.0, "2": math.log(2.0), "10": math.log(10.0)}


def _probs(p) -> np.ndarray:
    if isinstance(p, PhotonNumberDistribution):
        return p.p
    return np.asarray(p, dtype=float)


def _truncate(p: np.ndarray, n_max: int) -> np.ndarray:
    p = p[: n_max + 1]
    return p / p.sum()


def thermal_dist(nbar: float, n_max: int = REFERENCE_N_MAX) -> PhotonNumberDistribution:
    """Bose-Einstein law ``nbar^n / (1 + nbar)^(n+1)``, truncated at ``n_max``
    and renormalised."""
    if not nbar >= 0:
        raise ConfigError("nbar must be >= 0")
    n = np.arange(max(n_max, REFERENCE_N_MAX) + 1)
    if nbar > 0:
        p = np.exp(n * math.log(nbar) - (n + 1) * math.log1p(nbar))
    else:
        p = (n == 0).astype(float)
    p = _truncate(p, n_max)
    return PhotonNumberDistribution(p, np.zeros_like(p), "thermal", diagnostics={"nbar": nbar})


def coherent_dist(nbar: float, n_max: int = REFERENCE_N_MAX) -> PhotonNumberDistribution:
    """Poisson law with mean ``nbar``, truncated at ``n_max`` and renormalised."""
    if not nbar >= 0:
        raise ConfigError("nbar must be >= 0")
    from scipy.stats import poisson
    n = np.arange(max(n_max, REFERENCE_N_MAX) + 1)
    p = _truncate(poisson.pmf(n, nbar), n_max)
    return PhotonNumberDistribution(p, np.zeros_like(p), "coherent", diagnostics={"nbar": nbar})


def mean_photon(p) -> float:
    p = _probs(p)
    return float(np.arange(p.size) @ p)


def _factorial_moment(p: np.ndarray) -> float:
    n = np.arange(p.size)
    return float((n * (n - 1)) @ p)


def g2_zero(p) -> float:
    """``sum n(n-1) p(n) / nbar^2``."""
    p = _probs(p)
    m = mean_photon(p)
    if m <= 0:
        raise UndefinedMetricError("g2(0) is undefined for zero mean photon number")
    return _factorial_moment(p) / m**2


def mandel_q(p) -> float:
    """``(var - mean) / mean``, equal to ``nbar (g2(0) - 1)``."""
    p = _probs(p)
    m = mean_photon(p)
    if m <= 0:
        raise UndefinedMetricError("Mandel Q is undefined for zero mean photon number")
    return (_factorial_moment(p) - m * m) / m


def _base(log_base) -> float:
    key = str(log_base)
    if key not in LOG_BASES:
        raise ConfigError(f"log base must be one of {sorted(LOG_BASES)}")
    return LOG_BASES[key]


def shannon_entropy(p, log_base="e") -> float:
    """``-sum p log p`` with ``0 log 0 = 0``."""
    return float(entr(_probs(p)).sum() / _base(log_base))


def thermal_entropy(nbar: float, log_base="e") -> float:
    """Closed form ``(nbar + 1) log(nbar + 1) - nbar log nbar``."""
    return float((xlogy(nbar + 1.0, nbar + 1.0) - xlogy(nbar, nbar)) / _base(log_base))


def relative_entropy(p, p_ref, log_base="e") -> float:
    """``sum p log(p / p_ref)``; ``+inf`` (with a warning) when ``p`` has mass
    where ``p_ref`` has none. Shorter vectors are zero-padded."""
    a, b = _probs(p), _probs(p_ref)
    n = max(a.size, b.size)
    a = np.pad(a, (0, n - a.size))
    b = np.pad(b, (0, n - b.size))
    bad = (a > 0) & (b <= 0)
    if np.any(bad):
        warnings.warn(f"support violation at n = {np.flatnonzero(bad).tolist()}", RuntimeWarning, stacklevel=2)
        return math.inf
    return float(rel_entr(a, b).sum() / _base(log_base))


METRIC_NAMES = ("nbar", "g2_zero", "mandel_q", "shannon_entropy", "kl_vs_thermal", "kl_vs_coherent")


def metric_values(p, log_base="e") -> dict:
    """All scalar metrics of one distribution; references share its mean and ``n_max``."""
    q = _probs(p)
    m = mean_photon(q)
    n_max = q.size - 1
    out = {"nbar": m, "shannon_entropy": shannon_entropy(q, log_base)}
    try:
        out["g2_zero"] = g2_zero(q)
        out["mandel_q"] = mandel_q(q)
    except UndefinedMetricError:
        out["g2_zero"] = math.nan
        out["mandel_q"] = math.nan
    # references need a non-negative mean; invalid direct inversions may not have one
    mr = max(m, 0.0)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        valid = np.all(q >= 0)
        out["kl_vs_thermal"] = relative_entropy(q, thermal_dist(mr, n_max), log_base) if valid else math.nan
        out["kl_vs_coherent"] = relative_entropy(q, coherent_dist(mr, n_max), log_base) if valid else math.nan
    return out


@dataclass(frozen=True)
class MetricsReport:
    """Metric values with Monte Carlo spreads and provenance."""

    values: Mapping
    stderr: Mapping
    log_base: str = "e"
    estimator: str = "ml"
    trials: int = 0
    seed: int | None = None
    failed_trials: int = 0
    distribution: PhotonNumberDistribution | None = field(default=None, compare=False)
    trial_values: np.ndarray | None = field(default=None, compare=False, repr=False)

    def __getattr__(self, name):
        if name in METRIC_NAMES:
            return self.values[name]
        raise AttributeError(name)

    def to_dict(self) -> dict:
        return {
            "values": {k: float(v) for k, v in self.values.items()},
            "stderr": {k: float(v) for k, v in self.stderr.items()},
            "entropy_log_base": self.log_base,
            "estimator": self.estimator,
            "trials": self.trials,
            "seed": self.seed,
            "failed_trials": self.failed_trials,
            "distribution": None if self.distribution is None else self.distribution.to_dict(),
        }

    def trial_rows(self) -> list:
        if self.trial_values is None:
            return []
        return [tuple(float(x) for x in row) for row in self.trial_values]


def metrics_report(p, log_base="e") -> MetricsReport:
    """Report without resampling (errors are zero)."""
    v = metric_values(p, log_base)
    est = p.estimator if isinstance(p, PhotonNumberDistribution) else "given"
    return MetricsReport(v, {k: 0.0 for k in v}, str(log_base), est,
                         distribution=p if isinstance(p, PhotonNumberDistribution) else None)


@dataclass(frozen=True)
class Pipeline:
    """Estimator and measurement matrix applied to each resampled trial."""

    matrix: MeasurementMatrix
    estimator: str = "ml"
    log_base: str = "e"

    def run(self, stats: ClickStatistics) -> PhotonNumberDistribution:
        if self.estimator not in ESTIMATORS:
            raise ConfigError(f"estimator must be one of {sorted(ESTIMATORS)}")
        return ESTIMATORS[self.estimator](stats, self.matrix)


def monte_carlo_errors(stats: ClickStatistics, pipeline: Pipeline, trials: int = 200, seed: int = 0,
                       keep_trials: bool = False) -> MetricsReport:
    """Resample pattern counts multinomially (fixed window count), rerun the
    estimator and metrics per trial and report the spread.

    Trial ``k`` draws from its own substream, so the report depends only on
    ``(stats, pipeline, trials, seed)``. More than 1 % failed trials raise
    :class:`EstimationError`.
    """
    if trials < 100:
        raise ConfigError("monte carlo needs at least 100 trials")
    base = pipeline.run(stats)
    values = metric_values(base, pipeline.log_base)
    probs = stats.frequencies
    rows = np.full((trials, len(METRIC_NAMES)), np.nan)
    failed = 0
    children = np.random.SeedSequence(seed).spawn(trials)
    for k, ss in enumerate(children):
        rng = np.random.Generator(np.random.Philox(ss))
        resampled = stats.with_counts(rng.multinomial(stats.window_count, probs))
        try:
            v = metric_values(pipeline.run(resampled), pipeline.log_base)
        except (EstimationError, AssertionError, np.linalg.LinAlgError):
            failed += 1
            continue
        rows[k] = [v[name] for name in METRIC_NAMES]
    if failed > 0.01 * trials:
        raise EstimationError(f"{failed} of {trials} Monte Carlo trials failed", {"failed": failed})
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        spread = np.nanstd(rows, axis=0, ddof=1)
    return MetricsReport(values, dict(zip(METRIC_NAMES, map(float, spread))), str(pipeline.log_base),
                         pipeline.estimator, trials, seed, failed, base, rows if keep_trials else None)
