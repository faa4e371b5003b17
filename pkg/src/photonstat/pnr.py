"""Photon-number reconstruction from multiplexed click statistics.

A window holding ``n`` photons is routed photon by photon to channel ``i``
with probability ``q_i`` (lost with ``1 - sum q``); channel ``i`` also
fires spontaneously with probability ``d_i``. ``M[S, n]`` is the
probability of the exact click pattern ``S``; the observed pattern
frequencies are ``f = M p``. Two estimators invert this relation:
direct inversion of the multiplicity-aggregated system and the
expectation-maximisation maximum-likelihood estimate.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .errors import ConfigError, EstimationError
from .simsource import DetectorArrayModel
from .tagstream import ClickStatistics, popcounts

DEFAULT_N_MAX = 3


@dataclass(frozen=True)
class MeasurementMatrix:
    """Click-pattern probabilities ``M[mask, n]`` for ``n = 0 .. n_max``."""

    entries: np.ndarray
    q: np.ndarray
    dark_prob: np.ndarray
    window_s: float
    loss_corrected: bool = False
    array: DetectorArrayModel | None = field(default=None, compare=False)

    @property
    def n_max(self) -> int:
        return self.entries.shape[1] - 1

    @property
    def channel_count(self) -> int:
        return self.q.size

    def aggregated(self) -> np.ndarray:
        """``A[m, n]``: probability of ``m`` clicking channels given ``n`` photons."""
        pop = popcounts(self.channel_count)
        a = np.zeros((self.channel_count + 1, self.entries.shape[1]))
        np.add.at(a, pop, self.entries)
        return a

    def to_dict(self) -> dict:
        return {"q": self.q.tolist(), "dark_prob": self.dark_prob.tolist(), "window_s": self.window_s,
                "n_max": self.n_max, "loss_corrected": self.loss_corrected}


def pattern_matrix(q, dark_prob, n_max: int) -> np.ndarray:
    """Exact-pattern probabilities by inclusion-exclusion over sub-patterns.

    The probability that every channel outside ``T`` stays silent is
    ``prod_{i not in T} (1 - d_i) * (1 - sum_{i not in T} q_i) ** n``.
    """
    q = np.asarray(q, dtype=float)
    d = np.asarray(dark_prob, dtype=float)
    c = q.size
    full = (1 << c) - 1
    n = np.arange(n_max + 1)
    silent = np.empty((1 << c, n_max + 1))
    for t in range(1 << c):
        out = [i for i in range(c) if (full ^ t) >> i & 1]
        base = max(1.0 - q[out].sum(), 0.0)
        silent[t] = np.prod(1.0 - d[out]) * base ** n
    m = np.zeros_like(silent)
    for s in range(1 << c):
        t = s
        while True:
            sign = -1.0 if bin(s ^ t).count("1") & 1 else 1.0
            m[s] += sign * silent[t]
            if t == 0:
                break
            t = (t - 1) & s
    return np.clip(m, 0.0, 1.0)


def measurement_matrix(array: DetectorArrayModel, window_s: float, n_max: int = DEFAULT_N_MAX,
                       loss_corrected: bool = False) -> MeasurementMatrix:
    """Build ``M`` for a detector array and click window.

    With ``loss_corrected=False`` (default) the efficiencies and routing
    losses are absorbed: ``q`` is rescaled to sum to one, so ``n`` counts
    photons that were detected. With ``loss_corrected=True`` ``q_i = r_i
    eta_i`` and ``n`` counts photons incident on the splitter.
    """
    if n_max < 1:
        raise ConfigError("n_max must be >= 1")
    if not window_s > 0:
        raise ConfigError("window must be > 0")
    q = array.q
    if q.sum() > 1.0 + 1e-12:
        raise ConfigError("sum of q_i exceeds 1")
    if not loss_corrected:
        if q.sum() <= 0:
            raise ConfigError("no channel can detect photons")
        q = q / q.sum()
    d = -np.expm1(-np.asarray(array.dark_rate_hz) * window_s)
    return MeasurementMatrix(pattern_matrix(q, d, n_max), q, d, float(window_s), loss_corrected, array)


@dataclass(frozen=True)
class PhotonNumberDistribution:
    """``p(n)`` for ``n = 0 .. n_max`` with per-element uncertainties."""

    p: np.ndarray
    stderr: np.ndarray | None = None
    estimator: str = "model"
    covariance: np.ndarray | None = None
    diagnostics: Mapping = field(default_factory=dict, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "p", np.asarray(self.p, dtype=float))
        if self.p.ndim != 1 or self.p.size < 1:
            raise ConfigError("p must be a non-empty vector")

    @property
    def n_max(self) -> int:
        return self.p.size - 1

    @property
    def valid(self) -> bool:
        return bool(np.all(self.p >= 0) and abs(self.p.sum() - 1.0) < 1e-9)

    def csv_rows(self) -> list:
        se = self.stderr if self.stderr is not None else np.full(self.p.size, np.nan)
        return [(n, float(v), float(e)) for n, (v, e) in enumerate(zip(self.p, se))]

    def to_dict(self) -> dict:
        return {
            "estimator": self.estimator,
            "n_max": self.n_max,
            "p": self.p.tolist(),
            "stderr": None if self.stderr is None else self.stderr.tolist(),
            "valid": self.valid,
            "diagnostics": dict(self.diagnostics),
        }


def _check(stats: ClickStatistics, M: MeasurementMatrix) -> None:
    if stats.channel_count != M.channel_count:
        raise ConfigError("click statistics and measurement matrix disagree on channel count")
    if stats.window_count <= 0:
        raise EstimationError("no windows observed")


def estimate_direct(stats: ClickStatistics, M: MeasurementMatrix) -> PhotonNumberDistribution:
    """Solve ``f_m = sum_n A[m, n] p(n)`` for multiplicity frequencies ``f_m``.

    Negative components are kept and flagged through ``valid``. The
    covariance follows linearly from the multinomial covariance of ``f``.
    """
    _check(stats, M)
    A = M.aggregated()
    if M.n_max + 1 > A.shape[0]:
        raise ConfigError(f"direct inversion needs n_max <= {A.shape[0] - 1} for {M.channel_count} channels")
    N = stats.window_count
    f = stats.multiplicity_counts() / N
    if M.n_max + 1 == A.shape[0]:
        if np.linalg.cond(A) > 1e14:
            raise EstimationError("aggregated measurement matrix is singular", {"cond": float(np.linalg.cond(A))})
        G = np.linalg.inv(A)
    else:
        G = np.linalg.pinv(A)
        if not np.all(np.isfinite(G)) or np.linalg.matrix_rank(A) < A.shape[1]:
            raise EstimationError("aggregated measurement matrix is rank deficient")
    p = G @ f
    cov_f = (np.diag(f) - np.outer(f, f)) / N
    cov = G @ cov_f @ G.T
    resid = A @ p - f
    return PhotonNumberDistribution(
        p, np.sqrt(np.clip(np.diag(cov), 0, None)), "direct", cov,
        {"residual_norm": float(np.linalg.norm(resid)), "sum_minus_one": float(p.sum() - 1.0),
         "valid": bool(np.all(p >= 0)), "windows": int(N)})


def loglikelihood(p, M: MeasurementMatrix, stats: ClickStatistics) -> float:
    """``sum_S count_S log((M p)_S)``; ``-inf`` when an observed pattern has
    zero predicted probability (a warning names the pattern)."""
    p = np.asarray(p, dtype=float)
    pred = M.entries @ p
    obs = stats.counts > 0
    bad = obs & (pred <= 0)
    if np.any(bad):
        warnings.warn(f"observed patterns {np.flatnonzero(bad).tolist()} have zero predicted probability",
                      RuntimeWarning, stacklevel=2)
        return -math.inf
    return float(np.sum(stats.counts[obs] * np.log(pred[obs])))


@dataclass(frozen=True)
class MLOptions:
    tol: float = 1e-12
    max_iter: int = 100_000
    check_monotone: bool = True
    start: tuple | None = None


def _fisher_cov(p: np.ndarray, M: np.ndarray, counts: np.ndarray) -> np.ndarray:
    """Inverse observed information on the simplex, parameterised by p(1..)."""
    N = counts.sum()
    pred = M @ p
    keep = pred > 0
    D = (M[:, 1:] - M[:, :1])[keep]
    info = N * (D.T / pred[keep]) @ D
    try:
        sub = np.linalg.inv(info)
    except np.linalg.LinAlgError:
        sub = np.linalg.pinv(info)
    J = np.vstack([-np.ones(p.size - 1), np.eye(p.size - 1)])
    return J @ sub @ J.T


def estimate_ml(stats: ClickStatistics, M: MeasurementMatrix, opts: MLOptions | None = None) -> PhotonNumberDistribution:
    """Expectation-maximisation ML estimate of ``p`` from a uniform start.

    Stops when ``max |p_new - p| < tol`` or after ``max_iter`` updates. The
    log-likelihood is checked to be non-decreasing after every update.
    Reported errors come from the inverse Fisher information; use
    :func:`photonstat.metrics.monte_carlo_errors` for resampled errors.
    """
    opts = opts or MLOptions()
    _check(stats, M)
    counts = stats.counts.astype(float)
    if counts.sum() <= 0:
        raise EstimationError("all pattern counts are zero")
    obs = counts > 0
    f = counts[obs] / counts.sum()
    E = M.entries[obs]
    k = M.n_max + 1
    p = np.full(k, 1.0 / k) if opts.start is None else np.asarray(opts.start, float) / np.sum(opts.start)
    ll = -math.inf
    converged = False
    it = 0
    for it in range(1, opts.max_iter + 1):
        pred = E @ p
        if np.any(pred <= 0):
            raise EstimationError("EM reached a point with zero likelihood", {"p": p.tolist(), "iterations": it})
        new = p * (E.T @ (f / pred))
        new /= new.sum()
        if opts.check_monotone:
            ll_new = float(f @ np.log(E @ new))
            if ll_new < ll - 1e-12 * max(1.0, abs(ll)):
                raise AssertionError(f"EM log-likelihood decreased at iteration {it}: {ll} -> {ll_new}")
            ll = ll_new
        step = np.max(np.abs(new - p))
        p = new
        if step < opts.tol:
            converged = True
            break
    cov = _fisher_cov(p, M.entries, counts)
    return PhotonNumberDistribution(
        p, np.sqrt(np.clip(np.diag(cov), 0, None)), "ml", cov,
        {"iterations": it, "converged": converged, "loglikelihood": loglikelihood(p, M, stats),
         "windows": int(stats.window_count)})


def forward(p, M: MeasurementMatrix) -> np.ndarray:
    """Pattern probabilities ``M p``."""
    return M.entries @ np.asarray(p, dtype=float)


def synthetic_stats(p, M: MeasurementMatrix, windows: int, window_ticks: int = 8,
                    rng: np.random.Generator | None = None) -> ClickStatistics:
    """Pattern counts drawn multinomially from ``M p`` (``rng=None`` gives
    the rounded expected counts, useful as a noiseless oracle)."""
    probs = forward(p, M)
    probs = np.clip(probs, 0, None)
    probs /= probs.sum()
    if rng is None:
        counts = np.round(probs * windows).astype(np.int64)
    else:
        counts = rng.multinomial(windows, probs)
    return ClickStatistics(window_ticks, int(counts.sum()), M.channel_count, counts)


ESTIMATORS = {"direct": estimate_direct, "ml": estimate_ml}
