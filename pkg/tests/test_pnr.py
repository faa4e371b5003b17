import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from photonstat.errors import ConfigError, EstimationError
from photonstat.metrics import thermal_dist
from photonstat.pnr import (MLOptions, estimate_direct, estimate_ml, forward, loglikelihood,
                            measurement_matrix, pattern_matrix, synthetic_stats)
from photonstat.simsource import DetectorArrayModel
from photonstat.tagstream import ClickStatistics

from oracles import brute_matrix


@settings(max_examples=25)
@given(st.integers(1, 3), st.integers(1, 4), st.integers(0, 2**32 - 1))
def test_matrix_matches_enumeration(c, n_max, seed):
    rng = np.random.default_rng(seed)
    q = rng.dirichlet(np.ones(c + 1))[:c]
    d = rng.uniform(0, 0.3, c)
    M = pattern_matrix(q, d, n_max)
    assert np.max(np.abs(M - brute_matrix(q, d, n_max))) < 1e-12
    assert np.allclose(M.sum(axis=0), 1.0, atol=1e-12, rtol=0)
    assert np.all((M >= 0) & (M <= 1))


def test_matrix_simple_cases():
    M = pattern_matrix([1 / 3] * 3, [0, 0, 0], 3)
    assert M[0, 0] == 1.0 and np.all(M[1:, 0] == 0)
    for s in (0b001, 0b010, 0b100):
        assert M[s, 1] == pytest.approx(1 / 3, abs=1e-15)


def test_measurement_matrix_conventions():
    arr = DetectorArrayModel.balanced(3, efficiency=0.23, dark_rate_hz=(350, 180, 265))
    det = measurement_matrix(arr, 648e-12)
    assert det.q.sum() == pytest.approx(1.0)
    src = measurement_matrix(arr, 648e-12, loss_corrected=True)
    assert src.q == pytest.approx(np.full(3, 0.23 / 3))
    assert det.dark_prob[0] == pytest.approx(-np.expm1(-350 * 648e-12))
    with pytest.raises(ConfigError):
        DetectorArrayModel(efficiency=(1.0, 1.0), dark_rate_hz=(0, 0), jitter_sigma_ps=(0, 0),
                           dead_time_ps=(0, 0), routing=(0.7, 0.7))
    with pytest.raises(ConfigError):
        measurement_matrix(arr, 648e-12, n_max=0)


def _matrix(darks=(350.0, 180.0, 265.0), n_max=3):
    return measurement_matrix(DetectorArrayModel.balanced(3, dark_rate_hz=darks), 648e-12, n_max)


P_INTERIOR = np.array([0.7, 0.2, 0.07, 0.03])


def _exact_stats(p, M, windows=10**12):
    # rounded expected counts at a very large window count
    return synthetic_stats(p, M, windows)


def test_direct_noiseless_recovery():
    M = _matrix()
    r = estimate_direct(_exact_stats(P_INTERIOR, M), M)
    assert np.max(np.abs(r.p - P_INTERIOR)) < 1e-10
    assert r.valid


def test_ml_fixed_point_and_agreement_with_direct():
    M = _matrix()
    s = _exact_stats(P_INTERIOR, M)
    ml = estimate_ml(s, M)
    assert np.max(np.abs(ml.p - P_INTERIOR)) < 1e-8
    assert np.max(np.abs(ml.p - estimate_direct(s, M).p)) < 1e-6
    assert ml.diagnostics["converged"]


def test_vacuum_cases():
    M = _matrix(darks=(0, 0, 0))
    s = ClickStatistics(8, 1000, 3, np.array([1000, 0, 0, 0, 0, 0, 0, 0]))
    assert estimate_direct(s, M).p == pytest.approx([1, 0, 0, 0], abs=1e-15)
    assert estimate_ml(s, M).p == pytest.approx([1, 0, 0, 0], abs=1e-10)


def test_errors():
    M = _matrix()
    with pytest.raises(EstimationError):
        estimate_ml(ClickStatistics(8, 0, 3, np.zeros(8, int)), M)
    with pytest.raises(ConfigError):
        estimate_direct(_exact_stats(P_INTERIOR, M), _matrix(n_max=4))
    with pytest.raises(ConfigError):
        estimate_ml(ClickStatistics(8, 2, 2, np.array([1, 1, 0, 0])), M)


def test_likelihood_maximum_at_truth():
    M = _matrix()
    rng = np.random.default_rng(0)
    s = _exact_stats(P_INTERIOR, M, 10**9)
    ll0 = loglikelihood(P_INTERIOR, M, s)
    for _ in range(100):
        pert = np.clip(P_INTERIOR + rng.normal(0, 0.01, 4), 1e-6, None)
        pert /= pert.sum()
        assert loglikelihood(pert, M, s) < ll0


def test_em_increases_likelihood_and_channel_symmetry():
    M = _matrix(darks=(300, 300, 300))
    s = synthetic_stats(P_INTERIOR, M, 10**6, rng=np.random.default_rng(1))
    u = np.full(4, 0.25)
    one = estimate_ml(s, M, MLOptions(max_iter=1)).p
    assert loglikelihood(one, M, s) > loglikelihood(u, M, s) > -np.inf
    # relabel channels 0 <-> 1 in every pattern
    perm = np.array([(m & ~3) | ((m & 1) << 1) | ((m >> 1) & 1) for m in range(8)])
    swapped = ClickStatistics(8, s.window_count, 3, s.counts[np.argsort(perm)])
    assert loglikelihood(P_INTERIOR, M, swapped) == pytest.approx(loglikelihood(P_INTERIOR, M, s), rel=1e-13)


def test_zero_prediction_gives_minus_inf():
    M = _matrix(darks=(0, 0, 0))
    s = ClickStatistics(8, 10, 3, np.array([5, 5, 0, 0, 0, 0, 0, 0]))
    with pytest.warns(RuntimeWarning):
        assert loglikelihood([1, 0, 0, 0], M, s) == -np.inf


def test_error_shrinks_with_windows():
    M = _matrix()
    p = thermal_dist(0.05, 3).p
    errs = []
    for N in (10**5, 4 * 10**5):
        e = [np.abs(estimate_ml(synthetic_stats(p, M, N, rng=np.random.default_rng(k)), M).p[1] - p[1])
             for k in range(40)]
        errs.append(np.sqrt(np.mean(np.square(e))))
    assert errs[1] / errs[0] == pytest.approx(0.5, abs=0.15)


def test_truncation_safety():
    nbar = 1e-2
    p6 = thermal_dist(nbar, 6).p
    assert p6[4:].sum() < nbar ** 4
    M3, M6 = _matrix(n_max=3), _matrix(n_max=6)
    s = synthetic_stats(p6, M6, 10**8, rng=np.random.default_rng(2))
    r3 = estimate_ml(s, M3)
    r6 = estimate_ml(s, M6)
    assert np.all(np.abs(r3.p[:3] - r6.p[:3]) < r3.stderr[:3])


def test_forward_normalised():
    M = _matrix()
    assert forward(P_INTERIOR, M).sum() == pytest.approx(1.0, abs=1e-12)
