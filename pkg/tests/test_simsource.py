import math

import numpy as np
import pytest
from scipy import stats

from photonstat.correlation import g2_from_stream, make_binning
from photonstat.errors import ConfigError
from photonstat.simsource import (DetectorArrayModel, FieldTrace, IntensityTrace, ScenarioConfig, detect,
                                  simulate, substream, synthesize_field, synthesize_intensity)
from photonstat.spectral import SpectralModel, binned_g2_model, gaussian, lorentzian
from photonstat.tagstream import write_tags


def _acf(x, lags):
    n = x.size
    return np.array([np.mean(x[k:] * np.conj(x[: n - k])) if k else np.mean(x * np.conj(x)) for k in lags])


def test_field_unit_power_and_exponential_intensity():
    m = SpectralModel((gaussian(50e6),))
    f = synthesize_field(m, 2e-3, 648e-12, seed=1)
    I = f.intensity.values
    assert I.mean() == pytest.approx(1.0, abs=0.02)
    # samples one coherence extent apart are effectively independent
    sub = I[::100]
    assert stats.kstest(sub, "expon").pvalue > 0.01


def test_lorentzian_empirical_g1():
    fwhm = 20e6
    m = SpectralModel((lorentzian(fwhm),))
    dt = 1e-9
    f = synthesize_field(m, 0.02, dt, seed=2).values
    lags = np.array([0, 5, 10, 20, 40])
    g1 = np.abs(_acf(f, lags)) / np.mean(np.abs(f) ** 2)
    exact = np.exp(-math.pi * fwhm * lags * dt)
    assert np.max(np.abs(g1 - exact)) < 0.02


def test_siegert_property_field_level():
    m = SpectralModel((gaussian(30e6),))
    f = synthesize_field(m, 0.01, 1e-9, seed=3).values
    I = np.abs(f) ** 2
    n = I.size
    for k in (0, 2, 5, 10, 20):
        prod = I[k:] * I[: n - k]
        g2 = prod.mean() / I.mean() ** 2
        g1 = abs(np.mean(f[k:] * np.conj(f[: n - k]))) / I.mean()
        # blocks of 1000 samples are far longer than the correlation range
        blocks = prod[: (prod.size // 1000) * 1000].reshape(-1, 1000).mean(axis=1) / I.mean() ** 2
        se = blocks.std(ddof=1) / math.sqrt(blocks.size)
        assert abs(g2 - (1 + g1 ** 2)) < 3 * se + 1e-3


def test_periodogram_matches_spectrum():
    m = SpectralModel((gaussian(40e6),))
    dt = 1e-9
    n = 4096
    psd = np.zeros(n)
    for seed in range(100):
        f = synthesize_field(m, n * dt, dt, seed=seed, segment=n).values
        psd += np.abs(np.fft.fft(f)) ** 2
    psd /= psd.sum()
    nu = np.fft.fftfreq(n, d=dt)
    ref = m.density(nu)
    ref /= ref.sum()
    inside = np.abs(nu) < 2 * 40e6
    # 64-bin groups: per-bin periodogram values are exponential, so 100 records
    # leave about 1.25 % noise per group
    idx = np.flatnonzero(inside)
    idx = idx[np.argsort(nu[idx])]
    g = idx[: (idx.size // 64) * 64].reshape(-1, 64)
    rel = psd[g].sum(1) / ref[g].sum(1) - 1
    assert np.max(np.abs(rel)) < 0.05


def test_no_seam_artifacts():
    # short segments force many joins; the coherence must still match the model
    m = SpectralModel((gaussian(20e6),))
    dt = 1e-9
    f = synthesize_field(m, 0.01, dt, seed=4, segment=2**12).values
    lags = np.array([0, 4, 8, 16])
    g1 = np.abs(_acf(f, lags)) / np.mean(np.abs(f) ** 2)
    exact = np.exp(-2 * (math.pi * 20e6 * lags * dt) ** 2)
    assert np.max(np.abs(g1 - exact)) < 0.02
    assert np.mean(np.abs(f) ** 2) == pytest.approx(1.0, abs=0.03)


def test_nyquist_violation():
    with pytest.raises(ConfigError):
        synthesize_intensity(SpectralModel((gaussian(500e6),)), 1e-6, 648e-12, seed=0)
    with pytest.raises(ConfigError):
        ScenarioConfig(SpectralModel((gaussian(500e6),)), DetectorArrayModel.balanced(2), 1e5, 1e-3,
                       field_sample_dt_ps=648)


def test_detect_zero_efficiency_empty():
    arr = DetectorArrayModel.balanced(3, efficiency=0.0)
    tr = IntensityTrace(np.ones(10000), 648.0)
    assert len(detect(tr, arr, 1e9, seed=1)) == 0


def test_detect_constant_intensity_poisson_counts():
    arr = DetectorArrayModel(efficiency=(0.5, 0.25, 1.0), dark_rate_hz=(0, 0, 0), jitter_sigma_ps=(0, 0, 0),
                             dead_time_ps=(0, 0, 0), routing=(0.2, 0.3, 0.5))
    tr = IntensityTrace(np.ones(1_000_000), 648.0)
    rate = 5e7
    T = 1_000_000 * 648e-12
    counts = []
    for seed in range(30):
        counts.append(detect(tr, arr, rate, seed=seed).counts())
    counts = np.array(counts)
    mean = rate * T * np.array([0.1, 0.075, 0.5])
    chi2 = np.sum((counts - mean) ** 2 / mean)
    assert stats.chi2.sf(chi2, counts.size) > 1e-3


def test_thinning_exponential_interarrivals():
    arr = DetectorArrayModel.balanced(1)
    s = detect(FieldTrace(np.ones(500_000, complex), 648.0), arr, 2e7, tick_ps=1.0, seed=5)
    gaps = np.diff(s.timestamps.astype(np.int64)) * 1e-12
    assert stats.kstest(gaps, "expon", args=(0, 1 / 2e7)).pvalue > 0.01


def test_dark_only_flat():
    arr = DetectorArrayModel.balanced(2, dark_rate_hz=2e5)
    s = detect(IntensityTrace(np.ones(10), 648.0 * 1e6), arr, 0.0, seed=2)
    h = g2_from_stream(s, binning=make_binning(81.0, 648, 20000))[(0, 1)]
    chi2 = np.sum(((h.values - 1) / h.stderr) ** 2)
    assert stats.chi2.sf(chi2, h.values.size) > 1e-3


def test_dead_time_enforced():
    arr = DetectorArrayModel.balanced(2, dead_time_ps=20000.0)
    cfg = ScenarioConfig(None, arr, 5e7, 1e-3, source="coherent", seed=3)
    s = simulate(cfg)
    for c in range(2):
        t = s.channel_times(c).astype(np.int64)
        assert np.min(np.diff(t)) * 81.0 >= 20000.0 - 81.0


def test_determinism_and_zero_duration(tmp_path):
    cfg = ScenarioConfig(SpectralModel((gaussian(260e6),), lorentzian(67e6)),
                         DetectorArrayModel.balanced(3, 0.5, 300.0, (358.0, 551.0, 365.0)),
                         2e6, 2e-3, seed=7)
    a, b = tmp_path / "a.bin", tmp_path / "b.bin"
    write_tags(simulate(cfg), a)
    write_tags(simulate(cfg), b)
    assert a.read_bytes() == b.read_bytes()
    empty = ScenarioConfig(cfg.spectrum, cfg.detectors, 2e6, 0.0)
    assert len(simulate(empty)) == 0


def test_substreams_independent():
    a = substream(1, "field", 0).random(4)
    assert np.array_equal(a, substream(1, "field", 0).random(4))
    assert not np.array_equal(a, substream(1, "dark", 0).random(4))
    assert not np.array_equal(a, substream(1, "field", 1).random(4))


def test_config_round_trip():
    cfg = ScenarioConfig(SpectralModel((gaussian(260e6),), lorentzian(67e6)),
                         DetectorArrayModel.balanced(3, 0.23, (350, 180, 265)), 3.7e5, 1.0, seed=1)
    assert ScenarioConfig.from_dict(cfg.to_dict()) == cfg


@pytest.mark.parametrize("method,rate,duration", [("sparse", 1e6, 0.5), ("dense", 1e7, 0.05)])
def test_samplers_match_forward_model(method, rate, duration):
    m = SpectralModel((gaussian(260e6),), lorentzian(67e6))
    cfg = ScenarioConfig(m, DetectorArrayModel.balanced(2), rate, duration, seed=11, method=method)
    s = simulate(cfg)
    b = make_binning(81.0, 648, 30000)
    h = g2_from_stream(s, binning=b)[(0, 1)]
    model = binned_g2_model(m, b)
    chi2 = np.sum(((h.values - model) / h.stderr) ** 2)
    assert stats.chi2.sf(chi2, h.values.size) > 1e-3
