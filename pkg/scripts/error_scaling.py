"""Fitted g2(0) error against photons per coherence time and record length.

The error of a bunching fit follows sigma^2 * N * nbar ~ const, with N the
number of detected tags. This script measures the constant for an ideal
three-detector array so that run lengths can be sized for a target error.
"""
import argparse
import time

from photonstat.correlation import (JitterCalibration, PairAccumulator, all_pairs, average_pairs,
                                    deconvolve_jitter, make_binning)
from photonstat.simsource import DetectorArrayModel, ScenarioConfig, iter_simulate, rate_for_nbar
from photonstat.spectral import FitOptions, SpectralModel, gaussian


def run(nbar, duration, sigma_hz, seed):
    model = SpectralModel((gaussian(sigma_hz),))
    cfg = ScenarioConfig(model, DetectorArrayModel.balanced(3), rate_for_nbar(model, nbar), duration,
                         seed=seed, field_sample_dt_ps=324)
    b = make_binning(cfg.tick_ps, 162, 10e3)
    acc = PairAccumulator(3, all_pairs(3), b)
    for block in iter_simulate(cfg):
        acc.add(block)
    h = average_pairs(list(acc.histograms(cfg.duration_ticks).values()))
    r = deconvolve_jitter(h, JitterCalibration.from_sigmas([0.0] * 3), "free-gaussian",
                          FitOptions(tau_window_ps=10_000), propagate_calibration=False)
    return int(acc.singles.sum()), r.deconvolved_g2_zero, r.deconvolved_err


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--nbar", type=float, nargs="+", default=[1e-4, 1e-3, 1e-2])
    ap.add_argument("--tags", type=float, default=3e6, help="target detected tags per point")
    ap.add_argument("--sigma-hz", type=float, default=260e6)
    ap.add_argument("--seed", type=int, default=1)
    a = ap.parse_args()
    model = SpectralModel((gaussian(a.sigma_hz),))
    print("nbar tags g2 err const seconds")
    for nbar in a.nbar:
        t0 = time.perf_counter()
        n, g, e = run(nbar, a.tags / rate_for_nbar(model, nbar), a.sigma_hz, a.seed)
        print(f"{nbar:g} {n} {g:.4f} {e:.4f} {e * e * n * nbar:.2f} {time.perf_counter() - t0:.1f}")


if __name__ == "__main__":
    main()
