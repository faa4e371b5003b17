"""Broadband preset through detector jitter: measured peak, forward model,
deconvolved amplitude and mixture ratio for several record lengths."""
import argparse
import json

import numpy as np
from dataclasses import replace

from photonstat.config import load_config, scenario_from_config
from photonstat.correlation import (PairAccumulator, all_pairs, average_pairs, deconvolve_jitter, jitter_calibrate,
                                    make_binning)
from photonstat.simsource import iter_simulate, rate_for_nbar, simulate_pulsed_reference
from photonstat.spectral import FitOptions


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--durations", type=float, nargs="+", default=[0.1, 0.2])
    ap.add_argument("--nbar", type=float, default=0.05)
    ap.add_argument("--seed", type=int, default=2)
    a = ap.parse_args()
    base = scenario_from_config(load_config("broadband-paper"))
    base = replace(base, mean_detected_rate_hz=rate_for_nbar(base.spectrum, a.nbar), seed=a.seed,
                   detectors=replace(base.detectors, dark_rate_hz=(0.0,) * 3))
    cal = jitter_calibrate(simulate_pulsed_reference(12_500.0, base.detectors, 1_000_000, seed=a.seed), 12_500.0)
    for T in a.durations:
        sc = replace(base, duration_s=T)
        b = make_binning(sc.tick_ps, 162, 100e3)
        acc = PairAccumulator(3, all_pairs(3), b)
        for block in iter_simulate(sc):
            acc.add(block)
        h = average_pairs(list(acc.histograms(sc.duration_ticks).values()))
        r = deconvolve_jitter(h, cal, "two-gaussian-plus-filter", FitOptions(tau_window_ps=60_000))
        out = dict(duration_s=T, measured=h.zero_bin[0], measured_err=h.zero_bin[1],
                   deconvolved=r.deconvolved_g2_zero, deconvolved_err=r.deconvolved_err,
                   **{k: r.fit.param(k) for k in r.fit.param_names})
        print(json.dumps({k: float(np.round(v, 6)) for k, v in out.items()}))


if __name__ == "__main__":
    main()
