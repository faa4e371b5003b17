"""Spread of KL(P_hat || thermal) with the number of counting windows.

For an unbiased reconstruction the divergence is a chi-square-like noise
floor falling as 1/N. Repeating independent records shows how many windows
a given KL bound needs.
"""
import argparse

import numpy as np

from photonstat.metrics import mean_photon, relative_entropy, thermal_dist
from photonstat.pnr import estimate_ml, measurement_matrix
from photonstat.simsource import DetectorArrayModel, ScenarioConfig, simulate
from photonstat.spectral import SpectralModel, gaussian
from photonstat.tagstream import window_clicks


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--windows", type=float, nargs="+", default=[1e7, 1e8, 1e9])
    ap.add_argument("--repeats", type=int, default=5)
    ap.add_argument("--nbar", type=float, default=1e-2, help="mean photons per window")
    ap.add_argument("--sigma-hz", type=float, default=15e6)
    a = ap.parse_args()
    w_ps = 648.0
    array = DetectorArrayModel.balanced(3)
    M = measurement_matrix(array, w_ps * 1e-12)
    for n in a.windows:
        kls = []
        for seed in range(a.repeats):
            cfg = ScenarioConfig(SpectralModel((gaussian(a.sigma_hz),)), array, a.nbar / (w_ps * 1e-12),
                                 n * w_ps * 1e-12, seed=seed, field_sample_dt_ps=16 * w_ps, method="dense")
            p = estimate_ml(window_clicks(simulate(cfg), 8), M).p
            kls.append(relative_entropy(p, thermal_dist(mean_photon(p), len(p) - 1)))
        kls = np.array(kls)
        print(f"N={n:.0e} KL median={np.median(kls):.2e} max={kls.max():.2e} N*mean={n * kls.mean():.2f}")


if __name__ == "__main__":
    main()
