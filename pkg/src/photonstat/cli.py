"""Command-line interface.

Every command writes a JSON run manifest next to its first output (or to
``--manifest``). Exit codes: 0 success, 2 configuration error, 3 data
integrity or format error, 4 estimation failure.
"""

from __future__ import annotations

import argparse
import math
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .config import (AnalysisConfig, CalibrationConfig, apply_overrides, detectors_from_config, get_path,
                     load_config, scenario_from_config, set_path, _parse_value)
from .correlation import (JitterCalibration, PairAccumulator, all_pairs, average_pairs, dark_correct,
                          deconvolve_jitter, g2_from_stream, jitter_calibrate, make_binning)
from .errors import ConfigError, EstimationError, FormatError, IntegrityError, PhotonstatError
from .io import RunManifest, read_histogram_csv, read_json, write_histogram_csv, write_json, write_rows
from .metrics import METRIC_NAMES, Pipeline, metrics_report, monte_carlo_errors
from .pnr import ESTIMATORS, measurement_matrix
from .simsource import DetectorArrayModel, iter_simulate, simulate_pulsed_reference
from .spectral import FitOptions, bandwidth_estimate, fit_g2, spectrum_widths
from .tagstream import DEFAULT_TICK_PS, ClickStatistics, TagWriter, read_tags, window_clicks, write_tags

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_ESTIMATION = 0, 2, 3, 4


def _set_threads(n: int | None) -> int:
    if n is None:
        env = os.environ.get("PHOTONSTAT_THREADS")
        n = int(env) if env else None
    if n is None:
        return 0
    if n < 1:
        raise ConfigError("thread count must be >= 1")
    import numba
    numba.set_num_threads(min(n, numba.config.NUMBA_NUM_THREADS))
    return n


def _ints(text: str) -> list:
    return [int(x) for x in text.split(",") if x.strip()]


def _floats(text: str) -> list:
    return [float(x) for x in text.split(",") if x.strip()]


def _pairs(text: str | None):
    if not text:
        return None
    out = []
    for item in text.split(","):
        a, b = item.split("-")
        out.append((int(a), int(b)))
    return out


# --------------------------------------------------------------------------- commands

def cmd_simulate(a) -> dict:
    cfg = apply_overrides(load_config(a.config), a.set)
    stats = {}
    if a.pulsed_reference:
        cal = CalibrationConfig.from_config(cfg)
        det = detectors_from_config(cfg)
        sc = cfg.get("scenario", {})
        tick, seed = float(sc.get("tick_ps", DEFAULT_TICK_PS)), int(sc.get("seed", 0))
        stream = simulate_pulsed_reference(cal.period_ps, det, cal.counts_per_channel, seed, tick)
        write_tags(stream, a.out)
        count = len(stream)
        seed_used = seed
    else:
        sc = scenario_from_config(cfg)
        blocks = iter_simulate(sc, stats)
        first = next(blocks)
        with TagWriter(a.out, first.header) as w:
            w.write(first)
            for b in blocks:
                w.write(b)
            count = w.count
        seed_used = sc.seed
        stats["method"] = sc.resolved_method()
        stats["incident_rate_hz"] = sc.incident_rate_hz
    return {"outputs": {"tags": a.out}, "config": cfg, "seed": seed_used,
            "info": {"tags": count, **stats}}


def _g2_options(a) -> dict:
    return {"bin_ps": a.bin_ps, "tau_max_ps": a.tau_max_ps, "pairs": a.pairs, "dark_rates_hz": a.dark_rates,
            "chunk_ticks": a.chunk_ticks, "fit": a.fit, "jitter_ps": a.jitter_ps,
            "tau_window_ps": a.tau_window_ps}


def cmd_g2(a) -> dict:
    stream = read_tags(a.tags)
    b = make_binning(stream.tick_ps, a.bin_ps, a.tau_max_ps)
    hists = g2_from_stream(stream, _pairs(a.pairs), b, a.chunk_ticks)
    raw = average_pairs(list(hists.values()))
    h = raw
    summary = {"raw": raw.summary(), "per_pair": {}}
    if a.dark_rates:
        h = dark_correct(raw, _floats(a.dark_rates))
    for c in (h.components if h.pair_averaged else (h,)):
        v, e = c.zero_bin
        summary["per_pair"][c.pair_label()] = {"g2_zero_bin": v, "g2_zero_bin_err": e}
    summary["result"] = h.summary()
    try:
        fw = h.far_wing(0.5 * h.tau_max_ps)
        summary["result"]["far_wing_mean"], summary["result"]["far_wing_err"] = fw
    except EstimationError:
        pass
    if a.fit:
        fit = fit_g2(h, a.fit, FitOptions(jitter_sigma_ps=a.jitter_ps, tau_window_ps=a.tau_window_ps))
        summary["fit"] = fit.to_dict()
        summary["result"]["g2_zero_fit"] = 1.0 + fit.amplitude
        summary["result"]["g2_zero_fit_err"] = fit.param_err("A")
    write_histogram_csv(a.out_csv, h)
    write_json(a.out_json, summary)
    return {"outputs": {"csv": a.out_csv, "json": a.out_json}, "inputs": {"tags": a.tags},
            "config": _g2_options(a)}


def _detector_model(spec: str | None, channels: int) -> DetectorArrayModel:
    if spec:
        return detectors_from_config(load_config(spec))
    return DetectorArrayModel.balanced(channels)


def _click_stats(stream, window_ps: float) -> ClickStatistics:
    w = max(1, int(round(window_ps / stream.tick_ps)))
    return window_clicks(stream, w)


def cmd_pnr(a) -> dict:
    stream = read_tags(a.tags)
    det = _detector_model(a.detectors, stream.channel_count)
    if det.channel_count != stream.channel_count:
        raise ConfigError(f"detector model has {det.channel_count} channels, stream has {stream.channel_count}")
    stats = _click_stats(stream, a.window_ps)
    window_s = stats.window_ticks * stream.tick_ps * 1e-12
    M = measurement_matrix(det, window_s, a.n_max, a.loss_corrected)
    names = list(ESTIMATORS) if a.estimator == "both" else [a.estimator]
    dists = {n: ESTIMATORS[n](stats, M) for n in names}
    doc = {"click_statistics": {"window_ticks": stats.window_ticks, "window_count": stats.window_count,
                                "channel_count": stats.channel_count, "counts": stats.counts.tolist(),
                                "tick_ps": stream.tick_ps},
           "detectors": det.to_dict(), "matrix": M.to_dict(),
           "distributions": {n: d.to_dict() for n, d in dists.items()}}
    if len(dists) == 2:
        d, m = dists["direct"], dists["ml"]
        doc["difference"] = {"ml_minus_direct": (m.p - d.p).tolist(),
                             "combined_sigma": np.hypot(m.stderr, d.stderr).tolist()}
    rows = [(n, k, p, e) for n, d in dists.items() for k, p, e in d.csv_rows()]
    write_rows(a.out_csv, ("estimator", "n", "p", "stderr"), rows)
    write_json(a.out_json, doc)
    return {"outputs": {"csv": a.out_csv, "json": a.out_json}, "inputs": {"tags": a.tags},
            "config": {"window_ps": a.window_ps, "n_max": a.n_max, "estimator": a.estimator,
                       "detectors": det.to_dict(), "loss_corrected": a.loss_corrected}}


def cmd_metrics(a) -> dict:
    src = Path(a.input)
    if src.suffix == ".json":
        doc = read_json(src)
        try:
            cs = doc["click_statistics"]
            stats = ClickStatistics(cs["window_ticks"], cs["window_count"], cs["channel_count"], cs["counts"])
            det = DetectorArrayModel.from_dict(doc["detectors"])
            mat = doc["matrix"]
            M = measurement_matrix(det, mat["window_s"], mat["n_max"], mat["loss_corrected"])
        except KeyError as exc:
            raise FormatError(f"{src}: not a pnr report (missing {exc})") from None
    else:
        stream = read_tags(src)
        det = _detector_model(a.detectors, stream.channel_count)
        stats = _click_stats(stream, a.window_ps)
        M = measurement_matrix(det, stats.window_ticks * stream.tick_ps * 1e-12, a.n_max, a.loss_corrected)
    pipe = Pipeline(M, a.estimator, a.log_base)
    if a.trials == 0:
        rep = metrics_report(pipe.run(stats), a.log_base)
    else:
        rep = monte_carlo_errors(stats, pipe, a.trials, a.seed, keep_trials=bool(a.trials_csv))
    write_json(a.out_json, rep.to_dict())
    outputs = {"json": a.out_json}
    if a.trials_csv:
        write_rows(a.trials_csv, ("trial",) + METRIC_NAMES, [(k, *r) for k, r in enumerate(rep.trial_rows())])
        outputs["trials_csv"] = a.trials_csv
    return {"outputs": outputs, "inputs": {"input": a.input}, "seed": a.seed,
            "config": {"trials": a.trials, "estimator": a.estimator, "log_base": a.log_base}}


def _fit_options(a, jitter=None) -> FitOptions:
    kw = {"tau_window_ps": a.tau_window_ps, "jitter_sigma_ps": jitter}
    if a.doppler_sigma_hz is not None:
        kw["doppler_sigma_hz"] = a.doppler_sigma_hz
    if a.filter_fwhm_hz is not None:
        kw["filter_fwhm_hz"] = a.filter_fwhm_hz
    return FitOptions(**kw)


def _fit_report(fit) -> dict:
    out = {"fit": fit.to_dict()}
    bw = bandwidth_estimate(fit, "model")
    out["bandwidth"] = bw.to_dict()
    std, fwhm = spectrum_widths(fit.model)
    out["fitted_spectrum"] = {"std_hz": std, "fwhm_hz": fwhm}
    return out


def cmd_fit(a) -> dict:
    h = read_histogram_csv(a.histogram)
    fit = fit_g2(h, a.family, _fit_options(a, a.jitter_ps))
    doc = _fit_report(fit)
    doc["g2_zero_fit"] = 1.0 + fit.amplitude
    doc["g2_zero_fit_err"] = fit.param_err("A")
    doc["g2_zero_bin"], doc["g2_zero_bin_err"] = h.zero_bin
    write_json(a.out_json, doc)
    return {"outputs": {"json": a.out_json}, "inputs": {"histogram": a.histogram},
            "config": {"family": a.family, "jitter_ps": a.jitter_ps, "tau_window_ps": a.tau_window_ps}}


def _calibration(a) -> JitterCalibration:
    if a.calibration:
        return JitterCalibration.from_dict(read_json(a.calibration))
    if a.sigmas:
        return JitterCalibration.from_sigmas(_floats(a.sigmas))
    raise ConfigError("give --calibration or --sigmas")


def cmd_deconv(a) -> dict:
    h = read_histogram_csv(a.histogram)
    cal = _calibration(a)
    res = deconvolve_jitter(h, cal, a.family, _fit_options(a), a.method, per_pair=not a.no_per_pair)
    doc = res.to_dict()
    if res.fit is not None:
        doc.update(_fit_report(res.fit))
    write_json(a.out_json, doc)
    return {"outputs": {"json": a.out_json}, "inputs": {"histogram": a.histogram, "calibration": a.calibration},
            "config": {"family": a.family, "method": a.method, "sigmas": cal.sigma_ps.tolist()}}


def cmd_jitter_cal(a) -> dict:
    stream = read_tags(a.tags)
    cal = jitter_calibrate(stream, a.period_ps, a.min_counts)
    write_json(a.out_json, cal.to_dict())
    return {"outputs": {"json": a.out_json}, "inputs": {"tags": a.tags},
            "config": {"period_ps": a.period_ps, "min_counts": a.min_counts}}


def sweep_point(cfg: dict) -> dict:
    """Simulate one configuration and summarise rate, bunching and bandwidth."""
    sc = scenario_from_config(cfg)
    an = AnalysisConfig.from_config(cfg)
    b = make_binning(sc.tick_ps, an.bin_ps, an.tau_max_ps)
    acc = PairAccumulator(sc.detectors.channel_count, all_pairs(sc.detectors.channel_count), b)
    for block in iter_simulate(sc):
        acc.add(block)
    h = average_pairs(list(acc.histograms(sc.duration_ticks).values()))
    sig = np.array(sc.detectors.jitter_sigma_ps)
    opts = FitOptions(tau_window_ps=an.fit_tau_window_ps)
    row = {"count_rate_hz": float(acc.singles.sum()) / sc.duration_s if sc.duration_s > 0 else math.nan,
           "g2_zero_bin": h.zero_bin[0], "g2_zero_bin_err": h.zero_bin[1]}
    if np.any(sig > 0):
        res = deconvolve_jitter(h, JitterCalibration.from_sigmas(sig), an.family, opts, propagate_calibration=False)
        fit = res.fit
        row["g2_zero_deconvolved"], row["g2_zero_deconvolved_err"] = res.deconvolved_g2_zero, res.deconvolved_err
    else:
        fit = fit_g2(h, an.family, opts)
        row["g2_zero_deconvolved"], row["g2_zero_deconvolved_err"] = 1.0 + fit.amplitude, fit.param_err("A")
    bw = bandwidth_estimate(fit, "model")
    row.update({"sigma_nu_mhz": bw.sigma_nu_mhz, "sigma_nu_err_mhz": bw.sigma_nu_err_mhz,
                "fwhm_mhz": bw.fwhm_mhz, "sigma_tau_ns": bw.sigma_tau_ns})
    return row


SWEEP_COLUMNS = ("value", "status", "count_rate_hz", "g2_zero_bin", "g2_zero_bin_err", "g2_zero_deconvolved",
                 "g2_zero_deconvolved_err", "sigma_nu_mhz", "sigma_nu_err_mhz", "fwhm_mhz", "sigma_tau_ns")


def cmd_sweep(a) -> dict:
    cfg = apply_overrides(load_config(a.config), a.set)
    get_path(cfg, a.axis)
    values = [_parse_value(v.strip()) for v in a.values.split(",") if v.strip()]
    rows = []
    for v in values:
        try:
            r = sweep_point(set_path(cfg, a.axis, v))
            r["status"] = "ok"
        except PhotonstatError as exc:
            r = {"status": f"{type(exc).__name__}: {exc}"}
        r["value"] = v
        rows.append(tuple(r.get(c, "") for c in SWEEP_COLUMNS))
    write_rows(a.out_csv, SWEEP_COLUMNS, rows)
    return {"outputs": {"csv": a.out_csv}, "config": cfg,
            "seed": int(cfg.get("scenario", {}).get("seed", 0))}


HANDLERS = {"simulate": cmd_simulate, "g2": cmd_g2, "pnr": cmd_pnr, "metrics": cmd_metrics, "fit": cmd_fit,
            "deconv": cmd_deconv, "jitter-cal": cmd_jitter_cal, "sweep": cmd_sweep}
OUTPUT_ARGS = {"simulate": ("out",), "g2": ("out_csv", "out_json"), "pnr": ("out_csv", "out_json"),
               "metrics": ("out_json", "trials_csv"), "fit": ("out_json",), "deconv": ("out_json",),
               "jitter-cal": ("out_json",), "sweep": ("out_csv",)}


# --------------------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="photonstat", description="Thermal-light photon statistics toolkit.")
    p.add_argument("--version", action="version", version=f"photonstat {__version__}")
    p.add_argument("--threads", type=int, default=None, help="worker cap (also PHOTONSTAT_THREADS)")
    p.add_argument("--manifest", default=None, help="manifest path (default: <first output>.manifest.json)")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="simulate a scenario to a tag file")
    s.add_argument("config", help="TOML file, preset name or run manifest")
    s.add_argument("--out", required=True)
    s.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    s.add_argument("--pulsed-reference", action="store_true", help="simulate the jitter reference instead")

    s = sub.add_parser("g2", help="pair-averaged g2 histogram")
    s.add_argument("tags")
    s.add_argument("--out-csv", required=True)
    s.add_argument("--out-json", required=True)
    s.add_argument("--bin-ps", type=float, default=648.0)
    s.add_argument("--tau-max-ps", type=float, default=200e3)
    s.add_argument("--pairs", default=None, help="e.g. 0-1,0-2")
    s.add_argument("--dark-rates", default=None, help="per-channel dark rates in Hz; enables correction")
    s.add_argument("--chunk-ticks", type=int, default=None)
    s.add_argument("--fit", default=None, help="model family to fit")
    s.add_argument("--jitter-ps", type=float, default=None)
    s.add_argument("--tau-window-ps", type=float, default=None)

    s = sub.add_parser("pnr", help="photon-number distribution from click patterns")
    s.add_argument("tags")
    s.add_argument("--out-csv", required=True)
    s.add_argument("--out-json", required=True)
    s.add_argument("--window-ps", type=float, default=648.0)
    s.add_argument("--estimator", choices=("ml", "direct", "both"), default="ml")
    s.add_argument("--n-max", type=int, default=3)
    s.add_argument("--detectors", default=None, help="config or preset whose [detectors] table to use")
    s.add_argument("--loss-corrected", action="store_true")

    s = sub.add_parser("metrics", help="photon-number metrics with Monte Carlo errors")
    s.add_argument("input", help="pnr JSON report or tag file")
    s.add_argument("--out-json", required=True)
    s.add_argument("--trials", type=int, default=200)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--log-base", choices=("e", "2", "10"), default="e")
    s.add_argument("--estimator", choices=("ml", "direct"), default="ml")
    s.add_argument("--window-ps", type=float, default=648.0)
    s.add_argument("--n-max", type=int, default=3)
    s.add_argument("--detectors", default=None)
    s.add_argument("--loss-corrected", action="store_true")
    s.add_argument("--trials-csv", default=None)

    for name, helptext in (("fit", "fit a g2 model to a histogram CSV"),
                           ("deconv", "recover g2(0) behind detector jitter")):
        s = sub.add_parser(name, help=helptext)
        s.add_argument("histogram")
        s.add_argument("--family", default="free-gaussian")
        s.add_argument("--out-json", required=True)
        s.add_argument("--tau-window-ps", type=float, default=None)
        s.add_argument("--doppler-sigma-hz", type=float, default=None)
        s.add_argument("--filter-fwhm-hz", type=float, default=None)
        if name == "fit":
            s.add_argument("--jitter-ps", type=float, default=None)
        else:
            s.add_argument("--calibration", default=None, help="JSON written by jitter-cal")
            s.add_argument("--sigmas", default=None, help="per-channel sigmas in ps")
            s.add_argument("--method", choices=("parametric", "fourier"), default="parametric")
            s.add_argument("--no-per-pair", action="store_true")

    s = sub.add_parser("jitter-cal", help="timing jitter from a pulsed reference tag file")
    s.add_argument("tags")
    s.add_argument("--period-ps", type=float, required=True)
    s.add_argument("--out-json", required=True)
    s.add_argument("--min-counts", type=int, default=10_000)

    s = sub.add_parser("sweep", help="run the pipeline over values of one config key")
    s.add_argument("config")
    s.add_argument("--axis", required=True, help="dotted key, e.g. spectrum.emission.1.weight")
    s.add_argument("--values", required=True, help="comma-separated values")
    s.add_argument("--out-csv", required=True)
    s.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")

    s = sub.add_parser("replay", help="re-run the command recorded in a manifest")
    s.add_argument("manifest")
    s.add_argument("--out-dir", default=None, help="write outputs here instead of the recorded paths")
    return p


def _run(a, argv: list) -> dict:
    t0 = time.perf_counter()
    res = HANDLERS[a.command](a)
    manifest = RunManifest(a.command, argv, res.get("config", {}), res.get("inputs", {}), res["outputs"],
                           res.get("seed"), runtime_s=round(time.perf_counter() - t0, 3))
    if "info" in res:
        manifest.environment["info"] = res["info"]
    manifest.environment["threads"] = getattr(a, "threads_used", 0)
    path = a.manifest or (str(next(iter(res["outputs"].values()))) + ".manifest.json")
    manifest.write(path)
    return res


def _replay(a) -> dict:
    m = RunManifest.read(a.manifest)
    argv = list(m.argv)
    inner = build_parser().parse_args(argv)
    if hasattr(inner, "config"):
        inner.config = a.manifest
        inner.set = []
    if a.out_dir:
        Path(a.out_dir).mkdir(parents=True, exist_ok=True)
        for k in OUTPUT_ARGS[inner.command]:
            v = getattr(inner, k, None)
            if v:
                setattr(inner, k, str(Path(a.out_dir) / Path(v).name))
    inner.manifest = None if a.out_dir else a.manifest + ".replay.json"
    inner.threads_used = a.threads_used
    return _run(inner, argv)


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    a = parser.parse_args(argv)
    try:
        a.threads_used = _set_threads(a.threads)
        if a.command == "replay":
            _replay(a)
        else:
            _run(a, argv)
    except ConfigError as exc:
        print(f"photonstat: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (FileNotFoundError, IsADirectoryError) as exc:
        print(f"photonstat: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (FormatError, IntegrityError) as exc:
        print(f"photonstat: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except EstimationError as exc:
        print(f"photonstat: estimation error: {exc}", file=sys.stderr)
        return EXIT_ESTIMATION
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
