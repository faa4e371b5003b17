"""Text formats for analysis results: histogram CSV, JSON reports, manifests."""

from __future__ import annotations

import csv
import io
import json
import math
import platform
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import __version__
from .correlation import G2Histogram, average_pairs, dark_correct, normalize, PairCounts
from .errors import FormatError
from .spectral import Binning

HIST_COLUMNS = ("pair", "tau_ps", "g2", "stderr", "raw_counts", "expected")


def _fmt(x: float) -> str:
    return repr(float(x))


def _map_str(m: Mapping) -> str:
    return ";".join(f"{k}:{_fmt(v) if isinstance(v, float) else v}" for k, v in sorted(m.items()))


def _parse_map(s: str, conv) -> dict:
    if not s:
        return {}
    return {int(k): conv(v) for k, v in (item.split(":") for item in s.split(";"))}


def write_histogram_csv(path, hist: G2Histogram) -> None:
    """Tidy CSV: one row per (pair, bin); averaged rows use pair ``avg``.

    Comment lines carry what is needed to rebuild the histogram exactly:
    binning, live time, singles and any dark rates already applied.
    """
    comps = hist.components if hist.pair_averaged else (hist,)
    b = hist.binning
    buf = io.StringIO()
    buf.write("# photonstat g2 histogram\n")
    buf.write(f"# tick_ps={_fmt(b.tick_ps)}\n# bin_width_ticks={b.bin_width_ticks}\n# n_side={b.n_side}\n")
    buf.write(f"# live_ticks={hist.live_ticks}\n# singles={_map_str(hist.singles)}\n")
    buf.write(f"# dark_rates_hz={_map_str(hist.dark_rates_hz) if hist.dark_corrected else ''}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(HIST_COLUMNS)
    rows = [(c.pair_label(), c) for c in comps]
    if hist.pair_averaged:
        rows.append(("avg", hist))
    for label, h in rows:
        for t, v, e, c, x in zip(h.tau_ps, h.values, h.stderr, h.raw_counts, h.expected):
            w.writerow((label, _fmt(t), _fmt(v), _fmt(e), int(c), _fmt(x)))
    Path(path).write_text(buf.getvalue())


def read_histogram_csv(path) -> G2Histogram:
    """Rebuild the (pair-averaged) histogram written by :func:`write_histogram_csv`."""
    text = Path(path).read_text()
    meta = {}
    body = []
    for line in text.splitlines():
        if line.startswith("#"):
            if "=" in line:
                k, v = line[1:].strip().split("=", 1)
                meta[k] = v
        elif line:
            body.append(line)
    try:
        b = Binning(int(meta["bin_width_ticks"]), int(meta["n_side"]), float(meta["tick_ps"]))
        live = int(meta["live_ticks"])
        singles = _parse_map(meta["singles"], int)
        darks = _parse_map(meta.get("dark_rates_hz", ""), float)
        reader = csv.DictReader(body)
        if tuple(reader.fieldnames or ()) != HIST_COLUMNS:
            raise FormatError(f"{path}: expected columns {HIST_COLUMNS}")
        counts: dict = {}
        for row in reader:
            if row["pair"] == "avg":
                continue
            counts.setdefault(row["pair"], []).append(int(row["raw_counts"]))
    except (KeyError, ValueError) as exc:
        raise FormatError(f"{path}: malformed histogram file ({exc})") from None
    hists = []
    for label, c in counts.items():
        i, j = (int(x) for x in label.split("-"))
        c = np.asarray(c, dtype=np.int64)
        if c.size != 2 * b.n_side + 1:
            raise FormatError(f"{path}: pair {label} has {c.size} bins, expected {2 * b.n_side + 1}")
        h = normalize(PairCounts((i, j), b, c), (singles[i], singles[j]), live)
        if darks:
            h = dark_correct(h, darks)
        hists.append(h)
    if not hists:
        raise FormatError(f"{path}: no histogram rows")
    return hists[0] if len(hists) == 1 else average_pairs(hists)


def jsonable(x):
    if isinstance(x, Mapping):
        return {str(k): jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return jsonable(x.tolist())
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.floating, float)):
        v = float(x)
        return v if math.isfinite(v) else str(v)
    if isinstance(x, np.bool_):
        return bool(x)
    return x


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(jsonable(obj), indent=2, sort_keys=True) + "\n")


def read_json(path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: line {exc.lineno}: {exc.msg}") from None


def write_rows(path, header: Sequence, rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(x) if isinstance(x, (float, np.floating)) else x for x in r])
    Path(path).write_text(buf.getvalue())


@dataclass
class RunManifest:
    """Record of one command invocation, sufficient to replay it."""

    command: str
    argv: list
    config: dict
    inputs: dict
    outputs: dict
    seed: int | None
    version: str = __version__
    runtime_s: float = 0.0
    environment: dict = field(default_factory=lambda: {"python": platform.python_version(),
                                                       "numpy": np.__version__})

    def write(self, path) -> None:
        write_json(path, asdict(self))

    @classmethod
    def read(cls, path) -> "RunManifest":
        d = read_json(path)
        try:
            return cls(**d)
        except TypeError as exc:
            raise FormatError(f"{path}: not a run manifest ({exc})") from None
