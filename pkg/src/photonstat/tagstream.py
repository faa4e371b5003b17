"""Time-tag data model, binary interchange format and stream primitives.

All times are integer ticks of ``tick_ps`` picoseconds. A stream is kept as
two parallel numpy arrays (``uint64`` timestamps, ``uint16`` channels) sorted
by ``(timestamp, channel)``; the arrays are made read-only so a constructed
stream can be shared freely.

Binary layout (little endian)::

    header (32 bytes)
        magic          4s   b"PTAG"
        version        u16  1
        channel_count  u16
        tick_ps        f64
        duration_ticks u64
        reserved       8 bytes, zero
    record (16 bytes, repeated)
        timestamp      u64
        channel        u16
        reserved       6 bytes, zero
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Mapping, Sequence

import numpy as np
from numba import njit

from .errors import ConfigError, FormatError, IntegrityError

DEFAULT_TICK_PS = 81.0
MAGIC = b"PTAG"
FORMAT_VERSION = 1
HEADER_SIZE = 32
RECORD_SIZE = 16

_HEADER = struct.Struct("<4sHHdQ8s")
RECORD_DTYPE = np.dtype([("timestamp", "<u8"), ("channel", "<u2"), ("reserved", "V6")])

assert _HEADER.size == HEADER_SIZE and RECORD_DTYPE.itemsize == RECORD_SIZE


@dataclass(frozen=True)
class TimeTag:
    timestamp: int
    channel: int


@dataclass(frozen=True)
class StreamHeader:
    tick_ps: float = DEFAULT_TICK_PS
    channel_count: int = 1
    duration_ticks: int = 0
    # scenario metadata; not serialized and ignored by equality
    origin: Mapping = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if not self.tick_ps > 0:
            raise ConfigError(f"tick_ps must be > 0, got {self.tick_ps}")
        if not 1 <= self.channel_count < 2**16:
            raise ConfigError(f"channel_count must be in [1, 65535], got {self.channel_count}")
        if not 0 <= self.duration_ticks < 2**64:
            raise ConfigError(f"duration_ticks out of range: {self.duration_ticks}")

    @property
    def duration_s(self) -> float:
        return self.duration_ticks * self.tick_ps * 1e-12


def _readonly(a: np.ndarray) -> np.ndarray:
    v = np.ascontiguousarray(a).view()
    v.flags.writeable = False
    return v


def check_order(timestamps: np.ndarray, channels: np.ndarray) -> int:
    """Index of the first record breaking the (timestamp, channel) order, or -1."""
    if len(timestamps) < 2:
        return -1
    t = timestamps.astype(np.int64, copy=False)
    dt = np.diff(t)
    bad = dt < 0
    bad |= (dt == 0) & (np.diff(channels.astype(np.int32)) < 0)
    idx = np.flatnonzero(bad)
    return int(idx[0]) + 1 if idx.size else -1


class TagStream:
    """Immutable, sorted sequence of detection tags plus a header."""

    __slots__ = ("header", "timestamps", "channels")

    def __init__(self, header: StreamHeader, timestamps=None, channels=None, *, check: bool = True):
        ts = np.asarray([] if timestamps is None else timestamps, dtype=np.uint64)
        ch = np.asarray([] if channels is None else channels, dtype=np.uint16)
        if ts.shape != ch.shape or ts.ndim != 1:
            raise ConfigError("timestamps and channels must be 1-d arrays of equal length")
        if check:
            _validate(header, ts, ch)
        object.__setattr__(self, "header", header)
        object.__setattr__(self, "timestamps", _readonly(ts))
        object.__setattr__(self, "channels", _readonly(ch))

    def __setattr__(self, name, value):
        raise AttributeError("TagStream is immutable")

    @classmethod
    def empty(cls, channel_count: int, duration_ticks: int = 0, tick_ps: float = DEFAULT_TICK_PS) -> "TagStream":
        return cls(StreamHeader(tick_ps, channel_count, duration_ticks))

    def __len__(self) -> int:
        return len(self.timestamps)

    def __iter__(self) -> Iterator[TimeTag]:
        for t, c in zip(self.timestamps.tolist(), self.channels.tolist()):
            yield TimeTag(t, c)

    def __eq__(self, other) -> bool:
        if not isinstance(other, TagStream):
            return NotImplemented
        return (
            self.header == other.header
            and np.array_equal(self.timestamps, other.timestamps)
            and np.array_equal(self.channels, other.channels)
        )

    def __repr__(self) -> str:
        h = self.header
        return (f"TagStream(n={len(self)}, channels={h.channel_count}, "
                f"duration_ticks={h.duration_ticks}, tick_ps={h.tick_ps})")

    @property
    def tick_ps(self) -> float:
        return self.header.tick_ps

    @property
    def channel_count(self) -> int:
        return self.header.channel_count

    @property
    def duration_ticks(self) -> int:
        return self.header.duration_ticks

    def channel_times(self, channel: int) -> np.ndarray:
        """Timestamps (int64 ticks) of one channel, sorted."""
        return self.timestamps[self.channels == channel].astype(np.int64)

    def counts(self) -> np.ndarray:
        return np.bincount(self.channels, minlength=self.channel_count)[: self.channel_count]

    def slice_time(self, start: int, stop: int) -> "TagStream":
        """Tags with ``start <= t < stop``; header unchanged."""
        lo = np.searchsorted(self.timestamps, np.uint64(max(start, 0)), "left")
        hi = np.searchsorted(self.timestamps, np.uint64(max(stop, 0)), "left")
        return TagStream(self.header, self.timestamps[lo:hi], self.channels[lo:hi], check=False)


def _validate(header: StreamHeader, ts: np.ndarray, ch: np.ndarray) -> None:
    if ch.size and int(ch.max()) >= header.channel_count:
        k = int(np.argmax(ch >= header.channel_count))
        raise IntegrityError(f"record {k}: channel {int(ch[k])} >= channel_count {header.channel_count}")
    if ts.size and int(ts.max()) > header.duration_ticks:
        k = int(np.argmax(ts > np.uint64(header.duration_ticks)))
        raise IntegrityError(f"record {k}: timestamp {int(ts[k])} > duration_ticks {header.duration_ticks}")
    k = check_order(ts, ch)
    if k >= 0:
        raise IntegrityError(f"record {k}: out of (timestamp, channel) order")


# --------------------------------------------------------------------------- I/O

def _pack_header(h: StreamHeader) -> bytes:
    return _HEADER.pack(MAGIC, FORMAT_VERSION, h.channel_count, float(h.tick_ps), int(h.duration_ticks), bytes(8))


def _records(ts: np.ndarray, ch: np.ndarray) -> np.ndarray:
    rec = np.zeros(len(ts), dtype=RECORD_DTYPE)
    rec["timestamp"] = ts
    rec["channel"] = ch
    return rec


def write_tags(stream: TagStream, path) -> None:
    with TagWriter(path, stream.header) as w:
        w.write(stream)


class TagWriter:
    """Incremental writer for streams produced block by block.

    Blocks must arrive in order; the ordering invariant is checked across
    block boundaries so the file is always readable by :func:`read_tags`.
    """

    def __init__(self, path, header: StreamHeader):
        self.path = os.fspath(path)
        self.header = header
        self._fh = None
        self._last = (-1, -1)
        self.count = 0

    def __enter__(self):
        self._fh = open(self.path, "wb")
        self._fh.write(_pack_header(self.header))
        return self

    def write(self, block: TagStream) -> None:
        if len(block) == 0:
            return
        if block.header.tick_ps != self.header.tick_ps:
            raise ConfigError("block tick_ps differs from writer header")
        first = (int(block.timestamps[0]), int(block.channels[0]))
        if first < self._last:
            raise IntegrityError("blocks written out of order")
        if int(block.timestamps[-1]) > self.header.duration_ticks:
            raise IntegrityError("block extends past header duration")
        self._fh.write(_records(block.timestamps, block.channels).tobytes())
        self._last = (int(block.timestamps[-1]), int(block.channels[-1]))
        self.count += len(block)

    def __exit__(self, *exc):
        self._fh.close()
        return False


def read_header(path) -> StreamHeader:
    with open(path, "rb") as fh:
        raw = fh.read(HEADER_SIZE)
    return _unpack_header(raw, path)


def _unpack_header(raw: bytes, path) -> StreamHeader:
    if len(raw) < HEADER_SIZE:
        raise FormatError(f"{path}: file shorter than the {HEADER_SIZE}-byte header")
    magic, version, nch, tick_ps, duration, reserved = _HEADER.unpack(raw[:HEADER_SIZE])
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported format version {version}")
    if reserved != bytes(8):
        raise FormatError(f"{path}: non-zero reserved header bytes")
    try:
        return StreamHeader(tick_ps, nch, duration)
    except ConfigError as exc:
        raise FormatError(f"{path}: {exc}") from None


def read_tags(path) -> TagStream:
    data = np.fromfile(path, dtype=np.uint8)
    header = _unpack_header(data[:HEADER_SIZE].tobytes(), path)
    body = data[HEADER_SIZE:]
    if body.size % RECORD_SIZE:
        raise FormatError(f"{path}: trailing {body.size % RECORD_SIZE} bytes after last record")
    rec = body.view(RECORD_DTYPE)
    if rec.size and np.frombuffer(rec["reserved"].tobytes(), dtype=np.uint8).any():
        raise FormatError(f"{path}: non-zero reserved record bytes")
    return TagStream(header, rec["timestamp"].copy(), rec["channel"].copy())


# --------------------------------------------------------------------------- transforms

def merge(streams: Sequence[TagStream]) -> TagStream:
    """Merge streams into one sorted stream (channels must already be disjoint
    or deliberately shared)."""
    streams = list(streams)
    if not streams:
        raise ConfigError("merge needs at least one stream")
    tick = streams[0].tick_ps
    if any(s.tick_ps != tick for s in streams):
        raise ConfigError("cannot merge streams with different tick_ps")
    header = StreamHeader(
        tick,
        max(s.channel_count for s in streams),
        max(s.duration_ticks for s in streams),
        dict(streams[0].header.origin),
    )
    ts = np.concatenate([s.timestamps for s in streams])
    ch = np.concatenate([s.channels for s in streams])
    order = np.lexsort((ch, ts))
    return TagStream(header, ts[order], ch[order], check=False)


@dataclass(frozen=True)
class ClickStatistics:
    """Counts of click patterns over contiguous, non-overlapping windows.

    ``counts[mask]`` is the number of windows whose set of firing channels is
    the bitmask ``mask`` (bit ``i`` = channel ``i``); ``counts[0]`` counts the
    windows without any click.
    """

    window_ticks: int
    window_count: int
    channel_count: int
    counts: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.counts, dtype=np.int64)
        if c.shape != (2 ** self.channel_count,):
            raise ConfigError("pattern counts must have 2**channel_count entries")
        if c.sum() != self.window_count:
            raise IntegrityError("pattern counts do not sum to window_count")
        c.flags.writeable = False
        object.__setattr__(self, "counts", c)

    @property
    def pattern_counts(self) -> dict:
        return {pattern_of(m, self.channel_count): int(n) for m, n in enumerate(self.counts)}

    @property
    def frequencies(self) -> np.ndarray:
        return self.counts / self.window_count

    def multiplicity_counts(self) -> np.ndarray:
        pop = popcounts(self.channel_count)
        return np.bincount(pop, weights=self.counts, minlength=self.channel_count + 1).astype(np.int64)

    def with_counts(self, counts) -> "ClickStatistics":
        counts = np.asarray(counts, dtype=np.int64)
        return ClickStatistics(self.window_ticks, int(counts.sum()), self.channel_count, counts)

    def __add__(self, other: "ClickStatistics") -> "ClickStatistics":
        if (self.window_ticks, self.channel_count) != (other.window_ticks, other.channel_count):
            raise ConfigError("cannot add click statistics with different windows or channels")
        return ClickStatistics(self.window_ticks, self.window_count + other.window_count,
                               self.channel_count, self.counts + other.counts)


def pattern_of(mask: int, channel_count: int) -> frozenset:
    return frozenset(i for i in range(channel_count) if mask >> i & 1)


def popcounts(channel_count: int) -> np.ndarray:
    m = np.arange(2 ** channel_count)
    return np.array([bin(int(x)).count("1") for x in m], dtype=np.int64)


@njit(cache=True)
def _window_patterns(ts, ch, w, nwin, out):
    cur = -1
    mask = 0
    nonempty = 0
    for k in range(ts.shape[0]):
        win = ts[k] // w
        if win >= nwin:
            break
        if win != cur:
            if cur >= 0:
                out[mask] += 1
                nonempty += 1
            cur = win
            mask = 0
        mask |= 1 << ch[k]
    if cur >= 0:
        out[mask] += 1
        nonempty += 1
    out[0] += nwin - nonempty


def window_clicks(stream: TagStream, window_ticks: int) -> ClickStatistics:
    """Click patterns in windows ``[k w, (k+1) w)``; a trailing partial window
    is dropped and repeated tags on one channel count as a single click."""
    w = int(window_ticks)
    if w < 1:
        raise ConfigError("window_ticks must be >= 1")
    if stream.channel_count > 16:
        raise ConfigError("window_clicks supports at most 16 channels")
    nwin = stream.duration_ticks // w
    out = np.zeros(2 ** stream.channel_count, dtype=np.int64)
    _window_patterns(stream.timestamps.view(np.int64), stream.channels.astype(np.int64), w, nwin, out)
    return ClickStatistics(w, int(nwin), stream.channel_count, out)


@dataclass(frozen=True)
class Chunk:
    """One piece of a chunked stream: tags of ``core`` plus a halo on both sides.

    ``in_core`` is False for halo tags, which also appear in a neighbouring
    chunk's core.
    """

    core: tuple
    stream: TagStream
    in_core: np.ndarray


def chunks(stream: TagStream, chunk_ticks: int, halo_ticks: int) -> list:
    """Partition ``[0, duration]`` into cores of ``chunk_ticks`` and attach halos."""
    c, h = int(chunk_ticks), int(halo_ticks)
    if not c > h >= 0:
        raise ConfigError("need chunk_ticks > halo_ticks >= 0")
    dur = stream.duration_ticks
    n = max(1, -(-dur // c))
    ts = stream.timestamps
    out = []
    for k in range(n):
        start = k * c
        stop = (k + 1) * c if k < n - 1 else dur + 1
        lo = np.searchsorted(ts, np.uint64(max(start - h, 0)), "left")
        hi = np.searchsorted(ts, np.uint64(stop + h), "left")
        sub_t = ts[lo:hi]
        sub = TagStream(stream.header, sub_t, stream.channels[lo:hi], check=False)
        in_core = (sub_t >= np.uint64(start)) & (sub_t < np.uint64(stop))
        in_core.flags.writeable = False
        out.append(Chunk((start, stop), sub, in_core))
    return out


def concat_blocks(blocks: Iterable[TagStream], header: StreamHeader | None = None) -> TagStream:
    """Join time-ordered blocks (as produced by the simulator) into one stream."""
    blocks = list(blocks)
    if not blocks and header is None:
        raise ConfigError("no blocks and no header")
    header = header or blocks[-1].header
    if not blocks:
        return TagStream(header)
    ts = np.concatenate([b.timestamps for b in blocks])
    ch = np.concatenate([b.channels for b in blocks])
    return TagStream(header, ts, ch)
