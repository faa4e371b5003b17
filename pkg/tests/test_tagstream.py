import numpy as np
import pytest
from hypothesis import given, strategies as st

from photonstat.errors import ConfigError, FormatError, IntegrityError
from photonstat.tagstream import (HEADER_SIZE, ClickStatistics, StreamHeader, TagStream, TagWriter, chunks,
                                  merge, read_header, read_tags, window_clicks, write_tags)


def make_stream(ts, ch, channels=3, duration=None, tick=81.0):
    ts = np.asarray(ts, dtype=np.uint64)
    ch = np.asarray(ch, dtype=np.uint16)
    if duration is None:
        duration = int(ts.max()) + 1 if ts.size else 0
    return TagStream(StreamHeader(tick, channels, duration), ts, ch)


@st.composite
def streams(draw, max_tags=200, channels=3):
    n = draw(st.integers(0, max_tags))
    ts = np.sort(np.array(draw(st.lists(st.integers(0, 5000), min_size=n, max_size=n)), dtype=np.int64))
    ch = np.array(draw(st.lists(st.integers(0, channels - 1), min_size=n, max_size=n)), dtype=np.int64)
    o = np.lexsort((ch, ts))
    return make_stream(ts[o], ch[o], channels, duration=5000)


def test_round_trip(tmp_path):
    s = make_stream([0, 5, 5, 17], [2, 0, 1, 0], duration=20)
    p = tmp_path / "s.bin"
    write_tags(s, p)
    assert p.stat().st_size == HEADER_SIZE + 16 * 4
    assert read_tags(p) == s
    assert read_header(p).duration_ticks == 20


@given(streams())
def test_round_trip_property(tmp_path_factory, s):
    p = tmp_path_factory.mktemp("rt") / "s.bin"
    write_tags(s, p)
    r = read_tags(p)
    assert r == s
    assert np.array_equal(r.counts(), s.counts())


def test_empty_stream(tmp_path):
    s = TagStream.empty(3, 100)
    p = tmp_path / "e.bin"
    write_tags(s, p)
    assert len(read_tags(p)) == 0


def test_out_of_order_rejected():
    with pytest.raises(IntegrityError):
        make_stream([5, 3], [0, 0], duration=10)
    # equal timestamps must be ordered by channel
    with pytest.raises(IntegrityError):
        make_stream([5, 5], [1, 0], duration=10)


def test_channel_and_duration_checked():
    with pytest.raises(IntegrityError):
        make_stream([1], [3], channels=3, duration=10)
    with pytest.raises(IntegrityError):
        make_stream([11], [0], duration=10)


def test_arrays_read_only():
    s = make_stream([1, 2], [0, 1])
    with pytest.raises(ValueError):
        s.timestamps[0] = 7
    with pytest.raises(AttributeError):
        s.header = None


def test_bad_files(tmp_path):
    s = make_stream([1, 2], [0, 1])
    p = tmp_path / "s.bin"
    write_tags(s, p)
    raw = bytearray(p.read_bytes())
    bad = tmp_path / "magic.bin"
    bad.write_bytes(b"XXXX" + bytes(raw[4:]))
    with pytest.raises(FormatError):
        read_tags(bad)
    trunc = tmp_path / "trunc.bin"
    trunc.write_bytes(bytes(raw[:-3]))
    with pytest.raises(FormatError):
        read_tags(trunc)
    short = tmp_path / "short.bin"
    short.write_bytes(bytes(raw[:10]))
    with pytest.raises(FormatError):
        read_tags(short)
    swapped = bytearray(raw)
    rec = HEADER_SIZE
    swapped[rec:rec + 16], swapped[rec + 16:rec + 32] = raw[rec + 16:rec + 32], raw[rec:rec + 16]
    sw = tmp_path / "swapped.bin"
    sw.write_bytes(bytes(swapped))
    with pytest.raises(IntegrityError):
        read_tags(sw)


def test_writer_checks_block_order(tmp_path):
    h = StreamHeader(81.0, 2, 100)
    with TagWriter(tmp_path / "w.bin", h) as w:
        w.write(TagStream(h, np.array([5, 9], np.uint64), np.array([0, 1], np.uint16)))
        with pytest.raises(IntegrityError):
            w.write(TagStream(h, np.array([7], np.uint64), np.array([0], np.uint16)))


def test_merge_orders_and_checks_tick():
    a = make_stream([1, 4], [0, 0], channels=2, duration=10)
    b = make_stream([1, 3], [1, 1], channels=2, duration=12)
    m = merge([a, b])
    assert list(m.timestamps) == [1, 1, 3, 4]
    assert list(m.channels) == [0, 1, 1, 0]
    assert m.duration_ticks == 12
    with pytest.raises(ConfigError):
        merge([a, make_stream([1], [0], tick=50.0)])


def test_slice_time():
    s = make_stream([1, 4, 4, 9], [0, 0, 1, 2], duration=10)
    sub = s.slice_time(4, 9)
    assert list(sub.timestamps) == [4, 4]


def test_window_clicks_hand_example():
    # windows of 4 ticks: [0,4) {0}, [4,8) {0,1}, [8,12) {}, [12,16) {2} (two tags)
    s = make_stream([1, 4, 6, 12, 13], [0, 1, 0, 2, 2], duration=16)
    cs = window_clicks(s, 4)
    assert cs.window_count == 4
    assert cs.counts[0b000] == 1
    assert cs.counts[0b001] == 1
    assert cs.counts[0b011] == 1
    assert cs.counts[0b100] == 1
    assert list(cs.multiplicity_counts()) == [1, 2, 1, 0]


@given(streams(), st.integers(1, 50))
def test_window_clicks_sum(s, w):
    cs = window_clicks(s, w)
    assert cs.counts.sum() == s.duration_ticks // w
    assert np.all(cs.counts >= 0)


def test_click_statistics_validation():
    with pytest.raises(IntegrityError):
        ClickStatistics(8, 5, 2, np.array([1, 1, 1, 1]))
    with pytest.raises(ConfigError):
        ClickStatistics(8, 2, 2, np.array([1, 1]))


@given(streams(), st.integers(1, 3000), st.integers(0, 200))
def test_chunks_cover_each_tag_once(s, c, halo):
    halo = min(halo, c - 1)
    total = 0
    for ch in chunks(s, c, halo):
        core_t = ch.stream.timestamps[ch.in_core]
        assert np.all((core_t >= ch.core[0]) & (core_t < ch.core[1]))
        total += int(ch.in_core.sum())
    assert total == len(s)
