"""Time-tag persistence and conversion to binned counts.

File layout (little-endian)::

    b"TTG1" | version u16 | channel_id u16 | duration_ps u64 | tag_count u64
    | tag_count x u64 timestamps, strictly increasing
"""

from __future__ import annotations

import csv
import io
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from .model import BinnedCounts, TimeTagStream

MAGIC = b"TTG1"
VERSION = 1
_HEADER = struct.Struct("<4sHHQQ")


class StreamFormatError(ValueError):
    pass


def atomic_write_bytes(path, data: bytes) -> None:
    """Write via a temporary file in the same directory, then rename."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def encode_stream(stream: TimeTagStream) -> bytes:
    header = _HEADER.pack(MAGIC, VERSION, stream.channel_id, stream.duration_ps, len(stream))
    return header + stream.tags.astype("<u8").tobytes()


def decode_stream(data: bytes) -> TimeTagStream:
    if len(data) < _HEADER.size:
        raise StreamFormatError("truncated header")
    magic, version, channel_id, duration_ps, count = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise StreamFormatError(f"bad magic {magic!r}")
    if version != VERSION:
        raise StreamFormatError(f"unsupported format version {version}")
    payload = len(data) - _HEADER.size
    if payload < 8 * count:
        raise StreamFormatError(f"truncated payload: {count} tags declared, {payload // 8} present")
    if payload > 8 * count:
        raise StreamFormatError("trailing bytes after tag payload")
    tags = np.frombuffer(data, dtype="<u8", count=count, offset=_HEADER.size)
    if count and int(tags.max()) >= duration_ps:
        raise StreamFormatError("tag out of window")
    if count > 1 and np.any(tags[1:] <= tags[:-1]):
        raise StreamFormatError("tags not strictly increasing")
    return TimeTagStream(channel_id, duration_ps, tags.astype(np.int64))


def write_stream(stream: TimeTagStream, path) -> None:
    atomic_write_bytes(path, encode_stream(stream))


def read_stream(path) -> TimeTagStream:
    return decode_stream(Path(path).read_bytes())


def bin_counts(stream: TimeTagStream, bin_width_ps: int) -> BinnedCounts:
    """Counts per bin ``[i*w, (i+1)*w)``; the trailing partial bin is dropped."""
    if bin_width_ps <= 0:
        raise ValueError("bin_width_ps must be positive")
    if bin_width_ps > stream.duration_ps:
        raise ValueError("bin width exceeds stream duration")
    n_bins = stream.duration_ps // bin_width_ps
    idx = stream.tags // bin_width_ps
    idx = idx[idx < n_bins]
    counts = np.bincount(idx, minlength=n_bins)
    return BinnedCounts(bin_width_ps, counts, stream.channel_id)


def clamp_to_events(binned: BinnedCounts) -> BinnedCounts:
    """Collapse multiple clicks in a bin to a single event."""
    return BinnedCounts(binned.bin_width_ps, np.minimum(binned.counts, 1), binned.channel_id)


def shift_bins(a: BinnedCounts, b: BinnedCounts, shift: int):
    """Overlapping parts of ``a`` and ``b`` displaced by ``shift`` bins.

    Element ``i`` of the first result pairs with element ``i`` of the second,
    which is bin ``i + shift`` of ``b``. Swapping the inputs and negating the
    shift gives the same pair in swapped order.
    """
    if a.bin_width_ps != b.bin_width_ps:
        raise ValueError("bin widths differ")
    if len(a) != len(b):
        raise ValueError("series lengths differ")
    n = len(a)
    shift = int(shift)
    if abs(shift) >= n:
        raise ValueError(f"|shift| = {abs(shift)} must be below series length {n}")
    if shift >= 0:
        ca, cb = a.counts[: n - shift], b.counts[shift:]
    else:
        ca, cb = a.counts[-shift:], b.counts[: n + shift]
    return (BinnedCounts(a.bin_width_ps, ca, a.channel_id),
            BinnedCounts(b.bin_width_ps, cb, b.channel_id))


def binned_csv(a: BinnedCounts, b: BinnedCounts) -> str:
    """CSV export of two aligned count series and their difference."""
    if a.bin_width_ps != b.bin_width_ps or len(a) != len(b):
        raise ValueError("series are not aligned")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["bin_index", "count_a", "count_b", "diff"])
    diff = a.counts - b.counts
    for row in zip(range(len(a)), a.counts.tolist(), b.counts.tolist(), diff.tolist()):
        w.writerow(row)
    return buf.getvalue()
