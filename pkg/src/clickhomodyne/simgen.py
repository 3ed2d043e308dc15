"""Synthetic time-tag generation for a click-detector homodyne pair.

The local oscillator is a coherent source, so photon arrivals form a
homogeneous Poisson process. Splitting against vacuum, loss and detector
efficiency are independent Bernoulli selections; dark counts are superposed
before a non-paralyzable dead time acts on each channel.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass

import numpy as np
from numba import njit

from .model import PS_PER_S, SimConfig, TimeTagStream, validate_config

CHANNEL_A = 1
CHANNEL_B = 2


@dataclass(frozen=True)
class RngSpec:
    """Names an independent random substream.

    The same ``(seed, stream_label)`` always yields the same sequence, and
    different labels give statistically independent sequences.
    """

    seed: int
    stream_label: str

    def generator(self) -> np.random.Generator:
        key = zlib.crc32(self.stream_label.encode("utf-8"))
        ss = np.random.SeedSequence(entropy=int(self.seed), spawn_key=(key,))
        return np.random.Generator(np.random.PCG64(ss))

    def child(self, suffix: str) -> "RngSpec":
        return RngSpec(self.seed, f"{self.stream_label}/{suffix}")


def _strictly_increasing(tags: np.ndarray) -> np.ndarray:
    # t'[i] = max(t[i], t'[i-1] + 1): bump colliding tags to the next free ps
    if tags.size < 2:
        return tags
    idx = np.arange(tags.size, dtype=np.int64)
    return np.maximum.accumulate(tags - idx) + idx


def generate_poisson_stream(rate_hz: float, duration_ps: int, rng: RngSpec,
                            channel_id: int = 0) -> TimeTagStream:
    """Homogeneous Poisson arrivals on ``[0, duration_ps)``.

    Inter-arrival times are drawn as exponentials in picoseconds and
    accumulated; tags landing on an occupied picosecond are pushed to the
    next free one.
    """
    if not np.isfinite(rate_hz) or rate_hz < 0:
        raise ValueError(f"rate_hz must be finite and >= 0, got {rate_hz}")
    if rate_hz == 0 or duration_ps <= 0:
        return TimeTagStream(channel_id, max(duration_ps, 0), np.empty(0, np.int64))

    gen = rng.generator()
    scale_ps = PS_PER_S / rate_hz
    expected = rate_hz * duration_ps / PS_PER_S
    chunk = int(expected + 6.0 * np.sqrt(expected) + 16)

    pieces = []
    t0 = 0.0
    while True:
        times = t0 + np.cumsum(gen.exponential(scale_ps, size=chunk))
        if times[-1] >= duration_ps:
            pieces.append(times[: np.searchsorted(times, duration_ps)])
            break
        pieces.append(times)
        t0 = times[-1]
        chunk = max(chunk // 4, 16)

    tags = _strictly_increasing(np.floor(np.concatenate(pieces)).astype(np.int64))
    tags = tags[tags < duration_ps]
    return TimeTagStream(channel_id, duration_ps, tags)


def beamsplitter_split(stream: TimeTagStream, ratio: float, rng: RngSpec,
                       channels=(CHANNEL_A, CHANNEL_B)):
    """Route every tag to output A with probability ``ratio``, else to B."""
    if not 0.0 <= ratio <= 1.0:
        raise ValueError("ratio must lie in [0, 1]")
    to_a = rng.generator().random(len(stream)) < ratio
    a = TimeTagStream(channels[0], stream.duration_ps, stream.tags[to_a])
    b = TimeTagStream(channels[1], stream.duration_ps, stream.tags[~to_a])
    return a, b


def thin_stream(stream: TimeTagStream, keep_prob: float, rng: RngSpec) -> TimeTagStream:
    """Keep each tag independently with probability ``keep_prob``."""
    if not 0.0 <= keep_prob <= 1.0:
        raise ValueError("keep_prob must lie in [0, 1]")
    if keep_prob == 1.0:
        return stream
    keep = rng.generator().random(len(stream)) < keep_prob
    return TimeTagStream(stream.channel_id, stream.duration_ps, stream.tags[keep])


def merge_streams(a: TimeTagStream, b: TimeTagStream) -> TimeTagStream:
    """Sorted union of two streams of the same window.

    Equal timestamps are separated by nudging the later copy forward 1 ps;
    a nudge past the window end drops that tag.
    """
    if a.duration_ps != b.duration_ps:
        raise ValueError(
            f"cannot merge streams of different durations ({a.duration_ps} vs {b.duration_ps} ps)"
        )
    if len(b) == 0:
        return a
    if len(a) == 0:
        return b.with_channel(a.channel_id)
    tags = np.concatenate([a.tags, b.tags])
    tags.sort(kind="stable")
    tags = _strictly_increasing(tags)
    tags = tags[tags < a.duration_ps]
    return TimeTagStream(a.channel_id, a.duration_ps, tags)


@njit(cache=True)
def _dead_time_mask(tags, dead_time):
    keep = np.zeros(tags.size, dtype=np.bool_)
    if tags.size == 0:
        return keep
    keep[0] = True
    last = tags[0]
    for i in range(1, tags.size):
        if tags[i] - last >= dead_time:
            keep[i] = True
            last = tags[i]
    return keep


def apply_dead_time(stream: TimeTagStream, dead_time_ps: int) -> TimeTagStream:
    """Non-paralyzable dead time: a tag survives iff it comes at least
    ``dead_time_ps`` after the previous surviving tag."""
    if dead_time_ps < 0:
        raise ValueError("dead_time_ps must be >= 0")
    if dead_time_ps == 0 or len(stream) < 2:
        return stream
    keep = _dead_time_mask(stream.tags, np.int64(dead_time_ps))
    return TimeTagStream(stream.channel_id, stream.duration_ps, stream.tags[keep])


def nonparalyzable_rate(rate_hz: float, dead_time_s: float) -> float:
    """Expected surviving rate of a Poisson input behind a non-paralyzable
    dead time."""
    return rate_hz / (1.0 + rate_hz * dead_time_s)


def simulate_detector_pair(cfg: SimConfig):
    """Time tags of detectors A and B for one run of ``cfg``.

    Random substreams are labelled per stage and per arm, so changing one
    detector's parameters leaves the other channel's draws untouched.
    """
    validate_config(cfg)
    root = RngSpec(cfg.seed, "pair")
    lo = generate_poisson_stream(cfg.lo_flux_hz * cfg.path_efficiency, cfg.duration_ps,
                                 root.child("lo"))
    arm_a, arm_b = beamsplitter_split(lo, cfg.split_ratio, root.child("split"))

    out = []
    for arm, det, name, channel in ((arm_a, cfg.detector_a, "a", CHANNEL_A),
                                    (arm_b, cfg.detector_b, "b", CHANNEL_B)):
        clicks = thin_stream(arm, det.efficiency, root.child(f"eff_{name}"))
        dark = generate_poisson_stream(det.dark_rate_hz, cfg.duration_ps,
                                       root.child(f"dark_{name}"), channel)
        clicks = merge_streams(clicks.with_channel(channel), dark)
        out.append(apply_dead_time(clicks, det.dead_time_ps))
    return out[0], out[1]
