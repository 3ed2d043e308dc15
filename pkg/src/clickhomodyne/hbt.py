"""Coincidence counting and the binned g2(tau) estimator.

Both channels are binned on a common grid and clamped so that a bin holds at
most one event. At a shift of ``tau`` bins, with ``n`` overlapping bins,
``c`` coincident occupied bins and singles ``s1`` and ``s2``::

    g2 = n * c / (s1 * s2)
    g2_err = g2 * sqrt(1/c + 1/s1 + 1/s2)

The error treats ``c``, ``s1`` and ``s2`` as independent Poisson counts.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, replace

import numpy as np

from .model import AnalysisError, BinnedCounts, G2Estimate, TimeTagStream
from .timetag import bin_counts, clamp_to_events, shift_bins

FLAG_ZERO_COINCIDENCES = "zero_coincidences"
FLAG_LOW_STATISTICS = "low_statistics"


@dataclass(frozen=True)
class G2Curve:
    bin_width_ps: int
    points: tuple

    def __post_init__(self):
        taus = [p.tau_bins for p in self.points]
        if any(t1 >= t2 for t1, t2 in zip(taus, taus[1:])):
            raise ValueError("tau values must be strictly increasing")

    def at(self, tau_bins: int) -> G2Estimate:
        for p in self.points:
            if p.tau_bins == tau_bins:
                return p
        raise KeyError(tau_bins)


def _g2_from_counts(tau, c, s1, s2, n):
    if s1 == 0 or s2 == 0:
        raise AnalysisError(f"insufficient singles at tau={tau} (s1={s1}, s2={s2})")
    g2 = n * c / (s1 * s2)
    if c == 0:
        return G2Estimate(tau, 0, s1, s2, n, 0.0, math.inf, FLAG_ZERO_COINCIDENCES)
    err = g2 * math.sqrt(1.0 / c + 1.0 / s1 + 1.0 / s2)
    return G2Estimate(tau, c, s1, s2, n, g2, err)


def g2_at_shift(a: BinnedCounts, b: BinnedCounts, tau_bins: int) -> G2Estimate:
    """g2 between ``a`` and ``b`` with ``b`` displaced by ``tau_bins``."""
    if a.bin_width_ps != b.bin_width_ps:
        raise AnalysisError("bin widths differ")
    oa, ob = shift_bins(clamp_to_events(a), clamp_to_events(b), tau_bins)
    c = int(np.dot(oa.counts, ob.counts))
    s1 = int(oa.counts.sum())
    s2 = int(ob.counts.sum())
    return _g2_from_counts(int(tau_bins), c, s1, s2, len(oa))


def g2_curve(a: BinnedCounts, b: BinnedCounts, tau_range: int) -> G2Curve:
    """g2 for every integer shift in ``[-tau_range, tau_range]``."""
    if a.bin_width_ps != b.bin_width_ps or len(a) != len(b):
        raise AnalysisError("series are not aligned")
    if tau_range < 0 or 2 * tau_range >= len(a):
        raise AnalysisError(f"tau_range {tau_range} too large for {len(a)} bins")
    ca = clamp_to_events(a).counts
    cb = clamp_to_events(b).counts
    n = len(ca)
    # prefix sums give the singles of every overlap window in O(1)
    pa = np.concatenate([[0], np.cumsum(ca)])
    pb = np.concatenate([[0], np.cumsum(cb)])
    points = []
    for tau in range(-tau_range, tau_range + 1):
        if tau >= 0:
            c = int(np.dot(ca[: n - tau], cb[tau:]))
            s1, s2 = int(pa[n - tau]), int(pb[n] - pb[tau])
        else:
            c = int(np.dot(ca[-tau:], cb[: n + tau]))
            s1, s2 = int(pa[n] - pa[-tau]), int(pb[n + tau])
        points.append(_g2_from_counts(tau, c, s1, s2, n - abs(tau)))
    return G2Curve(a.bin_width_ps, tuple(points))


def _as_binned(x, bin_width_ps):
    if isinstance(x, TimeTagStream):
        return bin_counts(x, bin_width_ps)
    return x


def g2_flux_scan(entries, bin_width_ps: int = 500_000, tau_bins: int = 0,
                 min_coincidences: int = 0):
    """g2(tau) for each ``(flux, a, b)`` entry of a sweep.

    ``a`` and ``b`` are time-tag streams (binned at ``bin_width_ps``) or
    already binned counts. Points that cannot be estimated are kept and
    flagged instead of raising: no singles or no coincidences give g2 = 0,
    fewer than ``min_coincidences`` coincidences are marked low-statistics.
    """
    out = []
    for flux, a, b in entries:
        ba, bb = _as_binned(a, bin_width_ps), _as_binned(b, bin_width_ps)
        try:
            est = g2_at_shift(ba, bb, tau_bins)
        except AnalysisError:
            oa, ob = shift_bins(clamp_to_events(ba), clamp_to_events(bb), tau_bins)
            est = G2Estimate(tau_bins, 0, int(oa.counts.sum()), int(ob.counts.sum()),
                             len(oa), 0.0, math.inf, FLAG_ZERO_COINCIDENCES)
        if not est.flag and est.coincidences < min_coincidences:
            est = replace(est, flag=FLAG_LOW_STATISTICS)
        out.append((flux, est))
    return out


_G2_HEADER = ["tau_bins", "tau_ns", "coincidences", "singles_1", "singles_2",
              "n_bins", "g2", "g2_err", "flag"]


def _g2_row(est: G2Estimate, bin_width_ps: int):
    tau_ns = est.tau_bins * bin_width_ps / 1000
    return [est.tau_bins, f"{tau_ns:g}", est.coincidences, est.singles_1, est.singles_2,
            est.n_bins, repr(est.g2), repr(est.g2_err), est.flag]


def g2_curve_csv(curve: G2Curve) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(_G2_HEADER)
    for p in curve.points:
        w.writerow(_g2_row(p, curve.bin_width_ps))
    return buf.getvalue()


def g2_scan_csv(scan, bin_width_ps: int) -> str:
    """Flux scan table: the g2 columns prefixed by the LO flux."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["lo_flux_hz"] + _G2_HEADER)
    for flux, est in scan:
        w.writerow([repr(float(flux))] + _g2_row(est, bin_width_ps))
    return buf.getvalue()
