"""Continuous-variable analysis of the count-rate difference signal.

Variances are reported rate-normalized: the per-bin variance of
``counts_a - counts_b`` divided by the bin width in seconds. With this
normalization the vacuum shot-noise level equals the detected LO photon
flux, and uncorrelated dark counts contribute the sum of the two dark rates.
"""

from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace

import numpy as np

from .hbt import g2_flux_scan
from .model import (
    AnalysisError,
    BinnedCounts,
    ClearanceResult,
    DifferenceSeries,
    SimConfig,
    SweepPoint,
    total_dark_rate_hz,
    validate_config,
)
from .simgen import simulate_detector_pair
from .timetag import bin_counts

# Var(X) of the vacuum quadrature; 4 * |beta|^2 * 1/4 makes the
# difference variance equal to the LO photon number.
VACUUM_QUADRATURE_VARIANCE = 0.25
DEFAULT_BIN_WIDTH_PS = 500_000
DEFAULT_MAX_DEV = 0.1
DARK_THRESHOLD_FRACTION = 0.1


def difference_series(a: BinnedCounts, b: BinnedCounts) -> DifferenceSeries:
    if a.bin_width_ps != b.bin_width_ps:
        raise AnalysisError(f"bin widths differ ({a.bin_width_ps} vs {b.bin_width_ps} ps)")
    if len(a) != len(b):
        raise AnalysisError(f"series lengths differ ({len(a)} vs {len(b)})")
    return DifferenceSeries(a.bin_width_ps, a.counts - b.counts)


def sample_variance(x) -> float:
    """Unbiased sample variance, two-pass (mean first, then squared
    deviations) to avoid cancellation."""
    x = np.asarray(x, dtype=np.float64)
    n = x.size
    if n < 2:
        raise AnalysisError("need at least two samples")
    dev = x - x.mean()
    # second pass also removes the residual rounding error of the mean
    return float((np.dot(dev, dev) - dev.sum() ** 2 / n) / (n - 1))


def variance_rel_err(n: int) -> float:
    """Relative standard error of a sample variance from ``n`` samples."""
    return math.sqrt(1.0 / (2 * n - 2))


def rate_normalized_variance(d: DifferenceSeries):
    """``(variance_rate_hz, rel_err)`` of a difference series."""
    n = len(d)
    if n < 2:
        raise AnalysisError(f"need at least two bins, got {n}")
    var = sample_variance(d.diffs) / (d.bin_width_ps * 1e-12)
    return max(var, 0.0), variance_rel_err(n)


def shot_noise_reference(detected_flux_hz: float) -> float:
    """Vacuum shot-noise level of the rate-normalized difference variance."""
    if detected_flux_hz < 0:
        raise ValueError("flux must be non-negative")
    return 4.0 * VACUUM_QUADRATURE_VARIANCE * detected_flux_hz


def default_dark_threshold(cfg: SimConfig) -> float:
    return DARK_THRESHOLD_FRACTION * total_dark_rate_hz(cfg)


def estimate_dark_variance(sweep, flux_threshold_hz: float) -> float:
    """Mean variance over points whose detected LO flux is below the
    threshold, i.e. where the dark counts set the floor."""
    floor = [p.measured_variance_hz for p in sweep if p.lo_flux_detected_hz < flux_threshold_hz]
    if not floor:
        raise AnalysisError(
            f"no sweep points below {flux_threshold_hz:g} Hz to estimate the dark variance"
        )
    return float(np.mean(floor))


def subtract_dark_variance(sweep, v_dc_hz: float):
    if v_dc_hz < 0:
        raise ValueError("v_dc_hz must be non-negative")
    return [
        replace(p, variance_rate_hz=max(p.measured_variance_hz - v_dc_hz, 0.0),
                uncorrected_variance_hz=p.measured_variance_hz)
        for p in sweep
    ]


def log_deviation(variance_hz: float, reference_hz: float) -> float:
    """``|log10(variance / reference)|``, infinite when either is zero."""
    if variance_hz <= 0 or reference_hz <= 0:
        return math.inf
    return abs(math.log10(variance_hz / reference_hz))


def find_linear_limit(sweep, v_dc_hz: float, max_dev: float = DEFAULT_MAX_DEV):
    """Highest flux at which the dark-subtracted variance still tracks the
    shot-noise reference.

    Points count as compliant when their log deviation is at most
    ``max_dev``. The scan starts at the first compliant point whose shot
    noise reaches the dark floor (below it the subtracted variance is mostly
    counting noise) and stops at the first pair of consecutive violations.
    Returns ``(linear_limit_flux_hz, v_lin_max_hz)`` where the variance is
    the measured, not dark-subtracted, value.
    """
    pts = list(sweep)
    fluxes = [p.lo_flux_detected_hz for p in pts]
    if any(f2 < f1 for f1, f2 in zip(fluxes, fluxes[1:])):
        raise AnalysisError("sweep must be sorted by flux")
    ok = [
        log_deviation(p.measured_variance_hz - v_dc_hz, p.shot_noise_ref_hz) <= max_dev
        for p in pts
    ]
    if not any(ok):
        raise AnalysisError("no sweep point lies within the linearity criterion")

    start = next((i for i, p in enumerate(pts) if ok[i] and p.shot_noise_ref_hz >= v_dc_hz),
                 ok.index(True))
    last = start
    i = start + 1
    while i < len(pts):
        if ok[i]:
            last = i
        elif i + 1 < len(pts) and not ok[i + 1]:
            break
        i += 1
    return pts[last].lo_flux_detected_hz, pts[last].measured_variance_hz


def clearance(v_dc_hz: float, v_lin_max_hz: float) -> float:
    """Shot-noise clearance in dB."""
    if v_dc_hz <= 0 or v_lin_max_hz <= 0:
        raise ValueError("clearance needs positive variances")
    return -10.0 * math.log10(v_dc_hz / v_lin_max_hz)


def analyze_sweep(sweep, flux_threshold_hz: float,
                  max_dev: float = DEFAULT_MAX_DEV) -> ClearanceResult:
    """Dark floor, linear limit and clearance of a raw sweep."""
    sweep = list(sweep)
    if len(sweep) < 2:
        raise AnalysisError("insufficient sweep: clearance needs at least two flux points")
    v_dc = estimate_dark_variance(sweep, flux_threshold_hz)
    if v_dc <= 0:
        raise AnalysisError("dark variance is zero; clearance undefined")
    limit_flux, v_lin = find_linear_limit(sweep, v_dc, max_dev)
    return ClearanceResult(v_dc, v_lin, limit_flux, clearance(v_dc, v_lin))


# --- sweeps ---------------------------------------------------------------


def point_seed(seed: int, index: int) -> int:
    """Independent 64-bit seed for sweep point ``index``."""
    state = np.random.SeedSequence([int(seed), int(index)]).generate_state(2, np.uint32)
    return int(state[0]) | (int(state[1]) << 32)


def measure_point(cfg: SimConfig, bin_width_ps: int = DEFAULT_BIN_WIDTH_PS,
                  g2_tau=None, min_coincidences: int = 0):
    """Simulate one configuration and reduce it to a SweepPoint.

    With ``g2_tau`` set, the g2 estimate at that shift is computed from the
    same time tags and returned alongside.
    """
    tags_a, tags_b = simulate_detector_pair(cfg)
    a, b = bin_counts(tags_a, bin_width_ps), bin_counts(tags_b, bin_width_ps)
    var, rel = rate_normalized_variance(difference_series(a, b))
    detected = cfg.detected_flux_hz()
    point = SweepPoint(cfg.lo_flux_hz, detected, var, rel, shot_noise_reference(detected), len(a))
    if g2_tau is None:
        return point
    (_, est), = g2_flux_scan([(cfg.lo_flux_hz, a, b)], tau_bins=g2_tau,
                             min_coincidences=min_coincidences)
    return point, est


def _measure_job(args):
    return measure_point(*args)


def run_sweep(base_cfg: SimConfig, flux_list, durations_ps=None,
              bin_width_ps: int = DEFAULT_BIN_WIDTH_PS, jobs: int = 1,
              g2_tau=None, min_coincidences: int = 0):
    """Simulate and reduce every flux of ``flux_list`` (sorted ascending).

    ``durations_ps`` optionally gives a per-point measurement time. Each
    point draws from its own seed derived from ``base_cfg.seed`` and the
    point's position, so results do not depend on ``jobs``.
    """
    fluxes = sorted(float(f) for f in flux_list)
    if not fluxes:
        raise AnalysisError("empty flux list")
    if durations_ps is None:
        durations_ps = [base_cfg.duration_ps] * len(fluxes)
    if len(durations_ps) != len(fluxes):
        raise ValueError("durations_ps must match flux_list in length")

    cfgs = [
        validate_config(base_cfg.with_flux(f, duration_ps=int(d),
                                           seed=point_seed(base_cfg.seed, i)))
        for i, (f, d) in enumerate(zip(fluxes, durations_ps))
    ]
    args = [(c, bin_width_ps, g2_tau, min_coincidences) for c in cfgs]
    if jobs > 1 and len(cfgs) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_measure_job, args))
    else:
        results = [_measure_job(a) for a in args]
    return results


def log_flux_grid(start_hz: float, stop_hz: float, points: int):
    return [float(f) for f in np.logspace(math.log10(start_hz), math.log10(stop_hz), points)]


_SWEEP_HEADER = ["lo_flux_set_hz", "lo_flux_detected_hz", "variance_rate_hz",
                 "variance_rel_err", "shot_noise_ref_hz", "dark_subtracted_variance_hz"]


def sweep_csv(sweep, v_dc_hz=None) -> str:
    """Sweep table; the dark-subtracted column is empty without ``v_dc_hz``."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(_SWEEP_HEADER)
    for p in sweep:
        v = p.measured_variance_hz
        sub = "" if v_dc_hz is None else repr(max(v - v_dc_hz, 0.0))
        w.writerow([repr(p.lo_flux_set_hz), repr(p.lo_flux_detected_hz), repr(v),
                    repr(p.variance_rel_err), repr(p.shot_noise_ref_hz), sub])
    return buf.getvalue()


def clearance_report(result: ClearanceResult) -> str:
    return json.dumps({
        "v_dc_hz": result.v_dc_hz,
        "v_lin_max_hz": result.v_lin_max_hz,
        "linear_limit_flux_hz": result.linear_limit_flux_hz,
        "clearance_db": result.clearance_db,
    }, indent=2) + "\n"
