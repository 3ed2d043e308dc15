"""Domain types, configuration loading and validation.

All times are integer picoseconds, all rates are in Hz (counts or photons per
second). Values are immutable once constructed; arrays held by the types are
flagged read-only.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Optional

import numpy as np

PS_PER_S = 10**12

# Calibration defaults: the per-detector dark rate gives an 18 Hz difference
# floor; the latch flux is a generous hard cutoff.
DEFAULT_DARK_RATE_HZ = 9.0
DEFAULT_LATCH_FLUX_HZ = 5e7
DEFAULT_DEAD_TIME_PS = 100_000


class ConfigError(ValueError):
    """Invalid or incomplete simulation configuration.

    ``problems`` lists every violated constraint, one message per field.
    """

    def __init__(self, problems):
        if isinstance(problems, str):
            problems = [problems]
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


class AnalysisError(ValueError):
    """Input data does not meet an analysis precondition."""


def _readonly(values, dtype) -> np.ndarray:
    arr = np.array(values, dtype=dtype, copy=True).reshape(-1)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class TimeTagStream:
    """Sorted detection timestamps of one channel over ``[0, duration_ps)``."""

    channel_id: int
    duration_ps: int
    tags: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "tags", _readonly(self.tags, np.int64))
        if self.duration_ps < 0:
            raise ValueError("duration_ps must be non-negative")
        t = self.tags
        if t.size:
            if t[0] < 0:
                raise ValueError("negative tag")
            if t[-1] >= self.duration_ps:
                raise ValueError("tag out of window")
            if np.any(np.diff(t) <= 0):
                raise ValueError("tags not strictly increasing")

    def __len__(self) -> int:
        return int(self.tags.size)

    def __eq__(self, other):
        if not isinstance(other, TimeTagStream):
            return NotImplemented
        return (
            self.channel_id == other.channel_id
            and self.duration_ps == other.duration_ps
            and np.array_equal(self.tags, other.tags)
        )

    __hash__ = None

    @property
    def rate_hz(self) -> float:
        """Mean click rate over the window."""
        if self.duration_ps == 0:
            return 0.0
        return len(self) * PS_PER_S / self.duration_ps

    def with_channel(self, channel_id: int) -> "TimeTagStream":
        return TimeTagStream(channel_id, self.duration_ps, self.tags)


@dataclass(frozen=True)
class DetectorModel:
    efficiency: float = 1.0
    dark_rate_hz: float = DEFAULT_DARK_RATE_HZ
    dead_time_ps: int = DEFAULT_DEAD_TIME_PS
    latch_flux_hz: Optional[float] = DEFAULT_LATCH_FLUX_HZ


@dataclass(frozen=True)
class SimConfig:
    """Run parameters for one detector-pair simulation.

    ``lo_flux_hz`` is the local-oscillator photon flux at the beamsplitter
    input before setup losses; ``path_efficiency`` lumps together all
    component losses shared by both arms.
    """

    lo_flux_hz: float
    path_efficiency: float = 0.93
    split_ratio: float = 0.5
    detector_a: DetectorModel = field(default_factory=DetectorModel)
    detector_b: DetectorModel = field(default_factory=DetectorModel)
    duration_ps: int = 5 * PS_PER_S
    seed: int = 0

    def detected_flux_hz(self, lo_flux_hz: Optional[float] = None) -> float:
        """Expected LO photon flux registered by both detectors together,
        before dead-time losses."""
        flux = self.lo_flux_hz if lo_flux_hz is None else lo_flux_hz
        s = self.split_ratio
        eta = s * self.detector_a.efficiency + (1.0 - s) * self.detector_b.efficiency
        return flux * self.path_efficiency * eta

    def with_flux(self, lo_flux_hz: float, **changes) -> "SimConfig":
        return replace(self, lo_flux_hz=lo_flux_hz, **changes)


@dataclass(frozen=True, eq=False)
class BinnedCounts:
    bin_width_ps: int
    counts: np.ndarray
    channel_id: int = 0

    def __post_init__(self):
        if self.bin_width_ps <= 0:
            raise ValueError("bin_width_ps must be positive")
        object.__setattr__(self, "counts", _readonly(self.counts, np.int64))
        if self.counts.size and self.counts.min() < 0:
            raise ValueError("negative count")

    def __len__(self) -> int:
        return int(self.counts.size)

    def __eq__(self, other):
        if not isinstance(other, BinnedCounts):
            return NotImplemented
        return (
            self.bin_width_ps == other.bin_width_ps
            and self.channel_id == other.channel_id
            and np.array_equal(self.counts, other.counts)
        )

    __hash__ = None

    @property
    def bin_width_s(self) -> float:
        return self.bin_width_ps / PS_PER_S


@dataclass(frozen=True, eq=False)
class DifferenceSeries:
    bin_width_ps: int
    diffs: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "diffs", _readonly(self.diffs, np.int64))

    def __len__(self) -> int:
        return int(self.diffs.size)


@dataclass(frozen=True)
class SweepPoint:
    """One flux setting of a sweep.

    After dark subtraction ``variance_rate_hz`` holds the corrected value and
    ``uncorrected_variance_hz`` keeps the measured one; before it the latter
    is ``None``.
    """

    lo_flux_set_hz: float
    lo_flux_detected_hz: float
    variance_rate_hz: float
    variance_rel_err: float
    shot_noise_ref_hz: float
    n_samples: int
    uncorrected_variance_hz: Optional[float] = None

    def __post_init__(self):
        if not self.variance_rate_hz >= 0:
            raise ValueError("variance_rate_hz must be non-negative")
        if self.n_samples < 2:
            raise ValueError("n_samples must be at least 2")

    @property
    def measured_variance_hz(self) -> float:
        if self.uncorrected_variance_hz is None:
            return self.variance_rate_hz
        return self.uncorrected_variance_hz


@dataclass(frozen=True)
class ClearanceResult:
    v_dc_hz: float
    v_lin_max_hz: float
    linear_limit_flux_hz: float
    clearance_db: float


@dataclass(frozen=True)
class G2Estimate:
    tau_bins: int
    coincidences: int
    singles_1: int
    singles_2: int
    n_bins: int
    g2: float
    g2_err: float
    flag: str = ""


def _check_unit_interval(problems, name, value):
    if not (0.0 <= value <= 1.0):
        problems.append(f"{name} out of [0,1] (got {value})")


def validate_config(cfg: SimConfig) -> SimConfig:
    """Return ``cfg`` unchanged, or raise ConfigError naming every bad field.

    Besides range checks this rejects configurations whose per-detector LO
    flux exceeds that detector's latch cutoff.
    """
    problems = []
    if not (math.isfinite(cfg.lo_flux_hz) and cfg.lo_flux_hz >= 0):
        problems.append(f"lo_flux_hz: must be finite and >= 0 (got {cfg.lo_flux_hz})")
    _check_unit_interval(problems, "path_efficiency", cfg.path_efficiency)
    _check_unit_interval(problems, "split_ratio", cfg.split_ratio)
    if not (isinstance(cfg.duration_ps, (int, np.integer)) and cfg.duration_ps > 0):
        problems.append(f"duration_ps: must be a positive integer (got {cfg.duration_ps})")
    if not isinstance(cfg.seed, (int, np.integer)) or not (0 <= cfg.seed < 2**64):
        problems.append(f"seed: must be a 64-bit unsigned integer (got {cfg.seed})")

    for arm, det, share in (
        ("detector_a", cfg.detector_a, cfg.split_ratio),
        ("detector_b", cfg.detector_b, 1.0 - cfg.split_ratio),
    ):
        _check_unit_interval(problems, f"{arm}.efficiency", det.efficiency)
        if not (math.isfinite(det.dark_rate_hz) and det.dark_rate_hz >= 0):
            problems.append(f"{arm}.dark_rate_hz: must be finite and >= 0 (got {det.dark_rate_hz})")
        if not (isinstance(det.dead_time_ps, (int, np.integer)) and det.dead_time_ps >= 0):
            problems.append(f"{arm}.dead_time_ps: must be an integer >= 0 (got {det.dead_time_ps})")
        if det.latch_flux_hz is not None:
            if not det.latch_flux_hz > 0:
                problems.append(f"{arm}.latch_flux_hz: must be > 0 (got {det.latch_flux_hz})")
            elif math.isfinite(cfg.lo_flux_hz):
                arm_flux = cfg.lo_flux_hz * cfg.path_efficiency * share
                if arm_flux > det.latch_flux_hz:
                    problems.append(
                        f"{arm}: detector latched ({arm_flux:.4g} photons/s "
                        f"exceeds cutoff {det.latch_flux_hz:.4g})"
                    )
    if problems:
        raise ConfigError(problems)
    return cfg


# --- key=value configuration files -------------------------------------------

_TOP_KEYS = {
    "lo_flux_hz": float,
    "path_efficiency": float,
    "split_ratio": float,
    "duration_ps": int,
    "seed": int,
}
_DETECTOR_KEYS = {
    "efficiency": float,
    "dark_rate_hz": float,
    "dead_time_ps": int,
    "latch_flux_hz": float,
}
_OPTIONAL_KEYS = {"detector_a_latch_flux_hz", "detector_b_latch_flux_hz"}


def config_keys() -> list[str]:
    keys = list(_TOP_KEYS)
    for arm in ("detector_a", "detector_b"):
        keys += [f"{arm}_{k}" for k in _DETECTOR_KEYS]
    return keys


def _parse_value(key, text, kind):
    try:
        if kind is int:
            # accept 1e5-style integers as long as they are exact
            try:
                return int(text)
            except ValueError:
                value = float(text)
                if not value.is_integer():
                    raise
                return int(value)
        return float(text)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {text!r} as {kind.__name__}") from None


def parse_config(text: str) -> SimConfig:
    """Parse flat ``key=value`` text into a SimConfig (not yet validated).

    Every key except the latch cutoffs is required; unknown or repeated keys
    are errors. An absent latch key, or the value ``none``, disables that
    cutoff.
    """
    known = set(config_keys())
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value")
        key, _, val = (s.strip() for s in line.partition("="))
        if key not in known:
            raise ConfigError(f"unknown key: {key}")
        if key in values:
            raise ConfigError(f"duplicate key: {key}")
        values[key] = val

    for key in config_keys():
        if key not in values and key not in _OPTIONAL_KEYS:
            raise ConfigError(f"missing key: {key}")

    top = {k: _parse_value(k, values[k], kind) for k, kind in _TOP_KEYS.items()}
    dets = {}
    for arm in ("detector_a", "detector_b"):
        kw = {}
        for k, kind in _DETECTOR_KEYS.items():
            name = f"{arm}_{k}"
            if k == "latch_flux_hz" and values.get(name, "none").lower() == "none":
                kw[k] = None
            else:
                kw[k] = _parse_value(name, values[name], kind)
        dets[arm] = DetectorModel(**kw)
    return SimConfig(detector_a=dets["detector_a"], detector_b=dets["detector_b"], **top)


def load_config(path) -> SimConfig:
    return parse_config(Path(path).read_text(encoding="utf-8"))


def format_config(cfg: SimConfig) -> str:
    """Inverse of :func:`parse_config`."""
    lines = [f"{k}={getattr(cfg, k)!r}" for k in _TOP_KEYS]
    for arm in ("detector_a", "detector_b"):
        det = getattr(cfg, arm)
        for f in fields(DetectorModel):
            value = getattr(det, f.name)
            lines.append(f"{arm}_{f.name}={'none' if value is None else repr(value)}")
    return "\n".join(lines) + "\n"


def config_to_dict(cfg: SimConfig) -> dict:
    out = {k: getattr(cfg, k) for k in _TOP_KEYS}
    for arm in ("detector_a", "detector_b"):
        det = getattr(cfg, arm)
        for f in fields(DetectorModel):
            out[f"{arm}_{f.name}"] = getattr(det, f.name)
    return out


def paper_like_config(lo_flux_hz: float = 0.0, *, seed: int = 0,
                      duration_ps: int = 5 * PS_PER_S,
                      dead_time_ps: int = DEFAULT_DEAD_TIME_PS,
                      dark_rate_hz: float = DEFAULT_DARK_RATE_HZ) -> SimConfig:
    """Balanced pair with 93 % path efficiency, unit detector efficiency,
    9 Hz dark counts and 100 ns dead time on each channel."""
    det = DetectorModel(1.0, dark_rate_hz, dead_time_ps, DEFAULT_LATCH_FLUX_HZ)
    return SimConfig(lo_flux_hz, 0.93, 0.5, det, det, duration_ps, seed)


def total_dark_rate_hz(cfg: SimConfig) -> float:
    return cfg.detector_a.dark_rate_hz + cfg.detector_b.dark_rate_hz
