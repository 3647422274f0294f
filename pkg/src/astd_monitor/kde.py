"""Gaussian kernel density estimation over the 1440-minute daily grid.

A user's activity profile is the estimated probability density of event
occurrence per minute of the day, evaluated and stored at the 1440 integer
minutes so that classification is a plain array lookup. Densities use the
standard Gaussian kernel; bandwidth defaults to the Silverman rule of
thumb with a one-minute floor.

Two evaluation strategies produce the same sums to float64 accuracy: a
direct per-sample broadcast for small samples, and minute-binning plus a
discrete convolution for large ones (samples are integer minutes, so the
binned form is exact, not an approximation).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from astd_monitor.calendar_periods import MinuteOfDay, Period

GRID_MINUTES = 1440
MIN_BANDWIDTH = 1.0

# Below this sample count the broadcast path is cheaper than convolution.
_DIRECT_PATH_MAX = 256

_SQRT_TWO_PI = math.sqrt(2.0 * math.pi)


@dataclass(frozen=True)
class KdeProfile:
    """Fitted density per grid minute, with the bandwidth that produced it."""

    densities: np.ndarray
    bandwidth: float
    sample_count: int

    def __post_init__(self) -> None:
        dens = np.asarray(self.densities, dtype=np.float64)
        if dens.shape != (GRID_MINUTES,):
            raise ValueError(f"profile must hold {GRID_MINUTES} densities, got shape {dens.shape}")
        if np.any(dens < 0.0) or not np.all(np.isfinite(dens)):
            raise ValueError("densities must be finite and non-negative")
        if not self.bandwidth > 0.0:
            raise ValueError(f"bandwidth must be positive, got {self.bandwidth}")
        if self.sample_count < 1:
            raise ValueError(f"sample_count must be at least 1, got {self.sample_count}")
        dens.setflags(write=False)
        object.__setattr__(self, "densities", dens)


def fuse_samples(
    events_by_week: Mapping[Period, Sequence[MinuteOfDay]],
    used_periods: Iterable[Period],
) -> list[MinuteOfDay]:
    """Concatenate the minute lists of the window periods, in window order.

    Periods missing from the mapping contribute nothing; keys outside the
    window are ignored.
    """
    merged: list[MinuteOfDay] = []
    for period in used_periods:
        merged.extend(events_by_week.get(period, ()))
    return merged


def select_bandwidth(sample: Sequence[MinuteOfDay]) -> float:
    """Silverman rule-of-thumb bandwidth, floored at one minute.

    h = 0.9 * min(sigma, IQR / 1.34) * m**(-1/5). Degenerate samples
    (zero spread, or a single point) clamp to the floor.
    """
    if len(sample) == 0:
        raise ValueError("cannot select a bandwidth for an empty sample")
    x = np.asarray(sample, dtype=np.float64)
    sigma = float(x.std())
    q75, q25 = np.percentile(x, [75, 25])
    h = 0.9 * min(sigma, (q75 - q25) / 1.34) * len(x) ** -0.2
    return max(h, MIN_BANDWIDTH)


def _kernel_over(dist: np.ndarray, bandwidth: float) -> np.ndarray:
    z = dist / bandwidth
    return np.exp(-0.5 * z * z) / _SQRT_TWO_PI


def fit_profile(
    sample: Sequence[MinuteOfDay],
    bandwidth: float | None = None,
    circular: bool = False,
) -> KdeProfile:
    """Fit the Gaussian KDE of ``sample`` on the 1440-minute grid.

    densities[g] = (1 / (m*h)) * sum_i phi((g - x_i) / h) with phi the
    standard normal density. ``bandwidth=None`` selects it by the Silverman
    rule. With ``circular=True`` the kernel sees the wrapped minute
    difference (modulo 1440, shortest way around midnight); the default is
    the plain linear domain, which under-weights activity that straddles
    midnight.
    """
    m = len(sample)
    if m == 0:
        raise ValueError("cannot fit a profile from an empty sample")
    if bandwidth is None:
        bandwidth = select_bandwidth(sample)
    if not bandwidth > 0.0:
        raise ValueError(f"bandwidth must be positive, got {bandwidth}")

    x = np.asarray(sample, dtype=np.int64)
    if x.size and (x.min() < 0 or x.max() >= GRID_MINUTES):
        raise ValueError("sample minutes must lie in [0, 1439]")

    if m <= _DIRECT_PATH_MAX:
        grid = np.arange(GRID_MINUTES, dtype=np.float64)
        diff = np.abs(grid[np.newaxis, :] - x[:, np.newaxis].astype(np.float64))
        if circular:
            diff = np.minimum(diff, GRID_MINUTES - diff)
        dens = _kernel_over(diff, bandwidth).sum(axis=0) / (m * bandwidth)
    else:
        counts = np.bincount(x, minlength=GRID_MINUTES).astype(np.float64)
        offsets = np.abs(np.arange(-(GRID_MINUTES - 1), GRID_MINUTES, dtype=np.float64))
        if circular:
            offsets = np.minimum(offsets, GRID_MINUTES - offsets)
        kernel = _kernel_over(offsets, bandwidth)
        # Trim exact-zero tails (exp underflow); dropping them cannot change
        # any sum, and it shortens the convolution a lot for small bandwidths.
        nonzero = np.flatnonzero(kernel)
        lo, hi = nonzero[0], nonzero[-1]
        full = np.convolve(counts, kernel[lo : hi + 1])
        start = GRID_MINUTES - 1 - lo
        dens = full[start : start + GRID_MINUTES] / (m * bandwidth)

    return KdeProfile(densities=dens, bandwidth=float(bandwidth), sample_count=m)


def density_at(profile: KdeProfile, minute: MinuteOfDay) -> float:
    """Density at a grid minute (pure lookup)."""
    if not 0 <= minute < GRID_MINUTES:
        raise ValueError(f"minute must lie in [0, 1439], got {minute}")
    return float(profile.densities[minute])


def classify_minute(profile: KdeProfile, minute: MinuteOfDay, threshold: float) -> bool:
    """True when the minute is anomalous: density at or below the threshold."""
    return density_at(profile, minute) <= threshold
