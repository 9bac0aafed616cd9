"""Sector carbon-intensity calibration.

Per segment, carbon intensities of unique counterparties are summarised by a
lognormal fitted with the method of moments; goodness of fit is the squared
probability-plot correlation coefficient against normal order-statistic
medians in log space.
"""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy.special import ndtri

from .ingest import DomainError
from .model import FUND, OTHER, SOV, AssetClass, SectorCalibration


class EmptySample(ValueError):
    pass


class InsufficientData(ValueError):
    pass


_SQRT2 = math.sqrt(2.0)


def norm_cdf(x: float) -> float:
    return 0.5 * math.erfc(-x / _SQRT2)


def fit_lognormal(m: float, v: float) -> tuple[float, float]:
    """Lognormal (mu, sigma) matching mean ``m`` and variance ``v``."""
    if not m > 0:
        raise DomainError(f"mean must be positive, got {m}")
    if v < 0:
        raise DomainError(f"variance must be nonnegative, got {v}")
    ratio = v / (m * m)
    # log1p keeps sigma accurate when v is tiny relative to m**2
    mu = math.log(m) - 0.5 * math.log1p(ratio)
    sigma = math.sqrt(math.log1p(ratio))
    return mu, sigma


def lognormal_moments(mu: float, sigma: float) -> tuple[float, float]:
    """Mean and variance of a lognormal(mu, sigma)."""
    m = math.exp(mu + 0.5 * sigma * sigma)
    return m, math.expm1(sigma * sigma) * m * m


def filliben_medians(n: int) -> np.ndarray:
    """Uniform order-statistic medians used by the probability-plot correlation test."""
    if n < 1:
        raise InsufficientData("need at least one observation")
    i = np.arange(1, n + 1, dtype=float)
    med = (i - 0.3175) / (n + 0.365)
    med[-1] = 0.5 ** (1.0 / n)
    med[0] = 1.0 - med[-1]
    return med


def filliben_r2(values: Sequence[float]) -> float:
    """Squared correlation of sorted log values with normal order-statistic medians.

    Constant samples have no spread to correlate; they are reported as 1.0.
    """
    x = np.sort(np.log(np.asarray(values, dtype=float)))
    n = x.size
    if n < 3:
        raise InsufficientData(f"need n >= 3, got {n}")
    if x[0] == x[-1]:
        return 1.0
    z = ndtri(filliben_medians(n))
    r = np.corrcoef(x, z)[0, 1]
    return float(min(1.0, r * r))


@dataclass(frozen=True)
class SampleSet:
    segment: str
    values: tuple[float, ...]

    @classmethod
    def from_values(cls, segment: str, values: Iterable[float]) -> "SampleSet":
        return cls(segment, tuple(float(v) for v in values if v is not None and v > 0))

    @property
    def n(self) -> int:
        return len(self.values)


def calibrate_segment(samples: SampleSet, keep_samples: bool = True) -> SectorCalibration:
    if samples.n == 0:
        raise EmptySample(f"no positive carbon intensities for segment {samples.segment}")
    x = np.asarray(samples.values, dtype=float)
    mean = float(x.mean())
    std = float(x.std(ddof=1)) if x.size > 1 else 0.0
    mu, sigma = fit_lognormal(mean, std * std)
    r2 = filliben_r2(x) if x.size >= 3 else 1.0
    return SectorCalibration(
        segment=samples.segment,
        n=int(x.size),
        mean=mean,
        std=std,
        ln_mean=mu,
        ln_std=sigma,
        r2=r2,
        samples=tuple(sorted(samples.values)) if keep_samples else None,
    )


def quantile_of(ci: float, cal: SectorCalibration, empirical: bool = False) -> float:
    """Position of ``ci`` in the segment's carbon-intensity distribution.

    Uses the fitted lognormal CDF. With ``empirical=True`` and stored samples,
    uses the mid-rank empirical CDF instead.
    """
    if not ci > 0:
        raise DomainError(f"carbon intensity must be positive, got {ci}")
    if empirical and cal.samples:
        s = cal.samples
        lo = bisect.bisect_left(s, ci)
        hi = bisect.bisect_right(s, ci)
        return (lo + 0.5 * (hi - lo)) / len(s)
    x = math.log(ci)
    if cal.ln_std == 0:
        if math.isclose(x, cal.ln_mean, rel_tol=1e-12, abs_tol=1e-12):
            return 0.5
        return 0.0 if x < cal.ln_mean else 1.0
    return norm_cdf((x - cal.ln_mean) / cal.ln_std)


# ---------------------------------------------------------------------------
# Segment averages of volatility, CQS and duration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class InstrumentMetrics:
    """What the averaging step needs to know about one unique instrument."""

    isin: str
    asset_class: AssetClass
    segment: str
    volatility: float | None = None
    cqs: int | None = None
    duration: float | None = None


@dataclass(frozen=True)
class SegmentAverages:
    volatility: Mapping[str, float]
    cqs: Mapping[str, float]
    duration: Mapping[str, float]
    sovereign_cqs: float
    sovereign_duration: float
    from_defaults: frozenset[str] = field(default_factory=frozenset)

    def volatility_for(self, segment: str) -> float:
        return self.volatility.get(segment, self.volatility[OTHER])

    def cqs_for(self, segment: str) -> float:
        return self.cqs.get(segment, self.cqs[OTHER])

    def duration_for(self, segment: str) -> float:
        return self.duration.get(segment, self.duration[OTHER])


def _mean(values: list[float]) -> float | None:
    return sum(values) / len(values) if values else None


def segment_averages(
    instruments: Iterable[InstrumentMetrics],
    defaults: Mapping[str, SectorCalibration],
) -> SegmentAverages:
    """Arithmetic means over unique instruments, falling back to ``defaults``.

    Volatility comes from equities, CQS and spread duration from corporate
    bonds, and the sovereign CQS/duration from sovereign bonds.
    """
    vol: dict[str, list[float]] = {}
    cqs: dict[str, list[float]] = {}
    dur: dict[str, list[float]] = {}
    sov_cqs: list[float] = []
    sov_dur: list[float] = []
    seen: set[str] = set()
    for inst in instruments:
        if inst.isin in seen:
            continue
        seen.add(inst.isin)
        if inst.asset_class is AssetClass.EQUITY and inst.volatility is not None:
            vol.setdefault(inst.segment, []).append(inst.volatility)
        elif inst.asset_class is AssetClass.CORPORATE_BOND:
            if inst.cqs is not None:
                cqs.setdefault(inst.segment, []).append(inst.cqs)
            if inst.duration is not None:
                dur.setdefault(inst.segment, []).append(inst.duration)
        elif inst.asset_class is AssetClass.SOVEREIGN_BOND:
            if inst.cqs is not None:
                sov_cqs.append(inst.cqs)
            if inst.duration is not None:
                sov_dur.append(inst.duration)

    fallback: set[str] = set()

    def merge(observed: dict[str, list[float]], attr: str, label: str) -> dict[str, float]:
        out = {}
        for seg, cal in defaults.items():
            if seg in (SOV, FUND) or getattr(cal, attr) is None:
                continue
            out[seg] = getattr(cal, attr)
            fallback.add(f"{label}:{seg}")
        for seg, values in observed.items():
            out[seg] = _mean(values)
            fallback.discard(f"{label}:{seg}")
        return out

    sov_default = defaults.get(SOV)
    sov_cqs_mean = _mean(sov_cqs)
    sov_dur_mean = _mean(sov_dur)
    if sov_cqs_mean is None:
        fallback.add("cqs:SOV")
    if sov_dur_mean is None:
        fallback.add("duration:SOV")
    averages = SegmentAverages(
        volatility=merge(vol, "mean_volatility", "volatility"),
        cqs=merge(cqs, "mean_cqs", "cqs"),
        duration=merge(dur, "mean_duration", "duration"),
        sovereign_cqs=sov_cqs_mean if sov_cqs_mean is not None else sov_default.mean_cqs,
        sovereign_duration=sov_dur_mean if sov_dur_mean is not None else sov_default.mean_duration,
        from_defaults=frozenset(fallback),
    )
    for table, label in ((averages.volatility, "volatility"), (averages.cqs, "cqs"), (averages.duration, "duration")):
        if OTHER not in table:
            raise DomainError(f"no {label} average available for the {OTHER!r} segment")
    return averages


def calibrate_universe(
    samples: Mapping[str, Iterable[float]],
    keep_samples: bool = True,
) -> dict[str, SectorCalibration]:
    """Calibrate every segment with at least one positive observation."""
    out = {}
    for seg in sorted(samples):
        sample = SampleSet.from_values(seg, samples[seg])
        if sample.n:
            out[seg] = calibrate_segment(sample, keep_samples=keep_samples)
    return out


def merge_calibrations(
    fitted: Mapping[str, SectorCalibration],
    defaults: Mapping[str, SectorCalibration],
    min_n: int = 1,
) -> dict[str, SectorCalibration]:
    """Fitted segments override defaults; segment averages stay from defaults."""
    out = dict(defaults)
    for seg, cal in fitted.items():
        if cal.n < min_n:
            continue
        base = defaults.get(seg)
        if base is not None:
            cal = SectorCalibration(
                segment=cal.segment, n=cal.n, mean=cal.mean, std=cal.std, ln_mean=cal.ln_mean,
                ln_std=cal.ln_std, r2=cal.r2, mean_volatility=base.mean_volatility,
                mean_cqs=base.mean_cqs, mean_duration=base.mean_duration, samples=cal.samples,
            )
        out[seg] = cal
    return out
