"""Exposure-time scaling and the map between learned values and HDR radiance.

Training composites a log-domain quantity, so multiplying radiance by an
exposure time becomes adding the log time. Raw log times can sit far from
the tone curve's useful range, so they are affinely rescaled: t' = r*ln t
+ s, with r the largest factor that keeps consecutive scaled times at
most ln 2 apart (r = min_i 2*t_i/t_{i+1}) and s centering the fitted set
so that t'(t_min) = -t'(t_max). The same (r, s) then converts between a
learned per-pixel value e and physical radiance: E = exp((e + s)/r).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Iterable

import numpy as np

log = logging.getLogger(__name__)

__all__ = [
    "ExposureScaler",
    "DegenerateExposuresError",
    "fit_scaler",
    "scale_time",
    "hdr_from_learned",
    "learned_from_hdr",
    "ev_to_seconds",
]


class DegenerateExposuresError(ValueError):
    """Fewer than two distinct exposure times."""


@dataclass(frozen=True)
class ExposureScaler:
    r: float
    s: float

    def __post_init__(self):
        if not (self.r > 0 and math.isfinite(self.r)):
            raise ValueError("scale r must be positive and finite")
        if not math.isfinite(self.s):
            raise ValueError("offset s must be finite")


def fit_scaler(times: Iterable[float]) -> ExposureScaler:
    """Fit (r, s) from the training exposure times.

    Times are sorted and deduplicated first; at least two distinct
    positive values are required.
    """
    t = np.unique(np.asarray(list(times), dtype=np.float64))
    if t.size and t[0] <= 0:
        raise ValueError("exposure times must be positive")
    if t.size < 2:
        raise DegenerateExposuresError(
            "need at least two distinct exposure times to fit a scaler"
        )
    r = float(np.min(2.0 * t[:-1] / t[1:]))
    if r > 1.0:
        log.warning("exposure times closely spaced: fitted scale r=%.4g > 1", r)
    s = -r * (math.log(t[-1]) + math.log(t[0])) / 2.0
    return ExposureScaler(r=r, s=s)


def scale_time(scaler: ExposureScaler, t):
    """t' = r*ln t + s for positive exposure times (scalar or array)."""
    t = np.asarray(t, dtype=np.float64)
    if np.any(t <= 0):
        raise ValueError("exposure time must be positive")
    out = scaler.r * np.log(t) + scaler.s
    return float(out) if out.ndim == 0 else out


def hdr_from_learned(e_prime, scaler: ExposureScaler):
    """Linear HDR radiance E = exp((e + s)/r); overflow saturates."""
    e_prime = np.asarray(e_prime, dtype=np.float64)
    with np.errstate(over="ignore"):
        out = np.exp((e_prime + scaler.s) / scaler.r)
    n_sat = int(np.count_nonzero(np.isinf(out)))
    if n_sat:
        log.warning("hdr_from_learned saturated %d value(s) at float max", n_sat)
        out = np.where(np.isinf(out), np.finfo(np.float64).max, out)
    return float(out) if out.ndim == 0 else out


def learned_from_hdr(e, scaler: ExposureScaler):
    """Inverse map: e' = r*ln E - s for positive radiance."""
    e = np.asarray(e, dtype=np.float64)
    if np.any(e <= 0):
        raise ValueError("HDR radiance must be positive")
    out = scaler.r * np.log(e) - scaler.s
    return float(out) if out.ndim == 0 else out


def ev_to_seconds(ev, t_ref: float = 1.0):
    """Exposure value to seconds: t = 2**EV * t_ref."""
    ev = np.asarray(ev, dtype=np.float64)
    out = np.exp2(ev) * t_ref
    return float(out) if out.ndim == 0 else out
