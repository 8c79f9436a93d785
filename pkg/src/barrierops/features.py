"""Feature encoding shared by the trainer and the on-device predictor.

The model input is a fixed 8-float vector:

    [sin(2*pi*hour/24), cos(2*pi*hour/24),
     sin(2*pi*dow/7),   cos(2*pi*dow/7),
     is_weekend, temperature_c, precipitation_mm, wind_kmh]

``hour`` is the fractional hour of day (08:15 -> 8.25) and ``dow`` is the
integer day of week with Monday = 0. The barrier firmware analogue computes
the same vector from its own clock plus the last weather push.
"""

from __future__ import annotations

import math
from datetime import datetime

N_FEATURES = 8

FEATURE_NAMES = (
    "hour_sin",
    "hour_cos",
    "dow_sin",
    "dow_cos",
    "is_weekend",
    "temperature_c",
    "precipitation_mm",
    "wind_kmh",
)


def fractional_hour(ts: datetime) -> float:
    return ts.hour + ts.minute / 60.0 + ts.second / 3600.0


def is_weekend(ts: datetime) -> bool:
    return ts.weekday() >= 5


def encode(ts: datetime, temperature_c: float, precipitation_mm: float, wind_kmh: float) -> list[float]:
    """Build the 8-float model input for one observation."""
    h = fractional_hour(ts)
    dow = float(ts.weekday())
    return [
        math.sin(2.0 * math.pi * h / 24.0),
        math.cos(2.0 * math.pi * h / 24.0),
        math.sin(2.0 * math.pi * dow / 7.0),
        math.cos(2.0 * math.pi * dow / 7.0),
        1.0 if is_weekend(ts) else 0.0,
        float(temperature_c),
        float(precipitation_mm),
        float(wind_kmh),
    ]
