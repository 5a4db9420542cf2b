"""Generate the bundled synthetic hourly shape profiles.

Writes one CSV per shape under src/outageplan/data/profiles/. The shapes are
closed-form (trig plus piecewise schedules), so regenerating them is exactly
reproducible with no RNG involved. Values are relative shapes; the planner
rescales them to each facility's peak load.

Run from the repository root:

    python tools/make_profiles.py
"""

from __future__ import annotations

import math
from pathlib import Path

HOURS = 8760
OUT = Path(__file__).resolve().parent.parent / "src" / "outageplan" / "data" / "profiles"


def day_of_year(hour: int) -> int:
    return hour // 24


def hour_of_day(hour: int) -> int:
    return hour % 24


def is_weekend(hour: int) -> bool:
    # day 0 is a Monday in this synthetic calendar
    return day_of_year(hour) % 7 >= 5


def seasonal(hour: int, amplitude: float) -> float:
    """Annual cosine peaking at midsummer (day 172)."""
    d = day_of_year(hour)
    return 1.0 + amplitude * math.cos(2.0 * math.pi * (d - 172) / 365.0)


def hospital(hour: int) -> float:
    h = hour_of_day(hour)
    base = 0.72
    diurnal = 0.28 * math.sin(math.pi * (h - 5) / 24.0) ** 2 if 5 <= h <= 23 else 0.04
    return (base + diurnal) * seasonal(hour, 0.08)


def school(hour: int) -> float:
    h = hour_of_day(hour)
    d = day_of_year(hour)
    summer_break = 172 <= d < 244
    if is_weekend(hour) or summer_break:
        return 0.12 * seasonal(hour, 0.05)
    if 7 <= h <= 17:
        ramp = math.sin(math.pi * (h - 7) / 10.0)
        return (0.25 + 0.75 * ramp) * seasonal(hour, 0.05)
    return 0.15 * seasonal(hour, 0.05)


def residential(hour: int) -> float:
    h = hour_of_day(hour)
    morning = 0.55 * math.exp(-((h - 7.5) ** 2) / 4.5)
    evening = 1.0 * math.exp(-((h - 19.0) ** 2) / 8.0)
    base = 0.30
    weekend_lift = 0.10 if is_weekend(hour) else 0.0
    return (base + morning + evening + weekend_lift) * seasonal(hour, 0.12)


def pv(hour: int) -> float:
    h = hour_of_day(hour)
    d = day_of_year(hour)
    daylight = 12.0 + 3.0 * math.cos(2.0 * math.pi * (d - 172) / 365.0)
    sunrise = 12.0 - daylight / 2.0
    sunset = 12.0 + daylight / 2.0
    if h < sunrise or h > sunset:
        return 0.0
    x = (h - sunrise) / (sunset - sunrise)
    clearness = 0.92 + 0.08 * math.cos(2.0 * math.pi * d / 73.0)
    return math.sin(math.pi * x) ** 1.6 * clearness


def flat(hour: int) -> float:
    return 1.0


SHAPES = {
    "hospital": hospital,
    "school": school,
    "residential": residential,
    "pv": pv,
    "flat": flat,
}


def main() -> None:
    OUT.mkdir(parents=True, exist_ok=True)
    for name, fn in SHAPES.items():
        path = OUT / f"{name}.csv"
        with open(path, "w", newline="\n") as fh:
            fh.write("hour,value_kw\n")
            for hour in range(HOURS):
                fh.write(f"{hour},{fn(hour):.3f}\n")
        print(f"wrote {path}")


if __name__ == "__main__":
    main()
