#!/usr/bin/env python3
"""Regenerate the bundled week of sample data.

Writes data/household.csv (168 hourly rows, 2024-04-16 .. 2024-04-22) and
data/nextday_weather.csv (24 rows for 2024-04-23, no load column). Load is
a smooth function of the weather columns plus a small noise term, affinely
rescaled so the week's load mean/std land on 0.0846 / 0.0796.

Deterministic: fixed RNG seed, stable rounding.
"""

from pathlib import Path

import numpy as np

OUT_DIR = Path(__file__).resolve().parent.parent / "data"
DAYS = 7
TARGET_MEAN = 0.0846
TARGET_STD = 0.0796

# Per-day sky clearness; day 7 is the held-out forecast day.
CLEARNESS = [0.95, 0.72, 0.88, 1.00, 0.66, 0.91, 0.79, 0.85]


def solar(h, rise=6.0, span=12.0):
    """Daylight bell in [0, 1]; zero outside (rise, rise + span)."""
    x = (h - rise) / span
    return np.where((x > 0) & (x < 1), np.sin(np.pi * np.clip(x, 0, 1)), 0.0)


def weather(day, hours, rng):
    h = hours.astype(float)
    t = day * 24 + h
    clear = CLEARNESS[day]
    sun = solar(h)
    ghi = 820.0 * clear * sun + rng.normal(0, 6, h.size) * (sun > 0)
    ghi = np.clip(ghi, 0.0, None)
    # Overcast skies shift irradiance from direct to diffuse.
    dhi = ghi * (0.18 + 0.55 * (1.0 - clear))
    dni = np.where(sun > 0.05, (ghi - dhi) / np.maximum(sun, 0.05), 0.0)
    dni = np.clip(dni, 0.0, None)
    # Afternoon temperature peak, mild day-to-day drift.
    temperature = (
        8.5
        + 0.35 * day
        + 7.0 * clear * solar(h, rise=8.5)
        + rng.normal(0, 0.25, h.size)
    )
    pressure = 1013.0 + 4.5 * np.sin(2 * np.pi * t / 168.0 + 0.9) + rng.normal(0, 0.3, h.size)
    wind_speed = np.clip(
        2.6 + 2.1 * sun + 0.5 * np.sin(2 * np.pi * t / 53.0) + rng.normal(0, 0.3, h.size),
        0.2,
        None,
    )
    wind_direction = 190.0 + 52.0 * np.sin(2 * np.pi * t / 81.0 + 0.7) + rng.normal(0, 4.0, h.size)
    return np.column_stack([temperature, pressure, wind_speed, wind_direction, ghi, dni, dhi])


def load_from(weather_cols, rng):
    temperature, _, wind_speed = weather_cols[:, 0], weather_cols[:, 1], weather_cols[:, 2]
    ghi = weather_cols[:, 4]
    raw = (
        0.018
        + 3.0e-4 * ghi
        + 2.2e-3 * np.clip(16.5 - temperature, 0.0, None)
        + 1.6e-3 * wind_speed
        + rng.normal(0, 4.0e-2, weather_cols.shape[0])
    )
    # Alternate rescaling with the non-negativity clip until both anchors
    # settle; a single pass would leave the clipped night hours biased.
    scaled = raw
    for _ in range(12):
        scaled = (scaled - scaled.mean()) / scaled.std(ddof=1) * TARGET_STD + TARGET_MEAN
        scaled = np.clip(scaled, 1e-3, None)
    assert abs(scaled.mean() - TARGET_MEAN) < 0.005 * TARGET_MEAN
    assert abs(scaled.std(ddof=1) - TARGET_STD) < 0.005 * TARGET_STD
    return scaled


def rows(day, start="2024-04-16"):
    base = np.datetime64(start) + np.timedelta64(day, "D")
    return [f"{base}T{h:02d}:00:00" for h in range(24)]


def main():
    rng = np.random.default_rng(20240416)
    hours = np.arange(24)
    blocks = [weather(d, hours, rng) for d in range(DAYS + 1)]
    week = np.vstack(blocks[:DAYS])
    load = load_from(week, rng)

    OUT_DIR.mkdir(exist_ok=True)
    fmt = ["%.2f", "%.2f", "%.2f", "%.1f", "%.1f", "%.1f", "%.1f"]
    with open(OUT_DIR / "household.csv", "w") as f:
        f.write("timestamp,temperature,pressure,wind_speed,wind_direction,ghi,dni,dhi,load\n")
        stamps = [s for d in range(DAYS) for s in rows(d)]
        for i, stamp in enumerate(stamps):
            cells = [p % v for p, v in zip(fmt, week[i])]
            f.write(f"{stamp},{','.join(cells)},{load[i]:.5f}\n")

    with open(OUT_DIR / "nextday_weather.csv", "w") as f:
        f.write("timestamp,temperature,pressure,wind_speed,wind_direction,ghi,dni,dhi\n")
        for i, stamp in enumerate(rows(DAYS)):
            cells = [p % v for p, v in zip(fmt, blocks[DAYS][i])]
            f.write(f"{stamp},{','.join(cells)}\n")

    print(f"load mean {load.mean():.5f} std {load.std(ddof=1):.5f}")


if __name__ == "__main__":
    main()
