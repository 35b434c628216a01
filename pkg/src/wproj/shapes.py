"""Named planar test shapes and the audit battery.

A shape is written ``name`` or ``name:arg:arg``; anything that is not a
known name is read as a set file path.
"""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np

from .lattice_geometry import (GeometryError, Lattice, LatticeSet, NearlySphericalProfile, load_set,
                               random_profile, rasterize_ball, rasterize_profile)

BATTERY_VERSION = "battery-v1"

# disks, squares, annuli, two-ball configurations, random blobs and a few others
BATTERY = (
    "ball:0.5", "ball:0.75", "ball:1",
    "square:1", "square:1.6", "rect:2:0.6",
    "annulus:0.5:1", "annulus:0.8:1.1",
    "ellipse:1.2:0.6", "ellipse:1.5:0.4",
    "cosine:0.1:2", "cosine:0.1:3", "cosine:0.2:4",
    "blob:0", "blob:1", "blob:2", "blob:3",
    "two_balls:0.5:0.2", "two_balls:0.5:1", "two_balls:0.4:0.1",
    "cross:1.2", "lshape:1.2",
)


def _args(parts, n, defaults):
    vals = list(defaults)
    if len(parts) > n:
        raise GeometryError(f"too many arguments in shape spec {':'.join(parts)!r}")
    for i, s in enumerate(parts):
        try:
            vals[i] = float(s)
        except ValueError as exc:
            raise GeometryError(f"bad shape argument {s!r}") from exc
    return vals


def _reach(name, a):
    """Half width of a window that holds the shape."""
    return {
        "ball": lambda: a[0], "square": lambda: a[0] / 2, "rect": lambda: max(a) / 2,
        "annulus": lambda: a[1], "ellipse": lambda: max(a), "cosine": lambda: 1 + a[0] + 0.05,
        "blob": lambda: 1.6, "two_balls": lambda: 2 * a[0] + a[1] / 2, "three_balls": lambda: 3 * a[0] + a[1],
        "cross": lambda: a[0] / 2, "lshape": lambda: a[0] / 2, "empty": lambda: 1.0,
    }[name]()


def build_shape(spec: str, h: float, half_width: float | None = None) -> LatticeSet:
    """Rasterize a named shape on a square window centred at the origin."""
    if h <= 0:
        raise GeometryError("h must be positive")
    parts = spec.split(":")
    name, rest = parts[0], parts[1:]
    if name == "file":
        return _load(":".join(rest))
    defaults = {
        "ball": (1.0,), "square": (math.sqrt(math.pi),), "rect": (2.0, 0.6), "annulus": (0.5, 1.0),
        "ellipse": (1.2, 0.6), "cosine": (0.1, 2), "blob": (0,), "two_balls": (0.5, 0.5),
        "three_balls": (0.4, 0.3), "cross": (1.2,), "lshape": (1.2,), "empty": (),
    }
    if name not in defaults:
        return _load(spec)
    a = _args(rest, len(defaults[name]), defaults[name])
    half = half_width or (_reach(name, a) + 3 * h)
    lat = Lattice.square(h, half)
    x, y = lat.grid_centers()
    if name == "ball":
        return rasterize_ball(lat, None, a[0], True)
    if name == "square":
        s = a[0] / 2
        return LatticeSet(lat, (np.abs(x) <= s) & (np.abs(y) <= s))
    if name == "rect":
        return LatticeSet(lat, (np.abs(x) <= a[0] / 2) & (np.abs(y) <= a[1] / 2))
    if name == "annulus":
        r = np.hypot(x, y)
        return LatticeSet(lat, (r >= a[0]) & (r <= a[1]))
    if name == "ellipse":
        return LatticeSet(lat, (x / a[0]) ** 2 + (y / a[1]) ** 2 <= 1)
    if name == "cosine":
        prof = NearlySphericalProfile.cosine(a[0], int(a[1])).with_area()
        return rasterize_profile(lat, prof, 1.0, math.pi)
    if name == "blob":
        prof = random_profile(int(a[0])).with_area()
        return rasterize_profile(lat, prof, 1.0, math.pi)
    if name in ("two_balls", "three_balls"):
        r, gap = a
        k = 2 if name == "two_balls" else 3
        xs = (np.arange(k) - (k - 1) / 2) * (2 * r + gap)
        m = np.zeros(lat.extent, bool)
        for cx in xs:
            m |= rasterize_ball(lat, (cx, 0.0), r, True).mask
        return LatticeSet(lat, m)
    if name == "cross":
        s, t = a[0] / 2, a[0] / 6
        return LatticeSet(lat, ((np.abs(x) <= s) & (np.abs(y) <= t)) | ((np.abs(x) <= t) & (np.abs(y) <= s)))
    if name == "lshape":
        s = a[0] / 2
        box = (np.abs(x) <= s) & (np.abs(y) <= s)
        return LatticeSet(lat, box & ~((x > 0) & (y > 0)))
    return LatticeSet.empty(lat)


def _load(path: str) -> LatticeSet:
    if not path or not Path(path).is_file():
        raise FileNotFoundError(f"no such shape or set file: {path!r}")
    return load_set(path)


def ball_radius(spec: str) -> float | None:
    """Radius of a ``ball`` spec, None for other shapes."""
    parts = spec.split(":")
    if parts[0] != "ball":
        return None
    return _args(parts[1:], 1, (1.0,))[0]
