"""Binary sets on regular lattices: volume, perimeter, components, rasterization.

Cells are addressed by integer index tuples; cell ``i`` covers
``origin + h * [i, i + 1)`` so its center sits at ``origin + h * (i + 0.5)``.
Index space is unbounded; ``extent`` only fixes the window a set lives in.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np
from scipy import ndimage
from scipy.spatial import ConvexHull, QhullError


class GeometryError(ValueError):
    pass


@dataclass(frozen=True)
class Lattice:
    d: int
    h: float
    origin: tuple[float, ...]
    extent: tuple[int, ...]

    def __post_init__(self):
        if self.d < 2:
            raise GeometryError("dimension must be at least 2")
        if not self.h > 0:
            raise GeometryError("cell size must be positive")
        origin = tuple(float(x) for x in self.origin)
        extent = tuple(int(x) for x in self.extent)
        if len(origin) != self.d or len(extent) != self.d:
            raise GeometryError("origin/extent length must equal d")
        if min(extent) < 1:
            raise GeometryError("extent components must be >= 1")
        object.__setattr__(self, "origin", origin)
        object.__setattr__(self, "extent", extent)
        object.__setattr__(self, "h", float(self.h))

    @property
    def cell_volume(self) -> float:
        return self.h**self.d

    @classmethod
    def square(cls, h: float, half_width: float, d: int = 2) -> "Lattice":
        """Centered cube [-L, L]^d with L rounded up to a whole number of cells."""
        n = int(math.ceil(half_width / h - 1e-9))
        return cls(d, h, tuple([-n * h] * d), tuple([2 * n] * d))

    def centers(self, idx: np.ndarray) -> np.ndarray:
        return np.asarray(self.origin) + self.h * (np.asarray(idx, dtype=float) + 0.5)

    def grid_centers(self) -> list[np.ndarray]:
        axes = [self.origin[k] + self.h * (np.arange(self.extent[k]) + 0.5) for k in range(self.d)]
        return np.meshgrid(*axes, indexing="ij")

    def scaled(self, t: float) -> "Lattice":
        """Same index window, every length multiplied by t."""
        return Lattice(self.d, self.h * t, tuple(t * x for x in self.origin), self.extent)


class LatticeSet:
    """Immutable set of cells inside a lattice window, backed by a boolean mask."""

    __slots__ = ("lattice", "_mask", "_key")

    def __init__(self, lattice: Lattice, mask: np.ndarray):
        mask = np.array(mask, dtype=bool)
        if mask.shape != lattice.extent:
            raise GeometryError(f"mask shape {mask.shape} does not match extent {lattice.extent}")
        mask.setflags(write=False)
        self.lattice = lattice
        self._mask = mask
        self._key = None

    @classmethod
    def empty(cls, lattice: Lattice) -> "LatticeSet":
        return cls(lattice, np.zeros(lattice.extent, dtype=bool))

    @classmethod
    def from_cells(cls, lattice: Lattice, cells) -> "LatticeSet":
        mask = np.zeros(lattice.extent, dtype=bool)
        cells = np.asarray(list(cells), dtype=np.int64).reshape(-1, lattice.d)
        if cells.size:
            if np.any(cells < 0) or np.any(cells >= np.asarray(lattice.extent)):
                raise GeometryError("cell index out of range")
            mask[tuple(cells.T)] = True
        return cls(lattice, mask)

    @property
    def mask(self) -> np.ndarray:
        return self._mask

    @property
    def h(self) -> float:
        return self.lattice.h

    @property
    def d(self) -> int:
        return self.lattice.d

    @property
    def n_cells(self) -> int:
        return int(self._mask.sum())

    @property
    def cells(self) -> np.ndarray:
        """Cell indices in lexicographic order, shape (n, d)."""
        return np.argwhere(self._mask)

    def centers(self) -> np.ndarray:
        return self.lattice.centers(self.cells)

    def is_empty(self) -> bool:
        return not self._mask.any()

    def with_mask(self, mask: np.ndarray) -> "LatticeSet":
        return LatticeSet(self.lattice, mask)

    def _same(self, other: "LatticeSet"):
        if other.lattice != self.lattice:
            raise GeometryError("sets live on different lattices")

    def union(self, other: "LatticeSet") -> "LatticeSet":
        self._same(other)
        return self.with_mask(self._mask | other._mask)

    def intersection(self, other: "LatticeSet") -> "LatticeSet":
        self._same(other)
        return self.with_mask(self._mask & other._mask)

    def difference(self, other: "LatticeSet") -> "LatticeSet":
        self._same(other)
        return self.with_mask(self._mask & ~other._mask)

    def symmetric_difference(self, other: "LatticeSet") -> "LatticeSet":
        self._same(other)
        return self.with_mask(self._mask ^ other._mask)

    def __eq__(self, other):
        return isinstance(other, LatticeSet) and self.lattice == other.lattice and np.array_equal(self._mask, other._mask)

    def __hash__(self):
        if self._key is None:
            self._key = hash((self.lattice, self._mask.tobytes()))
        return self._key

    def __len__(self):
        return self.n_cells

    def __repr__(self):
        return f"LatticeSet(h={self.h:g}, extent={self.lattice.extent}, cells={self.n_cells})"


# ---------------------------------------------------------------------------
# measurements


def volume(E: LatticeSet) -> float:
    return E.n_cells * E.lattice.cell_volume


def exposed_faces(mask: np.ndarray) -> int:
    padded = np.pad(mask, 1).astype(np.int8)
    total = 0
    for ax in range(mask.ndim):
        total += int(np.count_nonzero(np.diff(padded, axis=ax)))
    return total


def _crofton_table():
    dirs = [(1, 0), (2, 1), (1, 1), (1, 2), (0, 1), (-1, 2), (-1, 1), (-2, 1)]
    ang = np.array([math.atan2(b, a) % math.pi for a, b in dirs])
    order = np.argsort(ang)
    srt = ang[order]
    gaps = np.diff(np.concatenate([srt, [srt[0] + math.pi]]))
    width = 0.5 * (gaps + np.roll(gaps, 1))
    weights = np.empty(len(dirs))
    weights[order] = width / (2 * np.hypot(*np.array(dirs, dtype=float)[order].T))
    return tuple(dirs), weights


CROFTON_OFFSETS, CROFTON_WEIGHTS = _crofton_table()


def crofton_counts(mask: np.ndarray) -> np.ndarray:
    """Number of cell pairs split by the boundary, for each Crofton offset."""
    f = np.pad(mask, 2)
    out = np.empty(len(CROFTON_OFFSETS), dtype=np.int64)
    for k, (a, b) in enumerate(CROFTON_OFFSETS):
        x0 = f[2:-2, 2:-2]
        x1 = f[2 + a:f.shape[0] - 2 + a, 2 + b:f.shape[1] - 2 + b]
        # pairs (x, x + e) with exactly one end inside; cells of the pad layer
        # enter through the shifted view, so count from both ends
        x2 = f[2 - a:f.shape[0] - 2 - a, 2 - b:f.shape[1] - 2 - b]
        out[k] = np.count_nonzero(x0 & ~x1) + np.count_nonzero(x0 & ~x2)
    return out


def perimeter(E: LatticeSet, estimator: str = "cell-edge") -> float:
    """Boundary measure of the set.

    ``cell-edge`` is the exact perimeter of the union of cells (anisotropic:
    it converges to the l1 perimeter of smooth sets).  ``marching-contour``
    (d = 2) averages the indicator to cell corners over a 4x4 cell block,
    takes the 1/2 level line by linear interpolation on each corner square and
    returns its length.  ``crofton`` (d = 2) is a Cauchy-Crofton count over
    eight lattice directions: every split pair of cells along direction e
    contributes a weight proportional to its angular share over |e|.  It is
    isotropic to about 1.5% for straight boundaries, consistent for disks,
    and charges every exposed cell, which makes it the robust choice for
    optimization.
    """
    if estimator == "cell-edge":
        return exposed_faces(E.mask) * E.h ** (E.d - 1)
    if estimator == "crofton":
        if E.d != 2:
            raise GeometryError("crofton perimeter is only available for d = 2")
        return float(np.dot(crofton_counts(E.mask), CROFTON_WEIGHTS)) * E.h
    if estimator == "marching-contour":
        if E.d != 2:
            raise GeometryError("marching-contour perimeter is only available for d = 2")
        return _contour_length(E.mask) * E.h
    raise GeometryError(f"unknown perimeter estimator {estimator!r}")


PERIMETER_ESTIMATORS = ("cell-edge", "marching-contour", "crofton")


def _contour_length(mask: np.ndarray) -> float:
    # corner field: mean over the 4x4 block of cells centred on each lattice
    # vertex (a 2x2 block leaves a ~1.4% anisotropic bias on disks)
    f = np.pad(mask.astype(float), 3)
    f = f[:-3] + f[1:-2] + f[2:-1] + f[3:]
    g = (f[:, :-3] + f[:, 1:-2] + f[:, 2:-1] + f[:, 3:]) / 16.0
    a = g[:-1, :-1]  # (0,0)
    b = g[1:, :-1]   # (1,0)
    c = g[1:, 1:]    # (1,1)
    d = g[:-1, 1:]   # (0,1)
    lvl = 0.5

    def cross(v0, v1):
        return (lvl - v0) / np.where(v1 != v0, v1 - v0, 1.0)

    s = (a > lvl).astype(np.int8) | ((b > lvl).astype(np.int8) << 1) | ((c > lvl).astype(np.int8) << 2) | ((d > lvl).astype(np.int8) << 3)
    active = (s != 0) & (s != 15)
    if not active.any():
        return 0.0
    A, B, C, D = a[active], b[active], c[active], d[active]
    # edge crossing points in local square coordinates (x along first axis)
    e0 = np.stack([cross(A, B), np.zeros_like(A)], 1)     # bottom: a-b
    e1 = np.stack([np.ones_like(A), cross(B, C)], 1)      # right: b-c
    e2 = np.stack([cross(D, C), np.ones_like(A)], 1)      # top: d-c
    e3 = np.stack([np.zeros_like(A), cross(A, D)], 1)     # left: a-d
    edges = np.stack([e0, e1, e2, e3], 1)
    # which edges are crossed
    ab = (A > lvl) != (B > lvl)
    bc = (B > lvl) != (C > lvl)
    cd = (C > lvl) != (D > lvl)
    da = (D > lvl) != (A > lvl)
    crossed = np.stack([ab, bc, cd, da], 1)
    length = np.zeros(A.shape[0])
    two = crossed.sum(1) == 2
    if two.any():
        pts = edges[two][crossed[two]].reshape(-1, 2, 2)
        length[two] = np.linalg.norm(pts[:, 0] - pts[:, 1], axis=1)
    four = ~two
    if four.any():
        # saddle: resolve with the square's mean value
        E4 = edges[four]
        center = 0.25 * (A[four] + B[four] + C[four] + D[four])
        a_in = A[four] > lvl
        join_ab = (center > lvl) != a_in  # corner a isolated: pair (left,bottom) and (right,top)
        l1 = np.linalg.norm(E4[:, 3] - E4[:, 0], axis=1) + np.linalg.norm(E4[:, 1] - E4[:, 2], axis=1)
        l2 = np.linalg.norm(E4[:, 0] - E4[:, 1], axis=1) + np.linalg.norm(E4[:, 2] - E4[:, 3], axis=1)
        length[four] = np.where(join_ab, l1, l2)
    return float(length.sum())


def connected_components(E: LatticeSet) -> list[LatticeSet]:
    """Face-connected components, largest first, ties by smallest lexicographic cell."""
    if E.is_empty():
        return []
    structure = ndimage.generate_binary_structure(E.d, 1)
    labels, k = ndimage.label(E.mask, structure=structure)
    flat = labels.reshape(-1)
    idx = np.nonzero(flat)[0]
    lab = flat[idx]
    sizes = np.bincount(lab, minlength=k + 1)
    firsts = np.full(k + 1, np.iinfo(np.int64).max)
    np.minimum.at(firsts, lab, idx)
    order = sorted(range(1, k + 1), key=lambda c: (-sizes[c], firsts[c]))
    return [E.with_mask(labels == c) for c in order]


def diameter(E: LatticeSet) -> float:
    """Max center-to-center distance plus h * sqrt(d) (dominates the polygon diameter)."""
    if E.is_empty():
        raise GeometryError("diameter of an empty set")
    pts = E.centers()
    if len(pts) > 3 and E.d == 2:
        try:
            pts = pts[ConvexHull(pts).vertices]
        except QhullError:
            pass
    if len(pts) > 4000:
        # exact via hull for d=2; otherwise fall back to chunked brute force
        best = 0.0
        for s in range(0, len(pts), 2000):
            dd = ((pts[s:s + 2000, None, :] - pts[None, :, :]) ** 2).sum(-1)
            best = max(best, float(dd.max()))
        far = math.sqrt(best)
    else:
        dd = ((pts[:, None, :] - pts[None, :, :]) ** 2).sum(-1)
        far = math.sqrt(float(dd.max()))
    return far + E.h * math.sqrt(E.d)


def barycenter(E: LatticeSet) -> np.ndarray:
    if E.is_empty():
        raise GeometryError("barycenter of an empty set")
    return E.centers().mean(axis=0)


# ---------------------------------------------------------------------------
# rasterization


def unit_ball_volume(d: int) -> float:
    return math.pi ** (d / 2) / math.gamma(d / 2 + 1)


def _match(mask: np.ndarray, score: np.ndarray, inside: np.ndarray, target_cells: float) -> np.ndarray:
    """Flip boundary cells (smallest |score| first) until the count is within 1/2 of target."""
    mask = mask.copy()
    count = int(mask.sum())
    flat = mask.reshape(-1)
    sc = np.abs(score).reshape(-1)
    if count > target_cells + 0.5:
        cand = np.nonzero(flat)[0]
        need = int(math.ceil(count - target_cells - 0.5))
        order = cand[np.lexsort((cand, sc[cand]))]
        flat[order[:need]] = False
    elif count < target_cells - 0.5:
        cand = np.nonzero(~flat)[0]
        need = int(math.ceil(target_cells - 0.5 - count))
        if need > cand.size:
            raise GeometryError("lattice window too small for the requested volume")
        order = cand[np.lexsort((cand, sc[cand]))]
        flat[order[:need]] = True
    return flat.reshape(mask.shape)


def _check_fits(lattice: Lattice, center, r: float):
    lo = np.asarray(lattice.origin)
    hi = lo + lattice.h * np.asarray(lattice.extent)
    c = np.asarray(center, dtype=float)
    if np.any(c - r < lo - 1e-12) or np.any(c + r > hi + 1e-12):
        raise GeometryError("ball does not fit in the lattice window")


def rasterize_ball(lattice: Lattice, center=None, r: float = 1.0,
                   match_volume: bool | float = False) -> LatticeSet:
    """Cells whose center lies in the closed ball.

    ``match_volume=True`` adds/removes boundary cells (ordered by
    |distance - r|, index order on ties) until the volume is within h^d/2 of
    the ball volume; a float gives an explicit target volume instead.
    """
    center = np.zeros(lattice.d) if center is None else np.asarray(center, dtype=float)
    _check_fits(lattice, center, r)
    grids = lattice.grid_centers()
    dist = np.sqrt(sum((g - c) ** 2 for g, c in zip(grids, center)))
    mask = dist <= r
    if match_volume is not False:
        target = unit_ball_volume(lattice.d) * r**lattice.d if match_volume is True else float(match_volume)
        mask = _match(mask, dist - r, mask, target / lattice.cell_volume)
    return LatticeSet(lattice, mask)


@dataclass(frozen=True)
class NearlySphericalProfile:
    """Radial perturbation f of the unit circle, sampled at theta_k = 2 pi k / K."""

    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=float).reshape(-1)
        if v.size < 1 or not np.all(np.isfinite(v)):
            raise GeometryError("profile needs finite samples")
        if np.any(1 + v <= 0):
            raise GeometryError("profile must satisfy 1 + f > 0")
        if np.max(np.abs(v)) > 0.5:
            raise GeometryError("profile outside the admissible window sup|f| <= 0.5")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @classmethod
    def from_function(cls, fn: Callable[[np.ndarray], np.ndarray], n: int = 4096) -> "NearlySphericalProfile":
        theta = 2 * np.pi * np.arange(n) / n
        return cls(np.asarray(fn(theta), dtype=float))

    @classmethod
    def cosine(cls, eps: float, k: int, n: int = 4096) -> "NearlySphericalProfile":
        return cls.from_function(lambda t: eps * np.cos(k * t), n)

    @classmethod
    def constant(cls, c: float, n: int = 16) -> "NearlySphericalProfile":
        return cls(np.full(n, float(c)))

    def __call__(self, theta) -> np.ndarray:
        v = self.values
        K = v.size
        s = np.mod(np.asarray(theta, dtype=float), 2 * np.pi) * (K / (2 * np.pi))
        k0 = np.floor(s).astype(np.int64) % K
        w = s - np.floor(s)
        f0 = v[k0]
        f1 = v[(k0 + 1) % K]
        return f0 + w * (f1 - f0)

    def l2_squared(self) -> float:
        """Periodic trapezoid value of the integral of f^2 over the circle."""
        return float(np.mean(self.values**2) * 2 * np.pi)

    def area(self) -> float:
        return float(np.mean((1 + self.values) ** 2) * np.pi)

    def length(self) -> float:
        """Length of the curve r = 1 + f, with f' from the trigonometric interpolant."""
        v = self.values
        k = np.fft.rfftfreq(v.size, 1.0 / v.size)
        df = np.fft.irfft(1j * k * np.fft.rfft(v), n=v.size)
        return float(np.mean(np.sqrt((1 + v) ** 2 + df**2)) * 2 * np.pi)

    def with_area(self, area: float = math.pi) -> "NearlySphericalProfile":
        """The same shape dilated about the origin to the given area."""
        s = math.sqrt(area / self.area())
        return NearlySphericalProfile(s * (1 + self.values) - 1)


def random_profile(seed: int, max_amplitude: float = 0.12) -> NearlySphericalProfile:
    """Sum of cosines with modes 2..5, random amplitudes and phases."""
    rng = np.random.default_rng(seed)
    ks = np.arange(2, 6)
    amp = rng.uniform(0.0, max_amplitude, ks.size)
    ph = rng.uniform(0.0, 2 * np.pi, ks.size)
    return NearlySphericalProfile.from_function(
        lambda t: sum(a * np.cos(k * t + q) for a, k, q in zip(amp, ks, ph)))


def rasterize_profile(lattice: Lattice, profile: NearlySphericalProfile, scale: float = 1.0,
                      match_volume: bool | float = False) -> LatticeSet:
    """Cells whose center (r, theta) satisfies r <= scale * (1 + f(theta)).

    ``match_volume=True`` matches the exact area of the (scaled) profile
    region, flipping cells in order of |r - boundary radius|.
    """
    if lattice.d != 2:
        raise GeometryError("profiles are only supported in d = 2")
    rmax = scale * (1 + float(np.max(profile.values)))
    _check_fits(lattice, np.zeros(2), rmax)
    x, y = lattice.grid_centers()
    r = np.sqrt(x**2 + y**2)
    theta = np.arctan2(y, x)
    bound = scale * (1 + profile(theta))
    mask = r <= bound
    if match_volume is not False:
        target = scale**2 * profile.area() if match_volume is True else float(match_volume)
        mask = _match(mask, r - bound, mask, target / lattice.cell_volume)
    return LatticeSet(lattice, mask)


# ---------------------------------------------------------------------------
# lattice transforms


def rescale(E: LatticeSet, t: float) -> LatticeSet:
    """Exact dilation by t: same cells on the lattice with every length times t."""
    return LatticeSet(E.lattice.scaled(t), E.mask)


def upsample(E: LatticeSet, t: int) -> LatticeSet:
    """Each cell split into t^d cells of side h / t (same geometric set)."""
    t = int(t)
    if t < 1:
        raise GeometryError("upsampling factor must be a positive integer")
    lat = E.lattice
    mask = E.mask
    for ax in range(E.d):
        mask = np.repeat(mask, t, axis=ax)
    return LatticeSet(Lattice(lat.d, lat.h / t, lat.origin, tuple(t * e for e in lat.extent)), mask)


def translate(E: LatticeSet, shift) -> LatticeSet:
    """Shift by an integer number of cells; cells may not leave the window."""
    shift = np.asarray(shift, dtype=np.int64)
    cells = E.cells + shift
    return LatticeSet.from_cells(E.lattice, cells)


def embed(E: LatticeSet, lattice: Lattice) -> LatticeSet:
    """Copy the set into another window of the same grid (same h, aligned origin)."""
    if lattice.h != E.h or lattice.d != E.d:
        raise GeometryError("target lattice must share h and d")
    off = (np.asarray(E.lattice.origin) - np.asarray(lattice.origin)) / E.h
    ioff = np.rint(off).astype(np.int64)
    if np.any(np.abs(off - ioff) > 1e-6):
        raise GeometryError("lattices are not aligned")
    return LatticeSet.from_cells(lattice, E.cells + ioff)


def _disk_at(E: LatticeSet, c, r) -> np.ndarray:
    grids = E.lattice.grid_centers()
    dist = np.sqrt(sum((g - ck) ** 2 for g, ck in zip(grids, c)))
    return _match(dist <= r, dist - r, dist <= r, E.n_cells)


def best_fit_disk(E: LatticeSet, search: float = 1.0, steps: int = 8) -> LatticeSet:
    """Volume-matched disk on the same lattice with the least symmetric difference.

    Centres are tried on a grid of spacing h/steps within ``search`` cells of
    the barycenter; on ties the one closest to the barycenter wins.
    """
    if E.d != 2:
        raise GeometryError("disk fitting is planar")
    c0 = barycenter(E)
    r = math.sqrt(volume(E) / math.pi)
    k = int(round(search * steps))
    offs = sorted(((i, j) for i in range(-k, k + 1) for j in range(-k, k + 1)),
                  key=lambda o: (o[0] ** 2 + o[1] ** 2, o))
    best, best_sd = None, None
    for i, j in offs:
        c = c0 + E.h / steps * np.array([i, j], float)
        m = _disk_at(E, c, r)
        sd = int(np.count_nonzero(m ^ E.mask))
        if best_sd is None or sd < best_sd:
            best, best_sd = m, sd
    return E.with_mask(best)


def symmetric_difference_volume(E: LatticeSet, F: LatticeSet) -> float:
    return volume(E.symmetric_difference(F))


# ---------------------------------------------------------------------------
# set file (JSON, run-length encoded rows)


def to_json_dict(E: LatticeSet) -> dict:
    if E.d != 2:
        raise GeometryError("set files are defined for d = 2")
    runs = []
    for row in range(E.lattice.extent[0]):
        line = E.mask[row].astype(np.int8)
        edges = np.diff(np.concatenate([[0], line, [0]]))
        starts = np.nonzero(edges == 1)[0]
        ends = np.nonzero(edges == -1)[0]
        runs.extend([[row, int(s), int(e - s)] for s, e in zip(starts, ends)])
    lat = E.lattice
    return {"d": lat.d, "h": lat.h, "origin": list(lat.origin), "extent": list(lat.extent), "cells_rle": runs}


def from_json_dict(doc: dict) -> LatticeSet:
    try:
        lat = Lattice(int(doc["d"]), float(doc["h"]), tuple(doc["origin"]), tuple(doc["extent"]))
        runs = doc["cells_rle"]
    except (KeyError, TypeError) as exc:
        raise GeometryError(f"malformed set document: {exc}") from exc
    if lat.d != 2:
        raise GeometryError("set files are defined for d = 2")
    mask = np.zeros(lat.extent, dtype=bool)
    last_row = -1
    for item in runs:
        if len(item) != 3:
            raise GeometryError("each run must be [row, start, run]")
        row, start, run = (int(x) for x in item)
        if row < last_row:
            raise GeometryError("rows must be sorted ascending")
        last_row = row
        if run < 1 or row < 0 or row >= lat.extent[0] or start < 0 or start + run > lat.extent[1]:
            raise GeometryError(f"run {item} out of range")
        if mask[row, start:start + run].any():
            raise GeometryError(f"overlapping run {item}")
        mask[row, start:start + run] = True
    return LatticeSet(lat, mask)


def save_set(E: LatticeSet, path) -> None:
    Path(path).write_text(json.dumps(to_json_dict(E), separators=(",", ":")) + "\n")


def load_set(path) -> LatticeSet:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise GeometryError(f"invalid JSON in {path}: {exc}") from exc
    return from_json_dict(doc)
