"""Radial oracles for the unit ball.

The optimal exterior set of the unit ball is the annulus between radii 1 and
2^{1/d}, reached by the radial map T(x) = (1 + |x|^d)^{1/d} x/|x|.  Everything
here follows from that map: the energy of the ball by one-dimensional
quadrature, the Kantorovich potentials by integrating their radial derivative,
and dual lower bounds for nearby sets.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import quad
from scipy.interpolate import CubicSpline

from .lattice_geometry import GeometryError, LatticeSet, NearlySphericalProfile, unit_ball_volume


def _radial(r, d):
    return (1.0 + r**d) ** (1.0 / d)


def radial_map(x) -> np.ndarray:
    """Radial map of the ball onto the annulus (vectorized over leading axes)."""
    x = np.asarray(x, dtype=float)
    r = np.linalg.norm(x, axis=-1, keepdims=True)
    if np.any(r == 0):
        raise ValueError("the radial map is undefined at the origin")
    d = x.shape[-1]
    return x * (_radial(r, d) / r)


def inverse_radial_map(y) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    r = np.linalg.norm(y, axis=-1, keepdims=True)
    if np.any(r < 1):
        raise ValueError("the inverse map is defined for |y| >= 1")
    d = y.shape[-1]
    return y * ((r**d - 1.0) ** (1.0 / d) / r)


def ball_energy(d: int, p: float) -> float:
    """Projection energy (p-th power) of the unit ball in dimension ``d``."""
    if d < 2 or p < 1:
        raise ValueError("need d >= 2 and p >= 1")
    val, _ = quad(lambda r: (_radial(r, d) - r) ** p * r ** (d - 1), 0.0, 1.0,
                  epsabs=0.0, epsrel=1e-13, limit=200)
    return d * unit_ball_volume(d) * val


def ball_energy_closed_form(p: float) -> float:
    """Elementary antiderivatives for d = 2 and p in {1, 2}."""
    if p == 1:
        return 2 * math.pi * (2 * math.sqrt(2) - 2) / 3
    if p == 2:
        return 2 * math.pi * (1 - (3 * math.sqrt(2) - math.asinh(1.0)) / 4)
    raise ValueError("closed form only for p in {1, 2}")


@dataclass(frozen=True)
class RadialPotentials:
    """Radial Kantorovich pair with phi(0) = 0.

    phi is tabulated on a uniform grid up to ``r_max`` and interpolated by a
    cubic spline.  psi equals r^p on the unit ball and is evaluated outside
    through the inverse map, psi(r) = (r - s)^p - phi(s) with s = T^{-1}(r),
    which keeps the pair exactly tight on the graph of T.  (A spline of psi
    itself would lose accuracy near r = 1, where its second derivative blows
    up.)
    """

    p: float
    d: int
    r_max: float
    grid: np.ndarray = field(repr=False)
    phi_values: np.ndarray = field(repr=False)
    spline: CubicSpline = field(repr=False)

    def phi(self, r):
        r = np.asarray(r, dtype=float)
        if self.p == 1:
            return -r
        return self.spline(r)

    def psi(self, r):
        r = np.asarray(r, dtype=float)
        if self.p == 1:
            return r.copy()
        out = r**self.p
        big = r > 1
        if np.any(big):
            s = (r[big] ** self.d - 1.0) ** (1.0 / self.d)
            out[big] = (r[big] - s) ** self.p - self.spline(s)
        return out

    def gap_function(self, r):
        """phi - psi shifted to vanish at r = 1; positive inside, negative outside."""
        c = float(self.phi(1.0) - self.psi(1.0))
        return self.phi(r) - self.psi(r) - c


_GL_X, _GL_W = np.polynomial.legendre.leggauss(10)


def _integrate_segments(fn, grid: np.ndarray) -> np.ndarray:
    """Cumulative integral of fn over the grid (Gauss-Legendre per cell)."""
    a, b = grid[:-1], grid[1:]
    mid, half = 0.5 * (a + b), 0.5 * (b - a)
    pts = mid[:, None] + half[:, None] * _GL_X[None, :]
    seg = (fn(pts) * _GL_W[None, :]).sum(axis=1) * half
    return np.concatenate([[0.0], np.cumsum(seg)])


def potentials(d: int, p: float, n_nodes: int = 10_000, r_max: float = 2.0) -> RadialPotentials:
    if d < 2 or p < 1:
        raise ValueError("need d >= 2 and p >= 1")
    if r_max < 2.0 ** (1.0 / d):
        raise ValueError("r_max must cover the annulus")
    grid = np.linspace(0.0, r_max, n_nodes)
    if p == 1:
        phi_v = -grid
    else:
        phi_v = _integrate_segments(lambda r: -p * (_radial(r, d) - r) ** (p - 1), grid)
    return RadialPotentials(p, d, r_max, grid, phi_v, CubicSpline(grid, phi_v))


_CACHE: dict = {}


def _pot(d, p, pot):
    if pot is not None:
        return pot
    key = (d, float(p))
    if key not in _CACHE:
        _CACHE[key] = potentials(d, p)
    return _CACHE[key]


def dual_lower_bound(E: LatticeSet, p: float, pot: RadialPotentials | None = None) -> float:
    """Lower bound for the lattice projection energy of ``E`` from the ball's potentials.

    The source potential is summed over E.  For the target term the optimal
    choice, given a radially increasing psi, is the innermost complement
    cells carrying the same mass as E; that is what is summed.
    """
    d = E.d
    pot = _pot(d, p, pot)
    outer = 2.0 ** (1.0 / d)
    lat = E.lattice
    c = E.centers()
    re = np.linalg.norm(c, axis=1)
    if np.any(re > outer + 1e-12):
        raise GeometryError("set is not contained in the annulus' outer ball")
    n = E.n_cells
    # complement cells out to a radius that surely holds n of them
    reach = outer + 4 * lat.h
    span = int(math.ceil(reach / lat.h)) + 1
    base = np.floor((-np.asarray(lat.origin)) / lat.h).astype(int)
    axes = [np.arange(b - span, b + span + 1) for b in base]
    idx = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, d)
    pts = lat.centers(idx)
    rr = np.linalg.norm(pts, axis=1)
    inside = np.zeros(len(idx), bool)
    shape = np.asarray(lat.extent)
    ok = np.all((idx >= 0) & (idx < shape), axis=1)
    inside[ok] = E.mask[tuple(idx[ok].T)]
    rc = np.sort(rr[~inside])
    if rc.size < n or rc[n - 1] > pot.r_max:
        raise GeometryError("potential table does not reach far enough")
    return float((pot.phi(re).sum() + pot.psi(rc[:n]).sum()) * lat.h**d)


def fuglede_gap(profile: NearlySphericalProfile, p: float, pot: RadialPotentials | None = None,
                n_theta: int = 4096) -> tuple[float, float]:
    """Dual estimate of the energy deficit of a nearly round planar set.

    Returns (gap_bound, f_l2), the integral of |phi - psi - c| over the
    symmetric difference with the unit disk and the squared L2 norm of the
    boundary perturbation.
    """
    pot = _pot(2, p, pot)
    theta = 2 * np.pi * np.arange(n_theta) / n_theta
    f = profile(theta)
    # radial integral from 1 to 1 + f(theta), Gauss-Legendre in each direction
    x, w = np.polynomial.legendre.leggauss(24)
    r = 1.0 + 0.5 * f[:, None] * (1.0 + x[None, :])
    inner = 0.5 * f * ((pot.gap_function(r.ravel()).reshape(r.shape) * r) * w).sum(axis=1)
    gap = float(np.abs(inner).mean() * 2 * np.pi)
    return gap, float((f**2).mean() * 2 * np.pi)
