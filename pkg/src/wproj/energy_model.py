"""Perimeter plus projection energy, with component families and volume penalty."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .analytic_ball import ball_energy
from .lattice_geometry import (PERIMETER_ESTIMATORS, GeometryError, LatticeSet, connected_components,
                               perimeter, unit_ball_volume, volume)
from .projection_energy import ProjectionOptions, displacement_bound, project

CSV_FIELDS = ("lambda", "p", "alpha", "h", "perimeter", "wpp_sum", "transport_term", "penalty_term",
              "total", "n_components")


@dataclass(frozen=True)
class EnergyParams:
    """Parameters of the objective.

    ``penalty`` is the volume-penalty weight (0 = hard constraint mode); the
    volume target defaults to the volume of the unit ball.
    """

    d: int = 2
    p: float = 1.0
    alpha: float = 1.0
    lam: float = 1.0
    volume_target: float | None = None
    penalty: float = 0.0
    perimeter_estimator: str = "crofton"

    def __post_init__(self):
        if self.d < 2:
            raise ValueError("d must be >= 2")
        if self.p < 1:
            raise ValueError("p must be >= 1")
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")
        if self.lam < 0 or self.penalty < 0:
            raise ValueError("lambda and penalty must be nonnegative")
        if self.perimeter_estimator not in PERIMETER_ESTIMATORS:
            raise ValueError(f"unknown perimeter estimator {self.perimeter_estimator!r}")
        if self.volume_target is None:
            object.__setattr__(self, "volume_target", unit_ball_volume(self.d))
        elif self.volume_target <= 0:
            raise ValueError("volume target must be positive")


@dataclass(frozen=True)
class ComponentEnergy:
    volume: float
    perimeter: float
    wpp: float
    n_cells: int


@dataclass(frozen=True)
class EnergyReport:
    perimeter: float
    wpp_sum: float
    transport_term: float
    penalty_term: float
    total: float
    volume: float
    components: tuple[ComponentEnergy, ...] = field(default_factory=tuple)
    h: float = 0.0

    @property
    def n_components(self) -> int:
        return len(self.components)

    def to_json_dict(self) -> dict:
        out = {k: v for k, v in asdict(self).items() if k != "components"}
        out["n_components"] = self.n_components
        out["components"] = [asdict(c) for c in self.components]
        return out

    def csv_row(self, params: EnergyParams) -> list:
        return [params.lam, params.p, params.alpha, self.h, self.perimeter, self.wpp_sum,
                self.transport_term, self.penalty_term, self.total, self.n_components]


def _assemble(perim: float, wpp_sum: float, vol: float, comps, params: EnergyParams, h: float) -> EnergyReport:
    transport = params.lam * wpp_sum**params.alpha if params.lam else 0.0
    pen = params.penalty * abs(vol - params.volume_target)
    return EnergyReport(perim, wpp_sum, transport, pen, perim + transport + pen, vol, tuple(comps), h)


def _clusters(comps: list[LatticeSet], c0: float) -> list[list[int]]:
    """Group components whose exterior targets could interact.

    Two components are kept apart only if their gap exceeds the sum of their
    displacement bounds; otherwise they are projected together.
    """
    k = len(comps)
    parent = list(range(k))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    bounds = [displacement_bound(c, c0) for c in comps]
    trees = [cKDTree(c.centers()) for c in comps]
    for i in range(k):
        for j in range(i + 1, k):
            reach = bounds[i] + bounds[j] + comps[i].h * math.sqrt(comps[i].d)
            gap, _ = trees[i].query(comps[j].centers(), k=1, distance_upper_bound=reach)
            if np.isfinite(gap).any():
                parent[find(j)] = find(i)
    groups: dict[int, list[int]] = {}
    for i in range(k):
        groups.setdefault(find(i), []).append(i)
    return sorted(groups.values())


def evaluate(E: LatticeSet, params: EnergyParams, options: ProjectionOptions | None = None) -> EnergyReport:
    """Objective of ``E``; distant components are projected separately."""
    if E.is_empty():
        raise GeometryError("energy of an empty set")
    opt = options or ProjectionOptions()
    comps = connected_components(E)
    per_comp_w = [0.0] * len(comps)
    if params.lam > 0:
        for group in _clusters(comps, opt.c0):
            U = comps[group[0]]
            for g in group[1:]:
                U = U.union(comps[g])
            w = project(U, params.p, opt).wpp
            # a jointly projected cluster reports its energy on its first member
            per_comp_w[group[0]] += w
    rows = tuple(ComponentEnergy(volume(c), perimeter(c, params.perimeter_estimator), w, c.n_cells)
                 for c, w in zip(comps, per_comp_w))
    return _assemble(perimeter(E, params.perimeter_estimator), math.fsum(per_comp_w), volume(E),
                     rows, params, E.h)


def _canonical(E: LatticeSet):
    return (-E.n_cells, tuple(map(tuple, E.cells[:1])), E.mask.tobytes())


def evaluate_family(components: list[LatticeSet], params: EnergyParams,
                    options: ProjectionOptions | None = None) -> EnergyReport:
    """Generalized energy of a family, each member projected on its own."""
    comps = [c for c in components if not c.is_empty()]
    if not comps:
        raise GeometryError("empty family")
    for i in range(len(comps)):
        for j in range(i + 1, len(comps)):
            if comps[i].lattice == comps[j].lattice and np.any(comps[i].mask & comps[j].mask):
                raise GeometryError("family members overlap")
    comps.sort(key=_canonical)
    opt = options or ProjectionOptions()
    rows = []
    for c in comps:
        w = project(c, params.p, opt).wpp if params.lam > 0 else 0.0
        rows.append(ComponentEnergy(volume(c), perimeter(c, params.perimeter_estimator), w, c.n_cells))
    return _assemble(math.fsum(r.perimeter for r in rows), math.fsum(r.wpp for r in rows),
                     math.fsum(r.volume for r in rows), rows, params, comps[0].h)


def ansatz_energy(params: EnergyParams, n) -> np.ndarray:
    """Energy of n equal disjoint balls sharing the target volume."""
    n = np.asarray(n, dtype=float)
    d, p = params.d, params.p
    wd = unit_ball_volume(d)
    r = (params.volume_target / (n * wd)) ** (1.0 / d)
    per = n * d * wd * r ** (d - 1)
    wsum = n * r ** (d + p) * ball_energy(d, p)
    return per + params.lam * wsum**params.alpha


def nball_ansatz(params: EnergyParams) -> tuple[int, float, float]:
    """Best number of equal balls, their radius and the ansatz energy.

    The energy is a N^{1/d} + b N^{-alpha p/d}, whose derivative changes sign
    once, so the integer optimum is a neighbour of the real stationary point.
    """
    d, p, a = params.d, params.p, params.alpha
    wd = unit_ball_volume(d)
    V = params.volume_target
    per1 = d * wd ** (1.0 / d) * V ** ((d - 1.0) / d)
    w1 = (V / wd) ** ((d + p) / d) * ball_energy(d, p)
    if params.lam == 0:
        best = 1
    else:
        star = (params.lam * w1**a * a * p / per1) ** (d / (1.0 + a * p))
        lo = max(1, int(math.floor(star)))
        cand = np.array([lo, lo + 1], dtype=float)
        e = ansatz_energy(params, cand)
        best = lo if e[0] <= e[1] else lo + 1
    r = (V / (best * wd)) ** (1.0 / d)
    return best, float(r), float(ansatz_energy(params, best))


def suggest_penalty(params: EnergyParams, safety: float = 10.0) -> float:
    """Volume-penalty weight large enough to dominate volume drift."""
    p, a = params.p, params.alpha
    return safety * (1.0 + params.lam) ** ((1.0 + p) / (1.0 + a * p))
