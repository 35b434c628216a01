"""Discrete optimal transport with ground cost |x - y|^p.

The exact backend integerizes costs (``round(cost / unit^p * 1e9)``) and solves
the resulting capacitated min-cost flow problem with a push-relabel
cost-scaling kernel on a sparse arc set.  Omitted pairs are priced out by a
tile-pruned scan of reduced costs; violated pairs are added and the flow is
re-optimized until no omitted pair has negative reduced cost.  The integer
dual is recovered exactly, so the integer duality gap is zero by construction
and is checked, not assumed.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp
from scipy.spatial import cKDTree
from scipy.spatial.distance import cdist

from . import _kernels as K

log = logging.getLogger(__name__)

SCALE = 1e9
DEFAULT_SIZE_CAP = 20_000
_ALPHA = 8
_GU_FREQ = 0.3
_INT_LIMIT = 2**61


class TransportError(RuntimeError):
    """Raised when a transport problem cannot be solved."""


class MassMismatch(ValueError):
    pass


class InsufficientCapacity(ValueError):
    pass


class SizeCapExceeded(TransportError):
    pass


@dataclass(frozen=True)
class DiscreteMeasure:
    """Weighted point cloud.  For sink measures the masses act as capacities."""

    points: np.ndarray
    masses: np.ndarray

    def __post_init__(self):
        pts = np.array(self.points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        ms = np.array(self.masses, dtype=float).reshape(-1)
        if pts.shape[0] != ms.shape[0]:
            raise ValueError("points and masses differ in length")
        if not np.all(np.isfinite(pts)) or not np.all(np.isfinite(ms)):
            raise ValueError("non-finite point or mass")
        if np.any(ms < 0):
            raise ValueError("negative mass")
        if pts.shape[0] > 1 and np.unique(pts, axis=0).shape[0] != pts.shape[0]:
            raise ValueError("points must be distinct")
        pts.setflags(write=False)
        ms.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "masses", ms)

    @property
    def size(self) -> int:
        return self.masses.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    @property
    def total_mass(self) -> float:
        return float(self.masses.sum())


@dataclass
class TransportSolution:
    """Optimal (or approximate) plan with dual potentials.

    The plan is stored as three parallel arrays; ``target_marginal`` is the
    realized mass on each destination point.
    """

    cost_pp: float
    src_index: np.ndarray
    dst_index: np.ndarray
    mass: np.ndarray
    phi: np.ndarray
    psi: np.ndarray
    duality_gap: float
    max_displacement: float
    target_marginal: np.ndarray
    cost_unit: float = 1.0
    integer_primal: int | None = None
    integer_dual: int | None = None
    rounding_bound: float = 0.0
    converged: bool = True
    marginal_error: float = 0.0
    iterations: int = 0
    stats: dict = field(default_factory=dict)

    @property
    def plan(self) -> list[tuple[int, int, float]]:
        return [(int(i), int(j), float(w)) for i, j, w in zip(self.src_index, self.dst_index, self.mass)]


@dataclass(frozen=True)
class DualityReport:
    max_violation: float
    worst_pair: tuple[int, int]
    max_slackness: float
    sink_sign_violation: float
    unsaturated_sink_violation: float
    integer_gap: int | None

    @property
    def ok(self) -> bool:
        return max(self.max_violation, self.max_slackness, self.sink_sign_violation,
                   self.unsaturated_sink_violation) <= 1e-9 and not self.integer_gap


# ---------------------------------------------------------------------------
# integer engine


@dataclass
class IntegerFlow:
    """Result of the integer engine, all quantities in integerized cost units."""

    arc_src: np.ndarray
    arc_dst: np.ndarray
    arc_cost: np.ndarray
    arc_flow: np.ndarray
    u: np.ndarray
    v: np.ndarray
    primal: int
    dual: int
    rounds: int
    stats: dict


def _overflow_cost(X: np.ndarray, Y: np.ndarray, p: float, scale: float) -> int:
    lo = np.minimum(X.min(axis=0), Y.min(axis=0))
    hi = np.maximum(X.max(axis=0), Y.max(axis=0))
    diag = float(np.linalg.norm(hi - lo))
    return int(4 * (diag**p) * scale + 4 * scale)


def tiles_for(Y: np.ndarray, points_per_tile: int = 64):
    """Tile structure used by the pricing scans."""
    lo = Y.min(axis=0)
    hi = Y.max(axis=0)
    d = Y.shape[1]
    vol = float(np.prod(np.maximum(hi - lo, 1e-12)))
    side = (vol * points_per_tile / max(len(Y), 1)) ** (1.0 / d)
    side = max(side, 1e-9)
    return K.make_tiles(np.ascontiguousarray(Y, dtype=float), side)


def solve_integer(X, Y, supply, capacity, p, *, scale=SCALE, arcs=None, price0=None,
                  eps0=None, k_init=8, k_add=16, max_rounds=500, tiles=None) -> IntegerFlow:
    """Exact capacitated transport on integer masses.

    ``X`` and ``Y`` are coordinates already expressed in the cost unit.
    ``arcs`` gives an initial candidate set (pairs of index arrays); by
    default each source starts with its ``k_init`` nearest sinks.  ``price0``
    optionally warm-starts node potentials (length n + m + 1 with the super
    sink last) in the unscaled integer convention.
    """
    X = np.ascontiguousarray(X, dtype=float)
    Y = np.ascontiguousarray(Y, dtype=float)
    supply = np.asarray(supply, dtype=np.int64)
    capacity = np.asarray(capacity, dtype=np.int64)
    n, m = len(X), len(Y)
    if supply.sum() > capacity.sum():
        raise InsufficientCapacity("total capacity below total supply")
    T = n + m
    n_nodes = T + 1
    N = n_nodes + 1
    M = _overflow_cost(X, Y, p, scale)
    if M * N * 4 > _INT_LIMIT:
        raise TransportError("integerized costs overflow the 64-bit range; use a larger cost unit")
    if tiles is None:
        tiles = tiles_for(Y)
    if arcs is None:
        k = min(m, k_init)
        _, nb = cKDTree(Y).query(X, k=k)
        nb = np.asarray(nb).reshape(n, k)
        ai = np.repeat(np.arange(n, dtype=np.int64), k)
        aj = nb.reshape(-1).astype(np.int64)
    else:
        ai = np.asarray(arcs[0], dtype=np.int64)
        aj = np.asarray(arcs[1], dtype=np.int64)
    ci = K.arc_costs(X, Y, ai, aj, float(p), scale)
    flow = None
    pi = None if price0 is None else np.asarray(price0, dtype=np.int64).copy()
    fixed_tail = np.concatenate([n + np.arange(m, dtype=np.int64), np.arange(n, dtype=np.int64)])
    fixed_head = np.concatenate([np.full(m, T, np.int64), np.full(n, T, np.int64)])
    fixed_cap = np.concatenate([capacity, supply])
    fixed_cost = np.concatenate([np.zeros(m, np.int64), np.full(n, M, np.int64)])
    stats = {"pushes": 0, "relabels": 0, "updates": 0, "added": 0}
    rounds = 0
    first_eps = eps0
    while True:
        rounds += 1
        if rounds > max_rounds:
            raise TransportError("column generation did not converge")
        na = ai.size
        tail = np.concatenate([ai, fixed_tail])
        head = np.concatenate([n + aj, fixed_head])
        cap = np.concatenate([np.minimum(supply[ai], capacity[aj]), fixed_cap])
        cost = np.concatenate([ci, fixed_cost])
        t0 = time.perf_counter()
        first, rh, rc, rco, rr, fwd = K.build_residual(n_nodes, tail, head, cap, cost)
        excess = np.zeros(n_nodes, np.int64)
        excess[:n] = supply
        excess[T] = -supply.sum()
        if flow is not None:
            rc[fwd] = cap - flow
            rc[rr[fwd]] = flow
            np.subtract.at(excess, tail, flow)
            np.add.at(excess, head, flow)
        if pi is None:
            price = np.zeros(n_nodes, np.int64)
            eps = int(max(1, ci.max(initial=1)) * N) // _ALPHA
        else:
            price = pi * N
            if first_eps is not None:
                eps = int(first_eps * N)
            else:
                # repairs after adding a few arcs go fastest straight at eps = 1
                eps = N
        first_eps = None
        t1 = time.perf_counter()
        status, pu, rl, up = K.cost_scaling(first, rh, rc, rco, rr, excess, price, max(1, eps), _ALPHA, _GU_FREQ)
        stats["pushes"] += pu
        stats["relabels"] += rl
        stats["updates"] += up
        if status != 0:
            raise TransportError("infeasible flow network")
        t2 = time.perf_counter()
        free = np.zeros(rh.size, np.bool_)
        free[fwd[:na]] = True
        free[fwd[na + m:]] = True
        pi, it = K.exact_potentials(first, rh, rc, rco, free, price, N)
        if it < 0:
            raise TransportError("dual recovery failed")
        t3 = time.perf_counter()
        flow = cap - rc[fwd]
        u = pi[T] - pi[:n]
        v = np.minimum(0, pi[n:T] - pi[T])
        overflow = int(flow[na + m:].sum())
        bj, br, hits = K.scan_topk(X, Y, v, u, 0, k_add, float(p), scale, *tiles)
        t4 = time.perf_counter()
        log.debug("round %d arcs %d violations %d overflow %d eps %d pushes %d | build %.2f scale %.2f dual %.2f scan %.2f",
                  rounds, na, hits, overflow, eps // N, pu, t1 - t0, t2 - t1, t3 - t2, t4 - t3)
        if hits == 0 and overflow == 0:
            break
        sel = bj >= 0
        ni = np.nonzero(sel)[0].astype(np.int64)
        nj = bj[sel]
        stats["added"] += int(ni.size)
        stats["last_violation"] = int(-br[sel].min()) if ni.size else 1
        ai = np.concatenate([ai, ni])
        aj = np.concatenate([aj, nj])
        ci = np.concatenate([ci, K.arc_costs(X, Y, ni, nj, float(p), scale)])
        flow = np.concatenate([flow[:na], np.zeros(ni.size, np.int64), flow[na:]])
    arc_flow = flow[:ai.size]
    primal = int(np.dot(arc_flow, ci))
    dual = int(np.dot(u, supply) + np.dot(v, capacity))
    stats["arcs"] = int(ai.size)
    return IntegerFlow(ai, aj, ci, arc_flow, u, v, primal, dual, rounds, stats)


# ---------------------------------------------------------------------------
# public solvers


def _quantize(masses: np.ndarray, quantum: float | None) -> tuple[np.ndarray, float]:
    pos = masses[masses > 0]
    if pos.size == 0:
        return np.zeros(masses.shape, np.int64), 1.0
    if quantum is None:
        base = float(pos.min())
        for k in range(1, 1025):
            q = base / k
            ratio = masses / q
            if np.all(np.abs(ratio - np.rint(ratio)) <= 1e-9 * np.maximum(1.0, ratio)):
                quantum = q
                break
        else:
            raise ValueError("masses are not integer multiples of a common quantum; pass mass_quantum")
    ints = np.rint(masses / quantum).astype(np.int64)
    if np.any(np.abs(ints * quantum - masses) > 1e-9 * np.maximum(masses, quantum)):
        raise ValueError("masses are not integer multiples of mass_quantum")
    return ints, float(quantum)


def _check_sizes(src: DiscreteMeasure, dst: DiscreteMeasure, size_cap: int | None):
    if size_cap is not None and (src.size > size_cap or dst.size > size_cap):
        raise SizeCapExceeded(f"instance exceeds the solver cap of {size_cap} points per side")
    if src.dim != dst.dim:
        raise ValueError("dimension mismatch")


def _solution_from_flow(res: IntegerFlow, src, dst, p, unit, quantum, scale) -> TransportSolution:
    keep = res.arc_flow > 0
    si = res.arc_src[keep]
    dj = res.arc_dst[keep]
    w = res.arc_flow[keep] * quantum
    order = np.lexsort((dj, si))
    si, dj, w = si[order], dj[order], w[order]
    cfac = unit**p / scale
    disp = np.linalg.norm(src.points[si] - dst.points[dj], axis=1) if si.size else np.zeros(0)
    # the integer objective carries the cost rounding; report the plan's true cost
    cost_pp = float(np.dot(w, disp**p))
    marg = np.zeros(dst.size)
    np.add.at(marg, dj, w)
    n_pairs = int(keep.sum())
    return TransportSolution(
        cost_pp=float(cost_pp),
        src_index=si,
        dst_index=dj,
        mass=w,
        phi=res.u * cfac,
        psi=res.v * cfac,
        duality_gap=float((res.primal - res.dual) * quantum * cfac),
        max_displacement=float(disp.max()) if disp.size else 0.0,
        target_marginal=marg,
        cost_unit=unit,
        integer_primal=res.primal,
        integer_dual=res.dual,
        rounding_bound=0.5 * n_pairs * quantum * cfac,
        iterations=res.rounds,
        stats=res.stats,
    )


def solve_capacitated(src: DiscreteMeasure, sinks: DiscreteMeasure, p: float, *,
                      cost_unit: float = 1.0, mass_quantum: float | None = None,
                      size_cap: int | None = DEFAULT_SIZE_CAP, scale: float = SCALE) -> TransportSolution:
    """Transport ``src`` into sinks whose masses are capacities (free target marginal)."""
    if p < 1:
        raise ValueError("p must be >= 1")
    _check_sizes(src, sinks, size_cap)
    if sinks.total_mass < src.total_mass * (1 - 1e-12):
        raise InsufficientCapacity("total sink capacity below source mass")
    if quant := mass_quantum:
        qa, q = _quantize(src.masses, quant)
        qb, _ = _quantize(sinks.masses, q)
    else:
        both, q = _quantize(np.concatenate([src.masses, sinks.masses]), None)
        qa, qb = both[:src.size], both[src.size:]
    res = solve_integer(src.points / cost_unit, sinks.points / cost_unit, qa, qb, p, scale=scale)
    return _solution_from_flow(res, src, sinks, p, cost_unit, q, scale)


def solve_exact(src: DiscreteMeasure, dst: DiscreteMeasure, p: float, *,
                cost_unit: float = 1.0, mass_quantum: float | None = None,
                size_cap: int | None = DEFAULT_SIZE_CAP, scale: float = SCALE) -> TransportSolution:
    """Balanced transport between two measures of equal total mass."""
    a, b = src.total_mass, dst.total_mass
    if abs(a - b) > 1e-12 * max(a, b, 1e-300):
        raise MassMismatch(f"total masses differ: {a!r} vs {b!r}")
    return solve_capacitated(src, dst, p, cost_unit=cost_unit, mass_quantum=mass_quantum,
                             size_cap=size_cap, scale=scale)


def _round_to_marginals(P: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    # projection onto the transport polytope (rescale rows, then columns, then rank-one fix)
    r = P.sum(axis=1)
    x = np.where(r > 0, np.minimum(1.0, a / np.where(r > 0, r, 1)), 0.0)
    P = P * x[:, None]
    c = P.sum(axis=0)
    y = np.where(c > 0, np.minimum(1.0, b / np.where(c > 0, c, 1)), 0.0)
    P = P * y[None, :]
    er = a - P.sum(axis=1)
    ec = b - P.sum(axis=0)
    tot = er.sum()
    if tot > 0:
        P = P + np.outer(er, ec) / tot
    return P


def solve_entropic(src: DiscreteMeasure, dst: DiscreteMeasure, p: float, epsilon: float,
                   max_iter: int = 20000, tol: float = 1e-6) -> TransportSolution:
    """Entropy-regularized transport by log-domain Sinkhorn with epsilon annealing.

    ``converged`` is False when the marginal error (total variation relative to
    the total mass) is still above ``tol`` after ``max_iter`` sweeps.  The plan
    is rounded onto the exact marginals before costing, so ``duality_gap`` is
    measured against a feasible dual (the c-transform of the column potential).
    """
    a, b = src.masses, dst.masses
    ta, tb = a.sum(), b.sum()
    if abs(ta - tb) > 1e-12 * max(ta, tb, 1e-300):
        raise MassMismatch("total masses differ")
    C = cdist(src.points, dst.points) ** p
    sol = _entropic_from_cost(C, a, b, epsilon, max_iter, tol)
    si, dj, w = sol["si"], sol["dj"], sol["w"]
    marg = np.zeros(dst.size)
    np.add.at(marg, dj, w)
    disp = np.linalg.norm(src.points[si] - dst.points[dj], axis=1) if si.size else np.zeros(0)
    cost = float(np.sum(w * C[si, dj]))
    return TransportSolution(
        cost_pp=cost, src_index=si, dst_index=dj, mass=w, phi=sol["f"], psi=sol["g"],
        duality_gap=cost - sol["dual"], max_displacement=float(disp.max()) if disp.size else 0.0,
        target_marginal=marg, converged=sol["converged"], marginal_error=sol["err"],
        iterations=sol["it"], stats={"epsilon": epsilon},
    )


def solve_entropic_capacitated(src: DiscreteMeasure, sinks: DiscreteMeasure, p: float, epsilon: float,
                               max_iter: int = 20000, tol: float = 1e-6) -> TransportSolution:
    """Capacitated variant: a zero-cost dummy source absorbs the spare capacity."""
    spare = sinks.total_mass - src.total_mass
    if spare < -1e-12 * sinks.total_mass:
        raise InsufficientCapacity("total sink capacity below source mass")
    masses = np.concatenate([src.masses, [max(spare, 0.0)]])
    a, b = masses, sinks.masses
    C = np.vstack([cdist(src.points, sinks.points) ** p, np.zeros((1, sinks.size))])
    sol = _entropic_from_cost(C, a, b, epsilon, max_iter, tol)
    keep = sol["si"] < src.size
    si, dj, w = sol["si"][keep], sol["dj"][keep], sol["w"][keep]
    marg = np.zeros(sinks.size)
    np.add.at(marg, dj, w)
    disp = np.linalg.norm(src.points[si] - sinks.points[dj], axis=1) if si.size else np.zeros(0)
    cost = float(np.sum(w * C[si, dj]))
    return TransportSolution(
        cost_pp=cost, src_index=si, dst_index=dj, mass=w, phi=sol["f"][:src.size],
        psi=sol["g"], duality_gap=cost - sol["dual"],
        max_displacement=float(disp.max()) if disp.size else 0.0, target_marginal=marg,
        converged=sol["converged"], marginal_error=sol["err"], iterations=sol["it"],
        stats={"epsilon": epsilon},
    )


def _entropic_from_cost(C, a, b, epsilon, max_iter, tol):
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    ia = a > 0
    ib = b > 0
    Cs = C[np.ix_(ia, ib)]
    la, lb = np.log(a[ia]), np.log(b[ib])
    ta = a.sum()
    f = np.zeros(ia.sum())
    g = np.zeros(ib.sum())
    eps = max(epsilon, float(Cs.max(initial=0.0)))
    it = 0
    while True:
        while it < max_iter:
            it += 1
            f = eps * (la - logsumexp((g[None, :] - Cs) / eps, axis=1))
            g = eps * (lb - logsumexp((f[:, None] - Cs) / eps, axis=0))
            if it % 10 == 0:
                rows = np.exp(logsumexp((f[:, None] + g[None, :] - Cs) / eps, axis=1))
                if 0.5 * np.abs(rows - a[ia]).sum() / ta <= (tol if eps == epsilon else max(tol, 1e-3)):
                    break
        if eps == epsilon or it >= max_iter:
            break
        eps = max(epsilon, eps * 0.5)
    P = np.exp((f[:, None] + g[None, :] - Cs) / eps)
    err = 0.5 * (np.abs(P.sum(axis=1) - a[ia]).sum() + np.abs(P.sum(axis=0) - b[ib]).sum()) / ta
    Pr = _round_to_marginals(P, a[ia], b[ib])
    rows = np.nonzero(ia)[0]
    cols = np.nonzero(ib)[0]
    r, c = np.nonzero(Pr > 0)
    fb = np.min(Cs - g[None, :], axis=1)
    F = np.full(a.size, -np.inf)
    G = np.full(b.size, -np.inf)
    F[ia] = f
    G[ib] = g
    return {"si": rows[r], "dj": cols[c], "w": Pr[r, c], "f": F, "g": G,
            "dual": float(np.dot(fb, a[ia]) + np.dot(g, b[ib])), "converged": bool(err <= tol),
            "err": float(err), "it": it}


def check_duality(sol: TransportSolution, src: DiscreteMeasure, dst: DiscreteMeasure, p: float,
                  capacitated: bool = False, slack_tol: float = 1e-12) -> DualityReport:
    """Verify dual feasibility on all pairs and complementary slackness on the plan.

    For the capacitated form also checks psi <= 0 and psi = 0 on sinks with
    spare capacity.
    """
    phi = np.asarray(sol.phi, dtype=float)
    psi = np.asarray(sol.psi, dtype=float)
    fin_s = np.isfinite(phi)
    fin_d = np.isfinite(psi)
    X = np.ascontiguousarray(src.points[fin_s])
    Y = np.ascontiguousarray(dst.points[fin_d])
    if len(X) and len(Y):
        worst, wi, wj = K.max_violation(X, Y, phi[fin_s], psi[fin_d], float(p), *tiles_for(Y))
        wi = int(np.nonzero(fin_s)[0][wi]) if wi >= 0 else -1
        wj = int(np.nonzero(fin_d)[0][wj]) if wj >= 0 else -1
    else:
        worst, wi, wj = -np.inf, -1, -1
    if sol.src_index.size:
        c = np.linalg.norm(src.points[sol.src_index] - dst.points[sol.dst_index], axis=1) ** p
        slack = float(np.max(np.abs(c - phi[sol.src_index] - psi[sol.dst_index])))
    else:
        slack = 0.0
    sign = 0.0
    unsat = 0.0
    if capacitated:
        sign = float(max(0.0, np.max(psi[fin_d], initial=0.0)))
        spare = sol.target_marginal < dst.masses * (1 - slack_tol)
        if np.any(spare):
            unsat = float(np.max(np.abs(psi[spare])))
    gap = None
    if sol.integer_primal is not None and sol.integer_dual is not None:
        gap = int(sol.integer_primal - sol.integer_dual)
    return DualityReport(float(max(worst, 0.0)), (wi, wj), slack, sign, unsat, gap)
