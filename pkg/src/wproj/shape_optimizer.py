"""Simulated annealing and greedy descent over planar lattice sets.

Moves flip one cell next to the boundary.  Perimeter and volume changes are
exact and local.  The transport term is expensive, so between full
projections it is tracked by a surrogate: each added cell is charged
``C_L * V^{p/d} * h^d`` and each removed cell credited the same amount,
where ``C_L`` is re-estimated from the change observed at every projection.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from numba import njit

from ._io import write_csv
from .energy_model import EnergyParams, EnergyReport, evaluate
from .lattice_geometry import (CROFTON_OFFSETS, CROFTON_WEIGHTS, GeometryError, Lattice, LatticeSet,
                               connected_components, embed, load_set,
                               random_profile, rasterize_ball, rasterize_profile)
from .projection_energy import ProjectionOptions, project

SEED_SHAPES = ("ball", "n_balls", "random_blob", "file")
_MARGIN = 3


class AnnealError(RuntimeError):
    """Incremental bookkeeping disagreed with a full re-evaluation."""


@dataclass(frozen=True)
class AnnealConfig:
    """Search settings.

    Temperatures start at ``T0`` and are multiplied by ``cooling`` every
    ``cool_every`` steps.  The default start is half a cell width, raised to
    the penalty price of one cell when that is larger: otherwise a strongly
    penalized chain cannot make the first flip away from the target volume.
    """

    seed_shape: str = "ball"
    n_balls: int = 2
    seed_file: str | None = None
    rng_seed: int = 0
    steps: int = 200_000
    T0: float | None = None
    cooling: float = 0.9995
    cool_every: int = 20
    moves_per_projection: int = 2000
    boundary_only: bool = True
    h: float = 0.05
    half_width: float | None = None
    checkpoint_every: int = 1000
    lipschitz_cap: float = 50.0
    projection: ProjectionOptions = field(default_factory=ProjectionOptions)

    def __post_init__(self):
        if self.seed_shape not in SEED_SHAPES:
            raise ValueError(f"unknown seed shape {self.seed_shape!r}")
        if self.seed_shape == "file" and not self.seed_file:
            raise ValueError("seed_shape 'file' needs seed_file")
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if not 0 < self.cooling < 1:
            raise ValueError("cooling must lie in (0, 1)")
        if self.T0 is not None and self.T0 <= 0:
            raise ValueError("T0 must be positive")
        if self.moves_per_projection < 1 or self.cool_every < 1 or self.checkpoint_every < 1:
            raise ValueError("intervals must be >= 1")
        if self.n_balls < 1:
            raise ValueError("n_balls must be >= 1")


TRACE_FIELDS = ("step", "temperature", "total", "perimeter", "wpp_sum", "volume", "n_components",
                "best_total", "exact")


@dataclass
class AnnealTrace:
    rows: list = field(default_factory=list)
    best: LatticeSet | None = None
    best_report: EnergyReport | None = None
    projections: int = 0
    accepted: int = 0
    lipschitz_estimate: float = 0.0

    def write_csv(self, path) -> None:
        write_csv(path, TRACE_FIELDS, ([r[k] for k in TRACE_FIELDS] for r in self.rows))


# ---------------------------------------------------------------------------
# seeds


def _default_half_width(params: EnergyParams, cfg: AnnealConfig) -> float:
    R = math.sqrt(params.volume_target / math.pi)
    if cfg.seed_shape == "n_balls":
        r = R / math.sqrt(cfg.n_balls)
        ring = 0.0 if cfg.n_balls == 1 else 1.5 * r / math.sin(math.pi / cfg.n_balls)
        return ring + 2.0 * r + 4 * cfg.h
    return 2.0 * R + 4 * cfg.h


def seed_set(params: EnergyParams, cfg: AnnealConfig) -> LatticeSet:
    """Starting configuration with the target volume (deterministic in rng_seed)."""
    if params.d != 2:
        raise GeometryError("annealing is implemented for d = 2")
    if cfg.seed_shape == "file":
        E = load_set(cfg.seed_file)
        if not math.isclose(E.h, cfg.h, rel_tol=1e-12):
            raise GeometryError("seed file lattice spacing differs from the configured h")
        return E
    hw = cfg.half_width or _default_half_width(params, cfg)
    lat = Lattice.square(cfg.h, hw)
    V = params.volume_target
    if cfg.seed_shape == "ball":
        return rasterize_ball(lat, None, math.sqrt(V / math.pi), True)
    if cfg.seed_shape == "n_balls":
        N = cfg.n_balls
        r = math.sqrt(V / (N * math.pi))
        # centers on a ring, neighbours separated by a gap of one radius
        ring = 0.0 if N == 1 else 1.5 * r / math.sin(math.pi / N)
        mask = np.zeros(lat.extent, bool)
        for k in range(N):
            c = ring * np.array([math.cos(2 * math.pi * k / N), math.sin(2 * math.pi * k / N)])
            mask |= rasterize_ball(lat, c, r, V / N).mask
        return LatticeSet(lat, mask)
    prof = random_profile(cfg.rng_seed)
    return rasterize_profile(lat, prof, math.sqrt(V / prof.area()), V)


# ---------------------------------------------------------------------------
# kernel


def _offsets(estimator: str):
    if estimator == "crofton":
        off = np.array(CROFTON_OFFSETS, np.int64)
        return off, np.asarray(CROFTON_WEIGHTS, float)
    if estimator == "cell-edge":
        return np.array([[1, 0], [0, 1]], np.int64), np.ones(2)
    raise GeometryError(f"annealing needs a local perimeter estimator, not {estimator!r}")


@njit(cache=True)
def _perimeter_delta(mask, x, y, off, wts):
    inside = mask[x, y]
    s = 0.0
    for k in range(off.shape[0]):
        a = off[k, 0]
        b = off[k, 1]
        t = 0
        t += 1 if mask[x + a, y + b] != inside else -1
        t += 1 if mask[x - a, y - b] != inside else -1
        # flipping makes split pairs whole and whole pairs split
        s -= wts[k] * t
    return s


@njit(cache=True)
def _is_candidate(mask, x, y, margin):
    nx, ny = mask.shape
    if x < margin or y < margin or x >= nx - margin or y >= ny - margin:
        return False
    v = mask[x, y]
    return mask[x + 1, y] != v or mask[x - 1, y] != v or mask[x, y + 1] != v or mask[x, y - 1] != v


@njit(cache=True)
def _set_candidate(flag, pos, lst, n, x, y, want, ny):
    key = x * ny + y
    if want and not flag[x, y]:
        flag[x, y] = True
        pos[key] = n
        lst[n] = key
        n += 1
    elif not want and flag[x, y]:
        flag[x, y] = False
        i = pos[key]
        last = lst[n - 1]
        lst[i] = last
        pos[last] = i
        n -= 1
    return n


@njit(cache=True)
def _anneal_steps(mask, flag, pos, lst, n_cand, off, wts, hh, cell, volp, st, u_pick, u_acc,
                  nsteps, stop_after, lam, alpha, pen, vt, cool, cool_every, step0, margin, boundary_only):
    """Run up to nsteps Metropolis steps; returns (steps done, accepted, n_cand, net added).

    st holds [perimeter, volume, wpp estimate, C_L, temperature].
    """
    nx, ny = mask.shape
    acc = 0
    net = 0
    done = 0
    for s in range(nsteps):
        step = step0 + s
        if step > 0 and step % cool_every == 0:
            st[4] *= cool
        done += 1
        if n_cand == 0:
            continue
        if boundary_only:
            key = lst[min(n_cand - 1, int(u_pick[s] * n_cand))]
            x = key // ny
            y = key % ny
        else:
            x = margin + int(u_pick[s] * (nx - 2 * margin))
            frac = u_pick[s] * (nx - 2 * margin) - (x - margin)
            y = margin + min(ny - 2 * margin - 1, int(frac * (ny - 2 * margin)))
        adding = not mask[x, y]
        sgn = 1.0 if adding else -1.0
        dP = hh * _perimeter_delta(mask, x, y, off, wts)
        V = st[1]
        V2 = V + sgn * cell
        W = st[2]
        W2 = max(0.0, W + sgn * st[3] * volp * cell)
        dT = 0.0
        if lam > 0:
            dT = lam * (W2**alpha - W**alpha)
        dPen = pen * (abs(V2 - vt) - abs(V - vt))
        dE = dP + dT + dPen
        scale = abs(st[0]) + 1.0
        if dE < -1e-12 * scale:
            ok = True
        elif dE <= 1e-12 * scale:
            ok = u_acc[s] < 0.5
        else:
            ok = u_acc[s] < math.exp(-dE / st[4])
        if not ok:
            continue
        mask[x, y] = adding
        st[0] += dP
        st[1] = V2
        st[2] = W2
        acc += 1
        net += 1 if adding else -1
        for ddx, ddy in ((0, 0), (1, 0), (-1, 0), (0, 1), (0, -1)):
            n_cand = _set_candidate(flag, pos, lst, n_cand, x + ddx, y + ddy,
                                    _is_candidate(mask, x + ddx, y + ddy, margin), ny)
        if acc >= stop_after:
            break
    return done, acc, n_cand, net


def _with_margin(E: LatticeSet) -> LatticeSet:
    """Ensure an empty frame of _MARGIN cells around the set inside its window."""
    cells = E.cells
    if cells.size == 0:
        raise GeometryError("empty seed")
    lo = cells.min(axis=0)
    hi = cells.max(axis=0)
    ext = np.asarray(E.lattice.extent)
    if np.all(lo >= _MARGIN) and np.all(hi < ext - _MARGIN):
        return E
    lat = E.lattice
    grow = _MARGIN + 2
    new = Lattice(lat.d, lat.h, tuple(np.asarray(lat.origin) - grow * lat.h), tuple(ext + 2 * grow))
    return embed(E, new)


def _report_row(step, T, rep: EnergyReport, best_total, exact, ncomp):
    return {"step": int(step), "temperature": float(T), "total": float(rep[0]), "perimeter": float(rep[1]),
            "wpp_sum": float(rep[2]), "volume": float(rep[3]), "n_components": int(ncomp),
            "best_total": float(best_total), "exact": int(exact)}


def anneal(params: EnergyParams, config: AnnealConfig, seed: LatticeSet | None = None
           ) -> tuple[LatticeSet, AnnealTrace]:
    """Metropolis search for a low-energy set under the volume penalty."""
    if params.penalty <= 0:
        raise ValueError("annealing needs a positive volume penalty")
    if params.d != 2:
        raise GeometryError("annealing is implemented for d = 2")
    off, wts = _offsets(params.perimeter_estimator)
    E = _with_margin(seed if seed is not None else seed_set(params, config))
    lat = E.lattice
    h = lat.h
    cell = lat.cell_volume
    p, d = params.p, params.d
    opt = config.projection
    T = config.T0 if config.T0 is not None else max(0.5 * h, params.penalty * cell)
    rng = np.random.default_rng(config.rng_seed)

    mask = E.mask.copy()
    nx, ny = mask.shape
    flag = np.zeros_like(mask)
    pos = np.zeros(nx * ny, np.int64)
    lst = np.zeros(nx * ny, np.int64)
    n_cand = 0
    for x in range(nx):
        for y in range(ny):
            if _is_candidate(mask, x, y, _MARGIN):
                n_cand = _set_candidate(flag, pos, lst, n_cand, x, y, True, ny)

    def exact(m):
        S = LatticeSet(lat, m.copy())
        rep = evaluate(S, params, opt)
        return S, rep

    S, rep = exact(mask)
    W = rep.wpp_sum
    V = rep.volume
    CL = (d + p) / d * W / (V * V ** (p / d)) if W > 0 else 1.0
    st = np.array([rep.perimeter, V, W, CL, T])
    trace = AnnealTrace(best=S, best_report=rep)
    best_total = rep.total
    trace.rows.append(_report_row(0, T, (rep.total, rep.perimeter, W, V), best_total, 1, rep.n_components))
    last_mask = mask.copy()
    last_W = W
    net_since = 0
    acc_since = 0
    step = 0
    next_ck = config.checkpoint_every
    while step < config.steps:
        todo = min(config.steps, next_ck) - step
        u_pick = rng.random(todo)
        u_acc = rng.random(todo)
        done, acc, n_cand, net = _anneal_steps(
            mask, flag, pos, lst, n_cand, off, wts, h, cell, st[1] ** (p / d), st, u_pick, u_acc,
            todo, config.moves_per_projection - acc_since, params.lam, params.alpha, params.penalty,
            params.volume_target, config.cooling, config.cool_every, step, _MARGIN, config.boundary_only)
        step += done
        acc_since += acc
        net_since += net
        trace.accepted += acc
        is_exact = 0
        if acc_since >= config.moves_per_projection or step >= config.steps:
            S, rep = exact(mask)
            trace.projections += 1
            _check_consistency(st, rep, mask, last_mask, last_W, params, config, cell)
            if net_since != 0 and params.lam > 0:
                obs = (rep.wpp_sum - last_W) / (net_since * st[1] ** (p / d) * cell)
                st[3] = 0.5 * st[3] + 0.5 * min(max(obs, 0.0), config.lipschitz_cap)
            st[0], st[1], st[2] = rep.perimeter, rep.volume, rep.wpp_sum
            last_mask = mask.copy()
            last_W = rep.wpp_sum
            net_since = acc_since = 0
            is_exact = 1
            if rep.total < best_total:
                best_total = rep.total
                trace.best, trace.best_report = S, rep
        if step >= next_ck or step >= config.steps:
            ncomp = len(connected_components(LatticeSet(lat, mask.copy())))
            tot = st[0] + (params.lam * st[2] ** params.alpha if params.lam else 0.0) \
                + params.penalty * abs(st[1] - params.volume_target)
            trace.rows.append(_report_row(step, st[4], (tot, st[0], st[2], st[1]), best_total, is_exact, ncomp))
            next_ck += config.checkpoint_every
    trace.lipschitz_estimate = float(st[3])
    return trace.best, trace


def _check_consistency(st, rep: EnergyReport, mask, last_mask, last_W, params, config, cell):
    if abs(st[0] - rep.perimeter) > 1e-8 * max(1.0, rep.perimeter):
        raise AnnealError(f"tracked perimeter {st[0]!r} differs from recomputed {rep.perimeter!r}")
    if abs(st[1] - rep.volume) > 1e-9 * max(1.0, rep.volume):
        raise AnnealError(f"tracked volume {st[1]!r} differs from recomputed {rep.volume!r}")
    if params.lam > 0:
        p, d = params.p, params.d
        changed = int(np.count_nonzero(mask != last_mask)) * cell
        V0 = float(last_mask.sum()) * cell
        bound = config.lipschitz_cap * (V0 ** (p / d) + rep.volume ** (p / d)) * changed
        if abs(rep.wpp_sum - last_W) > bound + 1e-12:
            raise AnnealError(f"projection energy moved by {abs(rep.wpp_sum - last_W)!r}, "
                              f"beyond the Lipschitz allowance {bound!r}")


def anneal_chains(params: EnergyParams, config: AnnealConfig, chains: int = 4):
    """Independent chains with seeds rng_seed, rng_seed+1, ...; best of all returned."""
    results = []
    for k in range(chains):
        cfg = replace(config, rng_seed=config.rng_seed + k)
        results.append(anneal(params, cfg))
    best = min(range(chains), key=lambda k: (results[k][1].best_report.total, k))
    return results[best][0], [r[1] for r in results], best


# ---------------------------------------------------------------------------
# zero-temperature polish


def _flip(E: LatticeSet, x: int, y: int) -> LatticeSet:
    m = E.mask.copy()
    m[x, y] = ~m[x, y]
    return E.with_mask(m)


def refine(E: LatticeSet, params: EnergyParams, config: AnnealConfig | None = None,
           max_passes: int = 1000) -> LatticeSet:
    """Greedy first-improvement descent over boundary flips in lexicographic order.

    Every accepted flip lowers the exactly evaluated energy.  Flips that
    cannot lower it are screened out with exact perimeter and volume deltas
    plus a dual lower bound on the change of the transport term, so only
    promising flips pay for a projection.
    """
    cfg = config or AnnealConfig()
    off, wts = _offsets(params.perimeter_estimator)
    E = _with_margin(E)
    opt = cfg.projection
    rep = evaluate(E, params, opt)
    proj = project(E, params.p, opt) if params.lam > 0 and not E.is_empty() else None
    for _ in range(max_passes):
        improved = False
        mask = E.mask
        cand = [(x, y) for x, y in np.argwhere(mask | _dilate(mask)) if _is_candidate(mask, x, y, _MARGIN)]
        for x, y in cand:
            adding = not mask[x, y]
            dP = E.h * _perimeter_delta(mask, x, y, off, wts)
            V2 = rep.volume + (1 if adding else -1) * E.lattice.cell_volume
            dPen = params.penalty * (abs(V2 - params.volume_target) - abs(rep.volume - params.volume_target))
            low = dP + dPen
            if proj is not None:
                dw = _dual_delta(proj, E, x, y, adding)
                W2 = max(0.0, rep.wpp_sum + dw)
                low += params.lam * (W2**params.alpha - rep.wpp_sum**params.alpha)
            if low >= -1e-12 * max(1.0, abs(rep.total)):
                continue
            F = _flip(E, x, y)
            if F.is_empty():
                continue
            rf = evaluate(F, params, opt)
            if rf.total < rep.total - 1e-12 * max(1.0, abs(rep.total)):
                E, rep = F, rf
                proj = project(E, params.p, opt) if params.lam > 0 else None
                improved = True
                break
        if not improved:
            return E
    return E


def _dilate(mask):
    out = mask.copy()
    out[1:] |= mask[:-1]
    out[:-1] |= mask[1:]
    out[:, 1:] |= mask[:, :-1]
    out[:, :-1] |= mask[:, 1:]
    return out


def _dual_delta(proj, E: LatticeSet, x: int, y: int, adding: bool) -> float:
    """Lower bound on the change of the projection energy when one cell flips.

    Removing a source keeps the other potentials feasible and opens one
    sink whose potential is the c-transform of the sources; adding a cell
    turns a sink into a source whose potential is the c-transform of the
    sinks.  Either way the new dual objective bounds the new optimum below.
    """
    sol = proj.plan
    p = proj.p
    q = E.lattice.cell_volume
    here = E.lattice.centers(np.array([[x, y]]))[0]
    cell = np.array([x, y])
    if not adding:
        i = np.nonzero(np.all(proj.source_cells == cell, axis=1))[0][0]
        others = np.ones(len(proj.source_cells), bool)
        others[i] = False
        pts = E.lattice.centers(proj.source_cells[others])
        vx = min(0.0, float(np.min(np.sum((pts - here) ** 2, axis=1) ** (p / 2) - sol.phi[others])))
        return (-float(sol.phi[i]) + vx) * q
    hit = np.nonzero(np.all(proj.sink_cells == cell, axis=1))[0]
    keep = np.ones(len(proj.sink_cells), bool)
    vx = 0.0
    if hit.size:
        keep[hit[0]] = False
        vx = float(sol.psi[hit[0]])
    pts = E.lattice.centers(proj.sink_cells[keep])
    ux = float(np.min(np.sum((pts - here) ** 2, axis=1) ** (p / 2) - sol.psi[keep]))
    # sinks outside the padded box have potential 0; the nearest one may win
    lo = proj.sink_cells.min(axis=0) - 1
    hi = proj.sink_cells.max(axis=0) + 1
    gap = float(np.min(np.minimum(cell - lo, hi - cell))) * E.h
    ux = min(ux, gap**p)
    return (ux - vx) * q
