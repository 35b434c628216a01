"""Command line harness: ``wproj {project,energy,anneal,sweep,stability,audit}``.

Every command reads an optional JSON config (keys are the fields of
:class:`ExperimentSpec`), applies command line overrides and writes its
artifacts into ``--out``.  Outputs contain no timestamps or timings, so
re-running a command reproduces its JSON and CSV files byte for byte.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import __version__
from ._io import write_csv, write_json
from .analytic_ball import ball_energy, fuglede_gap
from .energy_model import CSV_FIELDS, EnergyParams, evaluate, nball_ansatz, suggest_penalty
from .lattice_geometry import (PERIMETER_ESTIMATORS, GeometryError, Lattice, NearlySphericalProfile,
                               best_fit_disk, connected_components, diameter, perimeter, rasterize_ball,
                               rasterize_profile, rescale, save_set, symmetric_difference_volume,
                               translate, volume)
from .projection_energy import (ProjectionOptions, audit_lipschitz, audit_superadditivity, project,
                                projection_duality)
from .shape_optimizer import AnnealConfig, AnnealError, anneal_chains
from .shapes import BATTERY, BATTERY_VERSION, ball_radius, build_shape
from .svg import projection_svg, set_svg
from .transport_core import TransportError

log = logging.getLogger("wproj")

COMMANDS = ("project", "energy", "anneal", "sweep", "stability", "audit")
EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_IO, EXIT_INVARIANT = 0, 1, 2, 3, 4

DEFAULT_LAMBDAS = tuple(10.0 ** (2 + 0.5 * k) for k in range(9))

# Regression floors of the interpolation ratio over the battery, keyed by
# (battery version, h, p, perimeter estimator).  Recorded from a first run;
# the audit fails if a re-run drifts from them by more than 1%.
AUDIT_FLOORS: dict[tuple[str, float, float, str], float] = {
    ("battery-v1", 0.05, 1.0, "crofton"): 1.009803188766937,
    ("battery-v1", 0.05, 2.0, "crofton"): 1.021565017134832,
}


class ConfigError(ValueError):
    pass


class InvariantViolation(RuntimeError):
    pass


@dataclass
class ExperimentSpec:
    command: str = "project"
    d: int = 2
    p: float = 1.0
    alpha: float = 1.0
    lam: float = 1.0
    penalty: float | None = None
    perimeter_estimator: str = "crofton"
    h: float = 0.05
    half_width: float | None = None
    shape: str = "ball"
    solver: str = "exact"
    epsilon: float = 1e-3
    steps: int = 200_000
    chains: int = 4
    T0: float | None = None
    moves_per_projection: int = 2000
    rng_seed: int = 0
    out: str = "out"
    svg: bool = True
    lambdas: list = field(default_factory=lambda: list(DEFAULT_LAMBDAS))
    fit_min_lambda: float = 100.0
    anneal_checks: list = field(default_factory=list)
    eps_list: list = field(default_factory=lambda: [0.02, 0.05, 0.1])
    k_list: list = field(default_factory=lambda: [2, 3, 4])
    h_list: list = field(default_factory=lambda: [0.02, 0.01])
    stability_anneal: bool = True

    def validate(self) -> "ExperimentSpec":
        if self.command not in COMMANDS:
            raise ConfigError(f"unknown command {self.command!r}")
        if self.d != 2:
            raise ConfigError("the harness works in d = 2")
        for name in ("h", "epsilon"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        if self.p < 1 or self.alpha <= 0 or self.lam < 0:
            raise ConfigError("need p >= 1, alpha > 0 and lambda >= 0")
        if self.penalty is not None and self.penalty <= 0:
            raise ConfigError("penalty must be positive")
        if self.solver not in ("exact", "entropic"):
            raise ConfigError(f"unknown solver {self.solver!r}")
        if self.perimeter_estimator not in PERIMETER_ESTIMATORS:
            raise ConfigError(f"unknown perimeter estimator {self.perimeter_estimator!r}")
        if self.steps < 1 or self.chains < 1:
            raise ConfigError("steps and chains must be >= 1")
        if not (self.eps_list and self.k_list and self.h_list):
            raise ConfigError("stability grids must be nonempty")
        head = self.shape.split(":")[0]
        looks_like_file = head == "file" or self.shape.endswith(".json") or "/" in self.shape
        if looks_like_file:
            path = self.shape[5:] if head == "file" else self.shape
            if not Path(path).is_file():
                raise ConfigError(f"set file {path!r} does not exist")
        return self

    def params(self, lam: float | None = None) -> EnergyParams:
        base = EnergyParams(d=self.d, p=self.p, alpha=self.alpha, lam=self.lam if lam is None else lam,
                            perimeter_estimator=self.perimeter_estimator)
        pen = self.penalty if self.penalty is not None else suggest_penalty(base)
        return replace(base, penalty=pen)

    def projection(self) -> ProjectionOptions:
        return ProjectionOptions(solver=self.solver, epsilon=self.epsilon)

    def anneal_config(self, seed_shape: str | None = None) -> AnnealConfig:
        shape = seed_shape or self.shape
        head, _, arg = shape.partition(":")
        kw: dict = {}
        if head == "n_balls":
            kw = {"seed_shape": "n_balls", "n_balls": int(arg or 2)}
        elif head in ("ball", "random_blob"):
            kw = {"seed_shape": head}
        else:
            kw = {"seed_shape": "file", "seed_file": shape[5:] if head == "file" else shape}
        return AnnealConfig(rng_seed=self.rng_seed, steps=self.steps, T0=self.T0, h=self.h,
                            moves_per_projection=self.moves_per_projection, half_width=self.half_width,
                            projection=self.projection(), **kw)


# ---------------------------------------------------------------------------
# helpers


def _out(spec: ExperimentSpec) -> Path:
    out = Path(spec.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _params_dict(params: EnergyParams) -> dict:
    return asdict(params)


def _shape(spec: ExperimentSpec):
    E = build_shape(spec.shape, spec.h, spec.half_width)
    if E.is_empty():
        raise ConfigError(f"shape {spec.shape!r} gives an empty set")
    return E


def _duality_summary(res) -> dict:
    if res.plan.integer_primal is None:
        return {"integer_gap": None, "max_violation": None, "relative_violation": None}
    rep, rel = projection_duality(res)
    return {"integer_gap": rep.integer_gap, "max_violation": rep.max_violation,
            "max_slackness": rep.max_slackness, "relative_violation": rel}


def _disk_fit(E) -> float:
    """Symmetric difference to the best-fit disk as a fraction of the volume."""
    D = best_fit_disk(E)
    return symmetric_difference_volume(E, D) / volume(E)


def _slope(x, y) -> float:
    return float(np.polyfit(np.asarray(x, float), np.asarray(y, float), 1)[0])


# ---------------------------------------------------------------------------
# commands


def cmd_project(spec: ExperimentSpec) -> dict:
    E = _shape(spec)
    res = project(E, spec.p, spec.projection())
    out = _out(spec)
    (out / "result.json").write_text(res.to_json())
    res.write_plan_csv(out / "plan.csv")
    rep = {"shape": spec.shape, "h": spec.h, "p": spec.p, "solver": spec.solver, "n_cells": E.n_cells,
           "volume": volume(E), "wpp": res.wpp, "max_displacement": res.max_displacement,
           "padding_used": res.padding_used, "duality": _duality_summary(res)}
    r = ball_radius(spec.shape)
    if r is not None:
        d = E.d
        exact = r ** (d + spec.p) * ball_energy(d, spec.p)
        pts = res.target.points
        rr = np.linalg.norm(pts, axis=1)
        outer = r * 2.0 ** (1.0 / d)
        near = (rr >= r - 3 * spec.h) & (rr <= outer + 3 * spec.h)
        m = res.target.masses
        rep["ball"] = {"radius": r, "analytic_wpp": exact, "relative_error": res.wpp / exact - 1.0,
                       "annulus_inner": r, "annulus_outer": outer,
                       "mass_fraction_near_annulus": float(m[near].sum() / m.sum())}
    write_json(out / "report.json", rep)
    if spec.svg:
        (out / "projection.svg").write_text(projection_svg(E, res))
    return rep


def cmd_energy(spec: ExperimentSpec) -> dict:
    E = _shape(spec)
    params = spec.params()
    rep = evaluate(E, params, spec.projection())
    out = _out(spec)
    doc = {"shape": spec.shape, "h": spec.h, "params": _params_dict(params), "energy": rep.to_json_dict()}
    write_json(out / "result.json", doc)
    write_csv(out / "energy.csv", CSV_FIELDS, [rep.csv_row(params)])
    return doc


def _run_anneal(spec: ExperimentSpec, lam: float, seed_shape: str | None, out: Path, tag: str) -> dict:
    params = spec.params(lam)
    cfg = spec.anneal_config(seed_shape)
    best, traces, k = anneal_chains(params, cfg, spec.chains)
    for i, tr in enumerate(traces):
        tr.write_csv(out / f"{tag}trace_chain{i}.csv")
    traces[k].write_csv(out / f"{tag}trace.csv")
    save_set(best, out / f"{tag}best_set.json")
    rep = traces[k].best_report
    ball = rasterize_ball(best.lattice, None, math.sqrt(params.volume_target / math.pi), True)
    ball_rep = evaluate(ball, params, spec.projection())
    doc = {
        "lambda": lam, "params": _params_dict(params), "seed_shape": cfg.seed_shape, "steps": cfg.steps,
        "chains": spec.chains, "best_chain": k,
        "chain_totals": [t.best_report.total for t in traces],
        "chain_components": [t.best_report.n_components for t in traces],
        "projections": [t.projections for t in traces], "accepted": [t.accepted for t in traces],
        "lipschitz_estimates": [t.lipschitz_estimate for t in traces],
        "energy": rep.to_json_dict(), "n_components": rep.n_components,
        "component_diameters": sorted((diameter(c) for c in connected_components(best)), reverse=True),
        "disk_fit_symmetric_difference": _disk_fit(best), "ball_total": ball_rep.total,
        "total_over_ball": rep.total / ball_rep.total,
    }
    if spec.svg:
        (out / f"{tag}best_set.svg").write_text(set_svg(best))
    return doc


def cmd_anneal(spec: ExperimentSpec) -> dict:
    out = _out(spec)
    doc = _run_anneal(spec, spec.lam, None, out, "")
    write_json(out / "result.json", doc)
    return doc


def cmd_sweep(spec: ExperimentSpec) -> dict:
    lams = sorted(float(x) for x in spec.lambdas)
    if len(lams) < 4 or lams[0] <= 0 or lams[-1] / lams[0] < 100 * (1 - 1e-12):
        raise ConfigError("a sweep needs at least 4 positive lambdas spanning 2 decades")
    out = _out(spec)
    rows = []
    for lam in lams:
        params = spec.params(lam)
        n, r, total = nball_ansatz(params)
        d, p = params.d, params.p
        per = n * d * math.pi * r ** (d - 1)
        wsum = n * r ** (d + p) * ball_energy(d, p)
        rows.append([lam, n, r, per, wsum, lam * wsum**params.alpha, total])
    write_csv(out / "sweep.csv", ["lambda", "n_balls", "radius", "perimeter", "wpp_sum", "transport_term",
                                  "total"], rows)
    arr = np.array(rows, float)
    fit = arr[:, 0] >= spec.fit_min_lambda
    if fit.sum() < 2:
        raise ConfigError("fewer than two lambdas at or above fit_min_lambda")
    top = arr[:, 0] >= lams[-1] / 10 * (1 - 1e-12)
    x = np.log1p(arr[:, 0])
    expo = 1.0 / (1.0 + spec.alpha * spec.p)

    def slopes(sel):
        if sel.sum() < 2:
            return None
        return {"total": _slope(x[sel], np.log(arr[sel, 6])), "perimeter": _slope(x[sel], np.log(arr[sel, 3])),
                "wpp_sum": _slope(x[sel], np.log(arr[sel, 4])), "n_balls": _slope(x[sel], np.log(arr[sel, 1]))}

    main = slopes(fit)
    doc = {
        "params": _params_dict(spec.params(lams[0])), "lambdas": lams, "fit_min_lambda": spec.fit_min_lambda,
        "slopes": main, "slopes_top_decade": slopes(top),
        "targets": {"total": expo, "perimeter": expo, "wpp_sum": -spec.p * expo},
        "component_bound_exponent": spec.d * (1 + spec.p) * expo,
        "within_tolerance": {"total": abs(main["total"] - expo) <= 0.05,
                             "wpp_sum": abs(main["wpp_sum"] + spec.p * expo) <= 0.07},
    }
    checks = []
    for lam in spec.anneal_checks:
        a = _run_anneal(spec, float(lam), None, out, f"check_{float(lam):.6g}_")
        ansatz = nball_ansatz(spec.params(float(lam)))[2]
        checks.append({"lambda": float(lam), "anneal_total": a["energy"]["total"], "ansatz_total": ansatz,
                       "ansatz_beaten_by": max(0.0, 1.0 - a["energy"]["total"] / ansatz)})
    doc["anneal_checks"] = checks
    write_json(out / "report.json", doc)
    return doc


def _transition_lambda(spec: ExperimentSpec) -> float:
    """Smallest lambda at which two equal balls beat one in the ansatz."""
    params = spec.params(1.0)
    d, p, a = spec.d, spec.p, spec.alpha
    V = params.volume_target
    wd = math.pi
    per = [n * d * wd * (V / (n * wd)) ** ((d - 1) / d) for n in (1, 2)]
    w = [n * (V / (n * wd)) ** ((d + p) / d) * ball_energy(d, p) for n in (1, 2)]
    return (per[1] - per[0]) / (w[0] ** a - w[1] ** a)


def cmd_stability(spec: ExperimentSpec) -> dict:
    out = _out(spec)
    p = spec.p
    opt = spec.projection()
    rows = []
    for h in sorted(spec.h_list, reverse=True):
        lat = Lattice.square(h, 1.0 + max(spec.eps_list) + 0.1)
        disk = rasterize_ball(lat, None, 1.0, True)
        w_disk = project(disk, p, opt).wpp
        p_disk = perimeter(disk, spec.perimeter_estimator)
        for eps in spec.eps_list:
            for k in spec.k_list:
                prof = NearlySphericalProfile.cosine(float(eps), int(k)).with_area()
                E = rasterize_profile(lat, prof, 1.0, math.pi)
                f2 = prof.l2_squared()
                dper = prof.length() - 2 * math.pi
                dlat = perimeter(E, spec.perimeter_estimator) - p_disk
                dw = w_disk - project(E, p, opt).wpp
                gap, _ = fuglede_gap(prof, p)
                rows.append([h, float(eps), int(k), f2, dper, dper / f2, dlat / f2, dw, dw / f2, gap / f2])
    head = ["h", "eps", "k", "f_l2", "perimeter_deficit", "perimeter_ratio", "lattice_perimeter_ratio",
            "wpp_deficit", "wpp_ratio", "dual_gap_ratio"]
    write_csv(out / "stability.csv", head, rows)
    arr = np.array(rows, float)
    pr, wr = arr[:, 5], arr[:, 8]
    hs = sorted(spec.h_list, reverse=True)
    refine = []
    if len(hs) >= 2:
        coarse, fine = arr[arr[:, 0] == hs[0]], arr[arr[:, 0] == hs[-1]]
        for c, f in zip(coarse, fine):
            refine.append({"eps": c[1], "k": int(c[2]), "perimeter_change": abs(f[5] / c[5] - 1),
                           "wpp_change": abs(f[8] / c[8] - 1)})
    c_per, c_w = float(pr.min()), float(wr.max())
    doc = {
        "p": p, "h_list": hs, "eps_list": list(spec.eps_list), "k_list": list(spec.k_list),
        "perimeter_ratio_range": [float(pr.min()), float(pr.max())],
        "wpp_ratio_range": [float(wr.min()), float(wr.max())],
        "h_refinement": refine,
        "max_h_change": max((max(r["perimeter_change"], r["wpp_change"]) for r in refine), default=None),
        # the perimeter gain outweighs the transport loss for every profile below this lambda
        "critical_lambda": c_per / c_w if c_w > 0 else None,
        "transition_lambda_ansatz": _transition_lambda(spec),
    }
    if spec.stability_anneal:
        lt = doc["transition_lambda_ansatz"]
        runs = []
        for lam, seed in ((lt / 10, "random_blob"), (lt * 10, "ball")):
            a = _run_anneal(spec, lam, seed, out, f"anneal_{lam:.6g}_")
            runs.append({"lambda": lam, "seed_shape": seed, "n_components": a["n_components"],
                         "disk_fit_symmetric_difference": a["disk_fit_symmetric_difference"],
                         "total": a["energy"]["total"]})
        doc["anneal"] = runs
    write_json(out / "report.json", doc)
    return doc


def cmd_audit(spec: ExperimentSpec) -> dict:
    out = _out(spec)
    p, h, est = spec.p, spec.h, spec.perimeter_estimator
    opt = spec.projection()
    exact = spec.solver == "exact"
    failures = []
    shapes = []
    for name in BATTERY:
        E = build_shape(name, h)
        res = project(E, p, opt)
        per, vol = perimeter(E, est), volume(E)
        ratio = res.wpp ** (1 / p) * per / vol ** (1 + 1 / p)
        row = {"shape": name, "n_cells": E.n_cells, "volume": vol, "perimeter": per, "wpp": res.wpp,
               "interpolation_ratio": ratio, "n_components": len(connected_components(E)),
               "max_component_diameter": max(diameter(c) for c in connected_components(E))}
        if exact:
            du = _duality_summary(res)
            row.update({"integer_gap": du["integer_gap"], "relative_violation": du["relative_violation"]})
            if du["integer_gap"] != 0 or du["relative_violation"] > 1e-9:
                failures.append(f"duality certificate fails on {name}")
        shapes.append(row)
    write_csv(out / "battery.csv", list(shapes[0].keys()), [list(r.values()) for r in shapes])

    pairs = []

    def pair(label, E, F):
        rep = audit_superadditivity(E, F, p, opt)
        pairs.append({"pair": label, "residual": rep.residual, "relative_residual": rep.relative_residual,
                      "integer_residual": rep.integer_residual, "monotone": rep.monotone})
        if rep.residual < -1e-9 or not rep.monotone:
            failures.append(f"superadditivity fails on {label}")
        return rep

    for name in BATTERY:
        E = build_shape(name, h)
        comps = connected_components(E)
        if len(comps) == 2:
            pair(name, comps[0], comps[1])
    lat = Lattice.square(h, 2.6)
    ring = build_shape("annulus:0.6:1", h, 2.6)
    core = rasterize_ball(lat, None, 0.4, True)
    pair("annulus:0.6:1 + ball:0.4", ring, core)
    left = rasterize_ball(lat, (-0.7, 0.0), 0.5, True)
    sq = build_shape("square:0.8", h, 2.6)
    pair("ball:0.5 + square:0.8 apart", left, translate(sq, (int(round(1.0 / h)), 0)))
    far_lat = Lattice.square(h, 6.0)
    base = rasterize_ball(far_lat, (-4.5, 0.0), 0.5, True)
    far = pair("far translates", base, translate(base, (int(round(9.0 / h)), 0)))
    far_rel = abs(far.relative_residual)
    if far_rel > 1e-6:
        failures.append("far translates are not additive")

    mono = []
    for inner, outer in (("ball:0.5", "ball:0.75"), ("ball:0.75", "ball:1"), ("square:1", "square:1.6")):
        A, B = build_shape(inner, h, 1.2), build_shape(outer, h, 1.2)
        nested = bool(np.all(B.mask[A.mask]))
        wa, wb = project(A, p, opt).wpp, project(B, p, opt).wpp
        mono.append({"inner": inner, "outer": outer, "nested": nested, "wpp_inner": wa, "wpp_outer": wb})
        if nested and wa > wb:
            failures.append(f"monotonicity fails for {inner} in {outer}")

    lip = []
    disk = build_shape("ball:1", h, 1.3)
    for extra in (1, 5, 20):
        m = disk.mask.copy()
        cand = np.argwhere(~m & np.roll(m, 1, axis=0))
        for i, j in cand[:extra]:
            m[i, j] = True
        r = audit_lipschitz(disk, disk.with_mask(m), p, opt)
        lip.append({"cells_added": extra, "ratio": r.ratio})

    def ratio_of(D):
        return project(D, p, opt).wpp ** (1 / p) * perimeter(D, est) / volume(D) ** (1 + 1 / p)

    # disks of three radii rasterized on the same lattice, and exact rescalings of the unit disk
    fam = []
    unit = build_shape("ball:1", h)
    for t in (0.5, 1.0, 2.0):
        fam.append({"radius": t, "interpolation_ratio": ratio_of(build_shape(f"ball:{t}", h, 1.2 * t + 0.1)),
                    "rescaled_ratio": ratio_of(rescale(unit, t))})
    fr = [f["interpolation_ratio"] for f in fam]
    fam_spread = max(fr) / min(fr) - 1
    rr = [f["rescaled_ratio"] for f in fam]
    rescaled_spread = max(rr) / min(rr) - 1
    if fam_spread > 0.01 or rescaled_spread > 0.01:
        failures.append("interpolation ratio is not dilation invariant")

    conv = []
    for hh in (h, h / 2):
        D = rasterize_ball(Lattice.square(hh, 1.2), None, 1.0, True)
        conv.append({"h": hh, "relative_error": project(D, p, opt).wpp / ball_energy(2, p) - 1.0})
    e0, e1 = (abs(c["relative_error"]) for c in conv)
    rate = math.log2(e0 / e1) if e0 > 0 and e1 > 0 else None

    floor_min = min(r["interpolation_ratio"] for r in shapes)
    key = (BATTERY_VERSION, float(h), float(p), est)
    frozen = AUDIT_FLOORS.get(key) if exact else None
    if floor_min <= 0:
        failures.append("interpolation ratio is not positive")
    if frozen is not None and abs(floor_min / frozen - 1) > 0.01:
        failures.append(f"interpolation floor {floor_min!r} drifted from frozen {frozen!r}")
    doc = {
        "battery": BATTERY_VERSION, "h": h, "p": p, "perimeter_estimator": est, "solver": spec.solver,
        "n_shapes": len(shapes), "shapes": shapes, "superadditivity": pairs,
        "far_translate_relative_residual": far_rel, "monotonicity": mono, "lipschitz": lip,
        "disk_family": fam, "disk_family_spread": fam_spread,
        "disk_family_rescaled_spread": rescaled_spread,
        "disk_convergence": conv, "disk_convergence_rate": rate,
        "interpolation_floor": floor_min,
        "argmin_shape": min(shapes, key=lambda r: r["interpolation_ratio"])["shape"],
        "frozen_floor": frozen, "failures": failures, "ok": not failures,
    }
    write_json(out / "report.json", doc)
    if failures:
        raise InvariantViolation("; ".join(failures))
    return doc


HANDLERS = {"project": cmd_project, "energy": cmd_energy, "anneal": cmd_anneal, "sweep": cmd_sweep,
            "stability": cmd_stability, "audit": cmd_audit}


# ---------------------------------------------------------------------------
# argument handling


def _floats(text: str) -> list:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise ConfigError(f"bad number list {text!r}") from exc


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="wproj", description="Projection energy experiments on lattice sets.")
    ap.add_argument("--version", action="version", version=f"wproj {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config")
        sp.add_argument("--out")
        sp.add_argument("--h", type=float)
        sp.add_argument("--p", type=float)
        sp.add_argument("--alpha", type=float)
        sp.add_argument("--lambda", dest="lam", type=float)
        sp.add_argument("--penalty", type=float)
        sp.add_argument("--shape")
        sp.add_argument("--seed", dest="rng_seed", type=int)
        sp.add_argument("--solver", choices=("exact", "entropic"))
        sp.add_argument("--epsilon", type=float)
        sp.add_argument("--steps", type=int)
        sp.add_argument("--chains", type=int)
        sp.add_argument("--perimeter", dest="perimeter_estimator")
        sp.add_argument("--lambdas", type=_floats, help="comma separated list for sweep")
        sp.add_argument("--no-svg", dest="svg", action="store_false", default=None)
        sp.add_argument("-v", "--verbose", action="store_true")
    return ap


def load_spec(args: argparse.Namespace) -> ExperimentSpec:
    known = {f.name for f in fields(ExperimentSpec)}
    doc: dict = {}
    if args.config:
        try:
            doc = json.loads(Path(args.config).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {args.config} is not valid JSON: {exc}") from exc
        if not isinstance(doc, dict):
            raise ConfigError("config must be a JSON object")
        if "lambda" in doc:
            doc["lam"] = doc.pop("lambda")
        unknown = set(doc) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    for name in known - {"command"}:
        v = getattr(args, name, None)
        if v is not None:
            doc[name] = v
    doc["command"] = args.command
    try:
        spec = ExperimentSpec(**doc)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
    return spec.validate()


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        spec = load_spec(args)
        HANDLERS[spec.command](spec)
    except FileNotFoundError as exc:
        # a missing config or set file is a configuration problem
        print(f"wproj: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ConfigError, GeometryError, ValueError) as exc:
        print(f"wproj: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (TransportError, AnnealError) as exc:
        print(f"wproj: solver error: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except OSError as exc:
        print(f"wproj: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except InvariantViolation as exc:
        print(f"wproj: invariant violated: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
