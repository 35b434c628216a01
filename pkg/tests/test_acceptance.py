"""End-to-end acceptance checks, one test per criterion.

Each test records a PASS/FAIL line that the terminal summary prints at the
end of the run.  The expensive ones are marked slow; the whole file takes
about 15 minutes on one core.
"""

import json
import math
import time

import numpy as np
import pytest

from conftest import ACCEPTANCE
from wproj import experiments_cli as cli
from wproj.analytic_ball import ball_energy_closed_form
from wproj.energy_model import evaluate, evaluate_family, nball_ansatz
from wproj.lattice_geometry import Lattice, LatticeSet, connected_components, perimeter, rasterize_ball, rescale
from wproj.projection_energy import project
from wproj.shape_optimizer import anneal, anneal_chains
from wproj.shapes import build_shape


def record(k, ok, detail):
    ACCEPTANCE[k] = (bool(ok), detail)
    assert ok, detail


def cli_run(tmp, *args):
    code = cli.main([*args, "--out", str(tmp), "--no-svg"])
    doc = json.loads((tmp / "report.json").read_text()) if (tmp / "report.json").exists() else None
    return code, doc


# ---------------------------------------------------------------------------
# 1 and 2: the unit disk on three lattices


@pytest.fixture(scope="module")
def disk_solves():
    out = {}
    for h in (0.04, 0.02, 0.01):
        E = rasterize_ball(Lattice.square(h, 1.2), None, 1.0, True)
        t0 = time.perf_counter()
        res = project(E, 1.0)
        out[h] = (res, time.perf_counter() - t0)
    return out


@pytest.mark.slow
def test_criterion_1_ball_energy(disk_solves):
    ref = ball_energy_closed_form(1.0)
    errs = {h: abs(r.wpp / ref - 1) for h, (r, _) in disk_solves.items()}
    slowest = max(t for _, t in disk_solves.values())
    ok = errs[0.02] <= 0.03 and errs[0.04] > errs[0.02] > errs[0.01] and slowest <= 120
    record(1, ok, "relative errors " + ", ".join(f"h={h}: {e:.2e}" for h, e in errs.items())
           + f"; slowest solve {slowest:.0f} s")


@pytest.mark.slow
def test_criterion_2_annulus(disk_solves):
    res = disk_solves[0.02][0]
    h = 0.02
    r = np.linalg.norm(res.target.points, axis=1)
    near = (r >= 1 - 3 * h) & (r <= math.sqrt(2) + 3 * h)
    frac = res.target.masses[near].sum() / res.target.masses.sum()
    record(2, frac >= 0.95, f"target mass within 3h of the annulus: {frac:.4f}")


# ---------------------------------------------------------------------------
# 3, 4 and 10: the audit battery


@pytest.fixture(scope="module")
def audits(tmp_path_factory):
    docs = {}
    for p in (1.0, 2.0):
        runs = []
        for rep in range(2):
            out = tmp_path_factory.mktemp(f"audit_p{p:g}_{rep}")
            code, doc = cli_run(out, "audit", "--p", str(p), "--h", "0.05")
            runs.append((code, doc, (out / "battery.csv").read_bytes()))
        docs[p] = runs
    return docs


def test_criterion_3_duality(audits):
    bad, worst = [], 0.0
    for p, runs in audits.items():
        doc = runs[0][1]
        for row in doc["shapes"]:
            worst = max(worst, row["relative_violation"])
            if row["integer_gap"] != 0 or row["relative_violation"] > 1e-9:
                bad.append(f"{row['shape']} p={p:g}")
    n = sum(len(r[0][1]["shapes"]) for r in audits.values())
    record(3, not bad, f"{n} instances, integer gap 0 on all: {not bad}; worst scaled violation {worst:.2e}"
           + (f"; failing {bad}" if bad else ""))


def test_criterion_4_superadditivity(audits):
    worst, far = math.inf, 0.0
    for runs in audits.values():
        doc = runs[0][1]
        worst = min(worst, min(r["residual"] for r in doc["superadditivity"]))
        far = max(far, doc["far_translate_relative_residual"])
    record(4, worst >= -1e-9 and far <= 1e-6, f"min residual {worst:.3e}; far-translate relative residual {far:.1e}")


def test_criterion_10_interpolation(audits):
    lines, ok = [], True
    for p, runs in audits.items():
        (c1, d1, b1), (c2, d2, b2) = runs
        frozen = cli.AUDIT_FLOORS[("battery-v1", 0.05, p, "crofton")]
        floor = d1["interpolation_floor"]
        ok &= c1 == c2 == 0 and floor > 0 and abs(floor / frozen - 1) <= 0.01
        ok &= d2["interpolation_floor"] == floor and b1 == b2
        ok &= d1["disk_family_spread"] <= 0.01 and d1["disk_family_rescaled_spread"] <= 0.01
        lines.append(f"p={p:g}: floor {floor:.6f} (frozen {frozen:.6f}, {d1['argmin_shape']}), "
                     f"disk radii 0.5/1/2 spread {d1['disk_family_spread']:.2%}, "
                     f"exact rescale spread {d1['disk_family_rescaled_spread']:.1e}")
    record(10, ok, "; ".join(lines))


# ---------------------------------------------------------------------------
# 5: ansatz sweep


def test_criterion_5_scaling_law(tmp_path):
    t0 = time.perf_counter()
    code, doc = cli_run(tmp_path, "sweep", "--p", "1", "--alpha", "1")
    dt = time.perf_counter() - t0
    s = doc["slopes"]
    ok = code == 0 and abs(s["total"] - 0.5) <= 0.05 and abs(s["wpp_sum"] + 0.5) <= 0.07 and dt <= 60
    record(5, ok, f"slope(total) {s['total']:.4f}, slope(wpp_sum) {s['wpp_sum']:.4f} "
           f"over lambda {doc['lambdas'][0]:g}..{doc['lambdas'][-1]:g}; {dt:.1f} s")


# ---------------------------------------------------------------------------
# 6: exact dilation identities


def test_criterion_6_dilation():
    worst_p = worst_w = 0.0
    names = ["ball:1", "square:1", "annulus:0.5:1", "cosine:0.2:4", "two_balls:0.5:0.2", "lshape:1.2", "blob:1"]
    for name in names:
        E = build_shape(name, 0.1)
        for p in (1.0, 2.0):
            w = project(E, p).wpp
            for t in (2, 3):
                F = rescale(E, t)
                assert np.array_equal(F.mask, E.mask) and F.h == pytest.approx(t * E.h)
                worst_p = max(worst_p, abs(perimeter(F) / (t * perimeter(E)) - 1))
                worst_w = max(worst_w, abs(project(F, p).wpp / (t ** (2 + p) * w) - 1))
    record(6, worst_p <= 1e-9 and worst_w <= 1e-9,
           f"{len(names)} shapes, t in (2, 3), p in (1, 2): worst perimeter error {worst_p:.1e}, "
           f"worst wpp error {worst_w:.1e}")


# ---------------------------------------------------------------------------
# 7: nearly round sets

# Frozen from the first full run (p = 1, h = 0.02 and 0.01, every eps), each
# observed range widened by about ten percent.
PERIMETER_BANDS = {2: (1.40, 1.60), 3: (3.70, 4.25), 4: (6.90, 8.00)}
WPP_BANDS = {2: (0.39, 0.56), 3: (0.60, 0.78), 4: (0.67, 0.94)}


@pytest.mark.slow
def test_criterion_7_nearly_round(tmp_path):
    cfg = tmp_path / "stab.json"
    cfg.write_text(json.dumps({"stability_anneal": False, "p": 1.0}))
    code = cli.main(["stability", "--config", str(cfg), "--out", str(tmp_path / "st")])
    doc = json.loads((tmp_path / "st" / "report.json").read_text())
    rows = [line.split(",") for line in (tmp_path / "st" / "stability.csv").read_text().splitlines()[1:]]
    outside = []
    for r in rows:
        h, eps, k, pr, wr = float(r[0]), float(r[1]), int(r[2]), float(r[5]), float(r[8])
        lo, hi = PERIMETER_BANDS[k]
        lw, hw = WPP_BANDS[k]
        if not (lo <= pr <= hi and lw <= wr <= hw):
            outside.append((h, eps, k, round(pr, 3), round(wr, 3)))
    change = doc["max_h_change"]
    ok = code == 0 and not outside and change <= 0.20
    record(7, ok, f"{len(rows)} (h, eps, k) cases inside the frozen bands: {not outside}; "
           f"ratio ranges P {doc['perimeter_ratio_range'][0]:.3f}..{doc['perimeter_ratio_range'][1]:.3f}, "
           f"W {doc['wpp_ratio_range'][0]:.3f}..{doc['wpp_ratio_range'][1]:.3f}; "
           f"largest change from h 0.02 to 0.01: {change:.1%}" + (f"; outside {outside}" if outside else ""))


# ---------------------------------------------------------------------------
# 8 and 9: annealing


@pytest.mark.slow
def test_criterion_8_small_lambda():
    spec = cli.ExperimentSpec(command="anneal", lam=0.01, p=1.0, alpha=1.0, h=0.05, steps=200_000, chains=4)
    params = spec.params()
    t0 = time.perf_counter()
    best, traces, k = anneal_chains(params, spec.anneal_config())
    dt = time.perf_counter() - t0
    rep = traces[k].best_report
    ball = evaluate(rasterize_ball(best.lattice, None, 1.0, True), params)
    fit = cli._disk_fit(best)
    ok = rep.n_components == 1 and fit <= 0.05 and rep.total <= 1.01 * ball.total and dt <= 600
    record(8, ok, f"{rep.n_components} component(s), disk-fit symmetric difference {fit:.2%}, "
           f"total {rep.total:.4f} vs ball {ball.total:.4f}; {dt:.0f} s for 4 chains")


def _ansatz_family(n, r):
    # n equal balls, each on its own fine lattice so the grid resolves them
    h = r / 12
    unit = rasterize_ball(Lattice.square(h, 1.3 * r), None, r, True)
    lat = unit.lattice
    ox, oy = lat.origin
    return [LatticeSet(Lattice(2, h, (ox + 3 * r * i, oy), lat.extent), unit.mask) for i in range(n)]


@pytest.mark.slow
def test_criterion_9_splitting():
    spec = cli.ExperimentSpec(command="anneal", lam=1e3, p=1.0, alpha=1.0, h=0.05, steps=200_000)
    params = spec.params()
    n, r, e_ansatz = nball_ansatz(params)
    fam = evaluate_family(_ansatz_family(n, r), params)
    ball = evaluate(rasterize_ball(Lattice.square(0.05, 1.2), None, 1.0, True), params)
    _, tr = anneal(params, spec.anneal_config("ball"))
    comps = tr.best_report.n_components
    final = len(connected_components(tr.best))
    ok = n > 1 and fam.total < ball.total and comps > 1 and final > 1
    record(9, ok, f"ansatz N={n}, evaluated family {fam.total:.2f} (closed form {e_ansatz:.2f}) "
           f"vs ball {ball.total:.2f}; anneal from the ball ends with {comps} components "
           f"at total {tr.best_report.total:.2f}")


# ---------------------------------------------------------------------------
# 11: determinism


def test_criterion_11_determinism(tmp_path):
    cfg = tmp_path / "stab.json"
    cfg.write_text(json.dumps({"h_list": [0.1, 0.05], "eps_list": [0.1], "k_list": [3], "stability_anneal": True,
                               "steps": 3000, "chains": 2, "h": 0.1}))
    commands = {
        "project": ["project", "--shape", "annulus:0.5:1", "--h", "0.05", "--p", "2"],
        "energy": ["energy", "--shape", "two_balls:0.5:0.2", "--h", "0.05", "--lambda", "7"],
        "anneal": ["anneal", "--h", "0.1", "--steps", "5000", "--chains", "2", "--lambda", "2", "--seed", "11"],
        "sweep": ["sweep"],
        "stability": ["stability", "--config", str(cfg)],
        "audit": ["audit", "--h", "0.05"],
    }
    diffs = []
    for name, args in commands.items():
        trees = []
        for rep in range(2):
            out = tmp_path / f"{name}{rep}"
            assert cli.main([*args, "--out", str(out)]) == 0
            trees.append({p.name: p.read_bytes() for p in sorted(out.iterdir())})
        if not trees[0] or trees[0] != trees[1]:
            diffs.append(name)
    record(11, not diffs, f"{len(commands)} commands re-run, byte-identical outputs: "
           + ("all" if not diffs else f"differ for {diffs}"))
