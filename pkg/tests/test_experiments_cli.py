import json

import pytest

from wproj import experiments_cli as cli
from wproj.analytic_ball import ball_energy
from wproj.lattice_geometry import Lattice, rasterize_ball, save_set


def run(tmp_path, name, *args):
    out = tmp_path / name
    code = cli.main([*args, "--out", str(out)])
    return code, out


def files(out):
    return {p.relative_to(out).as_posix(): p.read_bytes() for p in sorted(out.rglob("*")) if p.is_file()}


QUICK = {
    "project": ["project", "--shape", "ball:1", "--h", "0.1"],
    "energy": ["energy", "--shape", "two_balls:0.5:1", "--h", "0.1", "--lambda", "3"],
    "anneal": ["anneal", "--h", "0.1", "--steps", "3000", "--chains", "2", "--lambda", "1", "--seed", "5"],
    "sweep": ["sweep", "--lambdas", "1,10,100,1000,10000"],
}


@pytest.mark.parametrize("cmd", sorted(QUICK))
def test_reruns_are_byte_identical(tmp_path, cmd):
    c1, a = run(tmp_path, "a", *QUICK[cmd])
    c2, b = run(tmp_path, "b", *QUICK[cmd])
    assert c1 == c2 == 0
    fa, fb = files(a), files(b)
    assert fa and fa == fb


def test_stability_small_grid(tmp_path):
    cfg = tmp_path / "stab.json"
    cfg.write_text(json.dumps({"h_list": [0.1, 0.05], "eps_list": [0.1], "k_list": [2], "stability_anneal": False}))
    code, out = run(tmp_path, "st", "stability", "--config", str(cfg))
    assert code == 0
    doc = json.loads((out / "report.json").read_text())
    assert len(doc["h_refinement"]) == 1
    assert doc["perimeter_ratio_range"][0] == pytest.approx(1.5, rel=0.05)
    assert doc["transition_lambda_ansatz"] > 0
    rows = (out / "stability.csv").read_text().splitlines()
    assert len(rows) == 3


def test_project_p2_matches_ball(tmp_path):
    code, out = run(tmp_path, "pj", "project", "--shape", "ball:1", "--h", "0.05", "--p", "2", "--no-svg")
    assert code == 0
    rep = json.loads((out / "report.json").read_text())
    assert rep["wpp"] == pytest.approx(ball_energy(2, 2.0), rel=0.03)
    assert rep["duality"]["integer_gap"] == 0
    assert rep["ball"]["mass_fraction_near_annulus"] >= 0.95
    assert not (out / "projection.svg").exists()


def test_config_file_and_flag_override(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"shape": "square:1", "h": 0.2, "lambda": 9.0, "p": 2.0}))
    code, out = run(tmp_path, "e", "energy", "--config", str(cfg), "--lambda", "4")
    assert code == 0
    doc = json.loads((out / "result.json").read_text())
    assert doc["params"]["lam"] == 4.0
    assert doc["params"]["p"] == 2.0
    assert doc["h"] == 0.2


def test_set_file_shape(tmp_path):
    E = rasterize_ball(Lattice.square(0.1, 1.2), None, 0.7)
    save_set(E, tmp_path / "s.json")
    code, out = run(tmp_path, "f", "energy", "--shape", f"file:{tmp_path / 's.json'}")
    assert code == 0
    assert json.loads((out / "result.json").read_text())["energy"]["n_components"] == 1


@pytest.mark.parametrize("args,code", [
    (["project", "--shape", "empty"], cli.EXIT_CONFIG),
    (["project", "--shape", "file:/nonexistent/set.json"], cli.EXIT_CONFIG),
    (["project", "--h", "-1"], cli.EXIT_CONFIG),
    (["sweep", "--lambdas", "1,2,3"], cli.EXIT_CONFIG),
    (["project", "--config", "/nonexistent.json"], cli.EXIT_CONFIG),
    (["anneal", "--perimeter", "marching-contour", "--steps", "10", "--h", "0.2"], cli.EXIT_CONFIG),
])
def test_config_errors_exit_one(tmp_path, args, code):
    assert run(tmp_path, "x", *args)[0] == code


def test_bad_config_keys(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"colour": "red"}))
    assert run(tmp_path, "x", "project", "--config", str(cfg))[0] == cli.EXIT_CONFIG
    cfg.write_text("{not json")
    assert run(tmp_path, "x", "project", "--config", str(cfg))[0] == cli.EXIT_CONFIG


def test_solver_error_exit_two(tmp_path):
    # the entropic solver refuses instances above its size cap
    code, _ = run(tmp_path, "x", "project", "--solver", "entropic", "--h", "0.02")
    assert code == cli.EXIT_SOLVER


def test_unwritable_output_exit_three(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("")
    code = cli.main(["project", "--h", "0.2", "--out", str(blocker / "sub")])
    assert code == cli.EXIT_IO


def test_invariant_violation_exit_four(tmp_path, monkeypatch):
    monkeypatch.setitem(cli.AUDIT_FLOORS, ("battery-v1", 0.1, 1.0, "crofton"), 2.0)
    code, out = run(tmp_path, "au", "audit", "--h", "0.1")
    assert code == cli.EXIT_INVARIANT
    doc = json.loads((out / "report.json").read_text())
    assert any("interpolation floor" in f for f in doc["failures"])
