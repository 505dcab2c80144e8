import json

import numpy as np
import pytest

from helpers import write_cli_inputs
from padicnet import io as pio
from padicnet.cli import main


@pytest.fixture()
def files(tmp_path):
    return write_cli_inputs(tmp_path / "in")


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


def test_solve_zero_kernel(files, capsys, tmp_path):
    code, out, _ = run(capsys, "solve", files["zero.json"], "--state-csv", tmp_path / "s.csv")
    assert code == 0
    assert json.loads(out)["converged"] is True
    lines = (tmp_path / "s.csv").read_text().splitlines()
    assert lines[0] == "index,state,output"
    assert float(lines[1].split(",")[1]) == 0.4


def test_solve_unstable_exit_2(files, capsys):
    code, out, _ = run(capsys, "solve", files["hot.json"], "--max-iter", "50")
    assert code == 2
    assert json.loads(out)["stable"] is False


def test_solve_toy_matches_closed_form(files, capsys, tmp_path):
    code, _, _ = run(capsys, "solve", files["toy.json"], "--state-csv", tmp_path / "s.csv")
    assert code == 0
    state = np.loadtxt(tmp_path / "s.csv", delimiter=",", skiprows=1)[:, 1]
    # |b| <= 1 - a: middle branch b / (1 - a)
    assert np.max(np.abs(state - np.array([0.3, -0.2]) / 0.5)) <= 1e-8


def test_malformed_json(files, capsys):
    code, _, err = run(capsys, "solve", files["bad.json"])
    assert code == 1
    assert "line 2, column" in err


def test_usage_error_is_exit_1(capsys):
    with pytest.raises(SystemExit) as e:
        main(["solve"])
    assert e.value.code == 1


def test_recast(files, capsys, tmp_path):
    code, out, _ = run(capsys, "recast", files["layered.json"], "--out-network", tmp_path / "n.json",
                       "--out-map", tmp_path / "m.json")
    rep = json.loads(out)
    assert code == 0 and rep["max_deviation"] < 1e-12 and rep["counts_match"]
    assert rep["p"] == 5
    assert set(json.loads((tmp_path / "m.json").read_text())) == {"0", "1", "2"}
    code, out, _ = run(capsys, "recast", files["tied.json"])
    assert json.loads(out)["tied_blocks_identical"] is True


def test_recast_prime_too_small(files, capsys):
    code, _, err = run(capsys, "recast", files["wide.json"], "--p", "5")
    assert code == 1 and "smallest admissible prime is 7" in err


def test_edges(files, capsys, tmp_path):
    out_pgm = tmp_path / "flat_out.pgm"
    code, _, _ = run(capsys, "edges", files["flat.pgm"], out_pgm, "--a", "0.5", "--gain", "2")
    assert code == 0 and np.all(pio.read_pgm(out_pgm) == 128)
    out_pgm = tmp_path / "step_out.pgm"
    code, out, _ = run(capsys, "edges", files["step.pgm"], out_pgm, "--a", "1", "--gain", "2")
    img = pio.read_pgm(out_pgm)
    assert code == 0 and np.all(img[1:-1, 3] == 255) and np.all(img[1:-1, 4] == 0)
    code, _, err = run(capsys, "edges", files["step.pgm"], out_pgm, "--a", "1.5")
    assert code == 1 and "states" in err


def test_states(capsys, tmp_path):
    code, out, _ = run(capsys, "states", "--a", "2", "--drive", "0", "--csv", tmp_path / "s.csv",
                       "--dot", tmp_path / "h.dot")
    rep = json.loads(out)
    assert code == 0 and rep["count"] == 9 and rep["minimal"] == 4
    assert (tmp_path / "s.csv").read_text().splitlines()[0] == "state,index,label,value"
    assert (tmp_path / "h.dot").read_text().count("->") == 12
    code, out, _ = run(capsys, "states", "--a", "2", "--level", "3", "--cap", "100",
                       "--dot", tmp_path / "none.dot")
    rep = json.loads(out)
    assert rep["count"] == 3**8 and rep["sampled"] and not (tmp_path / "none.dot").exists()
    code, _, _ = run(capsys, "states", "--a", "0.5")
    assert code == 1


def test_sweep(files, capsys, tmp_path):
    code, out, _ = run(capsys, "sweep", files["toy.json"], "--param", "a", "--from", "0.5",
                       "--to", "1.5", "--steps", "11", "--out", tmp_path / "s.csv")
    assert code == 0 and json.loads(out)["first_unstable"] == 1.0
    code, out, _ = run(capsys, "sweep", files["toy.json"], "--from", "0.7", "--to", "0.7")
    rows = out.splitlines()
    assert rows[0] == "param,q,stable,converged,iterations,residual,state_norm" and len(rows) == 2
    code, out, _ = run(capsys, "sweep", files["hot.json"], "--param", "W_scale", "--from", "0",
                       "--to", "1", "--steps", "6")
    q = [float(r.split(",")[1]) for r in out.splitlines()[1:]]
    assert q == sorted(q)


def test_prior(files, capsys, tmp_path):
    code, out, _ = run(capsys, "prior", files["zero_priors.json"], files["inputs.json"],
                       "--N", "1000", "--out-dir", tmp_path / "z")
    assert code == 0
    assert np.array_equal(pio.read_matrix_csv(tmp_path / "z" / "output.csv"), [[1.0, 0.5], [0.5, 2.0]])
    code, out, _ = run(capsys, "prior", files["priors.json"], files["inputs.json"],
                       "--N", "20000", "--out-dir", tmp_path / "p")
    assert json.loads(out)["frac_within_3se"] >= 0.95
    assert json.loads((tmp_path / "p" / "report.json").read_text())["N"] == 20000

