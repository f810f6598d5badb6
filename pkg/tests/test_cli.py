import csv
import json

import numpy as np
import pytest

from sierpinski_gk import cli


def run(argv, capsys):
    code = cli.main(argv)
    out = capsys.readouterr()
    return code, out.out, out.err


def test_gasket_dump(tmp_path, capsys):
    code, out, _ = run(["gasket", "dump", "--level", "2", "--out", str(tmp_path)], capsys)
    assert code == 0
    assert len((tmp_path / "edges_2.txt").read_text().splitlines()) == 27
    assert len((tmp_path / "sites_2.txt").read_text().splitlines()) == 15


def test_gasket_shapes(capsys):
    code, out, _ = run(["gasket", "shapes", "--level", "4", "--L0", "1"], capsys)
    rows = list(csv.DictReader(out.splitlines()))
    assert code == 0 and len(rows) == 3 and {r["ratio"] for r in rows} == {"1/3"}


def test_rates_phi(tmp_path, capsys):
    out = tmp_path / "phi.csv"
    assert run(["rates", "phi", "--family", "dfl", "--gamma", "0.4", "--grid", "11", "--out", str(out)], capsys)[0] == 0
    data = np.loadtxt(out, delimiter=",", skiprows=1)
    s = 2 * data[:, 0] - 1
    assert np.allclose(data[:, 1], -0.16 * s**3 - 0.2 * s, atol=1e-12)


def test_rates_table_family(tmp_path, capsys):
    from sierpinski_gk import gasket as G
    from sierpinski_gk.rates import code_to_bits

    cat = G.shape_catalog(G.build(4), 1)
    doc = {"L0": 1, **{s.key: {code_to_bits(c, 5): 2.0 for c in range(32)} for s in cat.shapes}}
    path = tmp_path / "t.json"
    path.write_text(json.dumps(doc))
    code, out, _ = run(["rates", "phi", "--family", "table", "--table", str(path), "--grid", "3"], capsys)
    assert code == 0
    assert out.splitlines()[1:] == ["0.0,2.0", "0.5,0.0", "1.0,-2.0"]


def test_rates_validate(capsys):
    code, out, _ = run(["rates", "validate", "--family", "dfl", "--gamma", "0.9"], capsys)
    assert json.loads(out)["max_rate"] == pytest.approx(3.61)


def test_calculus_commands(tmp_path, capsys):
    code, out, _ = run(["calculus", "resist", "--level", "0", "--from", "0", "--to", "1"], capsys)
    assert float(out) == pytest.approx(2 / 3)
    src = tmp_path / "v.csv"
    src.write_text("site_id,value\n0,1\n1,0\n2,0\n")
    code, out, _ = run(["calculus", "extend", "--input", str(src), "--to-level", "1"], capsys)
    vals = [float(line.split(",")[1]) for line in out.splitlines()[1:]]
    assert sorted(vals[3:]) == pytest.approx([0.2, 0.4, 0.4])


def test_library_errors_exit_2(capsys):
    code, _, err = run(["calculus", "resist", "--level", "3", "--interior", "--from", "1", "--to", "2"], capsys)
    assert code == 2 and "error" in err


def test_solve_and_plot(tmp_path, capsys):
    sol = tmp_path / "sol.csv"
    argv = ["solve", "--level", "2", "--bc", "robin", "--rhoB", "0.8,0.2,0.5", "--r", "1", "--family", "dfl",
            "--gamma", "0.4", "--rho0", "const:0.3", "--T", "0.05", "--samples", "0.025,0.05", "--out", str(sol)]
    assert run(argv, capsys)[0] == 0
    rows = list(csv.reader(sol.open()))
    assert rows[0] == ["t", "site_id", "rho"] and len(rows) == 1 + 3 * 15
    svg = tmp_path / "sol.svg"
    assert run(["plot", "solution", str(sol), "--out", str(svg)], capsys)[0] == 0
    assert svg.read_text().lstrip().startswith("<?xml")


def test_simulate(tmp_path, capsys):
    out = tmp_path / "sim"
    argv = ["simulate", "--level", "3", "--T", "0.05", "--samples", "0,0.05", "--replicas", "2", "--seed", "4",
            "--family", "ising", "--beta", "0.3", "--out", str(out)]
    assert run(argv, capsys)[0] == 0
    man = json.loads((out / "manifest.json").read_text())
    assert man["seeds"] == [4, 5] and man["params"]["family"] == "ising"
    emp = list(csv.DictReader((out / "empirical.csv").open()))
    assert len(emp) == 2 * 2 * 6
    assert (out / "blocks.csv").exists() and (out / "boundary.csv").exists()


def test_experiment_check_exit_code(tmp_path, capsys):
    cfg = {"kind": "converge", "levels": [2, 3], "replicas": 2, "T": 0.05, "sample_times": [0.05], "seed": 1}
    path = tmp_path / "c.json"
    path.write_text(json.dumps(cfg))
    code, out, _ = run(["experiment", str(path), "--out", str(tmp_path / "o"), "--check"], capsys)
    assert ("PASS" in out) == (code == 0)
    assert (tmp_path / "o" / "errors.csv").exists()
    svg = tmp_path / "e.svg"
    assert run(["plot", "errors", str(tmp_path / "o" / "errors.csv"), "--out", str(svg)], capsys)[0] == 0
    assert svg.exists()
