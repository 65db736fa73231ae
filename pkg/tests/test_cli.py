import csv
import io
import json

import pytest

from relaxmm.cli import COLUMNS, EXIT_CONFIG, EXIT_MISMATCH, EXIT_OK, main


def _rows(path):
    return list(csv.DictReader(open(path)))


def test_solve_row(tmp_path):
    out = tmp_path / "r.csv"
    assert main(["solve", "--case", "robustness", "--grid", "2", "--lc", "1",
                 "--out", str(out)]) == EXIT_OK
    rows = _rows(out)
    assert list(rows[0])[:len(COLUMNS)] == list(COLUMNS)
    assert float(rows[0]["rel_hcurl_zeta"]) == pytest.approx(0.52169, rel=1e-2)
    man = json.loads((tmp_path / "r.csv.manifest.json").read_text())
    assert man["config"]["case"] == "robustness" and man["version"]


def test_tent_solve(tmp_path):
    out = tmp_path / "t.csv"
    assert main(["solve", "--case", "tent", "--grid", "8", "--out", str(out)]) == EXIT_OK
    assert float(_rows(out)[0]["l2_u"]) <= 1e-10


def test_config_errors(capsys):
    assert main(["solve", "--case", "robustness", "--formulation", "mixed-hybrid",
                 "--grid", "2", "--lc", "0"]) == EXIT_CONFIG
    assert main(["solve", "--case", "robustness", "--grid", "2", "--lc", "inf"]) == EXIT_CONFIG
    assert main(["convergence", "--case", "kink", "--grid", "4"]) == EXIT_CONFIG
    assert main(["solve", "--case", "nope", "--grid", "2"]) == EXIT_CONFIG
    assert main(["solve", "--case", "kink"]) == EXIT_CONFIG


def test_convergence_rates(tmp_path):
    out = tmp_path / "c.csv"
    assert main(["convergence", "--case", "kink", "--grid", "2,4,8,16",
                 "--out", str(out)]) == EXIT_OK
    rows = _rows(out)
    assert len(rows) == 4
    assert float(rows[-1]["rate_hcurl_zeta"]) == pytest.approx(1.0, abs=0.1)


def test_lc_sweep_inf_and_rates(tmp_path):
    out = tmp_path / "l.csv"
    assert main(["lc-sweep", "--case", "robustness_limit", "--formulation", "mixed-hybrid",
                 "--order", "2", "--grid", "4", "--lc", "10,100,inf", "--load-quad", "3",
                 "--out", str(out)]) == EXIT_OK
    rows = _rows(out)
    assert rows[-1]["lc"] == "inf"
    assert float(rows[1]["lc_rate_rel_hcurl_zeta"]) == pytest.approx(2.0, abs=0.1)


def test_energy_sweep_single_lc(tmp_path):
    out = tmp_path / "e.csv"
    assert main(["energy-sweep", "--case", "coupling", "--grid", "4", "--lc", "10",
                 "--out", str(out)]) == EXIT_OK
    rows = _rows(out)
    assert [r["formulation"] for r in rows] == ["primal-hybrid", "full-gradient"]
    assert all(r["energy_ratio"] == "nan" for r in rows)


def test_mesh_gen_and_reuse(tmp_path):
    mesh = tmp_path / "m.json"
    assert main(["mesh-gen", "--case", "tent", "--grid", "4", "--perturb", "0.2",
                 "--seed", "3", "--out", str(mesh)]) == EXIT_OK
    out = tmp_path / "s.csv"
    assert main(["convergence", "--case", "tent", "--mesh", str(mesh), "--refine", "1",
                 "--out", str(out)]) == EXIT_OK
    assert all(float(r["l2_u"]) < 1e-10 for r in _rows(out))


def test_replay_bitwise(tmp_path):
    out = tmp_path / "r.csv"
    args = ["convergence", "--case", "bench_rotation", "--grid", "2,4", "--perturb", "0.2",
            "--seed", "5", "--no-timing", "--out", str(out)]
    assert main(args) == EXIT_OK
    first = out.read_bytes()
    out.unlink()
    assert main(["replay", str(tmp_path / "r.csv.manifest.json")]) == EXIT_OK
    assert out.read_bytes() == first


def test_golden(tmp_path):
    good = tmp_path / "g.json"
    good.write_text(json.dumps({"tolerances": {"rel_hcurl_zeta": 0.01},
                                "rows": [{"nx": 2, "rel_hcurl_zeta": 0.52169}]}))
    bad = tmp_path / "b.json"
    bad.write_text(json.dumps({"rows": [{"nx": 2, "rel_hcurl_zeta": 0.4}]}))
    base = ["solve", "--case", "robustness", "--grid", "2", "--out", str(tmp_path / "o.csv")]
    assert main(base + ["--golden", str(good)]) == EXIT_OK
    assert main(base + ["--golden", str(bad)]) == EXIT_MISMATCH


def test_residual_check(capsys):
    assert main(["residual-check", "--case", "kink"]) == EXIT_OK
    assert "pass" in capsys.readouterr().out
