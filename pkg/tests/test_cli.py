import csv
import json

import pytest
import yaml

from memm.cli import main
from memm.modelfile import read_config


def run(tmp_path, *args):
    out = tmp_path / "out"
    code = main(list(args) + ["--out", str(out)])
    return code, out


def test_solve_flat_reports_entropy(tmp_path):
    code, out = run(tmp_path, "solve", "--preset", "bs_flat")
    assert code == 0
    report = json.loads((out / "report.json").read_text())
    assert abs(report["c"] - 0.08) <= 1e-8
    header = (out / "surface.csv").read_text().splitlines()[0]
    assert header == "t,y,u,phi_hat,sigma_L,g"
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["exit_status"] == 0 and manifest["model"]["family"] == "constant"
    assert "numpy" in manifest["versions"]


def test_solve_is_reproducible(tmp_path):
    main(["solve", "--preset", "correlated", "--grid", "17x9", "--out", str(tmp_path / "a")])
    main(["solve", "--preset", "correlated", "--grid", "17x9", "--out", str(tmp_path / "b")])
    assert (tmp_path / "a/surface.csv").read_bytes() == (tmp_path / "b/surface.csv").read_bytes()


def test_missing_model_file(tmp_path, capsys):
    code, _ = run(tmp_path, "solve", "--model", str(tmp_path / "absent.yaml"))
    assert code == 2
    assert "absent.yaml" in capsys.readouterr().err


def test_orthogonal_writes_v_surface(tmp_path):
    code, out = run(tmp_path, "solve", "--preset", "orthogonal")
    assert code == 0
    report = json.loads((out / "report.json").read_text())
    assert report["u_minus_log_v_max_abs"] <= 1e-6
    assert "exp_u_minus_v_max_abs" in report
    assert (out / "v_surface.csv").read_text().startswith("t,y,v")


def test_validate_bad_model(tmp_path):
    path = tmp_path / "bad.yaml"
    path.write_text(yaml.safe_dump({"family": "constant", "V0": 0.5, "domain": [0, 1],
                                    "eta_M": 0.1, "sigma_M": 0.2, "W_M": -1.5,
                                    "atoms": [[1.0, 1.0]]}))
    code, out = run(tmp_path, "validate", "--model", str(path))
    assert code == 2
    assert json.loads((out / "validation.json").read_text())["passed"] is False


def test_validate_good_preset(tmp_path):
    assert run(tmp_path, "validate", "--preset", "correlated")[0] == 0


def test_nonconvergence_exit(tmp_path):
    config, _ = read_config(preset="correlated")
    config["solver"] = {"max_sweeps": 2}
    path = tmp_path / "m.yaml"
    path.write_text(yaml.safe_dump(config))
    code, out = run(tmp_path, "solve", "--model", str(path))
    assert code == 3
    assert json.loads((out / "report.json").read_text())["converged"] is False


def test_verify_flat(tmp_path):
    code, out = run(tmp_path, "verify", "--preset", "bs_flat", "--paths", "100000",
                    "--steps", "100")
    assert code == 0
    stats = json.loads((out / "verify.json").read_text())
    assert abs(stats["entropy"]["target"] - 0.08) <= 1e-8
    assert stats["failed"] == []


def test_verify_zero_risk(tmp_path):
    code, out = run(tmp_path, "verify", "--preset", "zero_risk", "--paths", "4000",
                    "--steps", "50")
    assert code == 0
    stats = json.loads((out / "verify.json").read_text())
    assert stats["density_mean"]["std_error"] == 0.0


def test_verify_negated_strategy_fails(tmp_path, capsys):
    solved = tmp_path / "solved"
    assert main(["solve", "--preset", "correlated", "--out", str(solved)]) == 0
    rows = list(csv.reader(open(solved / "surface.csv")))
    for r in rows[1:]:
        r[3] = repr(-float(r[3]))
    with open(solved / "surface.csv", "w", newline="") as fh:
        csv.writer(fh).writerows(rows)
    code, out = run(tmp_path, "verify", "--preset", "correlated", "--surface", str(solved),
                    "--paths", "20000", "--steps", "100")
    assert code == 4
    assert "martingale_gain" in capsys.readouterr().err


def test_simulate_dump(tmp_path):
    code, out = run(tmp_path, "simulate", "--preset", "correlated", "--measure", "Qstar",
                    "--paths", "100", "--steps", "10", "--dump-paths", "2")
    assert code == 0
    lines = (out / "paths.csv").read_text().splitlines()
    assert lines[0] == "path,step,t,V,S,logZ,N_0" and len(lines) == 1 + 2 * 11


def test_bns_check(tmp_path):
    assert run(tmp_path, "bns-check", "--preset", "bns")[0] == 0
    config, _ = read_config(preset="bns")
    config["exponential_tail"]["b"] = 0.2
    path = tmp_path / "heavy.yaml"
    path.write_text(yaml.safe_dump(config))
    code, out = run(tmp_path, "bns-check", "--model", str(path))
    assert code == 2
    assert json.loads((out / "bns_check.json").read_text())["tail_ok"] is False


def test_bns_check_needs_bns_family(tmp_path):
    assert run(tmp_path, "bns-check", "--preset", "bs_flat")[0] == 2


def test_bad_grid_argument(tmp_path):
    with pytest.raises(SystemExit):
        main(["solve", "--preset", "bs_flat", "--grid", "64by64", "--out", str(tmp_path)])


def test_requires_model(tmp_path):
    assert run(tmp_path, "solve")[0] == 2
