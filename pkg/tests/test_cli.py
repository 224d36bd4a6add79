import copy
import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from reapmpc.cli import main
from reapmpc.config import load_config, parse_config
from reapmpc.errors import ConfigurationError

CONFIGS = Path(__file__).resolve().parents[1] / "configs"

MSG_2 = ("The pair (A,B) is not controllable. REAP-T cannot proceed with the "
         "specified system.\n")
MSG_4 = ("The pair (C, A) is not observable. Please use the Lyapunov-based method "
         "to implement the terminal constraint set.\n")
MSG_5 = ("The specified prediction horizon length is insufficient for implementing "
         "the Lyapunov-based method. Please increase the prediction horizon length.\n")
MSG_6 = ("The specified initial condition does not belong to the region of attraction. "
         "REAP-T cannot proceed.\n")


def di_doc():
    return json.loads((CONFIGS / "double_integrator.json").read_text())


def write(tmp_path, doc, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(doc))
    return str(p)


def crafted(kind):
    """Configs that trip one validation stage each."""
    d = di_doc()
    if kind == "uncontrollable":
        d["system"]["A"] = [[1, 0], [0, 1]]
        d["system"]["B"] = [[1], [0]]
    elif kind == "target":
        d["target"]["value"] = [5.0]
    elif kind == "unobservable":
        d["system"]["A"] = [[0.5, 0], [0, 0.6]]
        d["system"]["B"] = [[1], [1]]
        d["target"]["value"] = [0.0]
        d["terminal"] = {"method": "prediction"}
    elif kind == "horizon":
        d["horizon"] = 10
        d["terminal"] = {"method": "lyapunov"}
    elif kind == "roa":
        d["simulation"]["x0"] = [2.5, 0.0]
    elif kind == "omega_cap":
        th = 0.3
        a = 0.9999999
        d["system"]["A"] = [[a * np.cos(th), -a * np.sin(th)], [a * np.sin(th), a * np.cos(th)]]
        d["system"]["B"] = [[0], [1]]
        d["constraints"] = {"x_lower": [-1, -1], "x_upper": [1, 1],
                            "u_lower": [-1], "u_upper": [1]}
        d["weights"]["Qx"] = [[0, 0], [0, 0]]
        d["weights"]["Qu"] = [[1]]
        d["horizon"] = 5
        d["target"]["value"] = [0.0]
    return d


def run_check(tmp_path, doc, capsys, *extra):
    code = main(["check", write(tmp_path, doc), *extra])
    out = capsys.readouterr()
    return code, out.out, out.err


# -- config parsing ---------------------------------------------------------------

def test_load_shipped_configs():
    cfg = load_config(CONFIGS / "drone_bebop2.json")
    assert cfg.n == 6 and cfg.p == 3 and cfg.user_supplied
    assert cfg.model().dt == pytest.approx(0.2)
    di = load_config(CONFIGS / "double_integrator.json")
    assert np.array_equal(di.Qx, np.diag([1, 0.1]))
    assert di.budget == 50 and di.init_iterations == 1000


def test_missing_field_named():
    d = di_doc()
    del d["weights"]["Qu"]
    with pytest.raises(ConfigurationError, match=r"^weights\.Qu: missing required field$"):
        parse_config(d)


def test_dimension_mismatch_named():
    d = di_doc()
    d["constraints"]["x_upper"] = [2.0]
    with pytest.raises(ConfigurationError, match=r"constraints\.x_upper"):
        parse_config(d)


def test_inf_strings():
    d = di_doc()
    d["constraints"]["x_upper"] = ["Inf", "+inf"]
    d["constraints"]["x_lower"] = ["-Inf", -1]
    cfg = parse_config(d)
    assert np.all(np.isinf(cfg.X.upper)) and cfg.X.lower[0] == -np.inf
    d["weights"]["Qu"] = [["Inf"]]
    with pytest.raises(ConfigurationError):
        parse_config(d)


def test_flat_input_matrix_and_defaults():
    d = di_doc()
    d["system"]["B"] = [0.005, 0.1]
    del d["system"]["D"]
    del d["terminal"]
    del d["constraints"]["u_lower"]
    cfg = parse_config(d)
    assert cfg.B.shape == (2, 1) and np.array_equal(cfg.D, [[0.0]])
    assert cfg.terminal_method is None and cfg.U.lower[0] == -np.inf


def test_invalid_json_location(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text('{\n  "system": [1,,]\n}')
    with pytest.raises(ConfigurationError, match=r"bad\.json:2:\d+: invalid JSON"):
        load_config(p)


# -- diagnostics and exit codes -------------------------------------------------

@pytest.mark.parametrize("kind, code, msg", [
    ("uncontrollable", 2, MSG_2),
    ("unobservable", 4, MSG_4),
    ("horizon", 5, MSG_5),
    ("roa", 6, MSG_6),
])
def test_golden_diagnostics(tmp_path, capsys, kind, code, msg):
    rc, out, err = run_check(tmp_path, crafted(kind), capsys)
    assert rc == code
    assert err == msg
    assert out == ""


def test_target_error(tmp_path, capsys):
    rc, _, err = run_check(tmp_path, crafted("target"), capsys)
    assert rc == 3 and "too close" in err


def test_omega_cap_exit(tmp_path, capsys):
    rc, _, err = run_check(tmp_path, crafted("omega_cap"), capsys)
    assert rc == 7 and "phi = 100" in err


def test_unobservable_defaults_to_lyapunov(tmp_path, capsys):
    d = crafted("unobservable")
    del d["terminal"]
    d["horizon"] = 20
    rc, out, _ = run_check(tmp_path, d, capsys)
    assert rc == 0
    assert "Terminal method: lyapunov (default)" in out


def test_usage_errors(tmp_path, capsys):
    assert main([]) == 64
    assert main(["run", str(CONFIGS / "double_integrator.json"), "--budget", "-1"]) == 64
    assert main(["run", str(CONFIGS / "double_integrator.json"), "--budget", "1",
                 "--deadline-ms", "5"]) == 64
    assert main(["sweep", str(CONFIGS / "double_integrator.json")]) == 64
    d = di_doc()
    del d["weights"]["Qu"]
    assert main(["check", write(tmp_path, d)]) == 64
    assert main(["check", str(tmp_path / "missing.json")]) == 64
    capsys.readouterr()


def test_check_report_and_no_side_effects(tmp_path, capsys, monkeypatch):
    monkeypatch.chdir(tmp_path)
    rc = main(["check", str(CONFIGS / "double_integrator.json")])
    out = capsys.readouterr().out
    assert rc == 0
    assert out.startswith("State Constraints:\nState Constraint 1: x1 <= 2\n")
    assert "Input Constraint 2: u1 >= -1" in out
    assert "Terminal method: prediction\n" in out and "omega* = 3" in out
    assert list(tmp_path.iterdir()) == []


def test_check_placeholder_note(capsys):
    assert main(["check", str(CONFIGS / "drone_bebop2.json")]) == 0
    assert "placeholders" in capsys.readouterr().out


def test_check_lyapunov_reports_gamma(capsys):
    assert main(["check", str(CONFIGS / "double_integrator.json"), "--terminal",
                 "lyapunov"]) == 0
    assert "gamma = " in capsys.readouterr().out


# -- run / sweep ----------------------------------------------------------------

def _trace(path):
    rows = path.read_text().splitlines()
    header = rows[0].split(",")
    data = np.array([[float(v) for v in r.split(",")] for r in rows[1:]])
    return header, data


def test_run_budget_one(tmp_path, capsys):
    out = tmp_path / "o"
    rc = main(["run", str(CONFIGS / "double_integrator.json"), "--budget", "1",
               "--steps", "50", "--out", str(out)])
    assert rc == 0
    header, data = _trace(out / "trace.csv")
    assert data.shape[0] == 50
    assert np.all(data[:, header.index("iterations")] == 1)
    assert "wrote" in capsys.readouterr().out


def test_run_deadline(tmp_path, capsys):
    out = tmp_path / "o"
    rc = main(["run", str(CONFIGS / "double_integrator.json"), "--deadline-ms", "2",
               "--steps", "10", "--out", str(out)])
    assert rc == 0
    header, data = _trace(out / "trace.csv")
    assert np.all(data[:, header.index("iterations")] > 0)
    capsys.readouterr()


def test_sweep_writes_feasible_runs(tmp_path, capsys):
    root = tmp_path / "sw"
    rc = main(["sweep", str(CONFIGS / "double_integrator.json"), "--budgets", "1,50",
               "--steps", "80", "--out", str(root)])
    assert rc == 0
    for b in (1, 50):
        header, data = _trace(root / f"budget_{b}" / "trace.csv")
        x = data[:, [header.index("x_1"), header.index("x_2")]]
        u = data[:, header.index("u_1")]
        assert np.all(np.abs(x) <= [2, 1]) and np.all(np.abs(u) <= 1)
        assert np.all(data[:, header.index("iterations")] == b)
    assert "budget" in capsys.readouterr().out


def test_module_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "reapmpc", "check",
                          str(CONFIGS / "double_integrator.json")],
                         capture_output=True, text=True, cwd=tmp_path)
    assert res.returncode == 0 and "omega* = 3" in res.stdout


def test_run_deterministic(tmp_path, capsys):
    for name in ("a", "b"):
        assert main(["run", str(CONFIGS / "double_integrator.json"), "--steps", "60",
                     "--budget", "5", "--out", str(tmp_path / name)]) == 0
    capsys.readouterr()
    assert ((tmp_path / "a" / "trace.csv").read_bytes()
            == (tmp_path / "b" / "trace.csv").read_bytes())


def test_doc_not_mutated():
    d = di_doc()
    before = copy.deepcopy(d)
    parse_config(d)
    assert d == before
