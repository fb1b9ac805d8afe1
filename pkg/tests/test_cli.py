import json
import os
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from ergodic_utility import catalog
from ergodic_utility.cli import main
from ergodic_utility.dist import validate_density, wealth_density
from ergodic_utility.functions import BrownianDrift
from ergodic_utility.sde import SimConfig, simulate_at

GOLDEN = Path(__file__).parent / "golden"


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def test_derive_dynamic_log(capsys):
    code, out, _ = run(capsys, "derive-dynamic", "--utility", "log", "--a_u", "0.05", "--b_u", "0.2")
    assert code == 0
    assert "a_x(x) = 0.07*x" in out
    assert "b_x(x) = 0.2*x" in out


def test_derive_dynamic_linear(capsys):
    code, out, _ = run(capsys, "derive-dynamic", "--utility", "linear", "--a_u", "0.3", "--b_u", "1.5")
    assert code == 0
    assert "a_x(x) = 0.3\n" in out and "b_x(x) = 1.5\n" in out


def test_derive_dynamic_sqrt(capsys):
    code, out, _ = run(capsys, "derive-dynamic", "--utility", "sqrt", "--a_u", "1", "--b_u", "1")
    assert code == 0
    assert "a_x(x) = 2*x^(1/2) + 1" in out
    assert "b_x(x) = 2*x^(1/2)" in out


def test_derive_dynamic_from_expression(capsys):
    code, out, _ = run(capsys, "derive-dynamic", "--utility", "expr:x^3 + x", "--format", "json")
    assert code == 0
    doc = json.loads(out)
    assert doc["diffusion"] == "1/(3*x^2 + 1)"


def test_check_exp_test(capsys):
    code, out, _ = run(capsys, "check", "--dynamic", "exp_test")
    assert code == 0
    doc = json.loads(out)
    assert doc["consistent"] is True
    assert doc["ratio"] == pytest.approx(0.5, abs=1e-8)


def test_check_inconsistent(capsys):
    code, out, _ = run(capsys, "check", "--dynamic", "expr:1;x", "--domain", "0,inf", "--x0", "1")
    assert code == 0
    assert json.loads(out)["consistent"] is False


def test_derive_utility_table(capsys):
    code, out, _ = run(capsys, "derive-utility", "--dynamic", "exp_test", "--x_ref", "0", "--u_ref", "1",
                       "--grid", "16")
    assert code == 0
    rows = np.array([[float(v) for v in line.split(",")] for line in out.splitlines()[1:]])
    assert out.startswith("x,u,u_prime\n") and rows.shape == (16, 3)
    assert np.allclose(rows[:, 1], np.exp(rows[:, 0]), rtol=1e-9)
    assert np.allclose(rows[:, 2], np.exp(rows[:, 0]), rtol=1e-12)


def test_derive_utility_of_inconsistent_dynamic(capsys):
    code, _, err = run(capsys, "derive-utility", "--dynamic", "expr:1;x", "--domain", "0,inf", "--x0", "1")
    assert code == 3
    assert "inconsistent" in err


def test_simulate_transform(capsys):
    code, out, _ = run(capsys, "simulate", "--dynamic", "exp_test", "--transform", "exp_test_u",
                       "--horizon", "1", "--dt", "0.1", "--seed", "3")
    assert code == 0
    lines = out.splitlines()
    assert lines[0] == "t,value" and len(lines) == 12
    assert float(lines[1].split(",")[1]) == pytest.approx(np.e)


def test_growth_modes(capsys):
    for mode in ("time", "ensemble", "check"):
        code, out, _ = run(capsys, "growth", "--dynamic", "exp_test", "--utility", "exp_test_u", "--x0", "3",
                           "--mode", mode, "--horizon", "50", "--paths", "500", "--seed", "17")
        assert code == 0
        doc = json.loads(out)
        assert doc["seed"] == 17 and doc["mode"] == mode


def test_decide_identical_specs_exit_4(capsys):
    code, out, _ = run(capsys, "decide", "--dynamic", "gbm:mu=0.05,sigma=0.2", "--dynamic",
                       "gbm:mu=0.05,sigma=0.2", "--utility", "log", "--paths", "500", "--seed", "5")
    assert code == 4
    doc = json.loads(out)
    assert doc["chosen"] is None and doc["outcome"] == "no_decision"
    assert doc["seeds"]["seed"] == 5


def test_decide_picks_faster(capsys):
    code, out, _ = run(capsys, "decide", "--dynamic", "gbm:mu=0.055,sigma=0.1", "--dynamic",
                       "gbm:mu=0.015,sigma=0.1", "--utility", "log", "--paths", "500")
    assert code == 0
    assert json.loads(out)["chosen"] == "gbm:mu=0.055,sigma=0.1"


def test_density_matches_simulation(capsys, tmp_path):
    out_file = tmp_path / "density.csv"
    code, _, _ = run(capsys, "density", "--utility", "exp_test_u", "--t", "5", "--a_u", "0.5", "--b_u", "1",
                     "--out", str(out_file))
    assert code == 0
    rows = np.loadtxt(out_file, delimiter=",", skiprows=1)
    xs, pdf = rows[:, 0], rows[:, 1]
    assert np.all(np.diff(xs) > 0) and np.all(pdf >= 0)
    mass = np.sum(0.5 * (pdf[1:] + pdf[:-1]) * np.diff(xs))
    assert mass == pytest.approx(1.0, abs=1e-4)
    # the mode sits at high wealth with the long tail to the left
    assert xs[np.argmax(pdf)] > np.sum(0.5 * (xs[1:] * pdf[1:] + xs[:-1] * pdf[:-1]) * np.diff(xs))
    u = catalog.catalog_lookup("exp_test_u")
    p = catalog.catalog_lookup("exp_test", {"a_u": 0.5, "b_u": 1.0, "x0": u.reference_x0})
    x = simulate_at(p, SimConfig(dt=0.01, horizon=5.0, n_paths=5000, seed=2), [5.0]).values[:, -1]
    assert validate_density(wealth_density(u, BrownianDrift(0.5, 1.0), u.reference_x0, 5.0), x).passed


@pytest.mark.parametrize("argv,code", [
    (["check", "--dynamic", "nonsense"], 2),
    (["check", "--dynamic", "expr:x^;1", "--x0", "1"], 2),
    (["derive-dynamic", "--utility", "expr:x^2"], 2),
    (["simulate", "--dynamic", "gbm:mu=0.1,sigma=0.2", "--dt", "-1"], 2),
    (["density", "--utility", "exp_test_u", "--x0", "0"], 3),
    (["derive-utility", "--dynamic", "expr:0;x", "--domain", "0,inf", "--x0", "1", "--a_u", "0.2"], 0),
    (["decide", "--dynamic", "gbm:mu=0.1,sigma=0.2", "--utility", "log"], 2),
])
def test_exit_codes(capsys, argv, code):
    assert run(capsys, *argv)[0] == code


def test_argparse_errors_exit_2(capsys):
    with pytest.raises(SystemExit) as info:
        main(["check"])
    assert info.value.code == 2


def test_no_partial_file_on_error(capsys, tmp_path):
    target = tmp_path / "out.csv"
    code, _, _ = run(capsys, "density", "--utility", "exp_test_u", "--x0", "0", "--out", str(target))
    assert code == 3
    assert os.listdir(tmp_path) == []


def test_existing_file_survives_failed_run(capsys, tmp_path):
    target = tmp_path / "out.json"
    target.write_text("previous")
    run(capsys, "check", "--dynamic", "nonsense", "--out", str(target))
    assert target.read_text() == "previous"


GOLDEN_CASES = {
    "check_exp_test.json": ["check", "--dynamic", "exp_test"],
    "derive_dynamic_sqrt.txt": ["derive-dynamic", "--utility", "sqrt", "--a_u", "1", "--b_u", "1"],
    "simulate_gbm.csv": ["simulate", "--dynamic", "gbm:mu=0.05,sigma=0.2", "--paths", "3", "--horizon", "0.2",
                         "--dt", "0.05", "--seed", "42"],
    "decide_gbm.json": ["decide", "--dynamic", "gbm:mu=0.055,sigma=0.1", "--dynamic", "gbm:mu=0.015,sigma=0.1",
                        "--utility", "log", "--paths", "50", "--horizon", "4", "--dt", "0.1", "--seed", "42"],
}


@pytest.mark.parametrize("name", sorted(GOLDEN_CASES))
def test_golden_outputs(tmp_path, capsys, name):
    outs = []
    for i in range(2):
        path = tmp_path / f"{i}-{name}"
        assert main(GOLDEN_CASES[name] + ["--out", str(path)]) in (0, 4)
        outs.append(path.read_bytes())
    assert outs[0] == outs[1]
    golden = GOLDEN / name
    if os.environ.get("UPDATE_GOLDEN"):
        golden.write_bytes(outs[0])
    assert outs[0] == golden.read_bytes()


def test_console_script_entry_point():
    proc = subprocess.run([sys.executable, "-m", "ergodic_utility.cli", "check", "--dynamic", "exp_test"],
                          capture_output=True, text=True, check=False)
    assert proc.returncode == 0
    assert json.loads(proc.stdout)["consistent"] is True
