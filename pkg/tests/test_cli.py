import csv
import json
from pathlib import Path

import pytest

from harnackmc.cli import main
from harnackmc.errors import ConfigurationError
from harnackmc.runner import load_config

CONFIGS = Path(__file__).resolve().parent.parent / "configs"
FAST = ["--paths", "2000", "--step", str(2.0 ** -6)]

MINIMAL = """
[model]
name = "ou"
[coupling]
T = 1.0
x = [0.0]
y = [1.0]
[solver]
seed = 3
paths = 1000
h_max = 0.015625
"""


def body(out):
    return json.loads((out / "report.json").read_text())["body"]


def test_run_ou_config(tmp_path, capsys):
    code = main(["run", "--config", str(CONFIGS / "ou_log_harnack.toml"), "--out", str(tmp_path)] + FAST)
    assert code == 0
    b = body(tmp_path)
    names = {v["name"] for v in b["verdicts"]}
    assert {"log-harnack[stated]", "log-harnack[lemma]", "girsanov-identity", "entropy-bound"} <= names
    assert b["bounds"]["log_harnack_stated"] == pytest.approx(0.505017, abs=1e-6)
    assert b["metadata"]["seed"] == 0 and b["metadata"]["n_paths"] == 2000
    assert "PASS" in capsys.readouterr().out


def test_negative_control_exits_nonzero(tmp_path, capsys):
    code = main(["run", "--config", str(CONFIGS / "ou_negative_control.toml"), "--out", str(tmp_path)] + FAST)
    assert code == 1
    assert "RED FLAG" in capsys.readouterr().out
    assert "log-harnack[stated]" in body(tmp_path)["red_flags"]


def test_delay_config(tmp_path):
    code = main(["run", "--config", str(CONFIGS / "delay_ou_sfde.toml"), "--out", str(tmp_path),
                 "--paths", "1000", "--step", str(2.0 ** -6)])
    assert code == 0
    extra = body(tmp_path)["metadata"]["extra"]
    assert extra["sfde_bound"]["Phi_variant"] == "as-stated"
    assert extra["sfde_bound"]["Phi_overflow"] is False
    assert extra["sfde_final_state_equal"] is True


def test_sine_power_config(tmp_path):
    code = main(["run", "--config", str(CONFIGS / "sine_power.toml"), "--out", str(tmp_path)] + FAST)
    assert code == 0
    names = {v["name"] for v in body(tmp_path)["verdicts"]}
    assert {"power-harnack[q=10,stated]", "power-harnack[q=10,derived]", "moment-bound"} <= names


def test_dump_paths(tmp_path):
    code = main(["run", "--config", str(CONFIGS / "ou_log_harnack.toml"), "--out", str(tmp_path), "--dump-paths",
                 "--paths", "50", "--step", str(2.0 ** -5)])
    assert code == 0
    rows = list(csv.DictReader(open(tmp_path / "paths_coupled.csv")))
    assert len(rows) == 50 and set(rows[0]) == {"path_index", "tau", "coupled", "log_R", "exit_flag",
                                                 "weight_exploded"}


def test_bounds_command(tmp_path, capsys):
    assert main(["bounds", "--config", str(CONFIGS / "sine_power.toml"), "--out", str(tmp_path)]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["moment_p"] == pytest.approx(1 / 24)


def test_check_model_command(tmp_path):
    assert main(["check-model", "--config", str(CONFIGS / "sine_power.toml"), "--out", str(tmp_path)]) == 0
    names = [v["name"] for v in body(tmp_path)["verdicts"]]
    assert names == ["spot-check[H1]", "spot-check[H2]", "spot-check[H3]"]


def test_probe_command(tmp_path):
    cfg = tmp_path / "probe.toml"
    text = (CONFIGS / "log_lipschitz_probe.toml").read_text()
    cfg.write_text(text.replace("0.00006103515625", "0.0001220703125"))
    assert main(["probe-uniqueness", "--config", str(cfg), "--out", str(tmp_path)]) == 0
    probe = body(tmp_path)["metadata"]["extra"]["probe"]
    assert probe["C_fit"] >= 0 and len(probe["entries"]) == 12


def test_config_error_exit_code(tmp_path, capsys):
    bad = tmp_path / "bad.toml"
    bad.write_text(MINIMAL.replace("seed = 3\n", ""))
    assert main(["run", "--config", str(bad), "--out", str(tmp_path)]) == 2
    assert "solver.seed" in capsys.readouterr().err
    assert main(["run", "--config", str(tmp_path / "missing.toml")]) == 2


@pytest.mark.parametrize("patch, field", [
    (('"ou"', '"nope"'), "model.name"),
    (("paths = 1000", "paths = 1"), "solver.paths"),
    (("h_max = 0.015625", "h_max = 0.015625\nbogus = 1"), "solver.bogus"),
])
def test_config_field_paths(patch, field):
    with pytest.raises(ConfigurationError, match=field.replace(".", r"\.")):
        load_config(MINIMAL.replace(*patch), is_text=True)


def test_power_q_validated():
    text = MINIMAL.replace('"ou"', '"sine_diffusion"') + '[suite]\nrun = ["power-harnack"]\npower_q = [8.0]\n'
    with pytest.raises(ConfigurationError, match=r"suite\.power_q\[0\]"):
        load_config(text, is_text=True)


def test_defaults_filled_in():
    exp = load_config(MINIMAL, is_text=True)
    assert exp.raw["coupling"]["theta"] == 1.0
    assert exp.raw["coupling"]["gamma"] == 1.0
    assert exp.raw["coupling"]["eps_couple"] == pytest.approx(2e-6)
    assert exp.raw["suite"]["run"] == ["log-harnack"]
