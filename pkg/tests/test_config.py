import json
import os

import pytest

import derain
from derain.config import PRESET_PATH, Config, ConfigError, RunConfig, read_config_from_path

COMMANDS = ["derain", "invert", "train-toy"]


def run_config(*argv, command="derain"):
    return Config(COMMANDS, [command, *argv]).get_run_config()


def test_defaults():
    rc = run_config()
    assert rc.lambda_ == 15.0
    assert rc.lambda_switch == 25.0
    assert rc.t_skip == 40
    assert rc.steps == 100
    assert rc.prompt_mode == "contextual"
    assert rc.attn_switch is True
    assert rc.effective_lambda == 25.0
    assert rc.blocks == "auto"
    assert rc.checkpoint is None


def test_explicit_lambda_drives_switching_scale():
    assert run_config("--lambda", "10").effective_lambda == 10.0
    assert run_config("--lambda", "10", "--lambda-switch", "30").effective_lambda == 30.0


def test_disabling_switch_uses_plain_scale():
    rc = run_config("--no-attn-switch")
    assert rc.attn_switch is False
    assert rc.effective_lambda == 15.0
    assert run_config("--attn-switch", "false").attn_switch is False


def test_list_and_keyword_flags():
    assert run_config("--blocks", "0,4,5").blocks == [0, 4, 5]
    assert run_config("--blocks", "later").blocks == "later"
    assert run_config("--seeds", "3,4").seeds == [3, 4]


def test_config_files_layer_under_flags(tmp_path):
    toml = tmp_path / "run.toml"
    toml.write_text('[run]\nt_skip = 20\nconcept = "heavy rain"\n')
    assert run_config("--config", str(toml)).t_skip == 20
    assert run_config("--config", str(toml), "--t-skip", "30").t_skip == 30
    assert run_config("--config", str(toml)).concept == "heavy rain"
    js = tmp_path / "run.json"
    js.write_text(json.dumps({"run": {"seed": 9}}))
    assert run_config("--config", str(js)).seed == 9


def test_user_file(tmp_path, monkeypatch):
    monkeypatch.setenv("XDG_CONFIG_HOME", str(tmp_path))
    (tmp_path / "derain").mkdir()
    (tmp_path / "derain" / "derain.toml").write_text("[run]\nsteps = 50\nt_skip = 10\n")
    rc = run_config()
    assert rc.steps == 50 and rc.t_skip == 10


def test_lambda_from_file_drives_switching_scale(tmp_path):
    toml = tmp_path / "run.toml"
    toml.write_text("[run]\nlambda = 5.0\n")
    assert run_config("--config", str(toml)).effective_lambda == 5.0


def test_per_command_settings(tmp_path):
    toml = tmp_path / "run.toml"
    toml.write_text("[run]\nt_skip = 20\n\n[commands.derain]\nt_skip = 10\n")
    assert run_config("--config", str(toml)).t_skip == 10
    assert run_config("--config", str(toml), command="invert").t_skip == 20
    assert run_config("--config", str(toml), "--t-skip", "5").t_skip == 5


def test_run_dir_environment_override(monkeypatch):
    monkeypatch.setenv("DERAIN_RUN_DIR", "/tmp/elsewhere")
    assert run_config().run_dir == "/tmp/elsewhere"


@pytest.mark.parametrize(
    "argv",
    [
        ["--t-skip", "200"],
        ["--prompt-mode", "fancy"],
        ["--blocks", "1,2", "--blocks-initial", "0"],
        ["--blocks", "9"],
        ["--beta-start", "0.5"],
        ["--dim", "10", "--heads", "4"],
    ],
)
def test_invalid_configs_rejected(argv):
    with pytest.raises(ConfigError):
        run_config(*argv)


def test_missing_or_broken_config_file(tmp_path):
    with pytest.raises(ConfigError):
        run_config("--config", str(tmp_path / "missing.toml"))
    broken = tmp_path / "broken.toml"
    broken.write_text("[run\n")
    with pytest.raises(ConfigError):
        run_config("--config", str(broken))


def test_unknown_command_exits():
    with pytest.raises(SystemExit):
        Config(COMMANDS, ["paint"])


def test_run_config_dict_round_trip():
    rc = run_config("--seed", "4", "--blocks", "0,1")
    again = RunConfig.from_dict(json.loads(json.dumps(rc.to_dict())))
    assert again.command == "derain"
    assert again.values == rc.values


def test_preset_ships_inside_package():
    package_dir = os.path.dirname(os.path.abspath(derain.__file__))
    assert os.path.commonpath([os.path.abspath(PRESET_PATH), package_dir]) == package_dir
    preset = read_config_from_path(PRESET_PATH)
    assert preset["run"]["steps"] == 100
    assert run_config(command="train-toy").num_videos == preset["commands"]["train-toy"]["num_videos"] == 48
    assert run_config().num_videos == 10
