import json
from pathlib import Path

import pytest
import yaml

from v2xshare.cli import main
from v2xshare.config import load_config, parse_config
from v2xshare.env import ConfigError

TINY = {
    "seed": 4,
    "env": {"n_links": 2, "n_channels": 2},
    "train": {"mode": "real", "n_feedback": 2, "batch_size": 8, "episodes": 3,
              "steps_per_episode": 10, "qnet_hidden": [16, 8]},
    "evaluation": {"test_seeds": [5], "test_episodes": 2, "test_steps": 4},
    "experiments": [
        {"figure": "fig5", "n_feedback": [0, 2], "batch_size": 8, "test_seeds": [5],
         "test_episodes": 2, "test_steps": 3},
        {"figure": "fig8", "n_feedback": 2, "batch_size": 8, "test_seeds": [5],
         "test_episodes": 1, "test_steps": 6, "feedback_interval": [1, 3]},
    ],
}


@pytest.fixture
def config_file(tmp_path):
    path = tmp_path / "tiny.yaml"
    path.write_text(yaml.safe_dump(TINY))
    return path


def test_train_eval_round_trip(tmp_path, config_file, capsys):
    out = tmp_path / "run"
    assert main(["train", "--config", str(config_file), "--out", str(out)]) == 0
    lines = (out / "returns.csv").read_text().splitlines()
    assert len(lines) == 4
    assert (out / "policy" / "manifest.json").exists()
    assert main(["eval", "--config", str(config_file), "--out", str(out / "eval"),
                 "--checkpoint", str(out / "policy")]) == 0
    summary = json.loads((out / "eval" / "eval_summary.json").read_text())
    assert summary["episodes"] == 2 and 0 < summary["arp"] <= 100
    assert "ARP" in capsys.readouterr().out


def test_train_deterministic(tmp_path, config_file):
    for name in ("a", "b"):
        main(["train", "--config", str(config_file), "--out", str(tmp_path / name)])
    assert (tmp_path / "a" / "returns.csv").read_bytes() == (tmp_path / "b" / "returns.csv").read_bytes()
    main(["train", "--config", str(config_file), "--seed", "5", "--out", str(tmp_path / "c")])
    assert (tmp_path / "a" / "returns.csv").read_bytes() != (tmp_path / "c" / "returns.csv").read_bytes()


def test_sweep_deterministic(tmp_path, config_file):
    for name in ("a", "b"):
        main(["sweep", "--config", str(config_file), "--out", str(tmp_path / name)])
    for csv_name in ("fig5_arp_vs_real_feedback.csv", "fig8_feedback_interval.csv"):
        assert (tmp_path / "a" / csv_name).read_bytes() == (tmp_path / "b" / csv_name).read_bytes()


def test_checkpoint_every(tmp_path, config_file):
    main(["train", "--config", str(config_file), "--out", str(tmp_path), "--checkpoint-every", "1"])
    assert len(list((tmp_path / "checkpoints").iterdir())) == 3


def test_missing_subcommand():
    with pytest.raises(SystemExit):
        main([])


def test_config_errors(tmp_path):
    with pytest.raises(ConfigError):
        parse_config({"trian": {}})
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.yaml")


@pytest.mark.parametrize("name", ["desk.yaml", "paper.yaml"])
def test_shipped_configs_parse(name):
    cfg = load_config(Path(__file__).resolve().parents[1] / "configs" / name)
    assert cfg.experiments
