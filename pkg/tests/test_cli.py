import json

import pytest

from revolt.cli import build_parser, main
from revolt.config import Config

from conftest import small_config


@pytest.fixture()
def config_file(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(small_config(max_steps=60).to_json())
    return path


def test_parser_rejects_unknown_verb():
    with pytest.raises(SystemExit):
        build_parser().parse_args(["fly"])


def test_config_round_trip(tmp_path):
    cfg = small_config()
    path = tmp_path / "c.json"
    path.write_text(cfg.to_json())
    assert Config.load(path).to_json() == cfg.to_json()


def test_pipeline_end_to_end(tmp_path, config_file, capsys):
    models = tmp_path / "models"
    data = tmp_path / "houses"
    base = ["--config", str(config_file)]
    assert main(base + ["gen", "--out", str(data), "--count", "40"]) == 0
    assert len(list(data.glob("house_*.json"))) == 40
    for verb in ("train-objects", "train-regions", "train-rollout"):
        assert main(base + [verb, "--models", str(models), "--data", str(data)]) == 0
    out = capsys.readouterr().out.strip().splitlines()
    assert "nearest_centroid_accuracy" in json.loads(out[1])
    assert "next_label_accuracy" in json.loads(out[-1])

    res = tmp_path / "results"
    assert main(base + ["eval", "--agent", "revolt", "--episodes", "2", "--models", str(models),
                        "--out", str(res)]) == 0
    summary = json.loads((res / "summary.json").read_text())
    assert summary["episodes"] == 2 and 0 <= summary["SPL"] <= summary["SR"] <= 1
    assert (res / "revolt.csv").read_text().startswith("index,house,target,success")

    svg = tmp_path / "ep.svg"
    assert main(base + ["render", "--agent", "none", "--out", str(svg)]) == 0
    assert svg.read_text().startswith("<svg")
