import hashlib
import json
import xml.etree.ElementTree as ET
from pathlib import Path

import pytest

from iatrpo.cli import main

TINY = """
env:
  id: c2_fixed
  horizon: 40
trpo:
  batch_timesteps: 120
  vf_iters: 2
curriculum:
  stage1_iterations: 2
  stage2_iterations: 2
  probe_every: 2
  probe_episodes: 2
eval:
  n_episodes: 3
"""


@pytest.fixture()
def cfg_path(tmp_path):
    p = tmp_path / "tiny.yaml"
    p.write_text(TINY)
    return str(p)


def file_hash(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def run(argv):
    return main(argv)


def test_train_single_writes_checkpoints_and_metrics(tmp_path, cfg_path):
    out = tmp_path / "s0"
    assert run(["train-single", "--config", cfg_path, "--seed", "3",
                "--out-dir", str(out)]) == 0
    assert (out / "single_role0.ckpt").exists()
    assert (out / "single_role1.ckpt").exists()
    assert (out / "metrics_single.csv").exists()
    run_meta = json.loads((out / "run.json").read_text())
    assert run_meta["seed"] == 3
    assert run_meta["subcommand"] == "train-single"


def test_full_pipeline_and_reproducibility(tmp_path, cfg_path):
    s1 = tmp_path / "stage1"
    assert run(["train-single", "--config", cfg_path, "--seed", "5",
                "--out-dir", str(s1)]) == 0
    for rerun in ("a", "b"):
        out = tmp_path / f"stage2_{rerun}"
        assert run(["train-iatrpo", "--config", cfg_path, "--seed", "5",
                    "--out-dir", str(out), "--single-dir", str(s1)]) == 0
    for name in ("composed_role0.ckpt", "composed_role1.ckpt",
                 "metrics_iatrpo.csv", "run.json"):
        assert file_hash(tmp_path / "stage2_a" / name) == \
            file_hash(tmp_path / "stage2_b" / name), name


def test_train_matrpo_and_eval_success(tmp_path, cfg_path):
    out = tmp_path / "m"
    assert run(["train-matrpo", "--config", cfg_path, "--seed", "2",
                "--out-dir", str(out)]) == 0
    ev = tmp_path / "ev"
    assert run(["eval", "--config", cfg_path, "--seed", "2", "--out-dir", str(ev),
                "--metric", "success", "--run-dir", str(out), "--episodes", "3"]) == 0
    text = (ev / "eval_success.csv").read_text()
    assert "joint" in text


def test_eval_mixed_pairings(tmp_path, cfg_path):
    dirs = []
    for seed in (0, 1):
        out = tmp_path / f"m{seed}"
        assert run(["train-matrpo", "--config", cfg_path, "--seed", str(seed),
                    "--out-dir", str(out)]) == 0
        dirs.append(str(out))
    ev = tmp_path / "mixed"
    assert run(["eval", "--config", cfg_path, "--seed", "9", "--out-dir", str(ev),
                "--metric", "mixed", "--run-dir", dirs[0], "--run-dir", dirs[1],
                "--episodes", "2"]) == 0
    lines = (ev / "eval_mixed.csv").read_text().splitlines()
    # 2 seeds -> 2 ordered pairs, plus mean and std rows and two header lines
    assert len(lines) == 2 + 2 + 2


def test_replay_and_render_roundtrip(tmp_path, cfg_path):
    train = tmp_path / "t"
    assert run(["train-matrpo", "--config", cfg_path, "--seed", "4",
                "--out-dir", str(train)]) == 0
    rep = tmp_path / "rep"
    assert run(["replay", "--config", cfg_path, "--seed", "4", "--out-dir", str(rep),
                "--run-dir", str(train), "--episodes", "2", "--svg"]) == 0
    assert (rep / "episodes.jsonl").exists()
    svg = rep / "trajectories.svg"
    assert svg.exists()
    ET.parse(svg)  # well-formed
    ren = tmp_path / "ren"
    assert run(["render", "--config", cfg_path, "--seed", "4", "--out-dir", str(ren),
                "--trace", str(rep / "episodes.jsonl")]) == 0
    ET.parse(ren / "trajectories.svg")


def test_replay_svg_includes_dashed_singles_for_composed(tmp_path, cfg_path):
    s1 = tmp_path / "s1"
    assert run(["train-single", "--config", cfg_path, "--seed", "7",
                "--out-dir", str(s1)]) == 0
    s2 = tmp_path / "s2"
    assert run(["train-iatrpo", "--config", cfg_path, "--seed", "7",
                "--out-dir", str(s2), "--single-dir", str(s1)]) == 0
    rep = tmp_path / "rep2"
    assert run(["replay", "--config", cfg_path, "--seed", "7", "--out-dir", str(rep),
                "--run-dir", str(s2), "--episodes", "1", "--svg"]) == 0
    root = ET.parse(rep / "trajectories.svg").getroot()
    dashed = [el for el in root.iter()
              if el.tag.endswith("polyline") and "stroke-dasharray" in el.attrib]
    assert len(dashed) >= 2 + 4  # overlays for both agents + lane markings


def test_config_error_exit_code(tmp_path):
    bad = tmp_path / "bad.yaml"
    bad.write_text("trpo:\n  gamma: 2.0\n")
    assert run(["train-matrpo", "--config", str(bad),
                "--out-dir", str(tmp_path / "o")]) == 2


def test_io_error_exit_code(tmp_path, cfg_path):
    assert run(["eval", "--config", cfg_path, "--out-dir", str(tmp_path / "o"),
                "--metric", "success", "--run-dir", str(tmp_path / "missing")]) == 3


def test_missing_config_file_exit_code(tmp_path):
    assert run(["train-matrpo", "--config", str(tmp_path / "nope.yaml"),
                "--out-dir", str(tmp_path / "o")]) == 2
