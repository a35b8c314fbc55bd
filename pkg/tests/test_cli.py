"""CLI flows on tiny configs: all verbs, config handling, reproducibility."""

import json
from pathlib import Path

import numpy as np
import pytest

from tracq.cli import main
from tracq.config import (ExperimentConfig, RunManifest, config_from_ini, config_to_ini,
                          load_config, with_seed)

TINY_INI = """
[world]
min_entities = 2
max_entities = 3

[data]
train_scenes = 6
val_scenes = 3
seed = 0

[train]
phase1_steps = 4
phase2_steps = 3
batch_size = 2
lr_backbone = 0.0001
lr_main = 0.0001

[eval]
k_values = 4,16

[ablate]
seeds = 0,1
k_sweep = 1,2
"""


@pytest.fixture(scope="module")
def tiny_config(tmp_path_factory):
    path = tmp_path_factory.mktemp("cfg") / "tiny.ini"
    path.write_text(TINY_INI)
    return path


@pytest.fixture(scope="module")
def generated(tiny_config, tmp_path_factory):
    out = tmp_path_factory.mktemp("data")
    assert main(["generate", "--config", str(tiny_config), "--out", str(out)]) == 0
    return out


@pytest.fixture(scope="module")
def trained(tiny_config, generated, tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    code = main(["train", "--config", str(tiny_config),
                 "--dataset", str(generated / "train.jsonl"), "--out", str(out)])
    assert code == 0
    return out


class TestConfig:
    def test_defaults_roundtrip(self):
        cfg = ExperimentConfig()
        assert config_from_ini(config_to_ini(cfg)) == cfg

    def test_unknown_key_rejected(self):
        with pytest.raises(ValueError, match="unknown key"):
            config_from_ini("[model]\nwidth = 3\n")

    def test_unknown_section_rejected(self):
        with pytest.raises(ValueError, match="unknown config section"):
            config_from_ini("[models]\nd_model = 3\n")

    def test_partial_file_fills_defaults(self):
        cfg = config_from_ini("[train]\nphase1_steps = 7\n")
        assert cfg.train.phase1_steps == 7
        assert cfg.model.d_model == 64

    def test_seed_override(self):
        cfg = with_seed(ExperimentConfig(), 9)
        assert cfg.data.seed == 9 and cfg.train.seed == 9

    def test_selector_validated(self):
        with pytest.raises(ValueError, match="selector"):
            config_from_ini("[experiment]\nselector = vgg\n")

    def test_world_model_consistency_enforced(self):
        with pytest.raises(ValueError, match="image_size"):
            config_from_ini("[world]\nimage_size = 32\n")


class TestGenerate:
    def test_outputs_exist(self, generated):
        assert (generated / "train.jsonl").exists()
        assert (generated / "val.jsonl").exists()
        manifest = RunManifest.load(generated / "manifest.json")
        assert manifest.command == "generate"
        assert manifest.results["train_scenes"] == 6

    def test_refuses_overwrite_without_force(self, tiny_config, generated):
        assert main(["generate", "--config", str(tiny_config), "--out", str(generated)]) == 2

    def test_force_overwrites_identically(self, tiny_config, generated, tmp_path):
        before = (generated / "train.jsonl").read_bytes()
        assert main(["generate", "--config", str(tiny_config), "--out", str(generated),
                     "--force"]) == 0
        assert (generated / "train.jsonl").read_bytes() == before

    def test_default_config_counts(self):
        cfg = load_config(None)
        assert cfg.data.train_scenes == 512 and cfg.data.val_scenes == 128


class TestTrain:
    def test_outputs(self, trained):
        assert (trained / "tracq-seed0.npz").exists()
        assert (trained / "tracq-seed0-phase1.npz").exists()
        losses = [json.loads(line) for line in (trained / "losses.jsonl").read_text().splitlines()]
        assert len(losses) == 7  # 4 + 3 steps
        manifest = RunManifest.load(trained / "manifest.json")
        assert manifest.results["checkpoint"].endswith("tracq-seed0.npz")

    def test_resume_from_phase1_checkpoint_reproduces_losses(self, tiny_config, generated,
                                                             trained, tmp_path):
        """Re-running phase 2 from the stored phase-1 checkpoint yields the
        same phase-2 losses as the original run (determinism contract)."""
        from tracq.config import load_config
        from tracq.data import load_dataset
        from tracq.experiments import train_variant
        cfg = load_config(tiny_config)
        dataset = load_dataset(generated / "train.jsonl")
        out = tmp_path / "resume"
        _, history = train_variant("tracq", cfg, 0, dataset, out,
                                   phase1_source=trained / "tracq-seed0-phase1.npz")
        original = [json.loads(line) for line in (trained / "losses.jsonl").read_text().splitlines()]
        original_p2 = [h for h in original if h["phase"] == 2]
        resumed_p2 = [h for h in history if h["phase"] == 2]
        assert resumed_p2 == original_p2


class TestEval:
    def test_eval_outputs_and_idempotence(self, tiny_config, generated, trained, tmp_path):
        out_a = tmp_path / "eval_a"
        out_b = tmp_path / "eval_b"
        for out in (out_a, out_b):
            code = main(["eval", "--config", str(tiny_config),
                         "--checkpoint", str(trained / "tracq-seed0.npz"),
                         "--dataset", str(generated / "val.jsonl"), "--out", str(out)])
            assert code == 0
        metrics_a = (out_a / "metrics.json").read_bytes()
        metrics_b = (out_b / "metrics.json").read_bytes()
        assert metrics_a == metrics_b  # bit-exact reproducibility
        payload = json.loads(metrics_a)
        assert set(payload["recall"]) == {"4", "16"}
        assert payload["predictions_per_image"] == 2 * 16
        assert "mR" in (out_a / "table.txt").read_text()

    def test_rerun_from_manifest_reproduces_metrics(self, generated, trained, tmp_path):
        out_a = tmp_path / "m_a"
        out_b = tmp_path / "m_b"
        assert main(["eval", "--checkpoint", str(trained / "tracq-seed0.npz"),
                     "--dataset", str(generated / "val.jsonl"), "--out", str(out_a)]) == 0
        assert main(["eval", "--from-manifest", str(out_a / "manifest.json"),
                     "--checkpoint", str(trained / "tracq-seed0.npz"),
                     "--dataset", str(generated / "val.jsonl"), "--out", str(out_b)]) == 0
        assert (out_a / "metrics.json").read_bytes() == (out_b / "metrics.json").read_bytes()

    def test_config_checkpoint_mismatch_names_field(self, generated, trained, tmp_path):
        bad = tmp_path / "bad.ini"
        bad.write_text("[model]\nd_model = 32\n[world]\nimage_size = 64\n")
        code = main(["eval", "--config", str(bad),
                     "--checkpoint", str(trained / "tracq-seed0.npz"),
                     "--dataset", str(generated / "val.jsonl"),
                     "--out", str(tmp_path / "ev")])
        assert code == 2

    def test_k_flag_changes_prediction_count(self, tiny_config, generated, trained, tmp_path):
        out = tmp_path / "evk"
        assert main(["eval", "--config", str(tiny_config),
                     "--checkpoint", str(trained / "tracq-seed0.npz"),
                     "--dataset", str(generated / "val.jsonl"), "--out", str(out),
                     "--k", "1"]) == 0
        payload = json.loads((out / "metrics.json").read_text())
        assert payload["predictions_per_image"] == 16


class TestInfer:
    def test_graph_json(self, generated, trained, tmp_path):
        out = tmp_path / "graph.json"
        code = main(["infer", "--checkpoint", str(trained / "tracq-seed0.npz"),
                     "--image", f"{generated / 'val.jsonl'}:1", "--out", str(out)])
        assert code == 0
        payload = json.loads(out.read_text())
        assert payload["count"] == len(payload["nodes"]) == 32  # k * N_p
        scores = [n["score"] for n in payload["nodes"]]
        assert scores == sorted(scores, reverse=True)
        for node in payload["nodes"]:
            product = (node["predicate"]["score"] * node["subject"]["score"]
                       * node["object"]["score"])
            assert abs(node["score"] - product) < 1e-12

    def test_m_caps_nodes(self, generated, trained, tmp_path):
        out = tmp_path / "graph_m.json"
        assert main(["infer", "--checkpoint", str(trained / "tracq-seed0.npz"),
                     "--image", f"{generated / 'val.jsonl'}:0", "--out", str(out),
                     "--m", "5"]) == 0
        assert json.loads(out.read_text())["count"] == 5

    def test_rerun_identical(self, generated, trained, tmp_path):
        out_a, out_b = tmp_path / "g1.json", tmp_path / "g2.json"
        for out in (out_a, out_b):
            assert main(["infer", "--checkpoint", str(trained / "tracq-seed0.npz"),
                         "--image", f"{generated / 'val.jsonl'}:0", "--out", str(out)]) == 0
        assert out_a.read_bytes() == out_b.read_bytes()

    def test_npy_input(self, generated, trained, tmp_path):
        from tracq.data import load_dataset
        raster = load_dataset(generated / "val.jsonl").records[0].raster
        npy = tmp_path / "img.npy"
        np.save(npy, raster)
        out = tmp_path / "graph_npy.json"
        assert main(["infer", "--checkpoint", str(trained / "tracq-seed0.npz"),
                     "--image", str(npy), "--out", str(out)]) == 0

    def test_bad_index_errors(self, generated, trained, tmp_path):
        code = main(["infer", "--checkpoint", str(trained / "tracq-seed0.npz"),
                     "--image", f"{generated / 'val.jsonl'}:99",
                     "--out", str(tmp_path / "g.json")])
        assert code == 2


@pytest.mark.slow
class TestAblateAndCompare:
    def test_ablate_all_suites(self, tiny_config, tmp_path):
        out = tmp_path / "abl"
        assert main(["ablate", "--config", str(tiny_config), "--suite", "all",
                     "--out", str(out)]) == 0
        payload = json.loads((out / "ablations.json").read_text())
        assert set(payload) == {"order", "k", "refine", "cond"}
        for suite in ("order", "k", "refine", "cond"):
            assert (out / f"{suite}.txt").exists()
        assert payload["k"]["gate"] is not None
        assert payload["cond"]["gate"]["seeds"] == 2
        k_text = (out / "k.txt").read_text()
        assert "direction:" in k_text

    def test_no_train_fails_on_missing(self, tiny_config, tmp_path):
        assert main(["ablate", "--config", str(tiny_config), "--suite", "k",
                     "--out", str(tmp_path / "abl2"), "--no-train"]) == 2

    def test_compare_baselines(self, tiny_config, tmp_path):
        out = tmp_path / "cmp"
        assert main(["compare-baselines", "--config", str(tiny_config),
                     "--out", str(out)]) == 0
        payload = json.loads((out / "comparison.json").read_text())
        assert set(payload) == {"sd", "dd", "ddtr", "tracq"}
        for row in payload.values():
            assert row["parameters"] > 0
            assert row["inference_time_median_s"] > 0
        assert "tracq" in (out / "table.txt").read_text()
