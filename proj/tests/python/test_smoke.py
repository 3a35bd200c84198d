import math
from pathlib import Path

import numpy as np
import pytest

import pixforge


def test_world_sample_shapes():
    world = pixforge.EditWorld()
    s = world.sample(0, "basic")
    assert s["source"].shape == (16, 16)
    assert s["mask"].shape == (16, 16)
    assert set(np.unique(s["mask"])) <= {0.0, 1.0}
    assert s["instruction"] == "make triangle right bright"
    assert s["kind"] == "transform"
    assert len(s["tokens"]) == 8
    assert not s["relevant"][0]


def test_world_is_deterministic():
    world = pixforge.EditWorld()
    a = world.sample(123, "multi-object")
    b = world.sample(123, "multi-object")
    assert np.array_equal(a["source"], b["source"])
    assert a["instruction"] == b["instruction"]


def test_groundtruth_attention_sums_to_one():
    mask = pixforge.EditWorld().sample(5, "basic")["mask"]
    gt = pixforge.groundtruth_attention(mask, 4, 4)
    assert gt.shape == (4, 4)
    assert math.isclose(gt.sum(), 1.0, rel_tol=1e-12)


def test_reward_invariants():
    rng = np.random.default_rng(0)
    m = rng.random((4, 4))
    assert math.isclose(pixforge.attention_loss(m, m), 1.0, rel_tol=1e-12)
    a = np.zeros((4, 4))
    b = np.zeros((4, 4))
    a[0, 0] = 1
    b[3, 3] = 1
    assert pixforge.attention_loss(a, b) == 0.0
    img = rng.random((8, 8))
    assert pixforge.clip_loss(img, img, 0.05) == (0.0, 0.0)
    assert pixforge.total_reward(0.7, 0.2, 0.2, -1.0) == 0.7 - 0.2


def test_metrics_reference_values():
    a = np.zeros((8, 8))
    b = np.full((8, 8), 0.1)
    assert math.isclose(pixforge.l1(a, b), 0.1)
    assert math.isclose(pixforge.l2(a, b), 0.01)
    assert math.isclose(pixforge.psnr(a, b), 20.0)
    assert math.isclose(pixforge.ssim(a, a), 1.0)


def test_config_errors_surface_as_value_error(tmp_path):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("bogus = 1\n")
    with pytest.raises(ValueError):
        pixforge.config_manifest(str(cfg))
    assert "train.clip_range" in pixforge.config_keys()


def test_tiny_pipeline(tmp_path):
    cfg = tmp_path / "tiny.cfg"
    cfg.write_text(
        "\n".join(
            [
                f'logdir = "{tmp_path / "logs"}"',
                "num_epochs = 2",
                "save_freq = 1",
                "sample.num_steps = 3",
                "sample.guidance_scale = 2.0",
                "sample.batch_size = 2",
                "train.clip_range = 0.2",
                "pretrain.steps = 20",
                "eval.holdout = 2",
            ]
        )
        + "\n"
    )
    text = pixforge.pretrain(config=str(cfg))
    assert "held-out denoising loss" in text
    text = pixforge.train(config=str(cfg))
    final = tmp_path / "logs" / "train" / "final.ckpt"
    assert final.exists()
    assert "epoch 2" in text

    plot = pixforge.plot(config=str(cfg))
    assert "rows 2" in plot
    assert (tmp_path / "logs" / "train" / "reward_curve.svg").exists()

    pixforge.evaluate(config=str(cfg), checkpoint=str(final))
    assert (tmp_path / "logs" / "eval" / "eval.csv").read_text().startswith("triple_id,l1,l2,ssim,psnr")

    r1 = pixforge.rollout(str(final), str(cfg), noise_seed=3)
    r2 = pixforge.rollout(str(final), str(cfg), noise_seed=3)
    assert np.array_equal(r1["output"], r2["output"])
    assert len(r1["log_probs"]) == 3

    with pytest.raises(RuntimeError):
        pixforge.evaluate(config=str(cfg), checkpoint=str(Path(tmp_path) / "missing.ckpt"))
