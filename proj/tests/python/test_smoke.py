import json
import math

import numpy as np
import pytest

import capaint


def test_mse_mae_psnr_hand_cases():
    a = np.array([1.0, 2.0, 3.0, 4.0])
    b = np.ones(4)
    assert capaint.mse(a, b) == 3.5
    assert capaint.mae(a, b) == 1.5
    assert capaint.psnr(np.full(4, 0.1), np.zeros(4), 1.0) == pytest.approx(20.0, abs=1e-12)
    assert math.isinf(capaint.psnr(a, a, 1.0))
    with pytest.raises(capaint.DimensionError):
        capaint.mse(a, np.ones(3))


def test_ssim_matches_scikit_image():
    metrics = pytest.importorskip("skimage.metrics")
    rng = np.random.default_rng(0)
    x = rng.random((32, 32))
    y = np.clip(x + 0.1 * rng.standard_normal((32, 32)), 0, 1)
    ref = metrics.structural_similarity(x, y, data_range=1.0, gaussian_weights=True, sigma=1.5,
                                        use_sample_covariance=False)
    assert capaint.ssim(x, y, 1.0) == pytest.approx(ref, abs=1e-6)
    assert capaint.ssim(x, x, 1.0) == pytest.approx(1.0, abs=1e-9)


def test_delta_cells():
    assert capaint.round_half_up(capaint.reduction_percent(13.59, 7.52)) == 44.7
    assert capaint.round_half_up(capaint.reduction_percent(6.21, 1.41)) == 77.3


def test_importance_scores_and_partition():
    rng = np.random.default_rng(1)
    maps = rng.random((2, 6, 6))
    maps /= maps.sum(axis=2, keepdims=True)
    col = maps.sum(axis=(0, 1))
    expected = np.exp(col - col.max())
    expected /= expected.sum()
    np.testing.assert_allclose(capaint.importance_scores(maps), expected, atol=1e-12)

    part = capaint.partition(list(expected), 0.5)
    assert len(part["causal"]) == capaint.causal_count(6, 0.5) == 3
    assert sorted(part["causal"] + part["environmental"]) == list(range(6))
    with pytest.raises(capaint.ConfigError):
        capaint.partition([0.5, 0.5], 1.0)


def test_schedule_and_forward_marginal():
    s = capaint.linear_schedule(100, 1e-4, 0.02)
    assert s.num_steps == 100
    assert s.alpha_bar(0) == 1.0
    for t in range(1, 101):
        assert s.alpha_bar(t) / s.alpha_bar(t - 1) == pytest.approx(s.alpha(t), abs=1e-12)
    x0 = np.full((1000,), 0.5)
    noise = np.random.default_rng(2).standard_normal(1000)
    xt = capaint.q_sample(x0, 50, s, noise)
    np.testing.assert_allclose(xt, math.sqrt(s.alpha_bar(50)) * x0 + math.sqrt(1 - s.alpha_bar(50)) * noise)


def test_frame_sources_statistics():
    src = capaint.frame_sources(20000, 0.5, 1, 7)
    frac = sum(1 for k in src if k > 0) / len(src)
    assert abs(frac - 0.5) < 3 * math.sqrt(0.25 / 20000)
    assert set(capaint.frame_sources(50, 0.0, 2, 1)) == {0}
    assert 0 not in capaint.frame_sources(50, 1.0, 2, 1)


def test_run_command_end_to_end(tmp_path):
    config = {
        "output_root": str(tmp_path / "out"),
        "seeds": [0],
        "dataset": {"num_sequences": 12,
                    "generator": {"height": 8, "width": 8, "frames": 6, "steps_per_frame": 5, "warmup_steps": 10}},
        "decipher": {"reconstructor": {"epochs": 1}},
        "diffusion": {"num_steps": 4, "train": {"steps": 2, "log_every": 1, "probe_size": 4, "batch_size": 4}},
        "task": {"context_len": 3, "forecast_len": 3},
        "backbone": {"epochs": 1, "hidden_spatial": 4, "hidden_temporal": 8},
    }
    path = tmp_path / "config.json"
    path.write_text(json.dumps(config))
    capaint.run_command("train-predict", str(path), mode="baseline")
    capaint.run_command("train-predict", str(path), mode="capaint")
    capaint.run_command("report", str(path))
    report = json.loads((tmp_path / "out" / "report" / "report.json").read_text())
    assert report["comparisons"][0]["mode"] == "capaint"

    frame = np.random.default_rng(3).uniform(-1, 1, (1, 8, 8))
    mask = np.zeros((8, 8))
    mask[:4] = 1
    out = capaint.inpaint(str(tmp_path / "out" / "diffusion" / "denoiser.ckpt"), frame, mask, seed=1)
    assert out.shape == frame.shape
    np.testing.assert_array_equal(out[0, :4], frame[0, :4].astype(np.float32))
    assert np.all(np.abs(out) <= 1.0)

    with pytest.raises(capaint.ConfigError):
        capaint.run_command("generate", str(tmp_path / "missing.json"))
    with pytest.raises(capaint.UsageError):
        capaint.run_command("train-predict", str(path), mode="warp")
