import json

import numpy as np
import pytest

import affectseq

SMALL = {
    "task": "va",
    "segmentation": {"window": 40, "stride": 25},
    "model": {
        "dropout": 0.1,
        "tcn": {"channels": 16, "dilations": [1, 2], "num_blocks": 1},
        "encoder": {"d_model": 16, "num_layers": 1, "num_heads": 2, "ff_dim": 32},
        "head": {"hidden_dim": 16},
    },
    "optim": {"lr": 0.002, "batch_size": 4, "epochs": 2},
    "seed": 5,
}


def test_ccc_values():
    assert affectseq.ccc([1.0, 2.0, 3.0], [1.0, 2.0, 3.0]) == pytest.approx(1.0)
    assert affectseq.ccc([1.0, 2.0, 3.0], [3.0, 2.0, 1.0]) == pytest.approx(-1.0)
    assert affectseq.ccc([1.0, 2.0, 3.0], [2.0, 2.0, 2.0]) == 0.0
    masked = affectseq.ccc([1.0, 2.0, 99.0, 3.0], [1.0, 2.0, -5.0, 3.0], [True, True, False, True])
    assert masked == pytest.approx(1.0)
    with pytest.raises(affectseq.StructuralError):
        affectseq.ccc([1.0], [1.0])


def test_synthetic_videos():
    videos = affectseq.synthetic("au", videos=3, frames=50, dim=8, seed=1)
    assert len(videos) == 3
    v = videos[0]
    assert v.features.shape == (50, 8) and v.features.dtype == np.float32
    assert v.labels.shape == (50, 12)
    assert v.valid.shape == (50,) and v.valid.dtype == np.bool_
    again = affectseq.synthetic("au", videos=3, frames=50, dim=8, seed=1)
    assert np.array_equal(again[0].features, v.features)


def test_video_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    video = affectseq.Video("clip", rng.normal(size=(30, 4)).astype(np.float32), "expr",
                            rng.integers(0, 8, size=(30, 1)).astype(float), np.ones(30, dtype=bool))
    affectseq.write_dataset(str(tmp_path), [video])
    back = affectseq.load_dataset(str(tmp_path / "features"), str(tmp_path / "annotations"), "expr")
    assert back[0].video_id == "clip"
    assert np.array_equal(back[0].features, video.features)
    assert np.array_equal(back[0].labels, video.labels)


def test_bad_video_shapes():
    with pytest.raises(affectseq.StructuralError):
        affectseq.Video("x", np.zeros((5, 2), np.float32), "va", np.zeros((5, 1)), np.ones(5, bool))


def test_train_predict_evaluate(tmp_path):
    videos = affectseq.synthetic("va", videos=6, frames=80, dim=8, seed=2)
    ckpt, history = affectseq.train(SMALL, videos[:5], videos[5:])
    assert [h["epoch"] for h in history] == [1, 2]
    assert all(np.isfinite(h["train_loss"]) for h in history)
    assert ckpt.task == "va"
    assert json.loads(ckpt.config)["segmentation"]["window"] == 40

    pred = ckpt.predict(videos[5].features)
    assert pred.shape == (80, 2)
    assert np.all(np.abs(pred) <= 1.0)

    report = ckpt.evaluate(videos[5:])
    assert "mean_ccc" in report and -1.0 <= report["mean_ccc"] <= 1.0

    path = str(tmp_path / "model.ckpt")
    ckpt.save(path)
    loaded = affectseq.Checkpoint.load(path)
    assert np.array_equal(loaded.predict(videos[5].features), pred)

    _, history2 = affectseq.train(SMALL, videos[:5], videos[5:])
    assert history2 == history


def test_config_errors():
    videos = affectseq.synthetic("va", videos=2, frames=40, dim=4, seed=0)
    with pytest.raises(affectseq.ConfigError):
        affectseq.train({"optim": {"learning_rate": 1}}, videos)
    with pytest.raises(affectseq.ConfigError):
        affectseq.train({"task": "va"}, videos)  # epochs missing
    assert "properties" in json.loads(affectseq.config_schema())


def test_gradcheck_and_schedule():
    results = affectseq.gradcheck()
    assert results and max(err for _, _, err in results) <= 1e-4
    assert any(name.startswith("pipeline") for name, _, _ in results)
    assert affectseq.lr_schedule(100, 1100, 100, 3e-5) == pytest.approx(3e-5)
    assert affectseq.fold_of("a") == 1
