"""End-to-end smoke tests for the python module."""

import math

import numpy as np
import pytest

import pepnet


def sorted_cloud(rng, n):
    c = rng.uniform(0.0, 1.0, size=(n, 3))
    c[:, 2] = np.sort(c[:, 2])
    return c


def test_event_text_round_trip():
    text = "0.000001 5 7 1\n0.000002 6 7 0\n# comment\n"
    ev = pepnet.parse_events(text, width=240, height=180)
    assert ev.shape == (2, 4)
    assert ev[0].tolist() == [1, 5, 7, 1]
    assert pepnet.parse_events(pepnet.write_events(ev)).tolist() == ev.tolist()
    with pytest.raises(RuntimeError):
        pepnet.parse_events("0.1 999 0 1\n", width=240, height=180)


def test_pose_parsing_normalizes():
    poses = pepnet.parse_poses("0.0 0 0 0 0 0 0 2\n")
    assert poses.shape == (1, 8)
    assert poses[0, 4:].tolist() == [1.0, 0.0, 0.0, 0.0]


def test_windows_partition_the_stream():
    ev, poses = pepnet.synth_scene(landmarks=48, duration_us=1_000_000, seed=3)
    windows = pepnet.segment_windows(ev, chunk_us=1000, n_p=200)
    assert len(windows) > 2
    prev_end = 0
    for begin, end, n_chunks in windows:
        assert begin == prev_end  # windows are consecutive
        assert end - begin > 200
        assert n_chunks >= 1
        prev_end = end
    assert poses.shape[1] == 8


def test_build_clouds_contract():
    ev, poses = pepnet.synth_scene(landmarks=48, duration_us=1_000_000, seed=5)
    clouds, targets, quats, ids = pepnet.build_clouds(ev, poses, chunk_us=1000, n_p=200, n_sample=64, seed=9)
    assert clouds.shape[1:] == (64, 3)
    assert targets.shape == (clouds.shape[0], 6)
    assert quats.shape == (clouds.shape[0], 4)
    assert len(ids) == clouds.shape[0]
    assert clouds.min() >= 0.0 and clouds.max() <= 1.0
    assert all(np.all(np.diff(c[:, 2]) >= 0) for c in clouds)  # chronological rows
    again, _, _, _ = pepnet.build_clouds(ev, poses, chunk_us=1000, n_p=200, n_sample=64, seed=9)
    np.testing.assert_array_equal(clouds, again)


def fps_reference(c, n_out):
    picked = [0]
    d = ((c - c[0]) ** 2).sum(-1)
    for _ in range(n_out - 1):
        i = int(np.argmax(d))  # first occurrence = lowest-index tie-break
        picked.append(i)
        d = np.minimum(d, ((c - c[i]) ** 2).sum(-1))
    return sorted(picked)


def test_point_kernels_match_numpy_reference():
    rng = np.random.default_rng(11)
    c = sorted_cloud(rng, 40)
    idx = pepnet.farthest_point_sample(c, 12)
    assert idx.tolist() == fps_reference(c, 12)
    assert len(np.unique(idx)) == 12

    groups = pepnet.knn_group(c, idx, 5)
    d2 = ((c[None, :, :] - c[idx][:, None, :]) ** 2).sum(-1)
    for gi in range(len(idx)):
        got = set(groups[gi].tolist())
        order = np.lexsort((np.arange(40), np.where(np.arange(40) == idx[gi], -1.0, d2[gi])))
        assert got == set(order[:5].tolist())

    rel = rng.normal(size=(6, 3))
    out = pepnet.standardize_group(rel)
    flat = rel.reshape(-1)
    std = flat.std(ddof=1)
    np.testing.assert_allclose(out, rel / (std + 1e-8), rtol=1e-12)


def test_split_modes():
    train, test = pepnet.make_split(10, mode="novel")
    assert train == list(range(7)) and test == [7, 8, 9]
    tr_a, te_a = pepnet.make_split(25, mode="random", seed=4)
    tr_b, te_b = pepnet.make_split(25, mode="random", seed=4)
    assert tr_a == tr_b and te_a == te_b
    assert sorted(tr_a + te_a) == list(range(25))


def test_model_forward_shapes_and_attention():
    cfg = dict(n_points=64, stage_points=[32, 16], stage_dims=[8, 16], k_neighbors=8, regressor_hidden=8)
    model = pepnet.Model(cfg, seed=3)
    rng = np.random.default_rng(7)
    clouds = np.stack([sorted_cloud(rng, 64) for _ in range(3)])
    out = model.predict(clouds)
    assert out.shape == (3, 6)
    assert np.isfinite(out).all()

    trace = model.attention_trace(clouds[0])
    assert trace.shape == (16,)
    assert math.isclose(float(trace.sum()), 1.0, abs_tol=1e-5)

    with pytest.raises(RuntimeError):
        pepnet.Model(dict(bogus_key=1))


def test_parameter_counts():
    standard = pepnet.count_parameters({})
    tiny = pepnet.count_parameters(dict(stage_dims=[16, 32, 64]))
    assert 550_000 <= standard <= 1_000_000
    assert 45_000 <= tiny <= 85_000
    assert 0.06 <= tiny / standard <= 0.10


def test_checkpoint_round_trip(tmp_path):
    cfg = dict(n_points=64, stage_points=[32, 16], stage_dims=[8, 16], k_neighbors=8, regressor_hidden=8)
    model = pepnet.Model(cfg, seed=5)
    rng = np.random.default_rng(13)
    cloud = sorted_cloud(rng, 64)
    before = model.predict(cloud)
    path = str(tmp_path / "model.pepw")
    model.save(path)
    loaded = pepnet.Model.load(path)
    np.testing.assert_array_equal(before, loaded.predict(cloud))
    assert loaded.config()["stage_dims"] == [8, 16]


def test_training_reduces_loss():
    cfg = dict(n_points=48, stage_points=[24, 12], stage_dims=[8, 16], k_neighbors=6, regressor_hidden=8)
    model = pepnet.Model(cfg, seed=9)
    rng = np.random.default_rng(17)
    clouds = np.stack([sorted_cloud(rng, 48) for _ in range(8)])
    # learnable targets: linear in the cloud centroid
    mean = clouds.mean(axis=1)
    targets = np.concatenate([mean - 0.5, 0.4 * (mean[:, [1, 2, 0]] - 0.5)], axis=1)
    curve = model.train_on(clouds, targets, epochs=40, batch_size=4, lr=3e-3, seed=2)
    assert curve[-1] < 0.5 * curve[0]

    quats = np.zeros((8, 4))
    quats[:, 0] = 1.0
    report = model.evaluate_on(clouds, targets, quats)
    assert report["median_trans_m"] >= 0.0
    assert len(report["per_window"]) == 8
