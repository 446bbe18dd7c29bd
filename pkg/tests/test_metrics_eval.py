import csv

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from evflow.data import SequenceSource, SyntheticSource, open_dataset, windows, write_sequence
from evflow.evaluate import evaluate
from evflow.events import normalize_timestamps, slice_stream
from evflow.metrics import UndefinedMetricError, aee, eval_mask, fwl, outlier_rate, rsat
from evflow.model import EVMGRFlowNet, ModelConfig
from evflow.synth import GroundTruthFlow, generate, translation_scene
from evflow.viz import flow_to_rgb, visualize_flow

from helpers import volume


def const(u, v, size=(4, 4)):
    f = np.zeros((2, *size))
    f[0], f[1] = u, v
    return f


def gt_field(u, v, size=(4, 4)):
    return GroundTruthFlow(np.stack([np.full(size, u), np.full(size, v)], -1), np.ones(size, bool))


FULL = np.ones((4, 4), bool)


def test_aee_examples():
    assert aee(const(1, 0), gt_field(0, 0), FULL) == 1.0
    assert aee(const(2, 3), gt_field(2, 3), FULL) == 0.0
    one = np.zeros((4, 4), bool)
    one[1, 2] = True
    assert aee(const(3, 4), gt_field(0, 0), one) == 5.0


def test_empty_mask_is_undefined():
    with pytest.raises(UndefinedMetricError):
        aee(const(0, 0), gt_field(0, 0), np.zeros((4, 4), bool))
    with pytest.raises(UndefinedMetricError):
        outlier_rate(const(0, 0), gt_field(0, 0), np.zeros((4, 4), bool))


def test_outlier_examples():
    assert outlier_rate(const(14, 0), gt_field(10, 0), FULL) == 100.0  # EE 4 > 3 and > 0.5
    assert outlier_rate(const(12.9, 0), gt_field(10, 0), FULL) == 0.0  # EE 2.9
    assert outlier_rate(const(104, 0), gt_field(100, 0), FULL) == 0.0  # EE 4 < 5


@settings(max_examples=40, deadline=None)
@given(st.floats(-5, 5), st.floats(-5, 5), st.floats(-5, 5), st.floats(-5, 5))
def test_aee_translation_invariant(a, b, c, d):
    rng = np.random.default_rng(1)
    pred = rng.normal(size=(2, 4, 4))
    gt = GroundTruthFlow(rng.normal(size=(4, 4, 2)), FULL)
    shifted = GroundTruthFlow(gt.u + np.array([c, d]), FULL)
    base = aee(pred, gt, FULL)
    assert aee(pred + np.array([c, d]).reshape(2, 1, 1), shifted, FULL) == pytest.approx(base, abs=1e-9)


def test_outlier_monotone_in_threshold():
    rng = np.random.default_rng(2)
    pred = rng.normal(scale=4, size=(2, 4, 4))
    gt = gt_field(0, 0)
    rates = [outlier_rate(pred, gt, FULL, threshold=t) for t in (1, 2, 3, 4, 6)]
    assert all(0 <= r <= 100 for r in rates)
    assert rates == sorted(rates, reverse=True)


def test_eval_mask_requires_event():
    gt = gt_field(1, 0)
    v = volume([1], [2], [0.5], [1], (4, 4))
    m = eval_mask(gt, v)
    assert m.sum() == 1 and m[2, 1]


@pytest.fixture
def scene_volume():
    rng = np.random.default_rng(5)
    s = generate(translation_scene(rng, flow_per_volume=(2.0, -1.0), num_volumes=3))
    return normalize_timestamps(slice_stream(s.events, 0.05)[1])


def test_fwl_rsat_identity(scene_volume):
    assert fwl(scene_volume, None) == 1.0
    assert rsat(scene_volume, np.zeros((2, 64, 64))) == 1.0


def test_fwl_rsat_gt(scene_volume):
    gt = const(2.0, -1.0, (64, 64))
    assert fwl(scene_volume, gt) > 1
    assert rsat(scene_volume, gt) < 1
    assert rsat(scene_volume, gt) < rsat(scene_volume, 0.5 * gt)
    scrambled = np.random.default_rng(0).uniform(-5, 5, (2, 64, 64))
    assert fwl(scene_volume, scrambled) < fwl(scene_volume, gt)


def test_fwl_undefined_on_flat_volume():
    with pytest.raises(UndefinedMetricError):
        fwl(volume([], [], [], [], (4, 4)), None)


# --- evaluation harness ------------------------------------------------------------


def source(seed=3, flow=(1.5, 0.5), n=8):
    rng = np.random.default_rng(seed)
    spec = translation_scene(rng, flow_per_volume=flow, num_volumes=n)
    return SyntheticSource(f"s{seed}", generate(spec), 0.05, n)


def gt_predictor(src, m=1):
    return lambda vols: (src.ground_truth(k, m).chw for k in range(len(vols)))


def test_gt_as_prediction_scores_zero():
    src = source()
    assert isinstance(src, SequenceSource)
    report = evaluate(None, [src], 1, predictor=gt_predictor(src))
    assert report.mean("aee") == 0 and report.mean("outlier_pct") == 0
    assert report.mean("fwl") > 1 and report.mean("rsat") < 1


def test_interval_multiplier_scales_gt():
    src = source()
    a = src.ground_truth(0, 1)
    b = src.ground_truth(0, 4)
    np.testing.assert_allclose(b.u[b.valid_mask][0], 4 * a.u[a.valid_mask][0])
    assert len(src.volumes(4)) == 2
    with pytest.raises(ValueError):
        evaluate(None, [src], 2, predictor=gt_predictor(src))


def test_untrained_model_aee_close_to_gt_magnitude():
    torch.manual_seed(7)
    src = source()
    report = evaluate(EVMGRFlowNet(ModelConfig.profile("toy")), [src], 1)
    assert report.mean("aee") == pytest.approx(np.hypot(1.5, 0.5), rel=0.1)


def test_report_csv(tmp_path):
    src = source()
    report = evaluate(None, [src], 1, predictor=gt_predictor(src))
    report.write_csv(tmp_path / "m.csv")
    rows = list(csv.reader(open(tmp_path / "m.csv")))
    assert rows[0] == ["sequence", "volume_index", "aee", "outlier_pct", "fwl", "rsat"]
    assert rows[-1][0] == "mean" and len(rows) == 8 + 2


def test_directory_round_trip_and_missing_gt(tmp_path):
    src = source()
    write_sequence(tmp_path / "ds" / "a", src)
    (loaded,) = open_dataset(tmp_path / "ds")
    assert len(loaded.volumes()) == len(src.volumes())
    np.testing.assert_allclose(loaded.events.x, src.scene.events.x)
    np.testing.assert_allclose(loaded.ground_truth(2).u, src.ground_truth(2).u)
    # without scene.json and flow files only FWL/RSAT remain
    (tmp_path / "ds" / "a" / "scene.json").unlink()
    for f in (tmp_path / "ds" / "a").glob("flow_*.flo"):
        f.unlink()
    (bare,) = open_dataset(tmp_path / "ds")
    report = evaluate(None, [bare], 1, predictor=lambda vols: (np.zeros((2, 64, 64)) for _ in vols))
    assert not report.has_ground_truth
    assert report.mean("fwl") == 1.0


def test_binary_directory_uses_pixel_events(tmp_path):
    src = source()
    write_sequence(tmp_path / "b", src, text=False)
    (loaded,) = open_dataset(tmp_path / "b")
    assert not loaded.events.subpixel


def test_windows():
    assert [w for w in windows(list(range(7)), 3)] == [[0, 1, 2], [3, 4, 5]]


# --- visualization -------------------------------------------------------------------


def test_viz_zero_is_black():
    assert flow_to_rgb(np.zeros((2, 4, 4))).max() == 0


def test_viz_uniform_single_hue():
    img = flow_to_rgb(const(1.0, 0.5))
    assert len({tuple(p) for p in img.reshape(-1, 3)}) == 1


def test_viz_opposite_hues():
    import colorsys

    a = flow_to_rgb(const(1.0, 0.0))[0, 0] / 255
    b = flow_to_rgb(const(-1.0, 0.0))[0, 0] / 255
    ha, hb = colorsys.rgb_to_hsv(*a)[0], colorsys.rgb_to_hsv(*b)[0]
    assert abs(ha - hb) == pytest.approx(0.5, abs=0.01)


def test_viz_writes_png(tmp_path):
    visualize_flow(const(1.0, 2.0), tmp_path / "f.png")
    assert (tmp_path / "f.png").read_bytes()[:4] == b"\x89PNG"
    with pytest.raises(ValueError):
        flow_to_rgb(np.full((2, 2, 2), np.nan))
