import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import gamma_desk.detection.model as model_mod
from gamma_desk.attention import sea_forward
from gamma_desk.data import synth_detection_set
from gamma_desk.detection import (
    AttentiveDetector, DetectorConfig, DetectorModel, DetectorTrainingAborted, anchor_records,
    backbone_forward, clip_boxes, decode_deltas, detection_head, encode_deltas, generate_anchors, infer, lr_at,
    nms, roi_align, rpn_forward, train_detector,
)
from gamma_desk.metrics import iou
from gamma_desk.tensor import ContractError, Parameter, gradient_check, load_checkpoint, ops


def bilinear(fmap, y, x):
    """Scalar reference: bilinear read of a 2-D map with edge clamping."""
    h, w = fmap.shape
    y, x = min(max(y, 0.0), h - 1), min(max(x, 0.0), w - 1)
    y0, x0 = int(np.floor(y)), int(np.floor(x))
    y1, x1 = min(y0 + 1, h - 1), min(x0 + 1, w - 1)
    ly, lx = y - y0, x - x0
    return ((1 - ly) * (1 - lx) * fmap[y0, x0] + (1 - ly) * lx * fmap[y0, x1]
            + ly * (1 - lx) * fmap[y1, x0] + ly * lx * fmap[y1, x1])


@pytest.fixture(scope="module")
def small_model():
    return DetectorModel(DetectorConfig(seed=0))


class TestBackbone:
    def test_shape(self, small_model):
        f1 = backbone_forward(np.zeros((2, 64, 64, 3)), small_model)
        assert f1.shape == (2, 32, 8, 8)

    def test_zero_input_zero_bias(self):
        m = DetectorModel(DetectorConfig())
        for conv in m.backbone.layers:
            conv.bias.data[:] = 0.0
        assert not backbone_forward(np.zeros((1, 64, 64, 3)), m).data.any()

    def test_deterministic(self, small_model):
        x = np.random.default_rng(0).uniform(-1, 1, (1, 64, 64, 3))
        other = DetectorModel(DetectorConfig(seed=0))
        assert np.array_equal(backbone_forward(x, small_model).data, backbone_forward(x, other).data)

    def test_size_mismatch(self, small_model):
        with pytest.raises(ContractError):
            backbone_forward(np.zeros((1, 32, 32, 3)), small_model)


class TestAnchors:
    def test_count(self, small_model):
        assert small_model.anchors.shape == (8 * 8 * 9, 4)
        assert len(generate_anchors(5, 7, 8, (10.0, 20.0), (1.0,))) == 5 * 7 * 2

    def test_area_and_aspect(self):
        recs = anchor_records(2, 2, 8)
        for r in recs:
            scale = (12.0, 20.0, 32.0)[r.scale_index]
            assert r.width * r.height == pytest.approx(scale ** 2, rel=1e-12)
            assert r.height / r.width == pytest.approx((0.5, 1.0, 2.0)[r.aspect_index], rel=1e-12)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(1, 6), st.integers(1, 6), st.sampled_from([4, 8, 16]), st.integers(-3, 3), st.integers(-3, 3))
    def test_translation_consistent(self, h, w, stride, kx, ky):
        base = generate_anchors(h, w, stride)
        shifted = generate_anchors(h, w, stride, origin=(kx * stride, ky * stride))
        shift = np.tile([kx * stride, ky * stride] * 2, (len(base), 1))
        assert np.abs(shifted - base - shift).max() <= 1e-12
        centres = lambda a: (a[:, :2] + a[:, 2:]) / 2  # noqa: E731
        assert np.abs(centres(shifted) - centres(base) - shift[:, :2]).max() <= 1e-12


class TestRpn:
    def test_proposals_in_bounds(self, small_model):
        x = np.random.default_rng(1).uniform(-1, 1, (2, 64, 64, 3))
        sa = backbone_forward(x, small_model)
        props, loss = rpn_forward(sa, small_model.anchors, None, small_model)
        assert loss is None and len(props) == 2
        for boxes, scores in props:
            assert 0 < len(boxes) <= 64
            assert np.all(boxes >= 0) and np.all(boxes <= 64)
            assert np.all(boxes[:, 2] > boxes[:, 0]) and np.all(boxes[:, 3] > boxes[:, 1])

    def test_anchor_grid_mismatch(self, small_model):
        sa = backbone_forward(np.zeros((1, 64, 64, 3)), small_model)
        with pytest.raises(ContractError):
            rpn_forward(sa, small_model.anchors[:10], None, small_model)

    def test_no_positive_anchors(self, small_model):
        sa = backbone_forward(np.zeros((1, 64, 64, 3)), small_model)
        _, loss = rpn_forward(sa, small_model.anchors, [np.zeros((0, 5))], small_model)
        assert np.isfinite(loss.data) and loss.data > 0


class TestRoiAlign:
    @pytest.mark.parametrize("out", [(1, 1), (2, 3), (4, 4)])
    def test_constant_map(self, out):
        feats = np.full((2, 3, 6, 6), 2.5)
        rois = [[0, 0.3, 1.1, 5.2, 4.0], [1, 2.0, 2.0, 2.5, 9.0]]
        assert np.allclose(roi_align(feats, rois, out).data, 2.5, atol=1e-14)

    def test_exact_cover_bin_centres(self):
        fmap = np.random.default_rng(0).normal(size=(4, 4))
        pooled = roi_align(fmap[None, None], [[0, 1.0, 1.0, 3.0, 3.0]], (2, 2), sampling=1).data[0, 0]
        # bin centres of a 2x2 RoI over pixels 1..2 land on those pixel centres
        assert np.abs(pooled - fmap[1:3, 1:3]).max() < 1e-12

    def test_bilinear_oracle(self):
        rng = np.random.default_rng(1)
        fmap = rng.normal(size=(5, 6))
        roi = np.array([0, 0.7, 1.3, 4.9, 3.6])
        for s in (1, 2, 3):
            got = roi_align(fmap[None, None], [roi], (2, 2), spatial_scale=1.0, sampling=s).data[0, 0]
            x0, y0, x1, y1 = roi[1:] - 0.5
            bw, bh = (x1 - x0) / 2, (y1 - y0) / 2
            for i in range(2):
                for j in range(2):
                    vals = [bilinear(fmap, y0 + (i + (a + 0.5) / s) * bh, x0 + (j + (b + 0.5) / s) * bw)
                            for a in range(s) for b in range(s)]
                    assert abs(got[i, j] - np.mean(vals)) < 1e-12

    def test_gradient(self):
        rng = np.random.default_rng(2)
        feats = Parameter(rng.normal(size=(2, 3, 5, 5)))
        rois = [[0, 0.5, 0.5, 4.0, 3.2], [1, 1.2, 0.1, 4.9, 4.9], [0, -1.0, 2.0, 2.0, 7.0]]
        w = rng.normal(size=(3, 3, 2, 2))
        err = gradient_check(lambda: ops.sum(roi_align(feats, rois, (2, 2), 1.0, 2) * w), [feats])
        assert err < 1e-4

    def test_zero_area(self):
        with pytest.raises(ContractError, match="RoI 1"):
            roi_align(np.zeros((1, 1, 4, 4)), [[0, 0, 0, 2, 2], [0, 1, 1, 1, 3]])


class TestHeadAndDeltas:
    def test_rows_sum_to_one(self, small_model):
        pooled = np.random.default_rng(0).normal(size=(7, 32, 4, 4))
        from gamma_desk.tensor import Tensor

        probs, deltas = detection_head(Tensor(pooled), small_model)
        assert probs.shape == (7, 4) and deltas.shape == (7, 3, 4)
        assert np.abs(probs.data.sum(axis=1) - 1).max() <= 1e-12

    def test_empty(self, small_model):
        from gamma_desk.tensor import Tensor

        with pytest.raises(ContractError):
            detection_head(Tensor(np.zeros((0, 32, 4, 4))), small_model)

    def test_zero_delta_identity(self):
        boxes = np.array([[1.0, 2.0, 5.0, 9.0], [0.0, 0.0, 64.0, 64.0]])
        assert np.allclose(decode_deltas(boxes, np.zeros((2, 4)), (10, 10, 5, 5)), boxes, atol=1e-12)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 10_000))
    def test_round_trip(self, seed):
        rng = np.random.default_rng(seed)
        lo = rng.uniform(0, 50, (6, 2))
        a = np.concatenate([lo, lo + rng.uniform(1, 30, (6, 2))], axis=1)
        lo = rng.uniform(0, 50, (6, 2))
        b = np.concatenate([lo, lo + rng.uniform(1, 30, (6, 2))], axis=1)
        d = encode_deltas(a, b, (10, 10, 5, 5))
        assert np.abs(decode_deltas(a, d, (10, 10, 5, 5)) - b).max() < 1e-9

    def test_clip(self):
        assert np.array_equal(clip_boxes(np.array([[-3.0, 5.0, 70.0, 80.0]]), 64, 60), [[0, 5, 60, 64]])


class TestNms:
    def test_single(self):
        assert nms(np.array([[0, 0, 2, 2]]), np.array([0.3]), 0.5).tolist() == [0]

    def test_identical_pair(self):
        boxes = np.array([[0, 0, 4, 4], [0, 0, 4, 4]], dtype=float)
        assert nms(boxes, np.array([0.8, 0.9]), 0.5).tolist() == [1]

    def test_disjoint_kept_in_score_order(self):
        boxes = np.array([[0, 0, 2, 2], [5, 5, 7, 7], [9, 9, 10, 10]], dtype=float)
        assert nms(boxes, np.array([0.2, 0.9, 0.5]), 0.5).tolist() == [1, 2, 0]

    def test_empty(self):
        assert nms(np.zeros((0, 4)), np.zeros(0), 0.5).tolist() == []

    def test_bad_threshold(self):
        with pytest.raises(ValueError):
            nms(np.zeros((1, 4)), np.zeros(1), 1.5)

    def test_large_random_vs_reference(self):
        from test_metrics import random_box, reference_nms

        rng = np.random.default_rng(5)
        for _ in range(20):
            n = int(rng.integers(50, 101))
            boxes = np.array([random_box(rng, 30) for _ in range(n)])
            scores = rng.random(n)
            assert nms(boxes, scores, 0.4).tolist() == reference_nms(boxes, scores, 0.4)


class TestSchedule:
    def test_boundary(self):
        cfg = DetectorConfig(lr_boundary=1600, iterations=3600)
        assert lr_at(0, cfg) == 1e-3 and lr_at(1599, cfg) == 1e-3
        assert lr_at(1600, cfg) == 1e-4 and lr_at(3599, cfg) == 1e-4

    def test_trace(self):
        samples = synth_detection_set(0, 4)
        est = AttentiveDetector(iterations=6, lr_boundary=3, random_state=0).fit(samples)
        assert est.lr_trace_ == [1e-3] * 3 + [1e-4] * 3
        assert len(est.loss_trace_) == 6

    @pytest.mark.parametrize("kw", [{"lr_boundary": 5000}, {"batch_size": 0}, {"image_size": 60}])
    def test_config_validation(self, kw):
        with pytest.raises(ContractError):
            DetectorConfig(**kw)


@pytest.fixture(scope="module")
def overfit_runs():
    """Single-image, 200-step training traces for three seeds."""
    runs = []
    for seed in range(3):
        sample = synth_detection_set(seed, 1, tag="overfit")
        cfg = DetectorConfig(iterations=200, lr_boundary=200, hflip=False, seed=seed)
        runs.append(train_detector(sample, DetectorModel(cfg)).loss)
    return runs


def _tail_ratio(trace, key):
    """Mean of the last five steps over the first step; smooths sampling noise in the RPN/RoI draws."""
    series = [rec[key] if isinstance(key, str) else sum(rec[k] for k in key) for rec in trace]
    return float(np.mean(series[-5:]) / series[0])


def test_rpn_single_image_overfit(overfit_runs):
    ratios = [_tail_ratio(t, ("rpn_cls", "rpn_reg")) for t in overfit_runs]
    assert np.median(ratios) < 0.10


def test_ldet_single_sample_overfit(overfit_runs):
    ratios = [_tail_ratio(t, "total") for t in overfit_runs]
    assert np.median(ratios) <= 0.10


def test_ten_image_overfit_map():
    samples = synth_detection_set(11, 10, tag="overfit10")
    est = AttentiveDetector(iterations=1500, lr_boundary=1200, hflip=False, random_state=0).fit(samples)
    assert est.score(samples) == 1.0


class TestInference:
    def test_uniform_head_is_silent(self):
        m = DetectorModel(DetectorConfig())
        m.head.cls.weight.data[:] = 0.0
        m.head.cls.bias.data[:] = 0.0
        img = np.random.default_rng(0).uniform(-1, 1, (64, 64, 3))
        assert infer(img, m, score_threshold=0.9) == []

    def test_sorted_and_clipped(self, small_model):
        img = np.random.default_rng(0).uniform(-1, 1, (64, 64, 3))
        dets = infer(img, small_model, score_threshold=0.0)
        assert dets
        conf = [d.confidence for d in dets]
        assert conf == sorted(conf, reverse=True)
        for d in dets:
            assert 0 <= d.box[0] < d.box[2] <= 64 and 0 <= d.box[1] < d.box[3] <= 64

    def test_gamma_zero_matches_no_sea_build(self):
        img = np.random.default_rng(3).uniform(-1, 1, (64, 64, 3))
        with_sea = DetectorModel(DetectorConfig(use_sea=True, seed=4))
        without = DetectorModel(DetectorConfig(use_sea=False, seed=4))
        a = infer(img, with_sea, score_threshold=0.0)
        b = infer(img, without, score_threshold=0.0)
        assert a == b and len(a) > 0

    def test_non_finite_input(self, small_model):
        est = AttentiveDetector().build()
        bad = np.zeros((64, 64, 3))
        bad[0, 0, 0] = np.inf
        from gamma_desk.tensor import NonFiniteError

        with pytest.raises(NonFiniteError):
            est.predict(bad)


def test_non_finite_loss_aborts_and_keeps_checkpoint(tmp_path, monkeypatch):
    real = model_mod.detection_loss
    calls = {"n": 0}

    def poisoned(*args, **kwargs):
        losses = real(*args, **kwargs)
        calls["n"] += 1
        if calls["n"] == 3:
            losses["total"] = losses["total"] * np.nan
        return losses

    monkeypatch.setattr(model_mod, "detection_loss", poisoned)
    m = DetectorModel(DetectorConfig(iterations=5, lr_boundary=5, checkpoint_every=1))
    with pytest.raises(DetectorTrainingAborted, match="iteration 2"):
        train_detector(synth_detection_set(0, 4), m, tmp_path)
    assert sorted(p.name for p in tmp_path.iterdir()) == ["iter_000001.ckpt", "iter_000002.ckpt"]
    saved = load_checkpoint(tmp_path / "iter_000002.ckpt")
    state = m.state_dict()
    assert all(np.array_equal(saved[k], state[k]) for k in state)


def test_save_load_round_trip(tmp_path):
    samples = synth_detection_set(0, 4)
    est = AttentiveDetector(iterations=3, lr_boundary=2, random_state=1).fit(samples)
    est.save(tmp_path)
    back = AttentiveDetector.load(tmp_path)
    assert back.get_params() == {**est.get_params(), "checkpoint_dir": None}
    assert back.predict(samples) == est.predict(samples)


def _single_object(samples):
    return [s for s in samples if len(s.annotations) == 1]


def _one_correct_detection(sample, model):
    dets = infer(sample.image, model, score_threshold=0.5)
    gt = sample.annotations[0]
    return len(dets) == 1 and dets[0].class_id == int(gt[4]) and iou(dets[0].box, gt[:4]) >= 0.5


def _heatmap_peak_inside(sample, model):
    from gamma_desk.attention import heatmap

    out = sea_forward(backbone_forward(sample.image, model), model.sea.params)
    h = heatmap(out.at_map.data[0], 64, 64)
    y, x = np.unravel_index(np.argmax(h), h.shape)
    x0, y0, x1, y1 = sample.annotations[0, :4]
    return bool(x0 <= x + 0.5 <= x1 and y0 <= y + 0.5 <= y1)


class TestTrained:
    def test_one_object_held_out(self, trained_detector, detection_split):
        single = _single_object(detection_split[1])
        assert _one_correct_detection(single[0], trained_detector.model_)
        rate = np.mean([_one_correct_detection(s, trained_detector.model_) for s in single])
        assert rate >= 0.9

    def test_heatmap_peaks_inside_object(self, trained_detector, detection_split):
        single = _single_object(detection_split[1])
        assert _heatmap_peak_inside(single[0], trained_detector.model_)
        rate = np.mean([_heatmap_peak_inside(s, trained_detector.model_) for s in single])
        assert rate >= 0.8
