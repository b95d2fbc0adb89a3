import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gamma_desk.data import synth_domain_pair
from gamma_desk.detection import Detection, nms
from gamma_desk.metrics import (
    GaussianStats, NumericDomainError, RandomConvEncoder, average_precision, embed_images,
    evaluate_detections, fid, fid_between, fit_gaussian, iou, iou_matrix, matrix_sqrt, mean_ap,
)
from gamma_desk.tensor import ContractError


# --- reference implementations --------------------------------------------

def raster_iou(a, b, res=1):
    """IoU by counting unit cells; exact for integer boxes."""
    lo = int(min(a[0], b[0], a[1], b[1]))
    hi = int(max(a[2], b[2], a[3], b[3]))
    ys, xs = np.mgrid[lo:hi, lo:hi] + 0.5
    ina = (xs > a[0]) & (xs < a[2]) & (ys > a[1]) & (ys < a[3])
    inb = (xs > b[0]) & (xs < b[2]) & (ys > b[1]) & (ys < b[3])
    union = (ina | inb).sum()
    return (ina & inb).sum() / union


def reference_nms(boxes, scores, thr):
    """Quadratic NMS: a box survives iff no kept, higher-ranked box overlaps it above thr."""
    n = len(boxes)
    rank = sorted(range(n), key=lambda i: (-scores[i], *boxes[i]))
    kept = []
    for i in rank:
        if all(iou(boxes[i], boxes[j]) <= thr for j in kept):
            kept.append(i)
    return kept


def reference_ap(scores, boxes, gts, thr):
    """Exhaustive AP: explicit PR list, precision envelope by max over later points."""
    order = sorted(range(len(scores)), key=lambda i: (-scores[i], i))
    used = [False] * len(gts)
    hits = []
    for i in order:
        best, best_j = -1.0, -1
        for j, g in enumerate(gts):
            if used[j]:
                continue
            o = iou(boxes[i], g)
            if o > best:
                best, best_j = o, j
        if best_j >= 0 and best >= thr:
            used[best_j] = True
            hits.append(1)
        else:
            hits.append(0)
    if not gts:
        return 0.0 if scores else None
    points = []
    tp = 0
    for k, h in enumerate(hits, start=1):
        tp += h
        points.append((tp / len(gts), tp / k))
    area, prev_r = 0.0, 0.0
    for r, _ in points:
        if r > prev_r:
            env = max(p for rr, p in points if rr >= r)
            area += (r - prev_r) * env
            prev_r = r
    return area


def random_box(rng, size=20):
    x0, y0 = rng.integers(0, size - 1, size=2)
    x1 = rng.integers(x0 + 1, size + 1)
    y1 = rng.integers(y0 + 1, size + 1)
    return np.array([x0, y0, x1, y1], dtype=np.float64)


# --- FID ------------------------------------------------------------------

class TestGaussian:
    def test_identical_vectors(self):
        s = fit_gaussian(np.tile([1.0, -2.0, 3.0], (5, 1)))
        assert np.array_equal(s.mean, [1.0, -2.0, 3.0])
        assert not s.cov.any()

    def test_hand_covariance(self):
        s = fit_gaussian([[0.0, 0.0], [2.0, 0.0]])
        assert np.array_equal(s.mean, [1.0, 0.0])
        assert np.array_equal(s.cov, [[2.0, 0.0], [0.0, 0.0]])

    def test_symmetric(self):
        x = np.random.default_rng(0).normal(size=(50, 12))
        c = fit_gaussian(x).cov
        assert np.abs(c - c.T).max() <= 1e-12

    def test_too_few(self):
        with pytest.raises(ContractError):
            fit_gaussian([[1.0, 2.0]])


class TestMatrixSqrt:
    def test_identity(self):
        assert np.allclose(matrix_sqrt(np.eye(4)), np.eye(4), atol=1e-15)

    def test_diagonal(self):
        assert np.allclose(matrix_sqrt(np.diag([4.0, 9.0])), np.diag([2.0, 3.0]), atol=1e-14)

    @pytest.mark.parametrize("n", [1, 2, 5, 16, 64])
    def test_reconstruction(self, n):
        b = np.random.default_rng(n).normal(size=(n, n))
        a = b @ b.T
        s = matrix_sqrt(a)
        assert np.linalg.norm(s @ s - a) / np.linalg.norm(a) < 1e-8

    def test_rejects_indefinite(self):
        with pytest.raises(NumericDomainError):
            matrix_sqrt(np.diag([1.0, -1.0]))


class TestFid:
    def test_self_distance(self):
        x = np.random.default_rng(1).normal(size=(40, 6))
        s = fit_gaussian(x)
        assert fid(s, s) <= 1e-8

    def test_mean_shift(self):
        a = GaussianStats(np.zeros(2), np.eye(2), 10)
        b = GaussianStats(np.array([1.0, 0.0]), np.eye(2), 10)
        assert abs(fid(a, b) - 1.0) < 1e-8

    def test_commuting_covariances(self):
        a = GaussianStats(np.zeros(2), 4 * np.eye(2), 10)
        b = GaussianStats(np.zeros(2), np.eye(2), 10)
        assert abs(fid(a, b) - 2.0) < 1e-8

    def test_symmetric(self):
        rng = np.random.default_rng(3)
        a = fit_gaussian(rng.normal(size=(30, 5)))
        b = fit_gaussian(rng.normal(1.0, 2.0, size=(30, 5)))
        assert abs(fid(a, b) - fid(b, a)) < 1e-8

    def test_dimension_mismatch(self):
        with pytest.raises(ContractError):
            fid(GaussianStats(np.zeros(2), np.eye(2), 2), GaussianStats(np.zeros(3), np.eye(3), 2))


class TestEncoder:
    def test_deterministic_and_ordered(self):
        x, _ = synth_domain_pair(0, 6, 0, 32)
        enc = RandomConvEncoder().fit()
        e1 = embed_images(x.images, enc)
        e2 = embed_images(x.images[::-1], RandomConvEncoder().fit())
        assert e1.shape == (6, enc.n_features_out_)
        assert np.array_equal(e1, e2[::-1])

    def test_separates_domains(self):
        x, y = synth_domain_pair(5, 120, 60, 32)
        enc = RandomConvEncoder().fit()
        within = fid_between(x.images[:60], x.images[60:], enc)
        across = fid_between(x.images[:60], y.images, enc)
        assert within < across


# --- IoU ------------------------------------------------------------------

class TestIou:
    def test_identical(self):
        assert iou([1, 2, 5, 7], [1, 2, 5, 7]) == 1.0

    def test_disjoint(self):
        assert iou([0, 0, 1, 1], [2, 2, 3, 3]) == 0.0

    def test_hand_value(self):
        assert iou([0, 0, 10, 10], [5, 5, 15, 15]) == pytest.approx(1 / 7, abs=1e-15)

    def test_degenerate(self):
        with pytest.raises(ContractError):
            iou([0, 0, 0, 4], [0, 0, 1, 1])

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 10_000), st.floats(0.01, 100.0))
    def test_symmetric_scale_invariant(self, seed, s):
        rng = np.random.default_rng(seed)
        a, b = random_box(rng), random_box(rng)
        assert iou(a, b) == iou(b, a)
        assert abs(iou(a * s, b * s) - iou(a, b)) < 1e-12

    def test_matrix_matches_scalar(self):
        rng = np.random.default_rng(9)
        a = np.array([random_box(rng) for _ in range(7)])
        b = np.array([random_box(rng) for _ in range(5)])
        m = iou_matrix(a, b)
        for i in range(7):
            for j in range(5):
                assert m[i, j] == pytest.approx(iou(a[i], b[j]), abs=1e-15)


# --- AP -------------------------------------------------------------------

class TestAveragePrecision:
    GT = np.array([[0.0, 0.0, 10.0, 10.0]])

    def test_perfect(self):
        assert average_precision([(0.9, [0, 0, 10, 10])], self.GT) == 1.0

    def test_tp_above_fp(self):
        assert average_precision([(0.9, [0, 0, 10, 10]), (0.8, [50, 50, 60, 60])], self.GT) == 1.0

    def test_fp_above_tp(self):
        assert average_precision([(0.8, [0, 0, 10, 10]), (0.9, [50, 50, 60, 60])], self.GT) == 0.5

    def test_duplicate_is_fp(self):
        dets = [(0.9, [0, 0, 10, 10]), (0.8, [0, 0, 10, 10])]
        gts = np.array([[0.0, 0.0, 10.0, 10.0], [30.0, 30.0, 40.0, 40.0]])
        assert average_precision(dets, gts) == 0.5

    def test_empty_ground_truth(self):
        assert average_precision([(0.5, [0, 0, 1, 1])], np.zeros((0, 4))) == 0.0
        assert average_precision([], np.zeros((0, 4))) is None

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 10_000))
    def test_rank_only(self, seed):
        rng = np.random.default_rng(seed)
        gts = np.array([random_box(rng) for _ in range(4)])
        boxes = [random_box(rng) for _ in range(8)]
        scores = rng.random(8)
        base = average_precision(list(zip(scores, boxes)), gts)
        warped = average_precision(list(zip(np.exp(3 * scores) - 7, boxes)), gts)
        assert base == warped


class TestMeanAp:
    def test_table_row(self):
        assert mean_ap({0: 95.6, 1: 90.3, 2: 93.1}) == 93.0

    def test_single_class(self):
        assert mean_ap({0: 85.0}) == 85.0

    def test_equal(self):
        assert mean_ap({0: 0.37, 1: 0.37, 2: 0.37}) == 0.37

    def test_skips_undefined(self):
        assert mean_ap({0: 0.5, 1: None}) == 0.5


class TestEvaluate:
    def test_counts_and_mean(self):
        preds = [[Detection((0, 0, 10, 10), 0, 0.9), Detection((20, 20, 30, 30), 1, 0.8)],
                 [Detection((0, 0, 5, 5), 1, 0.7)]]
        anns = [np.array([[0, 0, 10, 10, 0], [20, 20, 30, 30, 1]]), np.array([[40, 40, 50, 50, 1]])]
        r = evaluate_detections(preds, anns, 2)
        assert r.per_class_ap[0] == 1.0
        assert r.counts[1] == {"tp": 1, "fp": 1, "fn": 1}
        assert abs(r.mAP - np.mean(list(r.per_class_ap.values()))) < 1e-12


# --- oracle sweeps (A9) ----------------------------------------------------

def test_iou_matches_rasterisation():
    rng = np.random.default_rng(2024)
    for _ in range(1000):
        a, b = random_box(rng, 12), random_box(rng, 12)
        assert abs(iou(a, b) - raster_iou(a, b)) < 1e-12


def test_nms_matches_quadratic_reference():
    rng = np.random.default_rng(77)
    for trial in range(1000):
        n = int(rng.integers(1, 13))
        boxes = np.array([random_box(rng, 16) for _ in range(n)])
        scores = rng.integers(0, 5, size=n) / 4.0  # frequent ties
        thr = float(rng.choice([0.1, 0.3, 0.5, 0.7]))
        assert nms(boxes, scores, thr).tolist() == reference_nms(boxes, scores, thr), trial


def test_ap_matches_exhaustive_reference():
    rng = np.random.default_rng(31)
    for _ in range(1000):
        n_gt = int(rng.integers(0, 5))
        n_det = int(rng.integers(0, 8))
        gts = [random_box(rng, 12) for _ in range(n_gt)]
        boxes = [random_box(rng, 12) for _ in range(n_det)]
        scores = list(rng.random(n_det))
        got = average_precision(list(zip(scores, boxes)), np.array(gts).reshape(-1, 4), 0.5)
        want = reference_ap(scores, boxes, gts, 0.5)
        if want is None:
            assert got is None
        else:
            assert abs(got - want) < 1e-12
