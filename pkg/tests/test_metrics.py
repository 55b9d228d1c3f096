import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hetnet.errors import InputError
from hetnet.metrics import (
    MetricReport, evaluate_dataset, f_beta, f_beta_max, iou, mae, resolve_threshold,
)


def brute(pred, gt, threshold=0.5, beta_sq=0.3):
    """Pixel-by-pixel counts with plain Python arithmetic."""
    err = tp = fp = fn = union = 0
    n = 0
    for p, g in zip(pred.ravel().tolist(), gt.ravel().tolist()):
        n += 1
        err += abs(p - g)
        hit = p >= threshold
        tp += hit and g == 1
        fp += hit and g == 0
        fn += (not hit) and g == 1
        union += hit or g == 1
    m = err / n
    i = 1.0 if union == 0 else tp / union
    if tp == 0:
        f = 1.0 if fp == 0 and fn == 0 else 0.0
    else:
        prec, rec = tp / (tp + fp), tp / (tp + fn)
        f = (1 + beta_sq) * prec * rec / (beta_sq * prec + rec)
    return m, i, f


def test_brute_force_agreement_on_random_instances():
    rng = np.random.default_rng(0)
    for k in range(1000):
        pred = rng.random((16, 16))
        if k % 10 == 0:
            pred = np.round(pred)  # exact threshold ties
        gt = (rng.random((16, 16)) < rng.random()).astype(np.uint8)
        m, i, f = brute(pred, gt)
        assert abs(mae(pred, gt) - m) <= 1e-9
        assert abs(iou(pred, gt) - i) <= 1e-9
        assert abs(f_beta(pred, gt) - f) <= 1e-9


def test_mae_examples():
    gt = np.array([[0, 1], [1, 0]])
    assert mae(gt.astype(float), gt) == 0
    assert mae(np.full((2, 2), 0.5), gt) == 0.5
    assert abs(mae(np.array([[0.2, 0.8], [0.6, 0.4]]), gt) - 0.3) < 1e-12


def test_iou_examples():
    assert iou(np.array([[1.0, 0], [1, 0]]), np.array([[1, 1], [0, 0]])) == pytest.approx(1 / 3)
    assert iou(np.zeros((3, 3)), np.zeros((3, 3))) == 1.0
    gt = np.eye(4)
    assert iou(gt, gt) == 1.0


def test_f_beta_examples():
    gt = np.array([[1, 1, 0, 0]])
    assert f_beta(gt.astype(float), gt) == 1.0
    # one hit, one false alarm, one miss: precision = recall = 0.5
    assert f_beta(np.array([[1.0, 0, 1, 0]]), gt) == pytest.approx(0.5)
    assert f_beta(np.zeros((2, 2)), np.zeros((2, 2))) == 1.0
    assert f_beta(np.zeros((2, 2)), np.eye(2)) == 0.0


@pytest.mark.parametrize("beta_sq", [0.3, 1.0, 2.0])
def test_f_beta_equals_shared_precision_and_recall(beta_sq):
    rng = np.random.default_rng(1)
    for _ in range(20):
        n = int(rng.integers(1, 50))
        tp = int(rng.integers(1, n + 1))
        r = tp / n
        # n positives in gt, n predicted: tp overlap gives precision = recall = tp / n
        gt = np.zeros(4 * n)
        pred = np.zeros(4 * n)
        gt[:n] = 1
        pred[n - tp:2 * n - tp] = 1
        assert f_beta(pred, gt, beta_sq=beta_sq) == pytest.approx(r, abs=1e-12)


@given(st.integers(0, 10_000))
@settings(max_examples=50, deadline=None)
def test_mae_symmetry(seed):
    rng = np.random.default_rng(seed)
    pred, gt = rng.random((8, 8)), (rng.random((8, 8)) > 0.5).astype(int)
    assert abs(mae(pred, gt) - mae(1 - pred, 1 - gt)) < 1e-12


@given(st.integers(0, 10_000))
@settings(max_examples=50, deadline=None)
def test_metrics_invariant_under_joint_permutation(seed):
    rng = np.random.default_rng(seed)
    pred, gt = rng.random((6, 7)), (rng.random((6, 7)) > 0.5).astype(int)
    perm = rng.permutation(42)
    pp, gp = pred.ravel()[perm].reshape(6, 7), gt.ravel()[perm].reshape(6, 7)
    for fn in (mae, iou, f_beta):
        assert abs(fn(pred, gt) - fn(pp, gp)) < 1e-12


def test_positive_count_non_increasing_in_threshold():
    pred = np.random.default_rng(2).random((16, 16))
    counts = [(pred >= t).sum() for t in np.linspace(0, 1, 21)]
    assert all(b <= a for a, b in zip(counts, counts[1:]))


def test_adaptive_threshold():
    assert resolve_threshold(np.full((2, 2), 0.2), "adaptive") == pytest.approx(0.4)
    assert resolve_threshold(np.full((2, 2), 0.9), "adaptive") < 1.0
    assert resolve_threshold(np.zeros(3), 0.5) == 0.5


def test_f_beta_max_bounds_single_threshold():
    rng = np.random.default_rng(3)
    pred, gt = rng.random((16, 16)), (rng.random((16, 16)) > 0.5).astype(int)
    assert f_beta_max(pred, gt) >= f_beta(pred, gt) - 1e-12


def test_shape_mismatch():
    for fn in (mae, iou, f_beta):
        with pytest.raises(InputError):
            fn(np.zeros((2, 2)), np.zeros((2, 3)))


def test_evaluate_dataset():
    gt = np.array([[0, 1], [1, 0]])
    rep = evaluate_dataset([(gt.astype(float), gt)])
    assert (rep.mae, rep.iou, rep.f_beta, rep.n_images) == (0.0, 1.0, 1.0, 1)
    z = np.zeros((1, 10))
    rep = evaluate_dataset([(z + 0.1, z), (z + 0.3, z)], with_max=True)
    assert rep.mae == pytest.approx(0.2)
    assert rep.threshold == 0.5 and not np.isnan(rep.f_beta_max)


def test_evaluate_dataset_empty():
    with pytest.raises(InputError):
        evaluate_dataset([])


def test_report_formats():
    rep = MetricReport(0.1, 0.8, 0.9, 4)
    lines = rep.to_csv().strip().splitlines()
    assert lines[0].split(",")[:5] == ["n_images", "threshold", "mae", "iou", "f_beta"]
    assert "IoU" in rep.table()
    assert rep.as_dict()["n_images"] == 4
