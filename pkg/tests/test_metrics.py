import numpy as np
import pytest

from seqdropnet import metrics
from seqdropnet.errors import SizeMismatchError
from seqdropnet.metrics import (
    confusion,
    connected_components,
    dice,
    evaluate_two_raters,
    jaccard,
    lfpr,
    ltpr,
    ppv,
    tpr,
)

from floodfill import flood_fill_labels


def cube(dims=(8, 8, 8)):
    return np.zeros(dims, dtype=np.uint8)


def test_confusion_identity():
    gt = cube((3, 3, 3))
    gt.ravel()[[0, 4, 9, 13, 26]] = 1
    c = confusion(gt, gt)
    assert (c.tp, c.tn, c.fp, c.fn) == (5, 22, 0, 0)


def test_confusion_empty_pred():
    gt = cube()
    gt[1:3, 2, 2] = 1
    assert confusion(cube(), gt).fn == 2


def test_confusion_brute_force(rng):
    for _ in range(20):
        p = rng.integers(0, 2, (8, 8, 8))
        g = rng.integers(0, 2, (8, 8, 8))
        tp = fp = fn = tn = 0
        for a, b in zip(p.ravel(), g.ravel()):
            tp += a and b
            fp += a and not b
            fn += (not a) and b
            tn += (not a) and not b
        c = confusion(p, g)
        assert (c.tp, c.fp, c.fn, c.tn) == (tp, fp, fn, tn)
        assert c.total == 512


def test_confusion_dims():
    with pytest.raises(SizeMismatchError):
        confusion(cube(), cube((8, 8, 7)))


def test_identical_and_disjoint():
    a = cube()
    a[2:4, 2:4, 2:4] = 1
    b = cube()
    b[5:7, 5:7, 5:7] = 1
    c = confusion(a, a)
    assert dice(c) == jaccard(c) == ppv(c) == tpr(c) == 1.0
    c = confusion(a, b)
    assert dice(c) == jaccard(c) == ppv(c) == tpr(c) == 0.0


def test_hand_case():
    c = metrics.ConfusionCounts(tp=3, fp=1, fn=3, tn=10)
    assert dice(c) == pytest.approx(0.6)
    assert jaccard(c) == pytest.approx(3 / 7)
    assert jaccard(c) == pytest.approx(0.4286, abs=1e-4)


def test_degenerate_conventions():
    empty = confusion(cube(), cube())
    assert dice(empty) == 1.0 and jaccard(empty) == 1.0
    assert ppv(empty) is None and tpr(empty) is None
    assert lfpr(cube(), cube()) == 0.0 and ltpr(cube(), cube()) is None


def test_metric_identities(rng):
    for _ in range(1000):
        p = rng.random((6, 6, 6)) < rng.random()
        g = rng.random((6, 6, 6)) < rng.random()
        d = dice(confusion(p, g))
        assert d == dice(confusion(g, p))
        assert abs(jaccard(confusion(p, g)) - d / (2 - d)) <= 1e-12
        assert (d == 1.0) == (np.array_equal(p, g))


@pytest.mark.parametrize("conn", [6, 18, 26])
def test_face_neighbors_one_component(conn):
    m = cube((3, 3, 3))
    m[0, 0, 0] = m[1, 0, 0] = 1
    assert connected_components(m, conn).count == 1


@pytest.mark.parametrize("conn,expected", [(6, 2, ), (18, 2), (26, 1)])
def test_corner_neighbors(conn, expected):
    m = cube((3, 3, 3))
    m[0, 0, 0] = m[1, 1, 1] = 1
    assert connected_components(m, conn).count == expected


@pytest.mark.parametrize("conn,expected", [(6, 2), (18, 1), (26, 1)])
def test_edge_neighbors(conn, expected):
    m = cube((3, 3, 3))
    m[0, 0, 0] = m[1, 1, 0] = 1
    assert connected_components(m, conn).count == expected


def test_invalid_connectivity():
    with pytest.raises(ValueError):
        connected_components(cube(), 8)


@pytest.mark.parametrize("conn", [6, 18, 26])
def test_components_match_flood_fill(conn, rng):
    for _ in range(100):
        m = rng.random((8, 8, 8)) < rng.uniform(0.05, 0.5)
        ours = connected_components(m, conn)
        ref, count = flood_fill_labels(m, conn)
        assert ours.count == count
        assert np.array_equal(ours.labels, ref)


def test_component_translation_invariance(rng):
    m = rng.random((6, 6, 6)) < 0.3
    padded = np.pad(m, ((2, 1), (0, 3), (1, 1)))
    a = connected_components(m)
    b = connected_components(padded)
    assert a.count == b.count
    assert np.array_equal(b.labels[2:8, 0:6, 1:7], a.labels)


def two_lesions():
    gt = cube()
    gt[1:3, 1:3, 1:3] = 1
    gt[5:7, 5:7, 5:7] = 1
    return gt


def test_ltpr_cases():
    gt = two_lesions()
    assert ltpr(gt, gt) == 1.0
    assert ltpr(cube(), gt) == 0.0
    pred = cube()
    pred[2, 2, 2] = 1
    assert ltpr(pred, gt) == 0.5


def test_lfpr_cases():
    gt = two_lesions()
    assert lfpr(gt, gt) == 0.0
    assert lfpr(gt, cube()) == 1.0
    pred = cube()
    pred[2, 2, 2] = 1  # inside lesion 1
    pred[5, 1, 6] = 1  # isolated
    assert lfpr(pred, gt) == 0.5


def test_lesion_metrics_permutation_invariant():
    gt = two_lesions()
    pred = cube()
    pred[6, 6, 6] = 1
    pred[0, 7, 0] = 1
    # mirror the volume: components get different ids but the same structure
    flip = (slice(None, None, -1),) * 3
    assert ltpr(pred, gt) == ltpr(pred[flip], gt[flip])
    assert lfpr(pred, gt) == lfpr(pred[flip], gt[flip])


def test_min_overlap_and_size_options():
    gt = two_lesions()
    pred = cube()
    pred[2, 2, 2] = 1
    pred[5:7, 5:7, 5] = 1
    assert ltpr(pred, gt, min_overlap=2) == 0.5
    assert lfpr(pred, gt, min_overlap=2) == 0.5
    assert lfpr(pred, gt, min_lesion_size=2) == 0.0


def test_two_raters_equal():
    gt = two_lesions()
    pred = cube()
    pred[1:3, 1:3, 1] = 1
    r = evaluate_two_raters(pred, gt, gt)
    assert r.avg == r.rater_a == r.rater_b


def test_two_raters_half():
    a = two_lesions()
    b = cube()
    b[3:5, 0:2, 6:8] = 1
    r = evaluate_two_raters(a, a, b)
    assert r.dsc == 0.5


def test_two_raters_recompute(rng):
    for _ in range(50):
        p, a, b = (rng.random((8, 8, 8)) < 0.2 for _ in range(3))
        r = evaluate_two_raters(p, a, b)
        for name in metrics.METRIC_NAMES:
            va = metrics.evaluate(p, a)[name]
            vb = metrics.evaluate(p, b)[name]
            assert abs(r.avg[name] - (va + vb) / 2) <= 1e-15
            assert 0.0 <= r.avg[name] <= 1.0


def test_report_files(tmp_path):
    gt = two_lesions()
    r = evaluate_two_raters(gt, gt, gt)
    csv_path, json_path = metrics.write_report(r.rows("c0"), tmp_path / "report")
    lines = csv_path.read_text().splitlines()
    assert lines[0] == "case,rater,DSC,Jaccard,PPV,TPR,LFPR,LTPR"
    assert [l.split(",")[1] for l in lines[1:]] == ["A", "B", "avg"]
    assert lines[3].split(",")[2:] == ["1.000000"] * 4 + ["0.000000", "1.000000"]
    undefined = evaluate_two_raters(cube(), cube(), cube())
    assert "NA" in metrics.rows_to_csv(undefined.rows())
