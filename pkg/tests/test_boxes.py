"""Box geometry: hand-worked cases, range properties, differentiable loss."""

import numpy as np
import pytest

from tracq.autodiff import Tensor
from tracq.boxes import (Box, giou, giou_matrix, iou, iou_matrix, l_box, l_box_matrix,
                         l_box_parts, l_box_value, to_xyxy)

from conftest import finite_difference, rel_err


def cxcywh_from_xyxy(x0, y0, x1, y1):
    return np.array([(x0 + x1) / 2, (y0 + y1) / 2, x1 - x0, y1 - y0])


class TestGiou:
    def test_identical_boxes(self):
        b = np.array([0.4, 0.6, 0.2, 0.3])
        assert giou(b, b) == pytest.approx(1.0)

    def test_half_overlap_hand_case(self):
        # xyxy (0,0,1,1) vs (0.5,0,1.5,1): IoU 1/3, enclosing == union
        a = cxcywh_from_xyxy(0, 0, 1, 1)
        b = cxcywh_from_xyxy(0.5, 0, 1.5, 1)
        assert iou(a, b) == pytest.approx(1 / 3)
        assert giou(a, b) == pytest.approx(1 / 3, abs=1e-9)

    def test_disjoint_hand_case(self):
        # xyxy (0,0,1,1) vs (2,0,3,1): IoU 0, union 2, enclosing 3
        a = cxcywh_from_xyxy(0, 0, 1, 1)
        b = cxcywh_from_xyxy(2, 0, 3, 1)
        assert giou(a, b) == pytest.approx(-1 / 3, abs=1e-9)

    def test_both_degenerate(self):
        a = np.array([0.2, 0.2, 0.0, 0.1])
        b = np.array([0.8, 0.8, 0.1, 0.0])
        assert giou(a, b) == -1.0
        assert giou(a, a) == -1.0

    def test_one_degenerate_participates_via_enclosure(self):
        a = np.array([0.5, 0.5, 0.0, 0.0])
        b = np.array([0.5, 0.5, 0.4, 0.4])
        value = giou(a, b)
        assert -1.0 < value <= 1.0

    def test_symmetry_and_bounds_random(self, rng):
        n = 10_000
        boxes_a = np.column_stack([rng.uniform(0, 1, n), rng.uniform(0, 1, n),
                                   rng.uniform(0.01, 1, n), rng.uniform(0.01, 1, n)])
        boxes_b = np.column_stack([rng.uniform(0, 1, n), rng.uniform(0, 1, n),
                                   rng.uniform(0.01, 1, n), rng.uniform(0.01, 1, n)])
        g_ab = np.array([giou(a, b) for a, b in zip(boxes_a, boxes_b)])
        g_ba = np.array([giou(b, a) for a, b in zip(boxes_a, boxes_b)])
        i_ab = np.array([iou(a, b) for a, b in zip(boxes_a, boxes_b)])
        np.testing.assert_allclose(g_ab, g_ba, atol=1e-12)
        assert np.all(g_ab <= i_ab + 1e-12)
        assert np.all(g_ab > -1.0) and np.all(g_ab <= 1.0 + 1e-12)

    def test_giou_equals_iou_when_enclosing_equals_union(self):
        a = cxcywh_from_xyxy(0, 0, 1, 1)
        b = cxcywh_from_xyxy(0.25, 0, 0.75, 1)  # nested: enclosing == a == union
        assert giou(a, b) == pytest.approx(iou(a, b), abs=1e-12)

    def test_matrix_agrees_with_scalar(self, rng):
        a = rng.uniform(0.1, 0.9, size=(4, 4))
        b = rng.uniform(0.1, 0.9, size=(3, 4))
        mat = giou_matrix(a, b)
        for i in range(4):
            for j in range(3):
                assert mat[i, j] == pytest.approx(giou(a[i], b[j]), abs=1e-12)


class TestLBox:
    def test_zero_on_equal_boxes(self):
        b = np.array([0.3, 0.3, 0.2, 0.2])
        assert l_box_value(b, b, 1.0, 1.0) == pytest.approx(0.0, abs=1e-12)

    def test_hand_case_point_seven(self):
        # same centers, widths 0.2 vs 0.4, heights 0.4: L1 0.2, GIoU 0.5
        pred = np.array([0.5, 0.5, 0.2, 0.4])
        gt = np.array([0.5, 0.5, 0.4, 0.4])
        assert l_box_value(pred, gt, lambda_giou=1.0, lambda_l1=1.0) == pytest.approx(0.7, abs=1e-9)

    def test_nonnegative_for_nonnegative_lambdas(self, rng):
        for _ in range(200):
            a = np.concatenate([rng.uniform(0.2, 0.8, 2), rng.uniform(0.05, 0.4, 2)])
            b = np.concatenate([rng.uniform(0.2, 0.8, 2), rng.uniform(0.05, 0.4, 2)])
            assert l_box_value(a, b) >= 0.0

    def test_matrix_matches_value(self, rng):
        preds = np.column_stack([rng.uniform(0.2, 0.8, 5), rng.uniform(0.2, 0.8, 5),
                                 rng.uniform(0.05, 0.4, 5), rng.uniform(0.05, 0.4, 5)])
        gts = preds[[2, 0]] + 0.01
        mat = l_box_matrix(preds, gts)
        for i in range(5):
            for j in range(2):
                assert mat[i, j] == pytest.approx(l_box_value(preds[i], gts[j]), abs=1e-12)

    def test_differentiable_matches_float_path(self, rng):
        pred = np.column_stack([rng.uniform(0.2, 0.8, 6), rng.uniform(0.2, 0.8, 6),
                                rng.uniform(0.05, 0.4, 6), rng.uniform(0.05, 0.4, 6)])
        gt = np.column_stack([rng.uniform(0.2, 0.8, 6), rng.uniform(0.2, 0.8, 6),
                              rng.uniform(0.05, 0.4, 6), rng.uniform(0.05, 0.4, 6)])
        got = l_box(Tensor(pred), gt).item()
        want = sum(l_box_value(p, g) for p, g in zip(pred, gt))
        assert got == pytest.approx(want, abs=1e-9)

    def test_gradient_random_pairs(self, rng):
        for trial in range(5):
            pred = np.concatenate([rng.uniform(0.3, 0.7, 2), rng.uniform(0.1, 0.4, 2)]).reshape(1, 4)
            gt = np.concatenate([rng.uniform(0.3, 0.7, 2), rng.uniform(0.1, 0.4, 2)]).reshape(1, 4)

            def f(p_):
                return float(l_box(Tensor(p_), gt).data)

            tp = Tensor(pred, requires_grad=True)
            l_box(tp, gt).backward()
            fd, = finite_difference(f, [pred.copy()])
            assert rel_err(tp.grad, fd) < 1e-4

    def test_parts_split(self, rng):
        pred = np.array([[0.4, 0.4, 0.2, 0.2]])
        gt = np.array([[0.5, 0.5, 0.3, 0.3]])
        l1, giou_term = l_box_parts(Tensor(pred), gt)
        assert l1.item() == pytest.approx(np.abs(pred - gt).sum(), abs=1e-12)
        assert giou_term.item() == pytest.approx(1.0 - giou(pred[0], gt[0]), abs=1e-9)


def test_box_dataclass_validation():
    Box(0.5, 0.5, 0.2, 0.2).validate_normalized()
    assert Box(0.5, 0.5, 0.0, 0.2).degenerate
    with pytest.raises(ValueError):
        Box(1.5, 0.5, 0.2, 0.2).validate_normalized()
    arr = Box(0.1, 0.2, 0.3, 0.4).as_array()
    assert Box.from_array(arr) == Box(0.1, 0.2, 0.3, 0.4)


def test_to_xyxy_roundtrip(rng):
    boxes = np.column_stack([rng.uniform(0.2, 0.8, 10), rng.uniform(0.2, 0.8, 10),
                             rng.uniform(0.05, 0.4, 10), rng.uniform(0.05, 0.4, 10)])
    xy = to_xyxy(boxes)
    back = np.column_stack([(xy[:, 0] + xy[:, 2]) / 2, (xy[:, 1] + xy[:, 3]) / 2,
                            xy[:, 2] - xy[:, 0], xy[:, 3] - xy[:, 1]])
    np.testing.assert_allclose(back, boxes, atol=1e-12)
