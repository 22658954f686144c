"""Hungarian matcher, match cost, and the set loss."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from aligndet.gradcheck import check_gradients
from aligndet.matching import (LossWeights, hungarian_match, layer_loss,
                               match_cost, set_loss)
from aligndet.reference import hungarian_brute_force
from aligndet.tensor import Tensor


def assignment_cost(cost, pairs):
    return float(sum(cost[i, j] for i, j in pairs))


class TestHungarian:
    def test_identity_is_optimal(self):
        cost = np.array([[0.0, 1.0], [1.0, 0.0]])
        assert hungarian_match(cost) == [(0, 0), (1, 1)]

    def test_swap_is_optimal(self):
        cost = np.array([[1.0, 0.0], [0.0, 1.0]])
        assert hungarian_match(cost) == [(0, 1), (1, 0)]

    def test_rectangular_uses_min_side(self):
        cost = np.array([[5.0, 1.0, 9.0], [1.0, 5.0, 9.0]])
        pairs = hungarian_match(cost)
        assert len(pairs) == 2
        assert assignment_cost(cost, pairs) == 2.0

    def test_empty_matrix(self):
        assert hungarian_match(np.zeros((0, 3))) == []
        assert hungarian_match(np.zeros((3, 0))) == []

    def test_non_finite_rejected(self):
        with pytest.raises(ValueError, match="finite"):
            hungarian_match(np.array([[np.inf, 1.0]]))

    def test_matches_brute_force_on_100_random_matrices(self, rng):
        for _ in range(100):
            n = int(rng.integers(1, 7))
            m = int(rng.integers(1, 7))
            cost = rng.normal(size=(n, m))
            pairs = hungarian_match(cost)
            assert len(pairs) == min(n, m)
            got = assignment_cost(cost, pairs)
            assert got == pytest.approx(hungarian_brute_force(cost), abs=1e-12)

    @given(st.integers(0, 2 ** 32 - 1))
    @settings(max_examples=30, deadline=None)
    def test_optimality_property(self, seed):
        rng = np.random.default_rng(seed)
        cost = rng.uniform(-5, 5, size=(rng.integers(1, 6), rng.integers(1, 6)))
        got = assignment_cost(cost, hungarian_match(cost))
        assert got <= hungarian_brute_force(cost) + 1e-12


class TestMatchCost:
    def test_perfect_prediction_cost(self):
        # probability 1 on the right class and an identical box:
        # cost = -w_cls - w_giou (L1 term vanishes, giou is 1)
        w = LossWeights()
        probs = np.array([[1.0, 0.0, 0.0]])
        boxes = np.array([[0.5, 0.5, 0.2, 0.2]])
        cost = match_cost(probs, boxes, np.array([0]), boxes, w)
        assert cost[0, 0] == pytest.approx(-w.cls - w.giou)

    def test_prefers_right_class(self):
        w = LossWeights()
        boxes = np.array([[0.5, 0.5, 0.2, 0.2], [0.5, 0.5, 0.2, 0.2]])
        probs = np.array([[0.9, 0.1, 0.0], [0.1, 0.9, 0.0]])
        cost = match_cost(probs, boxes, np.array([1]), boxes[:1], w)
        assert cost[1, 0] < cost[0, 0]

    def test_shape(self, rng):
        probs = rng.dirichlet(np.ones(3), size=5)
        boxes = rng.uniform(0.3, 0.6, size=(5, 4))
        gt = rng.uniform(0.3, 0.6, size=(2, 4))
        cost = match_cost(probs, boxes, np.array([0, 1]), gt, LossWeights())
        assert cost.shape == (5, 2)


class TestLayerLoss:
    def test_empty_gt_closed_form(self, rng):
        # uniform logits, no objects: every query pays
        # noobj_weight * ln(C + 1)
        n, c = 6, 2
        logits = Tensor(np.zeros((n, c + 1)))
        boxes = Tensor(rng.uniform(0.3, 0.6, size=(n, 4)))
        w = LossWeights()
        loss, parts = layer_loss(logits, boxes, np.array([]),
                                 np.zeros((0, 4)), w)
        assert loss.item() == pytest.approx(n * w.noobj * np.log(c + 1))
        assert parts["matched"] == 0

    def test_matched_count(self, rng):
        logits = Tensor(rng.normal(size=(5, 3)))
        boxes = Tensor(rng.uniform(0.3, 0.6, size=(5, 4)))
        gt_boxes = rng.uniform(0.3, 0.6, size=(2, 4))
        _, parts = layer_loss(logits, boxes, np.array([0, 1]), gt_boxes,
                              LossWeights())
        assert parts["matched"] == 2

    def test_perfect_prediction_box_terms_vanish(self):
        gt_boxes = np.array([[0.5, 0.5, 0.2, 0.2]])
        logits = Tensor(np.array([[50.0, 0.0, 0.0],
                                  [0.0, 0.0, 50.0]]))
        boxes = Tensor(np.vstack([gt_boxes, [[0.2, 0.2, 0.1, 0.1]]]))
        loss, parts = layer_loss(logits, boxes, np.array([0]), gt_boxes,
                                 LossWeights())
        # the epsilon guarding the giou denominator leaves ~1e-8 behind
        assert parts["l1"] == pytest.approx(0.0, abs=1e-12)
        assert parts["giou"] == pytest.approx(0.0, abs=1e-7)
        assert loss.item() == pytest.approx(0.0, abs=1e-6)

    def test_permutation_invariance(self, rng):
        # shuffling the ground-truth list must not change the loss value
        logits = Tensor(rng.normal(size=(6, 4)))
        boxes = Tensor(rng.uniform(0.3, 0.6, size=(6, 4)))
        gt_labels = np.array([0, 1, 2])
        gt_boxes = rng.uniform(0.3, 0.6, size=(3, 4))
        base, _ = layer_loss(logits, boxes, gt_labels, gt_boxes, LossWeights())
        perm = rng.permutation(3)
        shuffled, _ = layer_loss(logits, boxes, gt_labels[perm],
                                 gt_boxes[perm], LossWeights())
        assert shuffled.item() == pytest.approx(base.item(), rel=1e-12)

    def test_gradcheck(self, rng):
        gt_labels = np.array([0, 1])
        gt_boxes = rng.uniform(0.35, 0.6, size=(2, 4))
        w = rng.normal(size=(4, 3))

        def loss(t):
            value, _ = layer_loss(t["logits"], t["boxes"].sigmoid(),
                                  gt_labels, gt_boxes, LossWeights())
            return value

        inputs = {"logits": rng.normal(size=(4, 3)),
                  "boxes": rng.normal(scale=0.3, size=(4, 4))}
        errors = check_gradients(loss, inputs, rel_tol=1e-5)
        assert max(errors.values()) < 1e-5

    def test_no_gradient_through_matching(self, rng):
        # the matcher is a stop-gradient decision: the loss gradient exists
        # and is finite even though the assignment is discrete
        logits = Tensor(rng.normal(size=(4, 3)), requires_grad=True)
        boxes = Tensor(rng.uniform(0.3, 0.6, size=(4, 4)), requires_grad=True)
        loss, _ = layer_loss(logits, boxes, np.array([0]),
                             rng.uniform(0.3, 0.6, size=(1, 4)), LossWeights())
        loss.backward()
        assert np.all(np.isfinite(logits.grad))
        assert np.all(np.isfinite(boxes.grad))


class TestSetLoss:
    def fake_layers(self, rng, layers=3, n=5, c=2):
        out = []
        for _ in range(layers):
            out.append({"logits": Tensor(rng.normal(size=(n, c + 1))),
                        "boxes": Tensor(rng.uniform(0.3, 0.6, size=(n, 4)))})
        return out

    def test_aux_sums_layers(self, rng):
        layers = self.fake_layers(rng)
        gt_labels = np.array([0, 1])
        gt_boxes = rng.uniform(0.3, 0.6, size=(2, 4))
        total, _ = set_loss(layers, gt_labels, gt_boxes)
        per_layer = sum(layer_loss(l["logits"], l["boxes"], gt_labels,
                                   gt_boxes, LossWeights())[0].item()
                        for l in layers)
        assert total.item() == pytest.approx(per_layer, rel=1e-12)

    def test_aux_off_uses_final_layer_only(self, rng):
        layers = self.fake_layers(rng)
        gt_labels = np.array([1])
        gt_boxes = rng.uniform(0.3, 0.6, size=(1, 4))
        total, _ = set_loss(layers, gt_labels, gt_boxes, aux=False)
        last, _ = layer_loss(layers[-1]["logits"], layers[-1]["boxes"],
                             gt_labels, gt_boxes, LossWeights())
        assert total.item() == pytest.approx(last.item(), rel=1e-12)

    def test_default_weights(self):
        w = LossWeights()
        assert (w.cls, w.l1, w.giou, w.noobj) == (1.0, 5.0, 2.0, 0.1)
