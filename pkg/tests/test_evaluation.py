"""Average precision against an exhaustive oracle, plus synthetic scenes."""

import numpy as np
import pytest

from nvsprompt3d import evaluation, geometry
from nvsprompt3d.errors import EmptyGroundTruth
from nvsprompt3d.evaluation import (
    GroundTruthInstance,
    Prediction,
    ap_sweep,
    average_precision,
    make_synthetic_scene,
)


# ---------------------------------------------------------------------------
# oracle: re-match every confidence prefix from scratch and integrate the
# envelope over the explicit PR points
# ---------------------------------------------------------------------------

def oracle_average_precision(predictions, ground_truth, iou_threshold):
    classes = sorted({g.label for g in ground_truth})
    per_class = []
    for cls in classes:
        gts = [g for g in ground_truth if g.label == cls]
        preds = [p for p in predictions if p.label == cls]
        order = sorted(range(len(preds)),
                       key=lambda i: (-preds[i].confidence, i))
        points = []
        for cut in range(1, len(order) + 1):
            subset = [preds[i] for i in order[:cut]]
            taken = set()
            tp = 0
            for p in subset:  # already confidence-sorted
                best, best_j = 0.0, None
                for j, g in enumerate(gts):
                    if j in taken:
                        continue
                    inter = len(set(p.indices.tolist())
                                & set(g.indices.tolist()))
                    union = len(set(p.indices.tolist())
                                | set(g.indices.tolist()))
                    iou = inter / union if union else 0.0
                    if iou > best:
                        best, best_j = iou, j
                if best_j is not None and best >= iou_threshold:
                    taken.add(best_j)
                    tp += 1
            points.append((tp / len(gts), tp / cut))
        mrec = [0.0] + [r for r, _ in points] + [1.0]
        mpre = [0.0] + [p for _, p in points] + [0.0]
        for i in range(len(mpre) - 2, -1, -1):
            mpre[i] = max(mpre[i], mpre[i + 1])
        area = 0.0
        for i in range(len(mrec) - 1):
            if mrec[i + 1] != mrec[i]:
                area += (mrec[i + 1] - mrec[i]) * mpre[i + 1]
        per_class.append(area)
    return float(np.mean(per_class))


def random_case(rng, max_instances=10):
    n_points = 200
    n_gt = int(rng.integers(1, max_instances + 1))
    labels = [f"class{int(rng.integers(0, 3))}" for _ in range(n_gt)]
    gts = []
    for label in labels:
        size = int(rng.integers(5, 40))
        gts.append(GroundTruthInstance(
            indices=rng.choice(n_points, size=size, replace=False), label=label))
    n_pred = int(rng.integers(0, max_instances + 1))
    preds = []
    for _ in range(n_pred):
        if gts and rng.uniform() < 0.7:
            base = gts[int(rng.integers(0, len(gts)))]
            keep = rng.uniform(0.3, 1.0)
            kept = rng.choice(base.indices,
                              size=max(1, int(keep * base.indices.size)),
                              replace=False)
            extra = rng.choice(n_points, size=int(rng.integers(0, 10)),
                               replace=False)
            indices = np.union1d(kept, extra)
            label = base.label if rng.uniform() < 0.8 else "class0"
        else:
            indices = rng.choice(n_points, size=int(rng.integers(3, 30)),
                                 replace=False)
            label = f"class{int(rng.integers(0, 3))}"
        preds.append(Prediction(indices=indices, label=label,
                                confidence=float(rng.uniform(-1, 1))))
    return preds, gts


class TestAveragePrecision:
    def perfect_case(self):
        gts = [GroundTruthInstance(indices=np.arange(i * 10, i * 10 + 10),
                                   label=f"c{i}") for i in range(3)]
        preds = [Prediction(indices=g.indices, label=g.label, confidence=0.9)
                 for g in gts]
        return preds, gts

    def test_perfect_predictions(self):
        preds, gts = self.perfect_case()
        metrics = ap_sweep(preds, gts)
        assert metrics == {"AP": 1.0, "AP50": 1.0, "AP25": 1.0}

    def test_disjoint_predictions(self):
        gts = [GroundTruthInstance(indices=np.arange(10), label="c")]
        preds = [Prediction(indices=np.arange(100, 120), label="c",
                            confidence=0.5)]
        assert average_precision(preds, gts, 0.25) == 0.0

    def test_mixed_case_matches_oracle(self):
        gts = [GroundTruthInstance(indices=np.arange(0, 30), label="c"),
               GroundTruthInstance(indices=np.arange(40, 60), label="c"),
               GroundTruthInstance(indices=np.arange(70, 100), label="c")]
        preds = [
            Prediction(indices=np.arange(0, 24), label="c", confidence=0.9),
            Prediction(indices=np.arange(40, 52), label="c", confidence=0.8),
            Prediction(indices=np.arange(65, 100), label="c", confidence=0.95),
        ]
        for threshold in (0.25, 0.5, 0.75):
            assert average_precision(preds, gts, threshold) == pytest.approx(
                oracle_average_precision(preds, gts, threshold))

    def test_random_cases_match_oracle(self):
        rng = np.random.default_rng(0)
        for case in range(25):
            preds, gts = random_case(rng)
            for threshold in (0.25, 0.5):
                got = average_precision(preds, gts, threshold)
                want = oracle_average_precision(preds, gts, threshold)
                assert got == pytest.approx(want), f"case {case} thr {threshold}"

    def test_ap_bounded(self):
        rng = np.random.default_rng(1)
        for _ in range(10):
            preds, gts = random_case(rng)
            ap = average_precision(preds, gts, 0.5)
            assert 0.0 <= ap <= 1.0

    def test_adding_correct_prediction_never_hurts(self):
        rng = np.random.default_rng(2)
        for _ in range(10):
            preds, gts = random_case(rng)
            before = average_precision(preds, gts, 0.5)
            # duplicate a ground truth that no current prediction matches
            matched_labels = {}
            unmatched = None
            for g in gts:
                if all(evaluation.point_set_iou(p.indices, g.indices) < 0.5
                       for p in preds):
                    unmatched = g
                    break
            if unmatched is None:
                continue
            extra = Prediction(indices=unmatched.indices, label=unmatched.label,
                               confidence=float(rng.uniform(-1, 1)))
            after = average_precision(preds + [extra], gts, 0.5)
            assert after >= before - 1e-12

    def test_threshold_monotonicity(self):
        rng = np.random.default_rng(3)
        for _ in range(15):
            preds, gts = random_case(rng)
            loose = average_precision(preds, gts, 0.25)
            tight = average_precision(preds, gts, 0.5)
            assert loose >= tight - 1e-12

    def test_empty_ground_truth(self):
        with pytest.raises(EmptyGroundTruth):
            average_precision([], [], 0.5)


class TestSyntheticScene:
    def test_deterministic_under_seed(self):
        a = make_synthetic_scene(seed=11)
        b = make_synthetic_scene(seed=11)
        assert np.array_equal(a.cloud.positions, b.cloud.positions)
        assert np.array_equal(a.cloud.colors, b.cloud.colors)
        for pa, pb in zip(a.poses, b.poses):
            assert np.array_equal(pa.rotation, pb.rotation)
        for pid in a.depths:
            assert np.array_equal(a.depths[pid].values, b.depths[pid].values)

    def test_masks_disjoint(self):
        scene = make_synthetic_scene(seed=11, n_boxes=3)
        assert len(scene.masks) == 3
        stacked = np.stack([m.bits for m in scene.masks])
        assert (stacked.sum(axis=0) <= 1).all()
        assert all(m.count() >= evaluation.MIN_POINTS_PER_BOX
                   for m in scene.masks)

    def test_every_box_visible_somewhere(self):
        scene = make_synthetic_scene(seed=11)
        for mask in scene.masks:
            scores = [geometry.visibility_score(
                mask, scene.cloud, pose, scene.intrinsics,
                scene.depths[pose.pose_id], 0.4).score
                for pose in scene.poses]
            assert max(scores) > 0

    def test_facing_pose_beats_opposite(self):
        # two boxes on opposite sides of the origin with a low camera ring:
        # the far box hides behind the near one
        scene = make_synthetic_scene(seed=5, n_boxes=2, n_poses=4,
                                     ring_height=0.3)
        facing = geometry.visibility_score(
            scene.masks[0], scene.cloud, scene.poses[0], scene.intrinsics,
            scene.depths[0], 0.4).score
        opposite = geometry.visibility_score(
            scene.masks[0], scene.cloud, scene.poses[2], scene.intrinsics,
            scene.depths[2], 0.4).score
        assert facing > opposite

    def test_depth_consistent_with_points(self):
        # surface points agree with the analytic depth wherever they are
        # the closest surface along their pixel ray
        scene = make_synthetic_scene(seed=11, n_boxes=1, n_poses=2)
        mask = scene.masks[0]
        score = geometry.visibility_score(
            scene.masks[0], scene.cloud, scene.poses[0], scene.intrinsics,
            scene.depths[0], 0.05)
        # at least the camera-facing half of one box should validate
        assert score.score > mask.count() * 0.2
