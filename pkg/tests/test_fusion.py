import math

import numpy as np
import pytest

from masklift.fusion import FusionConfig, calibrate, fuse, greedy_match
from masklift.geometry import BevRect, bev_iou
from masklift.scene_io import Cuboid

from conftest import random_cuboid


def box(frame, center, dims=(2.0, 4.0, 1.5), yaw=0.0, score=0.5,
        source="cm3d", velocity=None, cls="car"):
    return Cuboid(
        frame_id=frame, class_label=cls, score=score,
        center=(center[0], center[1], 0.0), dims=dims, yaw=yaw,
        velocity=velocity, source=source,
    )


class TestCalibrate:
    def test_zero_logit_is_half(self):
        assert calibrate(0.0, 1.0) == 0.5

    def test_known_value(self):
        assert calibrate(1.0, 2.0) == pytest.approx(
            1.0 / (1.0 + math.exp(-0.5)), abs=1e-15)

    def test_symmetry(self):
        for logit in (0.3, 1.7, 4.2):
            assert calibrate(logit, 1.0) + calibrate(-logit, 1.0) == \
                pytest.approx(1.0, abs=1e-15)

    def test_monotone_in_logit(self):
        xs = np.linspace(-30, 30, 201)
        ys = [calibrate(float(x), 1.5) for x in xs]
        assert all(b > a for a, b in zip(ys, ys[1:]))

    def test_extreme_logits_stay_finite(self):
        assert calibrate(1000.0, 1.0) == pytest.approx(1.0)
        assert calibrate(-1000.0, 1.0) == pytest.approx(0.0)
        assert 0.0 < calibrate(-1000.0, 1.0) or \
            calibrate(-1000.0, 1.0) == 0.0

    def test_higher_tau_flattens(self):
        # same positive logit, larger tau pulls toward 0.5
        assert calibrate(2.0, 4.0) < calibrate(2.0, 1.0)
        assert calibrate(-2.0, 4.0) > calibrate(-2.0, 1.0)

    def test_bad_tau_rejected(self):
        with pytest.raises(ValueError):
            calibrate(0.0, 0.0)
        with pytest.raises(ValueError):
            FusionConfig(tau=-1.0)
        with pytest.raises(ValueError):
            FusionConfig(iou_min=0.0)


def oracle_match(cm3d, external, iou_min):
    """Re-derive greedy matching by repeated argmax over the live IoU
    table instead of one global sort."""
    table = {}
    for i, a in enumerate(cm3d):
        for j, b in enumerate(external):
            if a.frame_id != b.frame_id:
                continue
            ra = BevRect(a.center[0], a.center[1], a.dims[0], a.dims[1],
                         a.yaw)
            rb = BevRect(b.center[0], b.center[1], b.dims[0], b.dims[1],
                         b.yaw)
            iou = bev_iou(ra, rb)
            if iou >= iou_min:
                table[(i, j)] = iou
    pairs = []
    while table:
        best = min(table, key=lambda k: (-table[k], k[0], k[1]))
        pairs.append((best[0], best[1], table[best]))
        table = {k: v for k, v in table.items()
                 if k[0] != best[0] and k[1] != best[1]}
    return pairs


class TestGreedyMatch:
    def test_empty_inputs(self):
        report = greedy_match([], [], 0.1)
        assert report.pairs == ()
        assert report.unmatched_cm3d == ()
        assert report.unmatched_external == ()

    def test_frames_never_cross(self):
        a = box("f0", (0, 0))
        b = box("f1", (0, 0), source="external", score=1.0)
        report = greedy_match([a], [b], 0.1)
        assert report.pairs == ()
        assert report.unmatched_cm3d == (0,)
        assert report.unmatched_external == (0,)

    def test_one_to_one(self):
        # one external overlapping two pseudo-labels pairs with the
        # higher-IoU one only
        a0 = box("f0", (0, 0))
        a1 = box("f0", (1.0, 0))
        b = box("f0", (0.1, 0), source="external", score=1.0)
        report = greedy_match([a0, a1], [b], 0.05)
        assert len(report.pairs) == 1
        assert report.pairs[0][0] == 0
        assert report.unmatched_cm3d == (1,)

    def test_iou_floor_is_inclusive(self):
        a = box("f0", (0, 0), dims=(2.0, 4.0, 1.5))
        b = box("f0", (0, 0), dims=(2.0, 4.0, 1.5), source="external",
                score=1.0)
        report = greedy_match([a], [b], 1.0)
        assert len(report.pairs) == 1
        assert report.pairs[0][2] == pytest.approx(1.0, abs=1e-12)

    def test_against_oracle(self, rng):
        for _ in range(500):
            frames = ["f0", "f1"]
            cm3d = [random_cuboid(rng, frame_id=frames[
                int(rng.integers(2))], span=6.0)
                for _ in range(int(rng.integers(0, 6)))]
            external = [random_cuboid(rng, frame_id=frames[
                int(rng.integers(2))], span=6.0, source="external")
                for _ in range(int(rng.integers(0, 6)))]
            report = greedy_match(cm3d, external, 0.1)
            want = oracle_match(cm3d, external, 0.1)
            got = [(i, j) for i, j, _ in report.pairs]
            assert got == [(i, j) for i, j, _ in want]
            for (_, _, iou_a), (_, _, iou_b) in zip(report.pairs, want):
                assert iou_a == pytest.approx(iou_b, abs=1e-12)
            matched_a = {i for i, _, _ in report.pairs}
            matched_b = {j for _, j, _ in report.pairs}
            assert set(report.unmatched_cm3d) == \
                set(range(len(cm3d))) - matched_a
            assert set(report.unmatched_external) == \
                set(range(len(external))) - matched_b


class TestFuse:
    def test_rejects_wrong_source(self):
        a = box("f0", (0, 0))
        bad = box("f0", (0, 0), source="cm3d")
        with pytest.raises(ValueError):
            fuse([a], [bad], FusionConfig())

    def test_unmatched_external_dropped(self):
        a = box("f0", (0, 0))
        b = box("f0", (50, 50), source="external", score=3.0)
        fused, report = fuse([a], [b], FusionConfig())
        assert fused == [a]
        assert report.unmatched_external == (0,)

    def test_unmatched_cm3d_passes_through_unchanged(self):
        a = box("f0", (0, 0), score=0.4)
        fused, _ = fuse([a], [], FusionConfig())
        assert fused == [a]
        assert fused[0].source == "cm3d"

    def test_matched_keeps_center_class_score(self):
        a = box("f0", (0, 0), score=0.4, cls="car")
        b = box("f0", (0.2, 0.1), dims=(2.2, 4.4, 1.6), yaw=0.1,
                source="external", score=5.0, velocity=(1.0, 0.0),
                cls="truck")
        fused, report = fuse([a], [b], FusionConfig())
        assert len(report.pairs) == 1
        f = fused[0]
        assert f.center == a.center
        assert f.class_label == "car"
        assert f.score == a.score
        assert f.source == "fused"

    def test_confident_external_wins_geometry(self):
        a = box("f0", (0, 0), score=0.4)
        b = box("f0", (0.2, 0.1), dims=(2.2, 4.4, 1.6), yaw=0.1,
                source="external", score=5.0, velocity=(1.0, 0.0))
        # calibrate(5.0, 1.0) ~ 0.993 > 0.4
        fused, _ = fuse([a], [b], FusionConfig())
        f = fused[0]
        assert f.dims == b.dims
        assert f.yaw == b.yaw
        assert f.velocity == b.velocity

    def test_weak_external_loses_geometry(self):
        a = box("f0", (0, 0), score=0.9, velocity=None)
        b = box("f0", (0.2, 0.1), dims=(2.2, 4.4, 1.6), yaw=0.1,
                source="external", score=-2.0, velocity=(1.0, 0.0))
        fused, _ = fuse([a], [b], FusionConfig())
        f = fused[0]
        assert f.dims == a.dims
        assert f.yaw == a.yaw
        assert f.velocity is None

    def test_score_tie_keeps_pseudo_label_geometry(self):
        a = box("f0", (0, 0), score=0.5)
        b = box("f0", (0.0, 0.0), dims=(2.2, 4.4, 1.6), yaw=0.1,
                source="external", score=0.0)  # calibrates to exactly 0.5
        fused, _ = fuse([a], [b], FusionConfig())
        assert fused[0].dims == a.dims
        assert fused[0].yaw == a.yaw

    def test_tau_changes_the_winner(self):
        a = box("f0", (0, 0), score=0.7)
        b = box("f0", (0.0, 0.0), dims=(2.2, 4.4, 1.6), yaw=0.1,
                source="external", score=1.0)
        # tau=1: sigmoid(1.0) ~ 0.731 > 0.7, external wins
        fused, _ = fuse([a], [b], FusionConfig(tau=1.0))
        assert fused[0].dims == b.dims
        # tau=4: sigmoid(0.25) ~ 0.562 < 0.7, pseudo-label wins
        fused, _ = fuse([a], [b], FusionConfig(tau=4.0))
        assert fused[0].dims == a.dims

    def test_output_in_cm3d_order(self, rng):
        cm3d = [box("f0", (i * 20.0, 0), score=0.3 + 0.1 * i)
                for i in range(4)]
        external = [box("f0", (i * 20.0 + 0.1, 0), source="external",
                        score=2.0) for i in reversed(range(4))]
        fused, report = fuse(cm3d, external, FusionConfig())
        assert [f.center[0] for f in fused] == \
            [c.center[0] for c in cm3d]
        assert len(report.pairs) == 4

    def test_multi_frame_isolation(self):
        a0 = box("f0", (0, 0), score=0.4)
        a1 = box("f1", (0, 0), score=0.4)
        b1 = box("f1", (0, 0), source="external", score=4.0,
                 dims=(2.5, 5.0, 2.0))
        fused, _ = fuse([a0, a1], [b1], FusionConfig())
        assert fused[0].dims == a0.dims        # f0 untouched
        assert fused[1].dims == b1.dims        # f1 fused
        assert fused[0].source == "cm3d"
        assert fused[1].source == "fused"
