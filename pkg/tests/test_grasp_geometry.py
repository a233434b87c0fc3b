import math

import numpy as np
import pytest

import stn
from errors import DataError, GQSTNError
from grasp_geometry import (DepthImage, GraspConfig, RectGrasp, angle_difference, canonical_angle,
                            cascade_from_grasp, cascade_from_grasps, crop_for_classifier, crops_for_classifier,
                            grasp_from_cascade, grasps_from_cascade, grasp_to_rect, jaccard, rect_metric)
from scene_generator import render_scene


def test_canonical_angle_range_and_symmetry():
    for theta in (-3.0, -1.2, 0.0, 0.9, math.pi / 2, 2.5, 7.0):
        c = canonical_angle(theta)
        assert -math.pi / 2 < c <= math.pi / 2
        assert angle_difference(c, theta) == pytest.approx(0.0, abs=1e-12)
    assert canonical_angle(-math.pi / 2) == pytest.approx(math.pi / 2)


def test_angle_difference_is_modulo_pi():
    assert angle_difference(0.1, 0.1 + math.pi) == pytest.approx(0.0, abs=1e-12)
    assert angle_difference(-1.4, 1.4) == pytest.approx(math.pi - 2.8)


def test_rect_height_is_one_fifth_of_width():
    assert RectGrasp((0.0, 0.0), 0.0, 50.0).height_px == 10.0
    with pytest.raises(GQSTNError):
        RectGrasp((0.0, 0.0), 0.0, 50.0, 12.0)


def test_identical_rectangles_match():
    r = RectGrasp((40.0, 40.0), 0.3, 60.0)
    result = rect_metric(r, [r])
    assert result.positive
    assert result.best_iou == pytest.approx(1.0)


def test_jaccard_one_third_is_positive():
    p = RectGrasp((30.0, 30.0), 0.0, 60.0)
    g = RectGrasp((60.0, 30.0), 0.0, 60.0)
    assert jaccard(p, g) == pytest.approx(1.0 / 3.0)
    assert rect_metric(p, [g]).positive


def test_low_overlap_or_large_rotation_is_negative():
    p = RectGrasp((30.0, 30.0), 0.0, 60.0)
    assert jaccard(p, RectGrasp((70.0, 30.0), 0.0, 60.0)) == pytest.approx(0.2)
    assert not rect_metric(p, [RectGrasp((70.0, 30.0), 0.0, 60.0)]).positive
    assert not rect_metric(p, [RectGrasp((30.0, 30.0), math.radians(31), 60.0)]).positive
    assert rect_metric(p, [RectGrasp((30.0, 30.0), math.radians(20), 60.0)]).positive


def test_half_turn_gives_the_same_verdict():
    truth = [RectGrasp((50.0, 50.0), 0.2, 40.0)]
    for angle in (0.1, 0.6):
        a = rect_metric(RectGrasp((52.0, 49.0), angle, 40.0), truth)
        b = rect_metric(RectGrasp((52.0, 49.0), angle + math.pi, 40.0), truth)
        assert a.positive == b.positive
        assert a.best_iou == pytest.approx(b.best_iou)


def test_any_reference_rectangle_is_enough():
    p = RectGrasp((30.0, 30.0), 0.0, 60.0)
    far = RectGrasp((200.0, 200.0), 0.0, 60.0)
    assert rect_metric(p, [far, p]).positive
    with pytest.raises(DataError):
        rect_metric(p, [])


def _raster_iou(a: RectGrasp, b: RectGrasp, step: float = 0.1) -> float:
    xs, ys = np.meshgrid(np.arange(0.0, 100.0, step), np.arange(0.0, 100.0, step))
    points = np.stack([xs.ravel(), ys.ravel()], axis=1)

    def inside(r):
        c, s = math.cos(r.angle), math.sin(r.angle)
        rel = points - np.asarray(r.center)
        along, across = rel @ np.array([c, s]), rel @ np.array([-s, c])
        return (np.abs(along) <= r.width_px / 2) & (np.abs(across) <= r.height_px / 2)

    ia, ib = inside(a), inside(b)
    return float(np.sum(ia & ib)) / float(np.sum(ia | ib))


@pytest.mark.parametrize("offset, angle", [((5.0, 2.0), 0.3), ((-8.0, 4.0), -0.5), ((0.0, 0.0), 1.0)])
def test_jaccard_agrees_with_a_raster(offset, angle):
    a = RectGrasp((50.0, 50.0), 0.2, 50.0)
    b = RectGrasp((50.0 + offset[0], 50.0 + offset[1]), angle, 45.0)
    assert jaccard(a, b) == pytest.approx(_raster_iou(a, b), abs=0.02)


def test_grasp_to_rect_uses_pixel_scale(meta):
    rect = grasp_to_rect(GraspConfig(10.0, 20.0, 0.68, 0.5, 0.03), meta)
    assert rect.width_px == pytest.approx(30.0)
    assert rect.height_px == pytest.approx(6.0)


def test_cascade_roundtrip(meta):
    stats = stn.DatasetStats(gamma=0.9, z_mean=0.67, z_std=0.01)
    g = GraspConfig(30.2, 50.7, 0.66, 0.4, 0.03)
    target = cascade_from_grasp(g, meta, stats)
    assert target.s[0] == pytest.approx(30.0 / (95.0 / 3.0))
    back = grasp_from_cascade(target.t, target.r, target.c, target.z_norm, stats, meta)
    assert back.x == pytest.approx(g.x)
    assert back.y == pytest.approx(g.y)
    assert back.z == pytest.approx(g.z)
    assert back.theta == pytest.approx(g.theta)
    assert back.w == pytest.approx(g.w)


def test_crop_matches_the_composed_sampler(meta, box):
    image = render_scene(box, meta)
    g = GraspConfig(47.5, 47.5, 0.68, math.pi / 2, 0.036)
    target = cascade_from_grasp(g, meta)
    via_stn = stn.transform_image(image.normalized()[None], stn.compose_cascade(target.t, target.r, target.c),
                                  32, 32).data[0]
    np.testing.assert_allclose(crop_for_classifier(image, g).data, via_stn, atol=1e-6)


def test_crop_puts_the_gripper_axis_horizontal(meta, box):
    image = render_scene(box, meta)
    # pinza a lo ancho de la caja (eje y de la imagen)
    crop = crop_for_classifier(image, GraspConfig(47.5, 47.5, 0.68, math.pi / 2, 0.036)).data
    assert crop.shape == (32, 32)
    assert crop[16, 16] == pytest.approx(-0.04 / 0.7)
    assert crop[16, 0] == pytest.approx(0.0)
    assert crop[16, 31] == pytest.approx(0.0)
    assert crop[0, 16] == pytest.approx(0.0)


def test_batched_crops_match_single_crops(meta, box):
    image = render_scene(box, meta)
    grasps = [GraspConfig(47.5, 47.5, 0.68, 0.0, 0.05), GraspConfig(40.0, 50.0, 0.67, 1.0, 0.03)]
    batch = crops_for_classifier(image, grasps).data
    for i, g in enumerate(grasps):
        np.testing.assert_allclose(batch[i], crop_for_classifier(image, g).data)


def test_crop_center_outside_the_image_is_rejected(meta):
    image = DepthImage(np.full((96, 96), 0.7), meta)
    with pytest.raises(DataError):
        crop_for_classifier(image, GraspConfig(120.0, 10.0, 0.68, 0.0, 0.03))


def test_crop_parity_after_decoding_random_cascades(meta, box, cylinder):
    stats = stn.DatasetStats(gamma=1.0, z_mean=0.67, z_std=0.01)
    rng = np.random.default_rng(12)
    for shape in (box, cylinder):
        image = render_scene(shape, meta)
        grasps = [GraspConfig(float(rng.uniform(5, 90)), float(rng.uniform(5, 90)), float(rng.uniform(0.64, 0.69)),
                              float(rng.uniform(-1.5, 1.5)), float(rng.uniform(0.01, 0.05))) for _ in range(100)]
        target = cascade_from_grasps(grasps, meta, stats)
        via_stn = stn.transform_image(image.normalized()[None], stn.compose_cascade(target.t, target.r, target.c),
                                      32, 32).data
        decoded = grasps_from_cascade(target.t, target.r, target.c, target.z_norm, stats, meta)
        crops = crops_for_classifier(image, decoded).data
        assert np.max(np.abs(crops - via_stn)) < 1e-6
        for g, back in zip(grasps, decoded):
            assert back.x == pytest.approx(g.x) and back.theta == pytest.approx(g.theta)
