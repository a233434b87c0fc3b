import math

import numpy as np
import pytest

from errors import DataError
from grasp_geometry import GraspConfig, ImageMeta
from grasp_oracle import OracleConfig, oracle_eval, sample_annotations
from scene_generator import PrimitiveShape, random_shape, render_scene, shape_geometry


def test_empty_scene_is_flat_table(meta):
    image = render_scene(None, meta)
    assert np.all(image.depth == 0.7)
    assert np.all(image.normalized() == 0.0)


def test_box_footprint_and_height(meta, box):
    depth = render_scene(box, meta).depth
    assert int(np.sum(depth < 0.7)) == 40 * 20
    assert depth[47, 47] == pytest.approx(0.66)


def test_cylinder_area(meta, cylinder):
    depth = render_scene(cylinder, meta).depth
    assert np.sum(depth < 0.7) == pytest.approx(math.pi * 15 ** 2, rel=0.03)


def test_union_takes_the_tallest_part(meta):
    low = PrimitiveShape("box", (40.0, 47.5, 0.0), (0.03, 0.02), 0.02)
    high = PrimitiveShape("cylinder", (55.0, 47.5, 0.0), (0.01,), 0.05)
    union = PrimitiveShape("union", (47.5, 47.5, 0.0), (), 0.0, [low, high])
    depth = render_scene(union, meta).depth
    assert union.height == 0.05
    assert depth[47, 30] == pytest.approx(0.68)
    assert depth[47, 55] == pytest.approx(0.65)


def test_shape_leaving_the_frame_is_rejected(meta):
    with pytest.raises(DataError):
        render_scene(PrimitiveShape("box", (5.0, 5.0, 0.0), (0.03, 0.02), 0.03), meta)


def test_invalid_shapes_are_rejected():
    with pytest.raises(DataError):
        PrimitiveShape("sphere", (0.0, 0.0, 0.0), (0.01,), 0.02)
    with pytest.raises(DataError):
        PrimitiveShape("box", (0.0, 0.0, 0.0), (0.01, 0.0), 0.02)
    with pytest.raises(DataError):
        PrimitiveShape("union", (0.0, 0.0, 0.0), (), 0.0, [])


def test_noise_is_seeded(meta, box):
    a = render_scene(box, meta, seed=4, noise_std=0.001).depth
    b = render_scene(box, meta, seed=4, noise_std=0.001).depth
    c = render_scene(box, meta, seed=5, noise_std=0.001).depth
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, c)


def test_random_shapes_fit_small_frames():
    meta = ImageMeta(48, 48, 0.002, 0.7)
    mix = {"box": 1.0, "cylinder": 1.0, "ngon": 1.0, "union": 1.0}
    rng = np.random.default_rng(0)
    for _ in range(40):
        shape = random_shape(rng, meta, mix)
        render_scene(shape, meta)
        if shape.kind == "ngon":
            assert int(shape.dims[1]) % 2 == 0


def test_shape_dict_roundtrip():
    union = PrimitiveShape("union", (10.0, 12.0, 0.0), (), 0.0, [
        PrimitiveShape("box", (10.0, 12.0, 0.3), (0.03, 0.02), 0.04),
        PrimitiveShape("ngon", (14.0, 12.0, -0.2), (0.01, 6.0), 0.03),
    ])
    again = PrimitiveShape.from_dict(union.to_dict())
    assert again.to_dict() == union.to_dict()
    assert again.height == 0.04


def test_ray_entry_on_a_box(meta, box):
    (geometry,) = shape_geometry(box, meta.pixel_scale)
    hit = geometry.ray_entry(np.array([47.5, 80.0]), np.array([0.0, -1.0]), 50.0)
    assert hit is not None
    t, normal = hit
    assert t == pytest.approx(80.0 - 57.5)
    np.testing.assert_allclose(normal, [0.0, 1.0], atol=1e-12)
    assert geometry.ray_entry(np.array([47.5, 80.0]), np.array([0.0, 1.0]), 50.0) is None


def _window(size, shift):
    return slice(max(shift, 0), size + min(shift, 0))


@pytest.mark.parametrize("name", ["box", "cylinder"])
def test_rendering_and_labels_follow_a_pixel_shift(meta, box, cylinder, name):
    shape = box if name == "box" else cylinder
    dx, dy = 7, -5
    moved = shape.shifted(dx, dy)
    base = render_scene(shape, meta).depth
    depth = render_scene(moved, meta).depth
    np.testing.assert_array_equal(depth[_window(96, dy), _window(96, dx)],
                                  base[_window(96, -dy), _window(96, -dx)])

    cfg = OracleConfig()
    for a in sample_annotations(shape, meta, 4, 4, 21, cfg):
        g = a.grasp
        robust, quality = oracle_eval(moved, GraspConfig(g.x + dx, g.y + dy, g.z, g.theta, g.w), cfg, meta)
        assert robust == a.robust
        assert quality == pytest.approx(a.quality, abs=1e-9)
