import math

import numpy as np
import pytest

from errors import DataError
from grasp_geometry import GraspConfig
from grasp_oracle import (OracleConfig, antipodal_candidate, dense_contact_eval, oracle_eval, perturbed_candidate,
                          random_candidate, sample_annotations)
from scene_generator import random_shape

CFG = OracleConfig()


def test_grasp_across_the_short_side_is_robust(meta, box):
    g = GraspConfig(47.5, 47.5, 0.68, math.pi / 2, 0.036)
    robust, quality = oracle_eval(box, g, CFG, meta)
    assert robust
    # el margen de apertura es el más ajustado: 1 − 0.02 / 0.05
    assert quality == pytest.approx(0.6)


def test_opening_narrower_than_the_object_fails(meta, box):
    robust, _ = oracle_eval(box, GraspConfig(47.5, 47.5, 0.68, 0.0, 0.036), CFG, meta)
    assert not robust


def test_jaws_above_the_object_fail(meta, box):
    assert oracle_eval(box, GraspConfig(47.5, 47.5, 0.65, math.pi / 2, 0.036), CFG, meta) == (False, 0.0)


def test_jaws_touching_the_table_fail(meta, box):
    # altura de las mordazas por debajo de clearance_depth
    robust, _ = oracle_eval(box, GraspConfig(47.5, 47.5, 0.698, math.pi / 2, 0.036), CFG, meta)
    assert not robust


def test_off_center_chord_breaks_the_friction_cone(meta, cylinder):
    centered = GraspConfig(47.5, 47.5, 0.68, 0.0, 0.04)
    off_center = GraspConfig(47.5, 57.5, 0.68, 0.0, 0.04)
    assert oracle_eval(cylinder, centered, CFG, meta)[0]
    assert not oracle_eval(cylinder, off_center, CFG, meta)[0]


@pytest.mark.parametrize("shape_name, grasp", [
    ("box", GraspConfig(47.5, 47.5, 0.68, math.pi / 2, 0.036)),
    ("box", GraspConfig(47.5, 47.5, 0.68, 0.0, 0.036)),
    ("box", GraspConfig(47.5, 47.5, 0.68, math.pi / 2 - 0.2, 0.04)),
    ("box", GraspConfig(47.5, 47.5, 0.68, 0.9, 0.045)),
    ("cylinder", GraspConfig(47.5, 47.5, 0.68, 0.0, 0.04)),
    ("cylinder", GraspConfig(47.5, 57.5, 0.68, 0.0, 0.04)),
    ("cylinder", GraspConfig(47.5, 49.0, 0.67, 1.2, 0.045)),
])
def test_analytic_oracle_agrees_with_dense_contacts(meta, box, cylinder, shape_name, grasp):
    shape = box if shape_name == "box" else cylinder
    analytic = oracle_eval(shape, grasp, CFG, meta)
    dense = dense_contact_eval(shape, grasp, CFG, meta)
    assert analytic[0] == dense[0]
    assert analytic[1] == pytest.approx(dense[1], abs=0.05)


def test_sample_annotations_counts_and_labels(meta, box):
    annotations = sample_annotations(box, meta, 3, 2, 11, CFG)
    assert [a.robust for a in annotations] == [True, True, True, False, False]
    for a in annotations:
        assert oracle_eval(box, a.grasp, CFG, meta)[0] == a.robust
        assert a.grasp.w <= CFG.max_opening


def test_sample_annotations_is_seeded(meta, cylinder):
    a = sample_annotations(cylinder, meta, 2, 1, 5, CFG)
    b = sample_annotations(cylinder, meta, 2, 1, 5, CFG)
    assert [x.grasp.to_dict() for x in a] == [x.grasp.to_dict() for x in b]


def test_sample_annotations_validates_counts(meta, box):
    with pytest.raises(DataError):
        sample_annotations(box, meta, -1, 0, 0, CFG)


def test_oracle_config_validation():
    with pytest.raises(DataError):
        OracleConfig(friction_coeff=0.0)
    assert OracleConfig.from_dict(CFG.to_dict()) == CFG


def _mixed_grasps(shape, meta, rng, n):
    """Antipodales, perturbados y arbitrarios en proporciones parecidas"""
    grasps = []
    while len(grasps) < n:
        pick = rng.random()
        g = antipodal_candidate(shape, meta, CFG, rng) if pick < 0.67 else None
        if g is not None and pick < 0.33:
            g = perturbed_candidate(g, meta, rng)
        grasps.append(g if g is not None else random_candidate(shape, meta, CFG, rng))
    return grasps


def _agreement(pairs, meta):
    agree = sum(oracle_eval(shape, g, CFG, meta)[0] == dense_contact_eval(shape, g, CFG, meta)[0]
                for shape, g in pairs)
    return agree / len(pairs)


def test_oracle_agrees_with_dense_contacts_on_random_cylinder_grasps(meta, cylinder):
    rng = np.random.default_rng(8)
    grasps = _mixed_grasps(cylinder, meta, rng, 200)
    labels = [oracle_eval(cylinder, g, CFG, meta)[0] for g in grasps]
    assert 0 < sum(labels) < len(labels)
    assert _agreement([(cylinder, g) for g in grasps], meta) >= 0.99


@pytest.mark.slow
def test_oracle_agrees_with_dense_contacts_on_random_shapes(meta):
    rng = np.random.default_rng(9)
    mix = {"box": 0.35, "cylinder": 0.25, "ngon": 0.2, "union": 0.2}
    pairs = []
    for _ in range(100):
        shape = random_shape(rng, meta, mix)
        pairs.extend((shape, g) for g in _mixed_grasps(shape, meta, rng, 10))
    assert _agreement(pairs, meta) >= 0.99
