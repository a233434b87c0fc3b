import math
import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).resolve().parents[1]))

from dataset_builder import DatasetSpec, GraspDataset, build_dataset  # noqa: E402
from grasp_geometry import ImageMeta  # noqa: E402
from locnet import Backbone  # noqa: E402
from quality_model import QualityConfig, QualityModel  # noqa: E402
from scene_generator import PrimitiveShape  # noqa: E402

# imágenes pequeñas: 48 px a 2 mm/px cubren 9.4 cm, suficiente para las formas aleatorias
SMALL_SIZE = 48
SMALL_SCALE = 0.002


@pytest.fixture
def meta():
    return ImageMeta(96, 96, 0.001, 0.7)


@pytest.fixture
def box():
    """Caja de 4 × 2 cm y 4 cm de alto centrada en una imagen de 96 px a 1 mm/px"""
    return PrimitiveShape("box", (47.5, 47.5, 0.0), (0.04, 0.02), 0.04)


@pytest.fixture
def cylinder():
    return PrimitiveShape("cylinder", (47.5, 47.5, 0.0), (0.015,), 0.05)


def small_spec(**overrides) -> DatasetSpec:
    params = dict(n_scenes=10, image_size=SMALL_SIZE, pixel_scale=SMALL_SCALE,
                  n_pos_range=(2, 3), n_neg_range=(1, 2))
    params.update(overrides)
    return DatasetSpec(**params)


@pytest.fixture(scope="session")
def tiny_data_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("data")
    build_dataset(small_spec(), seed=7, out_dir=out)
    return out


@pytest.fixture
def tiny_dataset(tiny_data_dir):
    return GraspDataset(tiny_data_dir)


@pytest.fixture
def frozen_quality():
    cfg = QualityConfig(channels=(4, 4))
    model = QualityModel(Backbone.build(cfg.backbone(), 3), crop_mean=0.0, crop_std=0.05,
                         z_mean=0.67, z_std=0.01)
    return model.freeze()


def rotation_matrix(theta: float) -> np.ndarray:
    return np.array([[math.cos(theta), -math.sin(theta)], [math.sin(theta), math.cos(theta)]])
