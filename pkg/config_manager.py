"""
Gestor de configuración para GQ-STN
Un documento JSON por ejecución, fusionado sobre los valores por defecto.
Las claves desconocidas se rechazan en cualquier nivel.
"""

import copy
import json
import logging
from pathlib import Path
from typing import Any, Dict, Optional

from dataset_builder import DatasetSpec
from errors import ConfigError, GQSTNError
from eval_bench import EvalConfig
from grasp_oracle import OracleConfig
from locnet import BackboneConfig
from quality_model import QualityConfig
from trainer import Schedule, TrainingConfig

DEFAULT_CONFIG: Dict[str, Any] = {
    "dataset": {
        "n_scenes": 1000,
        "image_size": 96,
        "pixel_scale": 0.001,
        "camera_height": 0.7,
        "noise_std": 0.0,
        "shape_mix": {"box": 0.35, "cylinder": 0.25, "ngon": 0.2, "union": 0.2},
        "n_pos_range": [4, 8],
        "n_neg_range": [0, 4],
        "split_fractions": [0.8, 0.1, 0.1],
        "dense_test_annotations": 0,
        "max_processes": 1,
    },
    "oracle": {
        "friction_coeff": 0.5,
        "max_opening": 0.05,
        "clearance_depth": 0.005,
        "contact_tolerance": 0.002,
        "jaw_margin": 0.008,
    },
    "backbone": {
        "channels": [8, 16, 32, 32],
        "kernel_size": 3,
        "residual": False,
        "head_init_scale": 0.1,
    },
    "quality": {
        "channels": [16, 32, 32],
        "residual": False,
        "epochs": 8,
        "batch_size": 64,
        "learning_rate": 0.001,
        "l2_reg": 1e-07,
        "crops_per_scene": 20,
        "threshold": 0.5,
    },
    "schedule": {
        "epoch_multiplier": 1.0,
        "l2_reg": 1e-07,
        "patience": 3,
        "phases": [
            {"epochs": 6, "xi": 1.0, "learning_rate": 0.001, "teacher_forcing": True, "early_stopping": False},
            {"epochs": 3, "xi": 0.5, "learning_rate": 0.0002, "teacher_forcing": True, "early_stopping": False},
            {"epochs": 3, "xi": 0.2, "learning_rate": 4e-05, "teacher_forcing": True, "early_stopping": False},
            {"epochs": 9, "xi": 0.0, "learning_rate": 4e-05, "teacher_forcing": False, "early_stopping": False},
            {"epochs": 19, "xi": 0.0, "learning_rate": 8e-06, "teacher_forcing": False, "early_stopping": True},
        ],
    },
    "training": {
        "batch_size": 16,
        "literal_rotation": False,
        "val_scenes": 0,
    },
    "eval": {
        "batch_size": 32,
        "proposals": 1000,
        "proposal_angle_tol_deg": 20.0,
        "max_opening": 0.05,
        "jaw_margin": 0.008,
        "warmup": 3,
        "reps": 20,
        "proposal_sweep": [100, 300, 1000],
    },
    "seeds": {
        "root": 0,
        "experiments": [0, 1, 2],
    },
    "autodiff": {
        "dtype": "float64",
        "grad_check_tol": 0.0001,
        "grad_check_eps": 1e-05,
        "grad_check_cases": 100,
    },
}


def _merge(base: Dict, updates: Dict, path: str = "") -> Dict:
    merged = copy.deepcopy(base)
    for key, value in updates.items():
        dotted = f"{path}.{key}" if path else key
        if key not in base:
            raise ConfigError(f"Clave de configuración desconocida: {dotted}")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"{dotted} debe ser un objeto JSON")
            merged[key] = _merge(base[key], value, dotted)
        else:
            merged[key] = copy.deepcopy(value)
    return merged


class ConfigManager:
    def __init__(self, config_file: Optional[str] = None):
        self.config_file = Path(config_file) if config_file else None
        self.config = copy.deepcopy(DEFAULT_CONFIG)
        self.load_config()

    def load_config(self):
        """Cargar configuración desde archivo y fusionarla sobre los valores por defecto"""
        if self.config_file is None:
            logging.info("Usando configuración por defecto")
            return
        try:
            with open(self.config_file, "r", encoding="utf-8") as f:
                document = json.load(f)
        except FileNotFoundError:
            raise ConfigError(f"No existe el archivo de configuración: {self.config_file}")
        except json.JSONDecodeError as e:
            raise ConfigError(f"JSON inválido en {self.config_file}: {e}")
        if not isinstance(document, dict):
            raise ConfigError(f"{self.config_file} debe contener un objeto JSON")
        self.config = _merge(DEFAULT_CONFIG, document)
        logging.info(f"Configuración cargada desde: {self.config_file}")

    def save_config(self, path=None) -> Path:
        """Guardar configuración a archivo"""
        target = Path(path) if path else self.config_file
        if target is None:
            raise ConfigError("No hay ruta para guardar la configuración")
        try:
            target.parent.mkdir(parents=True, exist_ok=True)
            with open(target, "w", encoding="utf-8") as f:
                json.dump(self.config, f, indent=2, ensure_ascii=False)
        except OSError as e:
            raise ConfigError(f"Error guardando configuración en {target}: {e}")
        logging.info(f"Configuración guardada en: {target}")
        return target

    def get(self, key: str, default: Any = None) -> Any:
        """Obtener un valor por ruta con puntos, p. ej. 'dataset.n_scenes'"""
        node: Any = self.config
        for part in key.split("."):
            if not isinstance(node, dict) or part not in node:
                return default
            node = node[part]
        return copy.deepcopy(node)

    def set(self, key: str, value: Any):
        parts = key.split(".")
        update: Dict[str, Any] = {parts[-1]: value}
        for part in reversed(parts[:-1]):
            update = {part: update}
        self.config = _merge(self.config, update)

    def section(self, name: str) -> Dict[str, Any]:
        if name not in self.config:
            raise ConfigError(f"Sección desconocida: {name}")
        return copy.deepcopy(self.config[name])

    def as_dict(self) -> Dict[str, Any]:
        return copy.deepcopy(self.config)

    # -- objetos tipados -----------------------------------------------------

    def _build(self, factory, name: str, **overrides):
        data = self.section(name)
        data.update(overrides)
        try:
            return factory(**data)
        except (TypeError, GQSTNError) as e:
            raise ConfigError(f"Sección '{name}' inválida: {e}")

    def dataset_spec(self):
        return self._build(DatasetSpec, "dataset")

    def oracle_config(self):
        return self._build(OracleConfig, "oracle")

    def backbone_config(self, image_size: Optional[int] = None):
        size = image_size or self.get("dataset.image_size")
        return self._build(BackboneConfig, "backbone", input_size=(size, size))

    def quality_config(self):
        return self._build(QualityConfig, "quality")

    def schedule(self):
        return self._build(Schedule, "schedule")

    def training_config(self):
        return self._build(TrainingConfig, "training")

    def eval_config(self):
        data = self.section("eval")
        data["proposal_sweep"] = tuple(data["proposal_sweep"])
        try:
            return EvalConfig(**data)
        except (TypeError, GQSTNError) as e:
            raise ConfigError(f"Sección 'eval' inválida: {e}")
