"""
Clasificador de robustez de agarres (análogo de GQ-CNN)
Recortes 32×32 alineados más la profundidad de la pinza como plano constante.
Una vez entrenado se congela y actúa como supervisor y como métrica.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from tqdm import tqdm

import autodiff as ad
from autodiff import Tensor
from checkpoint_io import load_checkpoint, save_checkpoint
from dataset_builder import GraspDataset, SceneRecord, scene_rng
from errors import DataError, ShapeError
from grasp_geometry import CROP_SIZE, GraspConfig, crops_for_classifier
from grasp_oracle import OracleConfig, antipodal_candidate, oracle_eval, perturbed_candidate, random_candidate
from locnet import Backbone, BackboneConfig
from optimizer import Adam

QUALITY_KIND = "quality"
# flujo aleatorio reservado para los recortes del clasificador
CROP_STREAM = 1


@dataclass
class CropSet:
    """Ejemplos a nivel de recorte: crops (N, 32, 32) estandarizados, z (N,) en metros, etiquetas 0/1"""
    crops: np.ndarray
    z: np.ndarray
    labels: np.ndarray

    def __len__(self) -> int:
        return len(self.labels)

    def subset(self, index) -> "CropSet":
        return CropSet(self.crops[index], self.z[index], self.labels[index])

    @property
    def positive_rate(self) -> float:
        return float(np.mean(self.labels)) if len(self.labels) else 0.0


@dataclass
class QualityConfig:
    channels: Tuple[int, ...] = (16, 32, 32)
    residual: bool = False
    epochs: int = 8
    batch_size: int = 64
    learning_rate: float = 1e-3
    l2_reg: float = 1e-7
    crops_per_scene: int = 20
    threshold: float = 0.5

    def backbone(self) -> BackboneConfig:
        return BackboneConfig(input_size=(CROP_SIZE, CROP_SIZE), in_channels=2, channels=tuple(self.channels),
                              residual=self.residual, head_dim=1, n_heads=1, head_init_scale=1.0)


@dataclass
class QualityReport:
    accuracy: float
    precision: float
    recall: float
    n_train: int
    n_heldout: int
    train_positive_rate: float
    epoch_losses: List[float] = field(default_factory=list)

    def to_dict(self) -> Dict:
        return dict(self.__dict__)


class QualityModel:
    def __init__(self, backbone: Backbone, crop_mean: float = 0.0, crop_std: float = 1.0,
                 z_mean: float = 0.0, z_std: float = 1.0, threshold: float = 0.5):
        self.backbone = backbone
        self.crop_mean = float(crop_mean)
        self.crop_std = float(crop_std)
        self.z_mean = float(z_mean)
        self.z_std = float(z_std)
        self.threshold = float(threshold)

    @property
    def frozen(self) -> bool:
        return self.backbone.frozen

    def freeze(self) -> "QualityModel":
        self.backbone.freeze()
        return self

    def checksum(self) -> str:
        return self.backbone.checksum()

    def _inputs(self, crop, z) -> Tensor:
        crop = ad.as_tensor(crop)
        if crop.ndim == 2:
            crop = ad.reshape(crop, (1,) + crop.shape)
        if crop.ndim != 3 or crop.shape[1:] != (CROP_SIZE, CROP_SIZE):
            raise ShapeError(f"El clasificador espera recortes {CROP_SIZE}×{CROP_SIZE}, recibió {crop.shape}")
        n = crop.shape[0]
        z = ad.as_tensor(z)
        if z.size not in (1, n):
            raise ShapeError(f"z con forma {z.shape} para un lote de {n} recortes")
        z_norm = (ad.reshape(z, (-1, 1, 1, 1)) - self.z_mean) / self.z_std
        z_plane = z_norm * np.ones((n if z.size == 1 else 1, 1, CROP_SIZE, CROP_SIZE))
        c = ad.reshape((crop - self.crop_mean) / self.crop_std, (n, 1, CROP_SIZE, CROP_SIZE))
        return ad.concat([c, z_plane], axis=1)

    def logits(self, crop, z) -> Tensor:
        return ad.reshape(self.backbone.forward(self._inputs(crop, z)), (-1,))

    def state(self) -> Tuple[Dict[str, np.ndarray], Dict]:
        metadata = {
            "kind": QUALITY_KIND,
            "backbone": self.backbone.config.to_dict(),
            "normalization": {"crop_mean": self.crop_mean, "crop_std": self.crop_std,
                              "z_mean": self.z_mean, "z_std": self.z_std},
            "threshold": self.threshold,
            "frozen": self.frozen,
            "checksum": self.checksum(),
        }
        return self.backbone.state(), metadata

    def save(self, path, extra: Optional[Dict] = None):
        tensors, metadata = self.state()
        metadata.update(extra or {})
        return save_checkpoint(path, tensors, metadata)

    @classmethod
    def load(cls, path, freeze: bool = True) -> "QualityModel":
        tensors, metadata = load_checkpoint(path)
        if metadata.get("kind") != QUALITY_KIND:
            raise DataError(f"{path} no es un checkpoint del clasificador de robustez")
        backbone = Backbone.build(BackboneConfig.from_dict(metadata["backbone"]), seed=0)
        backbone.load_state(tensors)
        norm = metadata["normalization"]
        model = cls(backbone, norm["crop_mean"], norm["crop_std"], norm["z_mean"], norm["z_std"],
                    metadata["threshold"])
        return model.freeze() if freeze else model


def classify(model: QualityModel, crop, z) -> Tuple[Tensor, Tensor]:
    """(logit, p_robust); diferenciable respecto al recorte y a z aunque los pesos estén congelados"""
    logit = model.logits(crop, z)
    return logit, ad.sigmoid(logit)


def robust_label(model: QualityModel, crop, z, threshold: Optional[float] = None):
    """p_robust > umbral (un empate cuenta como no robusto)"""
    threshold = model.threshold if threshold is None else threshold
    with ad.no_grad():
        _, p = classify(model, crop, z)
    labels = p.data > threshold
    return bool(labels[0]) if labels.size == 1 else labels


def predict_proba(model: QualityModel, crops: CropSet, batch_size: int = 256) -> np.ndarray:
    out = []
    with ad.no_grad():
        for start in range(0, len(crops), batch_size):
            _, p = classify(model, crops.crops[start:start + batch_size], crops.z[start:start + batch_size])
            out.append(p.data)
    return np.concatenate(out) if out else np.zeros(0)


def binary_metrics(predicted: np.ndarray, labels: np.ndarray) -> Dict[str, float]:
    predicted, labels = np.asarray(predicted, bool), np.asarray(labels, bool)
    tp = int(np.sum(predicted & labels))
    fp = int(np.sum(predicted & ~labels))
    fn = int(np.sum(~predicted & labels))
    return {
        "accuracy": float(np.mean(predicted == labels)) if labels.size else 0.0,
        "precision": tp / (tp + fp) if tp + fp else 0.0,
        "recall": tp / (tp + fn) if tp + fn else 0.0,
    }


def roc_curve(model: QualityModel, crops: CropSet, thresholds: Sequence[float]) -> List[Dict[str, float]]:
    """Barrido de umbral: tasas de verdaderos y falsos positivos"""
    p = predict_proba(model, crops)
    labels = crops.labels.astype(bool)
    n_pos, n_neg = max(int(labels.sum()), 1), max(int((~labels).sum()), 1)
    curve = []
    for t in sorted(thresholds):
        predicted = p > t
        curve.append({"threshold": float(t), "tpr": float(np.sum(predicted & labels)) / n_pos,
                      "fpr": float(np.sum(predicted & ~labels)) / n_neg})
    return curve


# ---------------------------------------------------------------------------
# Conjunto de recortes
# ---------------------------------------------------------------------------

def scene_crop_examples(record: SceneRecord, n_crops: int, cfg: OracleConfig,
                        rng: np.random.Generator) -> Tuple[List[GraspConfig], List[int]]:
    """Anotaciones guardadas más candidatos extra etiquetados por el oráculo"""
    if record.shape is None:
        raise DataError(f"La escena {record.index} no tiene forma asociada en el sidecar")
    grasps = [a.grasp for a in record.annotations][:n_crops]
    labels = [int(a.robust) for a in record.annotations][:n_crops]
    positives = [a.grasp for a in record.annotations if a.robust]
    tries = 0
    while len(grasps) < n_crops and tries < 50 * n_crops:
        tries += 1
        roll = rng.random()
        if roll < 0.45:
            g = antipodal_candidate(record.shape, record.meta, cfg, rng)
        elif roll < 0.7 and positives:
            g = perturbed_candidate(positives[int(rng.integers(0, len(positives)))], record.meta, rng)
        else:
            g = random_candidate(record.shape, record.meta, cfg, rng)
        if g is None:
            continue
        robust, _ = oracle_eval(record.shape, g, cfg, record.meta)
        grasps.append(g)
        labels.append(int(robust))
    return grasps, labels


def build_crop_set(records: Sequence[SceneRecord], crops_per_scene: int, cfg: OracleConfig,
                   seed: int, quiet: bool = True) -> CropSet:
    crops, zs, labels = [], [], []
    for record in tqdm(records, desc="Recortes", disable=quiet):
        rng = scene_rng(seed, record.index, CROP_STREAM)
        grasps, scene_labels = scene_crop_examples(record, crops_per_scene, cfg, rng)
        if not grasps:
            continue
        with ad.no_grad():
            crops.append(crops_for_classifier(record.depth, grasps).data)
        zs.extend(g.z for g in grasps)
        labels.extend(scene_labels)
    if not crops:
        raise DataError("No se generó ningún recorte")
    return CropSet(np.concatenate(crops), np.array(zs), np.array(labels, dtype=np.int64))


# ---------------------------------------------------------------------------
# Entrenamiento
# ---------------------------------------------------------------------------

class QualityTrainer:
    def __init__(self, config: QualityConfig, progress_callback=None, quiet: bool = False):
        self.config = config
        self.progress_callback = progress_callback
        self.quiet = quiet

    def log_progress(self, message: str, level: str = "INFO"):
        if self.progress_callback:
            self.progress_callback(message, level)
        getattr(logging, level.lower(), logging.info)(message)

    def train(self, train_set: CropSet, heldout: CropSet, seed: int) -> Tuple[QualityModel, QualityReport]:
        labels = train_set.labels
        if len(labels) == 0 or labels.min() == labels.max():
            raise DataError("El conjunto de entrenamiento del clasificador tiene una sola clase")
        cfg = self.config
        rng = np.random.default_rng(seed)
        backbone = Backbone.build(cfg.backbone(), int(rng.integers(0, 2 ** 31)))
        model = QualityModel(
            backbone,
            crop_mean=float(train_set.crops.mean()), crop_std=float(max(train_set.crops.std(), 1e-6)),
            z_mean=float(train_set.z.mean()), z_std=float(max(train_set.z.std(), 1e-6)),
            threshold=cfg.threshold,
        )
        optimizer = Adam(backbone.params, lr=cfg.learning_rate, l2=cfg.l2_reg)
        self.log_progress(f"Entrenando clasificador: {len(train_set)} recortes "
                          f"({train_set.positive_rate:.1%} positivos), {cfg.epochs} épocas")
        epoch_losses = []
        for epoch in range(cfg.epochs):
            order = np.random.default_rng([seed, epoch]).permutation(len(train_set))
            losses = []
            batches = range(0, len(order), cfg.batch_size)
            for start in tqdm(batches, desc=f"Época {epoch + 1}/{cfg.epochs}", disable=self.quiet):
                batch = train_set.subset(order[start:start + cfg.batch_size])
                optimizer.zero_grad()
                loss = ad.binary_cross_entropy_with_logits(model.logits(batch.crops, batch.z),
                                                           batch.labels.astype(float))
                loss.backward()
                optimizer.step()
                losses.append(loss.item())
            epoch_losses.append(float(np.mean(losses)))
            self.log_progress(f"Época {epoch + 1}: pérdida media {epoch_losses[-1]:.4f}")

        model.freeze()
        metrics = binary_metrics(predict_proba(model, heldout) > model.threshold, heldout.labels)
        report = QualityReport(metrics["accuracy"], metrics["precision"], metrics["recall"],
                               len(train_set), len(heldout), train_set.positive_rate, epoch_losses)
        self.log_progress(f"✅ Clasificador: exactitud {report.accuracy:.3f}, precisión "
                          f"{report.precision:.3f}, sensibilidad {report.recall:.3f}")
        return model, report


def train_classifier(train_set: CropSet, config: QualityConfig, seed: int,
                     heldout: Optional[CropSet] = None, quiet: bool = True) -> Tuple[QualityModel, QualityReport]:
    return QualityTrainer(config, quiet=quiet).train(train_set, heldout if heldout is not None else train_set, seed)


def train_quality_from_dataset(dataset: GraspDataset, config: QualityConfig, seed: int,
                               quiet: bool = True, progress_callback=None) -> Tuple[QualityModel, QualityReport]:
    """Recortes de train y val etiquetados por el oráculo y entrenamiento del clasificador"""
    cfg = dataset.oracle_cfg
    train_set = build_crop_set(dataset.split("train"), config.crops_per_scene, cfg, seed, quiet)
    heldout = build_crop_set(dataset.split("val"), config.crops_per_scene, cfg, seed, quiet)
    trainer = QualityTrainer(config, progress_callback, quiet)
    return trainer.train(train_set, heldout, seed)
