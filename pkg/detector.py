"""
Detectores de agarre de una sola pasada
GQSTN: cascada de tres STNs (traslación, rotación, escala) cuya salida final
es el recorte del clasificador. DirectGrasp: un backbone que regresa las seis
salidas directamente (línea base de regresión geométrica).
"""

import hashlib
import logging
import time
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Union

import numpy as np

import autodiff as ad
import stn
from autodiff import Tensor
from checkpoint_io import load_checkpoint, save_checkpoint
from errors import DataError, ShapeError
from grasp_geometry import (CROP_SIZE, CascadeTarget, DepthImage, GraspConfig, ImageMeta,
                            crops_for_classifier, grasps_from_cascade)
from locnet import Backbone, BackboneConfig
from quality_model import QualityModel, classify

GQSTN_KIND = "gqstn"
DIRECTGRASP_KIND = "directgrasp"
STAGES = ("trans", "rot", "scale")


@dataclass
class CascadeForward:
    """Resultado diferenciable de una pasada por la cascada"""
    heads: stn.HeadOutputs
    t: stn.AffineParams
    r: stn.AffineParams
    c: stn.AffineParams
    z: Tensor
    crop: Tensor
    stage_images: Dict[str, Tensor] = field(default_factory=dict)


@dataclass
class DetectionResult:
    grasp: GraspConfig
    p_robust: Optional[float]
    logit: Optional[float]
    crop: np.ndarray
    stage_images: Dict[str, np.ndarray] = field(default_factory=dict)
    detect_time: float = 0.0

    def to_dict(self) -> Dict:
        return {"grasp": self.grasp.to_dict(), "p_robust": self.p_robust, "logit": self.logit,
                "detect_time": self.detect_time}


def _image_batch(images: Union[Sequence[DepthImage], np.ndarray, Tensor], size: Sequence[int]) -> Tensor:
    if isinstance(images, (list, tuple)):
        batch = ad.as_tensor(np.stack([img.normalized() for img in images]))
    else:
        batch = ad.as_tensor(images)
        if batch.ndim == 2:
            batch = ad.reshape(batch, (1,) + batch.shape)
    if batch.ndim != 3 or tuple(batch.shape[1:]) != tuple(size):
        raise ShapeError(f"Imágenes {batch.shape} incompatibles con la entrada del detector {tuple(size)}")
    return batch


def _split_heads(out: Tensor, offset: int = 0) -> List[Tensor]:
    return [out[:, offset], out[:, offset + 1]]


class _Detector:
    kind = ""
    uses_own_crop = False

    def __init__(self, backbone_config: BackboneConfig, stats: stn.DatasetStats, literal_rotation: bool = False):
        self.backbone_config = backbone_config
        self.stats = stats
        self.literal_rotation = literal_rotation
        self.networks: Dict[str, Backbone] = {}

    def parameters(self) -> Dict[str, Tensor]:
        return {f"{stage}.{name}": t for stage, net in self.networks.items() for name, t in net.params.items()}

    def checksum(self) -> str:
        digest = hashlib.sha256()
        for stage in sorted(self.networks):
            digest.update(self.networks[stage].checksum().encode("ascii"))
        return digest.hexdigest()

    def metadata(self) -> Dict:
        return {"kind": self.kind, "backbone": self.backbone_config.to_dict(), "stats": self.stats.to_dict(),
                "literal_rotation": self.literal_rotation}

    def state(self) -> Dict[str, np.ndarray]:
        tensors = {}
        for stage in sorted(self.networks):
            tensors.update(self.networks[stage].state(prefix=f"{stage}."))
        return tensors

    def load_state(self, tensors: Dict[str, np.ndarray]):
        for stage, net in self.networks.items():
            net.load_state(tensors, prefix=f"{stage}.")

    def save(self, path, extra: Optional[Dict] = None):
        metadata = self.metadata()
        metadata.update(extra or {})
        return save_checkpoint(path, self.state(), metadata)

    def forward(self, images, teacher: Optional[CascadeTarget] = None) -> CascadeForward:
        raise NotImplementedError

    def _crop_for(self, images: Tensor, fwd: CascadeForward, depth_images) -> np.ndarray:
        return fwd.crop.data

    def detect_batch(self, images: Sequence[DepthImage], quality: Optional[QualityModel] = None) -> List[DetectionResult]:
        """Una detección por imagen: agarre recuperado, recorte y p_robust del clasificador"""
        if not images:
            return []
        meta = images[0].meta
        start = time.perf_counter()
        with ad.no_grad():
            batch = _image_batch(images, self.backbone_config.input_size)
            fwd = self.forward(batch)
            grasps = grasps_from_cascade(fwd.t, fwd.r, fwd.c, fwd.z, self.stats, meta)
            crops = self._crop_for(batch, fwd, images)
            logits = probs = None
            if quality is not None:
                z_m = np.array([g.z for g in grasps])
                logit, p = classify(quality, crops, z_m)
                logits, probs = logit.data, p.data
        elapsed = (time.perf_counter() - start) / len(images)
        results = []
        for i, g in enumerate(grasps):
            results.append(DetectionResult(
                grasp=g,
                p_robust=None if probs is None else float(probs[i]),
                logit=None if logits is None else float(logits[i]),
                crop=np.array(crops[i]),
                stage_images={name: np.array(img.data[i]) for name, img in fwd.stage_images.items()},
                detect_time=elapsed,
            ))
        logging.debug(f"{self.kind}: {len(results)} detecciones en {elapsed:.4f} s/imagen")
        return results

    def detect(self, image: DepthImage, quality: Optional[QualityModel] = None) -> DetectionResult:
        return self.detect_batch([image], quality)[0]


class GQSTN(_Detector):
    """Cascada traslación → rotación → escala; cada etapa remuestrea la imagen original"""
    kind = GQSTN_KIND
    uses_own_crop = True

    @classmethod
    def build(cls, backbone_config: BackboneConfig, stats: stn.DatasetStats, seed: int,
              literal_rotation: bool = False) -> "GQSTN":
        model = cls(backbone_config.replace(head_dim=2, n_heads=1), stats, literal_rotation)
        seeds = np.random.SeedSequence(seed).generate_state(len(STAGES))
        for stage, stage_seed in zip(STAGES, seeds):
            model.networks[stage] = Backbone.build(model.backbone_config, int(stage_seed))
        return model

    def forward(self, images, teacher: Optional[CascadeTarget] = None) -> CascadeForward:
        """Con `teacher`, las etapas posteriores consumen imágenes transformadas por la verdad de terreno"""
        batch = _image_batch(images, self.backbone_config.input_size)
        h, w = batch.shape[1:]
        w_x, w_y = _split_heads(self.networks["trans"](batch))
        x, y = stn.head_translation(w_x, w_y)
        t = stn.translation_params(x, y)

        t_in = teacher.t if teacher is not None else t
        translated = stn.transform_image(batch, t_in.normalized_matrix(), h, w)
        w_alpha, w_beta = _split_heads(self.networks["rot"](translated))
        r = stn.rotation_params(stn.head_rotation(w_alpha, w_beta, self.literal_rotation))

        r_in = teacher.r if teacher is not None else r
        rotated = stn.transform_image(batch, stn.partial_cascade(t_in, r_in), h, w)
        w_s, w_z = _split_heads(self.networks["scale"](rotated))
        s, z = stn.head_scale_z(w_s, w_z, self.stats)
        c = stn.scale_params(s)

        crop = stn.transform_image(batch, stn.compose_cascade(t_in, r_in, c), CROP_SIZE, CROP_SIZE)
        heads = stn.HeadOutputs(w_x, w_y, w_alpha, w_beta, w_s, w_z)
        return CascadeForward(heads, t, r, c, z, crop,
                              {"translated": translated, "rotated": rotated, "crop": crop})


class DirectGrasp(_Detector):
    """Un solo backbone con tres cabezas de dos salidas sobre características compartidas"""
    kind = DIRECTGRASP_KIND

    @classmethod
    def build(cls, backbone_config: BackboneConfig, stats: stn.DatasetStats, seed: int,
              literal_rotation: bool = False) -> "DirectGrasp":
        model = cls(backbone_config.replace(head_dim=2, n_heads=3), stats, literal_rotation)
        model.networks["net"] = Backbone.build(model.backbone_config, seed)
        return model

    def forward(self, images, teacher: Optional[CascadeTarget] = None) -> CascadeForward:
        batch = _image_batch(images, self.backbone_config.input_size)
        out = self.networks["net"](batch)
        w_x, w_y = _split_heads(out, 0)
        w_alpha, w_beta = _split_heads(out, 2)
        w_s, w_z = _split_heads(out, 4)
        heads = stn.HeadOutputs(w_x, w_y, w_alpha, w_beta, w_s, w_z)
        t, r, c, z = stn.cascade_from_heads(heads, self.stats, self.literal_rotation)
        crop = stn.transform_image(batch, stn.compose_cascade(t, r, c), CROP_SIZE, CROP_SIZE)
        return CascadeForward(heads, t, r, c, z, crop)

    def _crop_for(self, images: Tensor, fwd: CascadeForward, depth_images) -> np.ndarray:
        grasps = grasps_from_cascade(fwd.t, fwd.r, fwd.c, fwd.z, self.stats, depth_images[0].meta)
        return np.stack([crops_for_classifier(img, [g]).data[0] for img, g in zip(depth_images, grasps)])


DETECTOR_KINDS = {GQSTN_KIND: GQSTN, DIRECTGRASP_KIND: DirectGrasp}


def load_detector(path) -> _Detector:
    tensors, metadata = load_checkpoint(path)
    kind = metadata.get("kind")
    if kind not in DETECTOR_KINDS:
        raise DataError(f"{path} no es un checkpoint de detector (kind={kind})")
    model = DETECTOR_KINDS[kind].build(BackboneConfig.from_dict(metadata["backbone"]),
                                       stn.DatasetStats.from_dict(metadata["stats"]), seed=0,
                                       literal_rotation=bool(metadata.get("literal_rotation", False)))
    model.load_state(tensors)
    return model
