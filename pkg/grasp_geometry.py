"""
Geometría de agarres para GQ-STN
Representación 5D, conversión a rectángulos, recuperación del agarre desde la
cascada de STNs, recorte alineado para el clasificador y métrica del rectángulo.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import shapely.geometry

import autodiff as ad
import stn
from autodiff import Tensor
from errors import DataError, GQSTNError, ShapeError

CROP_SIZE = 32
# La apertura w ocupa 1/3 del ancho del recorte (w = s/3)
OPENING_FRACTION = 1.0 / 3.0
RECT_ASPECT = 5.0
ANGLE_THRESHOLD_DEG = 30.0
IOU_THRESHOLD = 0.25


def canonical_angle(theta: float) -> float:
    """Reducir un ángulo de pinza a (-π/2, π/2] (simetría de orden dos)"""
    if -math.pi / 2 < theta <= math.pi / 2:
        return theta
    return -((-theta + math.pi / 2) % math.pi - math.pi / 2)


def angle_difference(a: float, b: float) -> float:
    """Diferencia angular módulo π, en [0, π/2]"""
    d = abs(a - b) % math.pi
    return min(d, math.pi - d)


@dataclass
class ImageMeta:
    """Metadatos físicos: cámara ortográfica a altura fija sobre la mesa"""
    height: int
    width: int
    pixel_scale: float
    camera_height: float

    @property
    def table_depth(self) -> float:
        return self.camera_height

    @property
    def span(self) -> int:
        """Distancia en píxeles entre los centros de los píxeles extremos"""
        if self.height != self.width:
            raise ShapeError(f"Se requieren imágenes cuadradas: {self.height}x{self.width}")
        return self.width - 1

    def to_dict(self) -> Dict:
        return {"height": self.height, "width": self.width,
                "pixel_scale": float(self.pixel_scale), "camera_height": float(self.camera_height)}

    @classmethod
    def from_dict(cls, data: Dict) -> "ImageMeta":
        return cls(int(data["height"]), int(data["width"]),
                   float(data["pixel_scale"]), float(data["camera_height"]))


@dataclass
class DepthImage:
    depth: np.ndarray
    meta: ImageMeta

    def normalized(self) -> np.ndarray:
        """Profundidad estandarizada (depth − mesa) / altura de cámara; la mesa vale 0"""
        return (self.depth - self.meta.table_depth) / self.meta.camera_height


@dataclass
class GraspConfig:
    """Agarre 5D: centro (px), profundidad de las mordazas z (m), ángulo θ (rad), apertura w (m)"""
    x: float
    y: float
    z: float
    theta: float
    w: float

    def __post_init__(self):
        if not self.w > 0:
            raise GQSTNError(f"Apertura no positiva: {self.w}")
        self.theta = canonical_angle(self.theta)

    def axis(self) -> np.ndarray:
        return np.array([math.cos(self.theta), math.sin(self.theta)])

    def to_dict(self) -> Dict[str, float]:
        return {"x": float(self.x), "y": float(self.y), "z": float(self.z),
                "theta": float(self.theta), "w": float(self.w)}

    @classmethod
    def from_dict(cls, data: Dict) -> "GraspConfig":
        return cls(data["x"], data["y"], data["z"], data["theta"], data["w"])


@dataclass
class RectGrasp:
    center: Tuple[float, float]
    angle: float
    width_px: float
    height_px: float = field(default=-1.0)

    def __post_init__(self):
        if self.height_px < 0:
            self.height_px = self.width_px / RECT_ASPECT
        if not math.isclose(self.height_px, self.width_px / RECT_ASPECT, rel_tol=1e-9):
            raise GQSTNError("El rectángulo debe cumplir h = w/5")

    def corners(self) -> np.ndarray:
        c, s = math.cos(self.angle), math.sin(self.angle)
        along = np.array([c, s]) * self.width_px / 2.0
        across = np.array([-s, c]) * self.height_px / 2.0
        center = np.asarray(self.center, dtype=float)
        return np.stack([center + along + across, center - along + across,
                         center - along - across, center + along - across])

    def polygon(self) -> shapely.geometry.Polygon:
        return shapely.geometry.Polygon(self.corners())


@dataclass
class MetricResult:
    positive: bool
    best_iou: float
    angle_diff: float


def grasp_to_rect(g: GraspConfig, meta: ImageMeta) -> RectGrasp:
    return RectGrasp((g.x, g.y), g.theta, g.w / meta.pixel_scale)


def jaccard(a: RectGrasp, b: RectGrasp) -> float:
    pa, pb = a.polygon(), b.polygon()
    inter = pa.intersection(pb).area
    union = pa.area + pb.area - inter
    return 0.0 if union <= 0 else inter / union


def rect_metric(P: RectGrasp, G_list: Sequence[RectGrasp],
                angle_threshold_deg: float = ANGLE_THRESHOLD_DEG,
                iou_threshold: float = IOU_THRESHOLD) -> MetricResult:
    """Positivo si algún G cumple diferencia angular < 30° y Jaccard > 0.25"""
    if not G_list:
        raise DataError("rect_metric necesita al menos un rectángulo de referencia")
    limit = math.radians(angle_threshold_deg)
    positive = False
    best_iou, best_angle = -1.0, math.pi / 2
    for G in G_list:
        iou = jaccard(P, G)
        diff = angle_difference(P.angle, G.angle)
        if diff < limit and iou > iou_threshold:
            positive = True
        if iou > best_iou:
            best_iou, best_angle = iou, diff
    return MetricResult(positive, best_iou, best_angle)


# ---------------------------------------------------------------------------
# Agarre <-> cascada
# ---------------------------------------------------------------------------

@dataclass
class CascadeTarget:
    """Parámetros de la cascada que codifican un agarre (objetivos de entrenamiento)"""
    t: stn.AffineParams
    r: stn.AffineParams
    c: stn.AffineParams
    x: np.ndarray
    y: np.ndarray
    theta: np.ndarray
    s: np.ndarray
    z_norm: np.ndarray


def cascade_from_grasps(grasps: Sequence[GraspConfig], meta: ImageMeta,
                        stats: Optional[stn.DatasetStats] = None) -> CascadeTarget:
    """Codificar agarres anotados como parámetros (x, y, θ, s, z normalizada)"""
    span = meta.span
    x = np.array([g.x / span - 0.5 for g in grasps])
    y = np.array([g.y / span - 0.5 for g in grasps])
    theta = np.array([g.theta for g in grasps])
    s = np.array([(g.w / meta.pixel_scale) / (OPENING_FRACTION * span) for g in grasps])
    if stats is not None:
        z_norm = np.array([(g.z - stats.z_mean) / stats.z_std for g in grasps])
    else:
        z_norm = np.zeros(len(grasps))
    return CascadeTarget(stn.translation_params(x, y), stn.rotation_params(theta),
                         stn.scale_params(s), x, y, theta, s, z_norm)


def cascade_from_grasp(g: GraspConfig, meta: ImageMeta,
                       stats: Optional[stn.DatasetStats] = None) -> CascadeTarget:
    return cascade_from_grasps([g], meta, stats)


def grasps_from_cascade(t: stn.AffineParams, r: stn.AffineParams, c: stn.AffineParams,
                        z_raw, stats: stn.DatasetStats, meta: ImageMeta) -> List[GraspConfig]:
    """Invertir la transformación compuesta para expresar el agarre en píxeles de la imagen"""
    with ad.no_grad():
        matrix = stn.compose_cascade(t, r, c).data
    z_raw = np.broadcast_to(ad.as_tensor(z_raw).data.reshape(-1), (matrix.shape[0],))
    span = meta.span
    grasps = []
    for m, zr in zip(matrix, z_raw):
        cx = (m[0, 2] + 1.0) * span / 2.0
        cy = (m[1, 2] + 1.0) * span / 2.0
        theta = math.atan2(m[1, 0], m[0, 0])
        s = math.hypot(m[0, 0], m[1, 0])
        w = s * OPENING_FRACTION * span * meta.pixel_scale
        z = float(zr) * stats.z_std + stats.z_mean
        grasps.append(GraspConfig(cx, cy, z, theta, w))
    return grasps


def grasp_from_cascade(t: stn.AffineParams, r: stn.AffineParams, c: stn.AffineParams,
                       z_raw, stats: stn.DatasetStats, meta: ImageMeta) -> GraspConfig:
    return grasps_from_cascade(t, r, c, z_raw, stats, meta)[0]


# ---------------------------------------------------------------------------
# Recorte alineado para el clasificador
# ---------------------------------------------------------------------------

def _check_center(image: DepthImage, g: GraspConfig):
    h, w = image.depth.shape
    if not (0.0 <= g.x <= w - 1 and 0.0 <= g.y <= h - 1):
        raise DataError(f"Centro del agarre fuera de la imagen: ({g.x:.1f}, {g.y:.1f})")


def crop_for_classifier(image: DepthImage, g: GraspConfig, out_size: int = CROP_SIZE) -> Tensor:
    """Recorte 32×32 con el eje de la pinza horizontal y w = 1/3 del ancho"""
    return crops_for_classifier(image, [g], out_size)[0]


def crops_for_classifier(image: DepthImage, grasps: Sequence[GraspConfig],
                         out_size: int = CROP_SIZE) -> Tensor:
    """Versión por lotes; usa el mismo muestreador que el STN de escala"""
    for g in grasps:
        _check_center(image, g)
    target = cascade_from_grasps(grasps, image.meta)
    matrix = stn.compose_cascade(target.t, target.r, target.c)
    normalized = image.normalized()[None]
    crops = stn.transform_image(normalized, matrix, out_size, out_size, pad_value=0.0)
    logging.debug(f"{len(grasps)} recortes generados")
    return crops
