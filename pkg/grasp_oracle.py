"""
Oráculo analítico de robustez antipodal para pinzas paralelas
Sustituto de escritorio de Robust Ferrari-Canny: test de cono de fricción,
apertura máxima y holgura de las mordazas, más un muestreador de anotaciones.
"""

import logging
import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from errors import DataError
from grasp_geometry import GraspConfig, ImageMeta, canonical_angle
from scene_generator import PartGeometry, PrimitiveShape, shape_geometry


@dataclass
class OracleConfig:
    friction_coeff: float = 0.5
    max_opening: float = 0.05
    clearance_depth: float = 0.005
    contact_tolerance: float = 0.002
    jaw_margin: float = 0.008

    def __post_init__(self):
        if not self.friction_coeff > 0:
            raise DataError(f"friction_coeff debe ser positivo: {self.friction_coeff}")
        if not self.max_opening > 0:
            raise DataError(f"max_opening debe ser positivo: {self.max_opening}")

    @classmethod
    def from_dict(cls, data: Dict) -> "OracleConfig":
        return cls(**data)

    def to_dict(self) -> Dict:
        return {"friction_coeff": self.friction_coeff, "max_opening": self.max_opening,
                "clearance_depth": self.clearance_depth, "contact_tolerance": self.contact_tolerance,
                "jaw_margin": self.jaw_margin}


@dataclass
class Annotation:
    grasp: GraspConfig
    robust: bool
    quality: float


@dataclass
class Contact:
    point: np.ndarray
    normal: np.ndarray
    height: float


def _slice(parts: Sequence[PartGeometry], jaw_height: float) -> List[PartGeometry]:
    """Piezas que cortan el plano de cierre a la altura de las mordazas"""
    return [p for p in parts if p.height > jaw_height]


def _first_entry(parts: Sequence[PartGeometry], origin: np.ndarray, direction: np.ndarray,
                 max_t: float) -> Optional[Contact]:
    best = None
    for part in parts:
        hit = part.ray_entry(origin, direction, max_t)
        if hit is not None and (best is None or hit[0] < best[0]):
            best = (hit[0], hit[1], part.height)
    if best is None:
        return None
    return Contact(origin + best[0] * direction, best[1], best[2])


def _judge(c1: Optional[Contact], c2: Optional[Contact], jaws: Tuple[np.ndarray, np.ndarray],
           jaw_distance: float, axis: np.ndarray, jaw_height: float, w_px: float,
           cfg: OracleConfig, pixel_scale: float) -> Tuple[bool, float]:
    """Condiciones de robustez y calidad por márgenes, comunes a ambos oráculos"""
    if c1 is None or c2 is None:
        return False, 0.0
    friction_limit = math.atan(cfg.friction_coeff)
    a1 = math.acos(float(np.clip(c1.normal @ axis, -1.0, 1.0)))
    a2 = math.acos(float(np.clip(-(c2.normal @ axis), -1.0, 1.0)))
    m_friction = 1.0 - max(a1, a2) / friction_limit

    separation = float(np.linalg.norm(c1.point - c2.point)) * pixel_scale
    fits = separation <= cfg.max_opening and separation <= w_px * pixel_scale
    m_width = 1.0 - separation / cfg.max_opening

    tolerance = cfg.contact_tolerance
    m_clear = (jaw_distance * pixel_scale - tolerance) / (2.0 * tolerance)

    grip = min(c1.height, c2.height) - jaw_height
    m_depth = min(grip, jaw_height - cfg.clearance_depth) / cfg.clearance_depth

    robust = m_friction >= 0 and fits and m_clear > 0 and m_depth > 0
    quality = float(np.clip(min(m_friction, m_width, m_clear, m_depth, 1.0), 0.0, 1.0))
    return robust, quality


def oracle_eval(shape: PrimitiveShape, g: GraspConfig, cfg: OracleConfig,
                meta: ImageMeta) -> Tuple[bool, float]:
    """Etiqueta analítica (robusto, calidad) de un agarre sobre una forma"""
    parts = _slice(shape_geometry(shape, meta.pixel_scale), meta.camera_height - g.z)
    jaw_height = meta.camera_height - g.z
    if not parts:
        return False, 0.0
    axis = g.axis()
    center = np.array([g.x, g.y])
    w_px = g.w / meta.pixel_scale
    p1, p2 = center + axis * w_px / 2, center - axis * w_px / 2
    c1 = _first_entry(parts, p1, -axis, w_px)
    c2 = _first_entry(parts, p2, axis, w_px)
    jaw_distance = min(part.distance(p) for part in parts for p in (p1, p2))
    return _judge(c1, c2, (p1, p2), jaw_distance, axis, jaw_height, w_px, cfg, meta.pixel_scale)


def union_boundary(parts: Sequence[PartGeometry], n_points: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Puntos uniformes sobre el contorno de la unión con normales salientes y altura de pieza"""
    perimeters = np.array([p.perimeter() for p in parts])
    counts = np.maximum(1, np.round(n_points * perimeters / perimeters.sum()).astype(int))
    points, normals, heights = [], [], []
    for i, (part, count) in enumerate(zip(parts, counts)):
        pts, nrm = part.boundary_points((np.arange(count) + 0.5) / count)
        keep = np.ones(count, dtype=bool)
        for j, other in enumerate(parts):
            if j != i:
                keep &= ~other.contains(pts)
        points.append(pts[keep])
        normals.append(nrm[keep])
        heights.append(np.full(int(keep.sum()), part.height))
    return np.concatenate(points), np.concatenate(normals), np.concatenate(heights)


def dense_contact_eval(shape: PrimitiveShape, g: GraspConfig, cfg: OracleConfig, meta: ImageMeta,
                       n_points: int = 10000) -> Tuple[bool, float]:
    """Simulación de contactos por fuerza bruta sobre n puntos del contorno

    Sirve de referencia independiente para verificar `oracle_eval`.
    """
    jaw_height = meta.camera_height - g.z
    parts = _slice(shape_geometry(shape, meta.pixel_scale), jaw_height)
    if not parts:
        return False, 0.0
    points, normals, heights = union_boundary(parts, n_points)
    axis = g.axis()
    perp = np.array([-axis[1], axis[0]])
    center = np.array([g.x, g.y])
    w_px = g.w / meta.pixel_scale
    rel = points - center
    along, across = rel @ axis, rel @ perp
    spacing = sum(p.perimeter() for p in parts) / max(len(points), 1)
    on_line = (np.abs(across) <= spacing) & (np.abs(along) <= w_px / 2)

    jaws = (center + axis * w_px / 2, center - axis * w_px / 2)
    inside = any(bool(p.contains(j)[0]) for p in parts for j in jaws)
    jaw_distance = 0.0 if inside else float(min(np.min(np.linalg.norm(points - j, axis=1)) for j in jaws))
    if not np.any(on_line):
        return False, 0.0
    idx = np.flatnonzero(on_line)
    i1, i2 = idx[np.argmax(along[idx])], idx[np.argmin(along[idx])]
    c1 = Contact(center + along[i1] * axis, normals[i1], float(heights[i1]))
    c2 = Contact(center + along[i2] * axis, normals[i2], float(heights[i2]))
    return _judge(c1, c2, jaws, jaw_distance, axis, jaw_height, w_px, cfg, meta.pixel_scale)


# ---------------------------------------------------------------------------
# Muestreo de anotaciones
# ---------------------------------------------------------------------------

def _jaw_height(rng: np.random.Generator, parts: Sequence[PartGeometry], cfg: OracleConfig) -> float:
    top = max(p.height for p in parts)
    return float(rng.uniform(cfg.clearance_depth * 1.5, max(top - cfg.clearance_depth, cfg.clearance_depth * 2)))


def antipodal_candidate(shape: PrimitiveShape, meta: ImageMeta, cfg: OracleConfig,
                        rng: np.random.Generator) -> Optional[GraspConfig]:
    """Candidato antipodal: punto del contorno, dirección dentro del cono y contacto opuesto"""
    all_parts = shape_geometry(shape, meta.pixel_scale)
    jaw_height = _jaw_height(rng, all_parts, cfg)
    parts = _slice(all_parts, jaw_height)
    if not parts:
        return None
    points, normals, _ = union_boundary(parts, 256)
    if len(points) == 0:
        return None
    k = int(rng.integers(0, len(points)))
    spread = math.atan(cfg.friction_coeff) * 0.5
    angle = math.atan2(-normals[k][1], -normals[k][0]) + float(rng.uniform(-spread, spread))
    direction = np.array([math.cos(angle), math.sin(angle)])
    reach = 2.0 * cfg.max_opening / meta.pixel_scale
    far = points[k] + direction * reach
    opposite = _first_entry(parts, far, -direction, reach)
    if opposite is None:
        return None
    separation = float(np.linalg.norm(opposite.point - points[k])) * meta.pixel_scale
    if separation <= 0 or separation > cfg.max_opening:
        return None
    w = min(separation + 2.0 * cfg.jaw_margin, cfg.max_opening)
    center = (points[k] + opposite.point) / 2.0
    return GraspConfig(float(center[0]), float(center[1]), meta.camera_height - jaw_height,
                       canonical_angle(angle), w)


def random_candidate(shape: PrimitiveShape, meta: ImageMeta, cfg: OracleConfig,
                     rng: np.random.Generator) -> GraspConfig:
    """Agarre arbitrario cerca de la forma (fuente de negativos)"""
    parts = shape_geometry(shape, meta.pixel_scale)
    bounds = np.array([p.bounds() for p in parts])
    x0, y0 = bounds[:, 0].min(), bounds[:, 1].min()
    x1, y1 = bounds[:, 2].max(), bounds[:, 3].max()
    cx = float(np.clip(rng.uniform(x0, x1), 0, meta.width - 1))
    cy = float(np.clip(rng.uniform(y0, y1), 0, meta.height - 1))
    jaw_height = _jaw_height(rng, parts, cfg)
    return GraspConfig(cx, cy, meta.camera_height - jaw_height, float(rng.uniform(-math.pi / 2, math.pi / 2)),
                       float(rng.uniform(0.4 * cfg.max_opening, cfg.max_opening)))


def perturbed_candidate(g: GraspConfig, meta: ImageMeta, rng: np.random.Generator) -> GraspConfig:
    """Variante cercana de un agarre: giro o desplazamiento moderado"""
    if rng.random() < 0.5:
        theta = g.theta + float(rng.choice([-1, 1])) * float(rng.uniform(math.radians(25), math.radians(90)))
        return GraspConfig(g.x, g.y, g.z, theta, g.w)
    shift = float(rng.uniform(0.3, 0.7)) * g.w / meta.pixel_scale
    axis = g.axis() * float(rng.choice([-1, 1]))
    x = float(np.clip(g.x + axis[0] * shift, 0, meta.width - 1))
    y = float(np.clip(g.y + axis[1] * shift, 0, meta.height - 1))
    return GraspConfig(x, y, g.z, g.theta, g.w)


def sample_annotations(shape: PrimitiveShape, meta: ImageMeta, n_pos: int, n_neg: int, seed,
                       cfg: OracleConfig, max_tries_per_grasp: int = 200) -> List[Annotation]:
    """Muestreo por rechazo de n_pos positivos y n_neg negativos etiquetados por el oráculo"""
    if n_pos < 0 or n_neg < 0:
        raise DataError("n_pos y n_neg deben ser no negativos")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    positives: List[Annotation] = []
    tries = 0
    while len(positives) < n_pos:
        tries += 1
        if tries > max_tries_per_grasp * max(n_pos, 1):
            raise DataError(f"No se encontraron {n_pos} positivos para la forma {shape.kind} "
                            f"{shape.to_dict()} tras {tries - 1} intentos")
        g = antipodal_candidate(shape, meta, cfg, rng)
        if g is None:
            continue
        robust, quality = oracle_eval(shape, g, cfg, meta)
        if robust:
            positives.append(Annotation(g, True, quality))

    negatives: List[Annotation] = []
    tries = 0
    while len(negatives) < n_neg:
        tries += 1
        if tries > max_tries_per_grasp * max(n_neg, 1):
            raise DataError(f"No se encontraron {n_neg} negativos para la forma {shape.kind}")
        if positives and rng.random() < 0.5:
            g = perturbed_candidate(positives[int(rng.integers(0, len(positives)))].grasp, meta, rng)
        else:
            g = random_candidate(shape, meta, cfg, rng)
        robust, quality = oracle_eval(shape, g, cfg, meta)
        if not robust:
            negatives.append(Annotation(g, False, quality))

    logging.debug(f"Anotaciones para {shape.kind}: {len(positives)} positivas, {len(negatives)} negativas")
    return positives + negatives
