"""
Generador sintético de escenas de profundidad vistas desde arriba
Primitivas prismáticas (caja, cilindro, prisma n-gonal y uniones de hasta 3)
renderizadas con cámara ortográfica sobre una mesa plana.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import shapely.geometry

from errors import DataError
from grasp_geometry import DepthImage, ImageMeta

SHAPE_KINDS = ("box", "cylinder", "ngon", "union")
MAX_GRASPABLE_WIDTH = 0.05


@dataclass
class PrimitiveShape:
    """Objeto prismático: pose (x, y en píxeles, θ en rad), dimensiones y altura en metros

    dims: caja (largo, ancho); cilindro (radio,); n-gono (circunradio, n).
    Una unión guarda sus partes (primitivas simples con pose absoluta) en `parts`.
    """
    kind: str
    pose: Tuple[float, float, float]
    dims: Tuple[float, ...] = ()
    height: float = 0.0
    components: List["PrimitiveShape"] = field(default_factory=list)

    def __post_init__(self):
        if self.kind not in SHAPE_KINDS:
            raise DataError(f"Tipo de forma desconocido: {self.kind}")
        if self.kind == "union":
            if not 1 <= len(self.components) <= 3:
                raise DataError("Una unión necesita entre 1 y 3 primitivas")
            self.height = max(c.height for c in self.components)
        elif not self.dims or min(self.dims) <= 0 or self.height <= 0:
            raise DataError(f"Dimensiones inválidas para {self.kind}: {self.dims}, altura {self.height}")

    def parts(self) -> List["PrimitiveShape"]:
        return list(self.components) if self.kind == "union" else [self]

    def shifted(self, dx: float, dy: float) -> "PrimitiveShape":
        x, y, theta = self.pose
        return PrimitiveShape(self.kind, (x + dx, y + dy, theta), self.dims, self.height,
                              [c.shifted(dx, dy) for c in self.components])

    def to_dict(self) -> Dict:
        data = {"kind": self.kind, "pose": [float(v) for v in self.pose]}
        if self.kind == "union":
            data["components"] = [c.to_dict() for c in self.components]
        else:
            data["dims"] = [float(v) for v in self.dims]
            data["height"] = float(self.height)
        return data

    @classmethod
    def from_dict(cls, data: Dict) -> "PrimitiveShape":
        if data["kind"] == "union":
            return cls("union", tuple(data["pose"]), (), 0.0,
                       [cls.from_dict(c) for c in data["components"]])
        return cls(data["kind"], tuple(data["pose"]), tuple(data["dims"]), float(data["height"]))


class PartGeometry:
    """Geometría en píxeles de una primitiva simple: pertenencia, rayos y contorno"""

    def __init__(self, part: PrimitiveShape, pixel_scale: float):
        self.part = part
        self.height = part.height
        self.center = np.array(part.pose[:2], dtype=float)
        theta = part.pose[2]
        if part.kind == "cylinder":
            self.radius = part.dims[0] / pixel_scale
            self.vertices = None
        else:
            if part.kind == "box":
                hl, hw = part.dims[0] / (2 * pixel_scale), part.dims[1] / (2 * pixel_scale)
                local = np.array([[hl, hw], [-hl, hw], [-hl, -hw], [hl, -hw]])
            else:
                radius, n = part.dims[0] / pixel_scale, int(part.dims[1])
                angles = 2 * math.pi * np.arange(n) / n
                local = radius * np.stack([np.cos(angles), np.sin(angles)], axis=1)
            c, s = math.cos(theta), math.sin(theta)
            rot = np.array([[c, -s], [s, c]])
            self.vertices = local @ rot.T + self.center
            edges = np.roll(self.vertices, -1, axis=0) - self.vertices
            normals = np.stack([edges[:, 1], -edges[:, 0]], axis=1)
            normals /= np.linalg.norm(normals, axis=1, keepdims=True)
            # normales hacia fuera respecto al centroide
            outward = np.sign(np.sum((self.vertices - self.center) * normals, axis=1))
            self.normals = normals * outward[:, None]
            self.offsets = np.sum(self.normals * self.vertices, axis=1)
            self.edges = edges

    def bounds(self) -> Tuple[float, float, float, float]:
        if self.vertices is None:
            r = self.radius
            return (self.center[0] - r, self.center[1] - r, self.center[0] + r, self.center[1] + r)
        return (*self.vertices.min(axis=0), *self.vertices.max(axis=0))

    def contains(self, points: np.ndarray) -> np.ndarray:
        points = np.atleast_2d(points)
        if self.vertices is None:
            return np.sum((points - self.center) ** 2, axis=1) <= self.radius ** 2
        return np.all(points @ self.normals.T - self.offsets <= 0, axis=1)

    def distance(self, point: np.ndarray) -> float:
        if self.vertices is None:
            return max(float(np.linalg.norm(point - self.center)) - self.radius, 0.0)
        return float(shapely.geometry.Polygon(self.vertices).distance(shapely.geometry.Point(point)))

    def ray_entry(self, origin: np.ndarray, direction: np.ndarray,
                  max_t: float) -> Optional[Tuple[float, np.ndarray]]:
        """Primer punto t ∈ [0, max_t] donde el rayo entra en la pieza y la normal saliente allí"""
        if self.vertices is None:
            rel = origin - self.center
            b = float(rel @ direction)
            c = float(rel @ rel) - self.radius ** 2
            disc = b * b - c
            if disc < 0:
                return None
            t = -b - math.sqrt(disc)
            if t < 0:
                if c <= 0:
                    return 0.0, np.zeros(2)
                return None
            if t > max_t:
                return None
            point = origin + t * direction
            return t, (point - self.center) / self.radius
        t_enter, t_exit, enter_normal = -math.inf, math.inf, np.zeros(2)
        for normal, offset in zip(self.normals, self.offsets):
            denom = float(normal @ direction)
            dist = float(normal @ origin) - offset
            if abs(denom) < 1e-15:
                if dist > 0:
                    return None
                continue
            t = -dist / denom
            if denom < 0:
                if t > t_enter:
                    t_enter, enter_normal = t, normal
            else:
                t_exit = min(t_exit, t)
        if t_enter > t_exit or t_exit < 0:
            return None
        if t_enter < 0:
            return 0.0, np.zeros(2)
        if t_enter > max_t:
            return None
        return t_enter, enter_normal.copy()

    def perimeter(self) -> float:
        if self.vertices is None:
            return 2 * math.pi * self.radius
        return float(np.sum(np.linalg.norm(self.edges, axis=1)))

    def boundary_points(self, u: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Puntos del contorno y normales salientes para fracciones de perímetro u ∈ [0, 1)"""
        if self.vertices is None:
            angles = 2 * math.pi * u
            normals = np.stack([np.cos(angles), np.sin(angles)], axis=1)
            return self.center + self.radius * normals, normals
        lengths = np.linalg.norm(self.edges, axis=1)
        cumulative = np.concatenate([[0.0], np.cumsum(lengths)])
        arc = u * cumulative[-1]
        idx = np.clip(np.searchsorted(cumulative, arc, side="right") - 1, 0, len(lengths) - 1)
        frac = (arc - cumulative[idx]) / lengths[idx]
        points = self.vertices[idx] + frac[:, None] * self.edges[idx]
        return points, self.normals[idx]


def shape_geometry(shape: PrimitiveShape, pixel_scale: float) -> List[PartGeometry]:
    return [PartGeometry(p, pixel_scale) for p in shape.parts()]


def render_scene(shape: Optional[PrimitiveShape], meta: ImageMeta, seed: int = 0,
                 noise_std: float = 0.0) -> DepthImage:
    """Profundidad ortográfica desde arriba; la mesa está a `camera_height`"""
    depth = np.full((meta.height, meta.width), meta.table_depth, dtype=np.float64)
    if shape is not None:
        rows, cols = np.mgrid[0:meta.height, 0:meta.width]
        pixels = np.stack([cols.ravel(), rows.ravel()], axis=1).astype(float)
        top = np.zeros(pixels.shape[0])
        for geometry in shape_geometry(shape, meta.pixel_scale):
            x0, y0, x1, y1 = geometry.bounds()
            if x0 < 0 or y0 < 0 or x1 > meta.width - 1 or y1 > meta.height - 1:
                raise DataError(f"La forma {shape.kind} sale del encuadre: ({x0:.1f}, {y0:.1f}, {x1:.1f}, {y1:.1f})")
            inside = geometry.contains(pixels)
            top = np.where(inside, np.maximum(top, geometry.height), top)
        depth -= top.reshape(depth.shape)
    if noise_std > 0:
        depth += np.random.default_rng(seed).normal(0.0, noise_std, size=depth.shape)
    return DepthImage(depth, meta)


# ---------------------------------------------------------------------------
# Formas aleatorias
# ---------------------------------------------------------------------------

def _random_simple(kind: str, rng: np.random.Generator, center: Tuple[float, float],
                   size_band: Tuple[float, float]) -> PrimitiveShape:
    lo, hi = size_band
    height = float(rng.uniform(0.02, 0.06))
    theta = float(rng.uniform(-math.pi / 2, math.pi / 2))
    if kind == "box":
        width = float(rng.uniform(lo, hi))
        length = float(rng.uniform(width, min(hi * 1.2, MAX_GRASPABLE_WIDTH * 1.2)))
        dims = (length, width)
    elif kind == "cylinder":
        dims = (float(rng.uniform(lo, hi) / 2),)
    else:
        # solo n par: los n-gonos impares no tienen caras paralelas dentro del cono de fricción
        n = int(rng.choice([4, 6, 8]))
        dims = (float(rng.uniform(lo, hi) / 2), float(n))
    return PrimitiveShape(kind, (center[0], center[1], theta), dims, height)


def _fits(shape: PrimitiveShape, meta: ImageMeta) -> bool:
    for geometry in shape_geometry(shape, meta.pixel_scale):
        x0, y0, x1, y1 = geometry.bounds()
        if x0 < 0 or y0 < 0 or x1 > meta.width - 1 or y1 > meta.height - 1:
            return False
    return True


def random_shape(rng: np.random.Generator, meta: ImageMeta, shape_mix: Dict[str, float],
                 max_attempts: int = 100) -> PrimitiveShape:
    """Forma aleatoria dentro de la banda compatible con la pinza, cerca del centro

    Se vuelve a sortear mientras la forma no quepa en el encuadre.
    """
    for _ in range(max_attempts):
        shape = _draw_shape(rng, meta, shape_mix)
        if _fits(shape, meta):
            return shape
    raise DataError(f"Ninguna forma cabe en una imagen de {meta.width}x{meta.height} px "
                    f"a {meta.pixel_scale} m/px tras {max_attempts} intentos")


def _draw_shape(rng: np.random.Generator, meta: ImageMeta, shape_mix: Dict[str, float]) -> PrimitiveShape:
    kinds = sorted(shape_mix)
    weights = np.array([shape_mix[k] for k in kinds], dtype=float)
    kind = kinds[int(rng.choice(len(kinds), p=weights / weights.sum()))]
    cx, cy = (meta.width - 1) / 2.0, (meta.height - 1) / 2.0
    jitter = 0.012 / meta.pixel_scale
    center = (cx + float(rng.uniform(-jitter, jitter)), cy + float(rng.uniform(-jitter, jitter)))
    if kind != "union":
        return _random_simple(kind, rng, center, (0.015, 0.04))
    n_parts = int(rng.integers(2, 4))
    spread = 0.012 / meta.pixel_scale
    components = []
    for i in range(n_parts):
        offset = (0.0, 0.0) if i == 0 else (float(rng.uniform(-spread, spread)), float(rng.uniform(-spread, spread)))
        sub_kind = ("box", "cylinder")[int(rng.integers(0, 2))]
        components.append(_random_simple(sub_kind, rng, (center[0] + offset[0], center[1] + offset[1]),
                                         (0.012, 0.03)))
    return PrimitiveShape("union", (center[0], center[1], 0.0), (), 0.0, components)
