"""
Maquinaria de Spatial Transformers para GQ-STN
Parametrizaciones afines restringidas, generador de malla normalizada,
muestreo bilineal diferenciable y las tres cabezas de los localizadores.

Convención de coordenadas: espacio normalizado [-1, 1]² con (-1, -1) en el
centro del píxel superior izquierdo. Una traslación x ∈ [-0.5, 0.5] se aplica
como desplazamiento 2x en el espacio normalizado.
"""

import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import Dict, Sequence, Tuple, Union

import numpy as np

import autodiff as ad
from autodiff import Tensor
from errors import GQSTNError, ShapeError

SNAP_EPS = 1e-9

# Una malla de muestreo es un tensor (N, out_h, out_w, 2) en coordenadas normalizadas
SamplingGrid = Tensor
AffineMatrix = Tensor


class TransformKind(str, Enum):
    TRANSLATION = "translation"
    ROTATION = "rotation"
    SCALE = "scale"


@dataclass
class AffineParams:
    """Transformación 2×3 restringida a traslación, rotación o escala isótropa

    `matrix` sigue la forma canónica ([[1,0,x],[0,1,y]] para traslación) y
    `normalized_matrix()` devuelve la que actúa sobre coordenadas normalizadas.
    """
    kind: TransformKind
    matrix: Tensor
    raw: Tuple[Tensor, ...]

    @property
    def batch_size(self) -> int:
        return self.matrix.shape[0]

    def normalized_matrix(self) -> AffineMatrix:
        factor = np.array([[1.0, 1.0, 2.0], [1.0, 1.0, 2.0]])
        return self.matrix * factor


@dataclass
class HeadOutputs:
    """Salidas crudas de los tres localizadores, cada una con forma (N,)"""
    w_x: Tensor
    w_y: Tensor
    w_alpha: Tensor
    w_beta: Tensor
    w_s: Tensor
    w_z: Tensor

    def named(self) -> Dict[str, Tensor]:
        return {"w_x": self.w_x, "w_y": self.w_y, "w_alpha": self.w_alpha,
                "w_beta": self.w_beta, "w_s": self.w_s, "w_z": self.w_z}


@dataclass
class DatasetStats:
    """Constantes del conjunto de entrenamiento usadas por las cabezas"""
    gamma: float
    z_mean: float
    z_std: float

    def __post_init__(self):
        if not self.gamma > 0:
            raise GQSTNError(f"gamma debe ser positivo: {self.gamma}")
        if not self.z_std > 0:
            raise GQSTNError(f"z_std debe ser positivo: {self.z_std}")

    def to_dict(self) -> Dict[str, float]:
        return {"gamma": float(self.gamma), "z_mean": float(self.z_mean), "z_std": float(self.z_std)}

    @classmethod
    def from_dict(cls, data: Dict) -> "DatasetStats":
        return cls(float(data["gamma"]), float(data["z_mean"]), float(data["z_std"]))


def _as_batch(value) -> Tensor:
    t = ad.as_tensor(value)
    return t if t.ndim == 1 else ad.reshape(t, (-1,))


def _matrix_from_entries(entries: Sequence, n: int) -> AffineMatrix:
    columns = [e if isinstance(e, Tensor) else Tensor(np.full(n, float(e))) for e in entries]
    return ad.reshape(ad.stack(columns, axis=-1), (n, 2, 3))


# ---------------------------------------------------------------------------
# Parametrizaciones restringidas
# ---------------------------------------------------------------------------

def translation_params(x, y) -> AffineParams:
    x, y = _as_batch(x), _as_batch(y)
    if np.any(np.abs(x.data) > 0.5) or np.any(np.abs(y.data) > 0.5):
        raise GQSTNError("Traslación fuera de [-0.5, 0.5]")
    matrix = _matrix_from_entries([1.0, 0.0, x, 0.0, 1.0, y], x.shape[0])
    return AffineParams(TransformKind.TRANSLATION, matrix, (x, y))


def rotation_params(theta) -> AffineParams:
    theta = _as_batch(theta)
    if np.any(theta.data <= -math.pi / 2 - 1e-12) or np.any(theta.data > math.pi / 2 + 1e-12):
        raise GQSTNError("Ángulo fuera de (-π/2, π/2]")
    c, s = ad.cos(theta), ad.sin(theta)
    matrix = _matrix_from_entries([c, -s, 0.0, s, c, 0.0], theta.shape[0])
    return AffineParams(TransformKind.ROTATION, matrix, (theta,))


def scale_params(s) -> AffineParams:
    s = _as_batch(s)
    if np.any(s.data <= 0):
        raise GQSTNError("La escala debe ser positiva")
    matrix = _matrix_from_entries([s, 0.0, 0.0, 0.0, s, 0.0], s.shape[0])
    return AffineParams(TransformKind.SCALE, matrix, (s,))


def identity_cascade(n: int = 1) -> Tuple[AffineParams, AffineParams, AffineParams]:
    zeros = np.zeros(n)
    return translation_params(zeros, zeros), rotation_params(zeros), scale_params(np.ones(n))


# ---------------------------------------------------------------------------
# Cabezas de los localizadores
# ---------------------------------------------------------------------------

def head_translation(w_x, w_y) -> Tuple[Tensor, Tensor]:
    """x = σ(w_x) − 0.5, y = σ(w_y) − 0.5"""
    return ad.sigmoid(w_x) - 0.5, ad.sigmoid(w_y) - 0.5


def head_rotation(w_alpha, w_beta, literal: bool = False) -> Tensor:
    """θ = atan2(α, β) / 2 con α, β = 2σ(·) − 1 (o σ(·) en modo literal)"""
    if literal:
        alpha, beta = ad.sigmoid(w_alpha), ad.sigmoid(w_beta)
    else:
        alpha = ad.sigmoid(w_alpha) * 2.0 - 1.0
        beta = ad.sigmoid(w_beta) * 2.0 - 1.0
    return ad.atan2(alpha, beta) * 0.5


def head_scale_z(w_s, w_z, stats: DatasetStats) -> Tuple[Tensor, Tensor]:
    """s = γ·exp(w_s); z = w_z en unidades normalizadas"""
    return ad.exp(w_s) * stats.gamma, ad.as_tensor(w_z)


def cascade_from_heads(heads: HeadOutputs, stats: DatasetStats,
                       literal_rotation: bool = False) -> Tuple[AffineParams, AffineParams, AffineParams, Tensor]:
    x, y = head_translation(heads.w_x, heads.w_y)
    theta = head_rotation(heads.w_alpha, heads.w_beta, literal_rotation)
    s, z = head_scale_z(heads.w_s, heads.w_z, stats)
    return translation_params(x, y), rotation_params(theta), scale_params(s), z


# ---------------------------------------------------------------------------
# Malla y muestreo
# ---------------------------------------------------------------------------

def normalized_axis(size: int) -> np.ndarray:
    if size < 1:
        raise ShapeError(f"Tamaño de salida inválido: {size}")
    return np.zeros(1) if size == 1 else np.linspace(-1.0, 1.0, size)


def affine_grid(params: Union[AffineParams, AffineMatrix], out_h: int, out_w: int) -> SamplingGrid:
    """Coordenadas fuente normalizadas para cada píxel de salida: M · [x_t, y_t, 1]ᵀ"""
    matrix = params.normalized_matrix() if isinstance(params, AffineParams) else params
    if matrix.ndim == 2:
        matrix = ad.reshape(matrix, (1, 2, 3))
    xs, ys = np.meshgrid(normalized_axis(out_w), normalized_axis(out_h))
    base = np.stack([xs.ravel(), ys.ravel(), np.ones(xs.size)], axis=0)
    grid = ad.matmul(matrix, base)
    grid = ad.transpose(grid, (0, 2, 1))
    return ad.reshape(grid, (matrix.shape[0], out_h, out_w, 2))


def bilinear_sample(image, grid: SamplingGrid, pad_value: float = 0.0) -> Tensor:
    """Interpolación bilineal diferenciable respecto a la imagen y a la malla

    Las fuentes fuera de la imagen toman `pad_value` (profundidad del fondo).
    Una imagen (1, H, W) puede muestrearse con una malla de lote N.
    """
    image, grid = ad.as_tensor(image), ad.as_tensor(grid)
    squeeze = image.ndim == 2
    if squeeze:
        image = ad.reshape(image, (1,) + image.shape)
    if grid.ndim == 3:
        grid = ad.reshape(grid, (1,) + grid.shape)
    if image.ndim != 3 or grid.ndim != 4 or grid.shape[-1] != 2:
        raise ShapeError(f"bilinear_sample: formas incompatibles {image.shape} y {grid.shape}")
    n_img, h, w = image.shape
    n = grid.shape[0]
    if n_img not in (1, n):
        raise ShapeError(f"bilinear_sample: lote de imagen {n_img} y de malla {n}")

    img = image.data
    px = (grid.data[..., 0] + 1.0) * (w - 1) / 2.0
    py = (grid.data[..., 1] + 1.0) * (h - 1) / 2.0
    px = np.where(np.abs(px - np.rint(px)) < SNAP_EPS, np.rint(px), px)
    py = np.where(np.abs(py - np.rint(py)) < SNAP_EPS, np.rint(py), py)
    x0 = np.floor(px).astype(np.int64)
    y0 = np.floor(py).astype(np.int64)
    wx = px - x0
    wy = py - y0
    batch = np.broadcast_to(
        (np.arange(n) if n_img == n else np.zeros(n, dtype=np.int64))[:, None, None], px.shape)

    corners = {}
    for dy in (0, 1):
        for dx in (0, 1):
            yi, xi = y0 + dy, x0 + dx
            valid = (xi >= 0) & (xi < w) & (yi >= 0) & (yi < h)
            values = img[batch, np.clip(yi, 0, h - 1), np.clip(xi, 0, w - 1)]
            corners[(dy, dx)] = (yi, xi, valid, np.where(valid, values, pad_value))

    v00, v01 = corners[(0, 0)][3], corners[(0, 1)][3]
    v10, v11 = corners[(1, 0)][3], corners[(1, 1)][3]
    out = (1.0 - wy) * ((1.0 - wx) * v00 + wx * v01) + wy * ((1.0 - wx) * v10 + wx * v11)
    weights = {(0, 0): (1.0 - wy) * (1.0 - wx), (0, 1): (1.0 - wy) * wx,
               (1, 0): wy * (1.0 - wx), (1, 1): wy * wx}

    def grad_fn(g):
        g_img = None
        if image.requires_grad:
            g_img = np.zeros_like(img)
            for key, (yi, xi, valid, _) in corners.items():
                np.add.at(g_img, (batch[valid], yi[valid], xi[valid]), (g * weights[key])[valid])
        g_grid = None
        if grid.requires_grad:
            d_px = (1.0 - wy) * (v01 - v00) + wy * (v11 - v10)
            d_py = (1.0 - wx) * (v10 - v00) + wx * (v11 - v01)
            g_grid = np.stack([g * d_px * (w - 1) / 2.0, g * d_py * (h - 1) / 2.0], axis=-1)
        return g_img, g_grid

    result = ad._make(out, (image, grid), grad_fn, "bilinear_sample")
    if squeeze and n == 1:
        result = ad.reshape(result, result.shape[1:])
    return result


def transform_image(image, params: Union[AffineParams, AffineMatrix], out_h: int, out_w: int,
                    pad_value: float = 0.0) -> Tensor:
    """Generador de malla + muestreador de un bloque STN"""
    return bilinear_sample(image, affine_grid(params, out_h, out_w), pad_value)


# ---------------------------------------------------------------------------
# Composición de la cascada
# ---------------------------------------------------------------------------

def _homogeneous(matrix: AffineMatrix) -> Tensor:
    n = matrix.shape[0]
    bottom = np.broadcast_to(np.array([[[0.0, 0.0, 1.0]]]), (n, 1, 3))
    return ad.concat([matrix, bottom], axis=1)


def compose_cascade(t: AffineParams, r: AffineParams, c: AffineParams) -> AffineMatrix:
    """Matriz normalizada T·R·S equivalente a muestrear traslación, rotación y escala en secuencia"""
    expected = (TransformKind.TRANSLATION, TransformKind.ROTATION, TransformKind.SCALE)
    if (t.kind, r.kind, c.kind) != expected:
        raise GQSTNError(f"Cascada con tipos incorrectos: {t.kind}, {r.kind}, {c.kind}")
    product = ad.matmul(ad.matmul(_homogeneous(t.normalized_matrix()), _homogeneous(r.normalized_matrix())),
                        _homogeneous(c.normalized_matrix()))
    logging.debug(f"Cascada compuesta para lote de {t.batch_size}")
    return ad.getitem(product, (slice(None), slice(0, 2), slice(None)))


def partial_cascade(t: AffineParams, r: AffineParams) -> AffineMatrix:
    """Matriz normalizada T·R que alimenta al localizador de escala"""
    product = ad.matmul(_homogeneous(t.normalized_matrix()), _homogeneous(r.normalized_matrix()))
    return ad.getitem(product, (slice(None), slice(0, 2), slice(None)))
