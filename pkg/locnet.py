"""
Backbones convolucionales pequeños para los localizadores y el clasificador
4 etapas conv con submuestreo stride 2, residuales opcionales, pooling
promedio global y una cabeza densa.
"""

import hashlib
import logging
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Sequence, Tuple

import numpy as np

import autodiff as ad
from autodiff import Tensor
from errors import ConfigError, FrozenModelError, ShapeError

ModelParams = Dict[str, Tensor]


@dataclass
class BackboneConfig:
    input_size: Tuple[int, int] = (96, 96)
    in_channels: int = 1
    channels: Tuple[int, ...] = (8, 16, 32, 32)
    kernel_size: int = 3
    residual: bool = False
    head_dim: int = 2
    # varias cabezas comparten las características (DirectGrasp usa 3)
    n_heads: int = 1
    head_init_scale: float = 0.1

    def __post_init__(self):
        self.input_size = tuple(int(v) for v in self.input_size)
        self.channels = tuple(int(c) for c in self.channels)
        if len(self.channels) < 2:
            raise ConfigError(f"Se necesitan al menos 2 etapas convolucionales: {self.channels}")
        if min(self.channels) < 1:
            raise ConfigError(f"Etapa con cero canales: {self.channels}")
        if self.head_dim not in (1, 2):
            raise ConfigError(f"head_dim debe ser 1 o 2: {self.head_dim}")
        if self.n_heads < 1 or self.in_channels < 1 or self.kernel_size < 1:
            raise ConfigError("n_heads, in_channels y kernel_size deben ser positivos")

    @property
    def output_dim(self) -> int:
        return self.head_dim * self.n_heads

    def replace(self, **changes) -> "BackboneConfig":
        data = asdict(self)
        data.update(changes)
        return BackboneConfig(**data)

    def to_dict(self) -> Dict:
        data = asdict(self)
        data["input_size"] = list(self.input_size)
        data["channels"] = list(self.channels)
        return data

    @classmethod
    def from_dict(cls, data: Dict) -> "BackboneConfig":
        return cls(**data)


def analytic_param_count(config: BackboneConfig) -> int:
    k2 = config.kernel_size ** 2
    total, c_in = 0, config.in_channels
    for c_out in config.channels:
        total += c_in * c_out * k2 + c_out
        if config.residual:
            total += c_out * c_out * k2 + c_out + c_in * c_out
        c_in = c_out
    return total + c_in * config.output_dim + config.output_dim


def _he(rng: np.random.Generator, shape: Sequence[int], fan_in: int, scale: float = 1.0) -> np.ndarray:
    return rng.normal(0.0, scale * np.sqrt(2.0 / fan_in), size=shape)


class Backbone:
    """Red convolucional con parámetros con nombre por ruta de capa"""

    def __init__(self, config: BackboneConfig, params: ModelParams):
        self.config = config
        self.params = params
        self.frozen = False

    @classmethod
    def build(cls, config: BackboneConfig, seed: int) -> "Backbone":
        """Inicialización He por fan-in a partir de un PRNG con semilla"""
        rng = np.random.default_rng(seed)
        k = config.kernel_size
        params: ModelParams = {}
        c_in = config.in_channels
        for i, c_out in enumerate(config.channels):
            params[f"stage{i}.conv.weight"] = _he(rng, (c_out, c_in, k, k), c_in * k * k)
            params[f"stage{i}.conv.bias"] = np.zeros(c_out)
            if config.residual:
                params[f"stage{i}.conv2.weight"] = _he(rng, (c_out, c_out, k, k), c_out * k * k)
                params[f"stage{i}.conv2.bias"] = np.zeros(c_out)
                params[f"stage{i}.skip.weight"] = _he(rng, (c_out, c_in, 1, 1), c_in)
            c_in = c_out
        params["head.weight"] = _he(rng, (c_in, config.output_dim), c_in, config.head_init_scale)
        params["head.bias"] = np.zeros(config.output_dim)
        tensors = {name: Tensor(value, requires_grad=True, name=name) for name, value in params.items()}
        logging.debug(f"Backbone construido: {analytic_param_count(config)} parámetros, semilla {seed}")
        return cls(config, tensors)

    def parameters(self) -> List[Tensor]:
        return [self.params[name] for name in sorted(self.params)]

    def param_count(self) -> int:
        return int(sum(t.size for t in self.params.values()))

    def checksum(self) -> str:
        digest = hashlib.sha256()
        for name in sorted(self.params):
            digest.update(name.encode("utf-8"))
            digest.update(np.ascontiguousarray(self.params[name].data).tobytes())
        return digest.hexdigest()

    def freeze(self):
        for t in self.params.values():
            t.requires_grad = False
            t.data.flags.writeable = False
        self.frozen = True

    def check_trainable(self):
        if self.frozen:
            raise FrozenModelError("El modelo está congelado; no se puede entrenar")

    def _prepare(self, image) -> Tensor:
        x = ad.as_tensor(image)
        if x.ndim == 2:
            x = ad.reshape(x, (1, 1) + x.shape)
        elif x.ndim == 3:
            x = ad.reshape(x, (x.shape[0], 1) + x.shape[1:])
        h, w = self.config.input_size
        if x.ndim != 4 or x.shape[1:] != (self.config.in_channels, h, w):
            raise ShapeError(f"Entrada {x.shape} incompatible con el backbone "
                             f"({self.config.in_channels}, {h}, {w})")
        return x

    def features(self, image) -> Tensor:
        x = self._prepare(image)
        p = self.params
        for i in range(len(self.config.channels)):
            h = ad.relu(ad.conv2d(x, p[f"stage{i}.conv.weight"], p[f"stage{i}.conv.bias"],
                                  stride=2, padding="same"))
            if self.config.residual:
                h = ad.conv2d(h, p[f"stage{i}.conv2.weight"], p[f"stage{i}.conv2.bias"], stride=1, padding="same")
                skip = ad.conv2d(x, p[f"stage{i}.skip.weight"], None, stride=2, padding="same")
                h = ad.relu(h + skip)
            x = h
        return ad.mean(x, axis=(2, 3))

    def forward(self, image) -> Tensor:
        """Salidas crudas de la cabeza, forma (N, head_dim · n_heads)"""
        return ad.matmul(self.features(image), self.params["head.weight"]) + self.params["head.bias"]

    __call__ = forward

    def state(self, prefix: str = "") -> Dict[str, np.ndarray]:
        return {prefix + name: np.array(t.data) for name, t in sorted(self.params.items())}

    def load_state(self, tensors: Dict[str, np.ndarray], prefix: str = ""):
        for name, t in self.params.items():
            key = prefix + name
            if key not in tensors:
                raise ShapeError(f"Falta el tensor {key} en el checkpoint")
            if tensors[key].shape != t.shape:
                raise ShapeError(f"Forma de {key}: {tensors[key].shape} vs {t.shape}")
            t.data = np.ascontiguousarray(tensors[key], dtype=ad.get_default_dtype())
