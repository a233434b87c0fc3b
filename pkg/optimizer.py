"""
Optimizador Adam con regularización L2 para los entrenamientos de GQ-STN
"""

from dataclasses import dataclass, field
from typing import Dict

import numpy as np

from autodiff import Tensor
from errors import FrozenModelError, NumericalError


@dataclass
class OptimizerState:
    """Momentos de primer y segundo orden por parámetro y contador de pasos"""
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def to_tensors(self, prefix: str = "optim.") -> Dict[str, np.ndarray]:
        tensors = {}
        for name in sorted(self.m):
            tensors[f"{prefix}m.{name}"] = self.m[name]
            tensors[f"{prefix}v.{name}"] = self.v[name]
        return tensors

    def load_tensors(self, tensors: Dict[str, np.ndarray], prefix: str = "optim."):
        for name in self.m:
            self.m[name] = np.array(tensors[f"{prefix}m.{name}"])
            self.v[name] = np.array(tensors[f"{prefix}v.{name}"])


class Adam:
    def __init__(self, params: Dict[str, Tensor], lr: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8, l2: float = 0.0):
        frozen = [name for name, p in params.items() if not p.data.flags.writeable or not p.requires_grad]
        if frozen:
            raise FrozenModelError(f"Parámetros congelados no entrenables: {frozen[:3]}")
        self.params = params
        self.lr = lr
        self.l2 = l2
        self.state = OptimizerState(
            m={n: np.zeros_like(p.data) for n, p in params.items()},
            v={n: np.zeros_like(p.data) for n, p in params.items()},
            beta1=beta1, beta2=beta2, eps=eps,
        )

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def step(self):
        """Paso de Adam; si algún gradiente no es finito no se modifica ningún parámetro"""
        s = self.state
        grads = {}
        for name in sorted(self.params):
            p = self.params[name]
            if p.grad is None:
                continue
            grad = p.grad + self.l2 * p.data
            if not np.all(np.isfinite(grad)):
                raise NumericalError(f"Gradiente no finito en {name}", {"tensor": name, "step": s.step + 1})
            grads[name] = grad

        s.step += 1
        correction1 = 1.0 - s.beta1 ** s.step
        correction2 = 1.0 - s.beta2 ** s.step
        for name, grad in grads.items():
            p = self.params[name]
            s.m[name] = s.beta1 * s.m[name] + (1.0 - s.beta1) * grad
            s.v[name] = s.beta2 * s.v[name] + (1.0 - s.beta2) * grad * grad
            m_hat = s.m[name] / correction1
            v_hat = s.v[name] / correction2
            p.data -= self.lr * m_hat / (np.sqrt(v_hat) + s.eps)
