"""
Batería de verificación de gradientes por diferencias finitas
Cubre todas las operaciones de autodiff, el muestreador bilineal respecto a la
imagen y a los cuatro parámetros restringidos, y los gradientes de entrada del
clasificador con pesos congelados.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np
from tqdm import tqdm

import autodiff as ad
import stn
from autodiff import Tensor
from locnet import Backbone
from quality_model import QualityConfig, QualityModel, classify

CaseFactory = Callable[[np.random.Generator], Tuple[Callable[[Tensor], Tensor], np.ndarray]]

# lineales a trozos en el punto evaluado: se acepta la diferencia lateral sin codo
PIECEWISE_OPS = frozenset({"bilinear_sample_grid", "stn_cascade_params", "classifier_input"})


def _weights(rng, shape):
    return rng.normal(size=shape)


def _projected(out: Tensor, w: np.ndarray) -> Tensor:
    """Proyección escalar fija de una salida tensorial"""
    return ad.sum(out * w)


def _random_shape(rng, min_rank: int = 1, max_rank: int = 3) -> Tuple[int, ...]:
    rank = int(rng.integers(min_rank, max_rank + 1))
    return tuple(int(d) for d in rng.integers(1, 6, size=rank))


def _broadcast_pair(rng) -> Tuple[Tuple[int, ...], Tuple[int, ...]]:
    """Formas de (x, otro) con una dimensión de tamaño 1 difundida en uno de los dos"""
    shape = _random_shape(rng)
    axis = int(rng.integers(0, len(shape)))
    reduced = tuple(1 if i == axis else d for i, d in enumerate(shape))
    if rng.random() < 0.5:
        return reduced, shape
    return shape, reduced


def _binary(op):
    def factory(rng):
        x_shape, other_shape = _broadcast_pair(rng)
        other = rng.normal(size=other_shape)
        w = _weights(rng, np.broadcast_shapes(x_shape, other_shape))
        return (lambda x: _projected(op(x, other), w)), rng.normal(size=x_shape)
    return factory


def _unary(op, sampler=None):
    def factory(rng):
        shape = _random_shape(rng)
        x = sampler(rng, shape) if sampler else rng.normal(size=shape)
        w = _weights(rng, x.shape)
        return (lambda t: _projected(op(t), w)), x
    return factory


def _away_from_zero(rng, shape):
    return rng.choice([-1.0, 1.0], size=shape) * rng.uniform(0.2, 2.0, size=shape)


def _positive(rng, shape):
    return rng.uniform(0.3, 3.0, size=shape)


def _div_case(rng):
    num_shape, denom_shape = _broadcast_pair(rng)
    denom = _away_from_zero(rng, denom_shape)
    num = rng.normal(size=num_shape)
    w = _weights(rng, np.broadcast_shapes(num_shape, denom_shape))
    if rng.random() < 0.5:
        return (lambda x: _projected(ad.div(x, denom), w)), num
    return (lambda x: _projected(ad.div(num, x), w)), denom


def _matmul_case(rng):
    n, k, m = (int(d) for d in rng.integers(1, 6, size=3))
    other = rng.normal(size=(k, m))
    w = _weights(rng, (n, m))
    return (lambda x: _projected(ad.matmul(x, other), w)), rng.normal(size=(n, k))


def _atan2_case(rng):
    shape = _random_shape(rng)
    angle = rng.uniform(-math.pi, math.pi, size=shape)
    radius = rng.uniform(0.3, 2.0, size=shape)
    y, x = radius * np.sin(angle), radius * np.cos(angle)
    w = _weights(rng, shape)
    if rng.random() < 0.5:
        return (lambda t: _projected(ad.atan2(t, x), w)), y
    # evitar el corte de rama en x < 0, y = 0
    x = np.abs(x) + 0.1
    return (lambda t: _projected(ad.atan2(y, t), w)), x


def _reduction_case(rng):
    x = rng.normal(size=_random_shape(rng))
    axis = [None, *range(x.ndim)][int(rng.integers(0, x.ndim + 1))]
    op = ad.sum if rng.random() < 0.5 else ad.mean
    w = _weights(rng, np.shape(x.sum(axis=axis)))
    return (lambda t: _projected(op(t, axis=axis), w)), x


def _softmax_case(rng):
    x = rng.normal(size=_random_shape(rng))
    axis = int(rng.integers(-x.ndim, x.ndim))
    w = _weights(rng, x.shape)
    return (lambda t: _projected(ad.softmax(t, axis=axis), w)), x


def _bce_case(rng):
    n = int(rng.integers(1, 9))
    targets = (rng.random(n) < 0.5).astype(float)
    return (lambda t: ad.binary_cross_entropy_with_logits(t, targets)), rng.normal(size=n) * 2.0


def _l2_case(rng):
    return (lambda t: ad.l2_norm(t)), rng.normal(size=_random_shape(rng))


def _shape_case(rng):
    x = rng.normal(size=_random_shape(rng))
    kind = int(rng.integers(0, 3))
    if kind == 0:
        target = x.shape[::-1] if rng.random() < 0.5 else (x.size,)
        w = _weights(rng, target)
        return (lambda t: _projected(ad.reshape(t, target), w)), x
    if kind == 1:
        axes = tuple(int(a) for a in rng.permutation(x.ndim))
        w = _weights(rng, np.transpose(x, axes).shape)
        return (lambda t: _projected(ad.transpose(t, axes), w)), x
    index = tuple(slice(int(rng.integers(0, d)), None, int(rng.integers(1, 3))) for d in x.shape)
    w = _weights(rng, x[index].shape)
    return (lambda t: _projected(t[index], w)), x


def _join_case(rng):
    shape = _random_shape(rng)
    if rng.random() < 0.5:
        axis = int(rng.integers(0, len(shape)))
        other_shape = tuple(int(rng.integers(1, 6)) if i == axis else d for i, d in enumerate(shape))
        other = rng.normal(size=other_shape)
        w = _weights(rng, np.concatenate([np.zeros(shape), other], axis=axis).shape)
        return (lambda t: _projected(ad.concat([t, other], axis=axis), w)), rng.normal(size=shape)
    axis = int(rng.integers(0, len(shape) + 1))
    other = rng.normal(size=shape)
    w = _weights(rng, np.stack([other, other], axis=axis).shape)
    return (lambda t: _projected(ad.stack([t, other], axis=axis), w)), rng.normal(size=shape)


def _conv_case(rng):
    stride = int(rng.integers(1, 3))
    padding = ("valid", "same")[int(rng.integers(0, 2))]
    x = rng.normal(size=(1, 2, 5, 5))
    weight = rng.normal(size=(3, 2, 3, 3))
    bias = rng.normal(size=3)
    out_shape = ad.conv2d(x, weight, bias, stride, padding).shape
    w = _weights(rng, out_shape)
    target = int(rng.integers(0, 3))
    if target == 0:
        return (lambda t: _projected(ad.conv2d(t, weight, bias, stride, padding), w)), x
    if target == 1:
        return (lambda t: _projected(ad.conv2d(x, t, bias, stride, padding), w)), weight
    return (lambda t: _projected(ad.conv2d(x, weight, t, stride, padding), w)), bias


def _pool_case(rng):
    # valores distintos y separados para que el máximo no cambie con eps
    x = rng.permutation(32).astype(float).reshape(1, 2, 4, 4) * 0.1
    w = _weights(rng, (1, 2, 2, 2))
    return (lambda t: _projected(ad.max_pool2d(t, 2), w)), x


def _sampler_image_case(rng):
    grid = rng.uniform(-1.2, 1.2, size=(1, 4, 4, 2))
    w = _weights(rng, (1, 4, 4))
    return (lambda t: _projected(stn.bilinear_sample(t, grid, pad_value=0.0), w)), rng.normal(size=(1, 6, 6))


def _sampler_grid_case(rng):
    image = rng.normal(size=(1, 6, 6))
    w = _weights(rng, (1, 4, 4))
    return (lambda t: _projected(stn.bilinear_sample(image, t, pad_value=0.0), w)), rng.uniform(-0.9, 0.9, size=(1, 4, 4, 2))


def _cascade_case(rng):
    """Gradiente de la salida de la cascada respecto a (x, y, θ, s)"""
    image = rng.normal(size=(1, 9, 9))
    w = _weights(rng, (1, 5, 5))
    params = np.array([rng.uniform(-0.3, 0.3), rng.uniform(-0.3, 0.3),
                       rng.uniform(-1.2, 1.2), rng.uniform(0.4, 1.2)])

    def f(p: Tensor) -> Tensor:
        t = stn.translation_params(p[0:1], p[1:2])
        r = stn.rotation_params(p[2:3])
        c = stn.scale_params(p[3:4])
        return _projected(stn.transform_image(image, stn.compose_cascade(t, r, c), 5, 5), w)
    return f, params


@dataclass
class OpResult:
    op: str
    cases: int
    passed: bool
    worst: Dict
    worst_case: int
    failures: int = 0

    def to_dict(self) -> Dict:
        return dict(self.__dict__)


@dataclass
class SuiteReport:
    passed: bool
    tol: float
    ops: List[OpResult] = field(default_factory=list)

    def to_dict(self) -> Dict:
        return {"passed": self.passed, "tol": self.tol, "ops": [o.to_dict() for o in self.ops]}


def default_suite() -> Dict[str, CaseFactory]:
    return {
        "add": _binary(ad.add), "sub": _binary(ad.sub), "mul": _binary(ad.mul), "div": _div_case,
        "neg": _unary(ad.neg), "matmul": _matmul_case,
        "relu": _unary(ad.relu, _away_from_zero), "sigmoid": _unary(ad.sigmoid), "tanh": _unary(ad.tanh),
        "exp": _unary(ad.exp), "log": _unary(ad.log, _positive),
        "sin": _unary(ad.sin), "cos": _unary(ad.cos), "atan2": _atan2_case,
        "sum_mean": _reduction_case, "l2_norm": _l2_case, "softmax": _softmax_case,
        "bce_logits": _bce_case, "reshape_transpose_getitem": _shape_case, "concat_stack": _join_case,
        "conv2d": _conv_case, "max_pool2d": _pool_case,
        "bilinear_sample_image": _sampler_image_case, "bilinear_sample_grid": _sampler_grid_case,
        "stn_cascade_params": _cascade_case,
    }


def tiny_quality_model(seed: int) -> QualityModel:
    cfg = QualityConfig(channels=(4, 4))
    model = QualityModel(Backbone.build(cfg.backbone(), seed), crop_mean=0.0, crop_std=0.05,
                         z_mean=0.65, z_std=0.02)
    return model.freeze()


def classifier_input_case(model: QualityModel, n_directions: int = 6) -> CaseFactory:
    """Derivadas direccionales del logit respecto al recorte y derivada respecto a z"""
    def factory(rng):
        base = rng.normal(0.0, 0.05, size=(32, 32))
        directions = rng.normal(size=(n_directions, 32, 32))
        z0 = rng.uniform(0.6, 0.7)

        def f(v: Tensor) -> Tensor:
            offset = ad.reshape(ad.matmul(ad.reshape(v[:n_directions], (1, n_directions)),
                                          directions.reshape(n_directions, -1)), (32, 32))
            logit, _ = classify(model, offset + base, v[n_directions:] + z0)
            return ad.sum(logit)
        return f, rng.normal(0.0, 0.01, size=n_directions + 1)
    return factory


class GradientChecker:
    def __init__(self, cases_per_op: int = 100, tol: float = 1e-4, eps: float = 1e-5, seed: int = 0,
                 progress_callback=None, quiet: bool = False):
        self.cases_per_op = cases_per_op
        self.tol = tol
        self.eps = eps
        self.seed = seed
        self.progress_callback = progress_callback
        self.quiet = quiet

    def log_progress(self, message: str, level: str = "INFO"):
        if self.progress_callback:
            self.progress_callback(message, level)
        getattr(logging, level.lower(), logging.info)(message)

    def check_op(self, name: str, factory: CaseFactory) -> OpResult:
        worst, worst_case, failures = None, -1, 0
        for case in range(self.cases_per_op):
            rng = np.random.default_rng([self.seed, case, sum(name.encode("utf-8"))])
            f, x = factory(rng)
            report = ad.grad_check(f, x, eps=self.eps, tol=self.tol, one_sided=name in PIECEWISE_OPS)
            failures += 0 if report.passed else 1
            if worst is None or report.max_rel_err > worst.max_rel_err:
                worst, worst_case = report, case
        return OpResult(name, self.cases_per_op, failures == 0, worst.to_dict() if worst else {},
                        worst_case, failures)

    def run(self, ops: Optional[List[str]] = None, include_classifier: bool = True) -> SuiteReport:
        """Ejecutar la batería en float64 y devolver el peor caso de cada operación"""
        previous = ad.get_default_dtype()
        ad.set_default_dtype("float64")
        try:
            suite = default_suite()
            if include_classifier:
                suite["classifier_input"] = classifier_input_case(tiny_quality_model(self.seed))
            names = [n for n in suite if ops is None or n in ops]
            results = []
            for name in tqdm(names, desc="grad-check", disable=self.quiet):
                result = self.check_op(name, suite[name])
                results.append(result)
                status = "✅" if result.passed else "❌"
                self.log_progress(f"{status} {name}: peor error relativo {result.worst.get('max_rel_err', 0):.2e}",
                                  "INFO" if result.passed else "WARNING")
        finally:
            ad.set_default_dtype("float64" if previous is np.float64 else "float32")
        return SuiteReport(all(r.passed for r in results), self.tol, results)
