"""
Motor mínimo de diferenciación automática en modo inverso para GQ-STN
Tensores densos sobre numpy, grafo dinámico y verificación por diferencias finitas
"""

import logging
import threading
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from errors import ConfigError, GQSTNError, NumericalError, ShapeError

# Épsilons documentados para operaciones con polos
LOG_EPS = 1e-12
ATAN2_EPS = 1e-12
EXP_CLIP = 700.0

_DTYPES = {"float64": np.float64, "float32": np.float32}
_default_dtype = np.float64
_state = threading.local()

ArrayLike = Union["Tensor", np.ndarray, float, int, Sequence]


def set_default_dtype(name: str):
    """Seleccionar precisión de almacenamiento (float64 es la referencia)"""
    global _default_dtype
    if name not in _DTYPES:
        raise ConfigError(f"dtype no soportado: {name}")
    _default_dtype = _DTYPES[name]
    logging.debug(f"Precisión de autodiff: {name}")


def get_default_dtype():
    return _default_dtype


def is_grad_enabled() -> bool:
    return getattr(_state, "grad_enabled", True)


@contextmanager
def no_grad():
    """Desactivar la grabación del grafo en el hilo actual"""
    previous = is_grad_enabled()
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = previous


class Tensor:
    """Arreglo denso con seguimiento de gradiente"""

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None,
                 _parents: Tuple["Tensor", ...] = (), _backward: Optional[Callable] = None,
                 op: str = "leaf"):
        self.data = np.ascontiguousarray(np.asarray(data, dtype=_default_dtype))
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self.name = name
        self.op = op
        self._parents = _parents
        self._backward = _backward

    # Propiedades
    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() requiere un tensor escalar, forma {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def zero_grad(self):
        self.grad = None

    def backward(self):
        backward(self)

    def __repr__(self):
        label = f", name={self.name}" if self.name else ""
        return f"Tensor(shape={self.shape}, op={self.op}, requires_grad={self.requires_grad}{label})"

    # Operadores
    def __add__(self, other): return add(self, other)
    def __radd__(self, other): return add(other, self)
    def __sub__(self, other): return sub(self, other)
    def __rsub__(self, other): return sub(other, self)
    def __mul__(self, other): return mul(self, other)
    def __rmul__(self, other): return mul(other, self)
    def __truediv__(self, other): return div(self, other)
    def __rtruediv__(self, other): return div(other, self)
    def __neg__(self): return neg(self)
    def __matmul__(self, other): return matmul(self, other)
    def __getitem__(self, index): return getitem(self, index)

    def sum(self, axis=None, keepdims: bool = False): return sum(self, axis, keepdims)
    def mean(self, axis=None, keepdims: bool = False): return mean(self, axis, keepdims)
    def reshape(self, *shape): return reshape(self, shape[0] if len(shape) == 1 else shape)


def as_tensor(value: ArrayLike) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _make(data: np.ndarray, parents: Tuple[Tensor, ...], backward_fn: Callable, op: str) -> Tensor:
    """Crear el resultado de una operación y registrarlo en el grafo si procede"""
    if is_grad_enabled() and any(p.requires_grad for p in parents):
        return Tensor(data, requires_grad=True, _parents=parents, _backward=backward_fn, op=op)
    return Tensor(data, op=op)


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sumar sobre las dimensiones que se difundieron en el forward"""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _broadcast_shape(a: Tensor, b: Tensor, op: str) -> Tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: formas incompatibles {a.shape} y {b.shape}",
                         {"op": op, "shapes": [a.shape, b.shape]})


# ---------------------------------------------------------------------------
# Operaciones elementales
# ---------------------------------------------------------------------------

def add(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "add")

    def grad_fn(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)
    return _make(a.data + b.data, (a, b), grad_fn, "add")


def sub(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "sub")

    def grad_fn(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)
    return _make(a.data - b.data, (a, b), grad_fn, "sub")


def mul(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "mul")

    def grad_fn(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)
    return _make(a.data * b.data, (a, b), grad_fn, "mul")


def div(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "div")

    def grad_fn(g):
        return (_unbroadcast(g / b.data, a.shape),
                _unbroadcast(-g * a.data / (b.data * b.data), b.shape))
    return _make(a.data / b.data, (a, b), grad_fn, "div")


def neg(a: ArrayLike) -> Tensor:
    a = as_tensor(a)
    return _make(-a.data, (a,), lambda g: (-g,), "neg")


def matmul(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: formas incompatibles {a.shape} y {b.shape}",
                         {"op": "matmul", "shapes": [a.shape, b.shape]})

    def grad_fn(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)
    return _make(a.data @ b.data, (a, b), grad_fn, "matmul")


def relu(x: ArrayLike) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0
    return _make(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,), "relu")


def sigmoid(x: ArrayLike) -> Tensor:
    x = as_tensor(x)
    # forma con tanh: estable en ambos extremos y exacta en 0
    out = 0.5 * (1.0 + np.tanh(0.5 * x.data))
    return _make(out, (x,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def tanh(x: ArrayLike) -> Tensor:
    x = as_tensor(x)
    out = np.tanh(x.data)
    return _make(out, (x,), lambda g: (g * (1.0 - out * out),), "tanh")


def exp(x: ArrayLike) -> Tensor:
    x = as_tensor(x)
    clipped = np.minimum(x.data, EXP_CLIP)
    out = np.exp(clipped)
    inside = x.data <= EXP_CLIP
    return _make(out, (x,), lambda g: (g * out * inside,), "exp")


def log(x: ArrayLike) -> Tensor:
    """Logaritmo natural con la entrada acotada inferiormente por LOG_EPS"""
    x = as_tensor(x)
    clamped = np.maximum(x.data, LOG_EPS)
    inside = x.data > LOG_EPS
    return _make(np.log(clamped), (x,), lambda g: (g * inside / clamped,), "log")


def sin(x: ArrayLike) -> Tensor:
    x = as_tensor(x)
    return _make(np.sin(x.data), (x,), lambda g: (g * np.cos(x.data),), "sin")


def cos(x: ArrayLike) -> Tensor:
    x = as_tensor(x)
    return _make(np.cos(x.data), (x,), lambda g: (-g * np.sin(x.data),), "cos")


def atan2(y: ArrayLike, x: ArrayLike) -> Tensor:
    """atan2 con gradiente nulo en el origen (|(x, y)|² < ATAN2_EPS)"""
    y, x = as_tensor(y), as_tensor(x)
    _broadcast_shape(y, x, "atan2")
    r2 = x.data * x.data + y.data * y.data
    degenerate = r2 < ATAN2_EPS
    safe = np.where(degenerate, 1.0, r2)
    out = np.where(degenerate, 0.0, np.arctan2(y.data, x.data))

    def grad_fn(g):
        gy = np.where(degenerate, 0.0, g * x.data / safe)
        gx = np.where(degenerate, 0.0, -g * y.data / safe)
        return _unbroadcast(gy, y.shape), _unbroadcast(gx, x.shape)
    return _make(out, (y, x), grad_fn, "atan2")


# ---------------------------------------------------------------------------
# Reducciones
# ---------------------------------------------------------------------------

def _expand_reduced(g: np.ndarray, shape: Tuple[int, ...], axis, keepdims: bool) -> np.ndarray:
    if axis is None:
        return np.broadcast_to(g, shape)
    axes = (axis,) if isinstance(axis, int) else tuple(axis)
    axes = tuple(a % len(shape) for a in axes)
    if not keepdims:
        for a in sorted(axes):
            g = np.expand_dims(g, a)
    return np.broadcast_to(g, shape)


def sum(x: ArrayLike, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    out = x.data.sum(axis=axis, keepdims=keepdims)
    return _make(out, (x,), lambda g: (_expand_reduced(g, x.shape, axis, keepdims).copy(),), "sum")


def mean(x: ArrayLike, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    out = x.data.mean(axis=axis, keepdims=keepdims)
    count = x.data.size // max(np.size(out), 1)
    return _make(out, (x,), lambda g: (_expand_reduced(g, x.shape, axis, keepdims) / count,), "mean")


def l2_norm(x: ArrayLike) -> Tensor:
    """Norma euclídea de todos los elementos (gradiente nulo en x = 0)"""
    x = as_tensor(x)
    norm = float(np.sqrt(np.sum(x.data * x.data)))
    scale = 0.0 if norm == 0.0 else 1.0 / norm
    return _make(np.asarray(norm), (x,), lambda g: (g * x.data * scale,), "l2_norm")


def softmax(x: ArrayLike, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def grad_fn(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)
    return _make(out, (x,), grad_fn, "softmax")


def binary_cross_entropy_with_logits(logits: ArrayLike, targets: ArrayLike) -> Tensor:
    """Entropía cruzada binaria media, estable numéricamente"""
    z = as_tensor(logits)
    t = np.broadcast_to(as_tensor(targets).data, z.shape)
    losses = np.maximum(z.data, 0.0) - z.data * t + np.log1p(np.exp(-np.abs(z.data)))
    n = max(z.data.size, 1)
    p = 0.5 * (1.0 + np.tanh(0.5 * z.data))
    return _make(np.asarray(losses.mean()), (z,), lambda g: (g * (p - t) / n,), "bce_logits")


# ---------------------------------------------------------------------------
# Manipulación de forma
# ---------------------------------------------------------------------------

def reshape(x: ArrayLike, shape) -> Tensor:
    x = as_tensor(x)
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: {x.shape} no cabe en {shape}", {"op": "reshape"})
    return _make(out, (x,), lambda g: (g.reshape(x.shape),), "reshape")


def transpose(x: ArrayLike, axes: Sequence[int]) -> Tensor:
    x = as_tensor(x)
    inverse = np.argsort(axes)
    return _make(np.transpose(x.data, axes), (x,), lambda g: (np.transpose(g, inverse),), "transpose")


def getitem(x: ArrayLike, index) -> Tensor:
    x = as_tensor(x)

    def grad_fn(g):
        gx = np.zeros_like(x.data)
        np.add.at(gx, index, g)
        return (gx,)
    return _make(np.array(x.data[index]), (x,), grad_fn, "getitem")


def concat(tensors: Sequence[ArrayLike], axis: int = 0) -> Tensor:
    tensors = tuple(as_tensor(t) for t in tensors)
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        raise ShapeError(f"concat: formas incompatibles {[t.shape for t in tensors]}", {"op": "concat"})
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    return _make(out, tensors, lambda g: tuple(np.split(g, bounds, axis=axis)), "concat")


def stack(tensors: Sequence[ArrayLike], axis: int = 0) -> Tensor:
    tensors = tuple(as_tensor(t) for t in tensors)
    try:
        out = np.stack([t.data for t in tensors], axis=axis)
    except ValueError:
        raise ShapeError(f"stack: formas incompatibles {[t.shape for t in tensors]}", {"op": "stack"})
    return _make(out, tensors,
                 lambda g: tuple(np.take(g, i, axis=axis) for i in range(len(tensors))), "stack")


# ---------------------------------------------------------------------------
# Convolución y pooling
# ---------------------------------------------------------------------------

def conv_output_geometry(size: int, kernel: int, stride: int, padding: str) -> Tuple[int, int, int]:
    """Tamaño de salida y relleno (antes, después) para una dimensión espacial"""
    if padding == "valid":
        return (size - kernel) // stride + 1, 0, 0
    if padding == "same":
        out = -(-size // stride)
        total = max((out - 1) * stride + kernel - size, 0)
        return out, total // 2, total - total // 2
    raise GQSTNError(f"padding desconocido: {padding}")


def conv2d(x: ArrayLike, weight: ArrayLike, bias: Optional[ArrayLike] = None,
           stride: int = 1, padding: str = "valid") -> Tensor:
    """Convolución 2D (correlación) sobre (N, C, H, W) con pesos (F, C, kh, kw)"""
    x, weight = as_tensor(x), as_tensor(weight)
    if x.ndim != 4 or weight.ndim != 4 or x.shape[1] != weight.shape[1]:
        raise ShapeError(f"conv2d: formas incompatibles {x.shape} y {weight.shape}",
                         {"op": "conv2d", "shapes": [x.shape, weight.shape]})
    n, _, h, w = x.shape
    f, _, kh, kw = weight.shape
    ho, pt, pb = conv_output_geometry(h, kh, stride, padding)
    wo, pl, pr = conv_output_geometry(w, kw, stride, padding)
    if ho < 1 or wo < 1:
        raise ShapeError(f"conv2d: imagen {x.shape} menor que el kernel {weight.shape}", {"op": "conv2d"})
    xp = np.pad(x.data, ((0, 0), (0, 0), (pt, pb), (pl, pr)))
    span_h, span_w = stride * (ho - 1) + 1, stride * (wo - 1) + 1

    out = np.zeros((n, f, ho, wo), dtype=x.data.dtype)
    for di in range(kh):
        for dj in range(kw):
            patch = xp[:, :, di:di + span_h:stride, dj:dj + span_w:stride]
            out += np.einsum("nchw,fc->nfhw", patch, weight.data[:, :, di, dj])
    parents: Tuple[Tensor, ...] = (x, weight)
    if bias is not None:
        bias = as_tensor(bias)
        out += bias.data[None, :, None, None]
        parents = (x, weight, bias)

    def grad_fn(g):
        gxp = np.zeros_like(xp)
        gw = np.zeros_like(weight.data)
        for di in range(kh):
            for dj in range(kw):
                patch = xp[:, :, di:di + span_h:stride, dj:dj + span_w:stride]
                gw[:, :, di, dj] = np.einsum("nfhw,nchw->fc", g, patch)
                gxp[:, :, di:di + span_h:stride, dj:dj + span_w:stride] += \
                    np.einsum("nfhw,fc->nchw", g, weight.data[:, :, di, dj])
        gx = gxp[:, :, pt:pt + h, pl:pl + w]
        if bias is None:
            return gx, gw
        return gx, gw, g.sum(axis=(0, 2, 3))
    return _make(out, parents, grad_fn, "conv2d")


def max_pool2d(x: ArrayLike, kernel: int = 2, stride: Optional[int] = None) -> Tensor:
    """Max pooling sin relleno; el gradiente va al primer máximo de cada ventana"""
    x = as_tensor(x)
    stride = stride or kernel
    if x.ndim != 4 or x.shape[2] < kernel or x.shape[3] < kernel:
        raise ShapeError(f"max_pool2d: forma {x.shape} incompatible con kernel {kernel}", {"op": "max_pool2d"})
    n, c, h, w = x.shape
    windows = sliding_window_view(x.data, (kernel, kernel), axis=(2, 3))[:, :, ::stride, ::stride]
    ho, wo = windows.shape[2], windows.shape[3]
    flat = windows.reshape(n, c, ho, wo, kernel * kernel)
    arg = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]

    def grad_fn(g):
        gx = np.zeros_like(x.data)
        ni, ci, hi, wi = np.indices((n, c, ho, wo))
        rows = hi * stride + arg // kernel
        cols = wi * stride + arg % kernel
        np.add.at(gx, (ni, ci, rows, cols), g)
        return (gx,)
    return _make(out, (x,), grad_fn, "max_pool2d")


# ---------------------------------------------------------------------------
# Grafo y retropropagación
# ---------------------------------------------------------------------------

@dataclass
class NodeRecord:
    op: str
    node_id: int
    input_ids: Tuple[int, ...]


@dataclass
class Graph:
    """Registros de operaciones en orden topológico (entradas antes que salidas)"""
    nodes: List[Tensor] = field(default_factory=list)

    @classmethod
    def from_root(cls, root: Tensor) -> "Graph":
        order: List[Tensor] = []
        visited = set()
        stack_: List[Tuple[Tensor, bool]] = [(root, False)]
        while stack_:
            node, expanded = stack_.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack_.append((node, True))
            for parent in node._parents:
                if parent.requires_grad and id(parent) not in visited:
                    stack_.append((parent, False))
        return cls(order)

    def records(self) -> List[NodeRecord]:
        return [NodeRecord(n.op, id(n), tuple(id(p) for p in n._parents)) for n in self.nodes]


def backward(root: Tensor):
    """Acumular (+=) gradientes en todos los tensores alcanzables con requires_grad"""
    if root.data.size != 1:
        raise ShapeError(f"backward requiere una raíz escalar, forma {root.shape}", {"op": "backward"})
    if not root.requires_grad:
        raise GQSTNError("La raíz no pertenece a un grafo grabado")

    graph = Graph.from_root(root)
    pending: Dict[int, np.ndarray] = {id(root): np.ones_like(root.data)}
    for node in reversed(graph.nodes):
        g = pending.pop(id(node), None)
        if g is None:
            continue
        node.grad = g.copy() if node.grad is None else node.grad + g
        if node._backward is None:
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            pending[key] = pg if key not in pending else pending[key] + pg


def zero_grad(tensors):
    for t in tensors:
        t.grad = None


# ---------------------------------------------------------------------------
# Verificación por diferencias finitas
# ---------------------------------------------------------------------------

@dataclass
class CheckReport:
    max_rel_err: float
    worst_index: Tuple[int, ...]
    analytic: float
    numeric: float
    tol: float
    n_elements: int

    @property
    def passed(self) -> bool:
        return self.max_rel_err < self.tol

    def to_dict(self) -> Dict:
        return {
            "passed": self.passed, "max_rel_err": self.max_rel_err,
            "worst_index": list(self.worst_index), "analytic": self.analytic,
            "numeric": self.numeric, "tol": self.tol, "n_elements": self.n_elements,
        }


def _side_slopes(g: Callable[[float], float], f0: float, eps: float, tol: float) -> List[float]:
    """Derivadas laterales de segundo orden de los lados de x sin codo

    g(δ) evalúa f desplazada δ en la coordenada. Un lado está limpio si las
    diferencias con pasos h y h/2 coinciden; con un codo en [x, x ± 2h] no
    coinciden. Mientras ningún lado esté limpio se reduce h.
    """
    h = eps
    for _ in range(4):
        clean = []
        for sign in (1.0, -1.0):
            coarse = sign * (-3.0 * f0 + 4.0 * g(sign * h) - g(sign * 2.0 * h)) / (2.0 * h)
            fine = sign * (-3.0 * f0 + 4.0 * g(sign * h / 2.0) - g(sign * h)) / h
            if abs(coarse - fine) <= 0.1 * tol * max(1.0, abs(fine)):
                clean.append(fine)
        if clean:
            return clean
        h /= 2.0
    return []


def grad_check(f: Callable[[Tensor], Tensor], x: ArrayLike, eps: float = 1e-5,
               tol: float = 1e-4, one_sided: bool = False) -> CheckReport:
    """Comparar el gradiente analítico de f con diferencias centrales

    rel_err = |analítico − numérico| / max(1, |analítico|, |numérico|)

    Con `one_sided`, para funciones suaves a trozos (ReLU, celdas bilineales), cada
    coordenada localiza primero el codo: si cae a un solo lado de x se usa la
    diferencia del otro lado. Si x está justo sobre el codo, cualquiera de las dos
    derivadas laterales es un subgradiente válido.
    """
    x0 = np.array(as_tensor(x).data, dtype=np.float64, copy=True)
    if not np.all(np.isfinite(x0)):
        raise NumericalError("grad_check: entrada no finita")

    with no_grad():
        first = f(Tensor(x0.copy())).data
        second = f(Tensor(x0.copy())).data
    if not np.array_equal(first, second):
        raise NumericalError("grad_check: la función no es determinista")
    if first.size != 1:
        raise ShapeError(f"grad_check: f debe devolver un escalar, forma {first.shape}")
    f0 = float(first.reshape(-1)[0])

    leaf = Tensor(x0.copy(), requires_grad=True)
    out = f(leaf)
    if out.requires_grad:
        backward(out)
    analytic = leaf.grad if leaf.grad is not None else np.zeros_like(x0)

    numeric = np.zeros_like(x0)
    with no_grad():
        for idx in np.ndindex(*x0.shape):
            bumped = x0.copy()
            bumped[idx] += eps
            plus = f(Tensor(bumped)).item()
            bumped[idx] = x0[idx] - eps
            minus = f(Tensor(bumped)).item()
            numeric[idx] = (plus - minus) / (2.0 * eps)
            if one_sided:
                def shifted(delta, idx=idx):
                    moved = x0.copy()
                    moved[idx] += delta
                    return f(Tensor(moved)).item()

                slopes = _side_slopes(shifted, f0, eps, tol)
                if len(slopes) == 1:
                    numeric[idx] = slopes[0]
                elif len(slopes) == 2 and abs(slopes[0] - slopes[1]) > tol * max(1.0, *map(abs, slopes)):
                    # x sobre el codo: vale cualquiera de las dos derivadas laterales
                    numeric[idx] = min(slopes, key=lambda s: abs(s - analytic[idx]))

    rel = np.abs(analytic - numeric) / np.maximum(1.0, np.maximum(np.abs(analytic), np.abs(numeric)))
    worst = np.unravel_index(int(np.argmax(rel)), rel.shape) if rel.size else ()
    report = CheckReport(
        max_rel_err=float(rel.max()) if rel.size else 0.0,
        worst_index=tuple(int(i) for i in worst),
        analytic=float(analytic[worst]) if rel.size else 0.0,
        numeric=float(numeric[worst]) if rel.size else 0.0,
        tol=tol, n_elements=int(x0.size),
    )
    logging.debug(f"grad_check: max_rel_err={report.max_rel_err:.3e} en {report.worst_index}")
    return report
