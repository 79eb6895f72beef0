"""Reverse-mode automatic differentiation on dense numpy arrays.

Operations run eagerly and, while a Tape is active, append a backward rule
to it.  backward() replays the tape in exact reverse execution order, so
gradients are deterministic and accumulate additively across fan-out.
Calling backward() twice without reset_grads() doubles the gradients.
"""

from __future__ import annotations

import json
import logging
from typing import Callable, Iterable, Mapping

import numpy as np

log = logging.getLogger(__name__)

LOG_CLAMP = 1e-12
LAYER_NORM_EPS = 1e-5


class ShapeError(ValueError):
    """Operands do not meet an operator's shape contract."""


class Tensor:
    """Dense float array with an optional same-shape gradient slot."""

    __slots__ = ("values", "grad", "requires_grad")

    def __init__(self, values, requires_grad: bool = False, dtype=None):
        arr = np.asarray(values, dtype=dtype)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float64)
        self.values: np.ndarray = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    @property
    def dtype(self):
        return self.values.dtype

    def item(self) -> float:
        return float(self.values)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, _lift(other, self))

    def __radd__(self, other):
        return add(_lift(other, self), self)

    def __sub__(self, other):
        return sub(self, _lift(other, self))

    def __rsub__(self, other):
        return sub(_lift(other, self), self)

    def __mul__(self, other):
        return mul(self, _lift(other, self))

    def __rmul__(self, other):
        return mul(_lift(other, self), self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


def constant(values, dtype=None) -> Tensor:
    return Tensor(values, requires_grad=False, dtype=dtype)


def parameter(values, dtype=None) -> Tensor:
    return Tensor(values, requires_grad=True, dtype=dtype)


def _lift(value, like: Tensor) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=like.dtype))


class Tape:
    """Ordered record of executed operations and their backward rules.

    Entries are (output, parents, backward_fn) in execution order; the
    backward_fn maps the output adjoint to one adjoint per parent (None for
    parents that need no gradient).
    """

    def __init__(self):
        self._nodes: list[tuple[Tensor, tuple[Tensor, ...], Callable]] = []

    def __len__(self) -> int:
        return len(self._nodes)

    def __enter__(self) -> "Tape":
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        _TAPE_STACK.pop()
        return False

    def record(self, out: Tensor, parents: tuple[Tensor, ...], backward_fn: Callable) -> None:
        self._nodes.append((out, parents, backward_fn))

    def clear(self) -> None:
        self._nodes.clear()


_TAPE_STACK: list[Tape] = []


def active_tape() -> Tape | None:
    return _TAPE_STACK[-1] if _TAPE_STACK else None


def _make(values: np.ndarray, parents: tuple[Tensor, ...], backward_fn: Callable) -> Tensor:
    out = Tensor(values, requires_grad=any(p.requires_grad for p in parents))
    tape = active_tape()
    if tape is not None and out.requires_grad:
        tape.record(out, parents, backward_fn)
    return out


def backward(tape: Tape, loss: Tensor) -> None:
    """Populate .grad on every requires_grad tensor reachable from loss.

    Adjoints are propagated per pass, then added into .grad, so a second
    call without reset_grads() exactly doubles the stored gradients.
    """
    if loss.values.size != 1:
        raise ShapeError(f"backward: loss must be scalar-shaped, got shape {loss.shape}")
    # adjoints for this pass, keyed by tensor identity
    adj: dict[int, tuple[Tensor, np.ndarray]] = {id(loss): (loss, np.ones_like(loss.values))}
    for out, parents, backward_fn in reversed(tape._nodes):
        entry = adj.pop(id(out), None)
        if entry is None:
            continue
        _, g = entry
        if out.requires_grad:
            _accumulate(out, g)
        parent_grads = backward_fn(g)
        for parent, pg in zip(parents, parent_grads):
            if pg is None or not parent.requires_grad:
                continue
            prev = adj.get(id(parent))
            adj[id(parent)] = (parent, pg if prev is None else prev[1] + pg)
    # whatever is left belongs to leaves (tensors not produced on this tape)
    for tensor, g in adj.values():
        if tensor.requires_grad:
            _accumulate(tensor, g)


def _accumulate(tensor: Tensor, g: np.ndarray) -> None:
    if g.shape != tensor.shape:
        raise ShapeError(f"gradient shape {g.shape} does not match tensor shape {tensor.shape}")
    if tensor.grad is None:
        tensor.grad = g.copy()
    else:
        tensor.grad = tensor.grad + g


def reset_grads(tensors: Iterable[Tensor]) -> None:
    for t in tensors:
        t.grad = None


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum g down to `shape`, inverting numpy broadcasting."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g.reshape(shape)


# ---------------------------------------------------------------------------
# primitives


def add(a: Tensor, b: Tensor) -> Tensor:
    try:
        values = a.values + b.values
    except ValueError:
        raise ShapeError(f"add: cannot broadcast shapes {a.shape} and {b.shape}") from None
    return _make(values, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a: Tensor, b: Tensor) -> Tensor:
    try:
        values = a.values - b.values
    except ValueError:
        raise ShapeError(f"sub: cannot broadcast shapes {a.shape} and {b.shape}") from None
    return _make(values, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a: Tensor, b: Tensor) -> Tensor:
    try:
        values = a.values * b.values
    except ValueError:
        raise ShapeError(f"mul: cannot broadcast shapes {a.shape} and {b.shape}") from None
    return _make(
        values,
        (a, b),
        lambda g: (_unbroadcast(g * b.values, a.shape), _unbroadcast(g * a.values, b.shape)),
    )


def neg(a: Tensor) -> Tensor:
    return _make(-a.values, (a,), lambda g: (-g,))


def scale(x: Tensor, s: Tensor) -> Tensor:
    """Multiply x by a scalar parameter s (shape ())."""
    if s.values.ndim != 0:
        raise ShapeError(f"scale: scalar parameter must have shape (), got {s.shape}")
    return _make(
        x.values * s.values,
        (x, s),
        lambda g: (g * s.values, np.asarray((g * x.values).sum(), dtype=s.dtype)),
    )


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.values.ndim != 2 or b.values.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    return _make(
        a.values @ b.values,
        (a, b),
        lambda g: (g @ b.values.T, a.values.T @ g),
    )


def transpose(a: Tensor) -> Tensor:
    if a.values.ndim != 2:
        raise ShapeError(f"transpose: expected 2-d tensor, got shape {a.shape}")
    return _make(a.values.T.copy(), (a,), lambda g: (g.T,))


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    old = a.shape
    return _make(a.values.reshape(shape), (a,), lambda g: (g.reshape(old),))


def concat(parts: list[Tensor], axis: int = -1) -> Tensor:
    if not parts:
        raise ShapeError("concat: need at least one tensor")
    values = np.concatenate([p.values for p in parts], axis=axis)
    sizes = [p.shape[axis] for p in parts]
    offsets = np.cumsum(sizes)[:-1]

    def backward_fn(g):
        return tuple(np.split(g, offsets, axis=axis))

    return _make(values, tuple(parts), backward_fn)


def slice_cols(a: Tensor, start: int, stop: int) -> Tensor:
    if a.values.ndim != 2:
        raise ShapeError(f"slice_cols: expected 2-d tensor, got shape {a.shape}")

    def backward_fn(g):
        z = np.zeros_like(a.values)
        z[:, start:stop] = g
        return (z,)

    return _make(a.values[:, start:stop].copy(), (a,), backward_fn)


def exp(a: Tensor) -> Tensor:
    y = np.exp(a.values)
    return _make(y, (a,), lambda g: (g * y,))


def log(a: Tensor, clamp: float = LOG_CLAMP) -> Tensor:
    """Natural log with the argument clamped below at `clamp`."""
    y = np.log(np.maximum(a.values, clamp))
    return _make(y, (a,), lambda g: (np.where(a.values > clamp, g / a.values, 0.0),))


def sigmoid(a: Tensor) -> Tensor:
    x = a.values
    y = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))), np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
    return _make(y, (a,), lambda g: (g * y * (1.0 - y),))


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.values)
    return _make(y, (a,), lambda g: (g * (1.0 - y * y),))


def relu(a: Tensor) -> Tensor:
    y = np.maximum(a.values, 0.0)
    return _make(y, (a,), lambda g: (g * (a.values > 0),))


def row_softmax(a: Tensor) -> Tensor:
    """Softmax along the last axis; each row sums to 1 and is strictly positive."""
    shifted = a.values - a.values.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=-1, keepdims=True)

    def backward_fn(g):
        return ((g - (g * y).sum(axis=-1, keepdims=True)) * y,)

    return _make(y, (a,), backward_fn)


def layer_norm(a: Tensor, gain: Tensor, shift: Tensor, eps: float = LAYER_NORM_EPS) -> Tensor:
    """Normalize over the last axis, then apply learnable scale and shift."""
    mu = a.values.mean(axis=-1, keepdims=True)
    centered = a.values - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv_std
    values = xhat * gain.values + shift.values

    def backward_fn(g):
        d_gain = _unbroadcast(g * xhat, gain.shape)
        d_shift = _unbroadcast(g, shift.shape)
        d_xhat = g * gain.values
        d_a = inv_std * (
            d_xhat
            - d_xhat.mean(axis=-1, keepdims=True)
            - xhat * (d_xhat * xhat).mean(axis=-1, keepdims=True)
        )
        return (d_a, d_gain, d_shift)

    return _make(values, (a, gain, shift), backward_fn)


def dropout(a: Tensor, rate: float, rng: np.random.Generator | None = None, train: bool = False) -> Tensor:
    """Inverted dropout: identity in eval mode, mask scaled by 1/(1-rate) in train mode."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout: rate must be in [0, 1), got {rate}")
    if not train or rate == 0.0:
        return a
    if rng is None:
        raise ValueError("dropout: train mode requires an rng")
    keep = (rng.random(a.shape) >= rate).astype(a.dtype) / (1.0 - rate)
    return _make(a.values * keep, (a,), lambda g: (g * keep,))


def reduce_mean(a: Tensor) -> Tensor:
    """Mean over rows (axis 0) of a 2-d tensor."""
    if a.values.ndim != 2:
        raise ShapeError(f"reduce_mean: expected 2-d tensor, got shape {a.shape}")
    n = a.shape[0]
    return _make(a.values.mean(axis=0), (a,), lambda g: (np.broadcast_to(g / n, a.shape).copy(),))


def reduce_max(a: Tensor) -> Tensor:
    """Max over rows (axis 0); the subgradient flows to the first argmax row."""
    if a.values.ndim != 2:
        raise ShapeError(f"reduce_max: expected 2-d tensor, got shape {a.shape}")
    idx = a.values.argmax(axis=0)
    cols = np.arange(a.shape[1])

    def backward_fn(g):
        z = np.zeros_like(a.values)
        z[idx, cols] = g
        return (z,)

    return _make(a.values[idx, cols], (a,), backward_fn)


def reduce_sum(a: Tensor) -> Tensor:
    """Sum of all entries, as a scalar-shaped tensor."""
    return _make(
        np.asarray(a.values.sum(), dtype=a.dtype),
        (a,),
        lambda g: (np.broadcast_to(g, a.shape).copy(),),
    )


def gather_rows(a: Tensor, index) -> Tensor:
    """Select rows by integer index; duplicate indices are allowed."""
    index = np.asarray(index, dtype=np.intp)
    if a.values.ndim != 2:
        raise ShapeError(f"gather_rows: expected 2-d tensor, got shape {a.shape}")

    def backward_fn(g):
        z = np.zeros_like(a.values)
        np.add.at(z, index, g)
        return (z,)

    return _make(a.values[index], (a,), backward_fn)


def scatter_sum(a: Tensor, index, num_rows: int) -> Tensor:
    """Sum rows of a into an output of num_rows rows at the given indices."""
    index = np.asarray(index, dtype=np.intp)
    if a.values.ndim != 2:
        raise ShapeError(f"scatter_sum: expected 2-d tensor, got shape {a.shape}")
    values = np.zeros((num_rows, a.shape[1]), dtype=a.dtype)
    np.add.at(values, index, a.values)
    return _make(values, (a,), lambda g: (g[index],))


def row_sqdist(a: Tensor, b: Tensor) -> Tensor:
    """Squared Euclidean distance between corresponding rows, shape (n, 1)."""
    if a.shape != b.shape or a.values.ndim != 2:
        raise ShapeError(f"row_sqdist: expected matching 2-d shapes, got {a.shape} and {b.shape}")
    diff = a.values - b.values
    values = (diff * diff).sum(axis=1, keepdims=True)
    return _make(values, (a, b), lambda g: (2.0 * diff * g, -2.0 * diff * g))


# ---------------------------------------------------------------------------
# gradient verification


def finite_diff_coordinate_errors(
    loss_fn: Callable[[], Tensor],
    params: Mapping[str, Tensor],
    eps: float = 1e-5,
    coords_per_tensor: int = 25,
    rng: np.random.Generator | None = None,
) -> dict[str, np.ndarray]:
    """Relative error per sampled coordinate between backprop and central
    differences; relative error is |a - b| / max(1e-8, |a| + |b|).

    The coordinate sample is drawn from `rng`, so two calls seeded alike
    check the same coordinates (this is what lets callers sweep eps).
    """
    if eps <= 0:
        raise ValueError("finite_diff_coordinate_errors: eps must be positive")
    rng = rng if rng is not None else np.random.default_rng(0)
    reset_grads(params.values())
    with Tape() as tape:
        loss = loss_fn()
    backward(tape, loss)
    analytic = {
        name: (p.grad if p.grad is not None else np.zeros_like(p.values)).reshape(-1).copy()
        for name, p in params.items()
    }
    errors: dict[str, np.ndarray] = {}
    for name, p in params.items():
        flat = p.values.reshape(-1)
        size = flat.size
        if size <= coords_per_tensor:
            coords = np.arange(size)
        else:
            coords = rng.choice(size, size=coords_per_tensor, replace=False)
        per_coord = np.empty(len(coords))
        for row, k in enumerate(coords):
            orig = flat[k]
            flat[k] = orig + eps
            f_plus = float(loss_fn().values)
            flat[k] = orig - eps
            f_minus = float(loss_fn().values)
            flat[k] = orig
            numeric = (f_plus - f_minus) / (2.0 * eps)
            a = float(analytic[name][k])
            per_coord[row] = abs(a - numeric) / max(1e-8, abs(a) + abs(numeric))
        errors[name] = per_coord
    return errors


def finite_diff_errors(
    loss_fn: Callable[[], Tensor],
    params: Mapping[str, Tensor],
    eps: float = 1e-5,
    coords_per_tensor: int = 25,
    rng: np.random.Generator | None = None,
) -> dict[str, float]:
    """Max relative error between backprop and central differences, per tensor.

    Samples up to coords_per_tensor coordinates of each parameter; relative
    error is |a - b| / max(1e-8, |a| + |b|).
    """
    per_coord = finite_diff_coordinate_errors(
        loss_fn, params, eps=eps, coords_per_tensor=coords_per_tensor, rng=rng
    )
    return {name: float(errs.max()) if errs.size else 0.0 for name, errs in per_coord.items()}


def finite_diff_check(
    loss_fn: Callable[[], Tensor],
    params: Mapping[str, Tensor],
    eps: float = 1e-5,
    coords_per_tensor: int = 25,
    rng: np.random.Generator | None = None,
) -> float:
    """Max relative error over all sampled coordinates of all parameters."""
    errors = finite_diff_errors(loss_fn, params, eps=eps, coords_per_tensor=coords_per_tensor, rng=rng)
    return max(errors.values()) if errors else 0.0


# ---------------------------------------------------------------------------
# optimizer


class AdamState:
    """Adam moments plus step count for a named parameter set."""

    def __init__(
        self,
        params: Mapping[str, Tensor],
        learning_rate: float = 1e-3,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
        weight_decay: float = 0.0,
    ):
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.weight_decay = weight_decay
        self.step_count = 0
        self.m = {name: np.zeros_like(p.values) for name, p in params.items()}
        self.v = {name: np.zeros_like(p.values) for name, p in params.items()}


def adam_step(params: Mapping[str, Tensor], state: AdamState) -> None:
    """One bias-corrected Adam update; L2 is applied as decay added to the gradient."""
    state.step_count += 1
    t = state.step_count
    bias1 = 1.0 - state.beta1**t
    bias2 = 1.0 - state.beta2**t
    for name, p in params.items():
        g = p.grad if p.grad is not None else np.zeros_like(p.values)
        if state.weight_decay:
            g = g + state.weight_decay * p.values
        state.m[name] = state.beta1 * state.m[name] + (1.0 - state.beta1) * g
        state.v[name] = state.beta2 * state.v[name] + (1.0 - state.beta2) * (g * g)
        m_hat = state.m[name] / bias1
        v_hat = state.v[name] / bias2
        p.values -= state.learning_rate * m_hat / (np.sqrt(v_hat) + state.eps)


# ---------------------------------------------------------------------------
# checkpoint I/O: one JSON header line, then raw little-endian float64 payloads
# in header order.

CHECKPOINT_FORMAT = "textgsl-checkpoint"
CHECKPOINT_VERSION = 1


class CheckpointError(ValueError):
    """Checkpoint file is missing, truncated, or structurally invalid."""


def save_checkpoint(
    path,
    params: Mapping[str, Tensor],
    step: int = 0,
    hyperparameters: dict | None = None,
    meta: dict | None = None,
) -> None:
    header = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "step": step,
        "hyperparameters": hyperparameters or {},
        "meta": meta or {},
        "params": [{"name": name, "shape": list(p.shape)} for name, p in params.items()],
    }
    with open(path, "wb") as f:
        f.write(json.dumps(header, sort_keys=True).encode("utf-8") + b"\n")
        for name, p in params.items():
            f.write(np.ascontiguousarray(p.values, dtype="<f8").tobytes())


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    with open(path, "rb") as f:
        header_line = f.readline()
        try:
            header = json.loads(header_line.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as err:
            raise CheckpointError(f"{path}: invalid checkpoint header: {err}") from None
        if header.get("format") != CHECKPOINT_FORMAT:
            raise CheckpointError(f"{path}: not a {CHECKPOINT_FORMAT} file")
        params: dict[str, np.ndarray] = {}
        for entry in header["params"]:
            shape = tuple(entry["shape"])
            count = int(np.prod(shape)) if shape else 1
            raw = f.read(count * 8)
            if len(raw) != count * 8:
                raise CheckpointError(f"{path}: truncated payload for parameter {entry['name']!r}")
            params[entry["name"]] = np.frombuffer(raw, dtype="<f8").reshape(shape).copy()
    return params, header
