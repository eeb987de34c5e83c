"""Minimal reverse-mode automatic differentiation over numpy arrays.

A :class:`Tensor` wraps a float64 array, remembers the op that produced it and
its parents, and accumulates gradients in ``backward``.  Broadcasting is
limited to what numpy does for elementwise ops; gradients are summed back to
the operand's shape.

GRU convention used throughout::

    z = sigmoid(x W_z + h U_z + b_z)          # update gate
    r = sigmoid(x W_r + h U_r + b_r)          # reset gate
    c = tanh(x W_c + (r * h) U_c + b_c)       # candidate
    h' = (1 - z) * h + z * c

i.e. the update gate multiplies the candidate.
"""

from __future__ import annotations

import json
import zipfile
from collections.abc import Callable, Iterable, Iterator, Mapping
from pathlib import Path

import numpy as np

CHECKPOINT_VERSION = 1


class Tensor:
    """A node in the computation graph."""

    __slots__ = ("value", "grad", "op", "inputs", "_backward", "requires_grad")
    __array_priority__ = 100

    def __init__(self, value, requires_grad: bool = False, op: str = "leaf",
                 inputs: tuple = ()):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.op = op
        self.inputs: tuple[Tensor, ...] = inputs
        self._backward: Callable[[np.ndarray], None] | None = None
        self.requires_grad = requires_grad or any(p.requires_grad for p in inputs)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def __repr__(self) -> str:
        return f"Tensor(op={self.op!r}, shape={self.shape})"

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self, grad: np.ndarray | None = None) -> None:
        """Propagate gradients from this node to every ancestor.

        Each node is visited once, in reverse topological order; gradients
        arriving along several paths are summed.
        """
        if grad is None:
            if self.value.size != 1:
                raise ValueError("backward() without a seed gradient needs a scalar")
            grad = np.ones_like(self.value)
        order = _topological_order(self)
        pending: dict[int, np.ndarray] = {id(self): np.asarray(grad, dtype=np.float64)}
        for node in reversed(order):
            g = pending.pop(id(node), None)
            if g is None:
                continue
            if not node.inputs:
                node.grad = g if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node.inputs, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                pending[key] = pg if key not in pending else pending[key] + pg

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return take(self, index)


def _topological_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node.inputs:
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))
    return order


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _make(value, op: str, inputs: tuple[Tensor, ...], backward) -> Tensor:
    out = Tensor(value, op=op, inputs=inputs)
    out._backward = backward
    return out


# ---------------------------------------------------------------- elementwise

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.value + b.value, "add", (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.value - b.value, "sub", (a, b),
                 lambda g: (_unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.value * b.value, "mul", (a, b),
                 lambda g: (_unbroadcast(g * b.value, a.shape),
                            _unbroadcast(g * a.value, b.shape)))


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.value / b.value
    return _make(out, "div", (a, b),
                 lambda g: (_unbroadcast(g / b.value, a.shape),
                            _unbroadcast(-g * out / b.value, b.shape)))


def power(a, exponent: float) -> Tensor:
    a = as_tensor(a)
    return _make(a.value ** exponent, "power", (a,),
                 lambda g: (g * exponent * a.value ** (exponent - 1.0),))


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.value)
    return _make(out, "exp", (a,), lambda g: (g * out,))


def log(a) -> Tensor:
    a = as_tensor(a)
    return _make(np.log(a.value), "log", (a,), lambda g: (g / a.value,))


def relu(a) -> Tensor:
    a = as_tensor(a)
    on = a.value > 0
    # np.maximum propagates NaN where np.where would zero it
    return _make(np.maximum(a.value, 0.0), "relu", (a,), lambda g: (g * on,))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out = _stable_sigmoid(a.value)
    return _make(out, "sigmoid", (a,), lambda g: (g * out * (1.0 - out),))


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.value)
    return _make(out, "tanh", (a,), lambda g: (g * (1.0 - out * out),))


def clip(a, lo: float, hi: float) -> Tensor:
    """Clamp to ``[lo, hi]``; the gradient is zero where clamping is active."""
    a = as_tensor(a)
    inside = (a.value >= lo) & (a.value <= hi)
    return _make(np.clip(a.value, lo, hi), "clip", (a,), lambda g: (g * inside,))


def _stable_sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


# ------------------------------------------------------------ linear algebra

def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.value.ndim != 2 or b.value.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    return _make(a.value @ b.value, "matmul", (a, b),
                 lambda g: (g @ b.value.T, a.value.T @ g))


# ---------------------------------------------------------------- reductions

def sum_(a, axis: int | None = None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    out = a.value.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _make(out, "sum", (a,), backward)


def mean(a, axis: int | None = None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    n = a.value.size if axis is None else a.shape[axis]
    return sum_(a, axis=axis, keepdims=keepdims) * (1.0 / n)


# ----------------------------------------------------------- shape handling

def take(a, index) -> Tensor:
    """Basic or advanced indexing; repeated indices accumulate gradient."""
    a = as_tensor(a)

    def backward(g):
        full = np.zeros_like(a.value)
        np.add.at(full, index, g)
        return (full,)

    return _make(a.value[index], "take", (a,), backward)


def concat(parts: Iterable, axis: int = -1) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    sizes = [p.shape[axis] for p in parts]
    splits = np.cumsum(sizes)[:-1]
    return _make(np.concatenate([p.value for p in parts], axis=axis), "concat",
                 tuple(parts), lambda g: tuple(np.split(g, splits, axis=axis)))


def reshape(a, shape: tuple[int, ...]) -> Tensor:
    a = as_tensor(a)
    return _make(a.value.reshape(shape), "reshape", (a,),
                 lambda g: (g.reshape(a.shape),))


def detach(a) -> Tensor:
    return Tensor(as_tensor(a).value.copy())


# -------------------------------------------------------------- network ops

ACTIVATIONS: dict[str, Callable[[Tensor], Tensor]] = {
    "identity": lambda t: t,
    "relu": relu,
    "sigmoid": sigmoid,
    "tanh": tanh,
}


def dense(x, W, b, activation: str = "identity") -> Tensor:
    """``act(x @ W + b)`` for a row-batch ``x`` of shape (n, d_in)."""
    x, W, b = as_tensor(x), as_tensor(W), as_tensor(b)
    if x.value.ndim == 1:
        x = reshape(x, (1, x.shape[0]))
    if x.shape[1] != W.shape[0] or b.shape[-1] != W.shape[1]:
        raise ValueError(
            f"dense shape mismatch: x {x.shape}, W {W.shape}, b {b.shape}")
    try:
        act = ACTIVATIONS[activation]
    except KeyError:
        raise ValueError(f"unknown activation {activation!r}") from None
    return act(matmul(x, W) + b)


def gru_cell(x_t, h_prev, params: Mapping[str, Tensor], prefix: str = "") -> Tensor:
    """One GRU step; see the module docstring for the gate convention.

    ``params`` must hold ``{prefix}W`` (d_in, 3h), ``{prefix}U`` (h, 3h) and
    ``{prefix}b`` (3h,), gate blocks ordered update, reset, candidate.
    """
    x_t, h_prev = as_tensor(x_t), as_tensor(h_prev)
    W, U, b = params[prefix + "W"], params[prefix + "U"], params[prefix + "b"]
    hidden = h_prev.shape[-1]
    if hidden == 0:
        raise ValueError("GRU hidden state has zero width")
    if W.shape != (x_t.shape[-1], 3 * hidden) or U.shape != (hidden, 3 * hidden):
        raise ValueError(
            f"gru shape mismatch: x {x_t.shape}, h {h_prev.shape}, "
            f"W {W.shape}, U {U.shape}")
    xw = matmul(x_t, W) + b
    hu = matmul(h_prev, take(U, (slice(None), slice(0, 2 * hidden))))
    z = sigmoid(take(xw, (slice(None), slice(0, hidden)))
                + take(hu, (slice(None), slice(0, hidden))))
    r = sigmoid(take(xw, (slice(None), slice(hidden, 2 * hidden)))
                + take(hu, (slice(None), slice(hidden, 2 * hidden))))
    cand = tanh(take(xw, (slice(None), slice(2 * hidden, 3 * hidden)))
                + matmul(r * h_prev, take(U, (slice(None), slice(2 * hidden, 3 * hidden)))))
    return (1.0 - z) * h_prev + z * cand


def dropout(x, p: float, rng: np.random.Generator | None, training: bool) -> Tensor:
    """Inverted dropout; the identity outside training or when ``p == 0``."""
    x = as_tensor(x)
    if not training or p == 0.0:
        return x
    if rng is None:
        raise ValueError("training-mode dropout needs an explicit rng")
    keep = (rng.random(x.shape) >= p) / (1.0 - p)
    return x * keep


def run_gru(steps: list, h0, params, prefix: str) -> list[Tensor]:
    h = as_tensor(h0)
    states = []
    for x_t in steps:
        h = gru_cell(x_t, h, params, prefix)
        states.append(h)
    return states


def bidirectional_gru(sequence: list, params: Mapping[str, Tensor], n_layers: int = 2,
                      dropout_p: float = 0.1, *, training: bool = False,
                      rng: np.random.Generator | None = None) -> list[Tensor]:
    """Stacked bidirectional GRU over a list of (batch, width) steps.

    Layer ``l`` uses ``gru{l}_fwd_*`` and ``gru{l}_bwd_*`` parameters.  Layers
    above the first see the concatenated forward/backward outputs, with
    dropout applied between layers only.  Returns the final hidden states
    ordered ``[l0_fwd, l0_bwd, l1_fwd, l1_bwd, ...]``.
    """
    if len(sequence) == 0:
        raise ValueError("bidirectional_gru needs a nonempty sequence")
    batch = as_tensor(sequence[0]).shape[0]
    finals: list[Tensor] = []
    inputs = list(sequence)
    for layer in range(n_layers):
        if layer > 0:
            inputs = [dropout(x, dropout_p, rng, training) for x in inputs]
        fw, bw = f"gru{layer}_fwd_", f"gru{layer}_bwd_"
        hidden = params[fw + "U"].shape[0]
        h0 = np.zeros((batch, hidden))
        fwd = run_gru(inputs, h0, params, fw)
        bwd = run_gru(inputs[::-1], h0, params, bw)[::-1]
        finals.extend([fwd[-1], bwd[0]])
        inputs = [concat([f, b], axis=1) for f, b in zip(fwd, bwd)]
    return finals


def reparameterize(mu, logvar, noise) -> Tensor:
    """``mu + exp(logvar / 2) * noise``; ``noise`` is treated as a constant."""
    mu, logvar = as_tensor(mu), as_tensor(logvar)
    if mu.shape != logvar.shape or mu.shape != np.shape(noise):
        raise ValueError(f"reparameterize shape mismatch: {mu.shape}, "
                         f"{logvar.shape}, {np.shape(noise)}")
    return mu + exp(logvar * 0.5) * Tensor(noise)


# ------------------------------------------------------------------ params

class ParamSet(Mapping):
    """Named trainable tensors with fixed shapes."""

    def __init__(self) -> None:
        self._tensors: dict[str, Tensor] = {}
        self.trainable: dict[str, bool] = {}
        self.decay: dict[str, bool] = {}

    def add(self, name: str, value, trainable: bool = True, decay: bool = False) -> Tensor:
        if name in self._tensors:
            raise KeyError(f"duplicate parameter name {name!r}")
        t = Tensor(np.array(value, dtype=np.float64), requires_grad=trainable)
        self._tensors[name] = t
        self.trainable[name] = trainable
        self.decay[name] = decay
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._tensors[name]

    def __iter__(self) -> Iterator[str]:
        return iter(self._tensors)

    def __len__(self) -> int:
        return len(self._tensors)

    def set_value(self, name: str, value) -> None:
        value = np.asarray(value, dtype=np.float64)
        if value.shape != self._tensors[name].shape:
            raise ValueError(f"{name}: shape {value.shape} != {self._tensors[name].shape}")
        self._tensors[name].value = value.copy()

    def zero_grad(self) -> None:
        for t in self._tensors.values():
            t.grad = None

    def values_dict(self) -> dict[str, np.ndarray]:
        return {k: t.value.copy() for k, t in self._tensors.items()}

    def copy(self) -> ParamSet:
        out = ParamSet()
        for k, t in self._tensors.items():
            out.add(k, t.value.copy(), self.trainable[k], self.decay[k])
        return out

    def save(self, path: str | Path) -> None:
        """Write an ``.npz`` container with a JSON header of names and shapes."""
        header = {
            "version": CHECKPOINT_VERSION,
            "tensors": [
                {"name": k, "shape": list(t.shape), "trainable": self.trainable[k],
                 "decay": self.decay[k]}
                for k, t in self._tensors.items()
            ],
        }
        arrays = {"__header__": np.array(json.dumps(header))}
        arrays.update({f"t{i}": t.value for i, t in enumerate(self._tensors.values())})
        # np.savez stamps entries with the wall clock; a fixed date keeps
        # checkpoints byte-identical across reruns
        with zipfile.ZipFile(path, "w", zipfile.ZIP_STORED) as zf:
            for name, arr in arrays.items():
                info = zipfile.ZipInfo(name + ".npy", date_time=(1980, 1, 1, 0, 0, 0))
                with zf.open(info, "w", force_zip64=True) as fh:
                    np.lib.format.write_array(fh, np.asarray(arr), allow_pickle=False)

    @classmethod
    def load(cls, path: str | Path) -> ParamSet:
        with np.load(path, allow_pickle=False) as data:
            header = json.loads(str(data["__header__"]))
            if header.get("version") != CHECKPOINT_VERSION:
                raise ValueError(f"unsupported checkpoint version {header.get('version')}")
            out = cls()
            for i, entry in enumerate(header["tensors"]):
                value = data[f"t{i}"]
                if list(value.shape) != entry["shape"]:
                    raise ValueError(f"{entry['name']}: shape header mismatch")
                out.add(entry["name"], value, entry["trainable"], entry["decay"])
        return out


# -------------------------------------------------------------- grad check

def grad_check(loss_fn: Callable[[ParamSet], Tensor], params: ParamSet,
               h: float = 1e-5, names: Iterable[str] | None = None,
               kink_tol: float = 1e-2, abs_floor: float = 1e-6) -> float:
    """Worst relative error between analytic and central-difference gradients.

    The relative error of an entry is ``|a - n| / max(|a|, |n|, abs_floor)``.
    An entry is skipped when its forward and backward one-sided slopes differ
    by more than ``kink_tol`` (relative to the slope size): the perturbation
    straddles a ReLU or clamp kink where no derivative exists.
    """
    names = list(params) if names is None else list(names)
    params.zero_grad()
    loss = loss_fn(params)
    base = float(loss.value)
    if not np.isfinite(base):
        raise FloatingPointError("loss is not finite")
    loss.backward()
    worst = 0.0
    for name in names:
        t = params[name]
        analytic = np.zeros(t.value.size) if t.grad is None else t.grad.reshape(-1)
        flat = t.value.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = float(loss_fn(params).value)
            flat[i] = orig - h
            down = float(loss_fn(params).value)
            flat[i] = orig
            fwd, bwd = (up - base) / h, (base - down) / h
            if abs(fwd - bwd) > kink_tol * max(1.0, abs(fwd), abs(bwd)):
                continue
            numeric = (up - down) / (2 * h)
            err = abs(analytic[i] - numeric) / max(abs(analytic[i]), abs(numeric), abs_floor)
            worst = max(worst, err)
    return worst
