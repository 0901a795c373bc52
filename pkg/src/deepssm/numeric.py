"""Dense float64 arrays with tape-based reverse-mode differentiation.

Operations record themselves on the innermost active :class:`Tape`. Outside
a tape nothing is recorded, which is the inference path.

    with Tape() as tape:
        y = leaky_relu(conv2d(x, w, b))
        loss = sum_all(mul(y, y))
    grads = tape.backward(loss)      # {Tensor: ndarray}
"""
from __future__ import annotations

import zlib
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

DTYPE = np.float64
LEAKY_SLOPE = 0.2


class ShapeError(ValueError):
    """Operand shapes are incompatible for an operation."""


class ContractError(RuntimeError):
    """An operation was used outside its documented preconditions."""


class Tensor:
    """An immutable float64 array plus the bookkeeping the tape needs."""

    __slots__ = ("data", "requires_grad", "name", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.asarray(data, dtype=DTYPE)
        arr.flags.writeable = False
        self.data = arr
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label})"


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


@dataclass
class _Node:
    out: Tensor
    inputs: tuple[Tensor, ...]
    backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]


_TAPES: list["Tape"] = []


class Tape:
    """Topologically ordered record of differentiable operations.

    Nodes are appended in execution order, so walking the list backwards is a
    valid reverse topological order. Gradient accumulation into a tensor used
    by several consumers is a plain float sum; its result may differ from
    another accumulation order in the last few ulps.
    """

    def __init__(self):
        self.nodes: list[_Node] = []
        self._produced: set[int] = set()

    def __enter__(self) -> "Tape":
        _TAPES.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _TAPES.remove(self)

    def record(self, out: Tensor, inputs: tuple[Tensor, ...], backward) -> None:
        self.nodes.append(_Node(out, inputs, backward))
        self._produced.add(id(out))

    def backward(self, output: Tensor) -> dict[Tensor, np.ndarray]:
        """Gradients of a scalar ``output`` w.r.t. every tracked leaf tensor."""
        if output.data.size != 1:
            raise ContractError(f"backward needs a scalar output, got shape {output.shape}")
        if id(output) not in self._produced:
            raise ContractError("output was not produced under this tape")
        grads: dict[int, np.ndarray] = {id(output): np.ones_like(output.data)}
        leaves: dict[int, Tensor] = {}
        for node in reversed(self.nodes):
            g = grads.pop(id(node.out), None)
            if g is None:
                continue
            for inp, gi in zip(node.inputs, node.backward(g)):
                if gi is None or not inp.requires_grad:
                    continue
                key = id(inp)
                if key in grads:
                    grads[key] = grads[key] + gi
                else:
                    grads[key] = gi
                if key not in self._produced:
                    leaves[key] = inp
        return {t: grads[k] for k, t in leaves.items() if k in grads}


def _emit(data: np.ndarray, inputs: tuple[Tensor, ...], backward) -> Tensor:
    tracked = bool(_TAPES) and any(t.requires_grad for t in inputs)
    out = Tensor(data, requires_grad=tracked)
    if tracked:
        _TAPES[-1].record(out, inputs, backward)
    return out


def _require_same(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} differ")


# ----------------------------------------------------------------------------
# elementwise
# ----------------------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    _require_same(a, b, "add")
    return _emit(a.data + b.data, (a, b), lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _require_same(a, b, "sub")
    return _emit(a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _require_same(a, b, "mul")
    ad, bd = a.data, b.data
    return _emit(ad * bd, (a, b), lambda g: (g * bd, g * ad))


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return _emit(a.data * c, (a,), lambda g: (g * c,))


def leaky_relu(x: Tensor, slope: float = LEAKY_SLOPE) -> Tensor:
    """Elementwise ``max(x, slope * x)`` for ``0 < slope < 1``."""
    if not 0.0 < slope < 1.0:
        raise ContractError(f"leaky_relu slope must lie in (0, 1), got {slope}")
    xd = x.data
    d = np.where(xd > 0, 1.0, slope)
    return _emit(xd * d, (x,), lambda g: (g * d,))


def sum_all(x: Tensor) -> Tensor:
    shape = x.shape
    return _emit(np.asarray(x.data.sum()), (x,), lambda g: (np.broadcast_to(g, shape).copy(),))


# ----------------------------------------------------------------------------
# shape manipulation
# ----------------------------------------------------------------------------

def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    src = x.shape
    return _emit(x.data.reshape(shape), (x,), lambda g: (g.reshape(src),))


def transpose(x: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return _emit(np.transpose(x.data, axes), (x,), lambda g: (np.transpose(g, inv),))


def broadcast_to(x: Tensor, shape: Sequence[int]) -> Tensor:
    """NumPy broadcasting of ``x`` to ``shape``; backward sums the copies."""
    shape = tuple(shape)
    src = x.shape
    lead = len(shape) - len(src)
    axes = tuple(range(lead)) + tuple(
        lead + i for i, n in enumerate(src) if n == 1 and shape[lead + i] != 1
    )

    def backward(g):
        return (g.sum(axis=axes, keepdims=True).reshape(src),)

    return _emit(np.broadcast_to(x.data, shape).copy(), (x,), backward)


def concat(xs: Sequence[Tensor], axis: int) -> Tensor:
    if not xs:
        raise ContractError("concat needs at least one input")
    ref = xs[0].shape
    for x in xs[1:]:
        if x.ndim != len(ref) or any(
            x.shape[i] != ref[i] for i in range(len(ref)) if i != axis % len(ref)
        ):
            raise ShapeError(
                f"concat along axis {axis}: shapes {ref} and {x.shape} disagree off-axis"
            )
    sizes = [x.shape[axis] for x in xs]
    cuts = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, cuts, axis=axis))

    return _emit(np.concatenate([x.data for x in xs], axis=axis), tuple(xs), backward)


def concat_channels(xs: Sequence[Tensor]) -> Tensor:
    """Concatenate ``(B, C_i, H, W)`` maps along channels, preserving order."""
    for x in xs:
        if x.ndim != 4:
            raise ShapeError(f"concat_channels expects 4-D feature maps, got {x.shape}")
    return concat(xs, axis=1)


def stack(xs: Sequence[Tensor], axis: int) -> Tensor:
    for x in xs[1:]:
        _require_same(xs[0], x, "stack")

    def backward(g):
        return tuple(np.moveaxis(g, axis, 0))

    return _emit(np.stack([x.data for x in xs], axis=axis), tuple(xs), backward)


def take(x: Tensor, key) -> Tensor:
    """Basic-slicing view ``x[key]``; backward scatters into zeros."""
    src = x.shape

    def backward(g):
        full = np.zeros(src, dtype=DTYPE)
        full[key] = g
        return (full,)

    return _emit(x.data[key].copy(), (x,), backward)


# ----------------------------------------------------------------------------
# layers
# ----------------------------------------------------------------------------

def _im2col(x: np.ndarray, kh: int, kw: int) -> np.ndarray:
    """Patches of a zero-padded ``(B, C, H, W)`` map as ``(C*kh*kw, B*H*W)``."""
    b, c, h, w = x.shape
    ph, pw = kh // 2, kw // 2
    xp = np.zeros((c, b, h + 2 * ph, w + 2 * pw), dtype=DTYPE)
    xp[:, :, ph:ph + h, pw:pw + w] = x.transpose(1, 0, 2, 3)
    cols = np.empty((c, kh, kw, b, h, w), dtype=DTYPE)
    for i in range(kh):
        for j in range(kw):
            cols[:, i, j] = xp[:, :, i:i + h, j:j + w]
    return cols.reshape(c * kh * kw, b * h * w)


def _conv_same(x: np.ndarray, w: np.ndarray, cols: np.ndarray | None = None) -> np.ndarray:
    """Stride-1 zero-padded 'same' correlation: (B,C,H,W) * (O,C,kh,kw) -> (B,O,H,W)."""
    b, _, h, wd = x.shape
    out_c, in_c, kh, kw = w.shape
    if kh == 1 and kw == 1:
        return np.einsum("bchw,oc->bohw", x, w[:, :, 0, 0], optimize=True)
    if cols is None:
        cols = _im2col(x, kh, kw)
    out = w.reshape(out_c, -1) @ cols
    return np.ascontiguousarray(out.reshape(out_c, b, h, wd).transpose(1, 0, 2, 3))


def conv2d(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """2-D convolution with stride 1 and zero 'same' padding.

    ``x`` is ``(B, C, H, W)``, ``weight`` is ``(O, C, kh, kw)`` with odd
    extents and ``bias`` is ``(O,)``. The output keeps ``H`` and ``W``.
    """
    if x.ndim != 4 or weight.ndim != 4:
        raise ShapeError(f"conv2d: input {x.shape} / kernel {weight.shape} must both be 4-D")
    out_c, in_c, kh, kw = weight.shape
    if x.shape[1] != in_c:
        raise ShapeError(f"conv2d: input {x.shape} has {x.shape[1]} channels, kernel {weight.shape} expects {in_c}")
    if kh % 2 == 0 or kw % 2 == 0:
        raise ShapeError(f"conv2d: kernel {weight.shape} extents must be odd")
    if bias.shape != (out_c,):
        raise ShapeError(f"conv2d: bias {bias.shape} does not match kernel {weight.shape}")

    xd, wd = x.data, weight.data
    pointwise = kh == 1 and kw == 1
    cols = None if pointwise else _im2col(xd, kh, kw)
    out = _conv_same(xd, wd, cols) + bias.data[None, :, None, None]

    def backward(g):
        gx = gw = None
        if x.requires_grad:
            flipped = np.ascontiguousarray(wd[:, :, ::-1, ::-1].transpose(1, 0, 2, 3))
            gx = _conv_same(g, flipped)
        if weight.requires_grad:
            if pointwise:
                gw = np.einsum("bohw,bchw->oc", g, xd, optimize=True)[:, :, None, None]
            else:
                gmat = g.transpose(1, 0, 2, 3).reshape(out_c, -1)
                gw = (gmat @ cols.T).reshape(wd.shape)
        return gx, gw, g.sum(axis=(0, 2, 3))

    return _emit(out, (x, weight, bias), backward)


def fully_connected(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """Affine map on the flattened trailing axes: ``(B, ...) -> (B, out)``.

    ``weight`` is ``(out, in)`` where ``in`` is the product of the non-batch
    extents of ``x``.
    """
    batch = x.shape[0]
    flat = x.data.reshape(batch, -1)
    if weight.ndim != 2 or weight.shape[1] != flat.shape[1]:
        raise ShapeError(f"fully_connected: input {x.shape} flattens to {flat.shape[1]}, weight is {weight.shape}")
    if bias.shape != (weight.shape[0],):
        raise ShapeError(f"fully_connected: bias {bias.shape} does not match weight {weight.shape}")
    wd = weight.data
    src = x.shape

    def backward(g):
        return (g @ wd).reshape(src), g.T @ flat, g.sum(axis=0)

    return _emit(flat @ wd.T + bias.data, (x, weight, bias), backward)


# ----------------------------------------------------------------------------
# parameters and optimisation
# ----------------------------------------------------------------------------

@dataclass
class Conv:
    weight: Tensor
    bias: Tensor

    def __call__(self, x: Tensor) -> Tensor:
        return conv2d(x, self.weight, self.bias)


@dataclass
class Linear:
    weight: Tensor
    bias: Tensor

    def __call__(self, x: Tensor) -> Tensor:
        return fully_connected(x, self.weight, self.bias)


@dataclass
class ParamStore:
    """Named parameters with Adam moments.

    Each parameter is initialised from its own generator seeded by
    ``(seed, crc32(path))``, so values do not depend on creation order.
    """

    seed: int = 0
    params: dict[str, Tensor] = field(default_factory=dict)
    first_moment: dict[str, np.ndarray] = field(default_factory=dict)
    second_moment: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0

    def create(self, path: str, shape: Sequence[int], fan_in: int) -> Tensor:
        if path in self.params:
            raise ContractError(f"duplicate parameter path {path!r}")
        rng = np.random.default_rng([self.seed, zlib.crc32(path.encode())])
        bound = np.sqrt(1.0 / fan_in)
        t = Tensor(rng.uniform(-bound, bound, size=tuple(shape)), requires_grad=True, name=path)
        self.params[path] = t
        return t

    def conv(self, path: str, in_c: int, out_c: int, k: int = 3) -> Conv:
        fan_in = in_c * k * k
        return Conv(
            self.create(f"{path}.weight", (out_c, in_c, k, k), fan_in),
            self.create(f"{path}.bias", (out_c,), fan_in),
        )

    def linear(self, path: str, in_f: int, out_f: int) -> Linear:
        return Linear(
            self.create(f"{path}.weight", (out_f, in_f), in_f),
            self.create(f"{path}.bias", (out_f,), in_f),
        )

    def assign(self, path: str, value) -> None:
        old = self.params[path]
        value = np.asarray(value, dtype=DTYPE)
        if value.shape != old.shape:
            raise ShapeError(f"assign {path}: shape {value.shape} != {old.shape}")
        arr = value.copy()
        arr.flags.writeable = False
        old.data = arr

    def named_gradients(self, grads: dict[Tensor, np.ndarray]) -> dict[str, np.ndarray]:
        """Map tape gradients onto parameter paths; untouched parameters get zeros."""
        out = {}
        for path, t in self.params.items():
            g = grads.get(t)
            out[path] = np.zeros_like(t.data) if g is None else g
        return out

    def count(self) -> int:
        return sum(t.data.size for t in self.params.values())

    def state_arrays(self) -> dict[str, np.ndarray]:
        arrays = {f"param/{k}": t.data for k, t in self.params.items()}
        arrays.update({f"adam_m/{k}": v for k, v in self.first_moment.items()})
        arrays.update({f"adam_v/{k}": v for k, v in self.second_moment.items()})
        arrays["adam_step"] = np.asarray(self.step)
        return arrays

    def load_state_arrays(self, arrays) -> None:
        for key in arrays.keys():
            if key.startswith("param/"):
                self.assign(key[6:], arrays[key])
            elif key.startswith("adam_m/"):
                self.first_moment[key[7:]] = np.array(arrays[key])
            elif key.startswith("adam_v/"):
                self.second_moment[key[7:]] = np.array(arrays[key])
        if "adam_step" in arrays:
            self.step = int(arrays["adam_step"])


def adam_step(store: ParamStore, gradients: dict[str, np.ndarray], lr: float = 1e-4,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> None:
    """One bias-corrected Adam update of every parameter named in ``gradients``."""
    store.step += 1
    bc1 = 1.0 - beta1 ** store.step
    bc2 = 1.0 - beta2 ** store.step
    for path, g in gradients.items():
        p = store.params[path]
        if g.shape != p.shape:
            raise ShapeError(f"gradient for {path} has shape {g.shape}, parameter {p.shape}")
        m = store.first_moment.get(path)
        v = store.second_moment.get(path)
        if m is None:
            m = np.zeros_like(p.data)
            v = np.zeros_like(p.data)
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * (g * g)
        store.first_moment[path] = m
        store.second_moment[path] = v
        new = p.data - lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
        new.flags.writeable = False
        p.data = new
