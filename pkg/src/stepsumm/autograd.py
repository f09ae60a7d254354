"""Minimal reverse-mode autodiff over dense float64 tensors.

Design constraints, deliberately narrow:
  * 64-bit floats only, row-major layout, explicit shapes.
  * No broadcasting. Every shape alignment is an explicit op (add_bias,
    tile_rows, ...), which removes a whole class of silent bugs.
  * Define-by-run: a Tape records ops in execution order (parents always
    precede children), is consumed by one backward traversal, and is
    rebuilt on every forward pass.
"""

from __future__ import annotations

import numpy as np


class ShapeError(ValueError):
    """Operand shapes do not satisfy an op's contract."""


class ContractError(ValueError):
    """An op precondition (other than shape) was violated."""


class DeterminismError(RuntimeError):
    """A function expected to be deterministic returned differing values."""


class InputTooShortError(ValueError):
    """Convolution input shorter than the kernel width."""


def _as_array(values) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    return np.ascontiguousarray(arr)


class Tensor:
    """A dense float64 array with an optional gradient buffer."""

    __slots__ = ("data", "requires_grad", "grad", "_tape")

    def __init__(self, values, requires_grad: bool = False):
        self.data = _as_array(values)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._tape: Tape | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() on non-scalar tensor of shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # Same-shape arithmetic; anything fancier goes through a named op.
    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __sub__(self, other: "Tensor") -> "Tensor":
        return sub(self, other)

    def __mul__(self, other: "Tensor") -> "Tensor":
        return mul(self, other)

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)


def tensor(values, requires_grad: bool = False) -> Tensor:
    return Tensor(values, requires_grad=requires_grad)


def zeros(shape, requires_grad: bool = False) -> Tensor:
    return Tensor(np.zeros(shape, dtype=np.float64), requires_grad=requires_grad)


class _Node:
    __slots__ = ("out", "parents", "bwd")

    def __init__(self, out: Tensor, parents: tuple[Tensor, ...], bwd):
        self.out = out
        self.parents = parents
        self.bwd = bwd


class Tape:
    """Ordered record of ops for one forward pass.

    Execution order is a topological order by construction, so backward()
    visits each node exactly once in a single reversed sweep.
    """

    def __init__(self):
        self.nodes: list[_Node] = []

    def __enter__(self) -> "Tape":
        _STACK.append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> bool:
        _STACK.pop()
        return False


_STACK: list[Tape] = []


def _active() -> Tape | None:
    return _STACK[-1] if _STACK else None


def record(out: Tensor, parents: tuple[Tensor, ...], bwd) -> Tensor:
    """Attach a backward rule for `out` to the active tape, if any.

    `bwd(grad_out)` must return one gradient array (or None) per parent.
    When no tape is active, or no parent needs gradients, nothing is
    recorded and `out` carries requires_grad=False.
    """
    tape = _active()
    if tape is not None and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._tape = tape
        tape.nodes.append(_Node(out, parents, bwd))
    return out


def backward(loss: Tensor) -> None:
    """Populate .grad on every requires_grad tensor reachable from `loss`.

    The tape is consumed: a second backward needs a fresh forward pass.
    Gradients accumulate (no implicit zeroing), so the backward of a sum
    of losses equals the sum of separate backwards.
    """
    if loss.data.size != 1:
        raise ContractError(f"backward() needs a scalar loss, got shape {loss.shape}")
    tape = loss._tape
    if tape is None or not tape.nodes:
        raise ContractError("backward() called with no recorded tape")
    loss.grad = np.ones_like(loss.data)
    for node in reversed(tape.nodes):
        gout = node.out.grad
        if gout is None:
            continue
        grads = node.bwd(gout)
        for parent, g in zip(node.parents, grads):
            if g is None or not parent.requires_grad:
                continue
            # never mutate in place: returned arrays may alias each other
            parent.grad = g if parent.grad is None else parent.grad + g
    tape.nodes.clear()


def _require_2d(x: Tensor, op: str) -> None:
    if x.data.ndim != 2:
        raise ShapeError(f"{op} needs a 2-D tensor, got shape {x.shape}")


def _require_same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} differ")


# ---------------------------------------------------------------------------
# core ops


def matmul(a: Tensor, b: Tensor) -> Tensor:
    _require_2d(a, "matmul")
    _require_2d(b, "matmul")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner dims disagree, {a.shape} x {b.shape}")
    out = Tensor(a.data @ b.data)

    def bwd(g):
        return g @ b.data.T, a.data.T @ g

    return record(out, (a, b), bwd)


def transpose(x: Tensor) -> Tensor:
    _require_2d(x, "transpose")
    out = Tensor(np.ascontiguousarray(x.data.T))

    def bwd(g):
        return (np.ascontiguousarray(g.T),)

    return record(out, (x,), bwd)


def add(a: Tensor, b: Tensor) -> Tensor:
    _require_same_shape(a, b, "add")
    out = Tensor(a.data + b.data)

    def bwd(g):
        return g, g

    return record(out, (a, b), bwd)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _require_same_shape(a, b, "sub")
    out = Tensor(a.data - b.data)

    def bwd(g):
        return g, -g

    return record(out, (a, b), bwd)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _require_same_shape(a, b, "mul")
    out = Tensor(a.data * b.data)

    def bwd(g):
        return g * b.data, g * a.data

    return record(out, (a, b), bwd)


def scale(x: Tensor, c: float) -> Tensor:
    c = float(c)
    out = Tensor(x.data * c)

    def bwd(g):
        return (g * c,)

    return record(out, (x,), bwd)


def add_bias(m: Tensor, b: Tensor) -> Tensor:
    """Add a length-d bias vector to every row of an [T, d] matrix."""
    _require_2d(m, "add_bias")
    if b.data.ndim != 1 or b.shape[0] != m.shape[1]:
        raise ShapeError(f"add_bias: matrix {m.shape} vs bias {b.shape}")
    out = Tensor(m.data + b.data[None, :])

    def bwd(g):
        return g, g.sum(axis=0)

    return record(out, (m, b), bwd)


def tile_rows(v: Tensor, n: int) -> Tensor:
    """Repeat a [1, d] row vector n times into an [n, d] matrix."""
    if v.data.ndim != 2 or v.shape[0] != 1:
        raise ShapeError(f"tile_rows needs a [1, d] row, got {v.shape}")
    if n < 1:
        raise ContractError("tile_rows: n must be >= 1")
    out = Tensor(np.repeat(v.data, n, axis=0))

    def bwd(g):
        return (g.sum(axis=0, keepdims=True),)

    return record(out, (v,), bwd)


def rows(x: Tensor, indices) -> Tensor:
    """Gather rows by index (also the embedding lookup)."""
    _require_2d(x, "rows")
    idx = np.asarray(indices, dtype=np.intp)
    if idx.ndim != 1:
        raise ShapeError("rows: indices must be a flat list")
    if idx.size and (idx.min() < 0 or idx.max() >= x.shape[0]):
        raise ShapeError(f"rows: index out of range for {x.shape[0]} rows")
    out = Tensor(x.data[idx])

    def bwd(g):
        acc = np.zeros_like(x.data)
        np.add.at(acc, idx, g)
        return (acc,)

    return record(out, (x,), bwd)


def cols(x: Tensor, start: int, stop: int) -> Tensor:
    _require_2d(x, "cols")
    if not (0 <= start < stop <= x.shape[1]):
        raise ShapeError(f"cols: [{start}:{stop}] invalid for shape {x.shape}")
    out = Tensor(np.ascontiguousarray(x.data[:, start:stop]))

    def bwd(g):
        acc = np.zeros_like(x.data)
        acc[:, start:stop] = g
        return (acc,)

    return record(out, (x,), bwd)


def pad_rows(x: Tensor, total: int) -> Tensor:
    """Zero-pad an [T, d] matrix at the bottom to [total, d]."""
    _require_2d(x, "pad_rows")
    t = x.shape[0]
    if total < t:
        raise ShapeError(f"pad_rows: target {total} < current {t}")
    if total == t:
        return x
    out_data = np.zeros((total, x.shape[1]), dtype=np.float64)
    out_data[:t] = x.data
    out = Tensor(out_data)

    def bwd(g):
        return (g[:t].copy(),)

    return record(out, (x,), bwd)


def concat(parts: list[Tensor], axis: int = 0) -> Tensor:
    if not parts:
        raise ContractError("concat of an empty list")
    nd = parts[0].data.ndim
    if axis >= nd or axis < 0:
        raise ShapeError(f"concat: axis {axis} invalid for ndim {nd}")
    for p in parts:
        if p.data.ndim != nd:
            raise ShapeError("concat: mixed ranks")
        for ax in range(nd):
            if ax != axis and p.shape[ax] != parts[0].shape[ax]:
                raise ShapeError(
                    f"concat: shapes {p.shape} vs {parts[0].shape} differ off-axis"
                )
    out = Tensor(np.concatenate([p.data for p in parts], axis=axis))
    sizes = [p.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def bwd(g):
        slicer = [slice(None)] * nd
        outs = []
        for i in range(len(parts)):
            slicer[axis] = slice(offsets[i], offsets[i + 1])
            outs.append(g[tuple(slicer)].copy())
        return tuple(outs)

    return record(out, tuple(parts), bwd)


def sigmoid(x: Tensor) -> Tensor:
    d = x.data
    s = np.where(d >= 0, 1.0 / (1.0 + np.exp(-np.abs(d))),
                 np.exp(-np.abs(d)) / (1.0 + np.exp(-np.abs(d))))
    out = Tensor(s)

    def bwd(g):
        return (g * s * (1.0 - s),)

    return record(out, (x,), bwd)


def tanh(x: Tensor) -> Tensor:
    t = np.tanh(x.data)
    out = Tensor(t)

    def bwd(g):
        return (g * (1.0 - t * t),)

    return record(out, (x,), bwd)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    out = Tensor(np.where(mask, x.data, 0.0))

    def bwd(g):
        return (g * mask,)

    return record(out, (x,), bwd)


def log(x: Tensor) -> Tensor:
    if np.any(x.data <= 0):
        raise ContractError("log: non-positive input")
    out = Tensor(np.log(x.data))

    def bwd(g):
        return (g / x.data,)

    return record(out, (x,), bwd)


def clamp(x: Tensor, lo: float, hi: float) -> Tensor:
    """Clip values to [lo, hi]; gradient passes only inside the range."""
    inside = (x.data >= lo) & (x.data <= hi)
    out = Tensor(np.clip(x.data, lo, hi))

    def bwd(g):
        return (g * inside,)

    return record(out, (x,), bwd)


def softmax(x: Tensor, axis: int) -> Tensor:
    if axis >= x.data.ndim or axis < 0:
        raise ShapeError(f"softmax: axis {axis} invalid for shape {x.shape}")
    shifted = x.data - np.max(x.data, axis=axis, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=axis, keepdims=True)
    out = Tensor(s)

    def bwd(g):
        dot = (g * s).sum(axis=axis, keepdims=True)
        return (s * (g - dot),)

    return record(out, (x,), bwd)


def sum_all(x: Tensor) -> Tensor:
    out = Tensor(np.array(x.data.sum()))

    def bwd(g):
        return (np.full_like(x.data, g.reshape(-1)[0]),)

    return record(out, (x,), bwd)


def mean_rows(x: Tensor) -> Tensor:
    """Mean over time of an [T, d] matrix, as a [1, d] row."""
    _require_2d(x, "mean_rows")
    t = x.shape[0]
    if t < 1:
        raise ContractError("mean_rows of an empty matrix")
    out = Tensor(x.data.mean(axis=0, keepdims=True))

    def bwd(g):
        return (np.repeat(g / t, t, axis=0),)

    return record(out, (x,), bwd)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Row-wise layer normalization of [T, d] with per-feature gain/bias."""
    _require_2d(x, "layer_norm")
    d = x.shape[1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise ShapeError(f"layer_norm: gain/bias must be ({d},)")
    mu = x.data.mean(axis=1, keepdims=True)
    var = x.data.var(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    out = Tensor(xhat * gain.data[None, :] + bias.data[None, :])

    def bwd(g):
        dxhat = g * gain.data[None, :]
        m1 = dxhat.mean(axis=1, keepdims=True)
        m2 = (dxhat * xhat).mean(axis=1, keepdims=True)
        dx = inv * (dxhat - m1 - xhat * m2)
        dgain = (g * xhat).sum(axis=0)
        dbias = g.sum(axis=0)
        return dx, dgain, dbias

    return record(out, (x, gain, bias), bwd)


def conv1d_relu_maxpool(seq: Tensor, weight: Tensor, bias: Tensor, width: int) -> Tensor:
    """Valid 1-D convolution over time, ReLU, then max over time per filter.

    seq is [T, d_in]; weight is [width * d_in, n_filters]; returns [1, n_filters].
    The pooled output size does not depend on T.
    """
    _require_2d(seq, "conv1d")
    t, din = seq.shape
    if width < 1:
        raise ContractError("conv1d: width must be >= 1")
    if t < width:
        raise InputTooShortError(
            f"conv1d: input length {t} shorter than kernel width {width}"
        )
    if weight.shape != (width * din, bias.shape[0]) or bias.data.ndim != 1:
        raise ShapeError(
            f"conv1d: weight {weight.shape} / bias {bias.shape} do not match "
            f"width {width} x d_in {din}"
        )
    n_windows = t - width + 1
    windows = np.empty((n_windows, width * din), dtype=np.float64)
    for i in range(n_windows):
        windows[i] = seq.data[i : i + width].reshape(-1)
    z = windows @ weight.data + bias.data[None, :]
    a = np.where(z > 0, z, 0.0)
    arg = np.argmax(a, axis=0)  # first max per filter
    pooled = a[arg, np.arange(a.shape[1])]
    out = Tensor(pooled[None, :])

    def bwd(g):
        da = np.zeros_like(a)
        da[arg, np.arange(a.shape[1])] = g[0]
        dz = da * (z > 0)
        dw = windows.T @ dz
        db = dz.sum(axis=0)
        dwin = dz @ weight.data.T
        dseq = np.zeros_like(seq.data)
        for i in range(n_windows):
            dseq[i : i + width] += dwin[i].reshape(width, din)
        return dseq, dw, db

    return record(out, (seq, weight, bias), bwd)


def conv1d_maxpool(seq: Tensor, kernels: list[tuple[int, Tensor, Tensor]]) -> Tensor:
    """Multi-width convolution bank: concatenated pooled features, [1, sum n_f]."""
    if not kernels:
        raise ContractError("conv1d_maxpool: no kernels")
    feats = [conv1d_relu_maxpool(seq, w, b, width) for width, w, b in kernels]
    return concat(feats, axis=1) if len(feats) > 1 else feats[0]


def nll_from_logits(logits: Tensor, targets) -> Tensor:
    """Summed negative log-likelihood of target ids under softmax(logits).

    Fused log-sum-exp keeps tiny probabilities from underflowing. `targets`
    is one id per logits row; pass -1 to exclude a position (padding).
    """
    _require_2d(logits, "nll_from_logits")
    ids = np.asarray(targets, dtype=np.intp)
    if ids.shape != (logits.shape[0],):
        raise ShapeError(
            f"nll_from_logits: {logits.shape[0]} rows vs {ids.shape} targets"
        )
    keep = ids >= 0
    if np.any(ids[keep] >= logits.shape[1]):
        raise ShapeError("nll_from_logits: target id out of vocabulary range")
    z = logits.data
    zmax = z.max(axis=1, keepdims=True)
    lse = zmax[:, 0] + np.log(np.exp(z - zmax).sum(axis=1))
    picked = z[np.arange(z.shape[0]), np.where(keep, ids, 0)]
    loss = float(((lse - picked) * keep).sum())
    out = Tensor(np.array(loss))
    soft = np.exp(z - zmax)
    soft /= soft.sum(axis=1, keepdims=True)

    def bwd(g):
        dz = soft * keep[:, None]
        dz[np.arange(z.shape[0]), np.where(keep, ids, 0)] -= keep
        return (dz * g.reshape(-1)[0],)

    return record(out, (logits,), bwd)


# ---------------------------------------------------------------------------
# gradient checking


class GradCheckResult:
    def __init__(self, per_tensor: dict[str, float]):
        self.per_tensor = per_tensor
        self.max_rel_err = max(per_tensor.values()) if per_tensor else 0.0

    def __repr__(self) -> str:
        return f"GradCheckResult(max_rel_err={self.max_rel_err:.3e})"


def finite_diff_check(
    f,
    params: dict[str, Tensor],
    h: float = 1e-5,
    max_coords_per_tensor: int | None = None,
    rng: np.random.Generator | None = None,
) -> GradCheckResult:
    """Compare analytic gradients of f() against central finite differences.

    f builds and returns a scalar-loss Tensor from the current parameter
    values; it must be deterministic (this is verified by evaluating it
    twice). Relative error uses max(|analytic|, |numeric|, 1e-8) as the
    denominator. With max_coords_per_tensor set, a seeded random subset of
    coordinates per tensor is checked instead of the full sweep.
    """
    if h <= 0:
        raise ContractError("finite_diff_check: h must be positive")
    v1 = f().item()
    v2 = f().item()
    if v1 != v2:
        raise DeterminismError(f"f() returned {v1!r} then {v2!r} at the same point")

    for p in params.values():
        p.zero_grad()
    with Tape():
        loss = f()
        backward(loss)

    if rng is None:
        rng = np.random.default_rng(0)
    per_tensor: dict[str, float] = {}
    for name, p in params.items():
        flat = p.data.reshape(-1)
        analytic = (
            p.grad.reshape(-1) if p.grad is not None else np.zeros_like(flat)
        )
        n = flat.size
        if max_coords_per_tensor is not None and n > max_coords_per_tensor:
            coords = rng.choice(n, size=max_coords_per_tensor, replace=False)
        else:
            coords = range(n)
        worst = 0.0
        for i in coords:
            orig = flat[i]
            flat[i] = orig + h
            plus = f().item()
            flat[i] = orig - h
            minus = f().item()
            flat[i] = orig
            numeric = (plus - minus) / (2.0 * h)
            denom = max(abs(analytic[i]), abs(numeric), 1e-8)
            worst = max(worst, abs(analytic[i] - numeric) / denom)
        per_tensor[name] = worst
    return GradCheckResult(per_tensor)


def assert_all_finite(arrays: dict[str, np.ndarray], what: str) -> None:
    for name, arr in arrays.items():
        if arr is not None and not np.all(np.isfinite(arr)):
            raise FloatingPointError(f"non-finite {what} in {name}")
