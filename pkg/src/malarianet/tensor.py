"""Dense tensors, layer kernels, and reverse-mode automatic differentiation.

Conventions used throughout:

- Image tensors are NCHW: (batch, channels, height, width), row-major.
- Convolution is cross-correlation (no kernel flip).
- "same" padding pads by ``max((ceil(H/s)-1)*s + k - H, 0)`` total, with the
  extra row/column on the bottom/right; output extent is ``ceil(H/s)``.
- "valid" padding pads nothing; output extent is ``floor((H-k)/s) + 1``.
- All ops are pure functions of their inputs; when executed inside an active
  :class:`GradTape` context they additionally record a node whose vector-
  Jacobian product is replayed by :func:`backward`.

Single precision is the training default; gradient checking should build
graphs in ``"f64"`` because float32 finite differences are too noisy.
"""

from __future__ import annotations

import threading
from typing import Callable, Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .exceptions import (
    ArgumentError,
    DegenerateBatchError,
    GradTapeError,
    NumericError,
    ShapeError,
)

DTYPES = {"f32": np.float32, "f64": np.float64}
_DTYPE_TAGS = {np.dtype(np.float32): "f32", np.dtype(np.float64): "f64"}

BN_EPS = 1e-5
BN_MOMENTUM = 0.9  # running <- 0.9 * running + 0.1 * batch

_debug_finite = False


def set_debug_checks(enabled: bool) -> None:
    """Enable scanning of every op output for NaN/Inf (test mode)."""
    global _debug_finite
    _debug_finite = bool(enabled)


def _check_output(name: str, arr: np.ndarray) -> None:
    if _debug_finite and not np.all(np.isfinite(arr)):
        raise NumericError(f"{name} produced non-finite values")


class Tensor:
    """Dense N-dimensional array of real scalars.

    Immutable from the caller's perspective: ops never modify their inputs
    and callers must not write through ``.data``. Element (n, c, h, w) of an
    NCHW tensor lives at flat index ``((n*C + c)*H + h)*W + w``.
    """

    __slots__ = ("data",)

    def __init__(self, data, dtype: Optional[str] = None):
        if dtype is not None and dtype not in DTYPES:
            raise ArgumentError(f"unknown dtype tag {dtype!r}")
        arr = np.asarray(data, dtype=DTYPES[dtype] if dtype else None)
        if arr.dtype not in _DTYPE_TAGS:
            arr = arr.astype(np.float32)
        self.data = arr

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self) -> str:
        return _DTYPE_TAGS[self.data.dtype]

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> np.ndarray:
        """Read-only view of the underlying buffer."""
        view = self.data.view()
        view.flags.writeable = False
        return view

    def astype(self, dtype: str) -> "Tensor":
        return Tensor(self.data.astype(DTYPES[dtype]))

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype})"


class ParamTensor:
    """A named, optionally trainable tensor with a gradient slot.

    ``grad`` always has the same shape as ``value``; names must be unique
    within a model because the checkpoint format is keyed by them.
    """

    __slots__ = ("value", "grad", "trainable", "name")

    def __init__(self, value: Tensor, name: str, trainable: bool = True):
        self.value = value
        self.grad = Tensor(np.zeros_like(value.data))
        self.trainable = trainable
        self.name = name

    def zero_grad(self) -> None:
        self.grad = Tensor(np.zeros_like(self.value.data))

    def assign(self, arr: np.ndarray) -> None:
        """Replace the value in place (optimizer steps, checkpoint load)."""
        if arr.shape != self.value.data.shape:
            raise ShapeError(
                f"cannot assign shape {arr.shape} to parameter {self.name!r} "
                f"of shape {self.value.data.shape}"
            )
        self.value = Tensor(arr.astype(self.value.data.dtype))
        if self.grad.data.shape != arr.shape:
            self.zero_grad()

    def __repr__(self):
        return f"ParamTensor({self.name!r}, shape={self.value.shape}, trainable={self.trainable})"


class _Node:
    __slots__ = ("op", "inputs", "output", "vjp")

    def __init__(self, op, inputs, output, vjp):
        self.op = op
        self.inputs = inputs
        self.output = output
        self.vjp = vjp


_tls = threading.local()


def _tape_stack():
    stack = getattr(_tls, "stack", None)
    if stack is None:
        stack = []
        _tls.stack = stack
    return stack


def _active_tape():
    stack = _tape_stack()
    return stack[-1] if stack else None


def _record(op: str, inputs: Sequence[Tensor], output: Tensor, vjp: Callable) -> None:
    tape = _active_tape()
    if tape is not None:
        tape._nodes.append(_Node(op, tuple(inputs), output, vjp))


class GradTape:
    """Ordered record of differentiable ops executed under this context.

    One logical thread of execution per tape: the tape and the ParamTensors
    it watches form a single-writer group. :func:`backward` replays nodes in
    exact reverse execution order and populates ``param.grad`` for every
    watched parameter (zeros where the loss does not reach it).
    """

    def __init__(self):
        self._nodes: list[_Node] = []
        self._watched: list[ParamTensor] = []
        self._used = False

    def watch(self, param: ParamTensor) -> None:
        self._watched.append(param)

    def watch_all(self, params) -> None:
        for p in params:
            self.watch(p)

    def reset(self) -> None:
        self._nodes.clear()
        self._watched.clear()
        self._used = False

    def grad_of(self, t: Tensor) -> Optional[np.ndarray]:
        """Gradient captured for ``t`` by the last backward, if any."""
        return getattr(self, "_grad_map", {}).get(id(t))

    def __enter__(self):
        _tape_stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        popped = _tape_stack().pop()
        assert popped is self
        return False


def backward(tape: GradTape, loss: Tensor) -> None:
    """Reverse-replay the tape from a scalar loss, filling watched grads."""
    if loss.shape != ():
        raise GradTapeError(f"loss must be scalar, got shape {loss.shape}")
    if tape._used:
        raise GradTapeError("backward called twice on the same tape without reset")
    tape._used = True

    grads: dict[int, np.ndarray] = {id(loss): np.ones((), dtype=loss.data.dtype)}
    for node in reversed(tape._nodes):
        g = grads.pop(id(node.output), None)
        if g is None:
            continue  # not on a path from the loss
        in_grads = node.vjp(g)
        for t, ig in zip(node.inputs, in_grads):
            if ig is None:
                continue
            key = id(t)
            if key in grads:
                grads[key] = grads[key] + ig
            else:
                grads[key] = ig
    # interior grads were popped as they were consumed; what remains belongs
    # to leaves (watched param values and graph inputs).
    tape._grad_map = grads
    for p in tape._watched:
        arr = grads.get(id(p.value))
        if arr is None:
            p.zero_grad()
        else:
            p.grad = Tensor(np.asarray(arr, dtype=p.value.data.dtype).reshape(p.value.shape))


# ---------------------------------------------------------------------------
# padding / shape helpers
# ---------------------------------------------------------------------------


def same_pad_amount(extent: int, k: int, stride: int) -> tuple[int, int]:
    """(before, after) zero-pad for "same" output ceil(extent/stride)."""
    out = -(-extent // stride)
    total = max((out - 1) * stride + k - extent, 0)
    before = total // 2
    return before, total - before


def conv_output_extent(extent: int, k: int, stride: int, padding: str) -> int:
    if padding == "same":
        return -(-extent // stride)
    if padding == "valid":
        if extent < k:
            raise ShapeError(f"valid padding needs extent >= kernel, got {extent} < {k}")
        return (extent - k) // stride + 1
    raise ArgumentError(f"padding must be 'same' or 'valid', got {padding!r}")


def _require_same_dtype(op: str, *tensors: Tensor) -> None:
    tags = {t.dtype for t in tensors}
    if len(tags) > 1:
        raise ArgumentError(f"{op}: mixed dtypes {sorted(tags)}")


# ---------------------------------------------------------------------------
# elementwise / reduction ops
# ---------------------------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum of two same-shape tensors (the residual join)."""
    _require_same_dtype("add", a, b)
    if a.shape != b.shape:
        raise ShapeError(f"add: shapes {a.shape} and {b.shape} differ")
    out = Tensor(a.data + b.data)
    _check_output("add", out.data)
    _record("add", (a, b), out, lambda g: (g, g))
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise (Hadamard) product of two same-shape tensors."""
    _require_same_dtype("mul", a, b)
    if a.shape != b.shape:
        raise ShapeError(f"mul: shapes {a.shape} and {b.shape} differ")
    out = Tensor(a.data * b.data)
    _check_output("mul", out.data)
    ad, bd = a.data, b.data
    _record("mul", (a, b), out, lambda g: (g * bd, g * ad))
    return out


def tsum(x: Tensor) -> Tensor:
    """Sum of all elements, as a scalar tensor."""
    out = Tensor(np.asarray(x.data.sum(), dtype=x.data.dtype))
    shape, dt = x.shape, x.data.dtype
    _record("sum", (x,), out, lambda g: (np.broadcast_to(np.asarray(g, dtype=dt), shape),))
    return out


def relu(x: Tensor) -> Tensor:
    """max(0, x); subgradient 0 at exactly 0."""
    out = Tensor(np.maximum(x.data, 0))
    _check_output("relu", out.data)
    xd = x.data
    _record("relu", (x,), out, lambda g: (g * (xd > 0),))
    return out


# ---------------------------------------------------------------------------
# convolution
# ---------------------------------------------------------------------------


def _im2col(xp: np.ndarray, kh: int, kw: int, stride: int):
    """(N*Ho*Wo, C*kh*kw) patch matrix from a padded NCHW array."""
    windows = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    n, c, ho, wo = windows.shape[:4]
    cols = windows.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * kh * kw)
    return cols, ho, wo


def conv2d(
    x: Tensor,
    weight: Tensor,
    bias: Optional[Tensor] = None,
    stride: int = 1,
    padding: str = "same",
) -> Tensor:
    """2-D cross-correlation over NCHW input.

    x: (N, Cin, H, W); weight: (Cout, Cin, kh, kw); bias: (Cout,) or None.
    Output spatial extents follow :func:`conv_output_extent`. Gradients are
    defined w.r.t. input, weight, and bias.
    """
    if not isinstance(stride, int) or stride < 1:
        raise ArgumentError(f"stride must be a positive int, got {stride!r}")
    if x.ndim != 4 or weight.ndim != 4:
        raise ShapeError(
            f"conv2d expects 4-d input and weight, got {x.shape} and {weight.shape}"
        )
    n, cin, h, w = x.shape
    cout, wcin, kh, kw = weight.shape
    if cin != wcin:
        raise ShapeError(
            f"conv2d channel mismatch: input {x.shape} has Cin={cin}, "
            f"weight {weight.shape} expects Cin={wcin}"
        )
    if bias is not None and bias.shape != (cout,):
        raise ShapeError(f"conv2d bias shape {bias.shape} != ({cout},)")
    _require_same_dtype("conv2d", *((x, weight, bias) if bias is not None else (x, weight)))

    ho = conv_output_extent(h, kh, stride, padding)
    wo = conv_output_extent(w, kw, stride, padding)
    if padding == "same":
        pt, pb = same_pad_amount(h, kh, stride)
        pl, pr = same_pad_amount(w, kw, stride)
    else:
        pt = pb = pl = pr = 0

    xd = x.data
    xpad = np.pad(xd, ((0, 0), (0, 0), (pt, pb), (pl, pr)))
    cols, ho_, wo_ = _im2col(xpad, kh, kw, stride)
    assert (ho_, wo_) == (ho, wo)
    wmat = weight.data.reshape(cout, cin * kh * kw)
    out_mat = cols @ wmat.T
    if bias is not None:
        out_mat += bias.data
    out = Tensor(
        np.ascontiguousarray(out_mat.reshape(n, ho, wo, cout).transpose(0, 3, 1, 2))
    )
    _check_output("conv2d", out.data)

    def vjp(g):
        gmat = g.transpose(0, 2, 3, 1).reshape(n * ho * wo, cout)
        # weight grad: recompute patches rather than keeping cols alive
        xp2 = np.pad(xd, ((0, 0), (0, 0), (pt, pb), (pl, pr)))
        cols2, _, _ = _im2col(xp2, kh, kw, stride)
        dw = (gmat.T @ cols2).reshape(weight.shape)
        db = g.sum(axis=(0, 2, 3)) if bias is not None else None
        # input grad: scatter W^T g back through each kernel offset
        dcols = (gmat @ wmat).reshape(n, ho, wo, cin, kh, kw).transpose(0, 3, 4, 5, 1, 2)
        dxp = np.zeros_like(xp2)
        for i in range(kh):
            for j in range(kw):
                dxp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += dcols[
                    :, :, i, j
                ]
        dx = dxp[:, :, pt : pt + h, pl : pl + w]
        if bias is not None:
            return dx, dw, db
        return dx, dw

    inputs = (x, weight, bias) if bias is not None else (x, weight)
    _record("conv2d", inputs, out, vjp)
    return out


# ---------------------------------------------------------------------------
# batch normalization
# ---------------------------------------------------------------------------


def batchnorm2d(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: Tensor,
    running_var: Tensor,
    mode: str,
) -> Tensor:
    """Per-channel normalization over (N, H, W).

    Train mode normalizes with batch statistics and folds them into the
    running buffers in place (``running <- 0.9*running + 0.1*batch``); infer
    mode reads the running buffers only and mutates nothing.
    """
    if mode not in ("train", "infer"):
        raise ArgumentError(f"mode must be 'train' or 'infer', got {mode!r}")
    if x.ndim != 4:
        raise ShapeError(f"batchnorm2d expects NCHW input, got shape {x.shape}")
    n, c, h, w = x.shape
    for name, t in (("gamma", gamma), ("beta", beta),
                    ("running_mean", running_mean), ("running_var", running_var)):
        if t.shape != (c,):
            raise ShapeError(f"batchnorm2d {name} shape {t.shape} != ({c},)")
    _require_same_dtype("batchnorm2d", x, gamma, beta)

    xd = x.data
    gshape = (1, c, 1, 1)
    if mode == "train":
        m = n * h * w
        if m < 2:
            raise DegenerateBatchError(
                f"train-mode batch statistics need N*H*W >= 2 per channel, got {m}"
            )
        mean = xd.mean(axis=(0, 2, 3))
        var = xd.var(axis=(0, 2, 3))
        running_mean.data[...] = BN_MOMENTUM * running_mean.data + (1 - BN_MOMENTUM) * mean
        running_var.data[...] = BN_MOMENTUM * running_var.data + (1 - BN_MOMENTUM) * var
    else:
        mean = running_mean.data.copy()
        var = running_var.data.copy()

    inv_std = 1.0 / np.sqrt(var + np.asarray(BN_EPS, dtype=xd.dtype))
    xhat = (xd - mean.reshape(gshape)) * inv_std.reshape(gshape)
    out = Tensor(gamma.data.reshape(gshape) * xhat + beta.data.reshape(gshape))
    _check_output("batchnorm2d", out.data)

    gd = gamma.data

    if mode == "train":
        m = n * h * w

        def vjp(g):
            dbeta = g.sum(axis=(0, 2, 3))
            dgamma = (g * xhat).sum(axis=(0, 2, 3))
            dxhat = g * gd.reshape(gshape)
            s1 = dxhat.sum(axis=(0, 2, 3), keepdims=True)
            s2 = (dxhat * xhat).sum(axis=(0, 2, 3), keepdims=True)
            dx = (inv_std.reshape(gshape) / m) * (m * dxhat - s1 - xhat * s2)
            return dx, dgamma, dbeta, None, None

    else:

        def vjp(g):
            dbeta = g.sum(axis=(0, 2, 3))
            dgamma = (g * xhat).sum(axis=(0, 2, 3))
            dx = g * (gd * inv_std).reshape(gshape)
            return dx, dgamma, dbeta, None, None

    _record("batchnorm2d", (x, gamma, beta, running_mean, running_var), out, vjp)
    return out


# ---------------------------------------------------------------------------
# pooling
# ---------------------------------------------------------------------------


def maxpool2d(x: Tensor, k: int = 3, stride: int = 2) -> Tensor:
    """Windowed maxima with "same" padding (pad value -inf).

    Gradient routes to the argmax element of each window, first occurrence
    in row-major window order on ties.
    """
    if k < 1 or stride < 1:
        raise ArgumentError(f"maxpool2d needs k >= 1 and stride >= 1, got k={k} s={stride}")
    if x.ndim != 4:
        raise ShapeError(f"maxpool2d expects NCHW input, got shape {x.shape}")
    n, c, h, w = x.shape
    pt, pb = same_pad_amount(h, k, stride)
    pl, pr = same_pad_amount(w, k, stride)
    xpad = np.pad(x.data, ((0, 0), (0, 0), (pt, pb), (pl, pr)), constant_values=-np.inf)
    if xpad.shape[2] < k or xpad.shape[3] < k:
        raise ShapeError(f"pool window {k} larger than padded input {xpad.shape[2:]}")
    windows = sliding_window_view(xpad, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]
    ho, wo = windows.shape[2], windows.shape[3]
    flat = windows.reshape(n, c, ho, wo, k * k)
    idx = flat.argmax(axis=-1)
    out = Tensor(np.take_along_axis(flat, idx[..., None], axis=-1)[..., 0])
    _check_output("maxpool2d", out.data)

    def vjp(g):
        dxp = np.zeros_like(xpad)
        for oi in range(k):
            for oj in range(k):
                mask = idx == (oi * k + oj)
                dxp[:, :, oi : oi + stride * ho : stride, oj : oj + stride * wo : stride] += (
                    g * mask
                )
        return (dxp[:, :, pt : pt + h, pl : pl + w],)

    _record("maxpool2d", (x,), out, vjp)
    return out


def global_avg_pool(x: Tensor) -> Tensor:
    """Mean over the two spatial axes: (N, C, H, W) -> (N, C)."""
    if x.ndim != 4:
        raise ShapeError(f"global_avg_pool expects NCHW input, got shape {x.shape}")
    n, c, h, w = x.shape
    out = Tensor(x.data.mean(axis=(2, 3)))
    _check_output("global_avg_pool", out.data)

    def vjp(g):
        return (np.broadcast_to(g[:, :, None, None] / (h * w), (n, c, h, w)),)

    _record("global_avg_pool", (x,), out, vjp)
    return out


# ---------------------------------------------------------------------------
# dense / dropout / softmax / loss
# ---------------------------------------------------------------------------


def dense(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """Affine map: (N, D) @ (D, U) + (U,)."""
    if x.ndim != 2 or weight.ndim != 2:
        raise ShapeError(f"dense expects 2-d input and weight, got {x.shape} and {weight.shape}")
    n, d = x.shape
    dw, u = weight.shape
    if d != dw:
        raise ShapeError(f"dense inner dims differ: input {x.shape} vs weight {weight.shape}")
    if bias.shape != (u,):
        raise ShapeError(f"dense bias shape {bias.shape} != ({u},)")
    _require_same_dtype("dense", x, weight, bias)
    out = Tensor(x.data @ weight.data + bias.data)
    _check_output("dense", out.data)
    xd, wd = x.data, weight.data

    def vjp(g):
        return g @ wd.T, xd.T @ g, g.sum(axis=0)

    _record("dense", (x, weight, bias), out, vjp)
    return out


def dropout(x: Tensor, rate: float, mode: str, rng: Optional[np.random.Generator] = None) -> Tensor:
    """Inverted dropout: zero with probability ``rate``, scale survivors.

    Infer mode (and rate 0) is the identity and consumes no randomness.
    """
    if not (0 <= rate < 1):
        raise ArgumentError(f"dropout rate must be in [0, 1), got {rate}")
    if mode not in ("train", "infer"):
        raise ArgumentError(f"mode must be 'train' or 'infer', got {mode!r}")
    if mode == "infer" or rate == 0:
        return x
    if rng is None:
        raise ArgumentError("train-mode dropout with rate > 0 needs a seeded generator")
    keep = (rng.random(x.shape) >= rate).astype(x.data.dtype)
    scale = np.asarray(1.0 / (1.0 - rate), dtype=x.data.dtype)
    out = Tensor(x.data * keep * scale)
    _check_output("dropout", out.data)
    _record("dropout", (x,), out, lambda g: (g * keep * scale,))
    return out


def softmax(logits: Tensor) -> Tensor:
    """Row-wise softmax with max-subtraction for stability; (N, K) -> (N, K)."""
    if logits.ndim != 2 or logits.shape[1] < 2:
        raise ShapeError(f"softmax expects (N, K>=2) logits, got shape {logits.shape}")
    z = logits.data
    shifted = z - z.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=1, keepdims=True)
    out = Tensor(y)
    _check_output("softmax", out.data)

    def vjp(g):
        dot = (g * y).sum(axis=1, keepdims=True)
        return ((g - dot) * y,)

    _record("softmax", (logits,), out, vjp)
    return out


def sparse_ce_loss(logits: Tensor, labels) -> Tensor:
    """Mean negative log-likelihood of integer labels under softmax(logits).

    Fused log-sum-exp formulation; never takes log of a computed softmax.
    """
    if logits.ndim != 2:
        raise ShapeError(f"sparse_ce_loss expects (N, K) logits, got shape {logits.shape}")
    lab = np.asarray(labels)
    n, k = logits.shape
    if lab.shape != (n,):
        raise ShapeError(f"labels shape {lab.shape} != ({n},)")
    if not np.issubdtype(lab.dtype, np.integer):
        raise ArgumentError(f"labels must be integers, got dtype {lab.dtype}")
    if lab.size and (lab.min() < 0 or lab.max() >= k):
        raise ArgumentError(f"labels must lie in [0, {k}), got range [{lab.min()}, {lab.max()}]")
    z = logits.data
    zmax = z.max(axis=1, keepdims=True)
    lse = zmax[:, 0] + np.log(np.exp(z - zmax).sum(axis=1))
    picked = z[np.arange(n), lab]
    out = Tensor(np.asarray((lse - picked).mean(), dtype=z.dtype))
    _check_output("sparse_ce_loss", out.data)

    def vjp(g):
        e = np.exp(z - zmax)
        soft = e / e.sum(axis=1, keepdims=True)
        soft[np.arange(n), lab] -= 1
        return (soft * (g / n),)

    _record("sparse_ce_loss", (logits,), out, vjp)
    return out
