"""Dense-tensor numeric core with tape-based reverse-mode autodiff.

Feature maps are rank-4 arrays in (batch, channel, height, width) order,
channels-first everywhere; matrices are rank-2 (batch, features). Every op
records a backward closure onto a tape unless taping is disabled (inference).

Conventions fixed here:
  * convolution is cross-correlation (no kernel flip),
  * "same" padding is symmetric zero padding (odd kernel required; for
    stride 2 the extra pixel goes to the bottom/right),
  * ReLU subgradient at exactly 0 is 0,
  * single precision is the working default; float64 exists for gradient
    checking and is selected by the dtype of the arrays passed in.
"""

from __future__ import annotations

import numpy as np

from .errors import ContractViolation, DimensionError

_TAPE_ENABLED = True


class no_tape:
    """Context manager disabling graph recording (inference mode)."""

    def __enter__(self):
        global _TAPE_ENABLED
        self._prev = _TAPE_ENABLED
        _TAPE_ENABLED = False

    def __exit__(self, *exc):
        global _TAPE_ENABLED
        _TAPE_ENABLED = self._prev
        return False


class Tensor:
    """An ndarray plus an optional gradient buffer and autodiff bookkeeping.

    `data` is never mutated by forward ops; `grad` is accumulated in place
    during `backward`. Deterministic by contract: identical inputs produce
    bit-identical outputs within one precision mode.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, _parents=(), _backward=None):
        self.data = np.asarray(data)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = tuple(_parents)
        self._backward = _backward

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def precision(self):
        return "double" if self.data.dtype == np.float64 else "single"

    def detach(self):
        """A view of the same data cut off from the graph."""
        return Tensor(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, _as_tensor(other, self.dtype))

    def __radd__(self, other):
        return add(_as_tensor(other, self.dtype), self)

    def __sub__(self, other):
        return add(self, mul(_as_tensor(other, self.dtype), _as_tensor(-1.0, self.dtype)))

    def __mul__(self, other):
        return mul(self, _as_tensor(other, self.dtype))

    def __rmul__(self, other):
        return mul(_as_tensor(other, self.dtype), self)

    def __neg__(self):
        return mul(self, _as_tensor(-1.0, self.dtype))


def parameter(data):
    """A trainable leaf tensor."""
    return Tensor(np.asarray(data), requires_grad=True)


def constant(data, dtype=None):
    """A non-trainable leaf tensor."""
    arr = np.asarray(data, dtype=dtype) if dtype is not None else np.asarray(data)
    return Tensor(arr)


def _as_tensor(x, dtype):
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def _accumulate(t: Tensor, g: np.ndarray):
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _record(data, parents, backward_builder):
    """Wrap `data` in a Tensor; attach the backward closure if taping."""
    out = Tensor(data)
    if _TAPE_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_builder(out)
    return out


# other modules build fused ops (losses) on the same tape
record_op = _record


def backward(loss: Tensor):
    """Reverse-mode sweep from a scalar loss; populates .grad buffers.

    The graph is consumed: node links are cleared after the sweep, so a
    second backward requires a fresh forward pass.
    """
    if loss.data.size != 1:
        raise ContractViolation(
            f"backward requires a scalar loss, got shape {loss.data.shape}"
        )
    topo: list[Tensor] = []
    visited: set[int] = set()
    stack = [(loss, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in visited:
                stack.append((p, False))

    loss.grad = np.ones_like(loss.data)
    for node in reversed(topo):
        if node._backward is not None:
            node._backward()
    for node in topo:
        node._parents = ()
        node._backward = None


def zero_grads(tensors):
    for t in tensors:
        t.grad = None


# ---------------------------------------------------------------------------
# elementwise / shape ops
# ---------------------------------------------------------------------------


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Sum `g` down to `shape` (inverse of numpy broadcasting)."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def add(a: Tensor, b: Tensor) -> Tensor:
    data = a.data + b.data

    def make_bw(out):
        def bw():
            _accumulate(a, _unbroadcast(out.grad, a.data.shape))
            _accumulate(b, _unbroadcast(out.grad, b.data.shape))

        return bw

    return _record(data, (a, b), make_bw)


def mul(a: Tensor, b: Tensor) -> Tensor:
    data = a.data * b.data

    def make_bw(out):
        def bw():
            _accumulate(a, _unbroadcast(out.grad * b.data, a.data.shape))
            _accumulate(b, _unbroadcast(out.grad * a.data, b.data.shape))

        return bw

    return _record(data, (a, b), make_bw)


def relu(x: Tensor) -> Tensor:
    """Elementwise max(0, x); subgradient at 0 is 0."""
    data = np.maximum(x.data, 0)

    def make_bw(out):
        mask = x.data > 0

        def bw():
            _accumulate(x, out.grad * mask)

        return bw

    return _record(data, (x,), make_bw)


def reshape(x: Tensor, shape) -> Tensor:
    data = x.data.reshape(shape)

    def make_bw(out):
        def bw():
            _accumulate(x, out.grad.reshape(x.data.shape))

        return bw

    return _record(data, (x,), make_bw)


def transpose2d(x: Tensor) -> Tensor:
    if x.data.ndim != 2:
        raise DimensionError(f"transpose2d expects a matrix, got shape {x.data.shape}")
    data = x.data.T.copy()

    def make_bw(out):
        def bw():
            _accumulate(x, out.grad.T)

        return bw

    return _record(data, (x,), make_bw)


def sum_all(x: Tensor) -> Tensor:
    data = x.data.sum()

    def make_bw(out):
        def bw():
            _accumulate(x, np.broadcast_to(out.grad, x.data.shape).copy())

        return bw

    return _record(data, (x,), make_bw)


def mean_all(x: Tensor) -> Tensor:
    n = x.data.size
    data = x.data.mean()

    def make_bw(out):
        def bw():
            _accumulate(x, np.broadcast_to(out.grad / n, x.data.shape).copy())

        return bw

    return _record(data, (x,), make_bw)


def concat_channels(parts) -> Tensor:
    """Concatenate along axis 1 (the channel axis)."""
    parts = list(parts)
    data = np.concatenate([p.data for p in parts], axis=1)

    def make_bw(out):
        def bw():
            ofs = 0
            for p in parts:
                n = p.data.shape[1]
                sl = (slice(None), slice(ofs, ofs + n))
                _accumulate(p, out.grad[sl])
                ofs += n

        return bw

    return _record(data, tuple(parts), make_bw)


def gather_channels(x: Tensor, indices) -> Tensor:
    """Select channels by index (repeats allowed); scatter-adds on backward."""
    idx = np.asarray(indices, dtype=np.intp)
    data = x.data[:, idx]

    def make_bw(out):
        def bw():
            if not x.requires_grad:
                return
            g = np.zeros_like(x.data)
            np.add.at(g, (slice(None), idx), out.grad)
            _accumulate(x, g)

        return bw

    return _record(data, (x,), make_bw)


# ---------------------------------------------------------------------------
# linear algebra
# ---------------------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise DimensionError(
            f"matmul expects matrices, got shapes {a.data.shape} and {b.data.shape}"
        )
    if a.data.shape[1] != b.data.shape[0]:
        raise DimensionError(
            f"matmul inner dimensions disagree: {a.data.shape} @ {b.data.shape}"
        )
    data = a.data @ b.data

    def make_bw(out):
        def bw():
            _accumulate(a, out.grad @ b.data.T)
            _accumulate(b, a.data.T @ out.grad)

        return bw

    return _record(data, (a, b), make_bw)


def fully_connected(x: Tensor, weights: Tensor, bias: Tensor | None = None) -> Tensor:
    """Affine map x @ weights + bias for (N, d) inputs."""
    if x.data.ndim != 2 or weights.data.ndim != 2:
        raise DimensionError(
            f"fully_connected expects matrices, got input {x.data.shape} "
            f"and weights {weights.data.shape}"
        )
    if x.data.shape[1] != weights.data.shape[0]:
        raise DimensionError(
            f"fully_connected: input features {x.data.shape} do not match "
            f"weights {weights.data.shape}"
        )
    out = matmul(x, weights)
    if bias is not None:
        if bias.data.shape != (weights.data.shape[1],):
            raise DimensionError(
                f"fully_connected: bias shape {bias.data.shape} does not match "
                f"output width {weights.data.shape[1]}"
            )
        out = add(out, bias)
    return out


def row_normalize(x: Tensor, eps: float = 1e-12) -> Tensor:
    """L2-normalize each row of a matrix (cosine-similarity preprocessing)."""
    if x.data.ndim != 2:
        raise DimensionError(f"row_normalize expects a matrix, got {x.data.shape}")
    norms = np.sqrt((x.data * x.data).sum(axis=1, keepdims=True) + eps)
    data = x.data / norms

    def make_bw(out):
        def bw():
            u = data
            dy = out.grad
            _accumulate(x, (dy - u * (dy * u).sum(axis=1, keepdims=True)) / norms)

        return bw

    return _record(data, (x,), make_bw)


# ---------------------------------------------------------------------------
# convolutions
# ---------------------------------------------------------------------------


def _out_size(size: int, k: int, stride: int, padding: str) -> int:
    if padding == "valid":
        if size < k:
            raise DimensionError(f"valid conv: spatial size {size} smaller than kernel {k}")
        return (size - k) // stride + 1
    return -(-size // stride)  # ceil


def _pad_split(size: int, k: int, stride: int, out: int):
    total = max((out - 1) * stride + k - size, 0)
    before = total // 2
    return before, total - before


def _check_conv_args(stride: int, padding: str, k: int):
    if stride not in (1, 2):
        raise ContractViolation(f"stride must be 1 or 2, got {stride}")
    if padding not in ("valid", "same"):
        raise ContractViolation(f"padding must be 'valid' or 'same', got {padding!r}")
    if padding == "same" and k % 2 == 0:
        raise DimensionError(f"'same' padding requires an odd kernel, got k={k}")


def conv2d(x: Tensor, kernel: Tensor, stride: int = 1, padding: str = "same") -> Tensor:
    """2-D cross-correlation of (N,C,H,W) input with an (O,C,k,k) kernel."""
    if x.data.ndim != 4 or kernel.data.ndim != 4:
        raise DimensionError(
            f"conv2d expects rank-4 input and kernel, got {x.data.shape} "
            f"and {kernel.data.shape}"
        )
    N, C, H, W = x.data.shape
    O, Cw, kh, kw = kernel.data.shape
    if C != Cw:
        raise DimensionError(
            f"conv2d: input channels {C} (input shape {x.data.shape}) do not match "
            f"kernel in_channels {Cw} (kernel shape {kernel.data.shape})"
        )
    _check_conv_args(stride, padding, kh)

    Ho = _out_size(H, kh, stride, padding)
    Wo = _out_size(W, kw, stride, padding)
    if padding == "same":
        pt, pb = _pad_split(H, kh, stride, Ho)
        pl, pr = _pad_split(W, kw, stride, Wo)
        xp = np.pad(x.data, ((0, 0), (0, 0), (pt, pb), (pl, pr)))
    else:
        pt = pl = 0
        xp = x.data

    w = kernel.data
    acc = np.zeros((N, Ho, Wo, O), dtype=x.data.dtype)
    for p in range(kh):
        for q in range(kw):
            xs = xp[:, :, p : p + stride * Ho : stride, q : q + stride * Wo : stride]
            acc += np.tensordot(xs, w[:, :, p, q], axes=([1], [1]))
    data = np.ascontiguousarray(acc.transpose(0, 3, 1, 2))

    def make_bw(out):
        def bw():
            dy = out.grad
            if kernel.requires_grad:
                dw = np.zeros_like(w)
                for p in range(kh):
                    for q in range(kw):
                        xs = xp[:, :, p : p + stride * Ho : stride, q : q + stride * Wo : stride]
                        dw[:, :, p, q] = np.tensordot(dy, xs, axes=([0, 2, 3], [0, 2, 3]))
                _accumulate(kernel, dw)
            if x.requires_grad:
                dxp = np.zeros_like(xp)
                for p in range(kh):
                    for q in range(kw):
                        t = np.tensordot(dy, w[:, :, p, q], axes=([1], [0]))
                        dxp[:, :, p : p + stride * Ho : stride, q : q + stride * Wo : stride] += (
                            t.transpose(0, 3, 1, 2)
                        )
                _accumulate(x, dxp[:, :, pt : pt + H, pl : pl + W])

        return bw

    return _record(data, (x, kernel), make_bw)


def depthwise_conv2d(x: Tensor, filters: Tensor, stride: int = 1, padding: str = "same") -> Tensor:
    """Per-channel k x k filtering: output channel i depends only on input channel i."""
    if x.data.ndim != 4 or filters.data.ndim != 3:
        raise DimensionError(
            f"depthwise_conv2d expects rank-4 input and (C,k,k) filters, got "
            f"{x.data.shape} and {filters.data.shape}"
        )
    N, C, H, W = x.data.shape
    Cf, kh, kw = filters.data.shape
    if C != Cf:
        raise DimensionError(
            f"depthwise_conv2d: filter count {Cf} (shape {filters.data.shape}) does not "
            f"match input channels {C} (shape {x.data.shape})"
        )
    _check_conv_args(stride, padding, kh)

    Ho = _out_size(H, kh, stride, padding)
    Wo = _out_size(W, kw, stride, padding)
    if padding == "same":
        pt, pb = _pad_split(H, kh, stride, Ho)
        pl, pr = _pad_split(W, kw, stride, Wo)
        xp = np.pad(x.data, ((0, 0), (0, 0), (pt, pb), (pl, pr)))
    else:
        pt = pl = 0
        xp = x.data

    w = filters.data
    data = np.zeros((N, C, Ho, Wo), dtype=x.data.dtype)
    for p in range(kh):
        for q in range(kw):
            xs = xp[:, :, p : p + stride * Ho : stride, q : q + stride * Wo : stride]
            data += xs * w[:, p, q][None, :, None, None]

    def make_bw(out):
        def bw():
            dy = out.grad
            if filters.requires_grad:
                dw = np.zeros_like(w)
                for p in range(kh):
                    for q in range(kw):
                        xs = xp[:, :, p : p + stride * Ho : stride, q : q + stride * Wo : stride]
                        dw[:, p, q] = (dy * xs).sum(axis=(0, 2, 3))
                _accumulate(filters, dw)
            if x.requires_grad:
                dxp = np.zeros_like(xp)
                for p in range(kh):
                    for q in range(kw):
                        dxp[:, :, p : p + stride * Ho : stride, q : q + stride * Wo : stride] += (
                            dy * w[:, p, q][None, :, None, None]
                        )
                _accumulate(x, dxp[:, :, pt : pt + H, pl : pl + W])

        return bw

    return _record(data, (x, filters), make_bw)


# ---------------------------------------------------------------------------
# normalization, softmax, pooling
# ---------------------------------------------------------------------------


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Per-sample normalization over all non-batch axes, then per-channel affine.

    gain/bias are 1-D with length equal to axis-1 (channels for rank-4 maps,
    features for matrices). Population variance; eps keeps constant inputs
    finite.
    """
    if eps <= 0:
        raise ContractViolation(f"layer_norm eps must be positive, got {eps}")
    nd = x.data.ndim
    C = x.data.shape[1]
    if gain.data.shape != (C,) or bias.data.shape != (C,):
        raise DimensionError(
            f"layer_norm: gain/bias shapes {gain.data.shape}/{bias.data.shape} "
            f"do not match channel count {C} of input {x.data.shape}"
        )
    axes = tuple(range(1, nd))
    pshape = (1, C) + (1,) * (nd - 2)
    g = gain.data.reshape(pshape)
    b = bias.data.reshape(pshape)

    mu = x.data.mean(axis=axes, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=axes, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    data = xhat * g + b

    def make_bw(out):
        def bw():
            dy = out.grad
            red = tuple(i for i in range(nd) if i != 1)
            if gain.requires_grad:
                _accumulate(gain, (dy * xhat).sum(axis=red))
            if bias.requires_grad:
                _accumulate(bias, dy.sum(axis=red))
            if x.requires_grad:
                m = x.data[0].size
                dxhat = dy * g
                t1 = dxhat.sum(axis=axes, keepdims=True)
                t2 = (dxhat * xhat).sum(axis=axes, keepdims=True)
                _accumulate(x, (inv / m) * (m * dxhat - t1 - xhat * t2))

        return bw

    return _record(data, (x, gain, bias), make_bw)


def softmax(x: Tensor) -> Tensor:
    """Softmax over the last axis, computed with max subtraction."""
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    data = e / e.sum(axis=-1, keepdims=True)

    def make_bw(out):
        def bw():
            dy = out.grad
            _accumulate(x, (dy - (dy * data).sum(axis=-1, keepdims=True)) * data)

        return bw

    return _record(data, (x,), make_bw)


def softmax_flat(x: Tensor) -> Tensor:
    """Softmax of a flat length-m vector; outputs are positive and sum to 1."""
    if x.data.ndim != 1:
        raise DimensionError(f"softmax_flat expects a vector, got shape {x.data.shape}")
    return softmax(x)


def global_avg_pool(x: Tensor) -> Tensor:
    """Mean over all spatial positions; (N,C,H,W) -> (N,C,1,1)."""
    if x.data.ndim != 4:
        raise DimensionError(f"global_avg_pool expects rank-4 input, got {x.data.shape}")
    H, W = x.data.shape[2], x.data.shape[3]
    data = x.data.mean(axis=(2, 3), keepdims=True)

    def make_bw(out):
        def bw():
            _accumulate(x, np.broadcast_to(out.grad / (H * W), x.data.shape).copy())

        return bw

    return _record(data, (x,), make_bw)


def position_weighted_sum(x: Tensor, weights: Tensor) -> Tensor:
    """Per-sample weighted sum over spatial positions.

    x is (N,C,H,W), weights is (N, H*W); returns the (N, C) context matrix
    out[n, c] = sum_p weights[n, p] * x[n, c, p].
    """
    N, C, H, W = x.data.shape
    P = H * W
    if weights.data.shape != (N, P):
        raise DimensionError(
            f"position_weighted_sum: weights shape {weights.data.shape} does not "
            f"match input positions ({N}, {P})"
        )
    xf = x.data.reshape(N, C, P)
    data = (xf @ weights.data[:, :, None])[:, :, 0]

    def make_bw(out):
        def bw():
            dy = out.grad  # (N, C)
            if x.requires_grad:
                _accumulate(x, (dy[:, :, None] * weights.data[:, None, :]).reshape(N, C, H, W))
            if weights.requires_grad:
                _accumulate(weights, (xf.transpose(0, 2, 1) @ dy[:, :, None])[:, :, 0])

        return bw

    return _record(data, (x, weights), make_bw)
