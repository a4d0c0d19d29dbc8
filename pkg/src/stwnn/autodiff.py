"""Reverse-mode automatic differentiation on dense float64 arrays.

A Tensor wraps a C-contiguous numpy array plus an optional gradient buffer.
Operations build an implicit graph through parent references and per-node
backward closures; ``backward`` walks the graph once in reverse topological
order. Gradients accumulate across calls until ``zero_grad`` is used.

Everything runs in double precision. There is no broadcasting except the
bias term of ``linear``/``conv3d`` and the explicit ``scale`` operator.
"""

from __future__ import annotations

import numpy as np

from .errors import DimensionError, UsageError


class Tensor:
    """N-dimensional float64 array participating in the gradient graph."""

    __slots__ = ("values", "requires_grad", "grad", "_parents", "_backward")

    def __init__(self, values, requires_grad: bool = False):
        self.values = np.ascontiguousarray(values, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.values.shape

    @property
    def size(self):
        return self.values.size

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.values.shape}, requires_grad={self.requires_grad})"


def _result(values, parents, backward_fn):
    """Wrap an op result, recording the graph only when a parent needs grads."""
    out = Tensor(values)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def _as_triple(v, name):
    if isinstance(v, int):
        return (v, v, v)
    t = tuple(int(x) for x in v)
    if len(t) != 3:
        raise DimensionError(f"{name} must be an int or a triple, got {v!r}")
    return t


# ---------------------------------------------------------------------------
# elementwise arithmetic and structural ops
# ---------------------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise DimensionError(f"add shapes differ: {a.shape} vs {b.shape}")
    return _result(a.values + b.values, (a, b), lambda g: (g, g))


def mul_elementwise(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise DimensionError(f"mul_elementwise shapes differ: {a.shape} vs {b.shape}")
    av, bv = a.values, b.values
    return _result(av * bv, (a, b), lambda g: (g * bv, g * av))


def mul_const(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return _result(a.values * c, (a,), lambda g: (g * c,))


def scale(a: Tensor, s: Tensor) -> Tensor:
    """Multiply a tensor by a single-element tensor (explicit scalar broadcast)."""
    if s.size != 1:
        raise DimensionError(f"scale factor must have one element, got shape {s.shape}")
    av = a.values
    s_shape = s.shape
    sv = float(s.values.reshape(()))

    def backward(g):
        return g * sv, np.full(s_shape, np.sum(g * av))

    return _result(av * sv, (a, s), backward)


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(int(d) for d in shape)
    if int(np.prod(shape)) != a.size:
        raise DimensionError(f"cannot reshape {a.shape} to {shape}")
    src_shape = a.shape
    return _result(a.values.reshape(shape), (a,), lambda g: (g.reshape(src_shape),))


def flatten(a: Tensor) -> Tensor:
    return reshape(a, (a.size,))


def concat(tensors) -> Tensor:
    """Concatenate 1-D tensors into one vector."""
    tensors = list(tensors)
    if not tensors:
        raise UsageError("concat needs at least one tensor")
    for t in tensors:
        if t.values.ndim != 1:
            raise DimensionError(f"concat expects 1-D tensors, got shape {t.shape}")
    sizes = [t.size for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        return tuple(g[offsets[i]:offsets[i + 1]] for i in range(len(sizes)))

    return _result(np.concatenate([t.values for t in tensors]), tensors, backward)


def take(a: Tensor, index: int) -> Tensor:
    """Pick one element of a 1-D tensor as a single-element tensor."""
    if a.values.ndim != 1:
        raise DimensionError(f"take expects a 1-D tensor, got shape {a.shape}")
    index = int(index)
    if not 0 <= index < a.size:
        raise DimensionError(f"take index {index} out of range for size {a.size}")
    n = a.size

    def backward(g):
        ga = np.zeros(n)
        ga[index] = g[0]
        return (ga,)

    return _result(a.values[index:index + 1].copy(), (a,), backward)


# ---------------------------------------------------------------------------
# activations
# ---------------------------------------------------------------------------

def relu(a: Tensor) -> Tensor:
    # subgradient at exactly 0 is 0
    mask = a.values > 0.0
    return _result(np.where(mask, a.values, 0.0), (a,), lambda g: (g * mask,))


def tanh_act(a: Tensor) -> Tensor:
    out = np.tanh(a.values)
    return _result(out, (a,), lambda g: (g * (1.0 - out * out),))


def softmax(a: Tensor) -> Tensor:
    """Numerically stable softmax over a 1-D tensor."""
    if a.values.ndim != 1:
        raise DimensionError(f"softmax expects a 1-D tensor, got shape {a.shape}")
    shifted = a.values - np.max(a.values)
    e = np.exp(shifted)
    out = e / np.sum(e)

    def backward(g):
        return (out * (g - np.dot(g, out)),)

    return _result(out, (a,), backward)


def clamped_log(a: Tensor, floor: float = 1e-12) -> Tensor:
    """log(max(x, floor)); gradient is zero where the clamp is active."""
    av = a.values
    out = np.log(np.maximum(av, floor))

    def backward(g):
        return (np.where(av > floor, g / np.maximum(av, floor), 0.0),)

    return _result(out, (a,), backward)


# ---------------------------------------------------------------------------
# reductions and layers
# ---------------------------------------------------------------------------

def scalar_sum(a: Tensor) -> Tensor:
    shape = a.shape

    def backward(g):
        return (np.full(shape, g[0]),)

    return _result(np.array([np.sum(a.values)]), (a,), backward)


def global_avg_pool(a: Tensor) -> Tensor:
    """[C, D, H, W] -> per-channel spatial mean [C]."""
    if a.values.ndim != 4:
        raise DimensionError(f"global_avg_pool expects 4-D input, got shape {a.shape}")
    c, d, h, w = a.shape
    n = d * h * w

    def backward(g):
        return (np.broadcast_to(g.reshape(c, 1, 1, 1) / n, (c, d, h, w)).copy(),)

    return _result(a.values.reshape(c, n).mean(axis=1), (a,), backward)


def temporal_subsample(a: Tensor, stride: int) -> Tensor:
    """Keep every stride-th slice of the first spatial axis of [C, D, H, W]."""
    if a.values.ndim != 4:
        raise DimensionError(f"temporal_subsample expects 4-D input, got shape {a.shape}")
    stride = int(stride)
    if stride < 1:
        raise DimensionError(f"stride must be >= 1, got {stride}")
    shape = a.shape

    def backward(g):
        ga = np.zeros(shape)
        ga[:, ::stride] = g
        return (ga,)

    return _result(a.values[:, ::stride].copy(), (a,), backward)


def linear(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """[n] x [m, n] + [m] -> [m]."""
    if x.values.ndim != 1 or weight.values.ndim != 2 or bias.values.ndim != 1:
        raise DimensionError(
            f"linear expects vector/matrix/vector, got {x.shape}/{weight.shape}/{bias.shape}")
    m, n = weight.shape
    if x.size != n or bias.size != m:
        raise DimensionError(
            f"linear dims disagree: x {x.shape}, weight {weight.shape}, bias {bias.shape}")
    xv, wv = x.values, weight.values

    def backward(g):
        return wv.T @ g, np.outer(g, xv), g

    return _result(wv @ xv + bias.values, (x, weight, bias), backward)


def _conv3d_out_dims(in_dims, k_dims, stride, padding):
    out = []
    for n, k, s, p in zip(in_dims, k_dims, stride, padding):
        span = n + 2 * p - k
        if span < 0:
            raise DimensionError(
                f"kernel dim {k} exceeds padded input dim {n + 2 * p}")
        out.append(span // s + 1)
    return tuple(out)


def _im2col(padded, k_dims, stride, out_dims):
    """Gather sliding-window patches into a [C*kd*kh*kw, od*oh*ow] matrix."""
    c = padded.shape[0]
    kd, kh, kw = k_dims
    od, oh, ow = out_dims
    s0, s1, s2, s3 = padded.strides
    sd, sh, sw = stride
    view = np.lib.stride_tricks.as_strided(
        padded,
        shape=(c, kd, kh, kw, od, oh, ow),
        strides=(s0, s1, s2, s3, s1 * sd, s2 * sh, s3 * sw),
        writeable=False,
    )
    return view.reshape(c * kd * kh * kw, od * oh * ow)


def conv3d(x: Tensor, kernels: Tensor, bias: Tensor, stride=1, padding=0) -> Tensor:
    """Cross-correlation of [C_in, D, H, W] with [C_out, C_in, kd, kh, kw] kernels."""
    if x.values.ndim != 4:
        raise DimensionError(f"conv3d input must be 4-D, got shape {x.shape}")
    if kernels.values.ndim != 5:
        raise DimensionError(f"conv3d kernels must be 5-D, got shape {kernels.shape}")
    stride = _as_triple(stride, "stride")
    padding = _as_triple(padding, "padding")
    if min(stride) < 1:
        raise DimensionError(f"stride must be >= 1, got {stride}")
    if min(padding) < 0:
        raise DimensionError(f"padding must be >= 0, got {padding}")

    c_in, d, h, w = x.shape
    c_out, kc, kd, kh, kw = kernels.shape
    if kc != c_in:
        raise DimensionError(f"kernel expects {kc} input channels, input has {c_in}")
    if bias.values.ndim != 1 or bias.size != c_out:
        raise DimensionError(f"bias must have shape ({c_out},), got {bias.shape}")

    out_dims = _conv3d_out_dims((d, h, w), (kd, kh, kw), stride, padding)
    od, oh, ow = out_dims
    pd, ph, pw = padding

    def pad_input(values):
        if pd == ph == pw == 0:
            return values
        return np.pad(values, ((0, 0), (pd, pd), (ph, ph), (pw, pw)))

    xv = x.values
    kflat = kernels.values.reshape(c_out, c_in * kd * kh * kw)
    cols = _im2col(pad_input(xv), (kd, kh, kw), stride, out_dims)
    out = kflat @ cols
    out += bias.values[:, None]
    out = out.reshape(c_out, od, oh, ow)
    need_x, need_k, need_b = x.requires_grad, kernels.requires_grad, bias.requires_grad

    def backward(g):
        gflat = g.reshape(c_out, od * oh * ow)
        g_kernels = (gflat @ cols.T).reshape(kernels.shape) if need_k else None
        g_bias = gflat.sum(axis=1) if need_b else None
        g_x = None
        if need_x:
            g_cols = (kflat.T @ gflat).reshape(c_in, kd, kh, kw, od, oh, ow)
            g_padded = np.zeros((c_in, d + 2 * pd, h + 2 * ph, w + 2 * pw))
            sd, sh, sw = stride
            for i in range(kd):
                for j in range(kh):
                    for l in range(kw):
                        g_padded[:,
                                 i:i + sd * (od - 1) + 1:sd,
                                 j:j + sh * (oh - 1) + 1:sh,
                                 l:l + sw * (ow - 1) + 1:sw] += g_cols[:, i, j, l]
            g_x = g_padded[:, pd:pd + d, ph:ph + h, pw:pw + w] if (pd or ph or pw) \
                else g_padded
        return g_x, g_kernels, g_bias

    return _result(out, (x, kernels, bias), backward)


# ---------------------------------------------------------------------------
# backward pass and gradient checking
# ---------------------------------------------------------------------------

def backward(loss: Tensor) -> None:
    """Populate ``grad`` on every requires_grad tensor reachable from ``loss``.

    Repeated calls accumulate into existing gradients.
    """
    if loss.size != 1:
        raise UsageError(f"backward needs a scalar loss, got shape {loss.shape}")

    topo = []
    visited = set()
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

    pending = {id(loss): np.ones_like(loss.values)}
    for node in reversed(topo):
        g = pending.pop(id(node), None)
        if g is None:
            continue
        if node.requires_grad:
            node.grad = g.copy() if node.grad is None else node.grad + g
        if node._backward is None:
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in pending:
                pending[key] = pending[key] + pg
            else:
                pending[key] = np.asarray(pg, dtype=np.float64)


def grad_check(f, point: Tensor, eps: float = 1e-5) -> float:
    """Compare analytic gradients of a scalar-valued ``f`` against central differences.

    Returns max over coordinates of |analytic - numeric| / max(1, |numeric|).
    ``f`` must be a pure function of its tensor argument.
    """
    x = Tensor(point.values.copy(), requires_grad=True)
    out = f(x)
    if out.size != 1:
        raise UsageError("grad_check expects a scalar-valued function")
    backward(out)
    analytic = np.zeros_like(x.values) if x.grad is None else x.grad

    flat = point.values.reshape(-1)
    worst = 0.0
    for i in range(flat.size):
        bumped = flat.copy()
        bumped[i] += eps
        f_plus = float(f(Tensor(bumped.reshape(point.shape))).values.reshape(()))
        bumped[i] -= 2 * eps
        f_minus = float(f(Tensor(bumped.reshape(point.shape))).values.reshape(()))
        numeric = (f_plus - f_minus) / (2 * eps)
        err = abs(analytic.reshape(-1)[i] - numeric) / max(1.0, abs(numeric))
        worst = max(worst, err)
    return worst
