"""A small float64 tensor engine with reverse-mode differentiation.

Every op builds its output through :func:`_record`, which stores the parent
tensors and a closure mapping the output gradient to one gradient per parent.
:func:`backward` walks the recorded graph once in reverse topological order.

Broadcasting is deliberately limited to adding/multiplying a tensor whose
shape equals the trailing dimensions of the other operand (bias add).
"""

import contextlib
import json
import math
import threading

import numpy as np

CE_LOG_FLOOR = 1e-12
CHECKPOINT_FORMAT = "taylorskel.checkpoint"
CHECKPOINT_VERSION = 1

_state = threading.local()


class ShapeError(ValueError):
    """Operand shapes are incompatible for an op."""


def _grad_enabled():
    return getattr(_state, "grad_enabled", True)


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (thread-local)."""
    prev = _grad_enabled()
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = prev


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._backward = None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else self.data

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def __add__(self, other):
        return add(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return scale(self, -1.0)

    def __sub__(self, other):
        return add(self, scale(as_tensor(other), -1.0))

    def backward(self):
        backward(self)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _record(data, parents, backward_fn):
    out = Tensor.__new__(Tensor)
    out.data = np.asarray(data, dtype=np.float64)
    out.requires_grad, out.grad, out._parents, out._backward, out.name = False, None, (), None, None
    if _grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def backward(loss):
    """Populate ``.grad`` on every requires_grad tensor reachable from ``loss``."""
    if loss.data.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return

    order = []
    seen = set()
    stack = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))

    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        node.grad = g if node.grad is None else node.grad + g
        if node._backward is None:
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = pg if key not in grads else grads[key] + pg


def zero_grad(tensors):
    for t in tensors:
        t.grad = None


# ---------------------------------------------------------------- elementwise


def _check_trailing(op, a, b):
    if a.shape == b.shape:
        return False
    if b.ndim <= a.ndim and a.shape[a.ndim - b.ndim:] == b.shape:
        return True
    raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} are not compatible")


def _reduce_to(g, shape):
    lead = g.ndim - len(shape)
    return g.sum(axis=tuple(range(lead))) if lead else g


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    trailing = _check_trailing("add", a, b)

    def bw(g):
        return g, (_reduce_to(g, b.shape) if trailing else g)

    return _record(a.data + b.data, (a, b), bw)


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    trailing = _check_trailing("mul", a, b)

    def bw(g):
        gb = g * a.data
        return g * b.data, (_reduce_to(gb, b.shape) if trailing else gb)

    return _record(a.data * b.data, (a, b), bw)


def scale(a, c):
    c = float(c)
    return _record(a.data * c, (a,), lambda g: (g * c,))


def relu(a):
    mask = a.data > 0
    return _record(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,))


# ---------------------------------------------------------------- contractions


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: shapes {a.shape} and {b.shape} are not compatible")

    def bw(g):
        return g @ b.data.T, a.data.T @ g

    return _record(a.data @ b.data, (a, b), bw)


def bmm(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 3 or b.ndim != 3 or a.shape[0] != b.shape[0] or a.shape[2] != b.shape[1]:
        raise ShapeError(f"bmm: shapes {a.shape} and {b.shape} are not compatible")

    def bw(g):
        return g @ b.data.transpose(0, 2, 1), a.data.transpose(0, 2, 1) @ g

    return _record(a.data @ b.data, (a, b), bw)


def _parse_einsum(subscripts, n):
    if "->" not in subscripts or "." in subscripts:
        raise ValueError(f"einsum needs explicit output and no ellipsis: {subscripts!r}")
    lhs, out = subscripts.replace(" ", "").split("->")
    ins = lhs.split(",")
    if len(ins) != n:
        raise ShapeError(f"einsum {subscripts!r} expects {len(ins)} operands, got {n}")
    for s in ins + [out]:
        if len(set(s)) != len(s):
            raise ValueError(f"einsum: repeated index inside one operand in {subscripts!r}")
    return ins, out


def _sum_lone(s, arr, other, keep):
    lone = [c for c in s if c not in other and c not in keep]
    if not lone:
        return s, arr
    return "".join(c for c in s if c not in lone), arr.sum(axis=tuple(s.index(c) for c in lone))


def _pair(sa, a, sb, b, keep):
    """Contract two operands with one batched matmul; ``keep`` = indices to retain."""
    sa, a = _sum_lone(sa, a, sb, keep)
    sb, b = _sum_lone(sb, b, sa, keep)
    batch = [c for c in sa if c in sb and c in keep]
    summed = [c for c in sa if c in sb and c not in keep]
    left = [c for c in sa if c not in sb]
    right = [c for c in sb if c not in sa]
    dims = dict(zip(sa, a.shape))
    dims.update(zip(sb, b.shape))
    size = lambda cs: math.prod(dims[c] for c in cs)
    at = a.transpose([sa.index(c) for c in batch + left + summed])
    bt = b.transpose([sb.index(c) for c in batch + summed + right])
    out = np.matmul(at.reshape(size(batch), size(left), size(summed)),
                    bt.reshape(size(batch), size(summed), size(right)))
    out = out.reshape([dims[c] for c in batch + left + right])
    return "".join(batch + left + right), out


def _contract(ins, out, arrays):
    """Evaluate an explicit einsum by greedy pairwise batched matmuls."""
    ins, arrays = list(ins), list(arrays)
    while len(ins) > 1:
        best = None
        for i in range(len(ins)):
            for j in range(i + 1, len(ins)):
                rest = set(out).union(*[set(ins[k]) for k in range(len(ins)) if k not in (i, j)])
                keep = [c for c in dict.fromkeys(ins[i] + ins[j]) if c in rest]
                dims = dict(zip(ins[i], arrays[i].shape))
                dims.update(zip(ins[j], arrays[j].shape))
                cost = math.prod(dims[c] for c in keep)
                if best is None or cost < best[0]:
                    best = (cost, i, j, keep)
        _, i, j, keep = best
        s, arr = _pair(ins[i], arrays[i], ins[j], arrays[j], keep)
        ins = [ins[k] for k in range(len(ins)) if k not in (i, j)] + [s]
        arrays = [arrays[k] for k in range(len(arrays)) if k not in (i, j)] + [arr]
    return np.einsum(f"{ins[0]}->{out}", arrays[0])


def einsum(subscripts, *operands):
    """General tensor contraction; gradients are einsums of the same operands."""
    ops = [as_tensor(t) for t in operands]
    ins, out = _parse_einsum(subscripts, len(ops))
    sizes = {}
    for s, t in zip(ins, ops):
        if len(s) != t.ndim:
            raise ShapeError(f"einsum {subscripts!r}: operand {s!r} has shape {t.shape}")
        for c, d in zip(s, t.shape):
            if sizes.setdefault(c, d) != d:
                raise ShapeError(f"einsum {subscripts!r}: index {c!r} has sizes {sizes[c]} and {d}")
    data = _contract(ins, out, [t.data for t in ops])

    def bw(g):
        grads = []
        for i, (s, t) in enumerate(zip(ins, ops)):
            if not t.requires_grad:
                grads.append(None)
                continue
            others = [(ins[j], ops[j].data) for j in range(len(ops)) if j != i]
            avail = set(out).union(*[set(o) for o, _ in others]) if others else set(out)
            target = "".join(c for c in s if c in avail)
            gi = _contract([out] + [o for o, _ in others], target, [g] + [d for _, d in others])
            if target != s:
                # indices summed away inside this operand alone: broadcast back
                shape = [sizes[c] if c in target else 1 for c in s]
                gi = np.broadcast_to(gi.reshape(shape), t.shape).copy()
            grads.append(gi)
        return grads

    return _record(data, ops, bw)


# ---------------------------------------------------------------- reshaping / reductions


def reshape(a, shape):
    orig = a.shape
    return _record(a.data.reshape(shape), (a,), lambda g: (g.reshape(orig),))


def transpose(a, axes):
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return _record(a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),))


def _norm_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(sorted(ax % ndim for ax in axis))


def sum_(a, axis=None, keepdims=False):
    axes = _norm_axes(axis, a.ndim)
    shape = a.shape

    def bw(g):
        g = g.reshape([1 if i in axes else d for i, d in enumerate(shape)])
        return (np.broadcast_to(g, shape).copy(),)

    return _record(a.data.sum(axis=axes, keepdims=keepdims), (a,), bw)


def mean(a, axis=None, keepdims=False):
    """Mean over ``axis``; used as the global mean pool."""
    axes = _norm_axes(axis, a.ndim)
    count = math.prod(a.shape[i] for i in axes)
    return scale(sum_(a, axes, keepdims), 1.0 / count)


# ---------------------------------------------------------------- nn ops


def softmax(a, axis=-1):
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        return (p * (g - (g * p).sum(axis=axis, keepdims=True)),)

    return _record(p, (a,), bw)


def cross_entropy(logits, labels):
    """Mean over the batch of ``-log p[target]``, with p floored at 1e-12."""
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ShapeError(f"cross_entropy: logits {logits.shape} vs labels {labels.shape}")
    n = logits.shape[0]
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    p = np.exp(z)
    p /= p.sum(axis=1, keepdims=True)
    pt = p[np.arange(n), labels]
    floored = pt < CE_LOG_FLOOR
    loss = -np.log(np.maximum(pt, CE_LOG_FLOOR)).mean()

    def bw(g):
        d = p.copy()
        d[np.arange(n), labels] -= 1.0
        d[floored] = 0.0
        return (d * (float(g) / n),)

    return _record(np.array(loss), (logits,), bw)


def temporal_conv(x, weight, stride=1, padding=None):
    """1-D convolution along T for x of shape (N, C, T, V), weight (O, C, K).

    ``padding=None`` means same padding, (K - 1) // 2 frames on each side.
    """
    if x.ndim != 4 or weight.ndim != 3 or weight.shape[1] != x.shape[1]:
        raise ShapeError(f"temporal_conv: input {x.shape} vs weight {weight.shape}")
    n, c, t, v = x.shape
    o, _, k = weight.shape
    pad = (k - 1) // 2 if padding is None else padding
    t_out = (t + 2 * pad - k) // stride + 1
    if t_out < 1:
        raise ShapeError(f"temporal_conv: length {t} too short for kernel {k}")
    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (0, 0)))
    span = stride * (t_out - 1) + 1
    cols = np.stack([xp[:, :, j:j + span:stride, :] for j in range(k)], axis=2)
    out = np.tensordot(weight.data, cols, axes=([1, 2], [1, 2])).transpose(1, 0, 2, 3)

    def bw(g):
        gw = np.tensordot(g, cols, axes=([0, 2, 3], [0, 3, 4]))
        gcols = np.tensordot(weight.data, g, axes=([0], [1]))  # C, K, N, T', V
        gxp = np.zeros_like(xp)
        for j in range(k):
            gxp[:, :, j:j + span:stride, :] += gcols[:, j].transpose(1, 0, 2, 3)
        return gxp[:, :, pad:pad + t, :], gw

    return _record(np.ascontiguousarray(out), (x, weight), bw)


def conv_out_length(length, kernel, stride=1, padding=None):
    pad = (kernel - 1) // 2 if padding is None else padding
    return (length + 2 * pad - kernel) // stride + 1


def batch_norm(x, gamma, beta, axis=1, running=None, training=True, momentum=0.9, eps=1e-5):
    """Per-channel normalization over every axis except ``axis``.

    ``running`` is a dict with "mean" and "var" arrays; in training mode it is
    updated as ``r = momentum * r + (1 - momentum) * batch_stat``.
    """
    axis = axis % x.ndim
    c = x.shape[axis]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(f"batch_norm: {c} channels vs gamma {gamma.shape}, beta {beta.shape}")
    red = tuple(i for i in range(x.ndim) if i != axis)
    bshape = [1] * x.ndim
    bshape[axis] = c
    gam = gamma.data.reshape(bshape)

    if training:
        m = x.data.size // c
        mu = x.data.mean(axis=red, keepdims=True)
        var = x.data.var(axis=red, keepdims=True)
        if running is not None:
            unbiased = var.reshape(c) * (m / max(m - 1, 1))
            running["mean"] = momentum * running["mean"] + (1 - momentum) * mu.reshape(c)
            running["var"] = momentum * running["var"] + (1 - momentum) * unbiased
    else:
        if running is None:
            raise ValueError("batch_norm in eval mode needs running statistics")
        mu = running["mean"].reshape(bshape)
        var = running["var"].reshape(bshape)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    out = gam * xhat + beta.data.reshape(bshape)

    def bw(g):
        gg = (g * xhat).sum(axis=red)
        gb = g.sum(axis=red)
        dxhat = g * gam
        if training:
            mcount = x.data.size // c
            gx = inv / mcount * (
                mcount * dxhat
                - dxhat.sum(axis=red, keepdims=True)
                - xhat * (dxhat * xhat).sum(axis=red, keepdims=True)
            )
        else:
            gx = dxhat * inv
        return gx, gg, gb

    return _record(out, (x, gamma, beta), bw)


def dropout_mask(shape, p, rng):
    """Inverted-dropout mask: kept entries hold 1/(1-p), dropped ones 0."""
    if p <= 0:
        return np.ones(shape)
    keep = rng.random(shape) >= p
    return keep / (1.0 - p)


def dropout(x, p, rng=None, mask=None):
    """Apply a dropout mask; either pass ``mask`` or a seeded ``rng``."""
    if mask is None:
        if p <= 0:
            return x
        if rng is None:
            raise ValueError("dropout needs an explicit mask or a seeded generator")
        mask = dropout_mask(x.shape, p, rng)
    mask = np.asarray(mask, dtype=np.float64)
    if mask.shape != x.shape:
        raise ShapeError(f"dropout: mask {mask.shape} vs input {x.shape}")
    return _record(x.data * mask, (x,), lambda g: (g * mask,))


# ---------------------------------------------------------------- verification


def check_gradients(f, params, eps=1e-5, max_per_param=None, seed=0):
    """Max relative error between backward grads and central differences.

    ``f`` takes no arguments and returns a scalar Tensor computed from
    ``params``; it must be deterministic. Relative error per element is
    ``|a - b| / max(|a|, |b|, 1e-8)``. With ``max_per_param`` only that many
    randomly chosen coordinates of each tensor are perturbed.
    """
    rng = np.random.default_rng(seed)
    params = list(params)
    zero_grad(params)
    backward(f())
    analytic = [p.grad.copy() if p.grad is not None else np.zeros_like(p.data) for p in params]
    zero_grad(params)

    worst = 0.0
    with no_grad():
        for p, a in zip(params, analytic):
            flat = p.data.reshape(-1)
            a = a.reshape(-1)
            coords = range(flat.size)
            if max_per_param is not None and flat.size > max_per_param:
                coords = rng.choice(flat.size, max_per_param, replace=False)
            for i in coords:
                orig = flat[i]
                flat[i] = orig + eps
                fp = float(f().data)
                flat[i] = orig - eps
                fm = float(f().data)
                flat[i] = orig
                num = (fp - fm) / (2 * eps)
                err = abs(num - a[i]) / max(abs(num), abs(a[i]), 1e-8)
                worst = max(worst, err)
    return worst


# ---------------------------------------------------------------- checkpoints


def save_checkpoint(path, params, buffers=None, meta=None):
    """Write named arrays as JSON with a versioned header.

    Layout::

        {"format": "taylorskel.checkpoint", "version": 1, "meta": {...},
         "params": {name: {"shape": [...], "values": [...]}},
         "buffers": {name: {"shape": [...], "values": [...]}}}
    """

    def enc(arrs):
        out = {}
        for name, arr in arrs.items():
            arr = arr.data if isinstance(arr, Tensor) else np.asarray(arr, dtype=np.float64)
            out[name] = {"shape": list(arr.shape), "values": arr.reshape(-1).tolist()}
        return out

    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "meta": meta or {},
        "params": enc(params),
        "buffers": enc(buffers or {}),
    }
    with open(path, "w") as fh:
        json.dump(doc, fh)


def load_checkpoint(path):
    """Return ``(params, buffers, meta)`` with params and buffers as float64 arrays."""
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path}: not a {CHECKPOINT_FORMAT} file")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {doc.get('version')}")

    def dec(d):
        return {k: np.array(v["values"], dtype=np.float64).reshape(v["shape"]) for k, v in d.items()}

    return dec(doc["params"]), dec(doc.get("buffers", {})), doc.get("meta", {})
