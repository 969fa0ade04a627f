"""A small reverse-mode autodiff tape over float64 numpy arrays.

Only the operations the synthesizer needs are provided. Every op checks its
output for NaN/Inf. Gradients accumulate into :class:`Parameter` objects until
the optimizer consumes them, so several losses can be summed before a step.
"""
from __future__ import annotations

import json
import struct
import zlib

import numpy as np
import scipy.sparse as sp

from .errors import CorruptCheckpoint, NonFiniteValue, ShapeMismatch

DTYPE = np.float64


class Tensor:
    __slots__ = ("data", "grad", "parents", "backward_fn", "requires_grad")

    def __init__(self, data, parents=(), backward_fn=None, requires_grad=None):
        self.data = data
        self.grad = None
        self.parents = parents
        self.backward_fn = backward_fn
        if requires_grad is None:
            requires_grad = any(p.requires_grad for p in parents)
        self.requires_grad = requires_grad

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor{self.data.shape}"

    def item(self):
        return float(self.data)


class Parameter(Tensor):
    __slots__ = ("name",)

    def __init__(self, name, data):
        super().__init__(np.asarray(data, dtype=DTYPE), requires_grad=True)
        self.name = name
        self.grad = np.zeros_like(self.data)

    def __repr__(self):
        return f"Parameter({self.name}, {self.data.shape})"

    def zero_grad(self):
        self.grad[...] = 0.0


def constant(x):
    return Tensor(np.asarray(x, dtype=DTYPE), requires_grad=False)


def _out(data, parents, fn, op):
    if not np.all(np.isfinite(data)):
        raise NonFiniteValue(f"{op} produced a non-finite value")
    parents = tuple(parents)
    if any(p.requires_grad for p in parents):
        return Tensor(data, parents, fn, True)
    return Tensor(data, (), None, False)


def _acc(t, g):
    if not t.requires_grad:
        return
    if isinstance(t, Parameter):
        t.grad += g
    elif t.grad is None:
        t.grad = g
    else:
        t.grad = t.grad + g


def backward(loss: Tensor):
    """Accumulate d loss / d parameter into every reachable Parameter."""
    if loss.data.size != 1:
        raise ShapeMismatch("backward needs a scalar loss")
    order, seen = [], set()
    stack = [(loss, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen or not node.requires_grad:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if id(p) not in seen:
                stack.append((p, False))
    loss.grad = np.ones_like(loss.data)
    for node in reversed(order):
        if node.backward_fn is not None and node.grad is not None:
            node.backward_fn(node.grad)
            node.grad = None   # free intermediates
    loss.grad = None


# -- elementwise and dense ops ------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    """a + b; ``b`` may be a row vector broadcast over the rows of ``a``."""
    if a.shape != b.shape and not (b.data.ndim == 1 and a.shape[-1:] == b.shape):
        raise ShapeMismatch(f"add {a.shape} + {b.shape}")

    def fn(g):
        _acc(a, g)
        _acc(b, g if b.shape == g.shape else g.sum(axis=0))
    return _out(a.data + b.data, (a, b), fn, "add")


def add_many(ts) -> Tensor:
    ts = list(ts)
    if len(ts) == 1:
        return ts[0]
    data = ts[0].data.copy()
    for t in ts[1:]:
        if t.shape != data.shape:
            raise ShapeMismatch("add_many shapes differ")
        data += t.data

    def fn(g):
        for t in ts:
            _acc(t, g)
    return _out(data, ts, fn, "add_many")


def scale(a: Tensor, c: float) -> Tensor:
    return _out(a.data * c, (a,), lambda g: _acc(a, g * c), "scale")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape[-1] != b.shape[0]:
        raise ShapeMismatch(f"matmul {a.shape} @ {b.shape}")

    def fn(g):
        _acc(a, g @ b.data.T)
        _acc(b, a.data.T @ g)
    return _out(a.data @ b.data, (a, b), fn, "matmul")


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    if x.shape[-1] != w.shape[0] or (b is not None and b.shape != (w.shape[1],)):
        raise ShapeMismatch(f"linear {x.shape} @ {w.shape}")
    y = x.data @ w.data
    if b is not None:
        y += b.data

    def fn(g):
        _acc(x, g @ w.data.T)
        _acc(w, x.data.T @ g)
        if b is not None:
            _acc(b, g.sum(axis=0))
    return _out(y, (x, w) + ((b,) if b is not None else ()), fn, "linear")


def leaky_rectifier(x: Tensor, slope: float = 0.01) -> Tensor:
    if not 0 <= slope <= 1:
        raise ValueError("slope must lie in [0, 1]")
    y = np.maximum(x.data, slope * x.data)

    def fn(g):
        _acc(x, np.where(x.data > 0, g, slope * g))
    return _out(y, (x,), fn, "leaky_rectifier")


def sum_all(x: Tensor) -> Tensor:
    return _out(np.array(x.data.sum()), (x,),
                lambda g: _acc(x, np.broadcast_to(g, x.shape).copy()), "sum")


def take_rows(x: Tensor, idx) -> Tensor:
    idx = np.asarray(idx, dtype=np.intp)

    def fn(g):
        full = np.zeros_like(x.data)
        np.add.at(full, idx, g)
        _acc(x, full)
    return _out(x.data[idx], (x,), fn, "take_rows")


def gather_sum(matrix, tables) -> Tensor:
    """``matrix @ vstack(tables)``: each output row sums the table rows it selects.

    ``matrix`` is a sparse (rows x total table rows) incidence; a 1-D table
    counts as a single row.
    """
    blocks = [t.data.reshape(1, -1) if t.data.ndim == 1 else t.data for t in tables]
    stacked = np.vstack(blocks)
    if matrix.shape[1] != stacked.shape[0]:
        raise ShapeMismatch(f"lookup {matrix.shape} into {stacked.shape[0]} table rows")
    sizes = [b.shape[0] for b in blocks]

    def fn(g):
        full = np.asarray(matrix.T @ g)
        start = 0
        for t, k in zip(tables, sizes):
            _acc(t, full[start:start + k].reshape(t.shape))
            start += k
    return _out(np.asarray(matrix @ stacked), tables, fn, "gather_sum")


# -- normalisation and regularisation -------------------------------------------

class BatchNormState:
    """Running statistics of one batch-norm site."""

    __slots__ = ("mean", "var", "momentum", "eps")

    def __init__(self, width, momentum=0.9, eps=1e-5):
        self.mean = np.zeros(width, dtype=DTYPE)
        self.var = np.ones(width, dtype=DTYPE)
        self.momentum = momentum
        self.eps = eps


def batch_norm(x: Tensor, gamma: Tensor, beta: Tensor, state: BatchNormState,
               train: bool) -> Tensor:
    if x.shape[-1] != gamma.shape[0]:
        raise ShapeMismatch(f"batch_norm {x.shape} vs {gamma.shape}")
    if train and x.shape[0] > 1:
        mu = x.data.mean(axis=0)
        var = x.data.var(axis=0)
        m = state.momentum
        state.mean = m * state.mean + (1 - m) * mu
        state.var = m * state.var + (1 - m) * var
        batch_stats = True
    else:
        mu, var = state.mean, state.var
        batch_stats = False
    inv = 1.0 / np.sqrt(var + state.eps)
    xhat = (x.data - mu) * inv
    y = xhat * gamma.data + beta.data

    def fn(g):
        _acc(gamma, (g * xhat).sum(axis=0))
        _acc(beta, g.sum(axis=0))
        if not x.requires_grad:
            return
        gx = g * gamma.data
        if batch_stats:
            gx = inv * (gx - gx.mean(axis=0) - xhat * (gx * xhat).mean(axis=0))
        else:
            gx = gx * inv
        _acc(x, gx)
    return _out(y, (x, gamma, beta), fn, "batch_norm")


def dropout(x: Tensor, rate: float, train: bool, rng) -> Tensor:
    if not train or rate <= 0.0:
        return x
    # 16-bit uniform draws are plenty for a keep/drop decision and much cheaper
    bits = np.frombuffer(rng.bytes(2 * x.data.size), dtype="<u2").reshape(x.shape)
    mask = (bits >= int(round(rate * 65536))) * (1.0 / (1.0 - rate))
    return _out(x.data * mask, (x,), lambda g: _acc(x, g * mask), "dropout")


# -- output layer -------------------------------------------------------------

def softmax_array(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax(x: Tensor) -> Tensor:
    p = softmax_array(x.data)

    def fn(g):
        _acc(x, p * (g - (g * p).sum(axis=-1, keepdims=True)))
    return _out(p, (x,), fn, "softmax")


def log_softmax_nll(logits: Tensor, targets, weights=None) -> Tensor:
    """Mean negative log-likelihood of integer ``targets`` under softmax(logits).

    ``weights`` optionally rescales each row's contribution (defaults to 1/m).
    """
    targets = np.asarray(targets, dtype=np.intp)
    m = logits.shape[0]
    if targets.shape != (m,):
        raise ShapeMismatch(f"{m} logit rows, {targets.shape} targets")
    w = np.full(m, 1.0 / m) if weights is None else np.asarray(weights, dtype=DTYPE)
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1))
    logp = z[np.arange(m), targets] - lse
    loss = np.array(-(w * logp).sum())

    def fn(g):
        p = np.exp(z - lse[:, None])
        p[np.arange(m), targets] -= 1.0
        _acc(logits, p * (w * float(g))[:, None])
    return _out(loss, (logits,), fn, "log_softmax_nll")


# -- graph attention --------------------------------------------------------------

class EdgeIndex:
    """Directed edges ``src -> dst`` grouped by destination for attention."""

    __slots__ = ("n_nodes", "src", "dst", "to_dst", "to_src", "starts", "seg_dst")

    def __init__(self, n_nodes, src, dst):
        src = np.asarray(src, dtype=np.intp)
        dst = np.asarray(dst, dtype=np.intp)
        order = np.lexsort((src, dst))
        self.n_nodes = n_nodes
        self.src = src[order]
        self.dst = dst[order]
        e = len(self.src)
        ones = np.ones(e, dtype=DTYPE)
        cols = np.arange(e)
        self.to_dst = sp.csr_matrix((ones, (self.dst, cols)), shape=(n_nodes, e))
        self.to_src = sp.csr_matrix((ones, (self.src, cols)), shape=(n_nodes, e))
        if e:
            change = np.flatnonzero(np.diff(self.dst)) + 1
            self.starts = np.concatenate(([0], change))
        else:
            self.starts = np.zeros(0, dtype=np.intp)
        self.seg_dst = self.dst[self.starts] if e else self.starts

    def __len__(self):
        return len(self.src)


def gat_aggregate(h: Tensor, w: Tensor, a_src: Tensor, a_dst: Tensor,
                  edges: EdgeIndex, slope: float = 0.2) -> Tensor:
    """Single-head graph attention: out_i = sum_j alpha_ij (h W)_j over j -> i.

    Logits are leaky(a_dst . z_i + a_src . z_j), normalised over each node's
    incoming edges. Nodes without incoming edges receive zeros.
    """
    if h.shape[1] != w.shape[0]:
        raise ShapeMismatch(f"gat {h.shape} @ {w.shape}")
    z = h.data @ w.data
    n, d = z.shape
    if len(edges) == 0:
        return _out(np.zeros((n, w.shape[1])), (h, w, a_src, a_dst), lambda g: None, "gat")
    s_dst, s_src = z @ a_dst.data, z @ a_src.data
    src, dst = edges.src, edges.dst
    e = s_dst[dst] + s_src[src]
    pos = e > 0
    lg = np.where(pos, e, slope * e)
    seg_max = np.maximum.reduceat(lg, edges.starts)
    full_max = np.zeros(n)
    full_max[edges.seg_dst] = seg_max
    ex = np.exp(lg - full_max[dst])
    den = edges.to_dst @ ex
    alpha = ex / den[dst]
    zs = z[src]
    out = edges.to_dst @ (alpha[:, None] * zs)

    def fn(g):
        gd = g[dst]
        d_alpha = np.einsum("ij,ij->i", gd, zs)
        dz = edges.to_src @ (alpha[:, None] * gd)
        seg = edges.to_dst @ (alpha * d_alpha)
        d_l = alpha * (d_alpha - seg[dst])
        d_e = np.where(pos, d_l, slope * d_l)
        ds_dst = edges.to_dst @ d_e
        ds_src = edges.to_src @ d_e
        dz += np.outer(ds_dst, a_dst.data) + np.outer(ds_src, a_src.data)
        _acc(a_dst, z.T @ ds_dst)
        _acc(a_src, z.T @ ds_src)
        _acc(w, h.data.T @ dz)
        _acc(h, dz @ w.data.T)

    return _out(out, (h, w, a_src, a_dst), fn, "gat")


# -- optimiser ----------------------------------------------------------------

class Adam:
    def __init__(self, params, lr=1e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m = {p.name: np.zeros_like(p.data) for p in self.params}
        self.v = {p.name: np.zeros_like(p.data) for p in self.params}

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()

    def step(self):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1, c2 = 1 - b1 ** self.t, 1 - b2 ** self.t
        for p in self.params:
            g = p.grad
            m, v = self.m[p.name], self.v[p.name]
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
            p.zero_grad()


# -- checkpoint container -------------------------------------------------------
#
#   magic  b"NSCK"
#   u32    format version
#   u32    header length H, then H bytes of UTF-8 JSON (sorted keys)
#   u32    array count K, then K records:
#            u16 name length L, L bytes UTF-8 name
#            u8  ndim, ndim x u32 dims
#            prod(dims) x f64 payload
#   u32    CRC-32 of every preceding byte
# All integers and floats are little-endian.

MAGIC = b"NSCK"


def write_container(path, version: int, header: dict, arrays):
    parts = [MAGIC, struct.pack("<I", version)]
    hb = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    parts += [struct.pack("<I", len(hb)), hb, struct.pack("<I", len(arrays))]
    for name, arr in arrays:
        arr = np.asarray(arr, dtype="<f8")
        nb = name.encode()
        parts.append(struct.pack("<H", len(nb)) + nb)
        parts.append(struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.tobytes())
    body = b"".join(parts)
    with open(path, "wb") as fh:
        fh.write(body + struct.pack("<I", zlib.crc32(body)))


def read_container(path):
    """Returns ``(version, header, [(name, array), ...])``."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 16 or blob[:4] != MAGIC:
        raise CorruptCheckpoint("not a checkpoint file")
    body, (crc,) = blob[:-4], struct.unpack("<I", blob[-4:])
    if zlib.crc32(body) != crc:
        raise CorruptCheckpoint("checksum mismatch")
    try:
        pos = 4
        (version,) = struct.unpack_from("<I", body, pos)
        (hlen,) = struct.unpack_from("<I", body, pos + 4)
        pos += 8
        header = json.loads(body[pos:pos + hlen].decode())
        pos += hlen
        (count,) = struct.unpack_from("<I", body, pos)
        pos += 4
        arrays = []
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", body, pos)
            name = body[pos + 2:pos + 2 + nlen].decode()
            pos += 2 + nlen
            (ndim,) = struct.unpack_from("<B", body, pos)
            shape = struct.unpack_from(f"<{ndim}I", body, pos + 1)
            pos += 1 + 4 * ndim
            size = int(np.prod(shape)) if ndim else 1
            arr = np.frombuffer(body, dtype="<f8", count=size, offset=pos).reshape(shape)
            pos += 8 * size
            arrays.append((name, arr.astype(DTYPE)))
    except (struct.error, ValueError, UnicodeDecodeError) as exc:
        raise CorruptCheckpoint(f"truncated or malformed checkpoint: {exc}") from None
    if pos != len(body):
        raise CorruptCheckpoint("trailing bytes in checkpoint")
    return version, header, arrays
