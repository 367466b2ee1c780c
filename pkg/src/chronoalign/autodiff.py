"""Minimal reverse-mode autodiff on numpy arrays.

Just enough surface for the aligner: dense layers, LSTM cells, softmax
attention, pairwise Euclidean distances, masked cross-entropy, dropout,
Adam, and the initializers the training recipe calls for. Graphs are
built per forward pass and freed afterwards.
"""

from __future__ import annotations

import json
import struct

import numpy as np


class Tensor:
    """A node in the computation graph: value, gradient, backward closure."""

    __slots__ = ("data", "grad", "parents", "_backward", "requires_grad")

    def __init__(self, data, parents=(), requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.parents = tuple(parents)
        self._backward = None
        self.requires_grad = requires_grad or any(p.requires_grad for p in parents)

    @property
    def shape(self):
        return self.data.shape

    def zero_grad(self):
        self.grad = None

    def accumulate(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def backward(self, order: str = "dfs", rng: np.random.Generator | None = None):
        """Backpropagate from this scalar; each node is visited exactly once.

        order="kahn" uses a (optionally shuffled) Kahn topological order
        instead of the DFS postorder; gradients must be identical.
        """
        if self.data.size != 1:
            raise ValueError("backward() requires a scalar root")
        nodes = _toposort(self, order, rng)
        self.grad = np.ones_like(self.data)
        for node in nodes:
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)


def _toposort(root: Tensor, order: str, rng) -> list:
    if order == "dfs":
        out, visited, stack = [], set(), [(root, False)]
        while stack:
            node, done = stack.pop()
            if done:
                out.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node.parents:
                if p.requires_grad and id(p) not in visited:
                    stack.append((p, False))
        return list(reversed(out))
    if order == "kahn":
        # reverse topological order via out-degree counting from the root
        children = {}
        indeg = {}
        seen = {id(root): root}
        frontier = [root]
        while frontier:
            node = frontier.pop()
            for p in node.parents:
                if not p.requires_grad:
                    continue
                children.setdefault(id(p), []).append(node)
                indeg[id(node)] = indeg.get(id(node), 0)
                indeg[id(p)] = indeg.get(id(p), 0) + 1
                if id(p) not in seen:
                    seen[id(p)] = p
                    frontier.append(p)
        # indeg here counts child->parent edges consumed before a parent is ready
        consumed = {k: 0 for k in seen}
        nchild = {k: 0 for k in seen}
        for pid, kids in children.items():
            nchild[pid] = len(kids)
        ready = [n for k, n in seen.items() if nchild[k] == 0]
        out = []
        while ready:
            if rng is not None and len(ready) > 1:
                i = int(rng.integers(len(ready)))
                ready[i], ready[-1] = ready[-1], ready[i]
            node = ready.pop()
            out.append(node)
            for p in node.parents:
                if not p.requires_grad or id(p) not in seen:
                    continue
                consumed[id(p)] += 1
                if consumed[id(p)] == nchild[id(p)]:
                    ready.append(p)
        return out
    raise ValueError(f"unknown traversal order {order!r}")


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Sum a gradient down to `shape` after numpy broadcasting."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _node(data, parents, backward):
    t = Tensor(data, parents)
    if t.requires_grad:
        t._backward = backward(t)
    return t


def constant(x) -> Tensor:
    return Tensor(x)


def parameter(x) -> Tensor:
    """Leaf tensor owning a contiguous buffer (updated in place by Adam)."""
    return Tensor(np.array(x, dtype=np.float64, order="C"), requires_grad=True)


def add(a: Tensor, b: Tensor) -> Tensor:
    def bw(t):
        def run(g):
            if a.requires_grad:
                a.accumulate(_unbroadcast(g, a.shape))
            if b.requires_grad:
                b.accumulate(_unbroadcast(g, b.shape))
        return run
    return _node(a.data + b.data, (a, b), bw)


def sub(a: Tensor, b: Tensor) -> Tensor:
    return add(a, scale(b, -1.0))


def mul(a: Tensor, b: Tensor) -> Tensor:
    def bw(t):
        def run(g):
            if a.requires_grad:
                a.accumulate(_unbroadcast(g * b.data, a.shape))
            if b.requires_grad:
                b.accumulate(_unbroadcast(g * a.data, b.shape))
        return run
    return _node(a.data * b.data, (a, b), bw)


def scale(a: Tensor, s: float) -> Tensor:
    def bw(t):
        def run(g):
            a.accumulate(g * s)
        return run
    return _node(a.data * s, (a,), bw)


def div(a: Tensor, b: Tensor) -> Tensor:
    def bw(t):
        def run(g):
            if a.requires_grad:
                a.accumulate(_unbroadcast(g / b.data, a.shape))
            if b.requires_grad:
                b.accumulate(_unbroadcast(-g * a.data / (b.data**2), b.shape))
        return run
    return _node(a.data / b.data, (a, b), bw)


def sqrt_(a: Tensor) -> Tensor:
    out = np.sqrt(a.data)

    def bw(t):
        def run(g):
            a.accumulate(g * 0.5 / t.data)
        return run
    return _node(out, (a,), bw)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    def bw(t):
        def run(g):
            if a.requires_grad:
                a.accumulate(_unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape))
            if b.requires_grad:
                b.accumulate(_unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape))
        return run
    return _node(a.data @ b.data, (a, b), bw)


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)

    def bw(t):
        def run(g):
            a.accumulate(g * (1.0 - t.data**2))
        return run
    return _node(out, (a,), bw)


def sigmoid(a: Tensor) -> Tensor:
    out = 1.0 / (1.0 + np.exp(-a.data))

    def bw(t):
        def run(g):
            a.accumulate(g * t.data * (1.0 - t.data))
        return run
    return _node(out, (a,), bw)


def relu(a: Tensor) -> Tensor:
    def bw(t):
        def run(g):
            a.accumulate(g * (a.data > 0))
        return run
    return _node(np.maximum(a.data, 0.0), (a,), bw)


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def bw(t):
        def run(g):
            dot = (g * t.data).sum(axis=axis, keepdims=True)
            a.accumulate(t.data * (g - dot))
        return run
    return _node(out, (a,), bw)


def concat(tensors, axis: int = -1) -> Tensor:
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def bw(t):
        def run(g):
            for part, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
                if part.requires_grad:
                    idx = [slice(None)] * g.ndim
                    idx[axis if axis >= 0 else g.ndim + axis] = slice(lo, hi)
                    part.accumulate(g[tuple(idx)])
        return run
    return _node(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), bw)


def slice_(a: Tensor, key) -> Tensor:
    def bw(t):
        def run(g):
            full = np.zeros_like(a.data)
            full[key] = g
            a.accumulate(full)
        return run
    return _node(a.data[key], (a,), bw)


def reshape(a: Tensor, shape) -> Tensor:
    def bw(t):
        def run(g):
            a.accumulate(g.reshape(a.shape))
        return run
    return _node(a.data.reshape(shape), (a,), bw)


def sum_(a: Tensor, axis=None) -> Tensor:
    def bw(t):
        def run(g):
            if axis is None:
                a.accumulate(np.broadcast_to(g, a.shape).copy())
            else:
                a.accumulate(np.broadcast_to(np.expand_dims(g, axis), a.shape).copy())
        return run
    return _node(a.data.sum(axis=axis), (a,), bw)


def mean_(a: Tensor, axis=None) -> Tensor:
    n = a.data.size if axis is None else a.data.shape[axis]
    return scale(sum_(a, axis=axis), 1.0 / n)


def euclidean_distance(u: Tensor, v: Tensor) -> Tensor:
    """||u - v||_2 as a scalar; gradient is 0 at coincident points."""
    diff = u.data - v.data
    d = float(np.sqrt((diff**2).sum()))

    def bw(t):
        def run(g):
            direction = diff / d if d > 0 else np.zeros_like(diff)
            if u.requires_grad:
                u.accumulate(g * direction)
            if v.requires_grad:
                v.accumulate(-g * direction)
        return run
    return _node(d, (u, v), bw)


def pairwise_distance(a: Tensor, v: Tensor, eps: float = 1e-12) -> Tensor:
    """Euclidean distances between row sets: (..., n, e) x (..., m, e) -> (..., n, m)."""
    diff = a.data[..., :, None, :] - v.data[..., None, :, :]
    d = np.sqrt(np.maximum((diff**2).sum(axis=-1), eps))

    def bw(t):
        def run(g):
            w = (g / t.data)[..., None] * diff
            if a.requires_grad:
                a.accumulate(w.sum(axis=-2))
            if v.requires_grad:
                v.accumulate(-w.sum(axis=-3))
        return run
    return _node(d, (a, v), bw)


def cross_entropy(logits: Tensor, target) -> Tensor:
    """Stabilized -log softmax(logits)[target] for a single logit vector."""
    target = int(target)
    m = logits.data.shape[-1]
    if logits.data.ndim != 1:
        raise ValueError("cross_entropy expects a 1-D logit vector")
    if not 0 <= target < m:
        raise ValueError(f"target {target} out of range [0, {m})")
    z = logits.data - logits.data.max()
    lse = np.log(np.exp(z).sum())
    loss = lse - z[target]

    def bw(t):
        def run(g):
            p = np.exp(z - lse)
            p[target] -= 1.0
            logits.accumulate(g * p)
        return run
    return _node(loss, (logits,), bw)


def cross_entropy_sum(logits: Tensor, targets, mask) -> Tensor:
    """Sum of per-row cross-entropies over masked rows; logits (B, m)."""
    targets = np.asarray(targets, dtype=np.int64)
    mask = np.asarray(mask, dtype=bool)
    z = logits.data - logits.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1))
    safe_t = np.where(mask, np.clip(targets, 0, z.shape[-1] - 1), 0)
    rows = np.arange(z.shape[0])
    per_row = (lse - z[rows, safe_t]) * mask
    loss = per_row.sum()

    def bw(t):
        def run(g):
            p = np.exp(z - lse[:, None])
            p[rows, safe_t] -= 1.0
            p *= mask[:, None]
            logits.accumulate(g * p)
        return run
    return _node(loss, (logits,), bw)


def dropout(a: Tensor, p: float, training: bool, rng: np.random.Generator | None = None) -> Tensor:
    """Inverted dropout; identity in evaluation mode or at p == 0."""
    if not training or p <= 0.0:
        return a
    if rng is None:
        rng = np.random.default_rng()
    keep = (rng.random(a.shape) >= p) / (1.0 - p)

    def bw(t):
        def run(g):
            a.accumulate(g * keep)
        return run
    return _node(a.data * keep, (a,), bw)


def embedding(table: Tensor, indices) -> Tensor:
    """Row lookup with scatter-add backward; indices (B,) -> (B, dim)."""
    idx = np.asarray(indices, dtype=np.int64)

    def bw(t):
        def run(g):
            full = np.zeros_like(table.data)
            np.add.at(full, idx, g)
            table.accumulate(full)
        return run
    return _node(table.data[idx], (table,), bw)


def lstm_cell(x: Tensor, h_prev: Tensor, c_prev: Tensor, wx: Tensor, wh: Tensor, b: Tensor):
    """One LSTM step; gate order (input, forget, candidate, output).

    x (B, in), h_prev/c_prev (B, h); wx (in, 4h), wh (h, 4h), b (4h,).
    """
    hsz = h_prev.data.shape[-1]
    gates = add(add(matmul(x, wx), matmul(h_prev, wh)), b)
    i = sigmoid(slice_(gates, (Ellipsis, slice(0, hsz))))
    f = sigmoid(slice_(gates, (Ellipsis, slice(hsz, 2 * hsz))))
    g = tanh(slice_(gates, (Ellipsis, slice(2 * hsz, 3 * hsz))))
    o = sigmoid(slice_(gates, (Ellipsis, slice(3 * hsz, 4 * hsz))))
    c = add(mul(f, c_prev), mul(i, g))
    h = mul(o, tanh(c))
    return h, c


# ---------------------------------------------------------------------------
# initializers

def semi_orthogonal(shape, rng: np.random.Generator) -> np.ndarray:
    """Random matrix whose rows (or columns, whichever fewer) are orthonormal."""
    rows, cols = shape
    big, small = max(rows, cols), min(rows, cols)
    a = rng.normal(size=(big, small))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))
    return q if rows >= cols else q.T


def xavier_normal(shape, rng: np.random.Generator) -> np.ndarray:
    fan_in, fan_out = shape[0], shape[-1]
    return rng.normal(scale=np.sqrt(2.0 / (fan_in + fan_out)), size=shape)


def normal_init(shape, rng: np.random.Generator, mean: float = 1.0, std: float = 0.02) -> np.ndarray:
    return rng.normal(loc=mean, scale=std, size=shape)


# ---------------------------------------------------------------------------
# optimizer

class Adam:
    """Adam with bias correction; beta1 defaults to the training recipe's 0.5."""

    def __init__(self, params: dict, lr: float = 1e-3, beta1: float = 0.5,
                 beta2: float = 0.999, eps: float = 1e-8, clip_norm: float = 5.0):
        if not (0.0 <= beta1 < 1.0 and 0.0 <= beta2 < 1.0):
            raise ValueError("betas must lie in [0, 1)")
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.clip_norm = clip_norm
        self.step_count = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def zero_grad(self):
        for p in self.params.values():
            p.zero_grad()

    def step(self):
        self.step_count += 1
        grads = {k: (p.grad if p.grad is not None else np.zeros_like(p.data))
                 for k, p in self.params.items()}
        if self.clip_norm is not None:
            total = np.sqrt(sum(float((g**2).sum()) for g in grads.values()))
            if total > self.clip_norm:
                factor = self.clip_norm / total
                grads = {k: g * factor for k, g in grads.items()}
        b1t = 1.0 - self.beta1**self.step_count
        b2t = 1.0 - self.beta2**self.step_count
        for k, p in self.params.items():
            g = grads[k]
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * g**2
            m_hat = self.m[k] / b1t
            v_hat = self.v[k] / b2t
            p.data -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


    def export_state(self) -> dict:
        out = {"step_count": self.step_count}
        out["m"] = {k: v.copy() for k, v in self.m.items()}
        out["v"] = {k: v.copy() for k, v in self.v.items()}
        return out

    def load_state(self, state: dict) -> None:
        self.step_count = int(state["step_count"])
        for k in self.m:
            self.m[k] = state["m"][k].copy()
            self.v[k] = state["v"][k].copy()


def adam_step(params: dict, state: Adam):
    """Apply one Adam update from the gradients currently on the params."""
    assert state.params is params
    state.step()
    return params


# ---------------------------------------------------------------------------
# checkpoint serialization

CKPT_MAGIC = b"CKPT1"


def save_checkpoint(path, params: dict, step: int = 0, rng_seed: int = 0, extra: dict | None = None):
    """Write magic, JSON header, then raw little-endian arrays in header order."""
    names = sorted(params)
    header = {
        "params": [{"name": k, "shape": list(params[k].data.shape), "dtype": "<f8"}
                   for k in names],
        "step": int(step),
        "rng_seed": int(rng_seed),
    }
    if extra:
        header["extra"] = extra
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as f:
        f.write(CKPT_MAGIC)
        f.write(struct.pack("<I", len(blob)))
        f.write(blob)
        for k in names:
            f.write(params[k].data.astype("<f8").tobytes())


def load_checkpoint(path):
    """Returns (params dict of Tensors, header dict)."""
    with open(path, "rb") as f:
        if f.read(5) != CKPT_MAGIC:
            raise ValueError(f"not a checkpoint file: {path}")
        (hlen,) = struct.unpack("<I", f.read(4))
        header = json.loads(f.read(hlen).decode())
        params = {}
        for spec in header["params"]:
            shape = tuple(spec["shape"])
            count = int(np.prod(shape)) if shape else 1
            arr = np.frombuffer(f.read(8 * count), dtype=spec["dtype"]).reshape(shape)
            params[spec["name"]] = parameter(arr.astype(np.float64))
    return params, header
