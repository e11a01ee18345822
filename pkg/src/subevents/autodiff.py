"""Dense float64 tensors with reverse-mode differentiation.

Implements exactly the primitives the bin encoders and the sequence
labeler need: matmul, embedding lookup, pooling, same-length 1-d
convolution, elementwise activations, softmax cross-entropy, an LSTM
cell, inverted dropout and Adam. Graphs are recorded eagerly as tensors
are produced; ``Tensor.backward()`` replays the recorded primitives in
reverse execution order, accumulating gradients additively.

Everything is float64 and single-threaded per graph. Distinct graphs
may live on distinct threads.
"""

from __future__ import annotations

import hashlib
import itertools
import math
import struct
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterable, List, Sequence, Tuple

import numpy as np

_seq_counter = itertools.count()


class Tensor:
    """A dense float64 array plus an optional gradient buffer.

    Tensors produced by ops carry a backward closure and references to
    their parents; calling backward() on a scalar output walks every
    reachable node in reverse execution order exactly once.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward_fn",
                 "_seq", "_backward_done")

    def __init__(self, data, requires_grad=False, parents=(), backward_fn=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = tuple(parents)
        self._backward_fn = backward_fn
        self._seq = next(_seq_counter)
        self._backward_done = False

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def accumulate_grad(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def backward(self) -> None:
        """Run reverse-mode differentiation from this scalar output.

        Raises if called twice on the same output: gradients accumulate
        additively, so a silent second pass would double-count.
        """
        if self.data.size != 1:
            raise ValueError("backward() requires a scalar output, got shape %r"
                             % (self.shape,))
        if self._backward_done:
            raise RuntimeError("backward() already ran on this graph; rebuild the "
                               "graph before differentiating again")
        self._backward_done = True
        nodes = _reachable(self)
        nodes.sort(key=lambda t: t._seq, reverse=True)  # reverse execution order
        self.grad = np.ones_like(self.data)
        for node in nodes:
            if node._backward_fn is not None and node.grad is not None:
                node._backward_fn(node.grad)

    def __repr__(self) -> str:
        return "Tensor(shape=%r, requires_grad=%r)" % (self.shape, self.requires_grad)


def _reachable(root: Tensor) -> List[Tensor]:
    seen = set()
    out = []
    stack = [root]
    while stack:
        node = stack.pop()
        if id(node) in seen:
            continue
        seen.add(id(node))
        out.append(node)
        stack.extend(node._parents)
    return out


def tensor(data, requires_grad: bool = False) -> Tensor:
    return Tensor(data, requires_grad=requires_grad)


def zeros(shape, requires_grad: bool = False) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=requires_grad)


def _make(data, parents, backward_fn) -> Tensor:
    """Wrap an op result; the backward closure is kept only if any parent needs it."""
    if any(p.requires_grad for p in parents):
        return Tensor(data, requires_grad=True, parents=parents, backward_fn=backward_fn)
    return Tensor(data)


def _unbroadcast(g: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum a gradient down to `shape`, undoing numpy broadcasting."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise arithmetic


def add(a: Tensor, b: Tensor) -> Tensor:
    out = a.data + b.data

    def backward(g):
        if a.requires_grad:
            a.accumulate_grad(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b.accumulate_grad(_unbroadcast(g, b.data.shape))

    return _make(out, (a, b), backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    out = a.data * b.data

    def backward(g):
        if a.requires_grad:
            a.accumulate_grad(_unbroadcast(g * b.data, a.data.shape))
        if b.requires_grad:
            b.accumulate_grad(_unbroadcast(g * a.data, b.data.shape))

    return _make(out, (a, b), backward)


def scale(a: Tensor, s: float) -> Tensor:
    s = float(s)

    def backward(g):
        if a.requires_grad:
            a.accumulate_grad(g * s)

    return _make(a.data * s, (a,), backward)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product. Accepts 1-d or 2-d operands (vector = single row/column).

    Backward: dA = dC @ B^T, dB = A^T @ dC, specialised for the vector cases.
    """
    A, B = a.data, b.data
    if A.ndim not in (1, 2) or B.ndim not in (1, 2):
        raise ValueError("matmul supports 1-d and 2-d operands only")
    if A.shape[-1] != B.shape[0]:
        raise ValueError("matmul shape mismatch: %r x %r" % (A.shape, B.shape))
    out = A @ B

    def backward(g):
        if a.requires_grad:
            if B.ndim == 1:
                ga = np.outer(g, B) if A.ndim == 2 else g * B
            else:
                ga = g @ B.T
            a.accumulate_grad(ga.reshape(A.shape))
        if b.requires_grad:
            if A.ndim == 1:
                gb = np.outer(A, g) if B.ndim == 2 else g * A
            else:
                gb = A.T @ g
            b.accumulate_grad(gb.reshape(B.shape))

    return _make(out, (a, b), backward)


# ---------------------------------------------------------------------------
# gather / slice / stack


def embedding_lookup(table: Tensor, ids: Sequence[int]) -> Tensor:
    """Gather rows of `table`; backward scatter-adds into the gathered rows."""
    idx = np.asarray(ids, dtype=np.intp)
    if idx.ndim != 1:
        raise ValueError("ids must be a flat sequence")
    if idx.size and (idx.min() < 0 or idx.max() >= table.data.shape[0]):
        raise IndexError("embedding id out of range [0, %d)" % table.data.shape[0])
    out = table.data[idx]

    def backward(g):
        if table.requires_grad:
            gt = np.zeros_like(table.data)
            np.add.at(gt, idx, g)  # duplicate ids accumulate
            table.accumulate_grad(gt)

    return _make(out, (table,), backward)


def narrow(x: Tensor, start: int, stop: int) -> Tensor:
    """Slice [start:stop) along the last axis."""
    out = x.data[..., start:stop]

    def backward(g):
        if x.requires_grad:
            gx = np.zeros_like(x.data)
            gx[..., start:stop] = g
            x.accumulate_grad(gx)

    return _make(out, (x,), backward)


def take_row(x: Tensor, i: int) -> Tensor:
    """Select row i of a 2-d tensor as a vector."""
    out = x.data[i]

    def backward(g):
        if x.requires_grad:
            gx = np.zeros_like(x.data)
            gx[i] = g
            x.accumulate_grad(gx)

    return _make(out, (x,), backward)


def stack_rows(parts: Sequence[Tensor]) -> Tensor:
    """Stack equal-length vectors into a matrix, one per row."""
    if not parts:
        raise ValueError("stack_rows needs at least one tensor")
    out = np.stack([p.data for p in parts])

    def backward(g):
        for i, p in enumerate(parts):
            if p.requires_grad:
                p.accumulate_grad(g[i])

    return _make(out, tuple(parts), backward)


# ---------------------------------------------------------------------------
# pooling and convolution


def mean_pool(x: Tensor) -> Tensor:
    """Column-wise mean of an (n, d) tensor; backward distributes 1/n."""
    if x.data.ndim != 2 or x.data.shape[0] < 1:
        raise ValueError("mean_pool expects a non-empty (n, d) tensor")
    n = x.data.shape[0]
    out = x.data.mean(axis=0)

    def backward(g):
        if x.requires_grad:
            x.accumulate_grad(np.broadcast_to(g / n, x.data.shape))

    return _make(out, (x,), backward)


def max_pool(x: Tensor) -> Tensor:
    """Column-wise max; backward routes to the first argmax per column."""
    if x.data.ndim != 2 or x.data.shape[0] < 1:
        raise ValueError("max_pool expects a non-empty (n, d) tensor")
    idx = np.argmax(x.data, axis=0)  # first maximum wins ties
    cols = np.arange(x.data.shape[1])
    out = x.data[idx, cols]

    def backward(g):
        if x.requires_grad:
            gx = np.zeros_like(x.data)
            gx[idx, cols] = g
            x.accumulate_grad(gx)

    return _make(out, (x,), backward)


def pool(kind: str, x: Tensor) -> Tensor:
    if kind == "mean":
        return mean_pool(x)
    if kind == "max":
        return max_pool(x)
    raise ValueError("unknown pool kind %r" % (kind,))


def conv1d(x: Tensor, kernels: Tensor, bias: Tensor) -> Tensor:
    """Same-length 1-d convolution over the first axis of x.

    Args:
        x: (n, d_in) input sequence, n >= 1.
        kernels: (w, d_in, d_out) filter bank.
        bias: (d_out,) added to every position.

    Zero-pads (w-1)//2 on the left and w//2 on the right so the output
    is (n, d_out). The nonlinearity is applied by the caller.
    """
    X, K, B = x.data, kernels.data, bias.data
    if X.ndim != 2 or K.ndim != 3 or B.ndim != 1:
        raise ValueError("conv1d expects x (n,d_in), kernels (w,d_in,d_out), bias (d_out,)")
    n, d_in = X.shape
    w, kd_in, d_out = K.shape
    if kd_in != d_in or B.shape[0] != d_out:
        raise ValueError("conv1d shape mismatch: x %r, kernels %r, bias %r"
                         % (X.shape, K.shape, B.shape))
    if n < 1 or w < 1:
        raise ValueError("conv1d needs n >= 1 and window >= 1")
    pad_left = (w - 1) // 2
    xp = np.zeros((n + w - 1, d_in))
    xp[pad_left:pad_left + n] = X
    out = np.broadcast_to(B, (n, d_out)).copy()
    for j in range(w):
        out += xp[j:j + n] @ K[j]

    def backward(g):
        if x.requires_grad:
            gxp = np.zeros_like(xp)
            for j in range(w):
                gxp[j:j + n] += g @ K[j].T
            x.accumulate_grad(gxp[pad_left:pad_left + n])
        if kernels.requires_grad:
            gk = np.zeros_like(K)
            for j in range(w):
                gk[j] = xp[j:j + n].T @ g
            kernels.accumulate_grad(gk)
        if bias.requires_grad:
            bias.accumulate_grad(g.sum(axis=0))

    return _make(out, (x, kernels, bias), backward)


# ---------------------------------------------------------------------------
# activations and losses


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)

    def backward(g):
        if x.requires_grad:
            x.accumulate_grad(g * (1.0 - y * y))

    return _make(y, (x,), backward)


def sigmoid(x: Tensor) -> Tensor:
    # 0.5*(1+tanh(x/2)) is exact and overflow-free
    y = 0.5 * (1.0 + np.tanh(0.5 * x.data))

    def backward(g):
        if x.requires_grad:
            x.accumulate_grad(g * y * (1.0 - y))

    return _make(y, (x,), backward)


def relu(x: Tensor) -> Tensor:
    y = np.maximum(x.data, 0.0)

    def backward(g):
        if x.requires_grad:
            x.accumulate_grad(g * (x.data > 0.0))

    return _make(y, (x,), backward)


def activation(kind: str, x: Tensor) -> Tensor:
    fns = {"tanh": tanh, "sigmoid": sigmoid, "relu": relu}
    if kind not in fns:
        raise ValueError("unknown activation %r" % (kind,))
    return fns[kind](x)


def softmax_vec(x: Tensor) -> Tensor:
    """Stable softmax over a 1-d tensor."""
    if x.data.ndim != 1:
        raise ValueError("softmax_vec expects a vector")
    z = x.data - x.data.max()
    e = np.exp(z)
    y = e / e.sum()

    def backward(g):
        if x.requires_grad:
            x.accumulate_grad(y * (g - np.dot(g, y)))

    return _make(y, (x,), backward)


def softmax_cross_entropy(logits: Tensor, gold: Sequence[int],
                          class_weights: np.ndarray | None = None) -> Tensor:
    """Mean negative log-likelihood of `gold` under row-wise softmax.

    Numerically stabilised by max-subtraction. With `class_weights`
    (length C), rows are weighted by the weight of their gold class and
    the mean is normalised by the total weight.
    """
    Z = logits.data
    if Z.ndim != 2:
        raise ValueError("logits must be (n, C)")
    ids = np.asarray(gold, dtype=np.intp)
    n, C = Z.shape
    if ids.shape != (n,):
        raise ValueError("gold length %d does not match %d logit rows" % (ids.size, n))
    if ids.size and (ids.min() < 0 or ids.max() >= C):
        raise IndexError("gold label out of range [0, %d)" % C)
    shifted = Z - Z.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1))
    logp = shifted - lse[:, None]
    if class_weights is None:
        w = np.ones(n)
    else:
        w = np.asarray(class_weights, dtype=np.float64)[ids]
    wsum = w.sum()
    if wsum <= 0:
        raise ValueError("class weights eliminated every row")
    loss = -(w * logp[np.arange(n), ids]).sum() / wsum

    def backward(g):
        if logits.requires_grad:
            p = np.exp(logp)
            p[np.arange(n), ids] -= 1.0  # softmax - onehot
            logits.accumulate_grad(float(g) * (w[:, None] * p) / wsum)

    return _make(np.asarray(loss), (logits,), backward)


# ---------------------------------------------------------------------------
# LSTM cell


@dataclass
class LstmParams:
    """Fused-gate LSTM weights, gate order (input, forget, cell, output)."""
    wx: Tensor  # (d_in, 4H)
    wh: Tensor  # (H, 4H)
    b: Tensor   # (4H,)

    @property
    def hidden_size(self) -> int:
        return self.wh.data.shape[0]


def lstm_cell(x: Tensor, h_prev: Tensor, c_prev: Tensor, params: LstmParams):
    """One LSTM step on vectors: i,f,o = sigmoid gates, g = tanh candidate,
    c = f*c_prev + i*g, h = o*tanh(c). Returns (h, c)."""
    H = params.hidden_size
    z = add(add(matmul(x, params.wx), matmul(h_prev, params.wh)), params.b)
    i = sigmoid(narrow(z, 0, H))
    f = sigmoid(narrow(z, H, 2 * H))
    g = tanh(narrow(z, 2 * H, 3 * H))
    o = sigmoid(narrow(z, 3 * H, 4 * H))
    c = add(mul(f, c_prev), mul(i, g))
    h = mul(o, tanh(c))
    return h, c


def lstm_sequence(xs: Sequence[Tensor], params: LstmParams) -> List[Tensor]:
    """Unroll an LSTM left to right from a zero initial state; returns all
    hidden states."""
    H = params.hidden_size
    h = zeros(H)
    c = zeros(H)
    out = []
    for x in xs:
        h, c = lstm_cell(x, h, c, params)
        out.append(h)
    return out


# ---------------------------------------------------------------------------
# dropout


def dropout(x: Tensor, p: float, mode: str, rng: np.random.Generator | None) -> Tensor:
    """Inverted dropout: train mode zeroes with probability p and scales
    survivors by 1/(1-p); eval mode is the identity. p=0 draws nothing."""
    if not 0.0 <= p < 1.0:
        raise ValueError("dropout probability must satisfy 0 <= p < 1, got %r" % (p,))
    if mode not in ("train", "eval"):
        raise ValueError("mode must be 'train' or 'eval'")
    if mode == "eval" or p == 0.0:
        return x
    if rng is None:
        raise ValueError("train-mode dropout needs an rng stream")
    mask = (rng.random(x.data.shape) >= p) / (1.0 - p)

    def backward(g):
        if x.requires_grad:
            x.accumulate_grad(g * mask)

    return _make(x.data * mask, (x,), backward)


# ---------------------------------------------------------------------------
# seeded named streams


class Rng:
    """Named deterministic substreams off one 64-bit seed.

    stream(name) always returns a freshly seeded generator, so the same
    (seed, name) pair yields bit-identical draws no matter when or how
    often it is requested.
    """

    def __init__(self, seed: int):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF

    def stream(self, name: str) -> np.random.Generator:
        digest = hashlib.blake2b(name.encode("utf-8"), digest_size=8).digest()
        key = int.from_bytes(digest, "little")
        return np.random.default_rng(np.random.SeedSequence([self.seed, key]))


# ---------------------------------------------------------------------------
# Adam


@dataclass
class AdamState:
    step: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: Dict[str, Tensor], state: AdamState, lr: float = 1e-3,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> None:
    """Standard bias-corrected Adam update, in place. Missing grads count as zero;
    tensors with requires_grad=False are skipped."""
    state.step += 1
    t = state.step
    bc1 = 1.0 - beta1 ** t
    bc2 = 1.0 - beta2 ** t
    for name, p in params.items():
        if not p.requires_grad:
            continue
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        m = state.m.get(name)
        if m is None:
            m = np.zeros_like(p.data)
            state.m[name] = m
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        p.data -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)


def zero_grads(params: Dict[str, Tensor]) -> None:
    for p in params.values():
        p.grad = None


# ---------------------------------------------------------------------------
# gradient checking


@dataclass
class GradCheckReport:
    max_rel_err: float
    worst_param: str
    tolerance: float
    per_param: Dict[str, float]

    @property
    def passed(self) -> bool:
        return math.isfinite(self.max_rel_err) and self.max_rel_err < self.tolerance


# Relative error above this scale, absolute below it; keeps finite-difference
# roundoff on near-zero gradients from registering as failure.
_REL_FLOOR = 1e-3


def gradient_check(fn: Callable[[], Tensor], params: Dict[str, Tensor],
                   tolerance: float = 1e-4, h: float = 1e-5) -> GradCheckReport:
    """Compare analytic gradients of a scalar-valued closure against central
    finite differences over every element of every parameter.

    `fn` must rebuild its graph on each call and be deterministic across
    calls (re-derive any dropout masks from a fixed stream).
    """
    zero_grads(params)
    out = fn()
    if out.data.size != 1 or not np.isfinite(out.data).all():
        raise ValueError("gradient_check needs a finite scalar objective")
    out.backward()
    analytic = {name: (np.array(p.grad) if p.grad is not None else np.zeros_like(p.data))
                for name, p in params.items() if p.requires_grad}

    per_param: Dict[str, float] = {}
    worst = ("", 0.0)
    for name, p in params.items():
        if not p.requires_grad:
            continue
        flat = p.data.reshape(-1)
        aflat = analytic[name].reshape(-1)
        err = 0.0
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + h
            f_plus = float(fn().data)
            flat[k] = orig - h
            f_minus = float(fn().data)
            flat[k] = orig
            numeric = (f_plus - f_minus) / (2.0 * h)
            a = float(aflat[k])
            if not (math.isfinite(numeric) and math.isfinite(a)):
                err = math.inf
                break
            denom = max(abs(a), abs(numeric), _REL_FLOOR)
            err = max(err, abs(a - numeric) / denom)
        per_param[name] = err
        if err > worst[1]:
            worst = (name, err)
    max_err = max(per_param.values()) if per_param else 0.0
    return GradCheckReport(max_rel_err=max_err, worst_param=worst[0],
                           tolerance=tolerance, per_param=per_param)


# ---------------------------------------------------------------------------
# parameter checkpoint: magic "SLB1", u32 version, u32 count, then per tensor
# u32 name length + UTF-8 name, u32 rank, u64 dims, raw little-endian f64.

CHECKPOINT_MAGIC = b"SLB1"
CHECKPOINT_VERSION = 1


def write_tensors(path, tensors: Dict[str, Tensor]) -> None:
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", CHECKPOINT_VERSION, len(tensors)))
        for name, t in tensors.items():
            data = t.data if isinstance(t, Tensor) else np.asarray(t, dtype=np.float64)
            raw = name.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<I", data.ndim))
            if data.ndim:
                fh.write(struct.pack("<%dQ" % data.ndim, *data.shape))
            fh.write(np.ascontiguousarray(data, dtype="<f8").tobytes())


def read_tensors(path) -> Dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != CHECKPOINT_MAGIC:
            raise ValueError("not a parameter checkpoint (bad magic %r)" % (magic,))
        version, count = struct.unpack("<II", fh.read(8))
        if version != CHECKPOINT_VERSION:
            raise ValueError("unsupported checkpoint version %d" % version)
        out: Dict[str, np.ndarray] = {}
        for _ in range(count):
            (nlen,) = struct.unpack("<I", fh.read(4))
            name = fh.read(nlen).decode("utf-8")
            (rank,) = struct.unpack("<I", fh.read(4))
            dims = struct.unpack("<%dQ" % rank, fh.read(8 * rank)) if rank else ()
            size = int(np.prod(dims)) if rank else 1
            buf = fh.read(8 * size)
            arr = np.frombuffer(buf, dtype="<f8").astype(np.float64).reshape(dims)
            out[name] = arr
        return out
