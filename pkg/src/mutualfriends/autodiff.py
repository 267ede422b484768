"""Dense f64 tensors with reverse-mode automatic differentiation.

Deliberately small: exactly the operations the dialogue model needs, an
LSTM cell with an analytic backward pass, and AdaGrad. Operations record
onto an active Tape; without one they run forward-only (inference mode).
Backward walks the tape once in reverse execution order, which is a
reverse topological order by construction.
"""

from __future__ import annotations

import json
from typing import Callable, Sequence

import numpy as np

from .util import make_rng


class ShapeError(ValueError):
    pass


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_recorded")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        # True when this tensor was produced by a recorded op (grads flow through it)
        self._recorded = False

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


class _Entry:
    __slots__ = ("outputs", "parents", "backward_fn")

    def __init__(self, outputs, parents, backward_fn):
        self.outputs = outputs
        self.parents = parents
        self.backward_fn = backward_fn


_ACTIVE: "Tape | None" = None


class Tape:
    """Records executed operations for one backward pass."""

    def __init__(self):
        self.entries: list[_Entry] = []
        # deferred low-rank weight gradients: tensor -> (lhs rows, rhs rows)
        self._deferred: dict[int, tuple[Tensor, list, list]] = {}

    def __enter__(self) -> "Tape":
        global _ACTIVE
        self._prev = _ACTIVE
        _ACTIVE = self
        return self

    def __exit__(self, *exc) -> None:
        global _ACTIVE
        _ACTIVE = self._prev

    def defer_outer(self, weight: Tensor, lhs: np.ndarray, rhs: np.ndarray) -> None:
        """Queue a weight gradient of the form lhs.T @ rhs; flushed as one
        matmul at the end of backward. Cuts per-step allocation for
        recurrent weights."""
        slot = self._deferred.setdefault(id(weight), (weight, [], []))
        slot[1].append(lhs)
        slot[2].append(rhs)

    def backward(self, loss: Tensor) -> None:
        """Populate gradients of everything reachable from loss.

        Parameter gradients accumulate across calls: callers zero them
        explicitly between steps.
        """
        if loss.data.shape != ():
            raise ShapeError(f"backward needs a scalar loss, got shape {loss.data.shape}")
        loss.grad = np.ones((), dtype=np.float64)
        zero_cache: dict[tuple[int, ...], np.ndarray] = {}

        def zero_for(shape):
            z = zero_cache.get(shape)
            if z is None:
                z = np.zeros(shape, dtype=np.float64)
                zero_cache[shape] = z
            return z  # read-only by convention: backward fns never mutate grads

        for entry in reversed(self.entries):
            if all(o.grad is None for o in entry.outputs):
                continue
            out_grads = [
                o.grad if o.grad is not None else zero_for(o.data.shape) for o in entry.outputs
            ]
            parent_grads = entry.backward_fn(*out_grads)
            for parent, g in zip(entry.parents, parent_grads):
                if g is None or not (parent.requires_grad or parent._recorded):
                    continue
                if parent.grad is None:
                    parent.grad = np.array(g)  # copy: g may alias an op buffer
                else:
                    parent.grad += g
        for weight, lhs, rhs in self._deferred.values():
            if weight.grad is None:
                weight.grad = np.zeros_like(weight.data)
            weight.grad += np.concatenate(lhs, axis=0).T @ np.concatenate(rhs, axis=0)
        self._deferred.clear()


def _record(outputs: Sequence[Tensor], parents: Sequence[Tensor],
            backward_fn: Callable) -> None:
    if _ACTIVE is None:
        return
    if not any(p.requires_grad or p._recorded for p in parents):
        return
    for o in outputs:
        o._recorded = True
    _ACTIVE.entries.append(_Entry(tuple(outputs), tuple(parents), backward_fn))


def constant(data) -> Tensor:
    return Tensor(data)


def param(shape: tuple[int, ...], rng: np.random.Generator, scale: float = 0.1) -> Tensor:
    return Tensor(rng.uniform(-scale, scale, size=shape), requires_grad=True)


def zeros(shape: tuple[int, ...]) -> Tensor:
    return Tensor(np.zeros(shape))


# -- arithmetic --------------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape and not (
        len(a.shape) == 2 and b.shape == (1, a.shape[1])
    ):
        raise ShapeError(f"add: {a.shape} vs {b.shape}")
    out = Tensor(a.data + b.data)

    def backward(g):
        gb = g if a.shape == b.shape else g.sum(axis=0, keepdims=True)
        return g, gb

    _record([out], [a, b], backward)
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product; b may be a column (n,1) or row (1,d) broadcast."""
    if a.shape != b.shape and not (
        len(a.shape) == 2 and b.shape in ((a.shape[0], 1), (1, a.shape[1]))
    ):
        raise ShapeError(f"mul: {a.shape} vs {b.shape}")
    out = Tensor(a.data * b.data)

    def backward(g):
        ga = g * b.data
        gb = g * a.data
        if b.shape != a.shape:
            axis = 1 if b.shape[1] == 1 else 0
            gb = gb.sum(axis=axis, keepdims=True)
        return ga, gb

    _record([out], [a, b], backward)
    return out


def affine_scalar(t: Tensor, scale: float, shift: float = 0.0) -> Tensor:
    out = Tensor(t.data * scale + shift)
    _record([out], [t], lambda g: (g * scale,))
    return out


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if len(a.shape) != 2 or len(b.shape) != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: {a.shape} @ {b.shape}")
    out = Tensor(a.data @ b.data)

    def backward(g):
        return g @ b.data.T, a.data.T @ g

    _record([out], [a, b], backward)
    return out


def affine(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """x @ w + b with b a (1, m) row."""
    if x.shape[1] != w.shape[0] or b.shape != (1, w.shape[1]):
        raise ShapeError(f"affine: {x.shape} @ {w.shape} + {b.shape}")
    out = Tensor(x.data @ w.data + b.data)

    def backward(g):
        return g @ w.data.T, x.data.T @ g, g.sum(axis=0, keepdims=True)

    _record([out], [x, w, b], backward)
    return out


def transpose(t: Tensor) -> Tensor:
    out = Tensor(t.data.T)
    _record([out], [t], lambda g: (g.T,))
    return out


def concat(tensors: Sequence[Tensor], axis: int = 1) -> Tensor:
    if axis not in (0, 1):
        raise ShapeError("concat supports axis 0 or 1")
    out = Tensor(np.concatenate([t.data for t in tensors], axis=axis))
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        if axis == 0:
            return tuple(g[offsets[i]:offsets[i + 1], :] for i in range(len(sizes)))
        return tuple(g[:, offsets[i]:offsets[i + 1]] for i in range(len(sizes)))

    _record([out], list(tensors), backward)
    return out


def sigmoid(t: Tensor) -> Tensor:
    y = 1.0 / (1.0 + np.exp(-t.data))
    out = Tensor(y)
    _record([out], [t], lambda g: (g * y * (1.0 - y),))
    return out


def tanh(t: Tensor) -> Tensor:
    y = np.tanh(t.data)
    out = Tensor(y)
    _record([out], [t], lambda g: (g * (1.0 - y * y),))
    return out


def tsum(t: Tensor) -> Tensor:
    out = Tensor(t.data.sum())
    _record([out], [t], lambda g: (np.broadcast_to(g, t.shape).copy(),))
    return out


def add_n(tensors: Sequence[Tensor]) -> Tensor:
    """Elementwise sum of same-shaped tensors."""
    first = tensors[0]
    if any(t.shape != first.shape for t in tensors):
        raise ShapeError("add_n: shape mismatch")
    out = Tensor(np.sum([t.data for t in tensors], axis=0))
    _record([out], list(tensors), lambda g: tuple(g for _ in tensors))
    return out


def maximum_reduce(tensors: Sequence[Tensor]) -> Tensor:
    """Elementwise max over a set of same-shaped tensors."""
    first = tensors[0]
    if any(t.shape != first.shape for t in tensors):
        raise ShapeError("maximum_reduce: shape mismatch")
    stacked = np.stack([t.data for t in tensors])
    argmax = stacked.argmax(axis=0)
    out = Tensor(stacked.max(axis=0))

    def backward(g):
        return tuple(np.where(argmax == i, g, 0.0) for i in range(len(tensors)))

    _record([out], list(tensors), backward)
    return out


def softmax(t: Tensor, temperature: float = 1.0, axis: int = 1) -> Tensor:
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    x = t.data / temperature
    x = x - x.max(axis=axis, keepdims=True)
    e = np.exp(x)
    y = e / e.sum(axis=axis, keepdims=True)
    out = Tensor(y)

    def backward(g):
        dot = (g * y).sum(axis=axis, keepdims=True)
        return ((g - dot) * y / temperature,)

    _record([out], [t], backward)
    return out


def gather_rows(table: Tensor, indices) -> Tensor:
    """Row lookup (embedding lookup); duplicate indices accumulate gradient."""
    idx = np.asarray(indices, dtype=np.intp)
    out = Tensor(table.data[idx])

    def backward(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, idx, g)
        return (gt,)

    _record([out], [table], backward)
    return out


def scatter_rows(base: Tensor, indices, rows: Tensor) -> Tensor:
    """Copy of base with the given rows replaced. Indices must be unique."""
    idx = np.asarray(indices, dtype=np.intp)
    if len(np.unique(idx)) != len(idx):
        raise ValueError("scatter_rows: duplicate indices")
    data = base.data.copy()
    data[idx] = rows.data
    out = Tensor(data)

    def backward(g):
        gb = g.copy()
        gb[idx] = 0.0
        return gb, g[idx]

    _record([out], [base, rows], backward)
    return out


def segment_max(x: Tensor, segment_ids, n_segments: int) -> Tensor:
    """Per-segment elementwise max over rows of x; empty segments are zero.

    segment_ids must be sorted ascending (rows grouped by segment).
    """
    ids = np.asarray(segment_ids, dtype=np.intp)
    if len(ids) != x.shape[0]:
        raise ShapeError("segment_max: one segment id per row")
    if len(ids) and np.any(np.diff(ids) < 0):
        raise ValueError("segment_max: segment ids must be sorted")
    d = x.shape[1]
    bounds = np.searchsorted(ids, np.arange(n_segments + 1))
    starts = bounds[:-1]
    empty = bounds[:-1] == bounds[1:]
    if len(ids):
        out_data = np.maximum.reduceat(x.data, np.minimum(starts, len(ids) - 1), axis=0)
        # row index of each (segment, column) max, for gradient routing
        per_row_max = out_data[ids]
        candidates = np.where(x.data == per_row_max, np.arange(len(ids))[:, None], len(ids))
        argmax = np.minimum.reduceat(candidates, np.minimum(starts, len(ids) - 1), axis=0)
    else:
        out_data = np.zeros((n_segments, d))
        argmax = np.full((n_segments, d), len(ids), dtype=np.intp)
    out_data[empty] = 0.0
    argmax[empty] = -1
    out = Tensor(out_data)

    def backward(g):
        gx = np.zeros_like(x.data)
        rows = argmax.ravel()
        mask = rows >= 0
        cols = np.tile(np.arange(d), n_segments)[mask]
        np.add.at(gx, (rows[mask], cols), g.ravel()[mask])
        return (gx,)

    _record([out], [x], backward)
    return out


def cross_entropy(logits: Tensor, targets, weights=None) -> Tensor:
    """Sum of weighted negative log-likelihoods over rows of logits.

    targets are class indices; weights (optional) mask or scale each row.
    """
    idx = np.asarray(targets, dtype=np.intp)
    if len(idx) != logits.shape[0]:
        raise ShapeError("cross_entropy: one target per row")
    w = np.ones(len(idx)) if weights is None else np.asarray(weights, dtype=np.float64)
    x = logits.data
    m = x.max(axis=1, keepdims=True)
    lse = m[:, 0] + np.log(np.exp(x - m).sum(axis=1))
    nll = lse - x[np.arange(len(idx)), idx]
    out = Tensor((nll * w).sum())

    def backward(g):
        p = np.exp(x - m)
        p /= p.sum(axis=1, keepdims=True)
        p[np.arange(len(idx)), idx] -= 1.0
        return (p * (w * float(g))[:, None],)

    _record([out], [logits], backward)
    return out


def attention_context(scores: Tensor, values: Tensor) -> Tensor:
    """Fused softmax(scores) @ values for a (1, n) score row."""
    if scores.shape != (1, values.shape[0]):
        raise ShapeError(f"attention_context: scores{scores.shape} values{values.shape}")
    x = scores.data - scores.data.max()
    e = np.exp(x)
    alpha = e / e.sum()
    out = Tensor(alpha @ values.data)

    def backward(g):
        g_alpha = g @ values.data.T
        dot = (g_alpha * alpha).sum()
        g_scores = (g_alpha - dot) * alpha
        return g_scores, alpha.T @ g
    _record([out], [scores, values], backward)
    return out


def attention_scores(h: Tensor, precomputed: Tensor, wh: Tensor, v: Tensor) -> Tensor:
    """Fused s = tanh(precomputed + h @ wh) @ v, returned as a (1, n) row.

    precomputed is the per-turn node part of the bilinear form; h is the
    current (1, hidden) state. One tape entry instead of four.
    """
    if h.shape[0] != 1 or precomputed.shape[1] != wh.shape[1] or v.shape[1] != 1:
        raise ShapeError(
            f"attention_scores: h{h.shape} pre{precomputed.shape} wh{wh.shape} v{v.shape}"
        )
    mixed = np.tanh(precomputed.data + h.data @ wh.data)
    out = Tensor((mixed @ v.data).T)
    tape = _ACTIVE

    def backward(g):
        g_mixed = (g.T @ v.data.T) * (1.0 - mixed * mixed)
        g_row = g_mixed.sum(axis=0, keepdims=True)
        gh = g_row @ wh.data.T
        if tape is not None:
            tape.defer_outer(wh, h.data, g_row)
            tape.defer_outer(v, mixed, g.T)
            return gh, g_mixed, None, None
        return gh, g_mixed, h.data.T @ g_row, mixed.T @ g.T

    _record([out], [h, precomputed, wh, v], backward)
    return out


# -- LSTM cell ---------------------------------------------------------------


def lstm_params(input_dim: int, hidden: int, rng: np.random.Generator) -> dict[str, Tensor]:
    return {
        "wx": param((input_dim, 4 * hidden), rng),
        "wh": param((hidden, 4 * hidden), rng),
        "b": param((1, 4 * hidden), rng),
    }


def lstm_cell(x: Tensor, h_prev: Tensor, c_prev: Tensor,
              params: dict[str, Tensor]) -> tuple[Tensor, Tensor]:
    """One LSTM step with gate order (input, forget, output, candidate).

    Fused op: the backward pass is analytic rather than composed from
    primitive ops, which keeps tapes short.
    """
    wx, wh, b = params["wx"], params["wh"], params["b"]
    hidden = wh.shape[0]
    if x.shape[1] != wx.shape[0] or h_prev.shape[1] != hidden or c_prev.shape[1] != hidden:
        raise ShapeError(
            f"lstm_cell: x{x.shape} h{h_prev.shape} c{c_prev.shape} wx{wx.shape}"
        )
    pre = x.data @ wx.data + h_prev.data @ wh.data + b.data
    i = 1.0 / (1.0 + np.exp(-pre[:, :hidden]))
    f = 1.0 / (1.0 + np.exp(-pre[:, hidden:2 * hidden]))
    o = 1.0 / (1.0 + np.exp(-pre[:, 2 * hidden:3 * hidden]))
    g = np.tanh(pre[:, 3 * hidden:])
    c = f * c_prev.data + i * g
    tc = np.tanh(c)
    h = o * tc
    out_h, out_c = Tensor(h), Tensor(c)

    tape = _ACTIVE

    def backward(gh, gc_in):
        gc = gh * o * (1.0 - tc * tc) + gc_in
        dpre = np.concatenate(
            [
                gc * g * i * (1.0 - i),
                gc * c_prev.data * f * (1.0 - f),
                gh * tc * o * (1.0 - o),
                gc * i * (1.0 - g * g),
            ],
            axis=1,
        )
        gx = dpre @ wx.data.T
        gh_prev = dpre @ wh.data.T
        gc_prev = gc * f
        # weight gradients are rank-n outer products; batch them per tape
        tape.defer_outer(wx, x.data, dpre)
        tape.defer_outer(wh, h_prev.data, dpre)
        tape.defer_outer(b, np.ones((dpre.shape[0], 1)), dpre)
        return gx, gh_prev, gc_prev, None, None, None

    _record([out_h, out_c], [x, h_prev, c_prev, wx, wh, b], backward)
    return out_h, out_c


# -- optimizer ---------------------------------------------------------------


class AdaGrad:
    """theta -= lr * g / (sqrt(accum) + eps), accum += g^2."""

    def __init__(self, params: dict[str, Tensor], lr: float = 0.5, eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.eps = eps
        self.accum = {name: np.zeros_like(p.data) for name, p in params.items()}

    def step(self) -> None:
        for name, p in self.params.items():
            if p.grad is None:
                continue
            acc = self.accum[name]
            acc += p.grad * p.grad
            p.data -= self.lr * p.grad / (np.sqrt(acc) + self.eps)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None


# -- persistence ---------------------------------------------------------------

CHECKPOINT_VERSION = 1


def save_checkpoint(path: str, tensors: dict[str, Tensor], meta: dict | None = None) -> None:
    header = {"format_version": CHECKPOINT_VERSION, "meta": meta or {}}
    arrays = {f"t__{name}": t.data for name, t in tensors.items()}
    np.savez(path, __header__=np.frombuffer(json.dumps(header).encode(), dtype=np.uint8), **arrays)


def load_checkpoint(path: str) -> tuple[dict[str, Tensor], dict]:
    with np.load(path) as data:
        header = json.loads(bytes(data["__header__"]).decode())
        if header.get("format_version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version in {path!r}")
        tensors = {
            key[3:]: Tensor(data[key], requires_grad=True)
            for key in data.files
            if key.startswith("t__")
        }
    return tensors, header.get("meta", {})


# -- verification --------------------------------------------------------------


def finite_difference_check(build_loss: Callable[[], Tensor],
                            params: dict[str, Tensor],
                            n_coords: int = 6,
                            h: float = 1e-5,
                            rng: np.random.Generator | None = None) -> float:
    """Max relative error between analytic and central-difference gradients
    over randomly sampled parameter coordinates."""
    rng = make_rng(rng)
    for p in params.values():
        p.grad = None
    with Tape() as tape:
        loss = build_loss()
    tape.backward(loss)
    analytic = {name: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data))
                for name, p in params.items()}
    worst = 0.0
    for name, p in params.items():
        flat = p.data.reshape(-1)
        count = min(n_coords, flat.size)
        coords = rng.choice(flat.size, size=count, replace=False)
        for ci in coords:
            orig = flat[ci]
            flat[ci] = orig + h
            f_plus = build_loss().item()
            flat[ci] = orig - h
            f_minus = build_loss().item()
            flat[ci] = orig
            numeric = (f_plus - f_minus) / (2 * h)
            exact = analytic[name].reshape(-1)[ci]
            denom = max(abs(numeric), abs(exact), 1e-8)
            worst = max(worst, abs(numeric - exact) / denom)
    return worst
