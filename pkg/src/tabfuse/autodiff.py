"""Reverse-mode automatic differentiation over dense float64 arrays.

A ``Tape`` records every derived ``Tensor`` in creation order, which is a
valid topological order, so the backward sweep is a single reverse pass that
visits each recorded tensor exactly once.  Tensors built without a tape
(constants, or parameters wrapped for inference) still compute forward values
but record nothing, so the same model code serves training and inference.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import NonDeterministicLoss, ShapeMismatch


class Tape:
    """Recording context for one differentiable computation."""

    __slots__ = ("_entries",)

    def __init__(self) -> None:
        self._entries: list[Tensor] = []

    def __len__(self) -> int:
        return len(self._entries)

    def backward(self, output: "Tensor", seed: np.ndarray | None = None) -> None:
        """Propagate gradients from ``output`` back to every reachable leaf.

        ``seed`` defaults to ones (the usual scalar-loss case); passing an
        explicit array lets a caller inject d(loss)/d(output) computed
        elsewhere, which is how per-tree tapes receive the gradient of a
        batch-level loss.
        """
        if output.tape is not self:
            raise ValueError("output tensor was not recorded on this tape")
        if seed is None:
            out_grad = np.ones_like(output.data)
        else:
            out_grad = np.asarray(seed, dtype=np.float64)
            if out_grad.shape != output.data.shape:
                raise ShapeMismatch(
                    f"seed shape {out_grad.shape} != output shape {output.data.shape}"
                )
        _accumulate(output, out_grad, owned=seed is None)
        for t in reversed(self._entries):
            if t.grad is not None and t.backward_rule is not None:
                t.backward_rule(t.grad)


class Tensor:
    """A float64 array plus the bookkeeping needed for the backward pass."""

    __slots__ = ("data", "grad", "backward_rule", "tape")

    def __init__(
        self,
        data,
        tape: Tape | None = None,
        record: bool = False,
    ) -> None:
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.backward_rule: Callable[[np.ndarray], None] | None = None
        self.tape = tape
        if record and tape is not None:
            tape._entries.append(self)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    # Convenience arithmetic; shapes must already agree (or broadcast a row).
    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __sub__(self, other: "Tensor") -> "Tensor":
        return sub(self, other)

    def __mul__(self, other: "Tensor") -> "Tensor":
        return mul(self, other)

    def __truediv__(self, other: "Tensor") -> "Tensor":
        return div(self, other)


def leaf(data, tape: Tape | None) -> Tensor:
    """A differentiation root: receives gradients but has no backward rule."""
    return Tensor(data, tape=tape)


def constant(data) -> Tensor:
    """A tensor gradients never flow into."""
    return Tensor(data)


def _accumulate(t: Tensor, g: np.ndarray, owned: bool) -> None:
    # Constants have no tape and are skipped; leaves keep their gradient.
    if t.tape is None and t.backward_rule is None:
        return
    if t.grad is None:
        t.grad = g if owned else np.array(g)
    else:
        t.grad += g


def _result(value: np.ndarray, tape: Tape | None) -> Tensor:
    return Tensor(value, tape=tape, record=True)


def _tape_of(*tensors: Tensor) -> Tape | None:
    for t in tensors:
        if t.tape is not None:
            return t.tape
    return None


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix/vector product for the 2D@1D, 2D@2D and 1D@2D cases."""
    ad, bd = a.data, b.data
    try:
        value = ad @ bd
    except ValueError as exc:
        raise ShapeMismatch(f"matmul {ad.shape} @ {bd.shape}") from exc
    tape = _tape_of(a, b)
    out = _result(value, tape)
    if tape is None:
        return out

    if ad.ndim == 2 and bd.ndim == 1:
        def rule(g, a=a, b=b, ad=ad, bd=bd):
            _accumulate(a, np.outer(g, bd), owned=True)
            _accumulate(b, ad.T @ g, owned=True)
    elif ad.ndim == 2 and bd.ndim == 2:
        def rule(g, a=a, b=b, ad=ad, bd=bd):
            _accumulate(a, g @ bd.T, owned=True)
            _accumulate(b, ad.T @ g, owned=True)
    elif ad.ndim == 1 and bd.ndim == 2:
        def rule(g, a=a, b=b, ad=ad, bd=bd):
            _accumulate(a, bd @ g, owned=True)
            _accumulate(b, np.outer(ad, g), owned=True)
    else:
        raise ShapeMismatch(f"unsupported matmul ranks {ad.ndim} @ {bd.ndim}")
    out.backward_rule = rule
    return out


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum; also broadcasts a vector over matrix rows."""
    ad, bd = a.data, b.data
    row_broadcast = ad.ndim == 2 and bd.ndim == 1 and ad.shape[1] == bd.shape[0]
    if not row_broadcast and ad.shape != bd.shape:
        raise ShapeMismatch(f"add {ad.shape} + {bd.shape}")
    tape = _tape_of(a, b)
    out = _result(ad + bd, tape)
    if tape is None:
        return out

    if row_broadcast:
        def rule(g, a=a, b=b):
            _accumulate(a, g, owned=False)
            _accumulate(b, g.sum(axis=0), owned=True)
    else:
        def rule(g, a=a, b=b):
            _accumulate(a, g, owned=False)
            _accumulate(b, g, owned=False)
    out.backward_rule = rule
    return out


def sub(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape != b.data.shape:
        raise ShapeMismatch(f"sub {a.data.shape} - {b.data.shape}")
    tape = _tape_of(a, b)
    out = _result(a.data - b.data, tape)
    if tape is None:
        return out

    def rule(g, a=a, b=b):
        _accumulate(a, g, owned=False)
        _accumulate(b, -g, owned=True)

    out.backward_rule = rule
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product of same-shape tensors."""
    if a.data.shape != b.data.shape:
        raise ShapeMismatch(f"mul {a.data.shape} * {b.data.shape}")
    tape = _tape_of(a, b)
    out = _result(a.data * b.data, tape)
    if tape is None:
        return out

    def rule(g, a=a, b=b):
        _accumulate(a, g * b.data, owned=True)
        _accumulate(b, g * a.data, owned=True)

    out.backward_rule = rule
    return out


def div(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise quotient of same-shape tensors."""
    if a.data.shape != b.data.shape:
        raise ShapeMismatch(f"div {a.data.shape} / {b.data.shape}")
    tape = _tape_of(a, b)
    value = a.data / b.data
    out = _result(value, tape)
    if tape is None:
        return out

    def rule(g, a=a, b=b, value=value):
        _accumulate(a, g / b.data, owned=True)
        _accumulate(b, -g * value / b.data, owned=True)

    out.backward_rule = rule
    return out


def scale(x: Tensor, s: float) -> Tensor:
    tape = x.tape
    out = _result(x.data * s, tape)
    if tape is None:
        return out

    def rule(g, x=x, s=s):
        _accumulate(x, g * s, owned=True)

    out.backward_rule = rule
    return out


def add_scalar(x: Tensor, s: float) -> Tensor:
    tape = x.tape
    out = _result(x.data + s, tape)
    if tape is None:
        return out

    def rule(g, x=x):
        _accumulate(x, g, owned=False)

    out.backward_rule = rule
    return out


def rsub_scalar(s: float, x: Tensor) -> Tensor:
    """s - x, used for complements like 1 - p."""
    tape = x.tape
    out = _result(s - x.data, tape)
    if tape is None:
        return out

    def rule(g, x=x):
        _accumulate(x, -g, owned=True)

    out.backward_rule = rule
    return out


def concat(parts: Sequence[Tensor], axis: int = 0) -> Tensor:
    datas = [p.data for p in parts]
    try:
        value = np.concatenate(datas, axis=axis)
    except ValueError as exc:
        raise ShapeMismatch(f"concat of shapes {[d.shape for d in datas]}") from exc
    tape = _tape_of(*parts)
    out = _result(value, tape)
    if tape is None:
        return out

    offsets = np.cumsum([0] + [d.shape[axis] for d in datas])

    def rule(g, parts=tuple(parts), offsets=offsets, axis=axis):
        for i, p in enumerate(parts):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(offsets[i], offsets[i + 1])
            _accumulate(p, g[tuple(sl)], owned=False)

    out.backward_rule = rule
    return out


def narrow(x: Tensor, start: int, stop: int, axis: int = 0) -> Tensor:
    """Contiguous slice along one axis (a view in the forward pass)."""
    sl = [slice(None)] * x.data.ndim
    sl[axis] = slice(start, stop)
    sl = tuple(sl)
    tape = x.tape
    out = _result(x.data[sl], tape)
    if tape is None:
        return out

    def rule(g, x=x, sl=sl):
        if x.tape is None and x.backward_rule is None:
            return
        if x.grad is None:
            x.grad = np.zeros_like(x.data)
        x.grad[sl] += g

    out.backward_rule = rule
    return out


def stack_rows(parts: Sequence[Tensor]) -> Tensor:
    """Stack equal-length vectors into a matrix, one row each."""
    datas = [p.data for p in parts]
    try:
        value = np.stack(datas, axis=0)
    except ValueError as exc:
        raise ShapeMismatch(f"stack of shapes {[d.shape for d in datas]}") from exc
    tape = _tape_of(*parts)
    out = _result(value, tape)
    if tape is None:
        return out

    def rule(g, parts=tuple(parts)):
        for i, p in enumerate(parts):
            _accumulate(p, g[i], owned=False)

    out.backward_rule = rule
    return out


def row(x: Tensor, index: int) -> Tensor:
    """Select one row of a matrix (embedding lookup)."""
    tape = x.tape
    out = _result(x.data[index], tape)
    if tape is None:
        return out

    def rule(g, x=x, index=index):
        if x.tape is None and x.backward_rule is None:
            return
        if x.grad is None:
            x.grad = np.zeros_like(x.data)
        x.grad[index] += g

    out.backward_rule = rule
    return out


def rows_pick(x: Tensor, indices: np.ndarray) -> Tensor:
    """out[i] = x[i, indices[i]], the per-row class pick used by focal loss."""
    idx = np.asarray(indices, dtype=np.intp)
    if x.data.ndim != 2 or idx.shape != (x.data.shape[0],):
        raise ShapeMismatch(f"rows_pick on {x.data.shape} with {idx.shape}")
    arange = np.arange(x.data.shape[0])
    tape = x.tape
    out = _result(x.data[arange, idx], tape)
    if tape is None:
        return out

    def rule(g, x=x, arange=arange, idx=idx):
        if x.tape is None and x.backward_rule is None:
            return
        if x.grad is None:
            x.grad = np.zeros_like(x.data)
        np.add.at(x.grad, (arange, idx), g)

    out.backward_rule = rule
    return out


def take(x: Tensor, indices: Sequence[int]) -> Tensor:
    """Gather selected entries of a vector."""
    idx = np.asarray(indices, dtype=np.intp)
    tape = x.tape
    out = _result(x.data[idx], tape)
    if tape is None:
        return out

    def rule(g, x=x, idx=idx):
        if x.tape is None and x.backward_rule is None:
            return
        if x.grad is None:
            x.grad = np.zeros_like(x.data)
        np.add.at(x.grad, idx, g)

    out.backward_rule = rule
    return out


def sigmoid(x: Tensor) -> Tensor:
    value = 1.0 / (1.0 + np.exp(-x.data))
    tape = x.tape
    out = _result(value, tape)
    if tape is None:
        return out

    def rule(g, x=x, value=value):
        _accumulate(x, g * value * (1.0 - value), owned=True)

    out.backward_rule = rule
    return out


def tanh(x: Tensor) -> Tensor:
    value = np.tanh(x.data)
    tape = x.tape
    out = _result(value, tape)
    if tape is None:
        return out

    def rule(g, x=x, value=value):
        _accumulate(x, g * (1.0 - value * value), owned=True)

    out.backward_rule = rule
    return out


def softmax(x: Tensor) -> Tensor:
    """Softmax over the last axis (a vector, or each row of a matrix)."""
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    value = e / e.sum(axis=-1, keepdims=True)
    tape = x.tape
    out = _result(value, tape)
    if tape is None:
        return out

    def rule(g, x=x, value=value):
        inner = (g * value).sum(axis=-1, keepdims=True)
        _accumulate(x, (g - inner) * value, owned=True)

    out.backward_rule = rule
    return out


def log(x: Tensor) -> Tensor:
    tape = x.tape
    out = _result(np.log(x.data), tape)
    if tape is None:
        return out

    def rule(g, x=x):
        _accumulate(x, g / x.data, owned=True)

    out.backward_rule = rule
    return out


def power(x: Tensor, exponent: float) -> Tensor:
    """Elementwise x ** exponent for a fixed scalar exponent."""
    value = x.data ** exponent
    tape = x.tape
    out = _result(value, tape)
    if tape is None:
        return out

    if exponent == 0.0:
        rule = None  # derivative is identically zero
    elif exponent == 1.0:
        def rule(g, x=x):
            _accumulate(x, g, owned=False)
    else:
        def rule(g, x=x, exponent=exponent):
            _accumulate(x, g * exponent * x.data ** (exponent - 1.0), owned=True)

    out.backward_rule = rule
    return out


def clip_min(x: Tensor, floor: float) -> Tensor:
    """max(x, floor); gradient flows only through unclipped entries."""
    value = np.maximum(x.data, floor)
    tape = x.tape
    out = _result(value, tape)
    if tape is None:
        return out

    mask = x.data > floor

    def rule(g, x=x, mask=mask):
        _accumulate(x, g * mask, owned=True)

    out.backward_rule = rule
    return out


def ssum(x: Tensor) -> Tensor:
    """Sum of all entries, as a scalar tensor."""
    tape = x.tape
    out = _result(x.data.sum(), tape)
    if tape is None:
        return out

    def rule(g, x=x):
        if x.tape is None and x.backward_rule is None:
            return
        if x.grad is None:
            x.grad = np.full_like(x.data, float(g))
        else:
            x.grad += float(g)

    out.backward_rule = rule
    return out


def sum_axis0(x: Tensor) -> Tensor:
    """Column sums of a matrix."""
    if x.data.ndim != 2:
        raise ShapeMismatch(f"sum_axis0 on shape {x.data.shape}")
    tape = x.tape
    out = _result(x.data.sum(axis=0), tape)
    if tape is None:
        return out

    def rule(g, x=x):
        _accumulate(x, np.broadcast_to(g, x.data.shape), owned=False)

    out.backward_rule = rule
    return out


def mean(x: Tensor) -> Tensor:
    return scale(ssum(x), 1.0 / x.data.size)


def lstm_cell(
    x: Tensor,
    h_prev: Tensor,
    c_prev: Tensor,
    weights: tuple[Tensor, Tensor, Tensor],
) -> tuple[Tensor, Tensor]:
    """One step of a standard LSTM with fused gate blocks.

    ``weights`` is (W, U, b) where W is (4H, D), U is (4H, H) and b is (4H,),
    laid out as the stacked [input, forget, output, update] gate blocks.
    """
    W, U, b = weights
    hidden = h_prev.data.shape[0]
    if W.data.shape[0] != 4 * hidden or U.data.shape != (4 * hidden, hidden):
        raise ShapeMismatch(
            f"lstm_cell weights {W.data.shape}/{U.data.shape} vs hidden {hidden}"
        )
    pre = add(add(matmul(W, x), matmul(U, h_prev)), b)
    i = sigmoid(narrow(pre, 0, hidden))
    f = sigmoid(narrow(pre, hidden, 2 * hidden))
    o = sigmoid(narrow(pre, 2 * hidden, 3 * hidden))
    u = tanh(narrow(pre, 3 * hidden, 4 * hidden))
    c = add(mul(f, c_prev), mul(i, u))
    h = mul(o, tanh(c))
    return h, c


def dropout(
    x: Tensor,
    p: float,
    seed: int | None = None,
    training: bool = True,
) -> Tensor:
    """Inverted dropout; identity when not training or p == 0.

    ``seed=None`` draws a fresh mask from OS entropy, which is what makes an
    unseeded training-mode loss non-deterministic.
    """
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability {p} outside [0, 1)")
    if not training or p == 0.0:
        return x
    rng = np.random.default_rng(seed)
    mask = (rng.random(x.data.shape) >= p) / (1.0 - p)
    tape = x.tape
    out = _result(x.data * mask, tape)
    if tape is None:
        return out

    def rule(g, x=x, mask=mask):
        _accumulate(x, g * mask, owned=True)

    out.backward_rule = rule
    return out


def grad_check_report(
    loss_fn: Callable[[dict[str, Tensor]], Tensor],
    params: dict[str, np.ndarray],
    eps: float = 1e-5,
    samples_per_tensor: int = 4,
    seed: int = 0,
    rel_floor: float = 1e-3,
) -> tuple[float, dict[str, float]]:
    """Compare tape gradients against central finite differences.

    ``loss_fn`` maps a dict of named parameter tensors to a scalar tensor and
    must be deterministic; a sampled subset of coordinates of every parameter
    tensor is perturbed by ``eps``.  Relative errors are guarded by
    ``rel_floor`` so exactly-zero gradients compare cleanly.  Returns the
    worst error overall and the worst error per tensor.
    """
    arrays = {k: np.asarray(v, dtype=np.float64) for k, v in params.items()}

    def evaluate() -> float:
        wrapped = {k: leaf(v, None) for k, v in arrays.items()}
        return float(loss_fn(wrapped).data)

    first, second = evaluate(), evaluate()
    if first != second:
        raise NonDeterministicLoss(f"loss evaluated to {first} then {second}")

    tape = Tape()
    wrapped = {k: leaf(v, tape) for k, v in arrays.items()}
    out = loss_fn(wrapped)
    tape.backward(out)
    grads = {
        k: (w.grad if w.grad is not None else np.zeros_like(w.data))
        for k, w in wrapped.items()
    }

    rng = np.random.default_rng(seed)
    per_tensor: dict[str, float] = {}
    worst = 0.0
    for name in sorted(arrays):
        flat = arrays[name].reshape(-1)
        gflat = grads[name].reshape(-1)
        count = min(samples_per_tensor, flat.size)
        picks = rng.choice(flat.size, size=count, replace=False)
        tensor_worst = 0.0
        for idx in picks:
            saved = flat[idx]
            flat[idx] = saved + eps
            plus = evaluate()
            flat[idx] = saved - eps
            minus = evaluate()
            flat[idx] = saved
            fd = (plus - minus) / (2.0 * eps)
            an = gflat[idx]
            err = abs(an - fd) / max(abs(an), abs(fd), rel_floor)
            tensor_worst = max(tensor_worst, err)
        per_tensor[name] = tensor_worst
        worst = max(worst, tensor_worst)
    return worst, per_tensor


def grad_check(
    loss_fn: Callable[[dict[str, Tensor]], Tensor],
    params: dict[str, np.ndarray],
    eps: float = 1e-5,
    samples_per_tensor: int = 4,
    seed: int = 0,
) -> float:
    """Maximum guarded relative error between tape and finite-difference grads."""
    worst, _ = grad_check_report(
        loss_fn, params, eps=eps, samples_per_tensor=samples_per_tensor, seed=seed
    )
    return worst


def wrap_params(params: dict[str, np.ndarray], tape: Tape | None) -> dict[str, Tensor]:
    """Bind named parameter arrays to a tape (or to nothing, for inference)."""
    return {k: leaf(v, tape) for k, v in params.items()}


def collect_grads(
    wrapped: dict[str, Tensor], into: dict[str, np.ndarray] | None = None
) -> dict[str, np.ndarray]:
    """Copy leaf gradients out of a finished tape, accumulating into ``into``."""
    if into is None:
        into = {k: np.zeros_like(t.data) for k, t in wrapped.items()}
    for k, t in wrapped.items():
        if t.grad is not None:
            into[k] += t.grad
    return into
