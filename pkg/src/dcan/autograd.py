"""Minimal reverse-mode automatic differentiation on float64 numpy arrays.

Tensors use channels-last layout [N, H, W, C] for rank-4 data. A Tape records
op nodes in execution order during a forward pass; backward() replays them in
exact reverse order, accumulating gradients additively across fan-out. Tapes
are rebuilt per forward pass; there is no graph reuse.
"""

from __future__ import annotations

import numpy as np


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


class Tensor:
    """An n-dimensional float64 array with an optional gradient buffer.

    Values are immutable by convention after creation; only `grad` mutates
    during a backward pass.
    """

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def zero_grad(self):
        self.grad = None

    def accumulate_grad(self, g: np.ndarray):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


class Parameter:
    """A trainable tensor plus AdamW moment accumulators and step counter."""

    __slots__ = ("tensor", "m", "v", "step")

    def __init__(self, data):
        self.tensor = Tensor(data, requires_grad=True)
        self.m = np.zeros_like(self.tensor.data)
        self.v = np.zeros_like(self.tensor.data)
        self.step = 0

    @property
    def data(self):
        return self.tensor.data

    @data.setter
    def data(self, value):
        self.tensor.data = np.asarray(value, dtype=np.float64)

    @property
    def grad(self):
        return self.tensor.grad


class _Node:
    """One recorded op: output tensor, input tensors, backward rule."""

    __slots__ = ("output", "inputs", "backward_fn")

    def __init__(self, output, inputs, backward_fn):
        self.output = output
        self.inputs = inputs
        self.backward_fn = backward_fn


class Tape:
    """Ordered record of op nodes for one forward pass.

    Use as a context manager; ops executed inside record themselves.
    """

    def __init__(self):
        self.nodes: list[_Node] = []

    def __enter__(self):
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, *exc):
        _TAPE_STACK.pop()
        return False


_TAPE_STACK: list[Tape] = []


def _record(output: Tensor, inputs, backward_fn):
    if _TAPE_STACK and any(t.requires_grad for t in inputs):
        output.requires_grad = True
        _TAPE_STACK[-1].nodes.append(_Node(output, inputs, backward_fn))
    return output


def backward(loss: Tensor, tape: Tape) -> None:
    """Propagate dLoss/dTensor to every requires_grad tensor on the tape.

    Gradients accumulate additively across fan-out and across calls; callers
    (the optimizer) are responsible for zeroing parameter gradients.
    """
    if loss.size != 1:
        raise ShapeError(f"backward requires a scalar loss, got shape {loss.shape}")
    loss.accumulate_grad(np.ones_like(loss.data))
    for node in reversed(tape.nodes):
        if node.output.grad is None:
            continue
        node.backward_fn(node.output.grad)


# ---------------------------------------------------------------------------
# ops


def _same_pad(extent: int, k: int, stride: int):
    out = -(-extent // stride)  # ceil division
    total = max((out - 1) * stride + k - extent, 0)
    lo = total // 2
    return out, lo, total - lo  # extra pixel goes to the bottom/right


def conv2d(x: Tensor, kernel: Tensor, bias: Tensor, stride: int = 1,
           padding: str = "same") -> Tensor:
    """2-D convolution (cross-correlation), NHWC input, [k,k,Cin,Cout] kernel."""
    if x.data.ndim != 4:
        raise ShapeError(f"conv2d input must be rank 4, got rank {x.data.ndim}")
    if kernel.data.ndim != 4:
        raise ShapeError(f"conv2d kernel must be rank 4, got rank {kernel.data.ndim}")
    n, h, w, cin = x.shape
    kh, kw, kcin, cout = kernel.shape
    if kcin != cin:
        raise ShapeError(f"conv2d channel axis mismatch: input has {cin}, kernel expects {kcin}")
    if bias.shape != (cout,):
        raise ShapeError(f"conv2d bias axis mismatch: expected ({cout},), got {bias.shape}")
    if kh < 1 or stride < 1:
        raise ValueError("conv2d requires kernel size >= 1 and stride >= 1")
    if padding == "same":
        ho, pt, pb = _same_pad(h, kh, stride)
        wo, pl, pr = _same_pad(w, kw, stride)
        xp = np.pad(x.data, ((0, 0), (pt, pb), (pl, pr), (0, 0)))
    elif padding == "valid":
        ho = (h - kh) // stride + 1
        wo = (w - kw) // stride + 1
        if ho < 1 or wo < 1:
            raise ShapeError(f"conv2d valid padding: kernel {kh}x{kw} exceeds input {h}x{w}")
        pt = pl = 0
        xp = x.data
    else:
        raise ValueError(f"unknown padding {padding!r}")

    # im2col: gather k*k shifted views, flatten to a single matmul
    cols = np.empty((n, ho, wo, kh, kw, cin))
    for i in range(kh):
        for j in range(kw):
            cols[:, :, :, i, j, :] = xp[:, i:i + ho * stride:stride,
                                        j:j + wo * stride:stride, :]
    flat = cols.reshape(n * ho * wo, kh * kw * cin)
    wmat = kernel.data.reshape(kh * kw * cin, cout)
    out = Tensor((flat @ wmat + bias.data).reshape(n, ho, wo, cout))

    def bwd(g):
        gflat = g.reshape(n * ho * wo, cout)
        if kernel.requires_grad:
            kernel.accumulate_grad((flat.T @ gflat).reshape(kernel.shape))
        if bias.requires_grad:
            bias.accumulate_grad(gflat.sum(axis=0))
        if x.requires_grad:
            dcols = (gflat @ wmat.T).reshape(n, ho, wo, kh, kw, cin)
            dxp = np.zeros_like(xp)
            for i in range(kh):
                for j in range(kw):
                    dxp[:, i:i + ho * stride:stride,
                        j:j + wo * stride:stride, :] += dcols[:, :, :, i, j, :]
            dx = dxp[:, pt:pt + h, pl:pl + w, :] if padding == "same" else dxp
            x.accumulate_grad(dx)

    return _record(out, (x, kernel, bias), bwd)


def dense(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """Affine map on rank-2 input: x @ weight + bias."""
    if x.data.ndim != 2:
        raise ShapeError(f"dense input must be rank 2, got rank {x.data.ndim}")
    n, din = x.shape
    if weight.shape[0] != din:
        raise ShapeError(f"dense feature axis mismatch: input has {din}, weight expects {weight.shape[0]}")
    out = Tensor(x.data @ weight.data + bias.data)

    def bwd(g):
        if weight.requires_grad:
            weight.accumulate_grad(x.data.T @ g)
        if bias.requires_grad:
            bias.accumulate_grad(g.sum(axis=0))
        if x.requires_grad:
            x.accumulate_grad(g @ weight.data.T)

    return _record(out, (x, weight, bias), bwd)


def relu(x: Tensor) -> Tensor:
    out = Tensor(np.maximum(x.data, 0.0))
    mask = x.data > 0.0  # relu'(0) := 0

    def bwd(g):
        if x.requires_grad:
            x.accumulate_grad(g * mask)

    return _record(out, (x,), bwd)


def sigmoid(x: Tensor) -> Tensor:
    # split by sign for overflow-free evaluation
    d = x.data
    s = np.where(d >= 0, 1.0 / (1.0 + np.exp(-np.abs(d))),
                 np.exp(-np.abs(d)) / (1.0 + np.exp(-np.abs(d))))
    out = Tensor(s)

    def bwd(g):
        if x.requires_grad:
            x.accumulate_grad(g * s * (1.0 - s))

    return _record(out, (x,), bwd)


def pointwise_activation(kind: str, x: Tensor) -> Tensor:
    if kind == "relu":
        return relu(x)
    if kind == "sigmoid":
        return sigmoid(x)
    raise ValueError(f"unknown activation {kind!r}")


def spatial_softmax(x: Tensor) -> Tensor:
    """Softmax over the H*W positions of each (sample, channel) slice."""
    if x.data.ndim != 4:
        raise ShapeError(f"spatial_softmax input must be rank 4, got rank {x.data.ndim}")
    n, h, w, c = x.shape
    flat = x.data.reshape(n, h * w, c)
    z = flat - flat.max(axis=1, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=1, keepdims=True)
    out = Tensor(s.reshape(n, h, w, c))

    def bwd(g):
        if x.requires_grad:
            gf = g.reshape(n, h * w, c)
            dot = (gf * s).sum(axis=1, keepdims=True)
            x.accumulate_grad((s * (gf - dot)).reshape(n, h, w, c))

    return _record(out, (x,), bwd)


def softmax_rows(x: Tensor) -> Tensor:
    """Row softmax on rank-2 input (class probabilities)."""
    if x.data.ndim != 2:
        raise ShapeError(f"softmax_rows input must be rank 2, got rank {x.data.ndim}")
    z = x.data - x.data.max(axis=1, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=1, keepdims=True)
    out = Tensor(s)

    def bwd(g):
        if x.requires_grad:
            dot = (g * s).sum(axis=1, keepdims=True)
            x.accumulate_grad(s * (g - dot))

    return _record(out, (x,), bwd)


def elementwise(op: str, a: Tensor, b: Tensor) -> Tensor:
    """Elementwise mul/add on identical shapes; no broadcasting."""
    if a.shape != b.shape:
        raise ShapeError(f"elementwise {op}: shape mismatch {a.shape} vs {b.shape}")
    if op == "mul":
        out = Tensor(a.data * b.data)

        def bwd(g):
            if a.requires_grad:
                a.accumulate_grad(g * b.data)
            if b.requires_grad:
                b.accumulate_grad(g * a.data)
    elif op == "add":
        out = Tensor(a.data + b.data)

        def bwd(g):
            if a.requires_grad:
                a.accumulate_grad(g)
            if b.requires_grad:
                b.accumulate_grad(g)
    else:
        raise ValueError(f"unknown elementwise op {op!r}")
    return _record(out, (a, b), bwd)


def global_average_pool(x: Tensor) -> Tensor:
    """Per-channel spatial mean: [N,H,W,C] -> [N,C]."""
    if x.data.ndim != 4:
        raise ShapeError(f"global_average_pool input must be rank 4, got rank {x.data.ndim}")
    n, h, w, c = x.shape
    out = Tensor(x.data.mean(axis=(1, 2)))

    def bwd(g):
        if x.requires_grad:
            x.accumulate_grad(np.broadcast_to(g[:, None, None, :] / (h * w), x.shape).copy())

    return _record(out, (x,), bwd)


def dropout(x: Tensor, rate: float, training: bool,
            rng: np.random.Generator | None = None) -> Tensor:
    """Inverted dropout; exact identity in inference mode."""
    if rate >= 1.0 or rate < 0.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        out = Tensor(x.data)

        def bwd(g):
            if x.requires_grad:
                x.accumulate_grad(g)

        return _record(out, (x,), bwd)
    if rng is None:
        raise ValueError("dropout in training mode requires a seeded generator")
    mask = (rng.random(x.shape) >= rate) / (1.0 - rate)
    out = Tensor(x.data * mask)

    def bwd(g):
        if x.requires_grad:
            x.accumulate_grad(g * mask)

    return _record(out, (x,), bwd)


def tsum(x: Tensor) -> Tensor:
    """Sum of all elements (scalar)."""
    out = Tensor(x.data.sum())

    def bwd(g):
        if x.requires_grad:
            x.accumulate_grad(np.full(x.shape, float(g)))

    return _record(out, (x,), bwd)


# ---------------------------------------------------------------------------
# finite-difference gradient checking


def grad_check(model_fn, params: dict[str, Parameter], h: float = 1e-5,
               tol: float = 1e-4) -> dict:
    """Compare analytic gradients of model_fn() against central differences.

    model_fn must be deterministic (dropout disabled) and return a scalar
    Tensor when run under the tape it is handed. Returns a report mapping
    parameter name -> max relative error, plus an overall pass flag.
    """
    base = None
    with Tape() as tape:
        loss = model_fn()
        base = float(loss.data)
    for p in params.values():
        p.tensor.zero_grad()
    backward(loss, tape)
    with Tape():
        if abs(float(model_fn().data) - base) > 1e-12 * max(1.0, abs(base)):
            raise ValueError("model_fn is nondeterministic; disable dropout / fix seeds")

    report = {}
    for name, p in params.items():
        analytic = p.grad if p.grad is not None else np.zeros_like(p.data)
        flat = p.data.ravel()
        worst = 0.0
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = float(model_fn().data)
            flat[i] = orig - h
            fm = float(model_fn().data)
            flat[i] = orig
            numeric = (fp - fm) / (2.0 * h)
            a = analytic.ravel()[i]
            rel = abs(a - numeric) / max(1e-8, abs(a) + abs(numeric))
            worst = max(worst, rel)
        report[name] = worst
    for p in params.values():
        p.tensor.zero_grad()
    return {"per_parameter": report,
            "max_relative_error": max(report.values()) if report else 0.0,
            "passed": all(v < tol for v in report.values())}
