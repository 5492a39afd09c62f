"""Cross-entropy loss, AdamW update, and the unit-norm column projection."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autograd import Parameter, ShapeError, Tensor, _record

LOG_CLAMP = 1e-12  # keeps log finite on saturated softmax outputs


@dataclass
class AdamWConfig:
    eta: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    weight_decay: float = 1e-4
    bias_correction: bool = True

    def __post_init__(self):
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ValueError("betas must lie in [0, 1)")
        if self.eta <= 0.0 or self.epsilon <= 0.0 or self.weight_decay < 0.0:
            raise ValueError("eta and epsilon must be positive, weight_decay non-negative")


def cross_entropy(probabilities: Tensor, labels: np.ndarray) -> Tensor:
    """Mean negative log-likelihood against one-hot labels.

    labels is a constant [N, C] one-hot array; the loss differentiates
    through the softmax that produced `probabilities`.
    """
    y = np.asarray(labels, dtype=np.float64)
    if probabilities.shape != y.shape:
        raise ShapeError(f"cross_entropy shape mismatch: {probabilities.shape} vs {y.shape}")
    if not (np.all((y == 0.0) | (y == 1.0)) and np.allclose(y.sum(axis=1), 1.0)):
        raise ValueError("labels must be one-hot")
    n = y.shape[0]
    # clamp from below only so perfect predictions give exactly zero loss
    p = np.maximum(probabilities.data, LOG_CLAMP)
    out = Tensor(-(y * np.log(p)).sum() / n)

    def bwd(g):
        if probabilities.requires_grad:
            mask = probabilities.data > LOG_CLAMP
            probabilities.accumulate_grad(float(g) * np.where(mask, -y / p, 0.0) / n)

    return _record(out, (probabilities,), bwd)


def adamw_step(params: dict[str, Parameter] | list[Parameter],
               config: AdamWConfig) -> None:
    """One decoupled-weight-decay Adam step; zeroes gradients afterwards."""
    items = params.values() if isinstance(params, dict) else params
    for p in items:
        if p.grad is None:
            raise ValueError("adamw_step: parameter has no gradient; run backward first")
        g = p.grad
        p.step += 1
        p.m = config.beta1 * p.m + (1.0 - config.beta1) * g
        p.v = config.beta2 * p.v + (1.0 - config.beta2) * g * g
        if config.bias_correction:
            m_hat = p.m / (1.0 - config.beta1 ** p.step)
            v_hat = p.v / (1.0 - config.beta2 ** p.step)
        else:
            m_hat, v_hat = p.m, p.v
        p.tensor.data = p.data - config.eta * (
            m_hat / (np.sqrt(v_hat) + config.epsilon) + config.weight_decay * p.data)
        p.tensor.zero_grad()


def unit_norm_project(weight: Parameter | Tensor) -> None:
    """Rescale each column of a [Din, Dout] matrix to unit L2 norm, in place."""
    t = weight.tensor if isinstance(weight, Parameter) else weight
    if t.data.ndim != 2:
        raise ShapeError(f"unit_norm_project expects a rank-2 matrix, got rank {t.data.ndim}")
    norms = np.linalg.norm(t.data, axis=0)
    dead = np.flatnonzero(norms <= 1e-12)
    if dead.size:
        raise ValueError(f"unit_norm_project: zero column(s) at {dead.tolist()} (dead unit)")
    t.data = t.data / norms
