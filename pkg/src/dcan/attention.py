"""Dynamic contextual attention block.

Three branches over a feature map F [N,H,W,D]:
  spatial  - conv(k) -> relu -> softmax over spatial positions
  gating   - 1x1 conv -> sigmoid
  refine   - conv(k) -> sigmoid, added to the combined map
Combined as F_c = F_s * F_g, F_r = F_c + F_a, F_dca = F_r * F. Each branch
can be toggled for ablation; a disabled branch contributes nothing and its
parameters are never touched.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autograd import (Parameter, ShapeError, Tensor, conv2d, elementwise,
                       relu, sigmoid, spatial_softmax)


@dataclass
class DcaConfig:
    channels: int
    spatial_kernel: int = 3
    refine_kernel: int = 3
    enable_spatial: bool = True
    enable_gated: bool = True
    enable_refine: bool = True

    def __post_init__(self):
        for k in (self.spatial_kernel, self.refine_kernel):
            if k < 1 or k % 2 == 0:
                raise ValueError(f"attention kernels must be odd and >= 1, got {k}")
        if not (self.enable_spatial or self.enable_gated):
            if self.enable_refine:
                raise ValueError("refinement requires at least one of spatial/gated enabled")
            raise ValueError("at least one attention branch must be enabled")


@dataclass
class AttentionMaps:
    """Intermediate maps retained for explanation; absent branches are None."""
    f_s: Tensor | None = None
    f_g: Tensor | None = None
    f_c: Tensor | None = None
    f_a: Tensor | None = None
    f_r: Tensor | None = None
    f_dca: Tensor | None = None

    def named(self) -> dict[str, Tensor]:
        out = {}
        for name in ("f_s", "f_g", "f_c", "f_a", "f_r"):
            t = getattr(self, name)
            if t is not None:
                out[name] = t
        return out


def _uniform_kernel(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def init_dca_params(config: DcaConfig, rng: np.random.Generator) -> dict[str, Parameter]:
    """Zero-mean uniform kernels scaled by 1/sqrt(fan_in), zero biases."""
    d = config.channels
    params = {}
    if config.enable_spatial:
        k = config.spatial_kernel
        params["spatial_w"] = Parameter(_uniform_kernel(rng, (k, k, d, d), k * k * d))
        params["spatial_b"] = Parameter(np.zeros(d))
    if config.enable_gated:
        params["gate_w"] = Parameter(_uniform_kernel(rng, (1, 1, d, d), d))
        params["gate_b"] = Parameter(np.zeros(d))
    if config.enable_refine:
        k = config.refine_kernel
        params["refine_w"] = Parameter(_uniform_kernel(rng, (k, k, d, d), k * k * d))
        params["refine_b"] = Parameter(np.zeros(d))
    return params


def _check_channels(f: Tensor, config: DcaConfig):
    if f.data.ndim != 4:
        raise ShapeError(f"attention input must be rank 4, got rank {f.data.ndim}")
    if f.shape[3] != config.channels:
        raise ShapeError(f"attention channel axis mismatch: input has {f.shape[3]}, "
                         f"config expects {config.channels}")


def spatial_branch(f: Tensor, config: DcaConfig, params: dict[str, Parameter]) -> Tensor:
    _check_channels(f, config)
    z = conv2d(f, params["spatial_w"].tensor, params["spatial_b"].tensor,
               stride=1, padding="same")
    return spatial_softmax(relu(z))


def gating_branch(f: Tensor, config: DcaConfig, params: dict[str, Parameter]) -> Tensor:
    _check_channels(f, config)
    z = conv2d(f, params["gate_w"].tensor, params["gate_b"].tensor,
               stride=1, padding="same")
    return sigmoid(z)


def refine_branch(f: Tensor, config: DcaConfig, params: dict[str, Parameter]) -> Tensor:
    _check_channels(f, config)
    z = conv2d(f, params["refine_w"].tensor, params["refine_b"].tensor,
               stride=1, padding="same")
    return sigmoid(z)


def dca_forward(f: Tensor, config: DcaConfig,
                params: dict[str, Parameter]) -> tuple[Tensor, AttentionMaps]:
    """Apply the attention block; returns attended map plus all intermediates."""
    _check_channels(f, config)
    maps = AttentionMaps()
    if config.enable_spatial:
        maps.f_s = spatial_branch(f, config, params)
    if config.enable_gated:
        maps.f_g = gating_branch(f, config, params)

    if maps.f_s is not None and maps.f_g is not None:
        maps.f_c = elementwise("mul", maps.f_s, maps.f_g)
    elif maps.f_s is not None:
        maps.f_c = maps.f_s  # single-branch ablation: combined map is the branch map
    else:
        maps.f_c = maps.f_g

    if config.enable_refine:
        maps.f_a = refine_branch(f, config, params)
        maps.f_r = elementwise("add", maps.f_c, maps.f_a)
    else:
        maps.f_r = maps.f_c

    maps.f_dca = elementwise("mul", maps.f_r, f)
    return maps.f_dca, maps
