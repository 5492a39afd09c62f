"""GradCAM++ saliency on the attended feature map, plus heatmap export.

The saliency target layer is the attention-weighted feature map (the block's
output); channel weights use the exponential-score closed form, which needs
only first-order gradients of the class logit.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .attention import AttentionMaps, dca_forward
from .autograd import Tape, Tensor, backward, elementwise, tsum
from .imaging import Image, write_ppm
from .model import DcaModel

PROVENANCES = ("gradcam++", "f_s", "f_g", "f_c", "f_a", "f_r")


@dataclass
class Heatmap:
    width: int
    height: int
    values: np.ndarray  # [height, width] floats in [0, 1]
    provenance: str
    flagged: bool = False  # true when the source gradient vanished everywhere


def _normalize(values: np.ndarray) -> np.ndarray:
    peak = values.max()
    return values / peak if peak > 0 else values


def _upscale(values: np.ndarray, width: int, height: int) -> np.ndarray:
    """Bilinear upscale with half-pixel centers (float field)."""
    h, w = values.shape
    ys = np.clip((np.arange(height) + 0.5) * (h / height) - 0.5, 0, h - 1)
    xs = np.clip((np.arange(width) + 0.5) * (w / width) - 0.5, 0, w - 1)
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    wy = (ys - y0)[:, None]
    wx = (xs - x0)[None, :]
    top = values[y0][:, x0] * (1 - wx) + values[y0][:, x1] * wx
    bot = values[y1][:, x0] * (1 - wx) + values[y1][:, x1] * wx
    return top * (1 - wy) + bot * wy


def gradcam_weights(activations: np.ndarray, gradients: np.ndarray) -> np.ndarray:
    """Per-pixel alpha map from [h,w,D] activations and logit gradients."""
    g2 = gradients ** 2
    g3 = g2 * gradients
    channel_sum = (activations * g3).sum(axis=(0, 1), keepdims=True)
    denom = 2.0 * g2 + channel_sum
    ok = np.abs(denom) > 1e-30
    return np.where(ok, g2 / np.where(ok, denom, 1.0), 0.0)


def gradcam_map(activations: np.ndarray, gradients: np.ndarray) -> np.ndarray:
    """relu-weighted channel combination; unnormalized [h, w] map."""
    alpha = gradcam_weights(activations, gradients)
    weights = (alpha * np.maximum(gradients, 0.0)).sum(axis=(0, 1))
    return np.maximum((activations * weights).sum(axis=2), 0.0)


def gradcam_pp(model: DcaModel, image: Tensor, target_class: int) -> Heatmap:
    """Saliency heatmap for one image (batch of 1), upscaled to image size."""
    if image.data.ndim != 4 or image.shape[0] != 1:
        raise ValueError("gradcam_pp expects a single-image batch [1,S,S,3]")
    onehot = np.zeros((1, model.head.num_classes))
    onehot[0, target_class] = 1.0
    with Tape() as tape:
        features = model.backbone_forward(image)
        f_dca, _ = dca_forward(features, model.dca, model.dca_params())
        logits = model.head_logits(f_dca, training=False)
        score = tsum(elementwise("mul", logits, Tensor(onehot)))
    backward(score, tape)
    grads = f_dca.grad.copy() if f_dca.grad is not None else np.zeros_like(f_dca.data)
    for p in model.params.values():
        p.tensor.zero_grad()

    size = model.backbone.input_size
    if not np.any(grads):
        return Heatmap(size, size, np.zeros((size, size)), "gradcam++", flagged=True)
    raw = gradcam_map(f_dca.data[0], grads[0])
    up = _upscale(raw, size, size)
    return Heatmap(size, size, _normalize(up), "gradcam++",
                   flagged=not np.any(raw > 0))


def attention_heatmap(maps: AttentionMaps, name: str, size: int) -> Heatmap:
    """Channel-mean of one retained attention map, upscaled and normalized."""
    t = getattr(maps, name)
    if t is None:
        raise ValueError(f"attention map {name} absent (branch disabled)")
    raw = np.maximum(t.data[0].mean(axis=2), 0.0)
    return Heatmap(size, size, _normalize(_upscale(raw, size, size)), name)


def export_heatmap(heatmap: Heatmap, base_image: Image, out_path) -> None:
    """Write <stem>.pgm (raw map) and <stem>.ppm (red overlay at 50% blend)."""
    if (heatmap.width, heatmap.height) != (base_image.width, base_image.height):
        raise ValueError(f"heatmap {heatmap.width}x{heatmap.height} does not match "
                         f"base image {base_image.width}x{base_image.height}")
    base = Path(out_path)
    stem = base.with_suffix("")
    gray = np.clip(np.rint(heatmap.values * 255.0), 0, 255).astype(np.uint8)
    Path(f"{stem}.pgm").write_bytes(write_ppm(Image(heatmap.width, heatmap.height, 1, gray)))

    rgb = base_image.pixels if base_image.channels == 3 else np.repeat(base_image.pixels, 3, axis=2)
    alpha = 0.5 * heatmap.values
    out = rgb.astype(np.float64).copy()
    out[..., 0] = np.floor((1.0 - alpha) * out[..., 0] + alpha * 255.0)
    Path(f"{stem}.ppm").write_bytes(write_ppm(
        Image(heatmap.width, heatmap.height, 3, np.clip(out, 0, 255).astype(np.uint8))))
