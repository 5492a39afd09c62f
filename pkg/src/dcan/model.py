"""Backbone stand-in, attention block, and regularized classification head.

The backbone is a small strided-conv stack emitting a channels-last feature
map; the head is GAP -> dense+relu -> dropout -> dense -> row softmax with an
optional unit-norm constraint on the dense weight columns.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field

import numpy as np

from .attention import AttentionMaps, DcaConfig, dca_forward, init_dca_params
from .autograd import (Parameter, ShapeError, Tensor, conv2d, dense, dropout,
                       global_average_pool, relu, softmax_rows)
from .optim import unit_norm_project

CHECKPOINT_MAGIC = b"DCAM"
CHECKPOINT_VERSION = 1


@dataclass
class BackboneConfig:
    input_size: int = 64
    blocks: list[tuple[int, int]] = field(default_factory=lambda: [(8, 2), (16, 2), (32, 2)])
    kernel: int = 3

    def __post_init__(self):
        self.blocks = [tuple(b) for b in self.blocks]
        side = self.input_size
        for _, stride in self.blocks:
            if side % stride != 0:
                raise ValueError(f"input_size {self.input_size} not divisible by strides {self.blocks}")
            side //= stride

    @property
    def feature_side(self) -> int:
        side = self.input_size
        for _, stride in self.blocks:
            side //= stride
        return side

    @property
    def feature_channels(self) -> int:
        return self.blocks[-1][0]


@dataclass
class HeadConfig:
    hidden_units: int = 64
    dropout_rate: float = 0.3
    num_classes: int = 2
    unit_norm: bool = True

    def __post_init__(self):
        if not (0.0 <= self.dropout_rate < 1.0):
            raise ValueError(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")
        if self.num_classes < 2:
            raise ValueError("num_classes must be >= 2")


def _uniform(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class DcaModel:
    """Backbone -> attention block -> head, with a flat named parameter dict."""

    def __init__(self, backbone: BackboneConfig, dca: DcaConfig, head: HeadConfig,
                 rng: np.random.Generator):
        if dca.channels != backbone.feature_channels:
            raise ValueError(f"attention channels {dca.channels} must match backbone "
                             f"output channels {backbone.feature_channels}")
        self.backbone = backbone
        self.dca = dca
        self.head = head
        self.params: dict[str, Parameter] = {}

        k = backbone.kernel
        cin = 3
        for i, (cout, _) in enumerate(backbone.blocks):
            self.params[f"backbone{i}_w"] = Parameter(_uniform(rng, (k, k, cin, cout), k * k * cin))
            self.params[f"backbone{i}_b"] = Parameter(np.zeros(cout))
            cin = cout
        for name, p in init_dca_params(dca, rng).items():
            self.params[f"dca_{name}"] = p
        d = backbone.feature_channels
        self.params["head_w1"] = Parameter(_uniform(rng, (d, head.hidden_units), d))
        self.params["head_b1"] = Parameter(np.zeros(head.hidden_units))
        self.params["head_w2"] = Parameter(_uniform(rng, (head.hidden_units, head.num_classes),
                                                    head.hidden_units))
        self.params["head_b2"] = Parameter(np.zeros(head.num_classes))
        if head.unit_norm:
            self.project_unit_norm()

    def project_unit_norm(self):
        if self.head.unit_norm:
            unit_norm_project(self.params["head_w1"])
            unit_norm_project(self.params["head_w2"])

    def dca_params(self) -> dict[str, Parameter]:
        return {k[len("dca_"):]: v for k, v in self.params.items() if k.startswith("dca_")}

    # ------------------------------------------------------------------
    # forward stages

    def backbone_forward(self, image: Tensor) -> Tensor:
        if image.data.ndim != 4:
            raise ShapeError(f"backbone input must be rank 4, got rank {image.data.ndim}")
        n, h, w, c = image.shape
        if h != w or h != self.backbone.input_size:
            raise ShapeError(f"backbone expects square {self.backbone.input_size}px input, got {h}x{w}")
        if c != 3:
            raise ShapeError(f"backbone expects 3 input channels, got {c}")
        x = image
        for i, (_, stride) in enumerate(self.backbone.blocks):
            x = relu(conv2d(x, self.params[f"backbone{i}_w"].tensor,
                            self.params[f"backbone{i}_b"].tensor,
                            stride=stride, padding="same"))
        return x

    def head_logits(self, f_dca: Tensor, training: bool = False,
                    rng: np.random.Generator | None = None) -> Tensor:
        pooled = global_average_pool(f_dca)
        hidden = relu(dense(pooled, self.params["head_w1"].tensor,
                            self.params["head_b1"].tensor))
        dropped = dropout(hidden, self.head.dropout_rate, training, rng)
        return dense(dropped, self.params["head_w2"].tensor, self.params["head_b2"].tensor)

    def head_forward(self, f_dca: Tensor, training: bool = False,
                     rng: np.random.Generator | None = None) -> Tensor:
        return softmax_rows(self.head_logits(f_dca, training, rng))

    def forward(self, image: Tensor, training: bool = False,
                rng: np.random.Generator | None = None) -> tuple[Tensor, AttentionMaps]:
        features = self.backbone_forward(image)
        f_dca, maps = dca_forward(features, self.dca, self.dca_params())
        return self.head_forward(f_dca, training, rng), maps

    # ------------------------------------------------------------------
    # checkpoint io: magic, version, length-prefixed JSON config, then
    # parameter blobs in declaration order (u64 count + little-endian f64s)

    def config_dict(self) -> dict:
        return {"backbone": {"input_size": self.backbone.input_size,
                             "blocks": [list(b) for b in self.backbone.blocks],
                             "kernel": self.backbone.kernel},
                "dca": asdict(self.dca),
                "head": asdict(self.head)}

    def save(self, path) -> None:
        blob = bytearray()
        blob += CHECKPOINT_MAGIC
        blob += struct.pack("<I", CHECKPOINT_VERSION)
        cfg = json.dumps(self.config_dict(), sort_keys=True).encode("utf-8")
        blob += struct.pack("<I", len(cfg)) + cfg
        for p in self.params.values():
            flat = np.ascontiguousarray(p.data, dtype="<f8").ravel()
            blob += struct.pack("<Q", flat.size) + flat.tobytes()
        with open(path, "wb") as fh:
            fh.write(blob)

    @classmethod
    def load(cls, path) -> "DcaModel":
        with open(path, "rb") as fh:
            raw = fh.read()
        if raw[:4] != CHECKPOINT_MAGIC:
            raise ValueError(f"not a model checkpoint: bad magic {raw[:4]!r}")
        (version,) = struct.unpack_from("<I", raw, 4)
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        (cfg_len,) = struct.unpack_from("<I", raw, 8)
        cfg = json.loads(raw[12:12 + cfg_len].decode("utf-8"))
        model = cls(BackboneConfig(**cfg["backbone"]), DcaConfig(**cfg["dca"]),
                    HeadConfig(**cfg["head"]), rng=np.random.default_rng(0))
        off = 12 + cfg_len
        for name, p in model.params.items():
            (count,) = struct.unpack_from("<Q", raw, off)
            off += 8
            if count != p.data.size:
                raise ValueError(f"checkpoint blob for {name} has {count} values, expected {p.data.size}")
            p.tensor.data = np.frombuffer(raw, dtype="<f8", count=count,
                                          offset=off).reshape(p.data.shape).copy()
            off += count * 8
        if off != len(raw):
            raise ValueError(f"checkpoint has {len(raw) - off} trailing bytes")
        return model
