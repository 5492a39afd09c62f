"""Training pipeline: preprocessing, minibatch AdamW training, k-fold runs.

A run is deterministic in (RunConfig, dataset bytes): all randomness flows
from numpy SeedSequences derived from the configured seed.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .attention import DcaConfig
from .autograd import Tape, Tensor, backward
from .data import Sample, SyntheticConfig, kfold_split
from .imaging import ClaheConfig, read_ppm, resize_bilinear, clahe
from .metrics import EvalReport, FoldMetrics, confusion, metrics
from .model import BackboneConfig, DcaModel, HeadConfig
from .optim import AdamWConfig, adamw_step, cross_entropy


@dataclass
class RunConfig:
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    dca: DcaConfig = field(default_factory=lambda: DcaConfig(channels=32))
    head: HeadConfig = field(default_factory=HeadConfig)
    adamw: AdamWConfig = field(default_factory=AdamWConfig)
    clahe: ClaheConfig = field(default_factory=ClaheConfig)
    synthetic: SyntheticConfig = field(default_factory=SyntheticConfig)
    epochs: int = 15
    batch_size: int = 32
    k_folds: int = 5
    seed: int = 0
    data_dir: str = "data"
    output_dir: str = "out"

    _SECTIONS = {"backbone": BackboneConfig, "dca": DcaConfig, "head": HeadConfig,
                 "adamw": AdamWConfig, "clahe": ClaheConfig, "synthetic": SyntheticConfig}

    @classmethod
    def from_dict(cls, raw: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ValueError(f"unknown config key(s): {sorted(unknown)}")
        kwargs = {}
        for key, value in raw.items():
            section = cls._SECTIONS.get(key)
            if section is not None:
                sub_known = {f.name for f in fields(section)}
                sub_unknown = set(value) - sub_known
                if sub_unknown:
                    raise ValueError(f"unknown config key(s) in '{key}': {sorted(sub_unknown)}")
                kwargs[key] = section(**value)
            else:
                kwargs[key] = value
        return cls(**kwargs)

    @classmethod
    def from_json(cls, path) -> "RunConfig":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self) -> dict:
        return asdict(self)


# ---------------------------------------------------------------------------
# preprocessing


def preprocess_sample(path, clahe_cfg: ClaheConfig, input_size: int) -> np.ndarray:
    """PPM bytes -> CLAHE -> bilinear resize -> float [S,S,3] in [0,1]."""
    img = read_ppm(Path(path).read_bytes())
    img = clahe(img, clahe_cfg)
    img = resize_bilinear(img, input_size)
    pixels = img.pixels if img.channels == 3 else np.repeat(img.pixels, 3, axis=2)
    return pixels.astype(np.float64) / 255.0


def load_arrays(samples: list[Sample], clahe_cfg: ClaheConfig,
                input_size: int) -> tuple[np.ndarray, np.ndarray]:
    x = np.stack([preprocess_sample(s.path, clahe_cfg, input_size) for s in samples])
    y = np.array([s.label for s in samples], dtype=int)
    return x, y


# ---------------------------------------------------------------------------
# training / evaluation


def build_model(config: RunConfig, seed_seq: np.random.SeedSequence) -> DcaModel:
    return DcaModel(config.backbone, config.dca, config.head,
                    rng=np.random.default_rng(seed_seq))


def train_model(x: np.ndarray, y: np.ndarray, config: RunConfig,
                seed_seq: np.random.SeedSequence) -> DcaModel:
    """Minibatch AdamW training with per-step unit-norm projection."""
    init_seq, shuffle_seq, dropout_seq = seed_seq.spawn(3)
    model = build_model(config, init_seq)
    shuffle_rng = np.random.default_rng(shuffle_seq)
    dropout_rng = np.random.default_rng(dropout_seq)
    onehot = np.eye(config.head.num_classes)[y]

    n = len(y)
    for _ in range(config.epochs):
        order = shuffle_rng.permutation(n)
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            with Tape() as tape:
                probs, _ = model.forward(Tensor(x[idx]), training=True, rng=dropout_rng)
                loss = cross_entropy(probs, onehot[idx])
            backward(loss, tape)
            adamw_step(model.params, config.adamw)
            model.project_unit_norm()
    return model


def predict_proba(model: DcaModel, x: np.ndarray, batch_size: int = 32,
                  threads: int = 1) -> np.ndarray:
    """Inference probabilities; batches may run on a thread pool, with a
    deterministic ordered concatenation of results."""
    batches = [x[i:i + batch_size] for i in range(0, len(x), batch_size)]

    def infer(batch):
        probs, _ = model.forward(Tensor(batch), training=False)
        return probs.data

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(infer, batches))
    else:
        parts = [infer(b) for b in batches]
    return np.concatenate(parts, axis=0)


def evaluate(model: DcaModel, x: np.ndarray, y: np.ndarray,
             batch_size: int = 32, threads: int = 1) -> FoldMetrics:
    probs = predict_proba(model, x, batch_size, threads)
    cm = confusion(y, probs.argmax(axis=1), model.head.num_classes)
    return metrics(cm)


def run_cross_validation(samples: list[Sample], config: RunConfig,
                         threads: int = 1) -> tuple[EvalReport, list[DcaModel]]:
    """Train one model per fold; metrics come from the held-out fold only."""
    x, y = load_arrays(samples, config.clahe, config.backbone.input_size)
    plan = kfold_split(samples, config.k_folds, config.seed)
    fold_seqs = np.random.SeedSequence(config.seed).spawn(config.k_folds)

    report = EvalReport()
    models = []
    for fold in range(config.k_folds):
        tr = plan.train_indices(fold)
        va = plan.fold_indices(fold)
        model = train_model(x[tr], y[tr], config, fold_seqs[fold])
        report.folds.append(evaluate(model, x[va], y[va], config.batch_size, threads))
        models.append(model)
    return report, models
