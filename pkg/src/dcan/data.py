"""Synthetic endoscopy-like corpus, directory loader, stratified k-fold.

Abnormal images carry one elliptical blob with a hue distinct from the
mucosa-pink background; BOTH classes receive bright specular highlight
spots so illumination cannot serve as a label shortcut. Generation is a
pure function of the config (seeded PCG64).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .imaging import Image, write_ppm

CLASS_NAMES = ("normal", "abnormal")  # label 0, label 1


@dataclass
class SyntheticConfig:
    count: int = 100
    size: int = 64
    abnormal_fraction: float = 0.5
    blob_radius_range: tuple[float, float] = (0.08, 0.25)
    highlight_count_range: tuple[int, int] = (0, 4)
    noise_std: float = 0.02
    seed: int = 0

    def __post_init__(self):
        self.blob_radius_range = tuple(self.blob_radius_range)
        self.highlight_count_range = tuple(self.highlight_count_range)
        if not (0.0 < self.abnormal_fraction < 1.0):
            raise ValueError("abnormal_fraction must be in (0, 1)")
        lo, hi = self.blob_radius_range
        if not (0.0 < lo <= hi < 0.5):
            raise ValueError("blob radii must lie within (0, 0.5) of the image side")


@dataclass
class Sample:
    path: str
    label: int
    bbox: tuple[int, int, int, int] | None = None  # x0,y0,x1,y1; abnormal only


@dataclass
class FoldPlan:
    k: int
    assignments: list[int]  # sample index -> fold id
    seed: int

    def fold_indices(self, fold: int) -> list[int]:
        return [i for i, f in enumerate(self.assignments) if f == fold]

    def train_indices(self, fold: int) -> list[int]:
        return [i for i, f in enumerate(self.assignments) if f != fold]


BACKGROUND_RGB = np.array([185.0, 105.0, 110.0])  # mucosa pink
BLOB_RGB = np.array([150.0, 170.0, 70.0])  # olive blob, distinct hue


def _render_image(rng: np.random.Generator, config: SyntheticConfig,
                  abnormal: bool) -> tuple[Image, tuple[int, int, int, int] | None]:
    s = config.size
    yy, xx = np.mgrid[0:s, 0:s].astype(np.float64)

    # smooth illumination gradient in a random direction
    theta = rng.uniform(0, 2 * np.pi)
    ramp = (np.cos(theta) * xx + np.sin(theta) * yy) / s - 0.5
    img = BACKGROUND_RGB[None, None, :] + (rng.uniform(10, 35) * ramp)[..., None]
    img = img + rng.normal(0.0, 6.0, size=(s, s, 1))  # background texture

    bbox = None
    if abnormal:
        rx = rng.uniform(*config.blob_radius_range) * s
        ry = rng.uniform(*config.blob_radius_range) * s
        cx = rng.uniform(rx + 1, s - rx - 1)
        cy = rng.uniform(ry + 1, s - ry - 1)
        angle = rng.uniform(0, np.pi)
        ca, sa = np.cos(angle), np.sin(angle)
        u = (xx - cx) * ca + (yy - cy) * sa
        v = -(xx - cx) * sa + (yy - cy) * ca
        dist = np.sqrt((u / rx) ** 2 + (v / ry) ** 2)
        soft = np.clip(1.2 - dist, 0.0, 1.0)[..., None]  # soft edge
        img = img * (1 - soft) + BLOB_RGB[None, None, :] * soft
        ext = np.abs(ca) * rx + np.abs(sa) * ry, np.abs(sa) * rx + np.abs(ca) * ry
        x0 = max(int(np.floor(cx - ext[0])), 0)
        x1 = min(int(np.ceil(cx + ext[0])), s - 1)
        y0 = max(int(np.floor(cy - ext[1])), 0)
        y1 = min(int(np.ceil(cy + ext[1])), s - 1)
        bbox = (x0, y0, x1, y1)

    # specular highlights in both classes (illumination confounder)
    n_high = int(rng.integers(config.highlight_count_range[0],
                              config.highlight_count_range[1] + 1))
    for _ in range(n_high):
        hx = rng.uniform(2, s - 2)
        hy = rng.uniform(2, s - 2)
        hr = rng.uniform(1.5, 3.5)
        glow = np.exp(-((xx - hx) ** 2 + (yy - hy) ** 2) / (2 * hr ** 2))
        img = img + 230.0 * glow[..., None]

    img = img + rng.normal(0.0, config.noise_std * 255.0, size=(s, s, 3))
    pixels = np.clip(np.rint(img), 0, 255).astype(np.uint8)
    return Image(s, s, 3, pixels), bbox


def generate_synthetic(config: SyntheticConfig, out_dir) -> list[Sample]:
    """Write the corpus as PPM files plus a manifest.csv; returns the samples."""
    out = Path(out_dir)
    rng = np.random.default_rng(config.seed)
    n_abnormal = round(config.count * config.abnormal_fraction)
    labels = [1] * n_abnormal + [0] * (config.count - n_abnormal)
    for name in CLASS_NAMES:
        (out / name).mkdir(parents=True, exist_ok=True)

    samples = []
    for i, label in enumerate(labels):
        img, bbox = _render_image(rng, config, abnormal=bool(label))
        rel = f"{CLASS_NAMES[label]}/{CLASS_NAMES[label]}_{i:05d}.ppm"
        (out / rel).write_bytes(write_ppm(img))
        samples.append(Sample(path=str(out / rel), label=label, bbox=bbox))

    with open(out / "manifest.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["path", "label", "x0", "y0", "x1", "y1"])
        for smp in samples:
            box = smp.bbox if smp.bbox else ("", "", "", "")
            writer.writerow([Path(smp.path).relative_to(out).as_posix(), smp.label, *box])
    return samples


def load_dataset(root_dir) -> list[Sample]:
    """Scan <root>/<class>/*.ppm, merge manifest bounding boxes when present."""
    root = Path(root_dir)
    if not root.is_dir():
        raise FileNotFoundError(f"dataset root {root} does not exist")
    boxes = {}
    manifest = root / "manifest.csv"
    if manifest.exists():
        with open(manifest, newline="") as fh:
            for row in csv.DictReader(fh):
                if row["x0"]:
                    boxes[row["path"]] = tuple(int(row[k]) for k in ("x0", "y0", "x1", "y1"))

    samples = []
    for sub in sorted(p for p in root.iterdir() if p.is_dir()):
        if sub.name not in CLASS_NAMES:
            raise ValueError(f"unknown class directory {sub}")
        label = CLASS_NAMES.index(sub.name)
        files = sorted(sub.glob("*.ppm"))
        for f in files:
            rel = f.relative_to(root).as_posix()
            samples.append(Sample(path=str(f), label=label, bbox=boxes.get(rel)))
    samples.sort(key=lambda s: s.path)
    return samples


def kfold_split(samples: list[Sample], k: int, seed: int) -> FoldPlan:
    """Stratified partition: per-class shuffle, then round-robin deal."""
    if k < 2:
        raise ValueError("k must be >= 2")
    by_class: dict[int, list[int]] = {}
    for i, smp in enumerate(samples):
        by_class.setdefault(smp.label, []).append(i)
    smallest = min(len(v) for v in by_class.values())
    if k > smallest:
        raise ValueError(f"k={k} exceeds the smallest class count {smallest}")
    rng = np.random.default_rng(seed)
    assignments = [0] * len(samples)
    for label in sorted(by_class):
        idx = np.array(by_class[label])
        rng.shuffle(idx)
        for pos, i in enumerate(idx):
            assignments[int(i)] = pos % k
    return FoldPlan(k=k, assignments=assignments, seed=seed)
