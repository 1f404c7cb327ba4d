"""Identity-balanced cross-modality batch sampling."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from .records import DatasetIndex, Modality, SampleRecord, Split


class SamplingError(ValueError):
    """The index cannot satisfy the requested batch composition."""


@dataclass
class AugmentConfig:
    flip: bool = True
    crop: bool = True
    crop_padding: int = 10
    erase: bool = True
    erase_prob: float = 0.5


@dataclass
class BatchSpec:
    ids_per_batch: int = 12
    images_per_id_per_modality: int = 4
    image_height: int = 256
    image_width: int = 180

    def __post_init__(self):
        if min(self.ids_per_batch, self.images_per_id_per_modality,
               self.image_height, self.image_width) < 1:
            raise ValueError("all BatchSpec counts must be >= 1")


@dataclass
class Batch:
    rgb_images: torch.Tensor
    ir_images: torch.Tensor
    rgb_labels: torch.Tensor
    ir_labels: torch.Tensor
    rgb_orient: torch.Tensor
    ir_orient: torch.Tensor
    P: int
    Q: int


@lru_cache(maxsize=4096)
def _load_image(path: str, height: int, width: int) -> np.ndarray:
    with Image.open(path) as img:
        img = img.convert("RGB").resize((width, height), Image.BILINEAR)
        return np.asarray(img, dtype=np.float32) / 255.0


def load_image_tensor(record: SampleRecord, height: int, width: int) -> torch.Tensor:
    """Load one record as a [3, H, W] float tensor in [0, 1]."""
    arr = _load_image(str(record.path), height, width)
    return torch.from_numpy(arr.copy()).permute(2, 0, 1)


def _augment(img: torch.Tensor, cfg: AugmentConfig, rng: np.random.Generator) -> torch.Tensor:
    _, h, w = img.shape
    if cfg.flip and rng.random() < 0.5:
        img = torch.flip(img, dims=[2])
    if cfg.crop:
        pad = cfg.crop_padding
        padded = torch.nn.functional.pad(img, (pad, pad, pad, pad))
        top = int(rng.integers(0, 2 * pad + 1))
        left = int(rng.integers(0, 2 * pad + 1))
        img = padded[:, top:top + h, left:left + w]
    if cfg.erase and rng.random() < cfg.erase_prob:
        eh = int(rng.integers(h // 8, h // 3 + 1))
        ew = int(rng.integers(w // 8, w // 3 + 1))
        top = int(rng.integers(0, h - eh + 1))
        left = int(rng.integers(0, w - ew + 1))
        img = img.clone()
        img[:, top:top + eh, left:left + ew] = float(rng.random())
    return img


def _pick(rng: np.random.Generator, pool: list[int], count: int) -> list[int]:
    # without replacement when possible, with replacement otherwise
    if len(pool) >= count:
        return list(rng.choice(pool, size=count, replace=False))
    return list(rng.choice(pool, size=count, replace=True))


def sample_balanced_batch(index: DatasetIndex, spec: BatchSpec,
                          rng_state, augment: AugmentConfig | None = None) -> Batch:
    """Sample ids_per_batch identities, P RGB + Q IR images each (P = Q here)."""
    rng = rng_state if isinstance(rng_state, np.random.Generator) \
        else np.random.default_rng(rng_state)
    eligible = [
        ident for ident in index.identities
        if index.id_to_records[ident][Modality.RGB]
        and index.id_to_records[ident][Modality.IR]
        and all(index.records[i].split is Split.TRAIN
                for m in (Modality.RGB, Modality.IR)
                for i in index.id_to_records[ident][m])
    ]
    if len(eligible) < spec.ids_per_batch:
        raise SamplingError(
            f"need {spec.ids_per_batch} train identities with both modalities, "
            f"have {len(eligible)}"
        )
    chosen = rng.choice(eligible, size=spec.ids_per_batch, replace=False)
    per = spec.images_per_id_per_modality

    rgb_recs: list[SampleRecord] = []
    ir_recs: list[SampleRecord] = []
    for ident in chosen:
        per_mod = index.id_to_records[int(ident)]
        rgb_recs += [index.records[i] for i in _pick(rng, per_mod[Modality.RGB], per)]
        ir_recs += [index.records[i] for i in _pick(rng, per_mod[Modality.IR], per)]

    def stack(recs: list[SampleRecord]):
        imgs = []
        for rec in recs:
            img = load_image_tensor(rec, spec.image_height, spec.image_width)
            if augment is not None:
                img = _augment(img, augment, rng)
            imgs.append(img)
        return (
            torch.stack(imgs),
            torch.tensor([r.identity for r in recs], dtype=torch.long),
            torch.tensor([r.orientation for r in recs], dtype=torch.long),
        )

    rgb_images, rgb_labels, rgb_orient = stack(rgb_recs)
    ir_images, ir_labels, ir_orient = stack(ir_recs)
    return Batch(rgb_images, ir_images, rgb_labels, ir_labels,
                 rgb_orient, ir_orient, P=per, Q=per)
