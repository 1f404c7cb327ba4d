"""Synthetic paired-modality vehicle dataset.

Each identity is a procedurally drawn vehicle glyph: identity-specific hue,
body/cabin proportions and stripe texture. Shape and texture survive the IR
rendering (grayscale + monotone intensity remap + noise) while hue does not,
so the modality gap mirrors the RGB/IR discrepancy: color cues are
modality-specific, geometry is modality-shared.
"""

from __future__ import annotations

import colorsys
from pathlib import Path

import numpy as np
from PIL import Image

from .records import (
    DatasetIndex,
    Modality,
    NUM_ORIENTATIONS,
    SampleRecord,
    Split,
    write_labels_tsv,
)

# camera index per modality, mirroring the two-sensor capture rig
_CAMERA = {Modality.RGB: 1, Modality.IR: 2}


def _identity_params(seed: int, ident: int) -> dict:
    rng = np.random.default_rng([seed, ident])
    return {
        "hue": float(rng.uniform(0.0, 1.0)),
        "saturation": float(rng.uniform(0.55, 0.95)),
        "body_value": float(rng.uniform(0.45, 0.95)),
        "body_len": float(rng.uniform(0.52, 0.95)),
        "body_wid": float(rng.uniform(0.22, 0.5)),
        "cabin_len": float(rng.uniform(0.18, 0.45)),
        "cabin_wid_frac": float(rng.uniform(0.45, 0.95)),
        "cabin_pos": float(rng.uniform(-0.35, 0.4)),
        "cabin_shade": float(rng.uniform(0.15, 0.6)),
        "stripe_freq": float(rng.uniform(3.0, 22.0)),
        "stripe_phase": float(rng.uniform(0.0, 2 * np.pi)),
        "stripe_amp": float(rng.uniform(0.15, 0.4)),
        "wheel_r": float(rng.uniform(0.04, 0.12)),
        "nose_r": float(rng.uniform(0.06, 0.16)),
    }


def _render_rgb(p: dict, orientation: int, sample_rng: np.random.Generator,
                size: int) -> np.ndarray:
    """Rasterize one glyph at the given orientation; returns float [H,W,3] in [0,1]."""
    angle = orientation * (2 * np.pi / NUM_ORIENTATIONS)
    scale = sample_rng.uniform(0.8, 1.0)
    cx = sample_rng.uniform(-0.08, 0.08)
    cy = sample_rng.uniform(-0.08, 0.08)
    bg = sample_rng.uniform(0.12, 0.3)

    half = size / 2.0
    ys, xs = np.mgrid[0:size, 0:size]
    x = (xs - half) / half - cx
    y = (ys - half) / half - cy
    # rotate image coords into the glyph's canonical frame
    ca, sa = np.cos(angle), np.sin(angle)
    u = (ca * x + sa * y) / scale
    v = (-sa * x + ca * y) / scale

    img = np.empty((size, size, 3), dtype=np.float64)
    img[...] = bg
    img += sample_rng.normal(0.0, 0.01, size=(size, size, 1))

    L, W = p["body_len"], p["body_wid"]
    body = (np.abs(u) / L) ** 4 + (np.abs(v) / W) ** 4 <= 1.0
    stripes = 1.0 + p["stripe_amp"] * np.sin(p["stripe_freq"] * u + p["stripe_phase"])
    base = np.array(colorsys.hsv_to_rgb(p["hue"], p["saturation"], p["body_value"]))
    img[body] = base[None, :] * stripes[body, None]

    cl = p["cabin_len"]
    cw = W * p["cabin_wid_frac"]
    cu = u - p["cabin_pos"] * L
    cabin = (np.abs(cu) / cl) ** 2 + (np.abs(v) / cw) ** 2 <= 1.0
    img[cabin] = base[None, :] * p["cabin_shade"]

    nose = (u - 0.9 * L) ** 2 + v ** 2 <= p["nose_r"] ** 2
    img[nose] = 0.95

    wr = p["wheel_r"]
    for du, dv in ((0.55 * L, W), (0.55 * L, -W), (-0.55 * L, W), (-0.55 * L, -W)):
        wheel = (u - du) ** 2 + (v - dv) ** 2 <= wr ** 2
        img[wheel] = 0.05

    return np.clip(img, 0.0, 1.0)


def _to_ir(rgb: np.ndarray, sample_rng: np.random.Generator) -> np.ndarray:
    """Drop hue, remap intensity by a fixed monotone curve, add sensor noise."""
    lum = 0.299 * rgb[..., 0] + 0.587 * rgb[..., 1] + 0.114 * rgb[..., 2]
    remapped = lum ** 0.65
    noisy = remapped + sample_rng.normal(0.0, 0.02, size=lum.shape)
    return np.clip(noisy, 0.0, 1.0)[..., None].repeat(3, axis=-1)


def generate_synthetic_dataset(num_ids: int, samples_per_id_per_modality: int,
                               seed: int, out, img_size: int = 96) -> DatasetIndex:
    """Write a paired RGB/IR dataset in the UCM-VeID layout under *out*.

    Deterministic: the written files are a pure function of
    (num_ids, samples_per_id_per_modality, seed, img_size). Orientations cycle
    through all 8 classes per modality, so spm >= 8 covers every class.
    """
    if num_ids < 2:
        raise ValueError(f"num_ids must be >= 2, got {num_ids}")
    if samples_per_id_per_modality < 1:
        raise ValueError("samples_per_id_per_modality must be >= 1")
    out = Path(out)
    records: list[SampleRecord] = []
    for modality in (Modality.RGB, Modality.IR):
        (out / modality.value).mkdir(parents=True, exist_ok=True)
    for ident in range(num_ids):
        params = _identity_params(seed, ident)
        for mod_idx, modality in enumerate((Modality.RGB, Modality.IR)):
            for j in range(samples_per_id_per_modality):
                orientation = j % NUM_ORIENTATIONS
                rng = np.random.default_rng([seed, ident, mod_idx, j])
                rgb = _render_rgb(params, orientation, rng, img_size)
                arr = _to_ir(rgb, rng) if modality is Modality.IR else rgb
                name = f"{_CAMERA[modality]}_{ident}_{j}.png"
                path = out / modality.value / name
                Image.fromarray((arr * 255.0 + 0.5).astype(np.uint8)).save(path)
                records.append(
                    SampleRecord(
                        path=path,
                        identity=ident,
                        modality=modality,
                        orientation=orientation,
                        camera=_CAMERA[modality],
                        split=Split.TRAIN,
                        imagenum=j,
                    )
                )
    records.sort(key=lambda r: (r.identity, r.modality.value, r.imagenum))
    write_labels_tsv(records, out)
    return DatasetIndex(records)
