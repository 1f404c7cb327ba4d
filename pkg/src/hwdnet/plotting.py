"""CMC-curve and 2-D embedding plots (matplotlib, file output only)."""

from __future__ import annotations

import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

_MARKERS = {0: "o", 1: "^"}  # 0 = rgb, 1 = ir


def plot_cmc(report_path, out_path) -> Path:
    report = json.loads(Path(report_path).read_text(encoding="utf-8"))
    cmc = report["cmc"]
    ranks = np.arange(1, len(cmc) + 1)
    fig, ax = plt.subplots(figsize=(5, 4))
    ax.plot(ranks, cmc, marker="o", ms=3)
    ax.set_xlabel("rank k")
    ax.set_ylabel("matching rate")
    ax.set_ylim(0, 1.02)
    ax.set_title(f"CMC ({report['direction']}, {report['shot']}-shot, "
                 f"mAP={report['map']:.3f})")
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
    return Path(out_path)


def pca_2d(feats: np.ndarray) -> np.ndarray:
    """Deterministic 2-D projection onto the top two principal components."""
    centered = feats - feats.mean(axis=0, keepdims=True)
    _, _, vt = np.linalg.svd(centered, full_matrices=False)
    return centered @ vt[:2].T


def plot_embeddings(npz_path, out_path) -> Path:
    data = np.load(npz_path)
    proj = pca_2d(np.asarray(data["feats"], dtype=np.float64))
    ids = np.asarray(data["ids"])
    modality = np.asarray(data["modality"])
    fig, ax = plt.subplots(figsize=(5.5, 5))
    cmap = plt.colormaps["tab20"]
    uniq = sorted(set(ids.tolist()))
    colors = {ident: cmap(i % 20) for i, ident in enumerate(uniq)}
    for mod in (0, 1):
        mask = modality == mod
        ax.scatter(proj[mask, 0], proj[mask, 1],
                   c=[colors[i] for i in ids[mask]],
                   marker=_MARKERS[mod], s=24, alpha=0.8,
                   label="rgb" if mod == 0 else "ir")
    ax.legend()
    ax.set_title("orientation-invariant features (PCA)")
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
    return Path(out_path)
