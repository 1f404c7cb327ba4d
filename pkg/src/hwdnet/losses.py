"""Training objectives.

All losses use sum reduction as their native form (mean available via
``reduction="mean"``). Identity/orientation cross-entropies treat their
input batch as the concatenation of the RGB and IR blocks, which equals the
two-block sum.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import torch
import torch.nn.functional as F


class LossValidationError(ValueError):
    """Labels or batch composition violate a loss precondition."""


class DivergenceError(RuntimeError):
    """A loss term became non-finite during training."""


@dataclass
class LossWeights:
    margin: float = 0.5
    wr: float = 1.0
    id: float = 1.0
    tri: float = 1.0
    orient: float = 1.0
    centroid: float = 1.0
    enable: dict[str, bool] = field(default_factory=lambda: {
        "wr": True, "id": True, "tri": True, "orient": True, "centroid": True,
    })

    def __post_init__(self):
        if self.margin < 0:
            raise ValueError("margin must be >= 0")
        if min(self.wr, self.id, self.tri, self.orient, self.centroid) < 0:
            raise ValueError("loss coefficients must be >= 0")


def _reduce(per_sample: torch.Tensor, reduction: str) -> torch.Tensor:
    if reduction == "sum":
        return per_sample.sum()
    if reduction == "mean":
        return per_sample.mean()
    raise ValueError(f"unknown reduction: {reduction!r}")


def _check_labels(labels: torch.Tensor, num_classes: int, what: str) -> None:
    if labels.numel() and (labels.min() < 0 or labels.max() >= num_classes):
        raise LossValidationError(
            f"{what} labels out of range [0, {num_classes}): "
            f"[{int(labels.min())}, {int(labels.max())}]"
        )


def id_loss(mu: torch.Tensor, id_head, labels: torch.Tensor,
            reduction: str = "sum") -> torch.Tensor:
    """Identity cross-entropy over the identity head's logits (L_ID)."""
    logits = id_head.id_logits(mu) if hasattr(id_head, "id_logits") else id_head(mu)
    _check_labels(labels, logits.shape[-1], "identity")
    return _reduce(F.cross_entropy(logits, labels, reduction="none"), reduction)


def orientation_loss(upsilon: torch.Tensor, orient_head, orient_labels: torch.Tensor,
                     reduction: str = "sum") -> torch.Tensor:
    """Orientation-class cross-entropy over the orientation head (L_R)."""
    logits = (orient_head.orient_logits(upsilon) if hasattr(orient_head, "orient_logits")
              else orient_head(upsilon))
    _check_labels(orient_labels, logits.shape[-1], "orientation")
    return _reduce(F.cross_entropy(logits, orient_labels, reduction="none"), reduction)


def cross_modality_triplet(z_rgb: torch.Tensor, z_ir: torch.Tensor,
                           labels_rgb: torch.Tensor, labels_ir: torch.Tensor,
                           margin: float = 0.5,
                           reduction: str = "sum") -> torch.Tensor:
    """Cross-modality triplet loss with per-anchor extreme mining (L_tri).

    For each anchor, the positive term is the *closest* cross-modality sample
    of the same identity and the negative term the *farthest* cross-modality
    sample of a different identity, hinged at the margin.
    """

    def one_direction(anchors, anchor_labels, others, other_labels):
        dist = torch.cdist(anchors, others)
        same = anchor_labels[:, None] == other_labels[None, :]
        if not bool(same.any(dim=1).all()):
            missing = anchor_labels[~same.any(dim=1)].unique().tolist()
            raise LossValidationError(f"anchors without cross-modality positive: {missing}")
        if not bool((~same).any(dim=1).all()):
            missing = anchor_labels[~(~same).any(dim=1)].unique().tolist()
            raise LossValidationError(f"anchors without cross-modality negative: {missing}")
        inf = torch.tensor(float("inf"), dtype=dist.dtype)
        min_pos = torch.where(same, dist, inf).min(dim=1).values
        max_neg = torch.where(~same, dist, -inf).max(dim=1).values
        return F.relu(margin + min_pos - max_neg)

    terms = torch.cat([
        one_direction(z_rgb, labels_rgb, z_ir, labels_ir),
        one_direction(z_ir, labels_ir, z_rgb, labels_rgb),
    ])
    return _reduce(terms, reduction)


def modality_centroids(mu: torch.Tensor, labels: torch.Tensor) -> dict[int, torch.Tensor]:
    """Per-identity mean of mu vectors within one modality block."""
    return {
        int(ident): mu[labels == ident].mean(dim=0)
        for ident in labels.unique().tolist()
    }


def cross_modality_centroid(rgb_centroid: torch.Tensor,
                            ir_centroid: torch.Tensor) -> torch.Tensor:
    """Modality-balanced global centroid: the mean of the two modality centroids."""
    return 0.5 * (rgb_centroid + ir_centroid)


def _similarity(u: torch.Tensor, v: torch.Tensor, kind: str) -> torch.Tensor:
    diff = u - v
    sq = (diff * diff).sum(dim=-1)
    if kind == "squared":
        return sq
    if kind == "euclidean":
        return sq.sqrt()
    raise ValueError(f"unknown similarity: {kind!r}")


def centroid_similarity_loss(mu: torch.Tensor, labels: torch.Tensor,
                             centroids: dict[int, torch.Tensor],
                             similarity: str = "squared",
                             reduction: str = "sum") -> torch.Tensor:
    """Sum of sample-to-centroid distances; gradients flow through both sides."""
    missing = sorted(set(labels.tolist()) - set(centroids))
    if missing:
        raise LossValidationError(f"identities without a centroid: {missing}")
    target = torch.stack([centroids[int(label)] for label in labels])
    return _reduce(_similarity(mu, target, similarity), reduction)


def similarity_enforcement_loss(mu_rgb: torch.Tensor, labels_rgb: torch.Tensor,
                                mu_ir: torch.Tensor, labels_ir: torch.Tensor,
                                mode: str = "cross_modality",
                                similarity: str = "squared",
                                reduction: str = "sum") -> torch.Tensor:
    """L_C (single_modality centroids) or L_C' (cross_modality centroids)."""
    rgb_c = modality_centroids(mu_rgb, labels_rgb)
    ir_c = modality_centroids(mu_ir, labels_ir)
    if mode == "single_modality":
        c_rgb, c_ir = rgb_c, ir_c
    elif mode == "cross_modality":
        missing = sorted(set(rgb_c) ^ set(ir_c))
        if missing:
            raise LossValidationError(f"identities missing a modality centroid: {missing}")
        shared = {k: cross_modality_centroid(rgb_c[k], ir_c[k]) for k in rgb_c}
        c_rgb = c_ir = shared
    else:
        raise ValueError(f"unknown centroid mode: {mode!r}")
    return (centroid_similarity_loss(mu_rgb, labels_rgb, c_rgb, similarity, reduction)
            + centroid_similarity_loss(mu_ir, labels_ir, c_ir, similarity, reduction))


def total_loss(terms: dict[str, torch.Tensor],
               weights: LossWeights | None = None) -> tuple[torch.Tensor, dict[str, float]]:
    """Weighted sum of the enabled loss terms, plus a per-term breakdown.

    *terms* maps names in {wr, id, tri, orient, centroid} to scalar tensors;
    disabled or absent terms contribute nothing.
    """
    weights = weights or LossWeights()
    coeff = {"wr": weights.wr, "id": weights.id, "tri": weights.tri,
             "orient": weights.orient, "centroid": weights.centroid}
    unknown = set(terms) - set(coeff)
    if unknown:
        raise ValueError(f"unknown loss terms: {sorted(unknown)}")
    total = torch.zeros(())
    breakdown: dict[str, float] = {}
    for name, value in terms.items():
        if not weights.enable.get(name, True):
            continue
        if not torch.isfinite(value):
            raise DivergenceError(f"loss term {name!r} is non-finite: {float(value)}")
        weighted = coeff[name] * value
        total = total + weighted
        breakdown[name] = float(weighted.detach())
    return total, breakdown
