"""Encoder + decoupler + classifier heads assembled from a flat config."""

from __future__ import annotations

import numpy as np
import torch
import torch.nn as nn

from ..data.sampler import load_image_tensor
from .decouple import DecoupleConfig, DecoupledFeatures, Decoupler
from .encoder import EncoderOutput, RelationPlan, TwoStreamEncoder
from .heads import ClassifierHeads


class HWDNetModel(nn.Module):
    def __init__(self, num_identities: int, cfg: dict):
        super().__init__()
        plan = RelationPlan.from_name(cfg["plan.stage"])
        dim = int(cfg["encoder.dim"]) if cfg["encoder.dim"] else None
        self.encoder = TwoStreamEncoder(
            plan,
            arch=cfg["encoder.arch"],
            dim=dim,
            granularity=cfg["restrainer.granularity"],
            init_a=float(cfg["restrainer.init_a"]),
            init_b=float(cfg["restrainer.init_b"]),
        )
        dcfg = DecoupleConfig(
            variant=cfg["decouple.variant"],
            split_fraction=float(cfg["decouple.split_fraction"]),
            mlp_hidden=int(cfg["decouple.mlp_hidden"]) if cfg["decouple.mlp_hidden"] else None,
        )
        self.decoupler = Decoupler(self.encoder.dim, dcfg)
        self.heads = ClassifierHeads(self.decoupler.d_mu, num_identities,
                                     self.decoupler.d_upsilon)

    def forward(self, images: torch.Tensor,
                modality: str) -> tuple[EncoderOutput, DecoupledFeatures]:
        out = self.encoder(images, modality)
        return out, self.decoupler(out.features)

    def forward_pair(self, rgb_images: torch.Tensor, ir_images: torch.Tensor):
        """Both modality blocks through one joint BN-neck pass, then decoupled."""
        out_rgb, out_ir = self.encoder.forward_pair(rgb_images, ir_images)
        return (out_rgb, self.decoupler(out_rgb.features)), \
               (out_ir, self.decoupler(out_ir.features))

    @torch.no_grad()
    def embed_records(self, records, height: int, width: int,
                      batch_size: int = 64) -> np.ndarray:
        """Orientation-invariant (mu) features for retrieval, in record order."""
        was_training = self.training
        self.eval()
        feats = []
        for start in range(0, len(records), batch_size):
            chunk = records[start:start + batch_size]
            for modality in ("rgb", "ir"):
                sel = [r for r in chunk if r.modality.value == modality]
                if not sel:
                    continue
                imgs = torch.stack([load_image_tensor(r, height, width) for r in sel])
                _, dec = self(imgs, modality)
                # reassemble in chunk order below
                for rec, mu in zip(sel, dec.mu):
                    feats.append((rec, mu.numpy()))
        if was_training:
            self.train()
        by_id = {id(rec): mu for rec, mu in feats}
        return np.stack([by_id[id(rec)] for rec in records]).astype(np.float64)
