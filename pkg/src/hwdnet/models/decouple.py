"""Feature decoupling: orientation-relevant (upsilon) vs orientation-invariant (mu).

Three interchangeable structures behind one forward interface:
  split        slice z along the feature dimension (no parameters)
  subtraction  upsilon = G(z), mu = z - upsilon
  prediction   upsilon = G_r(z), mu = G_u(z), independent predictors
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn

VARIANTS = ("split", "subtraction", "prediction")


@dataclass
class DecoupleConfig:
    variant: str = "split"
    split_fraction: float = 0.5
    mlp_hidden: int | None = None  # None = feature dim
    mlp_depth: int = 2

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown decouple variant: {self.variant!r}")
        if not 0.0 < self.split_fraction < 1.0:
            raise ValueError(f"split_fraction must be in (0, 1), got {self.split_fraction}")


@dataclass
class DecoupledFeatures:
    upsilon: torch.Tensor
    mu: torch.Tensor


def _mlp(dim: int, hidden: int, zero_init_last: bool) -> nn.Sequential:
    net = nn.Sequential(nn.Linear(dim, hidden), nn.ReLU(inplace=True), nn.Linear(hidden, dim))
    if zero_init_last:
        nn.init.zeros_(net[-1].weight)
        nn.init.zeros_(net[-1].bias)
    return net


class Decoupler(nn.Module):
    def __init__(self, dim: int, cfg: DecoupleConfig | None = None):
        super().__init__()
        cfg = cfg or DecoupleConfig()
        self.cfg = cfg
        self.dim = dim
        if cfg.variant == "split":
            self.d_upsilon = int(cfg.split_fraction * dim)
            self.d_mu = dim - self.d_upsilon
            if self.d_upsilon < 1 or self.d_mu < 1:
                raise ValueError(
                    f"split_fraction {cfg.split_fraction} leaves an empty part at dim {dim}"
                )
        else:
            self.d_upsilon = self.d_mu = dim
            hidden = cfg.mlp_hidden or dim
            if cfg.variant == "subtraction":
                # zero-init so training starts at mu = z (nothing discarded)
                self.predictor = _mlp(dim, hidden, zero_init_last=True)
            else:
                self.predictor_r = _mlp(dim, hidden, zero_init_last=False)
                self.predictor_u = _mlp(dim, hidden, zero_init_last=False)

    def forward(self, z: torch.Tensor) -> DecoupledFeatures:
        if z.shape[-1] != self.dim:
            raise ValueError(f"expected feature dim {self.dim}, got {z.shape[-1]}")
        if self.cfg.variant == "split":
            return DecoupledFeatures(z[:, :self.d_upsilon], z[:, self.d_upsilon:])
        if self.cfg.variant == "subtraction":
            upsilon = self.predictor(z)
            return DecoupledFeatures(upsilon, z - upsilon)
        return DecoupledFeatures(self.predictor_r(z), self.predictor_u(z))
