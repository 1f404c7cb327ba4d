"""Linear classifier heads over the decoupled features."""

from __future__ import annotations

import torch
import torch.nn as nn

from ..data.records import NUM_ORIENTATIONS


class ClassifierHeads(nn.Module):
    """Identity head over mu, orientation head over upsilon."""

    def __init__(self, d_mu: int, num_identities: int, d_upsilon: int):
        super().__init__()
        self.num_identities = num_identities
        self.id_head = nn.Linear(d_mu, num_identities)
        self.orient_head = nn.Linear(d_upsilon, NUM_ORIENTATIONS)

    def id_logits(self, mu: torch.Tensor) -> torch.Tensor:
        return self.id_head(mu)

    def orient_logits(self, upsilon: torch.Tensor) -> torch.Tensor:
        return self.orient_head(upsilon)
