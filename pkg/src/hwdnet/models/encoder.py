"""Hybrid-weights two-stream encoder.

A staged convolutional encoder is instantiated once per modality for the
"related" shallow stages and shared (literally the same modules) for the
remaining deep stages. Each related-stage parameter tensor W_rgb is coupled
to its IR twin through a learned affine map a*W_rgb + b whose Frobenius
distance to W_ir is penalized.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

NUM_STAGES = 5

# stage channel progressions per architecture; last entry is the feature dim
_ARCH_CHANNELS = {
    "small": (16, 32, 48, 64, 128),
    "residual": (64, 128, 256, 512, 512),
}


class PlanError(ValueError):
    """Invalid stage relation plan."""


@dataclass(frozen=True)
class RelationPlan:
    """Which encoder stages are weight-related (True) vs weight-shared (False).

    Related stages must form a prefix: s_k relates stages 0..k-1.
    """

    alpha: tuple[bool, ...]

    def __post_init__(self):
        seen_shared = False
        for a in self.alpha:
            if a and seen_shared:
                raise PlanError(
                    f"related stage after a shared stage in {self.alpha}; "
                    "related stages must form a prefix"
                )
            seen_shared = seen_shared or not a

    @classmethod
    def from_name(cls, name: str, num_stages: int = NUM_STAGES) -> "RelationPlan":
        """Build plan s0..s{num_stages}: s_k relates the first k stages."""
        if not name.startswith("s") or not name[1:].isdigit():
            raise PlanError(f"unknown plan name: {name!r}")
        k = int(name[1:])
        if k > num_stages:
            raise PlanError(f"plan {name} exceeds {num_stages} stages")
        return cls(tuple(i < k for i in range(num_stages)))

    @property
    def related_stages(self) -> list[int]:
        return [i for i, a in enumerate(self.alpha) if a]

    @property
    def shared_stages(self) -> list[int]:
        return [i for i, a in enumerate(self.alpha) if not a]

    @property
    def name(self) -> str:
        return f"s{len(self.related_stages)}"


@dataclass
class EncoderOutput:
    features: torch.Tensor  # post-BN-neck, used for retrieval and losses
    pre_bn: torch.Tensor


class _ResidualBlock(nn.Module):
    def __init__(self, cin: int, cout: int, stride: int):
        super().__init__()
        self.conv1 = nn.Conv2d(cin, cout, 3, stride=stride, padding=1, bias=False)
        self.bn1 = nn.BatchNorm2d(cout)
        self.conv2 = nn.Conv2d(cout, cout, 3, padding=1, bias=False)
        self.bn2 = nn.BatchNorm2d(cout)
        if stride != 1 or cin != cout:
            self.shortcut = nn.Sequential(
                nn.Conv2d(cin, cout, 1, stride=stride, bias=False),
                nn.BatchNorm2d(cout),
            )
        else:
            self.shortcut = nn.Identity()

    def forward(self, x):
        out = self.bn2(self.conv2(F.relu(self.bn1(self.conv1(x)))))
        return F.relu(out + self.shortcut(x))


def _build_stage(index: int, channels: tuple[int, ...]) -> nn.Module:
    if index == 0:
        return nn.Sequential(
            nn.Conv2d(3, channels[0], 7, stride=2, padding=3, bias=False),
            nn.BatchNorm2d(channels[0]),
            nn.ReLU(inplace=True),
            nn.MaxPool2d(3, stride=2, padding=1),
        )
    return _ResidualBlock(channels[index - 1], channels[index], stride=2)


def restrainer_transform(a: torch.Tensor, b: torch.Tensor,
                         w_rgb: torch.Tensor) -> torch.Tensor:
    """Affine weight coupling: W_hat = a * W_rgb + b, elementwise scalars."""
    return a * w_rgb + b


def weight_distance(w_hat: torch.Tensor, w_ir: torch.Tensor) -> torch.Tensor:
    """Frobenius norm of the coupled-weight residual."""
    if w_hat.shape != w_ir.shape:
        raise ValueError(f"shape mismatch: {tuple(w_hat.shape)} vs {tuple(w_ir.shape)}")
    return torch.linalg.vector_norm(w_hat - w_ir)


def _param_key(name: str) -> str:
    # ParameterDict keys cannot contain '.'
    return name.replace(".", "__")


class TwoStreamEncoder(nn.Module):
    """Per-modality encoder with prefix-related stages, shared tail and BN neck.

    granularity: "tensor" gives each related-stage parameter tensor its own
    (a, b) scalar pair; "stage" shares one pair across the whole stage.
    """

    def __init__(self, plan: RelationPlan, arch: str = "small",
                 dim: int | None = None, granularity: str = "tensor",
                 init_a: float = 1.0, init_b: float = 0.0):
        super().__init__()
        if arch not in _ARCH_CHANNELS:
            raise ValueError(f"unknown encoder arch: {arch!r}")
        if granularity not in ("tensor", "stage"):
            raise ValueError(f"unknown restrainer granularity: {granularity!r}")
        channels = list(_ARCH_CHANNELS[arch])
        if dim is not None:
            channels[-1] = dim
        channels = tuple(channels)
        if len(plan.alpha) != NUM_STAGES:
            raise PlanError(f"plan has {len(plan.alpha)} stages, encoder has {NUM_STAGES}")

        self.plan = plan
        self.arch = arch
        self.granularity = granularity
        self.dim = channels[-1]

        rgb_stages, ir_stages = [], []
        for i in range(NUM_STAGES):
            stage = _build_stage(i, channels)
            rgb_stages.append(stage)
            # related stages get an independent, identically initialized IR twin;
            # shared stages reuse the very same module (same storage)
            ir_stages.append(copy.deepcopy(stage) if plan.alpha[i] else stage)
        self.rgb_stages = nn.ModuleList(rgb_stages)
        self.ir_stages = nn.ModuleList(ir_stages)

        self.restrainer_a = nn.ModuleDict()
        self.restrainer_b = nn.ModuleDict()
        for i in plan.related_stages:
            a_dict, b_dict = nn.ParameterDict(), nn.ParameterDict()
            names = (["stage"] if granularity == "stage"
                     else [_param_key(n) for n, _ in rgb_stages[i].named_parameters()])
            for key in names:
                a_dict[key] = nn.Parameter(torch.tensor(float(init_a)))
                b_dict[key] = nn.Parameter(torch.tensor(float(init_b)))
            self.restrainer_a[str(i)] = a_dict
            self.restrainer_b[str(i)] = b_dict

        self.neck = nn.BatchNorm1d(self.dim)

    def forward(self, images: torch.Tensor, modality: str) -> EncoderOutput:
        if images.dim() != 4 or images.shape[1] != 3:
            raise ValueError(f"expected [B, 3, H, W] images, got {tuple(images.shape)}")
        modality = modality.lower() if isinstance(modality, str) else modality.value
        if modality not in ("rgb", "ir"):
            raise ValueError(f"unknown modality: {modality!r}")
        pre_bn = self._pooled(images, modality)
        return EncoderOutput(features=self.neck(pre_bn), pre_bn=pre_bn)

    def _pooled(self, images: torch.Tensor, modality: str) -> torch.Tensor:
        stages = self.rgb_stages if modality == "rgb" else self.ir_stages
        x = images
        for stage in stages:
            x = stage(x)
        return F.adaptive_avg_pool2d(x, 1).flatten(1)

    def forward_pair(self, rgb_images: torch.Tensor,
                     ir_images: torch.Tensor) -> tuple[EncoderOutput, EncoderOutput]:
        """Forward both modality blocks with one joint BN-neck pass.

        The neck sees the concatenated batch, so its statistics (and running
        stats) mix both modalities; this is what lets it shrink the modality
        gap rather than normalize each block to itself.
        """
        pre_rgb = self._pooled(self._check(rgb_images), "rgb")
        pre_ir = self._pooled(self._check(ir_images), "ir")
        feats = self.neck(torch.cat([pre_rgb, pre_ir]))
        m = pre_rgb.shape[0]
        return (EncoderOutput(features=feats[:m], pre_bn=pre_rgb),
                EncoderOutput(features=feats[m:], pre_bn=pre_ir))

    def _check(self, images: torch.Tensor) -> torch.Tensor:
        if images.dim() != 4 or images.shape[1] != 3:
            raise ValueError(f"expected [B, 3, H, W] images, got {tuple(images.shape)}")
        return images

    def related_tensor_triples(self):
        """Yield (stage, name, a, b, w_rgb, w_ir) for every related-stage tensor."""
        for i in self.plan.related_stages:
            a_dict = self.restrainer_a[str(i)]
            b_dict = self.restrainer_b[str(i)]
            ir_params = dict(self.ir_stages[i].named_parameters())
            for name, w_rgb in self.rgb_stages[i].named_parameters():
                key = "stage" if self.granularity == "stage" else _param_key(name)
                yield i, name, a_dict[key], b_dict[key], w_rgb, ir_params[name]

    def restrainer_loss(self) -> torch.Tensor:
        """Sum of coupled-weight Frobenius distances over related stages (L_wr)."""
        total = torch.zeros((), dtype=torch.get_default_dtype())
        for _, _, a, b, w_rgb, w_ir in self.related_tensor_triples():
            total = total + weight_distance(restrainer_transform(a, b, w_rgb), w_ir)
        return total

    def restrainer_parameters(self):
        return list(self.restrainer_a.parameters()) + list(self.restrainer_b.parameters())

    def encoder_parameters(self):
        restrainer_ids = {id(p) for p in self.restrainer_parameters()}
        return [p for p in self.parameters() if id(p) not in restrainer_ids]
