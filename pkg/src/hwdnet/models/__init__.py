from .encoder import (
    RelationPlan,
    EncoderOutput,
    TwoStreamEncoder,
    restrainer_transform,
    weight_distance,
)
from .decouple import DecoupleConfig, DecoupledFeatures, Decoupler
from .heads import ClassifierHeads
from .full import HWDNetModel

__all__ = [
    "RelationPlan",
    "EncoderOutput",
    "TwoStreamEncoder",
    "restrainer_transform",
    "weight_distance",
    "DecoupleConfig",
    "DecoupledFeatures",
    "Decoupler",
    "ClassifierHeads",
    "HWDNetModel",
]
