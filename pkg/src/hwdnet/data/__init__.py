from .records import (
    Modality,
    Split,
    SampleRecord,
    DatasetIndex,
    ParseError,
    ValidationError,
    load_ucm_veid_index,
    split_query_gallery,
    write_labels_tsv,
)
from .synth import generate_synthetic_dataset
from .sampler import BatchSpec, AugmentConfig, Batch, SamplingError, sample_balanced_batch

__all__ = [
    "Modality",
    "Split",
    "SampleRecord",
    "DatasetIndex",
    "ParseError",
    "ValidationError",
    "load_ucm_veid_index",
    "split_query_gallery",
    "write_labels_tsv",
    "generate_synthetic_dataset",
    "BatchSpec",
    "AugmentConfig",
    "Batch",
    "SamplingError",
    "sample_balanced_batch",
]
