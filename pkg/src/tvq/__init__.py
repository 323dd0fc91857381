"""Checkpoint-collection compression via quantized task vectors."""

from tvq.container import (
    ArtifactMeta,
    BundleManifest,
    QuantizedArtifact,
    QuantizedTensor,
    Role,
    RTVQBundle,
    TensorMap,
    read_bundle,
    read_qtv,
    read_tmap,
    write_bundle,
    write_qtv,
    write_tmap,
)
from tvq.errors import FormatError, MismatchError, TvqError
from tvq.merge import MergeConfig, MergeMethod
from tvq.quantizer import ErrorReport, QParams
from tvq.rtvq import RTVQConfig, effective_bits
from tvq.synth import SynthSpec
from tvq.taskvec import RangeStats, TaskVector

__version__ = "0.1.0"

__all__ = [
    "ArtifactMeta",
    "BundleManifest",
    "ErrorReport",
    "FormatError",
    "MergeConfig",
    "MergeMethod",
    "MismatchError",
    "QParams",
    "QuantizedArtifact",
    "QuantizedTensor",
    "RangeStats",
    "Role",
    "RTVQBundle",
    "RTVQConfig",
    "SynthSpec",
    "TaskVector",
    "TensorMap",
    "TvqError",
    "effective_bits",
    "read_bundle",
    "read_qtv",
    "read_tmap",
    "write_bundle",
    "write_qtv",
    "write_tmap",
    "__version__",
]
