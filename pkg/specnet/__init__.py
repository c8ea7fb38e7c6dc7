"""
SpecNet - spectral-domain convolutional networks with beta-compressed feature maps
"""
from .errors import (
    SpecNetError, DimensionError, StructuralError, ShapeError, NumericIntegrityError, UsageError,
    CheckpointError, DatasetError, FormatError, PayloadLengthError, ConsistencyError, LabelValueError,
    DatasetMissingError,
)
from .tensors import (
    DenseReal, SpectralMap, SparseSpectralMap, Beta, threshold_to_sparse, densify, nnz_fraction, check_hermitian,
)
from .fft import PadSpec, zero_pad, fft2d, ifft2d, dft2d_reference
from .spectral_block import (
    SpecConvLayer, BlockCache, activate, check_activation_rules, spec_conv_forward, spec_conv_backward,
    spectral_downsample, spectral_downsample_backward,
)
from .network import (
    LayerSpec, ModelSpec, DenseLayer, SpecNetModel, build_spec_lenet_mini, calibrate_beta_scales,
    spatial_conv_reference, to_spatial, dense_forward, softmax_xent, model_forward, model_backward,
)
from .checkpoint import save_checkpoint, load_checkpoint
from .datasets import LabeledImageSet, NormalizationStats, load_idx, load_cifar_bin, synthetic_shapes, load_dataset, denormalize
from .memory_profiler import MemLedger, MemEvent, sparse_bytes, dense_bytes, feature_map_bytes, relative_memory
from .trainer import TrainConfig, SgdState, SpecTrainer, RunReport, lr_at_epoch, sgd_momentum_step, train, evaluate
from .selftest import run_selftest

__all__ = [
    "SpecNetError", "DimensionError", "StructuralError", "ShapeError", "NumericIntegrityError", "UsageError",
    "CheckpointError", "DatasetError", "FormatError", "PayloadLengthError", "ConsistencyError", "LabelValueError",
    "DatasetMissingError",
    "DenseReal", "SpectralMap", "SparseSpectralMap", "Beta", "threshold_to_sparse", "densify", "nnz_fraction",
    "check_hermitian",
    "PadSpec", "zero_pad", "fft2d", "ifft2d", "dft2d_reference",
    "SpecConvLayer", "BlockCache", "activate", "check_activation_rules", "spec_conv_forward", "spec_conv_backward",
    "spectral_downsample", "spectral_downsample_backward",
    "LayerSpec", "ModelSpec", "DenseLayer", "SpecNetModel", "build_spec_lenet_mini", "calibrate_beta_scales",
    "spatial_conv_reference", "to_spatial", "dense_forward", "softmax_xent", "model_forward", "model_backward",
    "save_checkpoint", "load_checkpoint",
    "LabeledImageSet", "NormalizationStats", "load_idx", "load_cifar_bin", "synthetic_shapes", "load_dataset",
    "denormalize",
    "MemLedger", "MemEvent", "sparse_bytes", "dense_bytes", "feature_map_bytes", "relative_memory",
    "TrainConfig", "SgdState", "SpecTrainer", "RunReport", "lr_at_epoch", "sgd_momentum_step", "train", "evaluate",
    "run_selftest",
]
