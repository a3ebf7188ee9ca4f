"""Memory-efficient adaptive optimization by square-matricized momentum factorization."""
from .factorize import (
    BYTE,
    PACKED,
    CompressedMomentum,
    FactorPair,
    SignBitmap,
    compress,
    compress_nonnegative,
    compression_error_sum,
    decompress,
    nnmf,
)
from .matricize import EffectiveShape, brute_force_effective_shape, effective_shape, square_matricize, unmatricize
from .optimizers import (
    SGD,
    SMMF,
    Adafactor,
    Adam,
    HyperParams,
    Optimizer,
    apply_weight_decay,
    beta1_at,
    beta2_at,
    make_optimizer,
    smmf_step,
    smmf_step_unfactored,
)
from .memory import KINDS, MIB, MemoryReport, ShapeManifest, report, state_bytes
from .bench import ExperimentConfig, RegretSeries, regret_track, run_experiment

__version__ = "0.1.0"
