"""Self-ensemble and self-distillation fine-tuning on a desk-scale stack."""

from .autodiff import Tape, Tensor, backward, grad_check
from .data import (
    Batch,
    CsvSchema,
    DatasetSplit,
    Example,
    SyntheticSpec,
    TaskData,
    Vocab,
    build_vocab,
    load_csv,
    make_synthetic,
    prepare_task,
    shuffle_with_seed,
    stratified_subsample,
    tokenize_truncate,
)
from .distill import (
    DistillConfig,
    TrainConfig,
    TrainResult,
    TrainState,
    fine_tune,
    sda_loss,
    sda_teacher,
    sdv_teacher_logits,
    train_step,
)
from .encoder import (
    ModelConfig,
    ParameterSet,
    classify,
    encode,
    init_params,
    load_params,
    predict_proba,
    save_params,
)
from .ensemble import (
    CheckpointRing,
    EnsembleSet,
    RunningMean,
    average_parameters,
    load_ring,
    load_running_mean,
    ring_push,
    running_mean_update,
    save_ring,
    save_running_mean,
    voted_predict,
    window_mean,
)
from .errors import (
    ConfigError,
    ContractError,
    DivergenceError,
    InputError,
    SelfDistillError,
    ShapeError,
    UsageError,
)
from .optim import OptimState, accumulate, adamw_step, lr_at
from .reporting import RunReport, StabilityResult, SweepTable

__version__ = "0.1.0"
