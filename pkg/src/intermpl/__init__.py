"""CTC sequence recognition with intermediate losses and momentum
pseudo-labeling, small enough to verify exactly on a desk."""

from .autodiff import NumericError
from .ctc import (
    BLANK,
    CtcLossResult,
    InfeasibleTargetError,
    best_path_decode,
    brute_force_ctc_loss,
    collapse,
    ctc_loss,
    min_frames,
)
from .metrics import WerResult, word_error_rate, wer_recovery_rate
from .model import ModelConfig, init_params, intermediate_loss, model_forward
from .optim import (
    LrSchedule,
    OptimizerState,
    ParamSet,
    ParamTensor,
    adam_step,
    average_params,
    ema_update,
    schedule_lr,
)
from .vocab import VocabHierarchy, build_hierarchy, load_vocab

__version__ = "0.1.0"

__all__ = [
    "BLANK",
    "CtcLossResult",
    "InfeasibleTargetError",
    "LrSchedule",
    "ModelConfig",
    "NumericError",
    "OptimizerState",
    "ParamSet",
    "ParamTensor",
    "VocabHierarchy",
    "WerResult",
    "adam_step",
    "average_params",
    "best_path_decode",
    "brute_force_ctc_loss",
    "build_hierarchy",
    "collapse",
    "ctc_loss",
    "ema_update",
    "init_params",
    "intermediate_loss",
    "load_vocab",
    "min_frames",
    "model_forward",
    "schedule_lr",
    "wer_recovery_rate",
    "word_error_rate",
]
