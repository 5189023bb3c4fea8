"""Selective state-space layers with a materialized hidden-attention view,
attention and feature knockout, a softmax-attention baseline, a toy trainer
and an experiment harness."""
from .archive import load_model, load_weights, read_archive, save_weights, write_archive
from .attention import (
    AttentionTensor,
    KnockoutMask,
    dual_path_check,
    forward_via_attention,
    materialize,
    recurrent_forward,
)
from .config import ModelSpec
from .data import PromptRecord, Vocab, filter_correct, filter_correct_all, load_counterfact, read_records, \
    triplets_to_records, write_records
from .errors import (
    ClassificationError,
    ConfigError,
    ContractError,
    DimensionError,
    InputError,
    NumericError,
    SpecError,
    SsmkoError,
    TrainingFault,
    UndefinedBaselineError,
)
from .estimators import FactRecallModel, KnockoutSweep
from .experiments import (
    BaselineCache,
    SweepResult,
    feature_knockout_study,
    info_flow_sweep,
    knockout_heatmap,
    last_token_scatter,
    window_size_study,
)
from .knockout import (
    FeatureClassification,
    KnockoutSpec,
    apply_knockout,
    classify_features,
    knocked_forward,
    relative_change,
    token_probability,
)
from .model import ModelWeights, init_weights, model_forward
from .tasks import TaskConfig, generate_task
from .trainer import TrainConfig, TrainResult, train

__version__ = "0.1.0"

__all__ = [
    "AttentionTensor", "BaselineCache", "ClassificationError", "ConfigError", "ContractError", "DimensionError",
    "FactRecallModel", "FeatureClassification", "InputError", "KnockoutMask", "KnockoutSpec", "KnockoutSweep",
    "ModelSpec", "ModelWeights", "NumericError", "PromptRecord", "SpecError", "SsmkoError", "SweepResult",
    "TaskConfig", "TrainConfig", "TrainResult", "TrainingFault", "UndefinedBaselineError", "Vocab",
    "apply_knockout", "classify_features", "dual_path_check", "feature_knockout_study", "filter_correct",
    "filter_correct_all", "forward_via_attention", "generate_task", "info_flow_sweep", "init_weights",
    "knocked_forward", "knockout_heatmap", "last_token_scatter", "load_counterfact", "load_model", "load_weights",
    "materialize", "model_forward", "read_archive", "read_records", "recurrent_forward", "relative_change",
    "save_weights", "token_probability", "train", "triplets_to_records", "window_size_study", "write_archive",
    "write_records",
]
