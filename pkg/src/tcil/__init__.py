"""Post-hoc temperature calibration for class-incremental learners.

A small trainable classifier is grown task by task with experience replay;
after each task a calibration temperature is selected using only the new
task's validation split and the bounded exemplar memory, by adversarially
perturbing exemplars (direction from feature distance, magnitude from
bisection against the new-task target temperature).
"""

from .calib import (
    BinRow,
    CalibrationReport,
    Probs,
    aece,
    bin_stats,
    calibration_report,
    ece,
    nll,
    optimal_ts_oracle,
    softmax_with_temp,
    temp_opt,
)
from .cil import (
    IncrementalState,
    Memory,
    TrainConfig,
    evaluate,
    train_task,
    update_memory,
)
from .cli import (
    ExperimentConfig,
    MetricsRecord,
    default_experiment_config,
    parse_config,
    run_experiment,
    summarize,
)
from .datagen import (
    Sample,
    StreamConfig,
    TaskData,
    TaskStream,
    gen_gaussian_stream,
    load_csv_stream,
)
from .nnet import (
    ForwardTrace,
    MlpModel,
    forward,
    input_gradient,
    param_gradients,
    widen_head,
)
from .perturb import (
    DirectionPolicy,
    FeatureMeans,
    MagSearchConfig,
    MagSearchResult,
    PerturbedSet,
    TcilReport,
    feature_means,
    fgsm_targeted,
    mag_search,
    misprediction_rate,
    perturb_memory,
    select_target,
    tcil_temperature,
)

__all__ = [
    "BinRow",
    "CalibrationReport",
    "DirectionPolicy",
    "ExperimentConfig",
    "FeatureMeans",
    "ForwardTrace",
    "IncrementalState",
    "MagSearchConfig",
    "MagSearchResult",
    "Memory",
    "MetricsRecord",
    "MlpModel",
    "PerturbedSet",
    "Probs",
    "Sample",
    "StreamConfig",
    "TaskData",
    "TaskStream",
    "TcilReport",
    "TrainConfig",
    "aece",
    "bin_stats",
    "calibration_report",
    "default_experiment_config",
    "ece",
    "evaluate",
    "feature_means",
    "fgsm_targeted",
    "forward",
    "gen_gaussian_stream",
    "input_gradient",
    "load_csv_stream",
    "mag_search",
    "misprediction_rate",
    "nll",
    "optimal_ts_oracle",
    "parse_config",
    "param_gradients",
    "perturb_memory",
    "run_experiment",
    "select_target",
    "softmax_with_temp",
    "summarize",
    "tcil_temperature",
    "temp_opt",
    "train_task",
    "update_memory",
    "widen_head",
]
