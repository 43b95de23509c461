"""Counting-generalization laboratory for single-cell recurrent networks.

Generates balanced-bracket (Dyck-1) datasets, trains LSTM / GRU / ReLU cells
online with hand-rolled backpropagation through time, measures long-sequence
generalization via the first point of failure, and relates loss to
generalization with simple-regression statistics. Exact hand-constructed
counter networks serve as oracles throughout.
"""

from .analysis import (
    FpfHistogram,
    HistogramSpec,
    RegressionResult,
    fpf_histogram,
    neg_log_loss,
    ols,
    student_t_p,
)
from .cells import (
    CellKind,
    CellState,
    CounterSpec,
    ForwardTrace,
    OutputActivation,
    ParamSet,
    forward,
    init_params,
    make_relu_counter,
    make_saturated_lstm_counter,
    step,
    zero_state,
)
from .config import CampaignSpec, ExperimentConfig, default_config, load_config
from .dyck import (
    DatasetSplit,
    DyckWord,
    GenSpec,
    SplitName,
    TargetSeq,
    Token,
    ZigzagSpec,
    depth_profile,
    generate_split,
    generate_word,
    generate_zigzag,
    make_zigzag_split,
    next_targets,
    read_split,
    write_split,
)
from .errors import (
    ConfigError,
    CountlabError,
    DataError,
    DegenerateX,
    GenerationStalled,
    IndivisibleLength,
    InsufficientData,
    LengthMismatch,
    NegativeDepth,
    NonFinite,
    NonPositiveLoss,
    ParseError,
)
from .evaluation import (
    DeltaProfile,
    EvalReport,
    FpfAggregate,
    FpfRecord,
    SaturationReport,
    counter_trace,
    delta_profile,
    evaluate_split,
    evaluate_split_with_fpf,
    fpf,
    fpf_aggregate,
    mean_fpf,
    saturation_report,
    token_correct,
)
from .training import (
    LossKind,
    OptState,
    RunRecord,
    TrainConfig,
    adam_step,
    bptt_grads,
    fd_check,
    gradcheck_suite,
    init_opt,
    load_checkpoint,
    save_checkpoint,
    select_best_runs,
    sequence_loss,
    train_run,
)

__version__ = "0.1.0"
