"""Virtual CT trial engine with task-based image quality scoring and a PPO
protocol optimizer benchmarked against exhaustive search."""

from .protocol_space import (
    AXES,
    CARDINALITIES,
    KV_VALUES,
    MAS_VALUES,
    N_CANONICAL_COMBINATIONS,
    N_RAW_COMBINATIONS,
    ActionVector,
    Kernel,
    ProtocolParams,
    decode,
    encode,
    enumerate_canonical,
    iter_raw_actions,
)
from .phantom import (
    Lesion,
    MaterialTable,
    PatientAttrs,
    Phantom,
    PhantomGenerationError,
    cohort,
    generate,
    make_disk_phantom,
    read_phantom,
    write_phantom,
)
from .vct_engine import (
    FilterSpec,
    ReconImage,
    ScannerConfig,
    Sinogram,
    acquire_and_reconstruct,
    add_noise,
    forward_project,
    make_filter,
    read_image,
    reconstruct,
    write_image,
)
from .iq_metrics import (
    IqReport,
    LesionMeasure,
    MetricError,
    MtfCurve,
    NpsMap,
    cnr,
    detectability,
    detection_accuracy,
    full_report,
    lesion_contrast,
    measure_mtf,
    measure_nps,
    noise_index,
)
from .optimizer import (
    EvalOutcome,
    OptimizerError,
    PolicyNetwork,
    PpoHyper,
    ProtocolEnv,
    SweepRow,
    SweepTable,
    TrainLog,
    efficiency_report,
    env_step,
    evaluate_protocol,
    exhaustive_search,
    load_policy,
    ppo_update,
    save_policy,
    train,
)
from .cli import PlaneFit, RunConfig, fit_plane, main, threshold_protocol

__version__ = "0.1.0"

__all__ = [
    "AXES",
    "CARDINALITIES",
    "KV_VALUES",
    "MAS_VALUES",
    "N_CANONICAL_COMBINATIONS",
    "N_RAW_COMBINATIONS",
    "ActionVector",
    "EvalOutcome",
    "FilterSpec",
    "IqReport",
    "Kernel",
    "Lesion",
    "LesionMeasure",
    "MaterialTable",
    "MetricError",
    "MtfCurve",
    "NpsMap",
    "OptimizerError",
    "PatientAttrs",
    "Phantom",
    "PhantomGenerationError",
    "PlaneFit",
    "PolicyNetwork",
    "PpoHyper",
    "ProtocolEnv",
    "ProtocolParams",
    "ReconImage",
    "RunConfig",
    "ScannerConfig",
    "Sinogram",
    "SweepRow",
    "SweepTable",
    "TrainLog",
    "acquire_and_reconstruct",
    "add_noise",
    "cnr",
    "cohort",
    "decode",
    "detectability",
    "detection_accuracy",
    "efficiency_report",
    "encode",
    "enumerate_canonical",
    "env_step",
    "evaluate_protocol",
    "exhaustive_search",
    "fit_plane",
    "forward_project",
    "full_report",
    "generate",
    "iter_raw_actions",
    "make_filter",
    "lesion_contrast",
    "load_policy",
    "main",
    "read_image",
    "make_disk_phantom",
    "measure_mtf",
    "measure_nps",
    "noise_index",
    "ppo_update",
    "read_phantom",
    "reconstruct",
    "save_policy",
    "threshold_protocol",
    "train",
    "write_image",
    "write_phantom",
]
