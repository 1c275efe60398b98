"""Open-world learning without labels over precomputed feature vectors."""

from .discovery import PartitionSet, finch_partitions, select_partition
from .evm import (
    EvmConfig,
    EvmModel,
    ExtremeVector,
    FeatureBank,
    WeibullParams,
    compute_margins,
    evm_increment,
    evm_predict,
    evm_train,
    fit_weibull,
    psi_inclusion,
    reduce_model,
)
from .feature_io import (
    BlobGeometry,
    FeatureSet,
    StreamConfig,
    load_features,
    synthesize_stream,
    write_features,
)
from .learners import (
    AugmentedProbs,
    CbclState,
    GmmState,
    NcmState,
    NnoState,
    ScailState,
    augment_probabilities,
    fit_linear_head,
    ncmml_fit,
    ocbcl_predict,
    ocbcl_update,
    ogmm_predict,
    ogmm_robust_inverse,
    ogmm_update,
    oncm_predict,
    oncm_update,
    onno_predict,
    oscail_fit_step,
    oscail_predict,
    oscail_rescale,
)
from .manager import (
    AdmittedCluster,
    ClusterStats,
    ManagerConfig,
    QualityGate,
    ResidualBuffer,
    cluster_stats,
    label_entropy,
    manage_step,
    train_quality_svm,
)
from .metrics import OWMInputs, accuracy, b3, b3_f, macro_f1, nmi, owm
from .ood import (
    DetectorConfig,
    FeatureBounds,
    calibrate_threshold,
    clamp_feature_range,
    knownness_score,
)
from .pipeline import (
    Agent,
    AgentConfig,
    StepOutcome,
    TTestResult,
    paired_comparison,
    run_experiment,
    run_single,
)

__version__ = "0.1.0"
