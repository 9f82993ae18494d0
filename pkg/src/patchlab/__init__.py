"""patchlab: black-box adversarial patch campaigns against driving oracles.

Optimizes physically-constrained patches with natural evolution strategies
under expectation-over-transformation, evaluates them across oracle
architectures, and reports transfer-matrix metrics.
"""

from .eot import EotConfig, Transform, apply_transform, expected_loss, sample_transforms
from .imaging import (
    Frame,
    Patch,
    Placement,
    clip_pixels,
    composite,
    create_patch,
    total_variation,
)
from .metrics import (
    AsrTable,
    TransferMatrix,
    TrialLog,
    build_transfer_matrix,
    ensemble_asr,
    frame_asr,
    mean_transfer_rate,
    transfer_out_rate,
    transfer_rate,
    universal_efficiency,
    vulnerability_score,
)
from .nes import NesConfig, ObjectiveSpec, estimate_gradient, evaluate_objective, nes_step, optimize
from .oracle import (
    ActionLabel,
    EmbeddingRef,
    OracleRef,
    OracleResponse,
    QueryLedger,
    embed_text,
    normalize_action,
    query_oracle,
    semantic_loss,
)
from .stats import ClusteredSample, cluster_permutation_test

__version__ = "0.1.0"
