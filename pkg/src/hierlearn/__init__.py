"""hierlearn: hierarchy-aware classification-based metric learning at desk scale."""

__version__ = "0.1.0"

from .hierarchy import (
    ClassDistanceMatrix,
    HierarchyTree,
    distance_matrices,
    hierarchical_distance,
    hierarchical_similarity,
    parse_hierarchy,
    serialize_hierarchy,
    transformed_distance,
)
from .heads import (
    HeadConfig,
    ProbabilityOutput,
    confidence_argmax_on_circle,
    corr_loss,
    cross_entropy_loss,
    normface_probs,
    plain_softmax_probs,
    proxydr_probs,
    sd_softmax_sphere_probs,
)
from .proxy import (
    PrototypeSet,
    ProxySet,
    compute_prototypes,
    ema_update,
    mds_place,
    pairwise_representative_distances,
)
from .scale import (
    ScaleState,
    dynamic_scale_update,
    init_scale_state,
    init_static_scale,
    psi_normface,
    psi_proxydr,
)
from .model import EmbedderModel
from .optim import AdamState, adam_step, finite_diff_check
from .data import Dataset, SplitSpec, generate_synthetic, load_dataset, save_dataset, split
from .metrics import (
    MetricsReport,
    ahd,
    ahs_at_K,
    full_report,
    hp_at_k,
    hs_at_k,
    mean_correlation,
    retrieval_lists,
    topk_accuracy,
)
from .trainer import Checkpoint, TrainConfig, TrainTrace, predict_topk, train

__all__ = [name for name in dir() if not name.startswith("_")]
