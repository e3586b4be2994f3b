"""Imbalanced graph classification via a kernel-built graph-of-graphs.

Pipeline: TUDataset ingestion -> pairwise graph-kernel similarity -> kNN
graph-of-graphs -> GIN encoding with parameter-free GoG propagation ->
stochastic topological augmentation with self-consistency regularization.
"""

from .augment import AugmentConfig, augment_set, augment_variant, mask_node_features, remove_edges
from .data import (
    Dataset,
    DatasetStats,
    Graph,
    Split,
    dataset_stats,
    degree_onehot_features,
    load_tudataset,
    make_imbalanced_split,
    ratio_counts,
    save_tudataset,
    upsample_minority,
)
from .kernels import (
    GoGraph,
    SimilarityMatrix,
    edge_homophily,
    knn_gog,
    load_similarity,
    save_similarity,
    shortest_path_kernel,
    similarity_matrix,
    wl_kernel,
)
from .nn import (
    Classifier,
    GinEncoder,
    Model,
    OptimizerState,
    adam_step,
    build_model,
    encoder_forward,
    gin_layer_forward,
    load_checkpoint,
    readout_sum,
    save_checkpoint,
    softmax_cross_entropy,
)
from .propagation import (
    PropagationPlan,
    batch_induced_subgraph,
    full_plan,
    propagate,
    smoothing_bound_check,
    stationary_check,
)
from .training import (
    ExperimentReport,
    TrainConfig,
    TrainResult,
    f1_scores,
    predict,
    run_experiment,
    self_consistency_loss,
    sharpen,
    total_loss,
    train,
)

__version__ = "0.1.0"
