"""Self-supervised leaf instance segmentation machinery for plant point clouds."""
from .augment import (
    DistortionParams,
    OcclusionParams,
    ViewConfig,
    leaf_distortion,
    leaf_occlusion,
    make_views,
    standard_augment,
)
from .cloud import (
    PointCloud,
    SynthPlantParams,
    load_cloud,
    plant_center,
    plant_fixtures,
    save_cloud,
    subsample,
    synth_plant,
)
from .cluster import (
    InstanceAssignment,
    PostprocessConfig,
    agglomerative_cluster,
    dbscan,
    graph_cut_cluster,
    initial_radius,
    radius_decremental_cluster,
)
from .errors import DivergenceError, InputError
from .evaluation import (
    NoiseConfig,
    SweepConfig,
    add_noise,
    average_precision,
    instance_iou,
    mean_average_precision,
    noise_sweep,
    perfect_embeddings,
)
from .geodesy import (
    KnnGraph,
    apsp_sparse,
    build_knn_graph,
    euclidean_distance_matrix,
    floyd_warshall,
    init_distance_matrix,
    similarity_matrix,
)
from .loss import (
    LossConfig,
    contrastive_loss,
    cross_similarity,
    loss_gradient,
    normalize_embeddings,
    optimize_embeddings,
)

__version__ = "0.1.0"

__all__ = [
    "DistortionParams",
    "OcclusionParams",
    "ViewConfig",
    "leaf_distortion",
    "leaf_occlusion",
    "make_views",
    "standard_augment",
    "PointCloud",
    "SynthPlantParams",
    "load_cloud",
    "plant_center",
    "plant_fixtures",
    "save_cloud",
    "subsample",
    "synth_plant",
    "InstanceAssignment",
    "PostprocessConfig",
    "agglomerative_cluster",
    "dbscan",
    "graph_cut_cluster",
    "initial_radius",
    "radius_decremental_cluster",
    "NoiseConfig",
    "SweepConfig",
    "add_noise",
    "average_precision",
    "instance_iou",
    "mean_average_precision",
    "noise_sweep",
    "perfect_embeddings",
    "KnnGraph",
    "apsp_sparse",
    "build_knn_graph",
    "euclidean_distance_matrix",
    "floyd_warshall",
    "init_distance_matrix",
    "similarity_matrix",
    "LossConfig",
    "contrastive_loss",
    "cross_similarity",
    "loss_gradient",
    "normalize_embeddings",
    "optimize_embeddings",
    "DivergenceError",
    "InputError",
]
