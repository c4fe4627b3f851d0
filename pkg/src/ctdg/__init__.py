"""Continuous-time dynamic graph engine.

Block-based temporal graph storage, temporal k-hop sampling, vectorized
feature caches, online hash partitioning, a simulated distributed sampling
cluster, and a continuous-learning benchmark harness.
"""

from .storage import (
    AdaptiveSizing,
    BatchSizing,
    BlockSizing,
    DynamicGraph,
    FixedSizing,
    InsertionBatch,
    InsertionResult,
    NodeEntry,
    NodeNotFoundError,
    StorageStats,
    new_graph,
    parse_offload,
)
from .sampling import (
    LayeredSample,
    SampleLayer,
    SampleRequest,
    SamplingPolicy,
    random_walk,
    sample_khop,
    sample_layer,
)
from .features import (
    EdgeFeatureTable,
    NodeFeatureTable,
    NodeMemoryTable,
    load_feature_table,
    save_edge_features,
    save_node_features,
)
from .cache import CacheSnapshot, VectorCache, load_cache
from .partition import BalanceStats, PartitionSpec, assign, balance_stats, dispatch
from .cluster import ClusterSim, ClusterSpec, Origin, RemoteRequestError, measure_cv, route
from .metrics import access_distribution, coefficient_of_variation, jaccard
from .synth import generate_synthetic
from .harness import CacheConfig, RoundReport, RunConfig, bench, load_config, run_continuous

__version__ = "0.1.0"

__all__ = [
    "AdaptiveSizing",
    "BalanceStats",
    "BatchSizing",
    "BlockSizing",
    "CacheConfig",
    "CacheSnapshot",
    "ClusterSim",
    "ClusterSpec",
    "DynamicGraph",
    "EdgeFeatureTable",
    "FixedSizing",
    "InsertionBatch",
    "InsertionResult",
    "LayeredSample",
    "NodeEntry",
    "NodeFeatureTable",
    "NodeMemoryTable",
    "NodeNotFoundError",
    "Origin",
    "PartitionSpec",
    "RemoteRequestError",
    "RoundReport",
    "RunConfig",
    "SampleLayer",
    "SampleRequest",
    "SamplingPolicy",
    "StorageStats",
    "VectorCache",
    "access_distribution",
    "assign",
    "balance_stats",
    "bench",
    "coefficient_of_variation",
    "dispatch",
    "generate_synthetic",
    "jaccard",
    "load_cache",
    "load_config",
    "load_feature_table",
    "measure_cv",
    "new_graph",
    "parse_offload",
    "random_walk",
    "route",
    "run_continuous",
    "sample_khop",
    "sample_layer",
    "save_edge_features",
    "save_node_features",
]
