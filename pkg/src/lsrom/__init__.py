"""Self-refining SOM clustering for imbalanced data chunks.

Pipeline per chunk: min-max normalization, randomized SOM, k-means
fine-tuning, bridge-node removal, then topology-guided merging with an
automatic choice of the cluster count.
"""

from __future__ import annotations

from .ann import AnnIndex, AnnParams, exact_knn
from .core import DataChunk, Partition, TopologyModel, normalize_min_max, read_chunk_csv
from .harness import RunConfig, run_chunk, run_stream
from .kernels import BACKEND
from .merge import MergeParams, MergeTrace, run_merge
from .metrics import EvalReport, dcv, nmi
from .refine import MicroClusterModel, kmeans_finetune, remove_bridge_nodes
from .rsom import RsomParams, TrainedSom, train
from .tlrs import TlrsSpec, generate_chunk, generate_stream

__version__ = "0.1.0"

__all__ = [
    "AnnIndex", "AnnParams", "BACKEND", "DataChunk", "EvalReport", "MergeParams", "MergeTrace",
    "MicroClusterModel", "Partition", "RsomParams", "RunConfig", "TlrsSpec", "TopologyModel",
    "TrainedSom", "dcv", "exact_knn", "generate_chunk", "generate_stream", "kmeans_finetune",
    "nmi", "normalize_min_max", "read_chunk_csv", "remove_bridge_nodes", "run_chunk",
    "run_merge", "run_stream", "train",
]
