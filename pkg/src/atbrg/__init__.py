"""Knowledge-graph relational CTR modelling at desk scale.

Subgraph extraction between a target item and a user's behaviors, a graph
attention scorer trained with a small reverse-mode autodiff, and the tooling
around it (synthetic data, validation, metrics, CLI).
"""

from .data import Dataset, Sample, Schema, SideSchema, load_dataset, read_interactions
from .errors import AtbrgError
from .kg import KnowledgeGraph, ProfileTable, load_kg_dir, write_kg_dir
from .metrics import auc, bucket_spearman, ctr_by_node_count, relative_improvement
from .model import ModelConfig
from .subgraph import RelationalSubgraph, SubgraphCache, build, default_backend, native_available
from .synth import SynthSpec, generate, validate
from .training import Checkpoint, Pipeline, evaluate, preset_grid, run_ablation, train

__version__ = "0.1.0"

__all__ = [
    "AtbrgError", "Checkpoint", "Dataset", "KnowledgeGraph", "ModelConfig", "Pipeline", "ProfileTable",
    "RelationalSubgraph", "Sample", "Schema", "SideSchema", "SubgraphCache", "SynthSpec", "auc",
    "bucket_spearman", "build", "ctr_by_node_count", "default_backend", "evaluate", "generate",
    "load_dataset", "load_kg_dir", "native_available", "preset_grid", "read_interactions",
    "relative_improvement", "run_ablation", "train", "validate", "write_kg_dir",
]
