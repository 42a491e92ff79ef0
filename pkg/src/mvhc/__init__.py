"""Contrastive multi-view hierarchical clustering with hyperbolic embeddings."""

__version__ = "0.1.0"

from .data import MultiViewDataset, PipelineConfig, load_config, load_views, synth_hier_gaussian
from .estimators import HyperbolicHC, LinkageClustering, MultiViewHierarchicalClustering
from .metrics import dasgupta_cost, dendrogram_purity
from .tree import Dendrogram, from_newick, linkage, to_newick

__all__ = [
    "Dendrogram",
    "HyperbolicHC",
    "LinkageClustering",
    "MultiViewDataset",
    "MultiViewHierarchicalClustering",
    "PipelineConfig",
    "dasgupta_cost",
    "dendrogram_purity",
    "from_newick",
    "linkage",
    "load_config",
    "load_views",
    "synth_hier_gaussian",
    "to_newick",
]
