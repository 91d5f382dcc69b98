"""Graph representation learning by contrasting k-means cluster assignments."""

from .augment import AugParams, View, make_views, mask_node_features, ppr_diffusion, remove_edges
from .cluster import ClusterState, KMeans, MemoryBank, bank_source, kmeans_fit, multi_cluster
from .contrastive import LossReport, contrastive_loss, multi_loss, pair_loss, predict_distribution
from .evaluation import (
    LinearProbe,
    LinkSplit,
    Metrics,
    community_detect,
    link_predict,
    make_link_split,
    node_classify,
)
from .graph import Graph, NodeSplit, load_dataset, load_graph, save_graph, split_nodes, spmm, sym_normalize
from .neuro import ModelParams, adam_step, backward, count_params, encode, init_params, project
from .pipeline import GRCCA, TrainConfig, TrainTrace, embed, train

__version__ = "0.1.0"
