"""Offline signature verification combining a graph edit distance model with a
triplet-trained embedding network."""

from .dataset import SignatureDataset, SynthConfig, generate_synthetic, load_dataset
from .embedding import EmbeddingModel, TrainConfig, dissimilarity_neural, embed, train, triplet_loss
from .evaluation import Protocol, compute_eer, grid_search_costs, run_protocol, split_protocol
from .ged import CostParams, dissimilarity_ged, ged, ged_lower_bound, ged_max
from .keypoint_graph import GraphExtractionParams, KeypointGraph, build_graph, extract_keypoints
from .lsap import solve
from .preprocess import binarize, skeletonize
from .scoring import FusionStats, UserTemplate, decide, fusion_stats, mcs_score, user_delta, verification_score

__version__ = "0.1.0"
