"""Bipartite lower bound of the graph edit distance between keypoint graphs.

Cost model: node substitution costs the Euclidean distance between labels,
node deletion/insertion costs ``c_node``, edge substitution is free and edge
deletion/insertion costs ``c_edge``. Edge costs enter the node assignment
matrix as half of the local degree estimate so that the optimal assignment
cost never exceeds the exact edit distance.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

from . import lsap
from .errors import DegenerateWarning
from .keypoint_graph import GraphExtractionParams, KeypointGraph, build_graph
from .preprocess import skeleton_from_image


@dataclass(frozen=True)
class CostParams:
    c_node: float = 25.0
    c_edge: float = 45.0

    def __post_init__(self):
        if self.c_node < 0 or self.c_edge < 0:
            raise ValueError("edit costs must be non-negative")


@dataclass(frozen=True)
class GedResult:
    lower_bound: float
    max_ged: float
    normalized: float
    degenerate: bool = False


def build_cost_matrix(g1: KeypointGraph, g2: KeypointGraph, params: CostParams = CostParams()) -> np.ndarray:
    """(n1 + n2) square assignment matrix for the bipartite GED bound.

    Rows are the nodes of ``g1`` followed by ``n2`` placeholder rows,
    columns are the nodes of ``g2`` followed by ``n1`` placeholder columns.
    """
    n1, n2 = g1.n_nodes, g2.n_nodes
    half_edge = params.c_edge / 2.0
    deg1, deg2 = g1.degrees(), g2.degrees()
    n = n1 + n2
    cost = np.full((n, n), np.inf)
    if n1 and n2:
        cost[:n1, :n2] = cdist(g1.labels, g2.labels) + half_edge * np.abs(deg1[:, None] - deg2[None, :])
    idx1, idx2 = np.arange(n1), np.arange(n2)
    cost[idx1, n2 + idx1] = params.c_node + half_edge * deg1
    cost[n1 + idx2, idx2] = params.c_node + half_edge * deg2
    cost[n1:, n2:] = 0.0
    return cost


def ged_lower_bound(g1: KeypointGraph, g2: KeypointGraph, params: CostParams = CostParams()) -> float:
    if g1.n_nodes + g2.n_nodes == 0:
        return 0.0
    return lsap.solve(build_cost_matrix(g1, g2, params)).total_cost


def ged_max(g1: KeypointGraph, g2: KeypointGraph, params: CostParams = CostParams()) -> float:
    """Cost of deleting all of ``g1`` and inserting all of ``g2``."""
    return (g1.n_nodes + g2.n_nodes) * params.c_node + (g1.n_edges + g2.n_edges) * params.c_edge


def ged(g1: KeypointGraph, g2: KeypointGraph, params: CostParams = CostParams()) -> GedResult:
    """Lower bound, maximum and normalized GED of two graphs.

    Empty inputs are flagged: two empty graphs are at distance 0, an empty
    graph against a non-empty one at distance 1.
    """
    upper = ged_max(g1, g2, params)
    bound = ged_lower_bound(g1, g2, params)
    empty1, empty2 = g1.n_nodes == 0, g2.n_nodes == 0
    if empty1 or empty2:
        normalized = 0.0 if empty1 and empty2 else 1.0
        return GedResult(bound, upper, normalized, degenerate=True)
    if upper == 0.0:
        # zero edit costs: every graph pair is equivalent
        return GedResult(bound, upper, 0.0, degenerate=True)
    return GedResult(bound, upper, float(min(1.0, bound / upper)))


def graph_from_image(image, extraction: GraphExtractionParams = GraphExtractionParams()) -> KeypointGraph:
    return build_graph(skeleton_from_image(image), extraction)


def dissimilarity_ged(
    r,
    t,
    params: CostParams = CostParams(),
    extraction: GraphExtractionParams = GraphExtractionParams(),
) -> float:
    """Normalized graph dissimilarity in [0, 1] between two grayscale images."""
    result = ged(graph_from_image(r, extraction), graph_from_image(t, extraction), params)
    if result.degenerate:
        warnings.warn("empty keypoint graph in GED comparison", DegenerateWarning, stacklevel=2)
    return result.normalized
