"""Keypoint graphs traced from one-pixel-wide skeletons.

Nodes are skeleton end points, junction points and points sampled every ``D``
pixels of path length along each branch. Nodes are labeled with their
(x, y) pixel coordinates, shifted so the label mean is the origin. Edges are
unlabeled and join nodes that follow each other along the skeleton.
"""

from __future__ import annotations

import math
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from .preprocess import EIGHT_CONNECTED, NEIGHBOUR_OFFSETS, neighbour_count

END, JUNCTION, SAMPLED = "end", "junction", "sampled"


@dataclass(frozen=True)
class GraphExtractionParams:
    sampling_d: float = 25.0

    def __post_init__(self):
        if not self.sampling_d > 0:
            raise ValueError("sampling interval D must be positive")


@dataclass(frozen=True)
class Keypoint:
    x: float
    y: float
    role: str


@dataclass(frozen=True)
class Branch:
    """A run of regular (two-neighbour) skeleton pixels between two nodes."""

    start: int
    end: int
    pixels: tuple[tuple[int, int], ...]


@dataclass(frozen=True, eq=False)
class KeypointGraph:
    """Undirected graph with centered 2-D node labels.

    ``labels[i]`` is the (x, y) label of node ``i``; ``edges`` holds sorted
    ``(i, j)`` pairs with ``i < j``.
    """

    labels: np.ndarray
    edges: tuple[tuple[int, int], ...]
    roles: tuple[str, ...] = field(default=())

    def __post_init__(self):
        labels = np.array(self.labels, dtype=float).reshape(-1, 2)
        labels.setflags(write=False)
        object.__setattr__(self, "labels", labels)
        n = len(labels)
        edges = set()
        for a, b in self.edges:
            a, b = int(a), int(b)
            if a == b:
                raise ValueError(f"self-loop on node {a}")
            if not (0 <= a < n and 0 <= b < n):
                raise ValueError(f"edge ({a}, {b}) references a missing node")
            edges.add((min(a, b), max(a, b)))
        object.__setattr__(self, "edges", tuple(sorted(edges)))
        if not self.roles:
            object.__setattr__(self, "roles", ("",) * n)
        elif len(self.roles) != n:
            raise ValueError("roles must have one entry per node")

    @property
    def n_nodes(self) -> int:
        return len(self.labels)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    def degrees(self) -> np.ndarray:
        deg = np.zeros(self.n_nodes, dtype=int)
        for a, b in self.edges:
            deg[a] += 1
            deg[b] += 1
        return deg

    def adjacency(self) -> np.ndarray:
        adj = np.zeros((self.n_nodes, self.n_nodes), dtype=bool)
        for a, b in self.edges:
            adj[a, b] = adj[b, a] = True
        return adj

    def __eq__(self, other):
        if not isinstance(other, KeypointGraph):
            return NotImplemented
        return (
            self.edges == other.edges
            and self.labels.shape == other.labels.shape
            and bool(np.all(self.labels == other.labels))
        )

    __hash__ = None

    def to_text(self) -> str:
        lines = [f"{self.n_nodes} {self.n_edges}"]
        lines += [f"{i} {x!r} {y!r}" for i, (x, y) in enumerate(self.labels.tolist())]
        lines += [f"{a} {b}" for a, b in self.edges]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "KeypointGraph":
        rows = [line.split() for line in text.splitlines() if line.strip()]
        n, m = int(rows[0][0]), int(rows[0][1])
        if len(rows) != 1 + n + m:
            raise ValueError(f"expected {1 + n + m} lines, found {len(rows)}")
        labels = np.zeros((n, 2))
        for row in rows[1 : 1 + n]:
            labels[int(row[0])] = float(row[1]), float(row[2])
        edges = [(int(r[0]), int(r[1])) for r in rows[1 + n :]]
        return cls(labels, tuple(edges))

    def to_gxl(self, graph_id: str = "keypoints") -> str:
        root = ET.Element("gxl")
        g = ET.SubElement(root, "graph", id=graph_id, edgeids="false", edgemode="undirected")
        for i, (x, y) in enumerate(self.labels.tolist()):
            node = ET.SubElement(g, "node", id=f"_{i}")
            for name, value in (("x", x), ("y", y)):
                ET.SubElement(ET.SubElement(node, "attr", name=name), "float").text = repr(value)
        for a, b in self.edges:
            ET.SubElement(g, "edge", attrib={"from": f"_{a}", "to": f"_{b}"})
        return ET.tostring(root, encoding="unicode", xml_declaration=True)

    @classmethod
    def from_gxl(cls, text: str) -> "KeypointGraph":
        g = ET.fromstring(text).find("graph")
        ids, labels = {}, []
        for node in g.findall("node"):
            attrs = {a.get("name"): float(a[0].text) for a in node.findall("attr")}
            ids[node.get("id")] = len(labels)
            labels.append((attrs["x"], attrs["y"]))
        edges = [(ids[e.get("from")], ids[e.get("to")]) for e in g.findall("edge")]
        return cls(np.array(labels).reshape(-1, 2), tuple(edges))

    def save(self, path) -> None:
        path = Path(path)
        path.write_text(self.to_gxl() if path.suffix == ".gxl" else self.to_text())


def _step(a, b) -> float:
    return math.sqrt(2.0) if a[0] != b[0] and a[1] != b[1] else 1.0


def _sample_indices(cum: list[float], d: float) -> list[int]:
    """Indices of the first pixels reaching each multiple of ``d`` along a chain.

    ``cum`` holds path lengths of the interior pixels; a multiple past the last
    interior pixel would land on the terminal node and is dropped.
    """
    picks = []
    if not cum:
        return picks
    k = 1
    idx = 0
    while k * d <= cum[-1]:
        while cum[idx] < k * d:
            idx += 1
        if not picks or picks[-1] != idx:
            picks.append(idx)
        k += 1
    return picks


class _Tracer:
    def __init__(self, skeleton, d: float):
        self.mask = np.asarray(skeleton, dtype=bool)
        if self.mask.ndim != 2:
            raise ValueError("expected a 2-D skeleton mask")
        self.d = float(d)
        self.count = np.where(self.mask, neighbour_count(self.mask), 0)
        self.node_of = np.full(self.mask.shape, -1, dtype=int)
        self.points: list[Keypoint] = []
        self.edges: set[tuple[int, int]] = set()
        self.branches: list[Branch] = []

    def _neighbours(self, y, x):
        h, w = self.mask.shape
        for dy, dx in NEIGHBOUR_OFFSETS:
            yy, xx = y + dy, x + dx
            if 0 <= yy < h and 0 <= xx < w and self.mask[yy, xx]:
                yield yy, xx

    def _add_node(self, x, y, role) -> int:
        self.points.append(Keypoint(float(x), float(y), role))
        return len(self.points) - 1

    def _link(self, a, b):
        if a != b:
            self.edges.add((min(a, b), max(a, b)))

    def run(self):
        mask, count = self.mask, self.count
        ends = mask & (count <= 1)
        junction = mask & (count >= 3)

        labels, n_clusters = ndimage.label(junction, structure=EIGHT_CONNECTED)
        structural = []
        for y, x in zip(*np.nonzero(ends)):
            structural.append(((y, x), [(y, x)], END))
        for idx, sl in enumerate(ndimage.find_objects(labels), start=1):
            ys, xs = np.nonzero(labels[sl] == idx)
            ys, xs = ys + sl[0].start, xs + sl[1].start
            pix = sorted(zip(ys.tolist(), xs.tolist()))
            structural.append((pix[0], pix, JUNCTION))
        structural.sort(key=lambda item: item[0])
        for _, pix, role in structural:
            ys = [p[0] for p in pix]
            xs = [p[1] for p in pix]
            node = self._add_node(np.mean(xs), np.mean(ys), role)
            for p in pix:
                self.node_of[p] = node

        for y, x in zip(*np.nonzero(self.node_of >= 0)):
            for q in self._neighbours(y, x):
                if self.node_of[q] >= 0:
                    self._link(self.node_of[y, x], self.node_of[q])

        regular = mask & (self.node_of < 0)
        comp, n_comp = ndimage.label(regular, structure=EIGHT_CONNECTED)
        for idx, sl in enumerate(ndimage.find_objects(comp), start=1):
            ys, xs = np.nonzero(comp[sl] == idx)
            pix = sorted(zip((ys + sl[0].start).tolist(), (xs + sl[1].start).tolist()))
            self._trace_component(pix)

    def _trace_component(self, pix):
        members = set(pix)
        inner = {p: [q for q in self._neighbours(*p) if q in members] for p in pix}
        terminals = [p for p in pix if len(inner[p]) <= 1]
        if not terminals:
            self._trace_loop(pix[0], inner)
            return

        chain = [terminals[0]]
        prev = None
        while True:
            nxt = [q for q in inner[chain[-1]] if q != prev]
            if not nxt:
                break
            prev = chain[-1]
            chain.append(nxt[0])

        def outer(p):
            return sorted(q for q in self._neighbours(*p) if self.node_of[q] >= 0)

        first = outer(chain[0])
        if len(chain) == 1:
            s_pix, e_pix = first[0], first[-1]
        else:
            s_pix, e_pix = first[0], outer(chain[-1])[0]
        if e_pix < s_pix:
            chain.reverse()
            s_pix, e_pix = e_pix, s_pix

        cum, total, last = [], 0.0, s_pix
        for p in chain:
            total += _step(last, p)
            cum.append(total)
            last = p
        start, end = int(self.node_of[s_pix]), int(self.node_of[e_pix])
        nodes = [start]
        for i in _sample_indices(cum, self.d):
            y, x = chain[i]
            nodes.append(self._add_node(x, y, SAMPLED))
        nodes.append(end)
        for a, b in zip(nodes, nodes[1:]):
            self._link(a, b)
        self.branches.append(Branch(start, end, tuple(chain)))

    def _trace_loop(self, anchor, inner):
        chain = [anchor]
        prev = None
        nxt = [q for q in self._neighbours(*anchor) if q in inner][0]
        while nxt != anchor:
            prev, cur = chain[-1], nxt
            chain.append(cur)
            nxt = [q for q in inner[cur] if q != prev][0]
        cum, total = [], 0.0
        for a, b in zip(chain, chain[1:]):
            total += _step(a, b)
            cum.append(total)
        head = self._add_node(anchor[1], anchor[0], SAMPLED)
        nodes = [head]
        for i in _sample_indices(cum, self.d):
            y, x = chain[i + 1]
            nodes.append(self._add_node(x, y, SAMPLED))
        nodes.append(head)
        for a, b in zip(nodes, nodes[1:]):
            self._link(a, b)
        self.branches.append(Branch(head, head, tuple(chain)))


def _params_d(params) -> float:
    if params is None:
        return GraphExtractionParams().sampling_d
    if isinstance(params, GraphExtractionParams):
        return params.sampling_d
    return GraphExtractionParams(float(params)).sampling_d


def extract_keypoints(skeleton, params=None) -> list[Keypoint]:
    """Keypoints of a skeleton in image coordinates (x = column, y = row)."""
    tracer = _Tracer(skeleton, _params_d(params))
    tracer.run()
    return list(tracer.points)


def trace_branches(skeleton, params=None) -> list[Branch]:
    tracer = _Tracer(skeleton, _params_d(params))
    tracer.run()
    return list(tracer.branches)


def build_graph(skeleton, params=None) -> KeypointGraph:
    """Build the centered keypoint graph of a skeleton image.

    Disconnected skeleton components all go into one graph; centering uses the
    mean over every node.
    """
    tracer = _Tracer(skeleton, _params_d(params))
    tracer.run()
    if not tracer.points:
        return KeypointGraph(np.zeros((0, 2)), ())
    labels = np.array([(p.x, p.y) for p in tracer.points], dtype=float)
    labels -= labels.mean(axis=0)
    return KeypointGraph(labels, tuple(tracer.edges), tuple(p.role for p in tracer.points))
