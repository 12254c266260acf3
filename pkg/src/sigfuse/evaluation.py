"""Evaluation protocols: reference splits, EER/DET, fusion runs and grid search."""

from __future__ import annotations

import csv
import logging
import math
import sqlite3
import threading
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import scoring
from .dataset import SignatureDataset
from .embedding import EmbeddingModel, embed_many
from .errors import DegenerateUser, EmptyScoreList, InsufficientGenuines
from .ged import CostParams, ged, graph_from_image
from .keypoint_graph import GraphExtractionParams

log = logging.getLogger(__name__)

SKILLED, RANDOM = "skilled", "random"
FIRST_K, RANDOM_SEEDED = "first_k", "random_seeded"
SYSTEMS = ("ged", "neural", "mcs")
DEFAULT_GRID = tuple(range(10, 61, 5))


@dataclass(frozen=True)
class Protocol:
    reference_count: int = 10
    forgery_mode: str = SKILLED
    reference_selection: str = FIRST_K
    runs: int = 1
    seed: int = 0
    aposteriori: bool = False

    def __post_init__(self):
        if self.reference_count < 2:
            raise ValueError("need at least two references per user")
        if self.forgery_mode not in (SKILLED, RANDOM):
            raise ValueError(f"unknown forgery mode {self.forgery_mode!r}")
        if self.reference_selection not in (FIRST_K, RANDOM_SEEDED):
            raise ValueError(f"unknown reference selection {self.reference_selection!r}")
        if self.runs < 1:
            raise ValueError("runs must be >= 1")


@dataclass(frozen=True)
class UserSplit:
    user_id: str
    references: tuple[str, ...]
    genuine: tuple[str, ...]
    forgeries: tuple[str, ...]


def split_protocol(dataset: SignatureDataset, protocol: Protocol, run: int = 0) -> list[UserSplit]:
    """Per-user references, genuine tests and forgery tests for one run.

    Random forgeries are the first genuine signature of every other user.
    Seeded reference draws depend only on (seed, run, user position), so every
    system evaluated with the same protocol sees the same references.
    """
    k = protocol.reference_count
    for u in dataset.users:
        if len(u.genuine) <= k:
            raise InsufficientGenuines(f"user {u.user_id} has {len(u.genuine)} genuine, need > {k}")
    rng = np.random.default_rng([protocol.seed, run])
    splits = []
    for u in dataset.users:
        if protocol.reference_selection == FIRST_K:
            chosen = list(range(k))
        else:
            chosen = sorted(rng.choice(len(u.genuine), size=k, replace=False).tolist())
        picked = set(chosen)
        refs = tuple(u.genuine[i] for i in chosen)
        tests = tuple(g for i, g in enumerate(u.genuine) if i not in picked)
        if protocol.forgery_mode == SKILLED:
            forgeries = tuple(u.forgeries)
        else:
            forgeries = tuple(v.genuine[0] for v in dataset.users if v.user_id != u.user_id)
        splits.append(UserSplit(u.user_id, refs, tests, forgeries))
    return splits


def split_counts(splits: Sequence[UserSplit]) -> dict[str, int]:
    return {
        "references": sum(len(s.references) for s in splits),
        "genuine": sum(len(s.genuine) for s in splits),
        "forgeries": sum(len(s.forgeries) for s in splits),
    }


# -- EER / DET ----------------------------------------------------------------


@dataclass(frozen=True)
class DetCurve:
    """Operating points over ascending thresholds (accept iff score < threshold)."""

    thresholds: np.ndarray
    far: np.ndarray
    frr: np.ndarray

    @property
    def points(self) -> list[tuple[float, float]]:
        return list(zip(self.far.tolist(), self.frr.tolist()))

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["threshold", "far", "frr"])
            for row in zip(self.thresholds.tolist(), self.far.tolist(), self.frr.tolist()):
                w.writerow([repr(v) for v in row])


@dataclass(frozen=True)
class EerResult:
    eer: float
    threshold: float
    det: DetCurve


def det_curve(genuine: Sequence[float], forgery: Sequence[float]) -> DetCurve:
    g = np.sort(np.asarray(genuine, dtype=float))
    f = np.sort(np.asarray(forgery, dtype=float))
    if g.size == 0 or f.size == 0:
        raise EmptyScoreList("both genuine and forgery scores are required")
    observed = np.unique(np.concatenate([g, f]))
    span = observed[-1] - observed[0]
    beyond = observed[-1] + (span if span > 0 else 1.0)
    thresholds = np.append(observed, beyond)
    far = np.searchsorted(f, thresholds, side="left") / f.size
    frr = (g.size - np.searchsorted(g, thresholds, side="left")) / g.size
    return DetCurve(thresholds, far, frr)


def compute_eer(genuine: Sequence[float], forgery: Sequence[float]) -> EerResult:
    """Equal error rate with FAR(t) = P(forgery < t) and FRR(t) = P(genuine >= t).

    Thresholds sweep the observed scores plus one value above them all. When
    no swept threshold gives FAR == FRR, both the rate and the threshold are
    interpolated linearly between the two operating points around the crossing.
    """
    det = det_curve(genuine, forgery)
    far, frr, th = det.far, det.frr, det.thresholds
    i = int(np.argmax(far >= frr))
    if far[i] == frr[i]:
        return EerResult(float(far[i]), float(th[i]), det)
    gap0, gap1 = frr[i - 1] - far[i - 1], frr[i] - far[i]
    t = gap0 / (gap0 - gap1)
    eer = far[i - 1] + t * (far[i] - far[i - 1])
    return EerResult(float(eer), float(th[i - 1] + t * (th[i] - th[i - 1])), det)


def aposteriori_user_norm(
    per_user: Mapping[str, tuple[Sequence[float], Sequence[float]]],
    mode: str = "scale",
) -> dict[str, tuple[list[float], list[float]]]:
    """Align every user's own EER threshold to 1.0.

    ``scale`` divides a user's scores by that threshold (scores must be
    positive-valued). ``shift`` adds ``1 - threshold`` instead, which keeps the
    order of signed scores such as fused z-scores.
    """
    out = {}
    for uid, (gen, forg) in per_user.items():
        theta = compute_eer(gen, forg).threshold
        if mode == "scale":
            if not theta > scoring.EPSILON:
                raise DegenerateUser(f"user {uid}: EER threshold {theta!r} is not positive")
            out[uid] = ([s / theta for s in gen], [s / theta for s in forg])
        elif mode == "shift":
            out[uid] = ([s - theta + 1.0 for s in gen], [s - theta + 1.0 for s in forg])
        else:
            raise ValueError(f"unknown mode {mode!r}")
    return out


# -- pairwise dissimilarity cache --------------------------------------------


class ScoreStore:
    """On-disk pairwise score cache (sqlite) keyed by classifier, parameter tag and pair."""

    def __init__(self, path):
        self.path = str(path)
        self._lock = threading.Lock()
        self._conn = sqlite3.connect(self.path, check_same_thread=False)
        self._conn.execute(
            "CREATE TABLE IF NOT EXISTS scores (classifier TEXT, params TEXT, a TEXT, b TEXT, value REAL,"
            " PRIMARY KEY (classifier, params, a, b))"
        )
        self._conn.commit()

    def load(self, classifier: str, params: str) -> dict[tuple[str, str], float]:
        rows = self._conn.execute(
            "SELECT a, b, value FROM scores WHERE classifier = ? AND params = ?", (classifier, params)
        )
        return {(a, b): v for a, b, v in rows}

    def put_many(self, classifier: str, params: str, items: Iterable[tuple[tuple[str, str], float]]) -> None:
        rows = [(classifier, params, a, b, v) for (a, b), v in items]
        with self._lock:
            self._conn.executemany("INSERT OR REPLACE INTO scores VALUES (?, ?, ?, ?, ?)", rows)
            self._conn.commit()

    def close(self) -> None:
        self._conn.close()


def _ged_chunk(args):
    pairs, params = args
    return [ged(g1, g2, params).normalized for g1, g2 in pairs]


class PairwiseCache:
    """Memoized d_GED and d_neural over the images of a dataset.

    Keypoint graphs are cached per sampling interval, GED values per
    (cost params, sampling interval, unordered pair), embeddings per model.
    """

    def __init__(
        self,
        dataset: SignatureDataset,
        costs: CostParams = CostParams(),
        extraction: GraphExtractionParams = GraphExtractionParams(),
        model: EmbeddingModel | None = None,
        store: ScoreStore | None = None,
        workers: int = 1,
    ):
        self.dataset = dataset
        self.costs = costs
        self.extraction = extraction
        self.model = model
        self.store = store
        self.workers = workers
        self._graphs: dict[tuple[float, str], object] = {}
        self._ged: dict[str, dict[tuple[str, str], float]] = {}
        self._emb: dict[str, np.ndarray] = {}

    def with_costs(self, costs: CostParams) -> "PairwiseCache":
        """A view sharing graphs, embeddings and stored scores but using other edit costs."""
        other = type(self).__new__(type(self))
        other.__dict__.update(self.__dict__)
        other.costs = costs
        return other

    @property
    def ged_tag(self) -> str:
        return f"c_node={self.costs.c_node!r};c_edge={self.costs.c_edge!r};D={self.extraction.sampling_d!r}"

    def graph(self, image_id: str):
        key = (self.extraction.sampling_d, image_id)
        if key not in self._graphs:
            self._graphs[key] = graph_from_image(self.dataset.image(image_id), self.extraction)
        return self._graphs[key]

    def _ged_table(self) -> dict[tuple[str, str], float]:
        tag = self.ged_tag
        if tag not in self._ged:
            self._ged[tag] = self.store.load("ged", tag) if self.store else {}
        return self._ged[tag]

    def prefetch_ged(self, pairs: Iterable[tuple[str, str]]) -> None:
        table = self._ged_table()
        todo = sorted({(min(a, b), max(a, b)) for a, b in pairs if a != b} - table.keys())
        if not todo:
            return
        graph_pairs = [(self.graph(a), self.graph(b)) for a, b in todo]
        if self.workers > 1 and len(todo) > 64:
            size = math.ceil(len(todo) / (4 * self.workers))
            chunks = [(graph_pairs[i : i + size], self.costs) for i in range(0, len(todo), size)]
            with ProcessPoolExecutor(self.workers) as pool:
                values = [v for part in pool.map(_ged_chunk, chunks) for v in part]
        else:
            values = _ged_chunk((graph_pairs, self.costs))
        new = dict(zip(todo, values))
        table.update(new)
        if self.store:
            self.store.put_many("ged", self.ged_tag, new.items())

    def d_ged(self, a: str, b: str) -> float:
        if a == b:
            return 0.0
        key = (min(a, b), max(a, b))
        table = self._ged_table()
        if key not in table:
            self.prefetch_ged([key])
        return table[key]

    def prefetch_embeddings(self, image_ids: Iterable[str]) -> None:
        if self.model is None:
            raise ValueError("no embedding model configured")
        todo = sorted(set(image_ids) - self._emb.keys())
        if todo:
            vecs = embed_many(self.model, [self.dataset.image(i) for i in todo])
            self._emb.update(zip(todo, vecs))

    def d_neural(self, a: str, b: str) -> float:
        if a == b:
            return 0.0
        if a not in self._emb or b not in self._emb:
            self.prefetch_embeddings([a, b])
        return float(np.linalg.norm(self._emb[a] - self._emb[b]))

    def classifiers(self, system: str) -> dict:
        if system == "ged":
            return {"ged": self.d_ged}
        if system == "neural":
            return {"neural": self.d_neural}
        if system == "mcs":
            return {"ged": self.d_ged, "neural": self.d_neural}
        raise ValueError(f"unknown system {system!r}")


# -- protocol runs ------------------------------------------------------------


@dataclass
class ScoreRow:
    user_id: str
    signature_id: str
    label: str
    d_ged: float | None = None
    d_neural: float | None = None
    score_ged: float | None = None
    score_neural: float | None = None
    score_mcs: float | None = None


SCORE_COLUMNS = ("user_id", "signature_id", "label", "d_ged", "d_neural", "score_ged", "score_neural", "score_mcs")


def write_scores_csv(rows: Sequence[ScoreRow], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SCORE_COLUMNS)
        for r in rows:
            w.writerow(["" if getattr(r, c) is None else getattr(r, c) for c in SCORE_COLUMNS])


@dataclass
class EvalResult:
    eer: float
    det: DetCurve
    threshold: float
    counts: dict[str, int]
    run_eers: list[float] = field(default_factory=list)
    rows: list[ScoreRow] = field(default_factory=list)


def _required_pairs(splits: Sequence[UserSplit], fused: bool) -> list[tuple[str, str]]:
    pairs = []
    for s in splits:
        pairs += [(r, q) for r in s.references for q in s.references if r < q]
        pairs += [(r, t) for r in s.references for t in s.genuine + s.forgeries]
    if fused:
        for s in splits:
            for o in splits:
                if s.user_id < o.user_id:
                    pairs += [(r, q) for r in s.references for q in o.references]
    return pairs


def _score_run(cache: PairwiseCache, splits: Sequence[UserSplit], system: str, protocol: Protocol):
    classifiers = cache.classifiers(system)
    fused = system == "mcs"
    if "ged" in classifiers:
        cache.prefetch_ged(_required_pairs(splits, fused))
    if "neural" in classifiers:
        cache.prefetch_embeddings({i for s in splits for i in s.references + s.genuine + s.forgeries})

    templates = [scoring.UserTemplate.build(s.user_id, s.references, classifiers) for s in splits]
    stats = scoring.fusion_stats(templates, cache.d_ged, cache.d_neural) if fused else None
    forgery_label = "skilled" if protocol.forgery_mode == SKILLED else "random"

    rows = []
    per_user = {}
    for tpl, s in zip(templates, splits):
        gen, forg = [], []
        for label, items in (("genuine", s.genuine), (forgery_label, s.forgeries)):
            for t in items:
                row = ScoreRow(s.user_id, t, label)
                for name, d in classifiers.items():
                    setattr(row, f"d_{name}", min(d(r, t) for r in tpl.references))
                    setattr(row, f"score_{name}", tpl.score(t, name, d))
                if fused:
                    row.score_mcs = scoring.mcs_score(tpl, t, cache.d_ged, cache.d_neural, stats)
                rows.append(row)
                value = getattr(row, f"score_{system}")
                (gen if label == "genuine" else forg).append(value)
        per_user[s.user_id] = (gen, forg)

    if protocol.aposteriori:
        per_user = aposteriori_user_norm(per_user, mode="shift" if fused else "scale")
    genuine = [v for g, _ in per_user.values() for v in g]
    forgery = [v for _, f in per_user.values() for v in f]
    return compute_eer(genuine, forgery), rows


def run_protocol(
    dataset: SignatureDataset,
    protocol: Protocol,
    system: str,
    cache: PairwiseCache | None = None,
    **cache_kwargs,
) -> EvalResult:
    """Evaluate one system under a protocol; multi-run protocols average per-run EERs.

    The returned DET curve, threshold and score rows belong to the first run.
    """
    if system not in SYSTEMS:
        raise ValueError(f"unknown system {system!r}")
    if cache is None:
        cache = PairwiseCache(dataset, **cache_kwargs)
    if system != "ged" and cache.model is None:
        raise ValueError(f"system {system!r} needs a trained embedding model")
    results = []
    for run in range(protocol.runs):
        splits = split_protocol(dataset, protocol, run)
        eer, rows = _score_run(cache, splits, system, protocol)
        results.append((eer, rows, split_counts(splits)))
    first, rows, counts = results[0]
    run_eers = [r[0].eer for r in results]
    return EvalResult(float(np.mean(run_eers)), first.det, first.threshold, counts, run_eers, rows)


# -- grid search --------------------------------------------------------------


@dataclass
class GridResult:
    best: tuple[float, float]
    best_eer: float
    rows: list[tuple[float, float, float]]

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["c_node", "c_edge", "eer"])
            w.writerows(self.rows)


def grid_search_costs(
    dataset: SignatureDataset,
    c_nodes: Sequence[float] = DEFAULT_GRID,
    c_edges: Sequence[float] = DEFAULT_GRID,
    protocol: Protocol | None = None,
    cache: PairwiseCache | None = None,
    **cache_kwargs,
) -> GridResult:
    """Pick edit costs by random-forgery EER of the GED system.

    Ties go to the smaller ``c_node``, then the smaller ``c_edge``.
    """
    if len(dataset) < 2:
        raise ValueError("grid search needs at least two users")
    if protocol is None:
        protocol = Protocol(reference_count=min(10, min(len(u.genuine) for u in dataset.users) - 1), forgery_mode=RANDOM)
    elif protocol.forgery_mode != RANDOM:
        protocol = replace(protocol, forgery_mode=RANDOM)
    base = cache or PairwiseCache(dataset, **cache_kwargs)
    rows = []
    best, best_eer = None, math.inf
    for cn in sorted(c_nodes):
        for ce in sorted(c_edges):
            res = run_protocol(dataset, protocol, "ged", cache=base.with_costs(CostParams(cn, ce)))
            rows.append((cn, ce, res.eer))
            log.info("grid c_node=%s c_edge=%s eer=%.4f", cn, ce, res.eer)
            if res.eer < best_eer:
                best, best_eer = (cn, ce), res.eer
    return GridResult(best, best_eer, rows)


def parse_grid(text: str) -> tuple[list[float], list[float]]:
    """Grid file: ``c_node = 10 15 20`` or ``c_node = 10:60:5`` (inclusive), same for ``c_edge``."""
    axes = {}
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = (s.strip() for s in line.partition("="))
        if not sep or key not in ("c_node", "c_edge"):
            raise ValueError(f"cannot parse grid line {raw!r}")
        if ":" in value:
            start, stop, step = (float(v) for v in value.split(":"))
            count = int(round((stop - start) / step)) + 1
            axes[key] = [start + i * step for i in range(count)]
        else:
            axes[key] = [float(v) for v in value.replace(",", " ").split()]
    return axes.get("c_node", list(DEFAULT_GRID)), axes.get("c_edge", list(DEFAULT_GRID))
