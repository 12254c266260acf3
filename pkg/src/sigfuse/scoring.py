"""User-normalized verification scores and their z-score fusion.

Dissimilarities are passed in as callables ``d(a, b) -> float`` over whatever
keys identify signatures (image ids in the evaluation harness). Callers are
expected to memoize them; nothing here caches.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Hashable, Mapping, Sequence

from .errors import DegenerateWarning, TooFewReferences, ZeroDelta

log = logging.getLogger(__name__)

EPSILON = 1e-12
ACCEPT, REJECT = "accept", "reject"

Dissimilarity = Callable[[Hashable, Hashable], float]


def user_delta(references: Sequence, d: Dissimilarity, floor: float = EPSILON) -> float:
    """Mean distance from each reference to its nearest other reference."""
    refs = list(references)
    if len(refs) < 2:
        raise TooFewReferences(f"need >= 2 references, got {len(refs)}")
    total = 0.0
    for i, r in enumerate(refs):
        total += min(d(r, s) for j, s in enumerate(refs) if j != i)
    delta = total / len(refs)
    if delta <= floor:
        warnings.warn(f"reference spread {delta!r} floored to {floor!r}", DegenerateWarning, stacklevel=2)
        return floor
    return delta


def normalized_score(d_value: float, delta: float) -> float:
    if delta <= 0:
        raise ZeroDelta("user normalization divisor must be positive")
    return d_value / delta


def verification_score(references: Sequence, t, d: Dissimilarity, delta: float) -> float:
    return min(normalized_score(d(r, t), delta) for r in references)


@dataclass(frozen=True)
class UserTemplate:
    """A user's references with one cached spread value per classifier."""

    user_id: str
    references: tuple
    deltas: Mapping[str, float] = field(default_factory=dict)

    @classmethod
    def build(cls, user_id: str, references: Sequence, classifiers: Mapping[str, Dissimilarity]) -> "UserTemplate":
        refs = tuple(references)
        if len(refs) < 2:
            raise TooFewReferences(f"user {user_id}: need >= 2 references, got {len(refs)}")
        return cls(user_id, refs, {name: user_delta(refs, d) for name, d in classifiers.items()})

    def score(self, t, name: str, d: Dissimilarity) -> float:
        return verification_score(self.references, t, d, self.deltas[name])

    def normalized(self, t, name: str, d: Dissimilarity) -> list[float]:
        """Per-reference normalized dissimilarities to ``t``, in reference order."""
        delta = self.deltas[name]
        return [normalized_score(d(r, t), delta) for r in self.references]


@dataclass(frozen=True)
class FusionStats:
    mean_ged: float
    std_ged: float
    mean_neural: float
    std_neural: float
    degenerate: bool = False

    def z_ged(self, value: float) -> float:
        return (value - self.mean_ged) / self.std_ged

    def z_neural(self, value: float) -> float:
        return (value - self.mean_neural) / self.std_neural


def population_stats(values: Sequence[float]) -> tuple[float, float, bool]:
    """Mean and population standard deviation (divisor N), floored at EPSILON."""
    n = len(values)
    if n == 0:
        raise ValueError("empty population")
    mean = math.fsum(values) / n
    std = math.sqrt(math.fsum((v - mean) ** 2 for v in values) / n)
    if std <= EPSILON:
        return mean, EPSILON, True
    return mean, std, False


def cross_user_scores(templates: Sequence[UserTemplate], name: str, d: Dissimilarity) -> list[float]:
    """Normalized scores d(r, s) / delta(R_u) for r in R_u and s in every other user's references."""
    values = []
    for tpl in templates:
        delta = tpl.deltas[name]
        for other in templates:
            if other.user_id == tpl.user_id:
                continue
            for r in tpl.references:
                for s in other.references:
                    values.append(normalized_score(d(r, s), delta))
    return values


def fusion_stats(
    templates: Sequence[UserTemplate],
    d_ged: Dissimilarity,
    d_neural: Dissimilarity,
    ged_name: str = "ged",
    neural_name: str = "neural",
) -> FusionStats:
    """Z-score statistics of both classifiers over cross-user reference pairs."""
    if len(templates) < 2:
        raise ValueError("fusion statistics need at least two users")
    mg, sg, dg = population_stats(cross_user_scores(templates, ged_name, d_ged))
    mn, sn, dn = population_stats(cross_user_scores(templates, neural_name, d_neural))
    if dg or dn:
        warnings.warn("degenerate fusion population; std floored", DegenerateWarning, stacklevel=2)
    return FusionStats(mg, sg, mn, sn, dg or dn)


def mcs_score(
    template: UserTemplate,
    t,
    d_ged: Dissimilarity,
    d_neural: Dissimilarity,
    stats: FusionStats,
    ged_name: str = "ged",
    neural_name: str = "neural",
) -> float:
    """Minimum over references of the summed z-scores of both classifiers.

    The minimum is taken over per-reference sums, so the best structural and
    the best statistical match must come from the same reference.
    """
    g = template.normalized(t, ged_name, d_ged)
    n = template.normalized(t, neural_name, d_neural)
    return min(stats.z_ged(a) + stats.z_neural(b) for a, b in zip(g, n))


def decide(score: float, threshold: float) -> str:
    return ACCEPT if score < threshold else REJECT
