"""Priority scoring and the three selection strategies.

A candidate's priority is a convex combination of four components, each in
[0, 1]:

    relevance       Jaccard overlap of request tokens and descriptor keywords
    latency_norm    1 / (1 + declared_latency_ms / 100)
    availability    declared availability
    hint_boost      requester priority hint / 9

Strategies:

``normal``
    Mapping only. Candidates are ranked by relevance alone.
``exited``
    Exhaustive. Every registered descriptor is scored, including those
    sharing no token with the request, and the whole registry is sorted. No
    index and no filter are used, so cost grows with registry size.
``expected``
    The full pipeline: map through the inverted index, filter, score the
    survivors, keep the top ``k``.

All rankings order by score descending and break ties by descriptor id
ascending, so results are fully deterministic.
"""

from __future__ import annotations

import enum
import heapq
import math
import time
from collections.abc import Sequence
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from .errors import WeightSumInvalid
from .filtering import FilterCriteria, candidate_order, filter_candidates
from .mapper import Registry, RegistrySnapshot, as_snapshot, map_request
from .model import Candidate, PriorityScore, ServiceDescriptor, ServiceRequest, StageTrace
from .store import RequestState, RequestStore

DEFAULT_K = 10


@dataclass(frozen=True)
class Weights:
    relevance: float = 0.55
    latency: float = 0.20
    availability: float = 0.20
    hint: float = 0.05

    def __post_init__(self) -> None:
        values = self.as_tuple()
        if not all(isinstance(w, (int, float)) and math.isfinite(w) and w >= 0 for w in values):
            raise WeightSumInvalid(f"weights must be finite and non-negative: {values}")
        if abs(sum(values) - 1.0) > 1e-9:
            raise WeightSumInvalid(f"weights must sum to 1, got {sum(values)!r}")

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.relevance, self.latency, self.availability, self.hint)

    @classmethod
    def normalized(cls, values: Iterable[float]) -> "Weights":
        """Rescale arbitrary non-negative weights so they sum to 1."""
        values = tuple(float(v) for v in values)
        total = sum(values)
        if len(values) != 4 or not math.isfinite(total) or total <= 0 or any(v < 0 for v in values):
            raise WeightSumInvalid(f"cannot normalize weights {values}")
        return cls(*(v / total for v in values))


DEFAULT_WEIGHTS = Weights()
RELEVANCE_ONLY = Weights(1.0, 0.0, 0.0, 0.0)


def as_weights(weights: Weights | Iterable[float]) -> Weights:
    if isinstance(weights, Weights):
        return weights
    values = tuple(weights)
    if len(values) != 4:
        raise WeightSumInvalid(f"expected four weights, got {len(values)}")
    return Weights(*values)


class SelectionStrategy(str, enum.Enum):
    NORMAL = "normal"
    EXITED = "exited"
    EXPECTED = "expected"


def latency_norm(latency_ms: float) -> float:
    return 1.0 / (1.0 + latency_ms / 100.0)


def hint_boost(priority_hint: int) -> float:
    return priority_hint / 9


def combine(weights: Weights, rel: float, lat: float, avail: float, hint: float) -> float:
    s = weights.relevance * rel + weights.latency * lat + weights.availability * avail + weights.hint * hint
    return min(max(s, 0.0), 1.0)


def score(
    candidate: Candidate,
    descriptor: ServiceDescriptor,
    request: ServiceRequest,
    weights: Weights | Iterable[float] = DEFAULT_WEIGHTS,
) -> PriorityScore:
    weights = as_weights(weights)
    if candidate.descriptor_id != descriptor.id:
        raise ValueError(f"candidate {candidate.descriptor_id!r} does not describe {descriptor.id!r}")
    comps = (
        candidate.relevance,
        latency_norm(descriptor.qos_latency_ms),
        descriptor.qos_availability,
        hint_boost(request.priority_hint),
    )
    return PriorityScore(descriptor.id, combine(weights, *comps), comps)


def score_order(s: PriorityScore) -> tuple[float, str]:
    return (-s.score, s.descriptor_id)


def select_top(scored: Iterable[PriorityScore], k: int | None = DEFAULT_K) -> list[PriorityScore]:
    """The ``k`` best scores, best first; ``k=None`` sorts everything."""
    if k is None:
        return sorted(scored, key=score_order)
    if not isinstance(k, int) or k < 1:
        raise ValueError(f"k must be an integer >= 1, got {k!r}")
    return heapq.nsmallest(k, scored, key=score_order)


class ExhaustiveRanking(Sequence):
    """Full-registry ranking held as arrays.

    PriorityScore objects are built on access, so scoring a large registry does
    not pay for materializing every entry.
    """

    def __init__(self, ids: list[str], order: np.ndarray, scores: np.ndarray, rel: np.ndarray,
                 lat: np.ndarray, avail: np.ndarray, hint: float):
        self._ids = ids
        self._order = order
        self._scores = scores
        self._rel = rel
        self._lat = lat
        self._avail = avail
        self._hint = hint

    def __len__(self) -> int:
        return len(self._order)

    def _entry(self, pos: int) -> PriorityScore:
        r = int(self._order[pos])
        comps = (float(self._rel[r]), float(self._lat[r]), float(self._avail[r]), self._hint)
        return PriorityScore(self._ids[r], float(self._scores[r]), comps)

    def __getitem__(self, index):
        if isinstance(index, slice):
            return [self._entry(i) for i in range(*index.indices(len(self)))]
        n = len(self)
        if index < 0:
            index += n
        if not 0 <= index < n:
            raise IndexError("ranking index out of range")
        return self._entry(index)

    def __eq__(self, other):
        if not isinstance(other, Sequence) or isinstance(other, (str, bytes)):
            return NotImplemented
        return len(self) == len(other) and all(a == b for a, b in zip(self, other))

    __hash__ = None

    def __repr__(self) -> str:
        return f"ExhaustiveRanking(<{len(self)} entries>)"

    def first_matching(self) -> int | None:
        """Position of the best entry with relevance > 0, if any."""
        hits = np.flatnonzero(self._rel[self._order] > 0)
        return int(hits[0]) if len(hits) else None


@dataclass(frozen=True)
class SelectionResult:
    ranked: Sequence[PriorityScore]
    chosen: str | None
    reserve: tuple[str, ...]
    trace: StageTrace
    strategy: SelectionStrategy = field(default=SelectionStrategy.EXPECTED, compare=False)

    @property
    def chosen_score(self) -> float:
        return self.ranked[0].score if len(self.ranked) else 0.0


def matched_top(result: SelectionResult) -> PriorityScore | None:
    """Best-ranked entry that shares at least one token with the request."""
    ranked = result.ranked
    if isinstance(ranked, ExhaustiveRanking):
        pos = ranked.first_matching()
        return None if pos is None else ranked[pos]
    for entry in ranked:
        if entry.relevance > 0:
            return entry
    return None


def _now() -> int:
    return time.perf_counter_ns()


class _Progress:
    """Moves the stored request forward as stages complete."""

    def __init__(self, store: RequestStore | None, request_id: str):
        self.store = store
        self.request_id = request_id
        if store is not None:
            store.get(request_id)

    def reach(self, state: RequestState) -> None:
        if self.store is not None:
            self.store.advance_if_forward(self.request_id, state)


def _normal(request: ServiceRequest, snap: RegistrySnapshot, k: int | None, progress: _Progress) -> SelectionResult:
    t0 = _now()
    mapped = map_request(request, snap)
    t1 = _now()
    progress.reach(RequestState.MAPPED)
    scored = [score(c, snap.by_id[c.descriptor_id], request, RELEVANCE_ONLY) for c in mapped.candidates]
    ranked = select_top(scored, k)
    t2 = _now()
    trace = StageTrace(request.id, mapped.d_count, mapped.m_removed, 0, {"map": t1 - t0, "filter": 0, "select": t2 - t1})
    return SelectionResult(ranked, ranked[0].descriptor_id if ranked else None, (), trace, SelectionStrategy.NORMAL)


def _expected(request: ServiceRequest, snap: RegistrySnapshot, criteria: FilterCriteria, weights: Weights,
              k: int | None, progress: _Progress) -> SelectionResult:
    t0 = _now()
    mapped = map_request(request, snap)
    t1 = _now()
    progress.reach(RequestState.MAPPED)
    kept, f_removed = filter_candidates(mapped.candidates, criteria)
    kept_ids = {c.descriptor_id for c in kept}
    reserve = tuple(c.descriptor_id for c in sorted(mapped.candidates, key=candidate_order) if c.descriptor_id not in kept_ids)
    t2 = _now()
    progress.reach(RequestState.FILTERED)
    by_id = snap.by_id
    ranked = select_top((score(c, by_id[c.descriptor_id], request, weights) for c in kept), k)
    t3 = _now()
    trace = StageTrace(request.id, mapped.d_count, mapped.m_removed, f_removed,
                       {"map": t1 - t0, "filter": t2 - t1, "select": t3 - t2})
    return SelectionResult(ranked, ranked[0].descriptor_id if ranked else None, reserve, trace, SelectionStrategy.EXPECTED)


def _exited(request: ServiceRequest, snap: RegistrySnapshot, weights: Weights, progress: _Progress) -> SelectionResult:
    t0 = _now()
    cols = snap.columns
    tokens = set(request.tokens)
    inter = cols.intersections(tokens)
    rel = inter / (len(tokens) + cols.kw_len - inter)
    t1 = _now()
    progress.reach(RequestState.MAPPED)
    lat = 1.0 / (1.0 + cols.latency_ms / 100.0)
    avail = cols.availability
    hint = hint_boost(request.priority_hint)
    w = weights
    scores = np.clip(w.relevance * rel + w.latency * lat + w.availability * avail + w.hint * hint, 0.0, 1.0)
    order = np.lexsort((cols.id_rank, -scores))
    ranked = ExhaustiveRanking(cols.ids, order, scores, rel, lat, avail, hint)
    t2 = _now()
    trace = StageTrace(request.id, len(snap), 0, 0, {"map": t1 - t0, "filter": 0, "select": t2 - t1})
    chosen = cols.ids[int(order[0])] if len(order) else None
    return SelectionResult(ranked, chosen, (), trace, SelectionStrategy.EXITED)


def select_with_strategy(
    request: ServiceRequest,
    index: Registry,
    strategy: SelectionStrategy | str = SelectionStrategy.EXPECTED,
    criteria: FilterCriteria = FilterCriteria(),
    weights: Weights | Iterable[float] = DEFAULT_WEIGHTS,
    k: int | None = DEFAULT_K,
    *,
    store: RequestStore | None = None,
) -> SelectionResult:
    """Run one request through the pipeline of the given strategy.

    With a ``store``, the stored request (looked up by ``request.id``) is moved
    forward as stages complete and marked failed if a stage raises. Requests
    that already reached a later state, such as re-submitted duplicates, are
    left where they are.

    ``k`` caps the ranking for ``normal`` and ``expected``; ``exited`` always
    returns the full registry ranking.
    """
    strategy = SelectionStrategy(strategy)
    weights = as_weights(weights)
    if k is not None and (not isinstance(k, int) or k < 1):
        raise ValueError(f"k must be an integer >= 1, got {k!r}")
    progress = _Progress(store, request.id)
    snap = as_snapshot(index)
    try:
        if strategy is SelectionStrategy.NORMAL:
            result = _normal(request, snap, k, progress)
        elif strategy is SelectionStrategy.EXITED:
            result = _exited(request, snap, weights, progress)
        else:
            result = _expected(request, snap, criteria, weights, k, progress)
    except BaseException:
        progress.reach(RequestState.FAILED)
        raise
    progress.reach(RequestState.SELECTED)
    return result
