"""Relevance threshold and ordering of mapped candidates."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, NamedTuple

from .model import Candidate


@dataclass(frozen=True)
class FilterCriteria:
    min_relevance: float = 0.0
    max_candidates: int | None = None  # None means unlimited

    def __post_init__(self) -> None:
        if not isinstance(self.min_relevance, (int, float)) or not 0.0 <= self.min_relevance <= 1.0:
            raise ValueError(f"min_relevance must lie in [0, 1], got {self.min_relevance!r}")
        if self.max_candidates is not None and (
            not isinstance(self.max_candidates, int) or self.max_candidates < 1
        ):
            raise ValueError(f"max_candidates must be an integer >= 1 or None, got {self.max_candidates!r}")


class FilterResult(NamedTuple):
    kept: list[Candidate]
    f_removed: int


def candidate_order(c: Candidate) -> tuple[float, str]:
    """Sort key: relevance descending, then descriptor id ascending."""
    return (-c.relevance, c.descriptor_id)


def filter_candidates(candidates: Iterable[Candidate], criteria: FilterCriteria = FilterCriteria()) -> FilterResult:
    """Keep candidates at or above the threshold, best first, capped at ``max_candidates``."""
    pool = list(candidates)
    kept = sorted((c for c in pool if c.relevance >= criteria.min_relevance), key=candidate_order)
    if criteria.max_candidates is not None:
        del kept[criteria.max_candidates :]
    return FilterResult(kept, len(pool) - len(kept))


def parse_max_candidates(text: str) -> int | None:
    text = text.strip().lower()
    if text in ("", "unlimited", "none", "inf"):
        return None
    value = float(text)
    if math.isinf(value):
        return None
    return int(text)
