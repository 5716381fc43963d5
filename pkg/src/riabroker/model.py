"""Domain types and tokenization shared by every pipeline stage.

All types are frozen dataclasses: once built they can be handed to any number
of concurrent pipeline executions without copying.
"""

from __future__ import annotations

import enum
import math
import re
from dataclasses import dataclass, field
from typing import Iterable, Mapping

from .errors import InvalidDescriptor, InvalidRequest, NegativeSurvivors

_SEPARATORS = re.compile(r"[\W_]+")


def normalize(text: str) -> tuple[str, ...]:
    """Reduce free text to its token multiset.

    Text is lowercased and split on runs of non-alphanumeric characters;
    empty pieces are dropped. The multiset is returned in canonical form, a
    sorted tuple, so two texts with the same tokens compare equal regardless
    of word order.

    >>> normalize("Weather-Forecast weather")
    ('forecast', 'weather', 'weather')
    """
    return tuple(sorted(t for t in _SEPARATORS.split(text.lower()) if t))


def _finite(x: float) -> bool:
    return isinstance(x, (int, float)) and math.isfinite(x)


@dataclass(frozen=True)
class ServiceRequest:
    """A client's query for a service.

    ``tokens`` is always derived from ``query``; it is not an init argument.
    """

    query: str
    requester: str = "anonymous"
    id: str = ""
    message_id: str = ""
    priority_hint: int = 0
    received_at: int = 0
    tokens: tuple[str, ...] = field(init=False)

    def __post_init__(self) -> None:
        if not isinstance(self.priority_hint, int) or not 0 <= self.priority_hint <= 9:
            raise InvalidRequest(f"priority_hint must be an integer in 0..9, got {self.priority_hint!r}")
        object.__setattr__(self, "tokens", normalize(self.query))


@dataclass(frozen=True)
class ServiceDescriptor:
    """A registered provider and its declared QoS."""

    id: str
    name: str
    keywords: frozenset[str]
    port_name: str = ""
    ip_address: str = "127.0.0.1"
    rec_port: int = 80
    country: str = ""
    qos_latency_ms: float = 100.0
    qos_availability: float = 0.99

    def __post_init__(self) -> None:
        if isinstance(self.keywords, str):
            raise InvalidDescriptor("keywords must be an iterable of strings, not a string")
        kw = frozenset(normalize(" ".join(self.keywords)))
        if not kw:
            raise InvalidDescriptor(f"descriptor {self.id!r} has no keywords")
        object.__setattr__(self, "keywords", kw)
        if not self.id:
            raise InvalidDescriptor("descriptor id is empty")
        if not isinstance(self.rec_port, int) or not 1 <= self.rec_port <= 65535:
            raise InvalidDescriptor(f"rec_port out of range: {self.rec_port!r}")
        if not _finite(self.qos_latency_ms) or self.qos_latency_ms < 0:
            raise InvalidDescriptor(f"qos_latency_ms must be finite and >= 0, got {self.qos_latency_ms!r}")
        if not _finite(self.qos_availability) or not 0.0 <= self.qos_availability <= 1.0:
            raise InvalidDescriptor(f"qos_availability must lie in [0, 1], got {self.qos_availability!r}")


@dataclass(frozen=True)
class Candidate:
    descriptor_id: str
    relevance: float

    def __post_init__(self) -> None:
        if not 0.0 <= self.relevance <= 1.0:
            raise ValueError(f"relevance out of [0, 1]: {self.relevance!r}")


@dataclass(frozen=True)
class PriorityScore:
    """Score of one candidate plus the four components it was built from.

    ``components`` is ``(relevance, latency_norm, availability, hint_boost)``.
    """

    descriptor_id: str
    score: float
    components: tuple[float, float, float, float]

    def __post_init__(self) -> None:
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"score out of [0, 1]: {self.score!r}")
        if len(self.components) != 4 or not all(0.0 <= c <= 1.0 for c in self.components):
            raise ValueError(f"components must be four values in [0, 1]: {self.components!r}")

    @property
    def relevance(self) -> float:
        return self.components[0]


class QosBand(enum.IntEnum):
    """Rating bands; integer values give the order Excellent > Good > Average > Poor."""

    POOR = 0
    AVERAGE = 1
    GOOD = 2
    EXCELLENT = 3

    @property
    def label(self) -> str:
        return self.name.lower()


STAGES = ("map", "filter", "select")


@dataclass(frozen=True)
class StageTrace:
    """Per-request stage counts.

    d_count is the registry size at mapping time, m_removed the descriptors
    eliminated by mapping, f_removed those eliminated by filtering.
    Stage latencies are diagnostic and excluded from equality.
    """

    request_id: str
    d_count: int
    m_removed: int
    f_removed: int
    stage_latency_ns: Mapping[str, int] = field(default_factory=dict, compare=False)

    def __post_init__(self) -> None:
        for name in ("d_count", "m_removed", "f_removed"):
            v = getattr(self, name)
            if not isinstance(v, int) or v < 0:
                raise ValueError(f"{name} must be a non-negative integer, got {v!r}")
        if self.m_removed + self.f_removed > self.d_count:
            raise NegativeSurvivors(
                f"m_removed + f_removed = {self.m_removed + self.f_removed} exceeds d_count = {self.d_count}"
            )

    @property
    def survivors(self) -> int:
        return self.d_count - self.m_removed - self.f_removed

    @property
    def s_aggregate(self) -> float:
        return self.survivors / 3

    @property
    def total_latency_ns(self) -> int:
        return sum(self.stage_latency_ns.values())


def keywords_of(names: Iterable[str]) -> frozenset[str]:
    """Normalized keyword set for a collection of names or phrases."""
    return frozenset(normalize(" ".join(names)))
