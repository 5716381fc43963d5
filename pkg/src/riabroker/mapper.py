"""Service registry and request-to-candidate mapping.

The registry keeps descriptors together with an inverted keyword index.
Readers never touch the mutable structures directly: they take an immutable
:class:`RegistrySnapshot` pinned to one version, so a mapping that runs while
another thread registers services sees either all of a registration or none
of it.
"""

from __future__ import annotations

import threading
from functools import cached_property
from typing import NamedTuple, Union

import numpy as np

from .errors import DuplicateId, InvalidDescriptor
from .model import Candidate, ServiceDescriptor, ServiceRequest


def jaccard(tokens: set[str] | frozenset[str], keywords: frozenset[str]) -> float:
    if not tokens or not keywords:
        return 0.0
    inter = len(tokens & keywords)
    return inter / (len(tokens) + len(keywords) - inter)


def relevance(request: ServiceRequest, descriptor: ServiceDescriptor) -> float:
    """Jaccard similarity of the request's distinct tokens and the descriptor keywords."""
    return jaccard(set(request.tokens), descriptor.keywords)


class RegistrySnapshot:
    """Immutable view of the registry at one version."""

    def __init__(self, version: int, descriptors: tuple[ServiceDescriptor, ...], inverted: dict[str, tuple[str, ...]]):
        self.version = version
        self.descriptors = descriptors
        self.by_id = {d.id: d for d in descriptors}
        self.inverted = inverted

    def __len__(self) -> int:
        return len(self.descriptors)

    @cached_property
    def columns(self) -> "RegistryColumns":
        return RegistryColumns(self.descriptors)


class RegistryColumns:
    """Columnar copy of a snapshot for whole-registry vectorized scans.

    Keyword sets are stored CSR-style: row ``r``'s token ids are
    ``kw_indices[kw_indptr[r]:kw_indptr[r + 1]]``.
    """

    def __init__(self, descriptors: tuple[ServiceDescriptor, ...]):
        n = len(descriptors)
        self.ids = [d.id for d in descriptors]
        order = sorted(range(n), key=self.ids.__getitem__)
        self.id_rank = np.empty(n, dtype=np.int64)
        self.id_rank[order] = np.arange(n, dtype=np.int64)
        self.latency_ms = np.array([d.qos_latency_ms for d in descriptors], dtype=np.float64)
        self.availability = np.array([d.qos_availability for d in descriptors], dtype=np.float64)
        self.token_ids: dict[str, int] = {}
        lens = np.empty(n, dtype=np.int64)
        flat: list[int] = []
        for r, d in enumerate(descriptors):
            for tok in sorted(d.keywords):
                flat.append(self.token_ids.setdefault(tok, len(self.token_ids)))
            lens[r] = len(d.keywords)
        self.kw_len = lens
        self.kw_indices = np.array(flat, dtype=np.int64)
        self.kw_indptr = np.zeros(n + 1, dtype=np.int64)
        np.cumsum(lens, out=self.kw_indptr[1:])

    def intersections(self, tokens: set[str]) -> np.ndarray:
        """Per-descriptor count of keywords shared with ``tokens``, by linear scan."""
        mask = np.zeros(len(self.token_ids) + 1, dtype=np.int64)
        for tok in tokens:
            tid = self.token_ids.get(tok)
            if tid is not None:
                mask[tid] = 1
        if len(self.ids) == 0:
            return np.zeros(0, dtype=np.int64)
        return np.add.reduceat(mask[self.kw_indices], self.kw_indptr[:-1])


class RegistryIndex:
    """Mutable registry; registrations are serialized by an internal lock."""

    def __init__(self) -> None:
        self._lock = threading.Lock()
        self._descriptors: dict[str, ServiceDescriptor] = {}
        self._inverted: dict[str, list[str]] = {}
        self._version = 0
        self._snapshot: RegistrySnapshot | None = RegistrySnapshot(0, (), {})

    @property
    def version(self) -> int:
        return self._version

    def __len__(self) -> int:
        return len(self._descriptors)

    def __contains__(self, descriptor_id: str) -> bool:
        return descriptor_id in self._descriptors

    def get(self, descriptor_id: str) -> ServiceDescriptor:
        return self._descriptors[descriptor_id]

    def register(self, descriptor: ServiceDescriptor) -> int:
        """Add a descriptor and return the new registry version."""
        if not isinstance(descriptor, ServiceDescriptor):
            raise InvalidDescriptor(f"expected a ServiceDescriptor, got {type(descriptor).__name__}")
        with self._lock:
            if descriptor.id in self._descriptors:
                raise DuplicateId(f"descriptor id {descriptor.id!r} is already registered")
            self._descriptors[descriptor.id] = descriptor
            for tok in descriptor.keywords:
                self._inverted.setdefault(tok, []).append(descriptor.id)
            self._version += 1
            self._snapshot = None
            return self._version

    def register_many(self, descriptors) -> int:
        version = self._version
        for d in descriptors:
            version = self.register(d)
        return version

    def snapshot(self) -> RegistrySnapshot:
        snap = self._snapshot
        if snap is not None:
            return snap
        with self._lock:
            if self._snapshot is None:
                self._snapshot = RegistrySnapshot(
                    self._version,
                    tuple(self._descriptors.values()),
                    {tok: tuple(ids) for tok, ids in self._inverted.items()},
                )
            return self._snapshot


Registry = Union[RegistryIndex, RegistrySnapshot]


def as_snapshot(index: Registry) -> RegistrySnapshot:
    return index if isinstance(index, RegistrySnapshot) else index.snapshot()


class MappingResult(NamedTuple):
    candidates: tuple[Candidate, ...]
    d_count: int
    m_removed: int


def map_request(request: ServiceRequest, index: Registry) -> MappingResult:
    """Candidates sharing at least one token with the request, found via the inverted index.

    Candidates are returned in descriptor-id order. Descriptors with no token
    in common are the ones eliminated by mapping.
    """
    snap = as_snapshot(index)
    tokens = set(request.tokens)
    hits: set[str] = set()
    for tok in tokens:
        hits.update(snap.inverted.get(tok, ()))
    by_id = snap.by_id
    candidates = tuple(Candidate(i, jaccard(tokens, by_id[i].keywords)) for i in sorted(hits))
    return MappingResult(candidates, len(snap), len(snap) - len(candidates))
