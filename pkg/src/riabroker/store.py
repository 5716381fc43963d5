"""Ingest-and-dedup store for incoming service requests.

Identical requests (same requester, same token multiset) are merged into one
record whose ``merge_count`` counts the arrivals. Records move forward through
``New -> Mapped -> Filtered -> Selected``; ``Failed`` is reachable from any
non-failed state and is terminal.

Snapshot file layout::

    b"RIA1"  then, per record in ascending id order:
    u32 big-endian payload length | payload (UTF-8 XML <service> document)
"""

from __future__ import annotations

import enum
import os
import struct
import tempfile
import threading
import time
from dataclasses import dataclass, replace

from . import xmlsubset
from .errors import CorruptSnapshot, EmptyQuery, IllegalTransition, IoError, NotFound, WireError
from .model import ServiceRequest

MAGIC = b"RIA1"
_LEN = struct.Struct(">I")


class RequestState(enum.Enum):
    NEW = "new"
    MAPPED = "mapped"
    FILTERED = "filtered"
    SELECTED = "selected"
    FAILED = "failed"


_ORDER = {RequestState.NEW: 0, RequestState.MAPPED: 1, RequestState.FILTERED: 2, RequestState.SELECTED: 3}


def is_forward(current: RequestState, new: RequestState) -> bool:
    if current is RequestState.FAILED:
        return False
    if new is RequestState.FAILED:
        return True
    return _ORDER[new] > _ORDER[current]


@dataclass(frozen=True)
class StoredRequest:
    request: ServiceRequest
    state: RequestState = RequestState.NEW
    merge_count: int = 1

    @property
    def id(self) -> str:
        return self.request.id


class RequestStore:
    """Thread-safe request store.

    Reads return immutable :class:`StoredRequest` snapshots without locking;
    ingest and state transitions are serialized through one writer lock.
    """

    def __init__(self) -> None:
        self._lock = threading.Lock()
        self._records: dict[str, StoredRequest] = {}
        self._keys: dict[tuple[str, tuple[str, ...]], str] = {}
        self._next_id = 1

    def __len__(self) -> int:
        return len(self._records)

    def __contains__(self, request_id: str) -> bool:
        return request_id in self._records

    def ingest(self, request: ServiceRequest) -> tuple[str, bool]:
        """Store a request, or merge it into an identical earlier one.

        Returns ``(request_id, was_duplicate)``.
        """
        if not request.tokens:
            raise EmptyQuery(f"query {request.query!r} has no tokens")
        key = (request.requester, request.tokens)
        with self._lock:
            existing = self._keys.get(key)
            if existing is not None:
                rec = self._records[existing]
                self._records[existing] = replace(rec, merge_count=rec.merge_count + 1)
                return existing, True
            rid = str(self._next_id)
            self._next_id += 1
            received = request.received_at or time.monotonic_ns()
            self._records[rid] = StoredRequest(replace(request, id=rid, received_at=received))
            self._keys[key] = rid
            return rid, False

    def get(self, request_id: str) -> StoredRequest:
        try:
            return self._records[request_id]
        except KeyError:
            raise NotFound(f"no stored request with id {request_id!r}") from None

    def advance_state(self, request_id: str, new_state: RequestState) -> StoredRequest:
        with self._lock:
            rec = self.get(request_id)
            if not is_forward(rec.state, new_state):
                raise IllegalTransition(f"request {request_id}: {rec.state.value} -> {new_state.value}")
            rec = replace(rec, state=new_state)
            self._records[request_id] = rec
            return rec

    def advance_if_forward(self, request_id: str, new_state: RequestState) -> StoredRequest:
        """Advance unless the record is already at or past ``new_state``."""
        with self._lock:
            rec = self.get(request_id)
            if is_forward(rec.state, new_state):
                rec = replace(rec, state=new_state)
                self._records[request_id] = rec
            return rec

    def records(self) -> list[StoredRequest]:
        """All records in ascending numeric id order."""
        return sorted(self._records.values(), key=lambda r: int(r.id))

    def dumps(self) -> bytes:
        parts = [MAGIC]
        for rec in self.records():
            payload = encode_record(rec)
            parts.append(_LEN.pack(len(payload)))
            parts.append(payload)
        return b"".join(parts)

    def snapshot_save(self, path: str | os.PathLike) -> int:
        with self._lock:
            data = self.dumps()
            count = len(self._records)
        path = os.fspath(path)
        try:
            fd, tmp = tempfile.mkstemp(dir=os.path.dirname(path) or ".", prefix=".ria-")
            with os.fdopen(fd, "wb") as fh:
                fh.write(data)
            os.replace(tmp, path)
        except OSError as exc:
            raise IoError(f"cannot write snapshot {path}: {exc}") from exc
        return count

    def loads(self, data: bytes) -> int:
        records = decode_snapshot(data)
        with self._lock:
            self._records = {r.id: r for r in records}
            self._keys = {(r.request.requester, r.request.tokens): r.id for r in records}
            self._next_id = max((int(r.id) for r in records), default=0) + 1
        return len(records)

    def snapshot_load(self, path: str | os.PathLike) -> int:
        try:
            with open(path, "rb") as fh:
                data = fh.read()
        except OSError as exc:
            raise IoError(f"cannot read snapshot {os.fspath(path)}: {exc}") from exc
        return self.loads(data)


def encode_record(rec: StoredRequest) -> bytes:
    r = rec.request
    esc, attr = xmlsubset.escape_text, xmlsubset.escape_attr
    return (
        f'<service requestid="{attr(r.id)}" state="{rec.state.value}" merges="{rec.merge_count}"'
        f' received="{r.received_at}">'
        f"<requester>{esc(r.requester)}</requester>"
        f"<messageid>{esc(r.message_id)}</messageid>"
        f"<priority>{r.priority_hint}</priority>"
        f"<query>{esc(r.query)}</query>"
        f"</service>"
    ).encode("utf-8", "surrogatepass")


def _field(root: xmlsubset.Element, name: str) -> str:
    el = root.child(name)
    if el is None:
        raise CorruptSnapshot(f"record lacks <{name}>")
    return el.text


def decode_record(payload: bytes) -> StoredRequest:
    try:
        root = xmlsubset.parse(payload)
        if root.tag != "service":
            raise CorruptSnapshot(f"unexpected record root <{root.tag}>")
        rid = root.attrs["requestid"]
        if not rid.isdigit() or int(rid) < 1 or str(int(rid)) != rid:
            raise CorruptSnapshot(f"bad request id {rid!r}")
        request = ServiceRequest(
            query=_field(root, "query"),
            requester=_field(root, "requester"),
            id=rid,
            message_id=_field(root, "messageid"),
            priority_hint=int(_field(root, "priority")),
            received_at=int(root.attrs["received"]),
        )
        merges = int(root.attrs["merges"])
        if merges < 1:
            raise CorruptSnapshot(f"merge count {merges} < 1")
        return StoredRequest(request, RequestState(root.attrs["state"]), merges)
    except CorruptSnapshot:
        raise
    except (WireError, KeyError, ValueError) as exc:
        raise CorruptSnapshot(f"bad record: {exc}") from None


def decode_snapshot(data: bytes) -> list[StoredRequest]:
    if not data.startswith(MAGIC):
        raise CorruptSnapshot("missing RIA1 magic")
    pos = len(MAGIC)
    records: list[StoredRequest] = []
    seen: set[str] = set()
    while pos < len(data):
        if pos + _LEN.size > len(data):
            raise CorruptSnapshot(f"truncated length prefix at offset {pos}")
        (length,) = _LEN.unpack_from(data, pos)
        pos += _LEN.size
        if pos + length > len(data):
            raise CorruptSnapshot(f"record at offset {pos} claims {length} bytes, {len(data) - pos} remain")
        rec = decode_record(data[pos : pos + length])
        if rec.id in seen:
            raise CorruptSnapshot(f"duplicate record id {rec.id}")
        seen.add(rec.id)
        records.append(rec)
        pos += length
    return records
