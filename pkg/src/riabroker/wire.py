"""Parsers and serializers for the broker's XML documents.

Four document kinds:

* SOAP-style request envelope (``Envelope/Header?/Body/.../MessageID``)
* structured service-request query (``<service requestid=...>``)
* WSDL-subset service descriptor (``<wsdl:binding>`` with operations)
* selection result (``<selection>``), the broker's response

Serializers emit one canonical form: UTF-8, fixed element order, no
insignificant whitespace. Scores and components are written with six decimal
places. Parsers locate elements by local name, so any namespace prefix works.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Iterator

from . import xmlsubset
from .errors import (
    BadPort,
    InvalidQos,
    InvalidRequest,
    InvalidTrace,
    MissingBinding,
    MissingBody,
    MissingField,
    MissingMessageId,
    XmlMalformed,
)
from .model import PriorityScore, ServiceDescriptor, ServiceRequest, StageTrace, normalize
from .selector import SelectionResult, SelectionStrategy
from .xmlsubset import Element, escape_attr, escape_text

XML_DECL = '<?xml version="1.0" encoding="UTF-8"?>'
SOAP_NS = "http://www.w3.org/2003/05/soap-envelope"
MESSAGE_NS = "http://www.example.org/message"
WSDL_NS = "http://schemas.xmlsoap.org/wsdl/"

DEFAULT_LATENCY_MS = 100.0
DEFAULT_AVAILABILITY = 0.99

_DECIMAL = re.compile(r"[+-]?(?:\d+(?:\.\d*)?|\.\d+)(?:[eE][+-]?\d+)?")
_PORT = re.compile(r"[0-9]{1,6}")


@dataclass(frozen=True)
class Envelope:
    message_id: str
    body_query: str
    header: str | None = None
    requester: str = "anonymous"
    priority_hint: int = 0

    def __post_init__(self) -> None:
        if not self.message_id:
            raise MissingMessageId("message id is empty")

    def to_request(self) -> ServiceRequest:
        return ServiceRequest(
            query=self.body_query, requester=self.requester,
            message_id=self.message_id, priority_hint=self.priority_hint,
        )


@dataclass(frozen=True)
class QueryDocument:
    request_id: str
    requester: str
    port_name: str
    ip_address: str
    rec_port: int
    country: str
    query: str | None = None
    priority_hint: int = 0

    def __post_init__(self) -> None:
        if not isinstance(self.rec_port, int) or not 1 <= self.rec_port <= 65535:
            raise BadPort(f"recport {self.rec_port!r} is outside 1..65535")

    @property
    def search_text(self) -> str:
        """Text matched against the registry: the explicit query, else the port name."""
        return self.query if self.query is not None else self.port_name

    def to_request(self) -> ServiceRequest:
        return ServiceRequest(
            query=self.search_text, requester=self.requester,
            message_id=self.request_id, priority_hint=self.priority_hint,
        )


def _text(el: Element) -> str:
    return "".join(el.itertext()).strip()


def _priority(el: Element | None) -> int:
    if el is None:
        return 0
    raw = _text(el)
    if not raw.isdigit() or not 0 <= int(raw) <= 9:
        raise InvalidRequest(f"priority must be an integer in 0..9, got {raw!r}")
    return int(raw)


def _parse_port(raw: str) -> int:
    raw = raw.strip()
    if not _PORT.fullmatch(raw) or not 1 <= int(raw) <= 65535:
        raise BadPort(f"port {raw!r} is not a decimal integer in 1..65535")
    return int(raw)


# -- envelope ---------------------------------------------------------------

def envelope_from_element(root: Element) -> Envelope:
    if root.local != "Envelope":
        raise MissingBody(f"document root is <{root.tag}>, not an Envelope")
    header_el = root.child("Header")
    body = root.child("Body")
    if body is None:
        raise MissingBody("Envelope has no Body")
    mid_el = body.find("MessageID")
    if mid_el is None or not _text(mid_el):
        raise MissingMessageId("Body carries no MessageID")
    query_el = body.find("Query")
    if query_el is not None:
        body_query = _text(query_el)
    else:
        body_query = " ".join(t.strip() for t in body.itertext() if t.strip())
    requester_el = body.find("Requester")
    return Envelope(
        message_id=_text(mid_el),
        body_query=body_query,
        header=header_el.inner if header_el is not None else None,
        requester=_text(requester_el) if requester_el is not None else "anonymous",
        priority_hint=_priority(body.find("Priority")),
    )


def parse_envelope(data: bytes) -> Envelope:
    return envelope_from_element(xmlsubset.parse(data))


def serialize_envelope(env: Envelope) -> bytes:
    header = f"<soap:Header>{env.header}</soap:Header>" if env.header is not None else ""
    return (
        f'{XML_DECL}<soap:Envelope xmlns:soap="{SOAP_NS}">{header}<soap:Body>'
        f'<q:MessageNeeded xmlns:q="{MESSAGE_NS}">'
        f"<q:MessageID>{escape_text(env.message_id)}</q:MessageID>"
        f"<q:Query>{escape_text(env.body_query)}</q:Query>"
        f"<q:Requester>{escape_text(env.requester)}</q:Requester>"
        f"<q:Priority>{env.priority_hint}</q:Priority>"
        f"</q:MessageNeeded></soap:Body></soap:Envelope>"
    ).encode("utf-8")


# -- query document -----------------------------------------------------------

QUERY_FIELDS = ("requester", "portname", "ipaddress", "recport", "country")


def query_from_element(root: Element) -> QueryDocument:
    if root.local != "service":
        raise MissingField("service")
    request_id = root.attr("requestid")
    if request_id is None:
        raise MissingField("requestid")
    values = {}
    for name in QUERY_FIELDS:
        el = root.find(name)
        if el is None:
            raise MissingField(name)
        values[name] = _text(el)
    query_el = root.find("query")
    return QueryDocument(
        request_id=request_id,
        requester=values["requester"],
        port_name=values["portname"],
        ip_address=values["ipaddress"],
        rec_port=_parse_port(values["recport"]),
        country=values["country"],
        query=_text(query_el) if query_el is not None else None,
        priority_hint=_priority(root.find("priority")),
    )


def parse_query(data: bytes) -> QueryDocument:
    return query_from_element(xmlsubset.parse(data))


def serialize_query(doc: QueryDocument) -> bytes:
    extra = ""
    if doc.query is not None:
        extra += f"<query>{escape_text(doc.query)}</query>"
    if doc.priority_hint:
        extra += f"<priority>{doc.priority_hint}</priority>"
    return (
        f'{XML_DECL}<service requestid="{escape_attr(doc.request_id)}">'
        f"<requester>{escape_text(doc.requester)}</requester>"
        f"<serviceto><portname>{escape_text(doc.port_name)}</portname>"
        f"<ipaddress>{escape_text(doc.ip_address)}</ipaddress>"
        f"<recport>{doc.rec_port}</recport>"
        f"<country>{escape_text(doc.country)}</country></serviceto>"
        f"{extra}</service>"
    ).encode("utf-8")


def parse_request(data: bytes) -> ServiceRequest:
    """Parse either an envelope or a query document into a ServiceRequest."""
    root = xmlsubset.parse(data)
    if root.local == "Envelope":
        return envelope_from_element(root).to_request()
    if root.local == "service":
        return query_from_element(root).to_request()
    raise MissingBody(f"unsupported request document <{root.tag}>")


# -- descriptor ---------------------------------------------------------------

def _extension(binding: Element, name: str) -> str | None:
    value = binding.attr(name)
    if value is not None:
        return value
    el = binding.find(name)
    return _text(el) if el is not None else None


def _qos(binding: Element, name: str, default: float, upper: float | None) -> float:
    raw = _extension(binding, name)
    if raw is None:
        return default
    raw = raw.strip()
    if not _DECIMAL.fullmatch(raw):
        raise InvalidQos(f"{name} is not a decimal number: {raw!r}")
    value = float(raw)
    if not 0.0 <= value or (upper is not None and value > upper) or value == float("inf"):
        raise InvalidQos(f"{name} out of range: {raw}")
    return value


def descriptor_from_element(root: Element) -> ServiceDescriptor:
    binding = root if root.local == "binding" else root.find("binding")
    if binding is None:
        raise MissingBinding("document has no binding element")
    name = binding.attr("name")
    if name is None or not name.strip():
        raise MissingBinding("binding has no name")
    operations = [op.attr("name") or "" for op in binding.findall("operation")]
    docs = [" ".join(d.itertext()) for d in binding.findall("documentation")]
    port = _extension(binding, "recPort")
    port_name = _extension(binding, "portName")
    ip_address = _extension(binding, "ipAddress")
    return ServiceDescriptor(
        id=binding.attr("id") or name,
        name=name,
        keywords=frozenset(normalize(" ".join([name, *operations, *docs]))),
        port_name=name if port_name is None else port_name,
        ip_address="127.0.0.1" if ip_address is None else ip_address,
        rec_port=_parse_port(port) if port is not None else 80,
        country=_extension(binding, "country") or "",
        qos_latency_ms=_qos(binding, "qosLatencyMs", DEFAULT_LATENCY_MS, None),
        qos_availability=_qos(binding, "qosAvailability", DEFAULT_AVAILABILITY, 1.0),
    )


def parse_descriptor(data: bytes) -> ServiceDescriptor:
    return descriptor_from_element(xmlsubset.parse(data))


def serialize_descriptor(d: ServiceDescriptor, *, declaration: bool = True) -> bytes:
    """Canonical one-line descriptor.

    Every keyword becomes an operation; parsing also adds the tokens of the
    binding name, so a round trip is exact when the keywords already contain
    them.
    """
    ops = "".join(f'<wsdl:operation name="{escape_attr(k)}"/>' for k in sorted(d.keywords))
    return (
        f'{XML_DECL if declaration else ""}<wsdl:binding xmlns:wsdl="{WSDL_NS}" id="{escape_attr(d.id)}"'
        f' name="{escape_attr(d.name)}" portName="{escape_attr(d.port_name)}"'
        f' ipAddress="{escape_attr(d.ip_address)}" recPort="{d.rec_port}" country="{escape_attr(d.country)}"'
        f' qosLatencyMs="{float(d.qos_latency_ms)!r}" qosAvailability="{float(d.qos_availability)!r}">'
        f"{ops}</wsdl:binding>"
    ).encode("utf-8")


def iter_descriptors(data: bytes) -> Iterator[ServiceDescriptor]:
    """Descriptors from a stream of concatenated binding documents."""
    for root in xmlsubset.parse_many(data):
        yield descriptor_from_element(root)


# -- selection result ---------------------------------------------------------

def _fmt(x: float) -> str:
    return f"{x:.6f}"


def serialize_result(result: SelectionResult) -> bytes:
    parts = [XML_DECL, f'<selection strategy="{result.strategy.value}">']
    if result.chosen is not None:
        parts.append(f"<chosen>{escape_text(result.chosen)}</chosen>")
    if len(result.ranked):
        parts.append("<ranked>")
        for s in result.ranked:
            rel, lat, avail, hint = s.components
            parts.append(
                f'<entry id="{escape_attr(s.descriptor_id)}" score="{_fmt(s.score)}" relevance="{_fmt(rel)}"'
                f' latency="{_fmt(lat)}" availability="{_fmt(avail)}" hint="{_fmt(hint)}"/>'
            )
        parts.append("</ranked>")
    if result.reserve:
        parts.append("<reserve>")
        parts.extend(f"<id>{escape_text(i)}</id>" for i in result.reserve)
        parts.append("</reserve>")
    t = result.trace
    parts.append(
        f'<trace request="{escape_attr(t.request_id)}" d="{t.d_count}" m="{t.m_removed}"'
        f' f="{t.f_removed}" s="{t.s_aggregate!r}"/>'
    )
    parts.append("</selection>")
    return "".join(parts).encode("utf-8", "surrogatepass")


def _int_attr(el: Element, name: str) -> int:
    raw = el.attrs.get(name)
    if raw is None or not raw.isdigit():
        raise InvalidTrace(f"trace attribute {name} must be a non-negative integer, got {raw!r}")
    return int(raw)


def parse_result(data: bytes) -> SelectionResult:
    root = xmlsubset.parse(data)
    if root.tag != "selection":
        raise InvalidTrace(f"expected <selection>, got <{root.tag}>")
    try:
        strategy = SelectionStrategy(root.attrs.get("strategy", "expected"))
        ranked = []
        ranked_el = root.child("ranked")
        for e in ranked_el.children if ranked_el is not None else ():
            comps = tuple(float(e.attrs[k]) for k in ("relevance", "latency", "availability", "hint"))
            ranked.append(PriorityScore(e.attrs["id"], float(e.attrs["score"]), comps))
        chosen_el = root.child("chosen")
        chosen = chosen_el.text if chosen_el is not None else None
        reserve_el = root.child("reserve")
        reserve = tuple(c.text for c in reserve_el.children) if reserve_el is not None else ()
        trace_el = root.child("trace")
        if trace_el is None:
            raise InvalidTrace("result has no trace")
        trace = StageTrace(
            trace_el.attrs.get("request", ""),
            _int_attr(trace_el, "d"), _int_attr(trace_el, "m"), _int_attr(trace_el, "f"),
        )
        if float(trace_el.attrs.get("s", "nan")) != trace.s_aggregate:
            raise InvalidTrace("trace s does not equal (d - m - f) / 3")
    except (KeyError, ValueError) as exc:
        if isinstance(exc, (InvalidTrace, XmlMalformed)):
            raise
        raise InvalidTrace(f"malformed selection result: {exc}") from None
    if (chosen is None) != (not ranked) or (ranked and chosen != ranked[0].descriptor_id):
        raise InvalidTrace("chosen does not match the first ranked entry")
    return SelectionResult(ranked, chosen, reserve, trace, strategy)
