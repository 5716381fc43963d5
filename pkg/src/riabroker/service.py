"""HTTP front-end composing store, registry, pipeline and metrics.

Endpoints::

    POST /requests?strategy=normal|exited|expected   SOAP envelope or query document -> <selection>
    POST /registry                                   WSDL-subset descriptor -> 201 <registered>
    GET  /requests/{id}                              stored request state
    GET  /metrics                                    metrics CSV

Configuration comes from a ``key = value`` file (``listen``, ``weights``,
``min_relevance``, ``max_candidates``, ``k``), then the ``RIA_BROKER_LISTEN``
environment variable, then command-line flags.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
import threading
from dataclasses import dataclass, field, replace
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from urllib.parse import parse_qs, urlsplit

from . import wire, xmlsubset
from .errors import (
    BrokerError,
    DuplicateId,
    EmptyQuery,
    InvalidDescriptor,
    InvalidStrategy,
    NotFound,
    WeightSumInvalid,
    WireError,
)
from .filtering import FilterCriteria, parse_max_candidates
from .mapper import RegistryIndex
from .metrics import MetricsCollector
from .selector import DEFAULT_K, DEFAULT_WEIGHTS, SelectionResult, SelectionStrategy, Weights, select_with_strategy
from .store import RequestStore, encode_record

log = logging.getLogger(__name__)

LISTEN_ENV = "RIA_BROKER_LISTEN"
XML_TYPE = "application/xml"


@dataclass(frozen=True)
class BrokerConfig:
    host: str = "127.0.0.1"
    port: int = 8080
    weights: Weights = DEFAULT_WEIGHTS
    criteria: FilterCriteria = field(default_factory=FilterCriteria)
    k: int = DEFAULT_K


def _listen(value: str) -> tuple[str, int]:
    host, sep, port = value.strip().rpartition(":")
    if not sep or not port.isdigit() or not 0 <= int(port) <= 65535:
        raise ValueError(f"listen address must be host:port, got {value!r}")
    return host or "127.0.0.1", int(port)


def parse_config(text: str, base: BrokerConfig = BrokerConfig()) -> BrokerConfig:
    """Apply ``key = value`` lines to ``base``. Blank lines and ``#`` comments are skipped."""
    cfg = base
    min_rel, max_cand = cfg.criteria.min_relevance, cfg.criteria.max_candidates
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip().lower(), value.strip()
        if not sep:
            raise ValueError(f"config line {lineno}: expected key = value")
        if key == "listen":
            host, port = _listen(value)
            cfg = replace(cfg, host=host, port=port)
        elif key == "weights":
            cfg = replace(cfg, weights=Weights(*(float(x) for x in value.split(","))))
        elif key == "min_relevance":
            min_rel = float(value)
        elif key == "max_candidates":
            max_cand = parse_max_candidates(value)
        elif key == "k":
            if not value.isdigit() or int(value) < 1:
                raise ValueError(f"config line {lineno}: k must be an integer >= 1")
            cfg = replace(cfg, k=int(value))
        else:
            raise ValueError(f"config line {lineno}: unknown key {key!r}")
    return replace(cfg, criteria=FilterCriteria(min_rel, max_cand))


def load_config(path: str | None = None, environ=os.environ) -> BrokerConfig:
    cfg = BrokerConfig()
    if path:
        with open(path) as fh:
            cfg = parse_config(fh.read(), cfg)
    if environ.get(LISTEN_ENV):
        host, port = _listen(environ[LISTEN_ENV])
        cfg = replace(cfg, host=host, port=port)
    return cfg


class Broker:
    """In-process broker; the HTTP handler is a thin shell around it."""

    def __init__(self, config: BrokerConfig = BrokerConfig()):
        self.config = config
        self.store = RequestStore()
        self.registry = RegistryIndex()
        self.metrics = MetricsCollector()

    def register(self, body: bytes) -> tuple[str, int]:
        descriptor = wire.parse_descriptor(body)
        return descriptor.id, self.registry.register(descriptor)

    def submit(self, body: bytes, strategy: SelectionStrategy | str = SelectionStrategy.EXPECTED) -> tuple[str, SelectionResult]:
        strategy = SelectionStrategy(strategy)
        request = wire.parse_request(body)
        request_id, _ = self.store.ingest(request)
        # a duplicate shares the stored id, but is scored with its own fields
        # (priority hint), so the response never depends on arrival order
        request = replace(request, id=request_id)
        cfg = self.config
        result = select_with_strategy(request, self.registry.snapshot(), strategy, cfg.criteria, cfg.weights, cfg.k,
                                      store=self.store)
        self.metrics.record(result.trace, result.chosen_score, strategy)
        return request_id, result

    def request_document(self, request_id: str) -> bytes:
        return encode_record(self.store.get(request_id))

    def metrics_csv(self) -> str:
        return self.metrics.report().to_csv()


def error_body(exc: BaseException) -> bytes:
    name = exc.name if isinstance(exc, BrokerError) else type(exc).__name__
    return f'<error type="{xmlsubset.escape_attr(name)}">{xmlsubset.escape_text(str(exc))}</error>'.encode()


def status_for(exc: BaseException) -> int:
    if isinstance(exc, EmptyQuery):
        return 422
    if isinstance(exc, DuplicateId):
        return 409
    if isinstance(exc, NotFound):
        return 404
    if isinstance(exc, (WireError, InvalidDescriptor, BrokerError, ValueError)):
        return 400
    return 500


class BrokerHandler(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"
    server_version = "ria-broker/0.1"
    disable_nagle_algorithm = True  # headers and body go out in separate writes
    broker: Broker  # set on the subclass built by make_server

    def log_message(self, fmt, *args):
        log.debug("%s - %s", self.address_string(), fmt % args)

    def _send(self, status: int, body: bytes, content_type: str = XML_TYPE, headers: dict | None = None) -> None:
        self.send_response(status)
        self.send_header("Content-Type", content_type)
        self.send_header("Content-Length", str(len(body)))
        for k, v in (headers or {}).items():
            self.send_header(k, v)
        self.end_headers()
        self.wfile.write(body)

    def _fail(self, exc: BaseException) -> None:
        status = status_for(exc)
        if status == 500:
            log.exception("internal error")
        self._send(status, error_body(exc))

    def _body(self) -> bytes:
        length = int(self.headers.get("Content-Length") or 0)
        return self.rfile.read(length) if length > 0 else b""

    def do_POST(self) -> None:
        url = urlsplit(self.path)
        body = self._body()
        try:
            if url.path == "/requests":
                strategy = parse_qs(url.query).get("strategy", ["expected"])[-1]
                try:
                    strategy = SelectionStrategy(strategy)
                except ValueError:
                    raise InvalidStrategy(f"unknown strategy {strategy!r}") from None
                request_id, result = self.broker.submit(body, strategy)
                self._send(200, wire.serialize_result(result), headers={"X-Request-Id": request_id})
            elif url.path == "/registry":
                descriptor_id, version = self.broker.register(body)
                doc = f'<registered id="{xmlsubset.escape_attr(descriptor_id)}" version="{version}"/>'
                self._send(201, doc.encode())
            else:
                raise NotFound(f"no endpoint {url.path}")
        except Exception as exc:  # noqa: BLE001 - every failure becomes an HTTP status
            self._fail(exc)

    def do_GET(self) -> None:
        url = urlsplit(self.path)
        try:
            if url.path == "/metrics":
                self._send(200, self.broker.metrics_csv().encode(), "text/csv")
            elif url.path.startswith("/requests/"):
                self._send(200, self.broker.request_document(url.path[len("/requests/"):]))
            else:
                raise NotFound(f"no endpoint {url.path}")
        except Exception as exc:  # noqa: BLE001
            self._fail(exc)


class BrokerServer(ThreadingHTTPServer):
    daemon_threads = True
    request_queue_size = 128


def make_server(broker: Broker, host: str | None = None, port: int | None = None) -> BrokerServer:
    handler = type("Handler", (BrokerHandler,), {"broker": broker})
    return BrokerServer((host if host is not None else broker.config.host,
                         port if port is not None else broker.config.port), handler)


def serve_in_thread(broker: Broker, host: str = "127.0.0.1", port: int = 0) -> tuple[BrokerServer, threading.Thread]:
    """Start a server on a background thread; ``port=0`` picks a free port."""
    server = make_server(broker, host, port)
    thread = threading.Thread(target=server.serve_forever, name="ria-broker", daemon=True)
    thread.start()
    return server, thread


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="ria-broker", description="Run the QoS-aware request broker.")
    parser.add_argument("--config", help="key = value configuration file")
    parser.add_argument("--listen", help="host:port (overrides config and environment)")
    parser.add_argument("--weights", help="relevance,latency,availability,hint")
    parser.add_argument("--min-relevance", type=float)
    parser.add_argument("--max-candidates")
    parser.add_argument("--k", type=int)
    parser.add_argument("--corpus", help="descriptor corpus to preload")
    parser.add_argument("-v", "--verbose", action="store_true")
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format="%(asctime)s %(message)s")

    try:
        cfg = load_config(args.config)
        overrides = []
        if args.listen:
            overrides.append(f"listen = {args.listen}")
        if args.weights:
            overrides.append(f"weights = {args.weights}")
        if args.min_relevance is not None:
            overrides.append(f"min_relevance = {args.min_relevance}")
        if args.max_candidates is not None:
            overrides.append(f"max_candidates = {args.max_candidates}")
        if args.k is not None:
            overrides.append(f"k = {args.k}")
        cfg = parse_config("\n".join(overrides), cfg)
    except (OSError, ValueError, WeightSumInvalid) as exc:
        parser.error(str(exc))

    broker = Broker(cfg)
    if args.corpus:
        with open(args.corpus, "rb") as fh:
            broker.registry.register_many(wire.iter_descriptors(fh.read()))
        log.info("preloaded %d descriptors", len(broker.registry))
    server = make_server(broker)
    log.info("listening on %s:%d", *server.server_address[:2])
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
    return 0


if __name__ == "__main__":
    sys.exit(main())
