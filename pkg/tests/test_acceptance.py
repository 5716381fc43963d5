"""Acceptance criteria, one test per criterion.

Each test records its measured values through the ``detail`` fixture; the
terminal summary prints one PASS/FAIL line per criterion.
"""

import csv
import http.client
import io
import random
import re
import threading
import time
from pathlib import Path

import pytest

from generators import rand_descriptor, rand_envelope, rand_query_document, rand_selection_result
from oracles import brute_argmax, random_query, random_registry
from riabroker import xmlsubset
from riabroker.bench import generate_corpus, generate_queries, main as bench_main, rate_histogram, strip_latency
from riabroker.errors import BadPort
from riabroker.filtering import FilterCriteria, filter_candidates
from riabroker.mapper import RegistryIndex, map_request
from riabroker.metrics import MetricsCollector, rate, read_metrics_csv
from riabroker.model import ServiceRequest, StageTrace
from riabroker.selector import DEFAULT_WEIGHTS, SelectionStrategy, select_with_strategy
from riabroker.service import Broker, serve_in_thread, status_for
from riabroker.wire import (
    Envelope,
    parse_descriptor,
    parse_envelope,
    parse_query,
    parse_result,
    serialize_descriptor,
    serialize_envelope,
    serialize_query,
    serialize_result,
)

FIXTURES = Path(__file__).resolve().parent.parent / "fixtures"
STRATEGIES = list(SelectionStrategy)
OUTPUTS = ("metrics.csv", "comparison.csv", "selections.csv", "traces.csv")


def registry_of(ds):
    reg = RegistryIndex()
    reg.register_many(ds)
    return reg


# -- 1 ---------------------------------------------------------------------------

@pytest.mark.acceptance(1, "oracle equivalence of expected top-1")
def test_oracle_equivalence(detail):
    started = time.perf_counter()
    rng = random.Random(20240601)
    mismatches = matched = 0
    for _ in range(1000):
        ds = random_registry(rng, rng.randint(0, 50))
        req = ServiceRequest(random_query(rng), priority_hint=rng.randrange(10))
        res = select_with_strategy(req, registry_of(ds), SelectionStrategy.EXPECTED, FilterCriteria(min_relevance=0.0))
        oracle = brute_argmax(req.tokens, ds, DEFAULT_WEIGHTS.as_tuple(), req.priority_hint)
        got = (res.chosen, res.chosen_score) if res.chosen is not None else None
        mismatches += got != oracle
        matched += oracle is not None
    elapsed = time.perf_counter() - started
    detail(f"1000 instances ({matched} with a match), {mismatches} mismatches, {elapsed:.2f}s")
    assert mismatches == 0
    assert elapsed < 10.0


# -- 2 ---------------------------------------------------------------------------

@pytest.mark.acceptance(2, "S = (D - M - F) / 3 on pipeline traces")
def test_formula_identity(detail):
    rng = random.Random(77)
    checked = violations = 0
    while checked < 10_000:
        reg = registry_of(random_registry(rng, rng.randint(0, 50)))
        for _ in range(50):
            req = ServiceRequest(random_query(rng))
            strategy = rng.choice(STRATEGIES)
            crit = FilterCriteria(rng.choice((0.0, 0.2, 0.34, 0.5, 1.0)), rng.choice((None, 1, 3)))
            # k=None hands every survivor to the selector and ranks them all
            res = select_with_strategy(req, reg, strategy, crit, k=None)
            t = res.trace
            handed = len(res.ranked)
            ok = t.s_aggregate == (t.d_count - t.m_removed - t.f_removed) / 3 and 3 * t.s_aggregate == handed
            violations += not ok
            checked += 1
    detail(f"{checked} traces, {violations} violations")
    assert violations == 0


# -- 3 ---------------------------------------------------------------------------

@pytest.mark.acceptance(3, "pipeline monotonicity and stage accounting")
def test_pipeline_monotonicity(detail):
    rng = random.Random(31337)
    runs = violations = 0
    for _ in range(2000):
        ds = random_registry(rng, rng.randint(0, 50))
        reg = registry_of(ds)
        req = ServiceRequest(random_query(rng), priority_hint=rng.randrange(10))
        crit = FilterCriteria(rng.choice((0.0, 0.1, 0.25, 0.5, 0.8)), rng.choice((None, 1, 2, 5)))
        k = rng.choice((1, 3, 10, None))
        for strategy in STRATEGIES:
            res = select_with_strategy(req, reg, strategy, crit, k=k)
            registry_ids = {d.id for d in ds}
            mapped = map_request(req, reg)
            mapped_ids = {c.descriptor_id for c in mapped.candidates}
            if strategy is SelectionStrategy.EXPECTED:
                kept, f_removed = filter_candidates(mapped.candidates, crit)
                filtered_ids = {c.descriptor_id for c in kept}
            elif strategy is SelectionStrategy.NORMAL:
                filtered_ids, f_removed = mapped_ids, 0
            else:
                mapped_ids = filtered_ids = registry_ids
                f_removed = 0
            t = res.trace
            ok = (
                filtered_ids <= mapped_ids <= registry_ids
                and (res.chosen is None or res.chosen in filtered_ids)
                and {s.descriptor_id for s in res.ranked} <= filtered_ids
                and len(mapped_ids) + t.m_removed == t.d_count == len(ds)
                and len(filtered_ids) + t.f_removed == len(mapped_ids)
                and t.f_removed == f_removed
                and not set(res.reserve) & {s.descriptor_id for s in res.ranked}
                and set(res.reserve) == mapped_ids - filtered_ids
            )
            violations += not ok
            runs += 1
    detail(f"{runs} traced runs, {violations} violations")
    assert violations == 0


# -- 4 ---------------------------------------------------------------------------

def _round_trips(make, serialize, parse, seed, count=1000):
    rng = random.Random(seed)
    failures = 0
    for _ in range(count):
        value = make(rng)
        data = serialize(value)
        back = parse(data)
        failures += back != value or serialize(back) != data
    return count, failures


@pytest.mark.acceptance(4, "fixture conformance and bit-exact round trips")
def test_fixture_conformance(detail):
    env = parse_envelope((FIXTURES / "soap_request.xml").read_bytes())
    assert env.message_id == "TTTTT"

    query = (FIXTURES / "query.xml").read_bytes()
    assert xmlsubset.parse(query).find("requester").text == "vvvvvvvv"
    with pytest.raises(BadPort):
        parse_query(query)

    binding = parse_descriptor((FIXTURES / "wsdl_binding.xml").read_bytes())
    assert binding.name == "nmtoken"
    detail("fixtures ok")

    totals = {}
    for name, strat, ser, par in (
        ("result", rand_selection_result, serialize_result, parse_result),
        ("envelope", rand_envelope, serialize_envelope, parse_envelope),
        ("query", rand_query_document, serialize_query, parse_query),
        ("descriptor", rand_descriptor, serialize_descriptor, parse_descriptor),
    ):
        seen, failures = _round_trips(strat, ser, par, seed=len(totals) + 400)
        totals[name] = (seen, failures)
    detail(", ".join(f"{n} {s} values/{f} failures" for n, (s, f) in totals.items()))
    assert all(seen >= 1000 and failures == 0 for seen, failures in totals.values())


# -- 5 and 6: the full benchmark ------------------------------------------------------

def _bench(tmp: Path, tag: str):
    corpus = tmp / f"corpus-{tag}.xml"
    out = tmp / f"run-{tag}"
    t0 = time.perf_counter()
    assert bench_main(["generate", "--descriptors", "100000", "--vocab", "5000", "--seed", "7",
                       "--out", str(corpus)]) == 0
    t1 = time.perf_counter()
    assert bench_main(["run", "--corpus", str(corpus), "--queries", "1000", "--strategies", "expected,exited",
                       "--seed", "11", "--min-relevance", "0", "--out", str(out)]) == 0
    t2 = time.perf_counter()
    return corpus, out, t1 - t0, t2 - t1


@pytest.fixture(scope="module")
def bench_run(tmp_path_factory):
    return _bench(tmp_path_factory.mktemp("bench"), "a")


@pytest.mark.slow
@pytest.mark.acceptance(5, "expected vs exited performance contrast")
def test_performance_contrast(bench_run, detail):
    corpus, out, gen_s, run_s = bench_run
    with open(corpus, "rb") as fh:
        records = sum(1 for line in fh if line.strip())
    comp = {r["strategy"]: r for r in csv.DictReader(io.StringIO((out / "comparison.csv").read_text()))}
    expected_ns = float(comp["expected"]["mean_latency_ns"])
    exited_ns = float(comp["exited"]["mean_latency_ns"])
    agreement = float(comp["expected"]["top1_agreement_vs_exited"])
    detail(f"{records} descriptors; expected {expected_ns / 1e6:.2f} ms vs exited {exited_ns / 1e6:.2f} ms "
           f"({exited_ns / expected_ns:.1f}x); agreement {agreement}; generate {gen_s:.1f}s + run {run_s:.1f}s")
    assert records == 100_000
    assert expected_ns <= exited_ns / 5
    assert agreement == 1.0
    assert gen_s + run_s < 60.0


def _strip_request_ids(body: bytes) -> bytes:
    return re.sub(rb' request="[^"]*"', b"", body)


def _two_brokers_same_sequence():
    ds = generate_corpus(300, 80, seed=21)
    reqs = generate_queries(registry_of(ds).snapshot(), 200, seed=22)
    rng = random.Random(23)
    sequence = [
        (serialize_envelope_for(q), rng.choice(STRATEGIES).value) for q in reqs for _ in range(2)
    ]
    rng.shuffle(sequence)
    bodies = []
    for _ in range(2):
        broker = Broker()
        srv, _ = serve_in_thread(broker)
        conn = http.client.HTTPConnection("127.0.0.1", srv.server_address[1], timeout=30)
        for d in ds:
            conn.request("POST", "/registry", serialize_descriptor(d))
            assert conn.getresponse().read()
        out = []
        for body, strategy in sequence:
            conn.request("POST", f"/requests?strategy={strategy}", body)
            out.append(conn.getresponse().read())
        conn.close()
        srv.shutdown()
        srv.server_close()
        bodies.append(out)
    return bodies, len(sequence)


def serialize_envelope_for(req: ServiceRequest) -> bytes:
    return serialize_envelope(Envelope(req.message_id, req.query, requester=req.requester,
                                       priority_hint=req.priority_hint))


@pytest.mark.slow
@pytest.mark.acceptance(6, "determinism of bench outputs and servers")
def test_determinism(bench_run, tmp_path, detail):
    corpus_a, out_a, _, _ = bench_run
    corpus_b, out_b, _, _ = _bench(tmp_path, "b")
    assert corpus_a.read_bytes() == corpus_b.read_bytes()
    differing = [n for n in OUTPUTS if strip_latency((out_a / n).read_text()) != strip_latency((out_b / n).read_text())]
    detail(f"corpus identical; {len(OUTPUTS) - len(differing)}/{len(OUTPUTS)} output files identical "
           "modulo latency columns")
    assert not differing

    (a, b), n = _two_brokers_same_sequence()
    detail(f"two servers, {n} requests, {sum(x == y for x, y in zip(a, b))} identical responses")
    assert a == b


# -- 7 ---------------------------------------------------------------------------

@pytest.mark.acceptance(7, "rating monotonicity and histogram consistency")
def test_rating_monotonicity(tmp_path, detail):
    rng = random.Random(5)
    scores = [rng.random() for _ in range(9_990)] + [0.0, 0.4, 0.65, 0.85, 1.0, 0.3999999, 0.6499999,
                                                      0.8499999, 0.4000001, 0.65000001]
    ordered = sorted(scores)
    bands = [rate(x) for x in ordered]
    inversions = sum(a > b for a, b in zip(bands, bands[1:]))
    detail(f"{len(scores)} scores, {inversions} inversions")
    assert inversions == 0

    mc = MetricsCollector()
    for i, x in enumerate(scores):
        mc.record(StageTrace(str(i), 3, 1, 1, {"map": i}), x, rng.choice(STRATEGIES))
    corpus, out = tmp_path / "corpus.xml", tmp_path / "run"
    bench_main(["generate", "--descriptors", "3000", "--vocab", "400", "--seed", "3", "--out", str(corpus)])
    bench_main(["run", "--corpus", str(corpus), "--queries", "300", "--strategies", "normal,expected,exited",
                "--seed", "4", "--out", str(out)])
    histograms = [mc.report().to_csv(), (out / "metrics.csv").read_text()]
    for text in histograms:
        rows = read_metrics_csv(text)
        hist = list(csv.DictReader(io.StringIO(rate_histogram(text))))
        total = sum(int(r["count"]) for r in rows)
        for r in rows:
            assert sum(int(h["count"]) for h in hist if h["strategy"] == r["strategy"]) == int(r["count"])
        assert sum(int(h["count"]) for h in hist if h["strategy"] == "all") == total
    detail(f"{len(histograms)} histograms sum to their record counts")


# -- 8 ---------------------------------------------------------------------------

@pytest.mark.slow
@pytest.mark.acceptance(8, "concurrency safety of the broker")
def test_concurrency(detail):
    ds = generate_corpus(600, 150, seed=41)
    pool = [serialize_envelope_for(q) for q in generate_queries(registry_of(ds).snapshot(), 400, seed=42)]
    pool += [b"<soap:Envelope><soap:Body>", serialize_envelope_for(ServiceRequest("!!!", message_id="bad"))]
    rng = random.Random(43)
    plans = [[(rng.choice(pool), rng.choice(STRATEGIES).value) for _ in range(1000)] for _ in range(16)]

    # sequential reference on its own broker
    reference = Broker()
    for d in ds:
        reference.registry.register(d)
    expected = {}
    for plan in plans:
        for body, strategy in plan:
            key = (body, strategy)
            if key not in expected:
                try:
                    expected[key] = (200, _strip_request_ids(serialize_result(reference.submit(body, strategy)[1])))
                except Exception as exc:  # noqa: BLE001
                    expected[key] = (status_for(exc), None)

    broker = Broker()
    for d in ds:
        broker.registry.register(d)
    srv, _ = serve_in_thread(broker)
    port = srv.server_address[1]
    results: list[list[tuple[int, bytes]]] = [[] for _ in plans]
    barrier = threading.Barrier(len(plans))

    def client(i):
        conn = http.client.HTTPConnection("127.0.0.1", port, timeout=60)
        barrier.wait()
        for body, strategy in plans[i]:
            conn.request("POST", f"/requests?strategy={strategy}", body)
            resp = conn.getresponse()
            results[i].append((resp.status, resp.read()))
        conn.close()

    started = time.perf_counter()
    threads = [threading.Thread(target=client, args=(i,)) for i in range(len(plans))]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    elapsed = time.perf_counter() - started
    srv.shutdown()
    srv.server_close()

    mismatches = ok = 0
    for plan, got in zip(plans, results):
        assert len(got) == len(plan)
        for (body, strategy), (status, payload) in zip(plan, got):
            want_status, want_body = expected[(body, strategy)]
            ok += status == 200
            if status != want_status or (status == 200 and _strip_request_ids(payload) != want_body):
                mismatches += 1
    count = broker.metrics.report().count
    detail(f"16 clients x 1000 requests in {elapsed:.1f}s, {mismatches} mismatches, "
           f"{ok} OK responses, metrics count {count}")
    assert mismatches == 0
    assert count == ok
