import csv
import io

import pytest

from riabroker.bench import (
    generate_corpus,
    generate_queries,
    load_corpus,
    main,
    rate_histogram,
    run_benchmark,
    strip_latency,
    write_corpus,
)
from riabroker.metrics import CSV_HEADER, MetricsCollector
from riabroker.model import StageTrace


def rows(path):
    return list(csv.DictReader(io.StringIO(path.read_text())))


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    path = tmp_path_factory.mktemp("corpus") / "corpus.xml"
    assert main(["generate", "--descriptors", "400", "--vocab", "60", "--seed", "5", "--out", str(path)]) == 0
    return path


def test_generate_single_descriptor(tmp_path):
    out = tmp_path / "one.xml"
    assert main(["generate", "--descriptors", "1", "--vocab", "1", "--seed", "99", "--out", str(out)]) == 0
    assert len(load_corpus(out)) == 1


def test_generate_is_seeded(tmp_path, corpus):
    again = tmp_path / "again.xml"
    main(["generate", "--descriptors", "400", "--vocab", "60", "--seed", "5", "--out", str(again)])
    assert again.read_bytes() == corpus.read_bytes()
    other = tmp_path / "other.xml"
    main(["generate", "--descriptors", "400", "--vocab", "60", "--seed", "6", "--out", str(other)])
    assert other.read_bytes() != corpus.read_bytes()


def test_generated_values_in_range():
    ds = generate_corpus(500, 40, seed=1)
    assert len({d.id for d in ds}) == 500
    vocab = {f"t{i:02d}" for i in range(40)}
    for d in ds:
        assert 3 <= len(d.keywords) <= 6 and d.keywords <= vocab
        assert 5.0 <= d.qos_latency_ms <= 400.0 and 0.9 <= d.qos_availability <= 1.0


def test_corpus_file_round_trip(tmp_path):
    ds = generate_corpus(50, 20, seed=3)
    path = tmp_path / "c.xml"
    write_corpus(ds, path)
    assert list(load_corpus(path).snapshot().descriptors) == ds


@pytest.mark.parametrize("flag", [["--descriptors", "0", "--vocab", "5"], ["--descriptors", "5", "--vocab", "0"]])
def test_generate_rejects_bad_flags(tmp_path, flag):
    with pytest.raises(SystemExit):
        main(["generate", *flag, "--out", str(tmp_path / "x.xml")])


def test_run_single_query(tmp_path, corpus):
    out = tmp_path / "res"
    assert main(["run", "--corpus", str(corpus), "--queries", "1", "--strategies", "expected",
                 "--seed", "2", "--out", str(out)]) == 0
    metrics = rows(out / "metrics.csv")
    assert [(r["strategy"], r["count"]) for r in metrics] == [("expected", "1")]
    assert tuple(metrics[0]) == CSV_HEADER


def test_run_zero_queries(tmp_path, corpus, capsys):
    with pytest.raises(SystemExit) as exc:
        main(["run", "--corpus", str(corpus), "--queries", "0", "--out", str(tmp_path)])
    assert exc.value.code == 2
    with pytest.raises(ValueError):
        run_benchmark(load_corpus(corpus), [], ["expected"])


@pytest.mark.parametrize("content", [b"<wsdl:binding name='x'", b"<wsdl:definitions/>", b""])
def test_run_bad_corpus(tmp_path, content):
    bad = tmp_path / "bad.xml"
    bad.write_bytes(content)
    assert main(["run", "--corpus", str(bad), "--queries", "3", "--out", str(tmp_path / "o")]) == 2


def test_run_missing_corpus(tmp_path):
    assert main(["run", "--corpus", str(tmp_path / "nope.xml"), "--queries", "3", "--out", str(tmp_path)]) == 2


def test_agreement_with_exited(tmp_path, corpus):
    out = tmp_path / "res"
    main(["run", "--corpus", str(corpus), "--queries", "60", "--strategies", "expected,exited,normal",
          "--min-relevance", "0", "--seed", "4", "--out", str(out)])
    comp = {r["strategy"]: r for r in rows(out / "comparison.csv")}
    assert comp["expected"]["top1_agreement_vs_exited"] == "1.000000"
    assert comp["exited"]["speedup_vs_exited"] == "1.000"
    # brute force over the selections dump
    sel = rows(out / "selections.csv")
    exp = {r["query"]: r["matched_top"] for r in sel if r["strategy"] == "expected"}
    ext = {r["query"]: r["matched_top"] for r in sel if r["strategy"] == "exited"}
    assert exp == ext and len(exp) == 60 and all(exp.values())


def test_queries_always_match():
    reg = load_corpus_from(generate_corpus(200, 50, seed=8))
    snap = reg.snapshot()
    for q in generate_queries(snap, 100, seed=9):
        assert any(t in snap.inverted for t in q.tokens)


def load_corpus_from(descriptors):
    from riabroker.mapper import RegistryIndex

    reg = RegistryIndex()
    reg.register_many(descriptors)
    return reg


def test_parallel_workers_match_sequential(tmp_path, corpus):
    a, b = tmp_path / "a", tmp_path / "b"
    base = ["run", "--corpus", str(corpus), "--queries", "40", "--strategies", "expected,exited", "--seed", "3"]
    main([*base, "--out", str(a)])
    main([*base, "--workers", "4", "--out", str(b)])
    for name in ("selections.csv", "traces.csv", "metrics.csv", "comparison.csv"):
        assert strip_latency((a / name).read_text()) == strip_latency((b / name).read_text())


def test_rate_histogram_empty(tmp_path):
    src = tmp_path / "m.csv"
    src.write_text(MetricsCollector().report().to_csv())
    out = tmp_path / "h.csv"
    assert main(["rate-histogram", "--input", str(src), "--out", str(out)]) == 0
    assert rows(out) == [{"strategy": "all", "band": b, "count": "0"} for b in ("excellent", "good", "average", "poor")]


def test_rate_histogram_all_excellent(tmp_path):
    mc = MetricsCollector()
    for _ in range(10):
        mc.record(StageTrace("r", 1, 0, 0), 1.0, "expected")
    hist = rows_of(rate_histogram(mc.report().to_csv()))
    assert {(r["strategy"], r["band"]): int(r["count"]) for r in hist}[("expected", "excellent")] == 10
    assert sum(int(r["count"]) for r in hist if r["strategy"] == "all") == 10


def rows_of(text):
    return list(csv.DictReader(io.StringIO(text)))


def test_rate_histogram_matches_trace_rerating(tmp_path, corpus):
    out = tmp_path / "res"
    main(["run", "--corpus", str(corpus), "--queries", "80", "--strategies", "normal,expected,exited",
          "--seed", "12", "--out", str(out)])
    hist = rows_of(rate_histogram((out / "metrics.csv").read_text()))
    got = {(r["strategy"], r["band"]): int(r["count"]) for r in hist}
    expected = {}
    for r in rows(out / "traces.csv"):
        x = float(r["final_score"])
        band = "excellent" if x >= 0.85 else "good" if x >= 0.65 else "average" if x >= 0.40 else "poor"
        assert band == r["band"]
        for key in ((r["strategy"], band), ("all", band)):
            expected[key] = expected.get(key, 0) + 1
    assert {k: v for k, v in got.items() if v} == expected
    assert sum(v for (s, _), v in got.items() if s == "all") == 240


def test_rate_histogram_malformed(tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("strategy,count\nexpected,1\n")
    assert main(["rate-histogram", "--input", str(bad)]) == 2
    assert main(["rate-histogram", "--input", str(tmp_path / "missing.csv")]) == 2


def test_strip_latency():
    text = "strategy,mean_ns,count\nexpected,12.5,3\n"
    assert strip_latency(text) == "strategy,count\nexpected,3\n"
