"""Seeded workload generator and strategy comparison benchmark.

Command line::

    ria-bench generate --descriptors 100000 --vocab 5000 --seed 7 --out corpus.xml
    ria-bench run --corpus corpus.xml --queries 1000 --strategies expected,exited --seed 11 --out results/
    ria-bench rate-histogram --input results/metrics.csv --out histogram.csv

Everything except latency-derived columns is a pure function of the seeds.
"""

from __future__ import annotations

import argparse
import csv
import io
import itertools
import logging
import os
import random
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

from . import wire
from .filtering import FilterCriteria, parse_max_candidates
from .mapper import RegistryIndex, RegistrySnapshot
from .metrics import MetricsCollector, MetricsReport, band_histogram, rate, read_metrics_csv
from .model import ServiceDescriptor, ServiceRequest
from .selector import (
    DEFAULT_K,
    DEFAULT_WEIGHTS,
    SelectionStrategy,
    Weights,
    matched_top,
    select_with_strategy,
)
from .store import RequestStore

log = logging.getLogger(__name__)

COUNTRIES = ("in", "us", "de", "jp", "br", "fr", "gb", "ca", "au", "sg")


def generate_corpus(
    n: int,
    vocab: int,
    seed: int,
    *,
    zipf_s: float = 1.0,
    min_keywords: int = 3,
    max_keywords: int = 6,
) -> list[ServiceDescriptor]:
    """``n`` descriptors with Zipf-distributed keywords from a ``vocab``-token vocabulary."""
    if n < 1 or vocab < 1:
        raise ValueError("descriptor count and vocabulary size must be >= 1")
    rng = random.Random(seed)
    width = len(str(vocab - 1))
    tokens = [f"t{i:0{width}d}" for i in range(vocab)]
    cum = list(itertools.accumulate(1.0 / (r**zipf_s) for r in range(1, vocab + 1)))
    lo, hi = min(min_keywords, vocab), min(max_keywords, vocab)
    out = []
    for i in range(n):
        want = rng.randint(lo, hi)
        kws: set[str] = set()
        while len(kws) < want:
            kws.update(rng.choices(tokens, cum_weights=cum, k=want - len(kws)))
        # skewed toward fast services: min of two uniforms, 5.0 .. 400.0 ms
        latency = min(rng.randrange(50, 4001), rng.randrange(50, 4001)) / 10
        out.append(
            ServiceDescriptor(
                id=f"svc{i:07d}",
                name="-".join(sorted(kws)),
                keywords=frozenset(kws),
                port_name=f"port{i}",
                ip_address=f"10.{(i >> 16) & 255}.{(i >> 8) & 255}.{i & 255}",
                rec_port=rng.randrange(1024, 65536),
                country=rng.choice(COUNTRIES),
                qos_latency_ms=latency,
                qos_availability=rng.randrange(9000, 10001) / 10000,
            )
        )
    return out


def write_corpus(descriptors: Sequence[ServiceDescriptor], path: str | os.PathLike) -> None:
    with open(path, "wb") as fh:
        for d in descriptors:
            fh.write(wire.serialize_descriptor(d, declaration=False))
            fh.write(b"\n")


def load_corpus(path: str | os.PathLike) -> RegistryIndex:
    registry = RegistryIndex()
    with open(path, "rb") as fh:
        registry.register_many(wire.iter_descriptors(fh.read()))
    return registry


def generate_queries(snapshot: RegistrySnapshot, count: int, seed: int, max_tokens: int = 3) -> list[ServiceRequest]:
    """Seeded queries whose tokens are drawn uniformly from the registry's keywords.

    Every query therefore matches at least one descriptor.
    """
    rng = random.Random(seed)
    vocab = sorted(snapshot.inverted)
    if not vocab:
        raise ValueError("corpus contains no descriptors")
    queries = []
    for i in range(count):
        toks = rng.sample(vocab, min(rng.randint(1, max_tokens), len(vocab)))
        queries.append(
            ServiceRequest(
                query=" ".join(toks),
                requester=f"client{rng.randrange(8):02d}",
                message_id=f"q{i:06d}",
                priority_hint=rng.randrange(10),
            )
        )
    return queries


@dataclass(frozen=True)
class QueryOutcome:
    index: int
    strategy: str
    request_id: str
    chosen: str | None
    chosen_score: float
    matched_top: str | None
    trace: object


@dataclass
class BenchResult:
    outcomes: dict[str, list[QueryOutcome]]
    report: MetricsReport
    collector: MetricsCollector

    def agreement(self, strategy: str, reference: str = "exited") -> float | None:
        """Fraction of queries whose best matching descriptor equals the reference's."""
        if reference not in self.outcomes or strategy not in self.outcomes:
            return None
        pairs = list(zip(self.outcomes[strategy], self.outcomes[reference]))
        if not pairs:
            return None
        return sum(a.matched_top == b.matched_top for a, b in pairs) / len(pairs)

    def mean_latency_ns(self, strategy: str) -> float:
        return self.report.get(strategy).mean_ns

    def comparison_rows(self) -> list[list[str]]:
        rows = []
        exited = self.report.get("exited")
        for stats in self.report.rows:
            speedup = f"{exited.mean_ns / stats.mean_ns:.3f}" if exited and stats.mean_ns > 0 else ""
            agree = self.agreement(stats.strategy)
            rows.append([stats.strategy, f"{stats.mean_ns:.1f}", speedup, "" if agree is None else f"{agree:.6f}"])
        return rows


def run_benchmark(
    registry: RegistryIndex,
    queries: Sequence[ServiceRequest],
    strategies: Sequence[SelectionStrategy | str],
    *,
    criteria: FilterCriteria = FilterCriteria(),
    weights: Weights = DEFAULT_WEIGHTS,
    k: int = DEFAULT_K,
    workers: int = 1,
) -> BenchResult:
    if not queries:
        raise ValueError("a benchmark run needs at least one query")
    snap = registry.snapshot()
    collector = MetricsCollector(keep_traces=True)
    outcomes: dict[str, list[QueryOutcome]] = {}
    for strategy in map(SelectionStrategy, strategies):
        store = RequestStore()
        ids = [store.ingest(q)[0] for q in queries]

        def one(i: int, strategy=strategy, store=store, ids=ids) -> QueryOutcome:
            request = replace(queries[i], id=ids[i])
            res = select_with_strategy(request, snap, strategy, criteria, weights, k, store=store)
            top = matched_top(res)
            return QueryOutcome(i, strategy.value, ids[i], res.chosen, res.chosen_score,
                                top.descriptor_id if top else None, res.trace)

        started = time.perf_counter()
        if workers > 1:
            with ThreadPoolExecutor(workers) as pool:
                results = list(pool.map(one, range(len(queries))))
        else:
            results = [one(i) for i in range(len(queries))]
        for o in results:
            collector.record(o.trace, o.chosen_score, strategy)
        outcomes[strategy.value] = results
        log.info("%s: %d queries in %.2fs", strategy.value, len(queries), time.perf_counter() - started)
    return BenchResult(outcomes, collector.report(), collector)


def _csv(rows: Sequence[Sequence[object]], header: Sequence[str]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


COMPARISON_HEADER = ("strategy", "mean_latency_ns", "speedup_vs_exited", "top1_agreement_vs_exited")
SELECTIONS_HEADER = ("query", "strategy", "request_id", "chosen", "chosen_score", "matched_top")
TRACES_HEADER = ("query", "strategy", "request_id", "d", "m", "f", "s", "final_score", "band")


# columns derived from wall-clock measurements; everything else is seed-determined
LATENCY_COLUMNS = frozenset({"mean_ns", "median_ns", "p95_ns", "throughput_rps", "mean_latency_ns", "speedup_vs_exited"})


def strip_latency(csv_text: str) -> str:
    """Drop the latency-derived columns from one of the output CSVs."""
    rows = list(csv.reader(io.StringIO(csv_text)))
    if not rows:
        return ""
    keep = [i for i, name in enumerate(rows[0]) if name not in LATENCY_COLUMNS]
    return _csv([[r[i] for i in keep] for r in rows[1:]], [rows[0][i] for i in keep])


def write_outputs(result: BenchResult, out_dir: str | os.PathLike) -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = {
        "metrics": out / "metrics.csv",
        "comparison": out / "comparison.csv",
        "selections": out / "selections.csv",
        "traces": out / "traces.csv",
    }
    files["metrics"].write_text(result.report.to_csv())
    files["comparison"].write_text(_csv(result.comparison_rows(), COMPARISON_HEADER))
    sel, tr = [], []
    for outcomes in result.outcomes.values():
        for o in outcomes:
            sel.append([o.index, o.strategy, o.request_id, o.chosen or "", repr(o.chosen_score), o.matched_top or ""])
            t = o.trace
            tr.append([o.index, o.strategy, o.request_id, t.d_count, t.m_removed, t.f_removed,
                       repr(t.s_aggregate), repr(o.chosen_score), rate(o.chosen_score).label])
    files["selections"].write_text(_csv(sel, SELECTIONS_HEADER))
    files["traces"].write_text(_csv(tr, TRACES_HEADER))
    return files


def rate_histogram(metrics_csv: str) -> str:
    rows = read_metrics_csv(metrics_csv)
    return _csv(band_histogram(rows), ("strategy", "band", "count"))


# -- command line -------------------------------------------------------------

def _strategies(text: str) -> list[SelectionStrategy]:
    try:
        return [SelectionStrategy(s.strip()) for s in text.split(",") if s.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _positive(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {value}")
    return value


def _non_negative(text: str) -> int:
    value = int(text)
    if value < 0:
        raise argparse.ArgumentTypeError(f"must be >= 0, got {value}")
    return value


def _weights(text: str) -> Weights:
    try:
        return Weights(*(float(x) for x in text.split(",")))
    except (TypeError, ValueError) as exc:
        raise argparse.ArgumentTypeError(f"bad weights {text!r}: {exc}") from None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ria-bench", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a seeded descriptor corpus")
    g.add_argument("--descriptors", type=_positive, required=True)
    g.add_argument("--vocab", type=_positive, required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--zipf", type=float, default=1.0, help="Zipf exponent of keyword frequencies")
    g.add_argument("--out", required=True)

    r = sub.add_parser("run", help="compare strategies on a corpus")
    r.add_argument("--corpus", required=True)
    r.add_argument("--queries", type=_non_negative, required=True)
    r.add_argument("--strategies", type=_strategies, default=[SelectionStrategy.EXPECTED, SelectionStrategy.EXITED])
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--min-relevance", type=float, default=0.0)
    r.add_argument("--max-candidates", type=parse_max_candidates, default=None)
    r.add_argument("--k", type=_positive, default=DEFAULT_K)
    r.add_argument("--weights", type=_weights, default=DEFAULT_WEIGHTS)
    r.add_argument("--workers", type=_positive, default=1)
    r.add_argument("--out", required=True, help="output directory")

    h = sub.add_parser("rate-histogram", help="band counts from a metrics CSV")
    h.add_argument("--input", required=True)
    h.add_argument("--out", help="output file (default: stdout)")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")

    if args.command == "generate":
        write_corpus(generate_corpus(args.descriptors, args.vocab, args.seed, zipf_s=args.zipf), args.out)
        return 0

    if args.command == "run":
        if args.queries == 0:
            parser.error("--queries must be >= 1")
        if not args.strategies:
            parser.error("--strategies is empty")
        try:
            registry = load_corpus(args.corpus)
            criteria = FilterCriteria(args.min_relevance, args.max_candidates)
            queries = generate_queries(registry.snapshot(), args.queries, args.seed)
        except (OSError, ValueError) as exc:
            print(f"ria-bench: cannot load corpus: {exc}", file=sys.stderr)
            return 2
        result = run_benchmark(registry, queries, args.strategies, criteria=criteria,
                               weights=args.weights, k=args.k, workers=args.workers)
        write_outputs(result, args.out)
        sys.stdout.write(_csv(result.comparison_rows(), COMPARISON_HEADER))
        return 0

    try:
        with open(args.input) as fh:
            text = rate_histogram(fh.read())
    except (OSError, ValueError) as exc:
        print(f"ria-bench: {exc}", file=sys.stderr)
        return 2
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


if __name__ == "__main__":
    sys.exit(main())
