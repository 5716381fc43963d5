"""Stage aggregate, rating bands and per-strategy latency statistics."""

from __future__ import annotations

import csv
import io
import math
import random
import threading
from dataclasses import dataclass, field

from .errors import NegativeSurvivors, OutOfRange
from .model import QosBand, StageTrace

RESERVOIR_SIZE = 65_536

BAND_THRESHOLDS = ((0.85, QosBand.EXCELLENT), (0.65, QosBand.GOOD), (0.40, QosBand.AVERAGE))

CSV_HEADER = (
    "strategy", "count", "mean_ns", "median_ns", "p95_ns", "throughput_rps", "mean_s",
    "excellent", "good", "average", "poor",
)
BAND_COLUMNS = ("excellent", "good", "average", "poor")
STRATEGY_ORDER = ("normal", "exited", "expected")


def stage_aggregate(d: int, m: int, f: int) -> float:
    """One third of the candidates surviving mapping and filtering."""
    if min(d, m, f) < 0:
        raise ValueError(f"counts must be non-negative: d={d}, m={m}, f={f}")
    if m + f > d:
        raise NegativeSurvivors(f"m + f = {m + f} exceeds d = {d}")
    return (d - m - f) / 3


def rate(score: float) -> QosBand:
    if not isinstance(score, (int, float)) or not 0.0 <= score <= 1.0:
        raise OutOfRange(f"score must lie in [0, 1], got {score!r}")
    for threshold, band in BAND_THRESHOLDS:
        if score >= threshold:
            return band
    return QosBand.POOR


def nearest_rank(sorted_samples: list[int], pct: float) -> int:
    if not sorted_samples:
        return 0
    rank = max(1, math.ceil(pct / 100 * len(sorted_samples)))
    return sorted_samples[rank - 1]


@dataclass(frozen=True)
class StrategyStats:
    strategy: str
    count: int
    mean_ns: float
    median_ns: int
    p95_ns: int
    throughput_rps: float
    mean_s: float
    bands: dict[str, int] = field(default_factory=lambda: dict.fromkeys(BAND_COLUMNS, 0))

    def csv_row(self) -> list[str]:
        return [
            self.strategy, str(self.count), f"{self.mean_ns:.1f}", str(self.median_ns), str(self.p95_ns),
            f"{self.throughput_rps:.3f}", f"{self.mean_s:.6f}", *(str(self.bands[b]) for b in BAND_COLUMNS),
        ]


@dataclass(frozen=True)
class MetricsReport:
    rows: tuple[StrategyStats, ...] = ()

    @property
    def count(self) -> int:
        return sum(r.count for r in self.rows)

    def get(self, strategy: str) -> StrategyStats | None:
        for r in self.rows:
            if r.strategy == strategy:
                return r
        return None

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for r in self.rows:
            w.writerow(r.csv_row())
        return buf.getvalue()


@dataclass(frozen=True)
class RecordedTrace:
    strategy: str
    trace: StageTrace
    final_score: float
    band: QosBand


class _Accumulator:
    def __init__(self, seed: int):
        self.count = 0
        self.total_ns = 0
        self.total_s = 0.0
        self.bands = dict.fromkeys(BAND_COLUMNS, 0)
        self.samples: list[int] = []
        self.rng = random.Random(seed)

    def add(self, latency_ns: int, s: float, band: QosBand) -> None:
        self.count += 1
        self.total_ns += latency_ns
        self.total_s += s
        self.bands[band.label] += 1
        if len(self.samples) < RESERVOIR_SIZE:
            self.samples.append(latency_ns)
        else:
            j = self.rng.randrange(self.count)
            if j < RESERVOIR_SIZE:
                self.samples[j] = latency_ns

    def stats(self, strategy: str) -> StrategyStats:
        ordered = sorted(self.samples)
        seconds = self.total_ns / 1e9
        return StrategyStats(
            strategy=strategy,
            count=self.count,
            mean_ns=self.total_ns / self.count,
            median_ns=nearest_rank(ordered, 50),
            p95_ns=nearest_rank(ordered, 95),
            throughput_rps=self.count / seconds if seconds > 0 else 0.0,
            mean_s=self.total_s / self.count,
            bands=dict(self.bands),
        )


class MetricsCollector:
    """Contention-safe per-strategy accumulator.

    Latency is the sum of a trace's stage latencies. Mean latency, mean S and
    band counts are exact; median and p95 come from a bounded reservoir.
    Throughput is requests per second of summed pipeline time.
    With ``keep_traces`` every recorded trace is retained for later audit.
    """

    def __init__(self, keep_traces: bool = False, seed: int = 0):
        self._lock = threading.Lock()
        self._acc: dict[str, _Accumulator] = {}
        self._seed = seed
        self.keep_traces = keep_traces
        self.traces: list[RecordedTrace] = []

    def record(self, trace: StageTrace, final_score: float, strategy) -> QosBand:
        name = getattr(strategy, "value", strategy)
        band = rate(final_score)
        with self._lock:
            acc = self._acc.get(name)
            if acc is None:
                acc = self._acc[name] = _Accumulator(self._seed)
            acc.add(trace.total_latency_ns, trace.s_aggregate, band)
            if self.keep_traces:
                self.traces.append(RecordedTrace(name, trace, final_score, band))
        return band

    def report(self) -> MetricsReport:
        with self._lock:
            names = sorted(self._acc, key=lambda s: (STRATEGY_ORDER.index(s) if s in STRATEGY_ORDER else 99, s))
            return MetricsReport(tuple(self._acc[n].stats(n) for n in names))


def read_metrics_csv(text: str) -> list[dict[str, str]]:
    """Parse a metrics CSV, checking the header and the band columns."""
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or tuple(rows[0]) != CSV_HEADER:
        raise ValueError("metrics CSV has a missing or unexpected header")
    out = []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != len(CSV_HEADER):
            raise ValueError(f"line {lineno}: expected {len(CSV_HEADER)} columns, got {len(row)}")
        rec = dict(zip(CSV_HEADER, row))
        for col in ("count", *BAND_COLUMNS):
            if not rec[col].isdigit():
                raise ValueError(f"line {lineno}: column {col} is not a non-negative integer: {rec[col]!r}")
        if sum(int(rec[b]) for b in BAND_COLUMNS) != int(rec["count"]):
            raise ValueError(f"line {lineno}: band counts do not sum to count")
        out.append(rec)
    return out


def band_histogram(rows: list[dict[str, str]]) -> list[tuple[str, str, int]]:
    """(strategy, band, count) rows per strategy plus an ``all`` total."""
    totals = dict.fromkeys(BAND_COLUMNS, 0)
    out = []
    for rec in rows:
        for b in BAND_COLUMNS:
            out.append((rec["strategy"], b, int(rec[b])))
            totals[b] += int(rec[b])
    out.extend(("all", b, totals[b]) for b in BAND_COLUMNS)
    return out
