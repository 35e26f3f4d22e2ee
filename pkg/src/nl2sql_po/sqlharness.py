"""SQLite execution with timeouts, execution-accuracy matching, and latency stats.

Databases are always opened read-only. Result comparison treats a table as an
unordered multiset of rows; numbers cross-compare (integer vs real) with an
absolute tolerance of 1e-6, text and blobs compare byte-exact, and column order
within a row is significant.
"""

from __future__ import annotations

import logging
import math
import sqlite3
import statistics
import time
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from . import prompts
from .dataset import Corpus, Exemplar
from .llmclient import DEFAULT_SQL_TEMPERATURE

logger = logging.getLogger(__name__)

NUMERIC_ABS_TOL = 1e-6
DEFAULT_TIMEOUT = 30.0

# VM instructions between timeout checks; small enough to cancel promptly.
_PROGRESS_OPCODES = 200


class HarnessError(Exception):
    """Raised for misuse of the harness or unmeasurable statements."""


@dataclass(frozen=True)
class ResultTable:
    """Materialized query result: a multiset of rows."""

    rows: tuple[tuple, ...]
    column_count: int


@dataclass(frozen=True)
class LatencyStats:
    min: float
    max: float
    mean: float
    stddev: float
    runs: int

    def __post_init__(self) -> None:
        if self.runs < 1:
            raise HarnessError(f"runs must be ≥ 1, got {self.runs}")
        if not (self.min <= self.mean <= self.max) or self.stddev < 0:
            raise HarnessError(
                f"inconsistent latency stats: min={self.min} mean={self.mean} "
                f"max={self.max} stddev={self.stddev}")


@dataclass(frozen=True)
class ExecOutcome:
    status: str  # ok | sql_error | timeout
    result: ResultTable | None
    elapsed: float
    message: str | None = None


def _connect_ro(db_path) -> sqlite3.Connection:
    return sqlite3.connect(f"file:{Path(db_path)}?mode=ro", uri=True)


def _run_statement(conn: sqlite3.Connection, sql: str,
                   timeout: float) -> tuple[ResultTable, float]:
    """Execute one statement, enforcing the deadline via a progress handler."""
    start = time.perf_counter()
    deadline = start + timeout
    state = {"timed_out": False}

    def guard() -> int:
        if time.perf_counter() > deadline:
            state["timed_out"] = True
            return 1
        return 0

    conn.set_progress_handler(guard, _PROGRESS_OPCODES)
    try:
        cursor = conn.execute(sql)
        rows = tuple(tuple(row) for row in cursor.fetchall())
        elapsed = time.perf_counter() - start
        ncols = len(cursor.description) if cursor.description else 0
        return ResultTable(rows, ncols), elapsed
    except (sqlite3.Error, sqlite3.Warning) as exc:
        elapsed = time.perf_counter() - start
        if state["timed_out"]:
            raise _Timeout(elapsed, timeout) from exc
        raise _SqlError(elapsed, str(exc)) from exc
    finally:
        conn.set_progress_handler(None, 0)


class _Timeout(Exception):
    def __init__(self, elapsed: float, timeout: float):
        super().__init__(f"statement timed out after {timeout}s")
        self.elapsed = elapsed


class _SqlError(Exception):
    def __init__(self, elapsed: float, message: str):
        super().__init__(message)
        self.elapsed = elapsed


def execute(db_path, sql: str, timeout: float = DEFAULT_TIMEOUT) -> ExecOutcome:
    """Run one statement read-only; failures are encoded in the outcome, not raised."""
    try:
        conn = _connect_ro(db_path)
    except sqlite3.Error as exc:
        return ExecOutcome("sql_error", None, 0.0, f"cannot open {db_path}: {exc}")
    try:
        table, elapsed = _run_statement(conn, sql, timeout)
        return ExecOutcome("ok", table, elapsed)
    except _Timeout as exc:
        return ExecOutcome("timeout", None, exc.elapsed, str(exc))
    except _SqlError as exc:
        return ExecOutcome("sql_error", None, exc.elapsed, str(exc))
    finally:
        conn.close()


def _is_number(value) -> bool:
    return isinstance(value, (int, float)) and not isinstance(value, bool)


def _values_equal(a, b) -> bool:
    if a is None or b is None:
        return a is None and b is None
    if _is_number(a) and _is_number(b):
        return abs(a - b) <= NUMERIC_ABS_TOL
    if type(a) is not type(b):
        return False
    return a == b


def _rows_equal(left: tuple, right: tuple) -> bool:
    return len(left) == len(right) and all(
        _values_equal(a, b) for a, b in zip(left, right))


def _perfect_matching(pred_rows, gold_rows) -> bool:
    """Augmenting-path bipartite matching under tolerant row equality."""
    match_of_gold: dict[int, int] = {}

    def try_assign(p: int, visited: set[int]) -> bool:
        for g, gold_row in enumerate(gold_rows):
            if g in visited or not _rows_equal(pred_rows[p], gold_row):
                continue
            visited.add(g)
            if g not in match_of_gold or try_assign(match_of_gold[g], visited):
                match_of_gold[g] = p
                return True
        return False

    return all(try_assign(p, set()) for p in range(len(pred_rows)))


def execution_match(pred: ResultTable, gold: ResultTable) -> bool:
    """True iff the two row multisets are equal under value normalization."""
    if len(pred.rows) != len(gold.rows):
        return False
    if not pred.rows:
        return True
    # Fast path: exact multiset equality (covers the common identical case;
    # Python hashes 1 and 1.0 identically, so integer/real pairs still match).
    if Counter(pred.rows) == Counter(gold.rows):
        return True
    return _perfect_matching(pred.rows, gold.rows)


def _stats_from_samples(samples: list[float]) -> LatencyStats:
    return LatencyStats(
        min=min(samples),
        max=max(samples),
        mean=statistics.fmean(samples),
        stddev=statistics.pstdev(samples),
        runs=len(samples),
    )


def measure_latency(db_path, sql: str, warmups: int = 1, repeats: int = 3,
                    timeout: float = DEFAULT_TIMEOUT) -> LatencyStats:
    """Time a statement on a dedicated connection: warmups, then recorded runs."""
    if repeats < 1:
        raise HarnessError(f"repeats must be ≥ 1, got {repeats}")
    try:
        conn = _connect_ro(db_path)
    except sqlite3.Error as exc:
        raise HarnessError(f"cannot open {db_path}: {exc}") from exc
    samples: list[float] = []
    try:
        for run in range(warmups + repeats):
            try:
                _, elapsed = _run_statement(conn, sql, timeout)
            except (_Timeout, _SqlError) as exc:
                raise HarnessError(f"latency run {run} failed: {exc}") from exc
            if run >= warmups:
                samples.append(elapsed)
    finally:
        conn.close()
    return _stats_from_samples(samples)


def pool_stats(stats: list[LatencyStats]) -> LatencyStats:
    """Pool per-query stats as if all recorded samples were one population."""
    if not stats:
        raise HarnessError("cannot pool an empty stats list")
    total = sum(s.runs for s in stats)
    mean = sum(s.runs * s.mean for s in stats) / total
    second_moment = sum(s.runs * (s.stddev ** 2 + s.mean ** 2) for s in stats) / total
    variance = max(0.0, second_moment - mean ** 2)
    return LatencyStats(
        min=min(s.min for s in stats),
        max=max(s.max for s in stats),
        mean=mean,
        stddev=math.sqrt(variance),
        runs=total,
    )


def extract_sql(text: str) -> str:
    """Peel model decoration off a prediction: code fences and a leading SQL: label."""
    body = text.strip()
    if body.startswith("```"):
        lines = body.splitlines()
        lines = lines[1:]
        if lines and lines[-1].strip() == "```":
            lines = lines[:-1]
        body = "\n".join(lines).strip()
    if body[:4].lower() == "sql:":
        body = body[4:].strip()
    return body


@dataclass(frozen=True)
class ScoreOptions:
    timeout: float = DEFAULT_TIMEOUT
    with_latency: bool = False
    latency_warmups: int = 1
    latency_repeats: int = 3
    latency_cap: float = 10.0
    max_workers: int = 1
    max_output_tokens: int = 1024


@dataclass(frozen=True)
class ItemVerdict:
    question_id: str
    verdict: bool
    predicted_sql: str


@dataclass
class EvalReport:
    """Outcome of scoring one prompt on one dataset."""

    accuracy: float
    per_item: list[ItemVerdict]
    wrong_examples: list[Exemplar]
    correct_examples: list[Exemplar]
    latency: LatencyStats | None
    gen_wall_time: float
    qps: float
    prompt_tokens: int


def score_prompt(llm, prompt: prompts.Prompt, eval_set: Corpus,
                 options: ScoreOptions | None = None) -> EvalReport:
    """Generate and execute SQL for every eval item; verdicts by execution match.

    When latency scoring is enabled, correct predictions are timed with the
    configured warmup/repeat schedule and every incorrect (or unmeasurable)
    prediction contributes `latency_cap` samples instead, so wrong-but-fast
    SQL cannot win on latency.
    """
    options = options or ScoreOptions()
    if len(eval_set) == 0:
        raise HarnessError("eval_set is empty")

    start = time.perf_counter()

    def eval_item(item: Exemplar):
        rendered = prompts.render_nl2sql(prompt, item)
        result = llm.complete_text(rendered, temperature=DEFAULT_SQL_TEMPERATURE,
                                   max_output_tokens=options.max_output_tokens,
                                   tag="nl2sql")
        predicted = extract_sql(result.text)
        db_path = eval_set.db_path(item.db_id)
        pred_outcome = execute(db_path, predicted, options.timeout)
        gold_outcome = execute(db_path, item.gold_sql, options.timeout)
        if gold_outcome.status != "ok":
            logger.warning("gold SQL failed for %s: %s", item.question_id,
                           gold_outcome.message)
        verdict = (pred_outcome.status == "ok" and gold_outcome.status == "ok"
                   and execution_match(pred_outcome.result, gold_outcome.result))
        return ItemVerdict(item.question_id, verdict, predicted), pred_outcome.status

    items = list(eval_set.items)
    if options.max_workers > 1:
        with ThreadPoolExecutor(max_workers=options.max_workers) as pool:
            outcomes = list(pool.map(eval_item, items))
    else:
        outcomes = [eval_item(item) for item in items]

    gen_wall_time = time.perf_counter() - start
    verdicts = [v for v, _ in outcomes]
    correct = [item for item, (v, _) in zip(items, outcomes) if v.verdict]
    wrong = [item for item, (v, _) in zip(items, outcomes) if not v.verdict]

    latency = None
    if options.with_latency:
        # Serialized timing pass; never overlaps other harness work.
        cap = LatencyStats(options.latency_cap, options.latency_cap,
                           options.latency_cap, 0.0, options.latency_repeats)
        per_query: list[LatencyStats] = []
        for item, (verdict, pred_status) in zip(items, outcomes):
            stats = cap
            if verdict.verdict and pred_status == "ok":
                try:
                    stats = measure_latency(
                        eval_set.db_path(item.db_id), verdict.predicted_sql,
                        warmups=options.latency_warmups,
                        repeats=options.latency_repeats,
                        timeout=options.timeout)
                except HarnessError as exc:
                    logger.warning("latency measurement failed for %s: %s",
                                   item.question_id, exc)
            per_query.append(stats)
        latency = pool_stats(per_query)

    return EvalReport(
        accuracy=len(correct) / len(items),
        per_item=verdicts,
        wrong_examples=wrong,
        correct_examples=correct,
        latency=latency,
        gen_wall_time=gen_wall_time,
        qps=len(items) / gen_wall_time if gen_wall_time > 0 else 0.0,
        prompt_tokens=llm.estimate_tokens(prompts.render_static(prompt)),
    )
