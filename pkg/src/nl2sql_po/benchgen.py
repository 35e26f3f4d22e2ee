"""Augmented-benchmark builder: per NLQ, generate, validate, and time SQL variants.

Candidates survive only if they execute cleanly and return the gold result;
survivors and the gold statement are timed with the same harness used for
evaluation, so the benchmark can never disagree with its evaluator.
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path

from . import prompts
from .dataset import Corpus, Exemplar
from .llmclient import DEFAULT_SQL_TEMPERATURE
from .sqlharness import (HarnessError, LatencyStats, execute, execution_match,
                         measure_latency)

logger = logging.getLogger(__name__)

DEFAULT_NUM_VARIANTS = 2

_NUMBERED_RE = re.compile(r"^\s*(\d+)[.)]\s*(.*)$")


class BenchgenError(Exception):
    """Unusable generator output or a gold statement that does not execute."""


@dataclass(frozen=True)
class TimingConfig:
    warmups: int = 1
    repeats: int = 3
    timeout: float = 30.0


@dataclass(frozen=True)
class VariantEntry:
    sql: str
    latency: LatencyStats
    matches_gold: bool = True


@dataclass(frozen=True)
class MultiVariantRecord:
    question_id: str
    db_id: str
    nlq: str
    evidence: str
    variants: tuple[VariantEntry, ...]
    gold_sql: str
    gold_latency: LatencyStats

    def __post_init__(self) -> None:
        if not self.variants:
            raise BenchgenError(f"record {self.question_id}: needs ≥ 1 variant")
        if any(not v.matches_gold for v in self.variants):
            raise BenchgenError(f"record {self.question_id}: non-matching variant")
        normalized = [normalize_sql(v.sql) for v in self.variants]
        if len(set(normalized)) != len(normalized):
            raise BenchgenError(f"record {self.question_id}: duplicate variants")


@dataclass(frozen=True)
class RejectionEntry:
    question_id: str
    sql: str
    reason: str  # sql_error | timeout | result_mismatch | duplicate | duplicate_of_gold | no_survivors
    kept: bool = False
    detail: str = ""


def normalize_sql(sql: str) -> str:
    """Whitespace-insensitive form used for duplicate detection."""
    return re.sub(r"\s+", " ", sql).strip()


def parse_numbered_sql(text: str, limit: int) -> list[str]:
    """Extract up to `limit` statements from a numbered list, tolerating
    multi-line entries and missing trailing slots."""
    entries: list[str] = []
    current: list[str] | None = None
    for line in text.splitlines():
        m = _NUMBERED_RE.match(line)
        if m:
            if current is not None and "".join(current).strip():
                entries.append("\n".join(current).strip())
            current = [m.group(2)]
        elif current is not None:
            current.append(line)
    if current is not None and "".join(current).strip():
        entries.append("\n".join(current).strip())
    return entries[:limit]


def generate_variants(llm, exemplar: Exemplar, n: int) -> list[str]:
    """Ask the LLM for n SQL variants of one exemplar's gold statement."""
    if n < 1:
        raise BenchgenError(f"n must be ≥ 1, got {n}")
    rendered = prompts.render_variant_request(exemplar.nlq, exemplar.schema_text,
                                              exemplar.gold_sql, n)
    result = llm.complete_text(rendered, temperature=DEFAULT_SQL_TEMPERATURE,
                               max_output_tokens=2048, tag="variant-gen")
    candidates = parse_numbered_sql(result.text, n)
    if not candidates:
        raise BenchgenError(
            f"{exemplar.question_id}: no parseable variants in model output")
    if len(candidates) < n:
        logger.warning("%s: asked for %d variants, parsed %d",
                       exemplar.question_id, n, len(candidates))
    return candidates


def augment(corpus: Corpus, llm, n_variants: int = DEFAULT_NUM_VARIANTS,
            timing: TimingConfig | None = None,
            done_ids: set[str] | None = None,
            ) -> tuple[list[MultiVariantRecord], list[RejectionEntry]]:
    """Build validated multi-variant records for every corpus item.

    Items listed in `done_ids` are skipped (resume support). Per-item failures
    are never fatal: items with zero surviving variants are logged and skipped.
    """
    timing = timing or TimingConfig()
    records: list[MultiVariantRecord] = []
    rejections: list[RejectionEntry] = []
    for item in corpus:
        if done_ids and item.question_id in done_ids:
            continue
        record = _augment_item(item, corpus.db_path(item.db_id), llm, n_variants,
                               timing, rejections)
        if record is not None:
            records.append(record)
    return records, rejections


def _augment_item(item: Exemplar, db_path, llm, n_variants: int,
                  timing: TimingConfig,
                  rejections: list[RejectionEntry]) -> MultiVariantRecord | None:
    gold_outcome = execute(db_path, item.gold_sql, timing.timeout)
    if gold_outcome.status != "ok":
        raise BenchgenError(f"{item.question_id}: gold SQL does not execute "
                            f"({gold_outcome.message})")
    try:
        candidates = generate_variants(llm, item, n_variants)
    except BenchgenError as exc:
        logger.warning("%s: %s", item.question_id, exc)
        rejections.append(RejectionEntry(item.question_id, "", "no_survivors",
                                         detail=str(exc)))
        return None

    gold_norm = normalize_sql(item.gold_sql)
    seen: set[str] = set()
    survivors: list[str] = []
    for sql in candidates:
        norm = normalize_sql(sql)
        if norm in seen:
            rejections.append(RejectionEntry(item.question_id, sql, "duplicate"))
            continue
        seen.add(norm)
        outcome = execute(db_path, sql, timing.timeout)
        if outcome.status == "timeout":
            rejections.append(RejectionEntry(item.question_id, sql, "timeout",
                                             detail=outcome.message or ""))
            continue
        if outcome.status == "sql_error":
            rejections.append(RejectionEntry(item.question_id, sql, "sql_error",
                                             detail=outcome.message or ""))
            continue
        if not execution_match(outcome.result, gold_outcome.result):
            rejections.append(RejectionEntry(item.question_id, sql,
                                             "result_mismatch"))
            continue
        if norm == gold_norm:
            # Kept, but the log notes it adds nothing over the gold statement.
            rejections.append(RejectionEntry(item.question_id, sql,
                                             "duplicate_of_gold", kept=True))
        survivors.append(sql)

    if not survivors:
        logger.warning("%s: no surviving variants", item.question_id)
        rejections.append(RejectionEntry(item.question_id, "", "no_survivors"))
        return None

    try:
        entries = tuple(
            VariantEntry(sql, measure_latency(db_path, sql, timing.warmups,
                                              timing.repeats, timing.timeout))
            for sql in survivors)
        gold_latency = measure_latency(db_path, item.gold_sql, timing.warmups,
                                       timing.repeats, timing.timeout)
    except HarnessError as exc:
        logger.warning("%s: timing failed (%s)", item.question_id, exc)
        rejections.append(RejectionEntry(item.question_id, "", "timeout",
                                         detail=f"timing failed: {exc}"))
        return None
    return MultiVariantRecord(
        question_id=item.question_id,
        db_id=item.db_id,
        nlq=item.nlq,
        evidence=item.evidence,
        variants=entries,
        gold_sql=item.gold_sql,
        gold_latency=gold_latency,
    )


def _stats_dict(stats: LatencyStats) -> dict:
    return {"min": stats.min, "max": stats.max, "mean": stats.mean,
            "stddev": stats.stddev, "runs": stats.runs}


def _stats_from_dict(data: dict) -> LatencyStats:
    return LatencyStats(data["min"], data["max"], data["mean"], data["stddev"],
                        data["runs"])


def record_to_json(record: MultiVariantRecord) -> str:
    return json.dumps({
        "question_id": record.question_id,
        "db_id": record.db_id,
        "nlq": record.nlq,
        "evidence": record.evidence,
        "variants": [{"sql": v.sql, "latency": _stats_dict(v.latency),
                      "matches_gold": v.matches_gold} for v in record.variants],
        "gold_sql": record.gold_sql,
        "gold_latency": _stats_dict(record.gold_latency),
    }, sort_keys=True, ensure_ascii=False)


def record_from_json(line: str) -> MultiVariantRecord:
    data = json.loads(line)
    return MultiVariantRecord(
        question_id=data["question_id"],
        db_id=data["db_id"],
        nlq=data["nlq"],
        evidence=data["evidence"],
        variants=tuple(VariantEntry(v["sql"], _stats_from_dict(v["latency"]),
                                    v["matches_gold"]) for v in data["variants"]),
        gold_sql=data["gold_sql"],
        gold_latency=_stats_from_dict(data["gold_latency"]),
    )


def augment_to_files(corpus: Corpus, llm, out_path, log_path=None,
                     progress_path=None, n_variants: int = DEFAULT_NUM_VARIANTS,
                     timing: TimingConfig | None = None) -> tuple[int, int]:
    """Streaming augmentation with JSONL output and a resumable progress manifest."""
    out_path = Path(out_path)
    done: set[str] = set()
    if progress_path and Path(progress_path).is_file():
        done = set(json.loads(Path(progress_path).read_text(encoding="utf-8")))
        logger.info("resuming: %d items already processed", len(done))

    records, rejections = augment(corpus, llm, n_variants, timing, done_ids=done)

    with out_path.open("a", encoding="utf-8") as fh:
        for record in records:
            fh.write(record_to_json(record) + "\n")
    if log_path:
        with Path(log_path).open("a", encoding="utf-8") as fh:
            for entry in rejections:
                fh.write(json.dumps({
                    "question_id": entry.question_id, "sql": entry.sql,
                    "reason": entry.reason, "kept": entry.kept,
                    "detail": entry.detail,
                }, sort_keys=True, ensure_ascii=False) + "\n")
    if progress_path:
        done.update(item.question_id for item in corpus)
        Path(progress_path).write_text(json.dumps(sorted(done)), encoding="utf-8")
    return len(records), len(rejections)
