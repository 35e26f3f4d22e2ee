"""Run-artifact persistence: optimized prompts, eval reports, and summaries.

All JSON is written canonically (sorted keys, fixed indentation) so repeated
runs under a fixed seed and replay backend produce byte-identical files apart
from the wall-clock fields listed in VOLATILE_KEYS.
"""

from __future__ import annotations

import json
import time
from pathlib import Path

from .dataset import Exemplar
from .prompts import Prompt
from .report import MethodSummary
from .sqlharness import EvalReport, ItemVerdict, LatencyStats

# Wall-clock-derived fields; excluded when comparing artifacts for determinism.
VOLATILE_KEYS = frozenset({
    "created_at", "gen_wall_time", "qps", "optimization_wall_time",
    "optimization_time", "optimization_time_seconds", "latency",
    "latency_profile",
})


class ArtifactError(Exception):
    """Missing or malformed artifact file."""


def write_json(path, payload: dict) -> None:
    Path(path).write_text(
        json.dumps(payload, indent=2, sort_keys=True, ensure_ascii=False) + "\n",
        encoding="utf-8")


def read_json(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise ArtifactError(f"artifact not found: {path}")
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ArtifactError(f"malformed artifact {path}: {exc}") from exc


def strip_volatile(value):
    """Recursively drop wall-clock-derived keys for artifact comparison."""
    if isinstance(value, dict):
        return {k: strip_volatile(v) for k, v in value.items()
                if k not in VOLATILE_KEYS}
    if isinstance(value, list):
        return [strip_volatile(v) for v in value]
    return value


def _exemplar_dict(ex: Exemplar) -> dict:
    return {
        "question_id": ex.question_id,
        "db_id": ex.db_id,
        "nlq": ex.nlq,
        "evidence": ex.evidence,
        "sql": ex.gold_sql,
        "difficulty": ex.difficulty,
        "schema": ex.schema_text,
    }


def _exemplar_from_dict(data: dict) -> Exemplar:
    return Exemplar(
        question_id=data["question_id"],
        db_id=data["db_id"],
        nlq=data["nlq"],
        evidence=data["evidence"],
        gold_sql=data["sql"],
        difficulty=data.get("difficulty", "unknown"),
        schema_text=data.get("schema", ""),
    )


def prompt_to_dict(prompt: Prompt, est_tokens: int | None = None) -> dict:
    metadata = dict(prompt.metadata)
    if est_tokens is not None:
        metadata["est_tokens"] = est_tokens
    return {
        "instruction": prompt.instruction,
        "exemplars": [_exemplar_dict(ex) for ex in prompt.exemplars],
        "metadata": metadata,
    }


def save_prompt_artifact(path, prompt: Prompt, est_tokens: int | None = None,
                         created_at: float | None = None) -> None:
    payload = prompt_to_dict(prompt, est_tokens)
    payload["created_at"] = time.time() if created_at is None else created_at
    write_json(path, payload)


def load_prompt_artifact(path) -> Prompt:
    data = read_json(path)
    try:
        return Prompt(
            instruction=data["instruction"],
            exemplars=[_exemplar_from_dict(e) for e in data["exemplars"]],
            metadata=dict(data.get("metadata", {})),
        )
    except KeyError as exc:
        raise ArtifactError(f"prompt artifact {path} missing key {exc.args[0]!r}") from exc


def _stats_dict(stats: LatencyStats | None) -> dict | None:
    if stats is None:
        return None
    return {"min": stats.min, "max": stats.max, "mean": stats.mean,
            "stddev": stats.stddev, "runs": stats.runs}


def report_to_dict(report: EvalReport) -> dict:
    return {
        "accuracy": report.accuracy,
        "per_item": [{"question_id": v.question_id, "verdict": v.verdict,
                      "predicted_sql": v.predicted_sql} for v in report.per_item],
        "wrong_examples": [_exemplar_dict(ex) for ex in report.wrong_examples],
        "correct_examples": [_exemplar_dict(ex) for ex in report.correct_examples],
        "latency": _stats_dict(report.latency),
        "gen_wall_time": report.gen_wall_time,
        "qps": report.qps,
        "prompt_tokens": report.prompt_tokens,
    }


def save_report(path, report: EvalReport) -> None:
    write_json(path, report_to_dict(report))


def summary_to_dict(summary: MethodSummary) -> dict:
    return {
        "method": summary.method,
        "accuracy_by_difficulty": summary.accuracy_by_difficulty,
        "total_accuracy": summary.total_accuracy,
        "prompt_tokens": summary.prompt_tokens,
        "optimization_wall_time": summary.optimization_wall_time,
        "latency_profile": _stats_dict(summary.latency_profile),
        "qps": summary.qps,
    }


def summary_from_dict(data: dict) -> MethodSummary:
    profile = data.get("latency_profile")
    return MethodSummary(
        method=data["method"],
        accuracy_by_difficulty=dict(data["accuracy_by_difficulty"]),
        total_accuracy=data["total_accuracy"],
        prompt_tokens=data["prompt_tokens"],
        optimization_wall_time=data.get("optimization_wall_time"),
        latency_profile=(LatencyStats(profile["min"], profile["max"],
                                      profile["mean"], profile["stddev"],
                                      profile["runs"]) if profile else None),
        qps=data.get("qps"),
    )
