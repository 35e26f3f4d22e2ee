"""Aggregate evaluation results into the three standard table shapes.

Every table renders both as fixed-width text (best value per column bolded
with ``**``) and as a JSON-safe dict carrying the same rounded numbers.
"""

from __future__ import annotations

from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal

from .dataset import Corpus
from .sqlharness import EvalReport, LatencyStats

ACCURACY_BUCKETS = ("simple", "moderate", "challenging")


class ReportError(Exception):
    """Raised for empty or inconsistent report inputs."""


def round_percent(value: float) -> float:
    """Half-up rounding to 2 decimals, e.g. 59.235 → 59.24."""
    return float(Decimal(repr(value)).quantize(Decimal("0.01"),
                                               rounding=ROUND_HALF_UP))


def format_duration(seconds: float) -> str:
    """Render seconds as XmYs (326 → 5m26s)."""
    total = int(round(seconds))
    return f"{total // 60}m{total % 60}s"


def format_seconds(value: float) -> float:
    """Latency cell value: 4 significant digits."""
    return float(f"{value:.4g}")


@dataclass
class MethodSummary:
    method: str
    accuracy_by_difficulty: dict[str, float | None]
    total_accuracy: float
    prompt_tokens: int
    optimization_wall_time: float | None = None
    latency_profile: LatencyStats | None = None
    qps: float | None = None


def method_summary(method: str, report: EvalReport, corpus: Corpus,
                   optimization_wall_time: float | None = None) -> MethodSummary:
    """Build a summary from raw verdicts, bucketing accuracy by difficulty."""
    difficulty_of = {ex.question_id: ex.difficulty for ex in corpus}
    tallies = {bucket: [0, 0] for bucket in ACCURACY_BUCKETS}
    for verdict in report.per_item:
        bucket = difficulty_of.get(verdict.question_id, "unknown")
        if bucket in tallies:
            tallies[bucket][0] += int(verdict.verdict)
            tallies[bucket][1] += 1
    by_difficulty = {
        bucket: (round_percent(100.0 * hits / total) if total else None)
        for bucket, (hits, total) in tallies.items()
    }
    return MethodSummary(
        method=method,
        accuracy_by_difficulty=by_difficulty,
        total_accuracy=round_percent(100.0 * report.accuracy),
        prompt_tokens=report.prompt_tokens,
        optimization_wall_time=optimization_wall_time,
        latency_profile=report.latency,
        qps=round(report.qps, 2) if report.qps else None,
    )


def _render_rows(headers: list[str], rows: list[list[str]],
                 bold_cols: set[int] | None = None) -> str:
    if bold_cols:
        for col in bold_cols:
            values = []
            for row in rows:
                try:
                    values.append(float(row[col]))
                except ValueError:
                    values.append(float("-inf"))
            if values and max(values) > float("-inf"):
                best = max(values)
                for row, value in zip(rows, values):
                    if value == best:
                        row[col] = f"**{row[col]}**"
    widths = [max(len(headers[i]), *(len(r[i]) for r in rows)) if rows
              else len(headers[i]) for i in range(len(headers))]
    lines = ["  ".join(h.ljust(widths[i]) for i, h in enumerate(headers)).rstrip()]
    lines.append("  ".join("-" * w for w in widths))
    for row in rows:
        lines.append("  ".join(c.ljust(widths[i]) for i, c in enumerate(row)).rstrip())
    return "\n".join(lines)


def accuracy_table(summaries: list[MethodSummary]) -> tuple[str, dict]:
    """Per-method execution accuracy by difficulty bucket plus the total."""
    if not summaries:
        raise ReportError("accuracy_table needs at least one summary")
    headers = ["Approach", "Simple", "Moderate", "Challenging", "Total"]
    rows = []
    json_rows = []
    for s in summaries:
        cells = [s.method]
        entry: dict = {"method": s.method}
        for bucket in ACCURACY_BUCKETS:
            value = s.accuracy_by_difficulty.get(bucket)
            cells.append("-" if value is None else f"{value:.2f}")
            entry[bucket] = value
        cells.append(f"{s.total_accuracy:.2f}")
        entry["total"] = s.total_accuracy
        rows.append(cells)
        json_rows.append(entry)
    text = _render_rows(headers, rows, bold_cols={1, 2, 3, 4})
    return text, {"table": "accuracy", "rows": json_rows}


def cost_table(summaries: list[MethodSummary]) -> tuple[str, dict]:
    """Prompt length in estimated tokens and optimization wall time."""
    if not summaries:
        raise ReportError("cost_table needs at least one summary")
    headers = ["Approach", "Prompt Length (#tokens)", "Optimization Time"]
    rows = []
    json_rows = []
    for s in summaries:
        wall = s.optimization_wall_time
        rows.append([s.method, f"{s.prompt_tokens:,}",
                     "-" if wall is None else format_duration(wall)])
        json_rows.append({
            "method": s.method,
            "prompt_tokens": s.prompt_tokens,
            "optimization_time": None if wall is None else format_duration(wall),
            "optimization_time_seconds": None if wall is None else round(wall, 3),
        })
    return _render_rows(headers, rows), {"table": "cost", "rows": json_rows}


def latency_table(gt: LatencyStats,
                  runs: list[tuple[str, EvalReport]]) -> tuple[str, dict]:
    """Latency distribution per run next to the ground-truth profile."""
    headers = ["Approach", "Min", "Max", "σ", "μ", "Acc.(Ex)", "Gen. Time QPS"]

    def stat_cells(stats: LatencyStats) -> list[str]:
        return [str(format_seconds(stats.min)), str(format_seconds(stats.max)),
                str(format_seconds(stats.stddev)), str(format_seconds(stats.mean))]

    rows = [["GT", *stat_cells(gt), "-", "-"]]
    json_rows = [{"name": "GT", "min": format_seconds(gt.min),
                  "max": format_seconds(gt.max),
                  "stddev": format_seconds(gt.stddev),
                  "mean": format_seconds(gt.mean), "accuracy": None, "qps": None}]
    for name, report in runs:
        if report.latency is None:
            raise ReportError(f"run {name!r} has no latency stats")
        accuracy = round_percent(100.0 * report.accuracy)
        qps = round(report.qps, 2)
        rows.append([name, *stat_cells(report.latency), f"{accuracy:.2f}",
                     f"{qps:.2f}"])
        json_rows.append({"name": name, "min": format_seconds(report.latency.min),
                          "max": format_seconds(report.latency.max),
                          "stddev": format_seconds(report.latency.stddev),
                          "mean": format_seconds(report.latency.mean),
                          "accuracy": accuracy, "qps": qps})
    return _render_rows(headers, rows), {"table": "latency", "rows": json_rows}
