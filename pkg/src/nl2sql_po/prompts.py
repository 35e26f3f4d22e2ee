"""Prompt templates, rendering, and parsing of proposed prompts.

All default template text lives here; rendered output is part of the artifact
contract and is pinned by golden files in the test tree.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from .dataset import Exemplar

NL2SQL_INSTRUCTION = ("Given natural language query, schema of the database "
                      "and evidence, generate a sqlite SQL query")

PROPOSER_TEMPLATE = """#Instruction:
You are an expert in assisting another LLM for the task of generating SQL queries from natural language queries. You are given the following information:
1. The best prompt generated so far
2. The accuracy of the best prompt
3. The current prompt
4. The accuracy of the current prompt
5. A set of exemplars where the current prompt incorrectly generated the SQL query
6. A set of exemplars where the current prompt correctly generated the SQL query

#Goal:
Think step by step to generate a prompt comprising of two parts in JSON format:
1. Instruction for the LLM to generate SQL query for sqlite3 database
2. A set of at least {min_exemplars} diverse exemplars to assist the LLM in generating the SQL query.
Respond with a single JSON object with keys "instruction" (string) and "exemplars" (array of objects with keys "nlq", "schema", "evidence", "sql").

#Best Prompt:
{best_prompt}

#Best Accuracy:
{best_accuracy}

#Current Prompt:
{current_prompt}

#Current Prompt Accuracy:
{current_accuracy}

#Wrong Exemplars:
{wrong_examples}

#Correct Exemplars:
{correct_examples}

#Proposed Prompt:
"""

VARIANT_TEMPLATE = """#Instruction:
Given natural query, database schema, corresponding SQL, generate {num_variants} SQL variants.
Generate only valid SQL query without any prefix or suffix:

#Query:
{query}

#Database Schema:
{db_schema}

#Ground Truth SQL:
{sql}

#SQL Variants:

{slots}"""

FORMAT_REMINDER = (
    '\n\nReminder: respond with only a single JSON object with keys "instruction" '
    'and "exemplars"; "exemplars" must contain at least {min_exemplars} entries, '
    'each an object with keys "nlq", "schema", "evidence", "sql".')


class PromptParseError(Exception):
    """A proposed prompt could not be parsed into a structured Prompt."""


@dataclass
class Prompt:
    """An instruction plus an ordered exemplar set; the unit being optimized."""

    instruction: str
    exemplars: list[Exemplar] = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not self.instruction:
            raise PromptParseError("prompt instruction must be non-empty")


@dataclass
class ProposerContext:
    best_prompt: Prompt
    best_accuracy: float
    current_prompt: Prompt
    current_accuracy: float
    wrong_examples: list[Exemplar] = field(default_factory=list)
    correct_examples: list[Exemplar] = field(default_factory=list)

    def __post_init__(self) -> None:
        for name, value in (("best_accuracy", self.best_accuracy),
                            ("current_accuracy", self.current_accuracy)):
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"{name} must be in [0,1], got {value}")


def base_prompt(method: str = "base") -> Prompt:
    return Prompt(NL2SQL_INSTRUCTION, [], {"method": method})


def _exemplar_block(ex: Exemplar) -> str:
    return (f"NLQ: {ex.nlq}\n"
            f"SCHEMA:\n{ex.schema_text}\n"
            f"EVIDENCE: {ex.evidence}\n"
            f"SQL: {ex.gold_sql}")


def render_static(prompt: Prompt) -> str:
    """Instruction and exemplar sections only: the reusable part of the prompt."""
    exemplars = "\n\n".join(_exemplar_block(ex) for ex in prompt.exemplars)
    section = "#Exemplars" + (f"\n{exemplars}" if exemplars else "")
    return f"#Instruction\n{prompt.instruction}\n\n{section}"


def render_nl2sql(prompt: Prompt, query: Exemplar) -> str:
    """Full generation prompt ending in the bare `SQL:` trigger line."""
    query_block = (f"NLQ: {query.nlq}\n"
                   f"SCHEMA:\n{query.schema_text}\n"
                   f"EVIDENCE: {query.evidence}\n"
                   f"SQL:")
    return f"{render_static(prompt)}\n\n#Query\n{query_block}"


def _percent(value: float) -> str:
    return f"{value * 100:.2f}"


def _example_list(examples: list[Exemplar]) -> str:
    return "\n\n".join(_exemplar_block(ex) for ex in examples)


def render_proposer(ctx: ProposerContext, min_exemplars: int = 5) -> str:
    """Fill the proposer template from an optimization context."""
    return PROPOSER_TEMPLATE.format(
        min_exemplars=min_exemplars,
        best_prompt=render_static(ctx.best_prompt),
        best_accuracy=_percent(ctx.best_accuracy),
        current_prompt=render_static(ctx.current_prompt),
        current_accuracy=_percent(ctx.current_accuracy),
        wrong_examples=_example_list(ctx.wrong_examples),
        correct_examples=_example_list(ctx.correct_examples),
    )


def build_proposer_context(best_prompt: Prompt, best_accuracy: float,
                           current_prompt: Prompt, current_accuracy: float,
                           wrong_examples=(), correct_examples=(),
                           max_wrong: int = 10, max_correct: int = 5) -> ProposerContext:
    """Cap feedback lists in stable first-seen order before rendering."""
    return ProposerContext(
        best_prompt=best_prompt,
        best_accuracy=best_accuracy,
        current_prompt=current_prompt,
        current_accuracy=current_accuracy,
        wrong_examples=list(wrong_examples)[:max_wrong],
        correct_examples=list(correct_examples)[:max_correct],
    )


def _strip_fences(text: str) -> str:
    body = text.strip()
    if body.startswith("```"):
        lines = body.splitlines()
        lines = lines[1:]
        if lines and lines[-1].strip() == "```":
            lines = lines[:-1]
        body = "\n".join(lines)
    return body.strip()


def parse_proposal(text: str) -> Prompt:
    """Parse a proposer response into a Prompt.

    Accepts an optionally fenced JSON object {"instruction": str,
    "exemplars": [{nlq, schema, evidence, sql}, ...]}. Exemplar schema text is
    taken verbatim, so schemas the proposer pruned stay pruned. An empty
    exemplar array is a valid zero-shot proposal; an empty instruction is not.
    """
    body = _strip_fences(text)
    try:
        data = json.loads(body)
    except json.JSONDecodeError as exc:
        raise PromptParseError(f"proposal is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise PromptParseError("proposal JSON must be an object")
    for key in ("instruction", "exemplars"):
        if key not in data:
            raise PromptParseError(f"proposal JSON missing key {key!r}")
    instruction = data["instruction"]
    if not isinstance(instruction, str) or not instruction.strip():
        raise PromptParseError("proposal instruction must be a non-empty string")
    raw_exemplars = data["exemplars"]
    if not isinstance(raw_exemplars, list):
        raise PromptParseError("proposal exemplars must be an array")
    exemplars: list[Exemplar] = []
    for i, entry in enumerate(raw_exemplars):
        if not isinstance(entry, dict):
            raise PromptParseError(f"exemplar {i}: not an object")
        for key in ("nlq", "schema", "evidence", "sql"):
            if key not in entry:
                raise PromptParseError(f"exemplar {i}: missing key {key!r}")
        if not entry["nlq"] or not entry["sql"]:
            raise PromptParseError(f"exemplar {i}: nlq and sql must be non-empty")
        exemplars.append(Exemplar(
            question_id=f"proposed-{i + 1}",
            db_id="proposed",
            nlq=str(entry["nlq"]),
            evidence=str(entry["evidence"]),
            gold_sql=str(entry["sql"]),
            difficulty="unknown",
            schema_text=str(entry["schema"]),
        ))
    return Prompt(instruction.strip(), exemplars, {"method": "ipo"})


def proposal_json(prompt: Prompt) -> str:
    """Serialize a prompt in the proposal JSON shape (inverse of parse_proposal)."""
    return json.dumps({
        "instruction": prompt.instruction,
        "exemplars": [{"nlq": ex.nlq, "schema": ex.schema_text,
                       "evidence": ex.evidence, "sql": ex.gold_sql}
                      for ex in prompt.exemplars],
    }, indent=2, ensure_ascii=False)


def render_variant_request(nlq: str, schema_text: str, gold_sql: str,
                           num_variants: int) -> str:
    """Fill the variant-generator template with numbered answer slots."""
    if num_variants < 1:
        raise ValueError(f"num_variants must be ≥ 1, got {num_variants}")
    slots = "\n\n".join(f"{i}." for i in range(1, num_variants + 1))
    return VARIANT_TEMPLATE.format(num_variants=num_variants, query=nlq,
                                   db_schema=schema_text, sql=gold_sql, slots=slots)
