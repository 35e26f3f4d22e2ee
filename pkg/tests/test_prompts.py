from __future__ import annotations

import json
import random

import pytest

from conftest import (FIG3_EXEMPLAR, FIG3_SCHEMA, GOLDEN_CORRECT, GOLDEN_DIR,
                      GOLDEN_EXEMPLAR_2, GOLDEN_QUERY, GOLDEN_WRONG)
from nl2sql_po.dataset import Exemplar
from nl2sql_po.llmclient import estimate_tokens
from nl2sql_po.prompts import (NL2SQL_INSTRUCTION, Prompt, PromptParseError,
                               ProposerContext, build_proposer_context,
                               parse_proposal, proposal_json, render_nl2sql,
                               render_proposer, render_static,
                               render_variant_request)

# Rendered form of the reference exemplar used as a proposal payload.
PROPOSAL_EXAMPLE = json.dumps({
    "instruction": ("Given a natural language query (NLQ), the schema of the "
                    "database, and relevant evidence, generate a valid SQLite "
                    "SQL query that satisfies the NLQ. Use the provided schema "
                    "and evidence to ensure the SQL query correctly answers "
                    "the NLQ. Only utilize relevant columns and tables in the "
                    "query. Return only the SQL query without any prefixes or "
                    "block quotes."),
    "exemplars": [{
        "nlq": "List all the films that are rated as PG-13.",
        "schema": FIG3_SCHEMA,
        "evidence": ("film refers to title; rated as PG-13 refers to "
                     "rating = 'PG-13'."),
        "sql": "SELECT title FROM film WHERE rating = 'PG-13';",
    }],
})


def _random_exemplar(rng: random.Random, i: int) -> Exemplar:
    return Exemplar(
        question_id=f"r{i}",
        db_id="movie_3",
        nlq=f"question {rng.randint(0, 10**6)}",
        evidence=rng.choice(["", "some hint"]),
        gold_sql=f"SELECT {rng.randint(0, 99)} FROM film",
        schema_text=FIG3_SCHEMA,
    )


class TestRenderNl2sql:
    def test_zero_exemplars_section_present(self):
        text = render_nl2sql(Prompt("do the thing", []), GOLDEN_QUERY)
        assert "#Exemplars\n\n#Query" in text
        assert text.index("#Instruction") < text.index("#Exemplars") \
            < text.index("#Query")

    def test_fig3_exemplar_sql_line(self):
        text = render_nl2sql(Prompt(NL2SQL_INSTRUCTION, [FIG3_EXEMPLAR]),
                             GOLDEN_QUERY)
        assert "SQL: SELECT title FROM film WHERE rating = 'PG-13';" in text

    def test_golden_two_exemplars(self):
        text = render_nl2sql(
            Prompt(NL2SQL_INSTRUCTION, [FIG3_EXEMPLAR, GOLDEN_EXEMPLAR_2]),
            GOLDEN_QUERY)
        golden = (GOLDEN_DIR / "nl2sql_two_exemplars.txt").read_text("utf-8")
        assert text == golden

    def test_ends_with_trigger(self):
        text = render_nl2sql(Prompt("x", [FIG3_EXEMPLAR]), GOLDEN_QUERY)
        assert text.endswith("SQL:")

    def test_injective_on_instruction_and_exemplars(self):
        rng = random.Random(31)
        seen = {}
        for i in range(150):
            exemplars = [_random_exemplar(rng, j)
                         for j in range(rng.randint(0, 3))]
            prompt = Prompt(f"instruction {rng.randint(0, 10**6)}", exemplars)
            key = (prompt.instruction,
                   tuple((e.nlq, e.gold_sql) for e in exemplars))
            text = render_nl2sql(prompt, GOLDEN_QUERY)
            if key in seen:
                assert seen[key] == text
            else:
                assert text not in seen.values()
                seen[key] = text

    def test_token_length_strictly_increasing_in_exemplars(self):
        rng = random.Random(17)
        exemplars = [_random_exemplar(rng, i) for i in range(6)]
        lengths = [
            estimate_tokens(render_nl2sql(Prompt("instr", exemplars[:n]),
                                          GOLDEN_QUERY))
            for n in range(len(exemplars) + 1)
        ]
        assert all(a < b for a, b in zip(lengths, lengths[1:]))


class TestRenderProposer:
    def test_first_iteration_base_prompt(self):
        base = Prompt(NL2SQL_INSTRUCTION, [])
        ctx = ProposerContext(base, 0.0, base, 0.0)
        text = render_proposer(ctx)
        assert "#Best Accuracy:\n0.00" in text
        assert "#Current Prompt Accuracy:\n0.00" in text
        assert text.count(NL2SQL_INSTRUCTION) == 2  # best and current sections

    def test_golden_context(self):
        ctx = ProposerContext(
            Prompt(NL2SQL_INSTRUCTION, [FIG3_EXEMPLAR]), 0.5924,
            Prompt(NL2SQL_INSTRUCTION, [GOLDEN_EXEMPLAR_2]), 0.415,
            wrong_examples=GOLDEN_WRONG, correct_examples=GOLDEN_CORRECT)
        golden = (GOLDEN_DIR / "proposer_context.txt").read_text("utf-8")
        assert render_proposer(ctx) == golden

    def test_accuracy_rendered_as_percent(self):
        base = Prompt("i", [])
        ctx = ProposerContext(base, 0.5924, base, 0.5924)
        assert "59.24" in render_proposer(ctx)

    def test_all_wrong_and_correct_serialized(self):
        base = Prompt("i", [])
        ctx = ProposerContext(base, 0.0, base, 0.0,
                              wrong_examples=GOLDEN_WRONG,
                              correct_examples=GOLDEN_CORRECT)
        text = render_proposer(ctx)
        for ex in GOLDEN_WRONG + GOLDEN_CORRECT:
            assert ex.nlq in text

    def test_caps_applied_in_stable_order(self):
        rng = random.Random(3)
        wrong = [_random_exemplar(rng, i) for i in range(12)]
        correct = [_random_exemplar(rng, 100 + i) for i in range(7)]
        base = Prompt("i", [])
        ctx = build_proposer_context(base, 0.0, base, 0.0, wrong, correct)
        assert ctx.wrong_examples == wrong[:10]
        assert ctx.correct_examples == correct[:5]

    def test_accuracy_out_of_range_rejected(self):
        base = Prompt("i", [])
        with pytest.raises(ValueError):
            ProposerContext(base, 1.2, base, 0.0)


class TestParseProposal:
    def test_minimal_valid(self):
        payload = json.dumps({"instruction": "do it", "exemplars": [
            {"nlq": "q", "schema": "s", "evidence": "", "sql": "SELECT 1"}]})
        prompt = parse_proposal(payload)
        assert prompt.instruction == "do it"
        assert len(prompt.exemplars) == 1
        assert prompt.metadata["method"] == "ipo"

    def test_reference_payload(self):
        prompt = parse_proposal(PROPOSAL_EXAMPLE)
        assert prompt.instruction.startswith(
            "Given a natural language query (NLQ)")
        assert prompt.exemplars[0].gold_sql == \
            "SELECT title FROM film WHERE rating = 'PG-13';"
        # Pruned schema text passes through untouched.
        assert prompt.exemplars[0].schema_text == FIG3_SCHEMA

    def test_fenced_equals_unfenced(self):
        fenced = f"```json\n{PROPOSAL_EXAMPLE}\n```"
        assert parse_proposal(fenced).instruction == \
            parse_proposal(PROPOSAL_EXAMPLE).instruction

    def test_malformed_json(self):
        with pytest.raises(PromptParseError, match="not valid JSON"):
            parse_proposal("this is prose, not JSON")

    def test_missing_keys(self):
        with pytest.raises(PromptParseError, match="missing key"):
            parse_proposal(json.dumps({"instruction": "x"}))
        with pytest.raises(PromptParseError, match="missing key"):
            parse_proposal(json.dumps(
                {"instruction": "x", "exemplars": [{"nlq": "q", "sql": "s"}]}))

    def test_empty_exemplars_accepted(self):
        prompt = parse_proposal(json.dumps({"instruction": "x", "exemplars": []}))
        assert prompt.exemplars == []

    def test_empty_instruction_rejected(self):
        with pytest.raises(PromptParseError, match="instruction"):
            parse_proposal(json.dumps({"instruction": "", "exemplars": []}))

    def test_round_trip(self):
        prompt = Prompt("round trip instruction",
                        [FIG3_EXEMPLAR, GOLDEN_EXEMPLAR_2])
        parsed = parse_proposal(proposal_json(prompt))
        assert parsed.instruction == prompt.instruction
        assert [(e.nlq, e.schema_text, e.evidence, e.gold_sql)
                for e in parsed.exemplars] == \
               [(e.nlq, e.schema_text, e.evidence, e.gold_sql)
                for e in prompt.exemplars]


class TestRenderVariantRequest:
    def test_three_slots(self):
        text = render_variant_request("q", "schema", "SELECT 1", 3)
        assert text.endswith("1.\n\n2.\n\n3.")
        assert "generate 3 SQL variants" in text

    def test_single_slot(self):
        text = render_variant_request("q", "schema", "SELECT 1", 1)
        assert text.endswith("1.")
        assert "\n2." not in text

    def test_golden(self):
        text = render_variant_request(
            "Give the full name of the actor with the highest rental rate.",
            FIG3_SCHEMA, "SELECT title FROM film WHERE rating = 'PG-13';", 3)
        golden = (GOLDEN_DIR / "variant_request_3.txt").read_text("utf-8")
        assert text == golden

    def test_zero_variants_rejected(self):
        with pytest.raises(ValueError):
            render_variant_request("q", "s", "SELECT 1", 0)


class TestRenderStatic:
    def test_excludes_query_section(self):
        text = render_static(Prompt("instr", [FIG3_EXEMPLAR]))
        assert "#Query" not in text
        assert "#Instruction" in text and "#Exemplars" in text
