from __future__ import annotations

import hashlib
import itertools
import math
import random
import statistics

import pytest

from conftest import (FAST_COUNT_SQL, SLOW_COUNT_SQL, VERY_SLOW_SQL,
                      make_tagged_corpus, scripted_client)
from nl2sql_po.dataset import Corpus
from nl2sql_po.llmclient import GoldLookupPolicy
from nl2sql_po.prompts import Prompt
from nl2sql_po.sqlharness import (EvalReport, HarnessError, LatencyStats,
                                  ResultTable, ScoreOptions, execute,
                                  execution_match, extract_sql, measure_latency,
                                  pool_stats, score_prompt)

# Motivation pair: a correlated-subquery form and an inner-join form that must
# return the same avatar URL on the seeded movies_platform fixture.
SUBQUERY_SQL = ("SELECT user_avatar_image_url FROM lists_users WHERE user_id = "
                "(SELECT user_id FROM ratings WHERE rating_timestamp_utc LIKE "
                "'2019-10-17 01:36:36')")
JOIN_SQL = ("SELECT T2.user_avatar_image_url FROM ratings AS T1 INNER JOIN "
            "lists_users AS T2 ON T1.user_id = T2.user_id WHERE "
            "T1.rating_timestamp_utc LIKE '2019-10-17 01:36:36'")


def brute_force_match(pred: ResultTable, gold: ResultTable) -> bool:
    """Independent oracle: enumerate row permutations for a perfect pairing."""

    def values_close(a, b):
        if a is None or b is None:
            return a is None and b is None
        numbers = (int, float)
        if isinstance(a, numbers) and isinstance(b, numbers) \
                and not isinstance(a, bool) and not isinstance(b, bool):
            return math.isclose(a, b, rel_tol=0.0, abs_tol=1e-6)
        return type(a) is type(b) and a == b

    def rows_close(r1, r2):
        return len(r1) == len(r2) and all(values_close(a, b)
                                          for a, b in zip(r1, r2))

    if len(pred.rows) != len(gold.rows):
        return False
    return any(all(rows_close(p, g) for p, g in zip(perm, gold.rows))
               for perm in itertools.permutations(pred.rows))


def _random_table(rng: random.Random, n_rows=None, n_cols=None) -> ResultTable:
    n_cols = n_cols if n_cols is not None else rng.randint(1, 3)
    n_rows = n_rows if n_rows is not None else rng.randint(0, 5)

    def cell():
        kind = rng.randint(0, 3)
        if kind == 0:
            return None
        if kind == 1:
            return rng.randint(-3, 3)
        if kind == 2:
            return round(rng.uniform(-2, 2), 3)
        return rng.choice(["a", "b", "wrong-answer", ""])

    rows = tuple(tuple(cell() for _ in range(n_cols)) for _ in range(n_rows))
    return ResultTable(rows, n_cols)


def _mutate(rng: random.Random, table: ResultTable) -> ResultTable:
    rows = [list(r) for r in table.rows]
    strategy = rng.randint(0, 4)
    if strategy == 0 or not rows:  # pure shuffle
        rng.shuffle(rows)
    elif strategy == 1:  # numeric nudge within tolerance
        r, c = rng.randrange(len(rows)), rng.randrange(table.column_count)
        if isinstance(rows[r][c], (int, float)):
            rows[r][c] = rows[r][c] + rng.choice([-1, 1]) * 9e-7
        rng.shuffle(rows)
    elif strategy == 2:  # numeric change beyond tolerance
        r, c = rng.randrange(len(rows)), rng.randrange(table.column_count)
        if isinstance(rows[r][c], (int, float)):
            rows[r][c] = rows[r][c] + rng.choice([-1, 1]) * 5e-6
    elif strategy == 3:  # null flip
        r, c = rng.randrange(len(rows)), rng.randrange(table.column_count)
        rows[r][c] = None if rows[r][c] is not None else 0
    else:  # drop a row
        rows.pop(rng.randrange(len(rows)))
    return ResultTable(tuple(tuple(r) for r in rows), table.column_count)


class TestExecute:
    def test_select_one(self, movie3_db):
        outcome = execute(movie3_db, "SELECT 1")
        assert outcome.status == "ok"
        assert outcome.result.rows == ((1,),)
        assert outcome.result.column_count == 1

    def test_syntax_error(self, movie3_db):
        outcome = execute(movie3_db, "SELEC 1")
        assert outcome.status == "sql_error"
        assert outcome.result is None
        assert "syntax" in outcome.message.lower()

    def test_timeout_on_slow_cross_join(self, perf_db):
        # Sized so the unconstrained runtime dwarfs the 50 ms budget.
        unconstrained = execute(perf_db, VERY_SLOW_SQL, timeout=120.0)
        assert unconstrained.status == "ok"
        assert unconstrained.elapsed > 0.25
        outcome = execute(perf_db, VERY_SLOW_SQL, timeout=0.05)
        assert outcome.status == "timeout"
        assert outcome.result is None

    def test_write_rejected_and_file_untouched(self, movie3_db):
        before = hashlib.sha256(movie3_db.read_bytes()).hexdigest()
        outcome = execute(movie3_db, "INSERT INTO film VALUES (99, 'X', 'R')")
        assert outcome.status == "sql_error"
        execute(movie3_db, "SELECT * FROM film")
        after = hashlib.sha256(movie3_db.read_bytes()).hexdigest()
        assert before == after

    def test_missing_file_encoded_not_raised(self, tmp_path):
        outcome = execute(tmp_path / "ghost.sqlite", "SELECT 1")
        assert outcome.status == "sql_error"

    def test_multiple_statements_rejected(self, movie3_db):
        outcome = execute(movie3_db, "SELECT 1; SELECT 2")
        assert outcome.status == "sql_error"


class TestExecutionMatch:
    def test_identical(self):
        t = ResultTable(((1, "a"), (2, "b")), 2)
        assert execution_match(t, t)

    def test_row_order_irrelevant(self):
        a = ResultTable(((1, "a"), (2, "b")), 2)
        b = ResultTable(((2, "b"), (1, "a")), 2)
        assert execution_match(a, b)

    def test_column_order_significant(self):
        a = ResultTable((("a", 1),), 2)
        b = ResultTable(((1, "a"),), 2)
        assert not execution_match(a, b)

    def test_integer_real_cross_compare(self):
        assert execution_match(ResultTable(((1,),), 1), ResultTable(((1.0,),), 1))

    def test_tolerance_boundary(self):
        assert execution_match(ResultTable(((1.0,),), 1),
                               ResultTable(((1.0 + 5e-7,),), 1))
        assert not execution_match(ResultTable(((1.0,),), 1),
                                   ResultTable(((1.0 + 5e-6,),), 1))

    def test_null_semantics(self):
        assert execution_match(ResultTable(((None,),), 1),
                               ResultTable(((None,),), 1))
        assert not execution_match(ResultTable(((None,),), 1),
                                   ResultTable(((0,),), 1))

    def test_text_not_number(self):
        assert not execution_match(ResultTable((("1",),), 1),
                                   ResultTable(((1,),), 1))

    def test_multiset_multiplicity(self):
        a = ResultTable(((1,), (1,), (2,)), 1)
        b = ResultTable(((1,), (2,), (2,)), 1)
        assert not execution_match(a, b)

    def test_motivation_pair_on_fixture(self, db_root):
        db = db_root / "movies_platform" / "movies_platform.sqlite"
        sub = execute(db, SUBQUERY_SQL)
        join = execute(db, JOIN_SQL)
        assert sub.status == join.status == "ok"
        assert sub.result.rows == (("https://example.org/avatars/42.png",),)
        assert execution_match(join.result, sub.result)

    def test_reflexive_and_symmetric_under_shuffle(self):
        rng = random.Random(7)
        for _ in range(100):
            table = _random_table(rng)
            shuffled_rows = list(table.rows)
            rng.shuffle(shuffled_rows)
            shuffled = ResultTable(tuple(shuffled_rows), table.column_count)
            assert execution_match(table, table)
            assert execution_match(table, shuffled)
            assert execution_match(shuffled, table)

    def test_agreement_with_brute_force(self):
        rng = random.Random(20240817)
        checked = 0
        for _ in range(300):
            gold = _random_table(rng)
            pred = _mutate(rng, gold) if rng.random() < 0.7 else _random_table(rng)
            assert execution_match(pred, gold) == brute_force_match(pred, gold)
            checked += 1
        assert checked == 300


class TestLatencyStats:
    def test_invariants_enforced(self):
        with pytest.raises(HarnessError):
            LatencyStats(min=2.0, max=1.0, mean=1.5, stddev=0.0, runs=3)
        with pytest.raises(HarnessError):
            LatencyStats(min=0.0, max=1.0, mean=0.5, stddev=-0.1, runs=1)
        with pytest.raises(HarnessError):
            LatencyStats(min=0.0, max=1.0, mean=0.5, stddev=0.0, runs=0)

    def test_pool_matches_direct_computation(self):
        rng = random.Random(99)
        for _ in range(50):
            groups = [[rng.uniform(0.0, 2.0) for _ in range(rng.randint(1, 6))]
                      for _ in range(rng.randint(1, 5))]
            stats = [LatencyStats(min(g), max(g), statistics.fmean(g),
                                  statistics.pstdev(g), len(g)) for g in groups]
            pooled = pool_stats(stats)
            flat = [x for g in groups for x in g]
            assert pooled.runs == len(flat)
            assert pooled.min == pytest.approx(min(flat))
            assert pooled.max == pytest.approx(max(flat))
            assert pooled.mean == pytest.approx(statistics.fmean(flat))
            assert pooled.stddev == pytest.approx(statistics.pstdev(flat), abs=1e-9)


class TestMeasureLatency:
    def test_repeats_one(self, perf_db):
        stats = measure_latency(perf_db, FAST_COUNT_SQL, warmups=1, repeats=1)
        assert stats.stddev == 0.0
        assert stats.min == stats.max == stats.mean
        assert stats.runs == 1

    def test_five_repeats_ordering(self, perf_db):
        stats = measure_latency(perf_db, FAST_COUNT_SQL, warmups=1, repeats=5)
        assert stats.min <= stats.mean <= stats.max
        assert stats.runs == 5

    def test_failing_run_names_index(self, perf_db):
        with pytest.raises(HarnessError, match="run 0"):
            measure_latency(perf_db, "SELEC nonsense", warmups=0, repeats=2)

    def test_slow_form_measured_slower(self, perf_db):
        fast = measure_latency(perf_db, FAST_COUNT_SQL, warmups=1, repeats=3)
        slow = measure_latency(perf_db, SLOW_COUNT_SQL, warmups=1, repeats=3)
        assert slow.mean > fast.mean


class TestExtractSql:
    def test_fenced_block(self):
        assert extract_sql("```sql\nSELECT 1;\n```") == "SELECT 1;"

    def test_plain_fence(self):
        assert extract_sql("```\nSELECT 2\n```") == "SELECT 2"

    def test_sql_label_stripped_semicolon_kept(self):
        assert extract_sql("SQL: SELECT 1;") == "SELECT 1;"

    def test_plain_passthrough(self):
        assert extract_sql("SELECT a FROM t") == "SELECT a FROM t"


class TestScorePrompt:
    def _tagged_setup(self, db_root, n=30):
        corpus = make_tagged_corpus(db_root, n)
        client = scripted_client(GoldLookupPolicy(corpus.items))
        return corpus, client

    def test_all_tags_covered_accuracy_one(self, db_root):
        corpus, client = self._tagged_setup(db_root)
        prompt = Prompt("instr", list(corpus.items[:3]))  # join+aggregate+filter
        report = score_prompt(client, prompt, corpus)
        assert report.accuracy == 1.0
        assert not report.wrong_examples
        assert len(report.correct_examples) == len(corpus)

    def test_no_tags_covered_accuracy_zero(self, db_root):
        corpus, client = self._tagged_setup(db_root)
        prompt = Prompt("instr", [])
        report = score_prompt(client, prompt, corpus)
        assert report.accuracy == 0.0
        assert len(report.wrong_examples) == len(corpus)

    def test_partial_coverage_matches_tag_fraction(self, db_root):
        corpus, client = self._tagged_setup(db_root)
        join_only = [corpus.items[0]]  # covers only the join tag
        report = score_prompt(client, Prompt("instr", join_only), corpus)
        join_fraction = sum(
            1 for ex in corpus if "JOIN" in ex.gold_sql.upper()) / len(corpus)
        assert report.accuracy == pytest.approx(join_fraction)

    def test_accuracy_is_mean_of_verdicts(self, db_root):
        corpus, client = self._tagged_setup(db_root)
        report = score_prompt(client, Prompt("instr", [corpus.items[0]]), corpus)
        assert report.accuracy == pytest.approx(
            sum(v.verdict for v in report.per_item) / len(report.per_item))
        assert report.qps > 0
        assert report.prompt_tokens > 0

    def test_empty_eval_set_rejected(self, db_root):
        corpus, client = self._tagged_setup(db_root)
        with pytest.raises(HarnessError, match="empty"):
            score_prompt(client, Prompt("instr", []), Corpus((), db_root))

    def test_concurrent_matches_serial(self, db_root):
        corpus, client = self._tagged_setup(db_root)
        prompt = Prompt("instr", [corpus.items[0]])
        serial = score_prompt(client, prompt, corpus, ScoreOptions(max_workers=1))
        threaded = score_prompt(client, prompt, corpus, ScoreOptions(max_workers=4))
        assert [v.verdict for v in serial.per_item] == \
               [v.verdict for v in threaded.per_item]

    def test_latency_scoring_pools_and_caps(self, db_root, perf_db):
        corpus = make_tagged_corpus(db_root, 6)
        client = scripted_client(GoldLookupPolicy(corpus.items))
        prompt = Prompt("instr", list(corpus.items[:3]))
        options = ScoreOptions(with_latency=True, latency_repeats=2,
                               latency_cap=0.5)
        report = score_prompt(client, prompt, corpus, options)
        assert report.latency is not None
        assert report.latency.runs == 2 * len(corpus)
        assert report.latency.min <= report.latency.mean <= report.latency.max

    def test_wrong_predictions_contribute_cap(self, db_root):
        corpus = make_tagged_corpus(db_root, 6)
        client = scripted_client(GoldLookupPolicy(corpus.items))
        options = ScoreOptions(with_latency=True, latency_repeats=2,
                               latency_cap=0.5)
        report = score_prompt(client, Prompt("instr", []), corpus, options)
        assert report.accuracy == 0.0
        assert report.latency.mean == pytest.approx(0.5)
