"""Shared fixtures: BIRD-layout fixture databases and scripted-oracle corpora."""

from __future__ import annotations

import json
import sqlite3
from pathlib import Path

import pytest

from nl2sql_po.dataset import Corpus, Exemplar
from nl2sql_po.llmclient import LLMClient, scripted_oracle

PERF_ROWS = 200

FIG3_SCHEMA = ("Database Name: movie_3\n"
               "Tables: ['film']\n"
               "#Columns:\n"
               "film: [film_id:integer, title:text, rating:text]")

FIG3_EXEMPLAR = Exemplar(
    question_id="fig3",
    db_id="movie_3",
    nlq="List all the films that are rated as PG-13.",
    evidence="film refers to title; rated as PG-13 refers to rating = 'PG-13'.",
    gold_sql="SELECT title FROM film WHERE rating = 'PG-13';",
    difficulty="simple",
    schema_text=FIG3_SCHEMA,
)


GOLDEN_EXEMPLAR_2 = Exemplar(
    question_id="agg",
    db_id="movie_3",
    nlq="How many films are there?",
    evidence="",
    gold_sql="SELECT COUNT(*) FROM film",
    difficulty="moderate",
    schema_text=FIG3_SCHEMA,
)

GOLDEN_QUERY = Exemplar(
    question_id="q-r",
    db_id="movie_3",
    nlq="List all the films that are rated as R.",
    evidence="rated as R refers to rating = 'R'",
    gold_sql="SELECT title FROM film WHERE rating = 'R'",
    difficulty="simple",
    schema_text=FIG3_SCHEMA,
)

GOLDEN_WRONG = [
    Exemplar(f"wrong-{i}", "movie_3", f"Wrong case {i}", f"hint {i}",
             f"SELECT title FROM film WHERE film_id = {i}", "simple", FIG3_SCHEMA)
    for i in range(1, 4)
]

GOLDEN_CORRECT = [
    Exemplar(f"correct-{i}", "movie_3", f"Correct case {i}", "",
             f"SELECT COUNT(*) FROM film WHERE film_id > {i}", "moderate",
             FIG3_SCHEMA)
    for i in range(1, 3)
]

GOLDEN_DIR = Path(__file__).parent / "golden"


def _create_db(path: Path, ddl_and_rows) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    conn = sqlite3.connect(path)
    try:
        for statement, rows in ddl_and_rows:
            conn.execute(statement)
            if rows:
                table = statement.split()[2]
                placeholders = ", ".join("?" * len(rows[0]))
                conn.executemany(f"INSERT INTO {table} VALUES ({placeholders})", rows)
        conn.commit()
    finally:
        conn.close()


@pytest.fixture(scope="session")
def db_root(tmp_path_factory) -> Path:
    """BIRD layout: <db_root>/<db_id>/<db_id>.sqlite for every fixture DB."""
    root = tmp_path_factory.mktemp("dbs")

    _create_db(root / "movie_3" / "movie_3.sqlite", [
        ("CREATE TABLE film (film_id integer, title text, rating text)", [
            (1, "Midnight Run", "PG-13"),
            (2, "Quiet Harbor", "R"),
            (3, "Paper Kites", "PG-13"),
            (4, "Iron Valley", "PG"),
            (5, "Glass Orchard", "R"),
        ]),
        ("CREATE TABLE actor (actor_id integer, first_name text, last_name text)", [
            (1, "Maya", "Reyes"),
            (2, "Tom", "Okafor"),
            (3, "Ada", "Lindqvist"),
        ]),
        ("CREATE TABLE film_actor (film_id integer REFERENCES film(film_id), "
         "actor_id integer REFERENCES actor(actor_id))", [
             (1, 1), (1, 2), (2, 2), (3, 3), (4, 1), (5, 3),
         ]),
    ])

    _create_db(root / "movies_platform" / "movies_platform.sqlite", [
        ("CREATE TABLE ratings (user_id integer, rating_timestamp_utc text)", [
            (42, "2019-10-17 01:36:36"),
            (7, "2019-10-16 11:00:00"),
            (9, "2019-10-18 22:15:01"),
        ]),
        ("CREATE TABLE lists_users (user_id integer, user_avatar_image_url text)", [
            (42, "https://example.org/avatars/42.png"),
            (7, "https://example.org/avatars/7.png"),
            (9, "https://example.org/avatars/9.png"),
        ]),
    ])

    _create_db(root / "perf" / "perf.sqlite", [
        ("CREATE TABLE nums (n integer)", [(i,) for i in range(1, PERF_ROWS + 1)]),
    ])

    _create_db(root / "rental" / "rental.sqlite", [
        ("CREATE TABLE actor (actor_id integer, first_name text, last_name text)", [
            (1, "Iris", "Kanno"),
            (2, "Leo", "Duarte"),
        ]),
        ("CREATE TABLE film (film_id integer, title text, rental_rate real)", [
            (1, "Cobalt Sky", 2.99),
            (2, "Ember Lane", 4.99),
            (3, "Salt Flats", 0.99),
        ]),
        ("CREATE TABLE film_actor (actor_id integer, film_id integer)", [
            (1, 1), (2, 2), (1, 3),
        ]),
    ])
    return root


@pytest.fixture(scope="session")
def movie3_db(db_root) -> Path:
    return db_root / "movie_3" / "movie_3.sqlite"


@pytest.fixture(scope="session")
def perf_db(db_root) -> Path:
    return db_root / "perf" / "perf.sqlite"


# Equivalent statements on the perf DB: nums.n is unique, so the cross-join
# distinct count equals the plain row count while running far slower.
FAST_COUNT_SQL = "SELECT COUNT(*) FROM nums"
SLOW_COUNT_SQL = "SELECT COUNT(DISTINCT a.n) FROM nums AS a CROSS JOIN nums AS b"
VERY_SLOW_SQL = ("SELECT COUNT(DISTINCT a.n + b.n + c.n) FROM nums AS a "
                 "CROSS JOIN nums AS b CROSS JOIN nums AS c")


def write_manifest(path: Path, records: list[dict]) -> Path:
    path.write_text(json.dumps(records, indent=2), encoding="utf-8")
    return path


@pytest.fixture
def movie3_manifest(tmp_path, db_root) -> Path:
    """Three-record manifest over movie_3, one per difficulty."""
    return write_manifest(tmp_path / "manifest.json", [
        {"question_id": "q1", "db_id": "movie_3",
         "question": "List all the films that are rated as PG-13.",
         "evidence": "rated as PG-13 refers to rating = 'PG-13'",
         "SQL": "SELECT title FROM film WHERE rating = 'PG-13'",
         "difficulty": "simple"},
        {"question_id": "q2", "db_id": "movie_3",
         "question": "How many films are there?",
         "evidence": "",
         "SQL": "SELECT COUNT(*) FROM film",
         "difficulty": "moderate"},
        {"question_id": "q3", "db_id": "movie_3",
         "question": "Which actors appear in Midnight Run?",
         "evidence": "Midnight Run refers to title = 'Midnight Run'",
         "SQL": ("SELECT a.first_name, a.last_name FROM actor AS a "
                 "JOIN film_actor AS fa ON a.actor_id = fa.actor_id "
                 "JOIN film AS f ON fa.film_id = f.film_id "
                 "WHERE f.title = 'Midnight Run'"),
         "difficulty": "challenging"},
    ])


TAG_GOLD_TEMPLATES = {
    "join": ("SELECT f.title FROM film AS f JOIN film_actor AS fa "
             "ON f.film_id = fa.film_id WHERE fa.actor_id >= {i}"),
    "aggregate": "SELECT COUNT(*) FROM film WHERE film_id >= {i}",
    "filter": "SELECT title FROM film WHERE film_id >= {i}",
}

# 30 items cycling join/aggregate/filter: 10 of each construct tag.
TAG_CYCLE = ("join", "aggregate", "filter")


def make_tagged_corpus(db_root: Path, n: int = 30) -> Corpus:
    items = []
    difficulties = ("simple", "moderate", "challenging")
    for i in range(n):
        tag = TAG_CYCLE[i % 3]
        items.append(Exemplar(
            question_id=f"tagged-{i:02d}",
            db_id="movie_3",
            nlq=f"Tagged question {i:02d} ({tag})",
            evidence="",
            gold_sql=TAG_GOLD_TEMPLATES[tag].format(i=i % 4),
            difficulty=difficulties[i % 3],
            schema_text=FIG3_SCHEMA,
        ))
    return Corpus(tuple(items), db_root)


@pytest.fixture(scope="session")
def tagged_corpus(db_root) -> Corpus:
    return make_tagged_corpus(db_root)


def make_kdep_corpus(db_root: Path, n: int = 60) -> Corpus:
    items = [Exemplar(
        question_id=f"kdep-{i:02d}",
        db_id="movie_3",
        nlq=f"Q{i:02d}",
        evidence="",
        gold_sql=f"SELECT {i}",
        difficulty="unknown",
        schema_text=FIG3_SCHEMA,
    ) for i in range(n)]
    return Corpus(tuple(items), db_root)


@pytest.fixture(scope="session")
def kdep_corpus(db_root) -> Corpus:
    return make_kdep_corpus(db_root)


def scripted_client(policy, **kwargs) -> LLMClient:
    return LLMClient(scripted_oracle(policy), **kwargs)
