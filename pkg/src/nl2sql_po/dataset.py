"""BIRD-format corpus loading, SQLite schema introspection, and seeded sampling.

Expected on-disk layout: a JSON manifest (array of records with keys
`question_id`, `db_id`, `question`, `evidence`, `SQL`, `difficulty`) next to a
database root where each database lives at `<db_root>/<db_id>/<db_id>.sqlite`.
"""

from __future__ import annotations

import json
import math
import sqlite3
from dataclasses import dataclass, field
from pathlib import Path

from .seeding import substream

DIFFICULTIES = ("simple", "moderate", "challenging", "unknown")

# Difficulty classes that participate in stratified sampling.
STRATA = ("simple", "moderate", "challenging")


class DatasetError(Exception):
    """Unreadable manifest, malformed record, or missing/corrupt database."""


@dataclass(frozen=True)
class Exemplar:
    """One training item: NL query, schema text, evidence, gold SQL."""

    question_id: str
    db_id: str
    nlq: str
    evidence: str
    gold_sql: str
    difficulty: str = "unknown"
    schema_text: str = ""

    def __post_init__(self) -> None:
        if not self.nlq:
            raise DatasetError(f"exemplar {self.question_id!r}: empty nlq")
        if not self.gold_sql:
            raise DatasetError(f"exemplar {self.question_id!r}: empty gold_sql")
        if self.difficulty not in DIFFICULTIES:
            raise DatasetError(
                f"exemplar {self.question_id!r}: difficulty {self.difficulty!r} "
                f"not one of {DIFFICULTIES}"
            )


@dataclass(frozen=True)
class Corpus:
    """An ordered, immutable collection of exemplars over one database root."""

    items: tuple[Exemplar, ...]
    db_root: Path

    def __post_init__(self) -> None:
        seen: set[str] = set()
        for ex in self.items:
            if ex.question_id in seen:
                raise DatasetError(f"duplicate question_id {ex.question_id!r}")
            seen.add(ex.question_id)

    def __len__(self) -> int:
        return len(self.items)

    def __iter__(self):
        return iter(self.items)

    def db_path(self, db_id: str) -> Path:
        return Path(self.db_root) / db_id / f"{db_id}.sqlite"

    def subset(self, items) -> "Corpus":
        return Corpus(tuple(items), self.db_root)


@dataclass(frozen=True)
class Split:
    train: Corpus
    valid: Corpus
    seed: int


@dataclass(frozen=True)
class SchemaDescriptor:
    """Tables in catalog order, columns in declaration order, plus foreign keys."""

    db_name: str
    tables: tuple[tuple[str, tuple[tuple[str, str], ...]], ...]
    foreign_keys: tuple[tuple[str, str], ...] = field(default_factory=tuple)

    def table_names(self) -> tuple[str, ...]:
        return tuple(name for name, _ in self.tables)


def load_corpus(manifest_path, db_root) -> Corpus:
    """Load a manifest into a Corpus, rendering schema text from the live DBs."""
    manifest_path = Path(manifest_path)
    db_root = Path(db_root)
    if not manifest_path.is_file():
        raise DatasetError(f"manifest not found: {manifest_path}")
    try:
        raw = json.loads(manifest_path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise DatasetError(f"cannot read manifest {manifest_path}: {exc}") from exc
    if not isinstance(raw, list):
        raise DatasetError(f"manifest {manifest_path} is not a JSON array")

    schema_cache: dict[str, str] = {}
    items: list[Exemplar] = []
    for idx, record in enumerate(raw):
        if not isinstance(record, dict):
            raise DatasetError(f"record {idx}: not a JSON object")
        try:
            db_id = str(record["db_id"])
            nlq = str(record["question"])
            gold_sql = str(record["SQL"])
        except KeyError as exc:
            raise DatasetError(f"record {idx}: missing key {exc.args[0]!r}") from exc
        if not nlq:
            raise DatasetError(f"record {idx}: key 'question' is empty")
        if not gold_sql:
            raise DatasetError(f"record {idx}: key 'SQL' is empty")
        question_id = str(record.get("question_id", idx))
        evidence = str(record.get("evidence", ""))
        difficulty = str(record.get("difficulty", "unknown"))
        if difficulty not in DIFFICULTIES:
            raise DatasetError(
                f"record {idx}: difficulty {difficulty!r} not one of {DIFFICULTIES}"
            )

        if db_id not in schema_cache:
            db_path = db_root / db_id / f"{db_id}.sqlite"
            if not db_path.is_file():
                raise DatasetError(f"record {idx}: no database file for db_id {db_id!r} "
                                   f"(expected {db_path})")
            schema_cache[db_id] = render_schema(introspect_schema(db_path))
        items.append(Exemplar(
            question_id=question_id,
            db_id=db_id,
            nlq=nlq,
            evidence=evidence,
            gold_sql=gold_sql,
            difficulty=difficulty,
            schema_text=schema_cache[db_id],
        ))
    return Corpus(tuple(items), db_root)


def introspect_schema(db_path) -> SchemaDescriptor:
    """Read table/column/foreign-key structure from a SQLite file."""
    db_path = Path(db_path)
    try:
        conn = sqlite3.connect(f"file:{db_path}?mode=ro", uri=True)
    except sqlite3.Error as exc:
        raise DatasetError(f"cannot open database {db_path}: {exc}") from exc
    try:
        try:
            names = [row[0] for row in conn.execute(
                "SELECT name FROM sqlite_master WHERE type='table' "
                "AND name NOT LIKE 'sqlite_%'")]
            tables = []
            pk_by_table: dict[str, str] = {}
            for name in names:
                cols = []
                for _, col, decltype, _notnull, _default, pk in conn.execute(
                        f"PRAGMA table_info({_quote_ident(name)})"):
                    cols.append((col, (decltype or "").lower()))
                    if pk == 1:
                        pk_by_table[name] = col
                tables.append((name, tuple(cols)))
            fks = []
            for name in names:
                for row in conn.execute(f"PRAGMA foreign_key_list({_quote_ident(name)})"):
                    _, _, ref_table, src_col, ref_col = row[0], row[1], row[2], row[3], row[4]
                    if ref_col is None:
                        ref_col = pk_by_table.get(ref_table, "rowid")
                    fks.append((f"{name}.{src_col}", f"{ref_table}.{ref_col}"))
        except sqlite3.Error as exc:
            raise DatasetError(f"cannot introspect database {db_path}: {exc}") from exc
    finally:
        conn.close()
    return SchemaDescriptor(db_name=db_path.stem, tables=tuple(tables),
                            foreign_keys=tuple(fks))


def render_schema(desc: SchemaDescriptor, table_filter: set[str] | None = None) -> str:
    """Render a descriptor into the prompt schema block.

    Layout::

        Database Name: <db>
        Tables: ['t1', 't2']
        #Columns:
        t1: [c1:type1, c2:type2]
        t2: [...]
    """
    if table_filter is not None:
        unknown = set(table_filter) - set(desc.table_names())
        if unknown:
            raise DatasetError(f"table_filter names unknown tables: {sorted(unknown)}")
        tables = [(n, cols) for n, cols in desc.tables if n in table_filter]
    else:
        tables = list(desc.tables)
    lines = [
        f"Database Name: {desc.db_name}",
        "Tables: [" + ", ".join(f"'{n}'" for n, _ in tables) + "]",
        "#Columns:",
    ]
    for name, cols in tables:
        lines.append(f"{name}: [" + ", ".join(f"{c}:{t}" for c, t in cols) + "]")
    return "\n".join(lines)


def split(corpus: Corpus, valid_fraction: float, seed: int) -> Split:
    """Partition a corpus into train/valid; valid gets ⌈n·fraction⌉ items."""
    n = len(corpus)
    if n < 2:
        raise DatasetError(f"corpus too small to split ({n} items)")
    if not 0.0 < valid_fraction < 1.0:
        raise DatasetError(f"valid_fraction must be in (0,1), got {valid_fraction}")
    n_valid = math.ceil(n * valid_fraction)
    rng = substream(seed, "dataset.split")
    order = list(range(n))
    rng.shuffle(order)
    valid_idx = set(order[:n_valid])
    train_items = [ex for i, ex in enumerate(corpus.items) if i not in valid_idx]
    valid_items = [ex for i, ex in enumerate(corpus.items) if i in valid_idx]
    return Split(train=corpus.subset(train_items), valid=corpus.subset(valid_items),
                 seed=seed)


def sample_exemplars(corpus: Corpus, k: int, seed: int,
                     mode: str = "uniform") -> list[Exemplar]:
    """Draw k exemplars; deterministic per (seed, mode).

    `uniform` samples without replacement (k ≤ |corpus|), `with_replacement`
    allows repeats, `stratified` allocates k across difficulty classes
    proportionally to their frequency (largest-remainder rounding); items with
    difficulty `unknown` sit outside every stratum.
    """
    if k < 0:
        raise DatasetError(f"k must be ≥ 0, got {k}")
    if k == 0:
        return []
    if len(corpus) == 0:
        raise DatasetError("cannot sample from an empty corpus")
    rng = substream(seed, f"dataset.sample.{mode}")
    items = list(corpus.items)
    if mode == "uniform":
        if k > len(items):
            raise DatasetError(f"k={k} exceeds corpus size {len(items)} in uniform mode")
        return rng.sample(items, k)
    if mode == "with_replacement":
        return [rng.choice(items) for _ in range(k)]
    if mode == "stratified":
        return _sample_stratified(items, k, rng)
    raise DatasetError(f"unknown sampling mode {mode!r}")


def _sample_stratified(items, k, rng):
    strata = {d: [ex for ex in items if ex.difficulty == d] for d in STRATA}
    strata = {d: members for d, members in strata.items() if members}
    if not strata:
        # No known-difficulty items: fall back to plain uniform sampling.
        if k > len(items):
            raise DatasetError(f"k={k} exceeds corpus size {len(items)}")
        return rng.sample(items, k)
    eligible = sum(len(m) for m in strata.values())
    if k > eligible:
        raise DatasetError(
            f"k={k} exceeds the {eligible} items with known difficulty")
    alloc = _largest_remainder(
        {d: len(m) for d, m in strata.items()}, k,
        capacity={d: len(m) for d, m in strata.items()})
    sampled: list[Exemplar] = []
    for d in STRATA:
        if d in strata and alloc.get(d, 0):
            sampled.extend(rng.sample(strata[d], alloc[d]))
    return sampled


def _largest_remainder(counts: dict[str, int], k: int,
                       capacity: dict[str, int]) -> dict[str, int]:
    total = sum(counts.values())
    order = [d for d in STRATA if d in counts]
    quotas = {d: k * counts[d] / total for d in order}
    alloc = {d: math.floor(quotas[d]) for d in order}
    remainders = sorted(order, key=lambda d: (-(quotas[d] - alloc[d]), order.index(d)))
    short = k - sum(alloc.values())
    for d in remainders:
        if short == 0:
            break
        alloc[d] += 1
        short -= 1
    # Spill allocations that exceed a stratum's size onto strata with room.
    overflow = 0
    for d in order:
        if alloc[d] > capacity[d]:
            overflow += alloc[d] - capacity[d]
            alloc[d] = capacity[d]
    while overflow > 0:
        for d in remainders:
            if overflow > 0 and alloc[d] < capacity[d]:
                alloc[d] += 1
                overflow -= 1
    return alloc


def _quote_ident(name: str) -> str:
    return '"' + name.replace('"', '""') + '"'
