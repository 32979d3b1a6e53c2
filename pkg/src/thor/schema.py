"""Schema introspection, relevance ranking and prompt rendering."""
from __future__ import annotations

import re
from dataclasses import dataclass

from thor.domain import (
    ColumnMeta,
    DataKind,
    ForeignKey,
    GuardrailVerdict,
    ExecutionOutcome,
    Question,
    SchemaCatalog,
    TableMeta,
)
from thor.errors import ColumnNotFound, DatasourceUnavailable, PreconditionError, RankingUnavailable

TABLE_WEIGHT = 3.0
COLUMN_WEIGHT = 2.0
DESCRIPTION_WEIGHT = 1.0
NEIGHBOR_BONUS = 0.5

STOPWORDS = frozenset(
    """a an and are as at be by for from has have how i in is it me my of on or per show
    that the their there these this to top was what which who with by give list tell
    many much most least all each every do does did can could would should please""".split()
)


def _kind(declared: str) -> DataKind:
    t = (declared or "").upper()
    if "BOOL" in t:
        return DataKind.BOOLEAN
    if "INT" in t:
        return DataKind.INTEGER
    if any(k in t for k in ("DATE", "TIME")):
        return DataKind.TIMESTAMP
    if any(k in t for k in ("CHAR", "TEXT", "CLOB", "STRING")):
        return DataKind.TEXT
    if any(k in t for k in ("REAL", "FLOA", "DOUB", "NUM", "DEC")):
        return DataKind.DECIMAL
    return DataKind.OTHER


def introspect(executor, datasource_id: str, annotations: dict | None = None, denied_columns=()) -> SchemaCatalog:
    """Read tables, columns and foreign keys from the datasource.

    ``annotations`` is a data dictionary (descriptions, unit hints) merged
    onto the introspected structure; the database itself has no place for it.
    """
    notes = (annotations or {}).get("tables", {}) or {}
    tables: list[TableMeta] = []
    fks: list[ForeignKey] = []
    with executor.connect() as conn:
        try:
            names = [
                r[0]
                for r in conn.execute(
                    "SELECT name FROM sqlite_master WHERE type = 'table' AND name NOT LIKE 'sqlite_%' ORDER BY name"
                )
            ]
            for name in names:
                table_notes = notes.get(name, {}) or {}
                col_notes = table_notes.get("columns", {}) or {}
                columns = []
                for _, col, declared, notnull, _, pk in conn.execute(f'PRAGMA table_info("{name}")'):
                    unit = (col_notes.get(col) or {}).get("unit")
                    columns.append(ColumnMeta(col, _kind(declared), nullable=not (notnull or pk), unit_hint=unit))
                count = conn.execute(f'SELECT COUNT(*) FROM "{name}"').fetchone()[0]
                tables.append(TableMeta(name, tuple(columns), count, table_notes.get("description")))
                for row in conn.execute(f'PRAGMA foreign_key_list("{name}")'):
                    fks.append(ForeignKey(name, row[3], row[2], row[4]))
        except Exception as err:  # sqlite3.Error and friends
            raise DatasourceUnavailable(f"introspection failed: {err}") from err
    denied = set(denied_columns) | set((annotations or {}).get("denied_columns", []) or [])
    return SchemaCatalog(
        datasource_id=datasource_id,
        tables=tuple(tables),
        foreign_keys=tuple(fks),
        denied_columns=frozenset(denied),
        snapshot_at=executor.clock.now(),
    )


# --- tokens -----------------------------------------------------------------

_CAMEL = re.compile(r"(?<=[a-z0-9])(?=[A-Z])")


def fold(token: str) -> str:
    """Lowercase and map a word and its simple English plural to one key.

    The key is not always a word: "warehouse" and "warehouses" both give
    "warehous", "box" and "boxes" both give "box".
    """
    t = token.lower()
    if len(t) > 4 and t.endswith("ies"):
        return t[:-3] + "y"
    if len(t) > 3 and t.endswith("s") and not t.endswith(("ss", "us", "is")):
        t = t[:-1]
    # the "e" of "-ses"/"-xes"/"-ches" plurals, dropped from both forms alike
    if len(t) > 3 and t.endswith("e") and t[:-1].endswith(("s", "x", "z", "ch", "sh")):
        t = t[:-1]
    return t


def tokens(text: str | None) -> frozenset[str]:
    if not text:
        return frozenset()
    parts = re.split(r"[^A-Za-z0-9]+", _CAMEL.sub(" ", text))
    return frozenset(fold(p) for p in parts if p and p.lower() not in STOPWORDS)


def lexical_score(question_tokens: frozenset[str], table: TableMeta) -> float:
    col_tokens = frozenset().union(*(tokens(c.name) for c in table.columns)) if table.columns else frozenset()
    return (
        TABLE_WEIGHT * len(question_tokens & tokens(table.name))
        + COLUMN_WEIGHT * len(question_tokens & col_tokens)
        + DESCRIPTION_WEIGHT * len(question_tokens & tokens(table.description))
    )


def score_tables(question: Question | str, catalog: SchemaCatalog) -> dict[str, float]:
    text = question.text if isinstance(question, Question) else question
    q = tokens(text)
    lexical = {t.name: lexical_score(q, t) for t in catalog.tables}
    hit = {name for name, s in lexical.items() if s > 0}
    scores = dict(lexical)
    for fk in catalog.foreign_keys:
        for a, b in ((fk.table, fk.ref_table), (fk.ref_table, fk.table)):
            a_name = catalog.table(a).name
            b_name = catalog.table(b).name
            if scores[a_name] == 0 and b_name in hit:
                scores[a_name] = NEIGHBOR_BONUS
    return scores


# --- rendering --------------------------------------------------------------


def _render_value(v) -> str:
    return str(v)


def render_column(col: ColumnMeta) -> str:
    parts = [col.name, col.data_kind.value]
    if col.nullable:
        parts.append("nullable")
    if col.unit_hint:
        parts.append(f"unit: {col.unit_hint}")
    line = "  " + " ".join(parts)
    if col.sampled_values is not None:
        line += " values: " + ", ".join(_render_value(v) for v in col.sampled_values)
    return line


def render_tables(tables, catalog: SchemaCatalog) -> str:
    chosen = {t.name.lower() for t in tables}
    lines: list[str] = []
    for t in tables:
        header = f"table {t.name}"
        if t.description:
            header += f" -- {t.description}"
        lines.append(header)
        lines.extend(render_column(c) for c in t.columns)
    for fk in catalog.foreign_keys:
        if fk.table.lower() in chosen and fk.ref_table.lower() in chosen:
            lines.append(str(fk))
    return "\n".join(lines)


@dataclass(frozen=True)
class RelevanceRanking:
    scored_tables: tuple[tuple[str, float], ...]
    selected: tuple[str, ...]
    rendered_schema_text: str


def rank_relevance(question: Question | str, catalog: SchemaCatalog, budget: int = 4000) -> RelevanceRanking:
    """Score tables against the question and pick what fits the prompt budget.

    Tables are taken greedily in rank order (score descending, name
    ascending) until the next one would push the rendered block past
    ``budget`` characters.
    """
    if not catalog.tables:
        raise RankingUnavailable("catalog has no tables")
    scores = score_tables(question, catalog)
    ranked = tuple(sorted(scores.items(), key=lambda kv: (-kv[1], kv[0])))
    selected: list[TableMeta] = []
    text = ""
    for name, _ in ranked:
        trial = selected + [catalog.table(name)]
        rendered = render_tables(trial, catalog)
        if len(rendered) > budget:
            break
        selected, text = trial, rendered
    return RelevanceRanking(ranked, tuple(t.name for t in selected), text)


def render_schema_prompt(ranking: RelevanceRanking) -> str:
    if not ranking.selected:
        raise PreconditionError("nothing selected to render")
    return ranking.rendered_schema_text


# --- value introspection ----------------------------------------------------

SAMPLEABLE = (DataKind.TEXT, DataKind.INTEGER, DataKind.BOOLEAN)


def _quote(ident: str) -> str:
    return '"' + ident.replace('"', '""') + '"'


def distinct_values_sql(table: str, column: str, limit: int) -> str:
    c, t = _quote(column), _quote(table)
    return (
        f"SELECT {c} AS value, COUNT(*) AS n FROM {t} WHERE {c} IS NOT NULL "
        f"GROUP BY {c} ORDER BY n DESC, value LIMIT {int(limit)}"
    )


@dataclass(frozen=True)
class ValueSample:
    catalog: SchemaCatalog
    sql_text: str
    verdict: GuardrailVerdict
    outcome: ExecutionOutcome | None
    values: tuple


def sample_values(catalog: SchemaCatalog, table: str, column: str, executor, policy, limit: int = 20) -> ValueSample:
    """Fetch up to ``limit`` distinct non-null values (most frequent first).

    The query goes through the guardrail like any other; a refusal (say the
    column is deny-listed) leaves the catalog untouched.
    """
    from thor.guardrail import check

    meta = catalog.column(table, column)
    if meta is None:
        raise ColumnNotFound(f"{table}.{column}")
    if meta.data_kind not in SAMPLEABLE:
        raise PreconditionError(f"{table}.{column} is {meta.data_kind.value}; only text/integer/boolean are sampled")
    if meta.sampled_values is not None:
        return ValueSample(catalog, "", GuardrailVerdict("allowed"), None, meta.sampled_values)
    sql = distinct_values_sql(catalog.table(table).name, meta.name, limit)
    _, verdict = check(sql, policy, catalog)
    if not verdict.allowed:
        return ValueSample(catalog, sql, verdict, None, ())
    outcome = executor.execute(sql)
    if outcome.status.value == "error":
        raise DatasourceUnavailable(f"value introspection failed: {outcome.error_message}")
    values = tuple(row[0] for row in outcome.rows or ())
    return ValueSample(catalog.with_sampled_values(table, column, values), sql, verdict, outcome, values)


def introspect_values(catalog: SchemaCatalog, table: str, column: str, executor, policy=None, limit: int = 20) -> SchemaCatalog:
    """Return a new catalog whose ``table.column`` carries sampled values."""
    from thor.guardrail import GuardrailPolicy

    return sample_values(catalog, table, column, executor, policy or GuardrailPolicy(), limit).catalog
