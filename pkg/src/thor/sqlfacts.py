"""Structural facts about a parsed SELECT used by the sanity checks.

Column mentions are bound to catalog tables through the same scope walk the
guardrail uses, so ``dr.status`` and a bare ``status`` both land on
``delivery_requests.status``.
"""
from __future__ import annotations

from dataclasses import dataclass

from sqlglot import exp
from sqlglot.errors import SqlglotError
from sqlglot.optimizer.scope import traverse_scope

from thor.dialect import parse_statements
from thor.domain import DataKind, SchemaCatalog
from thor.guardrail import _base_tables, _lookup_source, _scope_chain


@dataclass(frozen=True)
class Predicate:
    table: str
    column: str
    op: str  # "eq" | "in" | "like" | "ilike"
    literal: str
    has_wildcard: bool


def _parse(sql: str):
    try:
        statements = parse_statements(sql)
    except (SqlglotError, ValueError, RecursionError):
        return None
    return statements[0] if len(statements) == 1 else None


def _owner(col: exp.Column, scope, catalog: SchemaCatalog) -> str | None:
    qualifier = col.table.lower()
    name = col.name.lower()
    if qualifier:
        source = _lookup_source(scope, qualifier)
        if isinstance(source, exp.Table):
            return source.name.lower()
        return qualifier if source is None and catalog.table(qualifier) else None
    for s in _scope_chain(scope):
        hits = [t for t in _base_tables(s) if catalog.column(t, name) is not None]
        if len(hits) == 1:
            return hits[0]
        if hits:
            return None
    return None


def _bound_columns(tree, catalog: SchemaCatalog):
    """Yield (column node, owning table or None) for every column mention."""
    try:
        scopes = list(traverse_scope(tree))
    except (SqlglotError, ValueError, KeyError, AttributeError, RecursionError):
        return
    for scope in scopes:
        for col in scope.columns:
            yield col, _owner(col, scope, catalog)


def _string_literal(node) -> str | None:
    if isinstance(node, exp.Literal) and node.is_string:
        return node.this
    return None


def _strip_casts(node):
    while isinstance(node, (exp.Lower, exp.Upper, exp.Trim, exp.Cast, exp.Paren)):
        node = node.this
    return node


def text_predicates(sql: str, catalog: SchemaCatalog) -> list[Predicate]:
    """Equality, IN and LIKE filters that compare a text column to string literals."""
    tree = _parse(sql)
    if tree is None:
        return []
    found: list[Predicate] = []
    for col, table in _bound_columns(tree, catalog):
        if table is None:
            continue
        meta = catalog.column(table, col.name)
        if meta is None or meta.data_kind is not DataKind.TEXT:
            continue
        node = col
        while isinstance(node.parent, (exp.Lower, exp.Upper, exp.Trim, exp.Cast, exp.Paren)):
            node = node.parent
        parent = node.parent
        if isinstance(parent, exp.EQ):
            other = parent.expression if parent.this is node else parent.this
            lit = _string_literal(_strip_casts(other))
            if lit is not None:
                found.append(Predicate(table, meta.name, "eq", lit, False))
        elif isinstance(parent, exp.In) and parent.this is node:
            for item in parent.expressions:
                lit = _string_literal(_strip_casts(item))
                if lit is not None:
                    found.append(Predicate(table, meta.name, "in", lit, False))
        elif isinstance(parent, (exp.Like, exp.ILike)) and parent.this is node:
            lit = _string_literal(_strip_casts(parent.expression))
            if lit is not None:
                op = "ilike" if isinstance(parent, exp.ILike) else "like"
                found.append(Predicate(table, meta.name, op, lit, "%" in lit or "_" in lit))
    return found


def _is_number(node) -> bool:
    return isinstance(node, exp.Literal) and not node.is_string


def converted_columns(sql: str, catalog: SchemaCatalog) -> set[str]:
    """Columns that take part in multiplication or division by a numeric constant.

    The arithmetic may sit above an aggregate, so ``SUM(distance) / 1609.34``
    counts as a conversion of ``distance``.
    """
    tree = _parse(sql)
    if tree is None:
        return set()
    out: set[str] = set()
    for col, table in _bound_columns(tree, catalog):
        if table is None or catalog.column(table, col.name) is None:
            continue
        node = col
        while node.parent is not None and not isinstance(node.parent, (exp.Select, exp.Subquery)):
            parent = node.parent
            if isinstance(parent, (exp.Div, exp.Mul)):
                other = parent.expression if parent.this is node else parent.this
                if _is_number(_strip_casts(other)):
                    out.add(f"{table}.{col.name.lower()}")
                    break
            node = parent
    return out


def referenced_tables(sql: str, catalog: SchemaCatalog) -> set[str]:
    tree = _parse(sql)
    if tree is None:
        return set()
    return {t.name.lower() for t in tree.find_all(exp.Table) if catalog.table(t.name) is not None}


def bound_columns(sql: str, catalog: SchemaCatalog) -> set[str]:
    """Every column mention that binds to a catalog column, as ``table.column``."""
    tree = _parse(sql)
    if tree is None:
        return set()
    return {
        f"{table}.{col.name.lower()}"
        for col, table in _bound_columns(tree, catalog)
        if table is not None and catalog.column(table, col.name) is not None
    }


def is_zero_aggregate(sql: str, outcome) -> bool:
    """True for a lone ungrouped aggregate row whose values are all 0 or NULL.

    ``SELECT COUNT(*) ... WHERE genre = 'hip hop'`` never comes back empty,
    yet a zero count means the filter matched nothing.
    """
    if not outcome.has_rows or len(outcome.rows) != 1:
        return False
    tree = _parse(sql)
    select = tree if isinstance(tree, exp.Select) else None
    if select is None or select.args.get("group"):
        return False
    if not select.expressions or not all(
        (e.unalias() if isinstance(e, exp.Alias) else e).find(exp.AggFunc) is not None for e in select.expressions
    ):
        return False
    return all(v is None or (isinstance(v, (int, float)) and v == 0) for v in outcome.rows[0])


def matched_nothing(sql: str, outcome) -> bool:
    return outcome.status.value == "empty" or is_zero_aggregate(sql, outcome)
