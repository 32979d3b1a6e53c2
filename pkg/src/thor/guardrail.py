"""Read-only SQL guardrail.

A candidate is allowed only if it is exactly one SELECT (optionally WITH ...
SELECT or a set operation), contains no data-modifying or DDL construct at
any depth, takes no row locks, calls no denied function, and touches no
denied column.

Classification uses three independent views of the text and refuses on any
disagreement:

* the sqlglot AST, read in the Postgres superset dialect;
* a statement count under SQLite's lexical rules (the executing engine);
* a scan of bare keywords outside literals and comments.

The executor only ever runs SQL regenerated from the AST, so anything the
parser silently dropped is never executed either.
"""
from __future__ import annotations

from dataclasses import dataclass, field

from sqlglot import exp
from sqlglot.errors import SqlglotError
from sqlglot.optimizer.scope import Scope, traverse_scope

from thor.dialect import bare_words, count_statements, parse_statements
from thor.domain import (
    Classification,
    ColumnRef,
    GuardrailVerdict,
    RefusalReason,
    SchemaCatalog,
    SqlCandidate,
)

DEFAULT_DENIED_FUNCTIONS = frozenset(
    {
        # sqlite
        "load_extension",
        "readfile",
        "writefile",
        "edit",
        "fts3_tokenizer",
        "sqlite_compileoption_get",
        "zipfile",
        "sqlar_compress",
        "sqlar_uncompress",
        # postgres
        "pg_read_file",
        "pg_read_binary_file",
        "pg_ls_dir",
        "pg_stat_file",
        "pg_sleep",
        "pg_terminate_backend",
        "pg_cancel_backend",
        "pg_reload_conf",
        "pg_advisory_lock",
        "pg_advisory_xact_lock",
        "lo_import",
        "lo_export",
        "lo_unlink",
        "dblink",
        "dblink_exec",
        "set_config",
        "nextval",
        "setval",
        "query_to_xml",
    }
)

_WRITE_NODES = (exp.Insert, exp.Update, exp.Delete, exp.Merge, exp.Copy)
_DDL_NODES = tuple(
    getattr(exp, name)
    for name in ("Create", "Drop", "Alter", "AlterTable", "TruncateTable", "Grant", "Revoke", "Pragma", "Attach", "Detach")
    if hasattr(exp, name)
)
_NON_SELECT_NODES = tuple(
    getattr(exp, name)
    for name in ("Command", "Transaction", "Commit", "Rollback", "Set", "Use", "Values", "Describe", "Show", "Analyze")
    if hasattr(exp, name)
)

_WRITE_WORDS = {"INSERT", "UPDATE", "DELETE", "MERGE", "UPSERT", "REPLACE", "INTO", "COPY"}
_DDL_WORDS = {
    "DROP",
    "CREATE",
    "ALTER",
    "TRUNCATE",
    "ATTACH",
    "DETACH",
    "PRAGMA",
    "VACUUM",
    "REINDEX",
    "GRANT",
    "REVOKE",
}
_LOCK_PREFIXES = {"FOR", "KEY"}
_PAREN_KEYWORDS = {
    "AND", "OR", "NOT", "AS", "IN", "IF", "CASE", "WHEN", "THEN", "ELSE", "ON", "USING", "OVER",
    "FILTER", "EXISTS", "FROM", "WHERE", "SELECT", "JOIN", "VALUES", "ANY", "ALL", "SOME", "WITH",
    "BY", "HAVING", "UNION", "INTERSECT", "EXCEPT", "LATERAL", "IS", "LIKE", "ILIKE", "BETWEEN",
}


@dataclass(frozen=True)
class GuardrailPolicy:
    allow_ctes: bool = True
    allow_set_operations: bool = True
    denied_columns: frozenset[str] = frozenset()
    denied_functions: frozenset[str] = DEFAULT_DENIED_FUNCTIONS
    max_statement_length: int = 20000

    def __post_init__(self):
        object.__setattr__(self, "denied_columns", frozenset(c.lower() for c in self.denied_columns))
        object.__setattr__(self, "denied_functions", frozenset(f.lower() for f in self.denied_functions))


@dataclass(frozen=True)
class Classified:
    classification: Classification
    referenced_columns: frozenset[str] | None = None
    column_refs: tuple[ColumnRef, ...] = ()
    functions: frozenset[str] = frozenset()
    detail: str = ""
    tree: exp.Expression | None = field(default=None, compare=False, repr=False)


def _keyword_class(word: str) -> Classification | None:
    if word in _WRITE_WORDS:
        return Classification.WRITE
    if word in _DDL_WORDS:
        return Classification.DDL
    return None


def _command_class(node: exp.Expression) -> Classification:
    word = node.this.upper() if isinstance(node.this, str) else str(node.this or "").upper()
    return _keyword_class(word.split()[0] if word else "") or Classification.NON_SELECT


def _scan_tree(tree: exp.Expression) -> tuple[Classification, str] | None:
    """Return the first write/DDL/non-select construct found anywhere in the tree."""
    for node in tree.walk():
        if isinstance(node, _WRITE_NODES):
            return Classification.WRITE, type(node).__name__.upper()
        if isinstance(node, _DDL_NODES):
            return Classification.DDL, type(node).__name__.upper()
        if isinstance(node, exp.Select) and node.args.get("into") is not None:
            return Classification.DDL, "SELECT INTO"
        if isinstance(node, exp.Command):
            return _command_class(node), str(node.this).upper()
    return None


def _scan_words(sql: str) -> tuple[Classification, str] | None:
    for word, prev, nxt in bare_words(sql):
        if word == "REPLACE" and nxt == "(":
            continue
        if word in ("UPDATE", "SHARE") and prev in _LOCK_PREFIXES:
            continue
        found = _keyword_class(word)
        if found is not None:
            return found, word
    return None


def _has_locks(tree: exp.Expression) -> bool:
    return any(node.args.get("locks") for node in tree.find_all(exp.Select))


def _function_names(tree: exp.Expression, sql: str) -> frozenset[str]:
    names = set()
    for node in tree.find_all(exp.Func):
        if isinstance(node, exp.Anonymous):
            names.add(node.name.lower())
        else:
            names.add(node.sql_name().lower())
    for word, _, nxt in bare_words(sql):
        if nxt == "(":
            names.add(word.lower())
    return frozenset(n for n in names if n.upper() not in _PAREN_KEYWORDS)


def _scope_chain(scope: Scope):
    while scope is not None:
        yield scope
        scope = scope.parent


def _base_tables(scope: Scope) -> tuple[str, ...]:
    return tuple(
        sorted({source.name.lower() for _, source in scope.selected_sources.values() if isinstance(source, exp.Table)})
    )


def _lookup_source(scope: Scope, qualifier: str):
    for s in _scope_chain(scope):
        if qualifier in s.sources:
            return s.sources[qualifier]
    return None


def _collect_refs(tree: exp.Expression) -> tuple[ColumnRef, ...]:
    refs: list[ColumnRef] = []
    for scope in traverse_scope(tree):
        local = _base_tables(scope)
        outer = tuple(sorted({t for s in list(_scope_chain(scope))[1:] for t in _base_tables(s)}))
        has_derived = any(isinstance(source, Scope) for _, source in scope.selected_sources.values())
        for col in scope.columns:
            name = col.name.lower()
            qualifier = col.table.lower()
            if qualifier:
                source = _lookup_source(scope, qualifier)
                if isinstance(source, exp.Table):
                    refs.append(ColumnRef(name, source.name.lower(), local, outer))
                elif source is None:
                    refs.append(ColumnRef(name, qualifier, local, outer))
                continue
            if not local and not outer:
                continue
            if len(local) == 1 and not has_derived:
                refs.append(ColumnRef(name, local[0], local, outer, inferred=True))
            else:
                refs.append(ColumnRef(name, None, local, outer))
        if isinstance(scope.expression, exp.Select):
            for proj in scope.expression.expressions:
                if isinstance(proj, exp.Star):
                    refs.append(ColumnRef("*", None, local, outer, is_star=True))
                elif isinstance(proj, exp.Column) and isinstance(proj.this, exp.Star):
                    source = _lookup_source(scope, proj.table.lower())
                    if isinstance(source, exp.Table):
                        refs.append(ColumnRef("*", source.name.lower(), local, outer, is_star=True))
                    elif source is None:
                        refs.append(ColumnRef("*", proj.table.lower(), local, outer, is_star=True))
    # dedupe while keeping first-seen order
    return tuple(dict.fromkeys(refs))


def classify(sql_text: str) -> Classified:
    """Classify ``sql_text``. Never raises; bad input maps to ``unparseable``."""
    if not sql_text or not sql_text.strip():
        return Classified(Classification.UNPARSEABLE, detail="empty input")
    lexical_count = count_statements(sql_text)
    if lexical_count == 0:
        return Classified(Classification.UNPARSEABLE, detail="only comments")
    try:
        statements = parse_statements(sql_text)
    except (SqlglotError, ValueError, RecursionError) as err:
        # the other two views can still name what the parser choked on
        if lexical_count > 1:
            return Classified(Classification.MULTI_STATEMENT, detail=f"{lexical_count} statements")
        found = _scan_words(sql_text)
        if found is not None:
            return Classified(found[0], detail=found[1])
        return Classified(Classification.UNPARSEABLE, detail=str(err).splitlines()[0][:200])
    if not statements:
        return Classified(Classification.UNPARSEABLE, detail="no statement")
    if len(statements) > 1 or lexical_count > 1:
        return Classified(Classification.MULTI_STATEMENT, detail=f"{max(len(statements), lexical_count)} statements")

    tree = statements[0]
    found = _scan_tree(tree)
    if found is not None:
        return Classified(found[0], detail=found[1], tree=tree)
    if not isinstance(tree, (exp.Select, exp.SetOperation, exp.Subquery)):
        return Classified(Classification.NON_SELECT, detail=type(tree).__name__.upper(), tree=tree)
    found = _scan_words(sql_text)
    if found is not None:
        return Classified(found[0], detail=found[1], tree=tree)
    if _has_locks(tree):
        return Classified(Classification.LOCKING_SELECT, detail="row lock", tree=tree)
    try:
        refs = _collect_refs(tree)
    except (SqlglotError, ValueError, KeyError, AttributeError, RecursionError) as err:
        return Classified(Classification.UNPARSEABLE, detail=f"scope analysis failed: {err}"[:200], tree=tree)
    return Classified(
        Classification.SINGLE_SELECT,
        referenced_columns=frozenset(r.display() for r in refs),
        column_refs=refs,
        functions=_function_names(tree, sql_text),
        tree=tree,
    )


def make_candidate(sql_text: str, attempt_number: int) -> tuple[SqlCandidate, Classified]:
    c = classify(sql_text)
    candidate = SqlCandidate(
        sql_text=sql_text,
        attempt_number=attempt_number,
        classification=c.classification,
        referenced_columns=c.referenced_columns,
        column_refs=c.column_refs,
        functions=c.functions,
    )
    return candidate, c


def _resolve(refs, catalog: SchemaCatalog):
    resolved: set[str] = set()
    unresolved: list[str] = []
    possible: set[str] = set()

    def owners(name, tables):
        return [t for t in tables if catalog.column(t, name) is not None]

    for ref in refs:
        if ref.is_star:
            tables = [ref.table] if ref.table else list(ref.scope_tables)
            for t in tables:
                meta = catalog.table(t)
                if meta is None:
                    unresolved.append(f"{t}.*")
                    continue
                resolved.update(f"{meta.name.lower()}.{c.name.lower()}" for c in meta.columns)
            continue
        if ref.table is not None:
            if catalog.column(ref.table, ref.name) is not None:
                resolved.add(f"{ref.table}.{ref.name}")
            elif ref.inferred:
                # single-table scope guess failed; the name may live in an outer scope
                hits = owners(ref.name, ref.outer_tables)
                if len(hits) == 1:
                    resolved.add(f"{hits[0]}.{ref.name}")
                else:
                    unresolved.append(ref.name)
                    possible.update(f"{t}.{ref.name}" for t in hits)
            else:
                unresolved.append(f"{ref.table}.{ref.name}")
                possible.add(f"{ref.table}.{ref.name}")
            continue
        hits = owners(ref.name, ref.scope_tables) or owners(ref.name, ref.outer_tables)
        if len(hits) == 1:
            resolved.add(f"{hits[0]}.{ref.name}")
        else:
            unresolved.append(ref.name)
            possible.update(f"{t}.{ref.name}" for t in hits)
    return frozenset(resolved), sorted(set(unresolved)), frozenset(possible)


def resolve_columns(refs, catalog: SchemaCatalog) -> tuple[frozenset[str], list[str]]:
    """Resolve column references against the catalog.

    Bare names bind to the unique FROM-set table holding them; names held by
    two or more tables, or by none, come back unresolved. ``*`` expands to
    every column of the tables in scope.
    """
    resolved, unresolved, _ = _resolve(refs, catalog)
    return resolved, unresolved


_CLASS_TO_REASON = {
    Classification.UNPARSEABLE: RefusalReason.UNPARSEABLE,
    Classification.MULTI_STATEMENT: RefusalReason.MULTI_STATEMENT,
    Classification.WRITE: RefusalReason.WRITE_DETECTED,
    Classification.DDL: RefusalReason.DDL_DETECTED,
    Classification.NON_SELECT: RefusalReason.NOT_SELECT,
    Classification.LOCKING_SELECT: RefusalReason.LOCKING_CLAUSE,
}


def _refuse(reason: RefusalReason, *detail: str, columns=None) -> GuardrailVerdict:
    return GuardrailVerdict("refused", reason, tuple(detail), columns)


def enforce(candidate: SqlCandidate, policy: GuardrailPolicy, catalog: SchemaCatalog | None) -> GuardrailVerdict:
    """Decide whether ``candidate`` may run.

    Rules are checked in a fixed order and the first failure is reported:
    too_long, unparseable, multi_statement, write/ddl (or any other non-select
    statement), locking_clause, denied_function, unauthorized_column.
    """
    if len(candidate.sql_text) > policy.max_statement_length:
        return _refuse(RefusalReason.TOO_LONG, f"{len(candidate.sql_text)} > {policy.max_statement_length}")
    reason = _CLASS_TO_REASON.get(candidate.classification)
    if reason is not None:
        return _refuse(reason)

    refs = candidate.column_refs
    if catalog is not None:
        resolved, _, possible = _resolve(refs, catalog)
        denied = policy.denied_columns | catalog.denied_columns
    else:
        resolved = frozenset(r.display() for r in refs if r.table and not r.is_star)
        possible = frozenset()
        denied = policy.denied_columns

    if not policy.allow_ctes or not policy.allow_set_operations:
        tree = classify(candidate.sql_text).tree
        if not policy.allow_ctes and tree is not None and tree.find(exp.With) is not None:
            return _refuse(RefusalReason.NOT_SELECT, "CTE", columns=resolved)
        if not policy.allow_set_operations and tree is not None and tree.find(exp.SetOperation) is not None:
            return _refuse(RefusalReason.NOT_SELECT, "set operation", columns=resolved)

    bad_functions = sorted(candidate.functions & policy.denied_functions)
    if bad_functions:
        return _refuse(RefusalReason.DENIED_FUNCTION, *bad_functions, columns=resolved)

    hits = sorted((resolved | possible) & denied)
    if hits:
        return _refuse(RefusalReason.UNAUTHORIZED_COLUMN, *hits, columns=resolved)
    return GuardrailVerdict("allowed", None, (), resolved)


def check(sql_text: str, policy: GuardrailPolicy, catalog: SchemaCatalog | None, attempt_number: int = 1):
    """Classify and enforce in one call; returns (candidate, verdict)."""
    candidate, _ = make_candidate(sql_text, attempt_number)
    return candidate, enforce(candidate, policy, catalog)
