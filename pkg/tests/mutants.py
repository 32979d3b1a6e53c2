"""Deterministic mutation corpus for guardrail soundness fuzzing.

Each mutant starts from a known-good SELECT and is bent by one operator:
appended or prepended writes, comment smuggling, CTE-wrapped writes,
SELECT INTO, locking clauses, side-effecting functions, and benign
noise (casing, whitespace, literals that merely contain keywords).
"""
from __future__ import annotations

import random
import re
from collections.abc import Iterator

from reference_sql import ALL_LISTINGS

SIMPLE = [
    "SELECT name, unit_price FROM chinook_track ORDER BY unit_price DESC LIMIT 1",
    "SELECT status, COUNT(*) AS n FROM delivery_requests GROUP BY status",
    "SELECT c.first_name, SUM(i.total) FROM chinook_customer c JOIN chinook_invoice i "
    "ON i.customer_id = c.customer_id GROUP BY c.first_name",
    "SELECT * FROM regions",
    "SELECT 1",
]


def payloads(evil_path: str) -> list[str]:
    return [
        "DELETE FROM delivery_requests",
        "DELETE FROM chinook_invoice_line WHERE invoice_line_id > 10",
        "UPDATE chinook_track SET unit_price = 0",
        "UPDATE delivery_requests SET status = 'delivered' WHERE status = 'assigned'",
        "INSERT INTO regions (id, name) VALUES (999, 'Nowhere')",
        "INSERT INTO regions SELECT id + 1000, name FROM regions",
        "REPLACE INTO regions (id, name) VALUES (1, 'Renamed')",
        "INSERT OR REPLACE INTO regions (id, name) VALUES (2, 'Renamed')",
        "DROP TABLE chinook_invoice",
        "DROP TABLE IF EXISTS regions",
        "CREATE TABLE pwned (x INTEGER)",
        "CREATE TABLE pwned AS SELECT * FROM chinook_customer",
        "CREATE TEMP TABLE scratch (x INTEGER)",
        "CREATE INDEX pwn_idx ON chinook_track (name)",
        "CREATE VIEW pwn_view AS SELECT 1",
        "CREATE TRIGGER pwn_trg AFTER INSERT ON regions BEGIN DELETE FROM regions; END",
        "ALTER TABLE delivery_requests ADD COLUMN pwned INTEGER",
        "ALTER TABLE regions RENAME TO regions_old",
        "TRUNCATE delivery_requests",
        "VACUUM",
        "REINDEX",
        "ANALYZE",
        "PRAGMA user_version = 7",
        "PRAGMA journal_mode = WAL",
        f"ATTACH DATABASE '{evil_path}' AS evil",
        f"VACUUM INTO '{evil_path}'",
        "BEGIN; DELETE FROM regions; COMMIT",
        "GRANT ALL ON delivery_requests TO public",
        "COPY delivery_requests TO '/tmp/out.csv'",
        "MERGE INTO regions r USING accounts a ON r.id = a.id WHEN MATCHED THEN DELETE",
        "SAVEPOINT s1",
        "DELETE FROM regions RETURNING *",
    ]


def _jitter_case(text: str, rng: random.Random) -> str:
    def flip(m: re.Match) -> str:
        word = m.group(0)
        mode = rng.randrange(3)
        return word.upper() if mode == 0 else word.lower() if mode == 1 else word.capitalize()

    return re.sub(r"\b(select|from|where|delete|update|insert|drop|create|with|as|into|set)\b", flip, text, flags=re.I)


def _jitter_space(text: str, rng: random.Random) -> str:
    sep = rng.choice([" ", "  ", "\n", "\t", "\n\n  ", " \r\n"])
    return text.replace(" ", sep, rng.randrange(1, 4))


def _operators(stmt: str, pay: str, evil_path: str) -> list[str]:
    body = stmt.rstrip().rstrip(";")
    return [
        f"{body}; {pay}",
        f"{body};\n{pay};",
        f"{pay}; {body}",
        f"{body} /* trailing */; {pay}",
        f"{body}\n-- harmless note\n; {pay}",
        f"{body} --\n; {pay}",
        f"/* ; */ {pay}",
        f"{body} /* ; {pay} */",
        f"{body} -- ; {pay}",
        f"/*! {pay} */ {body}",
        f"{body};;{pay};;",
        f"{body}\n{pay}",
        f"WITH x AS ({pay} RETURNING *) SELECT * FROM x",
        f"WITH x AS ({body}) {pay}",
        f"EXPLAIN {pay}",
        f"EXPLAIN ANALYZE {pay}",
        f"{body} FOR UPDATE",
        f"{body} FOR SHARE",
        f"{body} FOR NO KEY UPDATE",
        f"SELECT * INTO pwned FROM ({body}) AS q",
        f"CREATE TABLE pwned AS {body}",
        f"INSERT INTO regions (id, name) SELECT 5000, 'x' FROM ({body}) AS q LIMIT 1",
        f"SELECT load_extension('{evil_path}')",
        f"SELECT pg_sleep(5), * FROM ({body}) AS q",
        f"SELECT writefile('{evil_path}', 'x')",
        f"SELECT '{pay}' AS smuggled",
        f'SELECT 1 AS "{pay.replace(chr(34), "")}"',
        body,
        body + ";",
    ]


def generate(count: int, evil_path: str, seed: int = 17) -> Iterator[str]:
    """Yield ``count`` distinct mutants."""
    rng = random.Random(seed)
    bases = list(ALL_LISTINGS.values()) + SIMPLE
    pays = payloads(evil_path)
    seen: set[str] = set()
    while len(seen) < count:
        stmt = rng.choice(bases).strip()
        ops = _operators(stmt, rng.choice(pays), evil_path)
        text = rng.choice(ops)
        roll = rng.random()
        if roll < 0.4:
            text = _jitter_case(text, rng)
        elif roll < 0.7:
            text = _jitter_space(text, rng)
        if text in seen:
            continue
        seen.add(text)
        yield text
