"""Fixture databases: schema DDL plus deterministic seed generators.

Seeds are laid out around ``REFERENCE_NOW`` (2025-04-17). Both fixtures hold
rows dated after that instant, which the future-date checks rely on.
"""
from __future__ import annotations

import random
import sqlite3
from datetime import datetime, timedelta
from importlib import resources
from pathlib import Path

import yaml

REFERENCE_NOW = "2025-04-17T09:30:00Z"
FIXTURES = ("chinook", "logistics", "empty")

TS = "%Y-%m-%d %H:%M:%S"

GENRES = [
    "Rock",
    "Jazz",
    "Metal",
    "Alternative & Punk",
    "Blues",
    "Latin",
    "Reggae",
    "Pop",
    "Hip Hop/Rap",
    "Electronica/Dance",
    "Classical",
    "R&B/Soul",
]

ALBUMS = [
    "Back in Black",
    "Kind of Blue",
    "Master of Puppets",
    "Nevermind",
    "Blue Train",
    "Buena Vista",
    "Legend",
    "Thriller",
    "Illmatic",
    "Discovery",
    "The Four Seasons",
    "Songs in the Key of Life",
]

COUNTRIES = ["USA", "Canada", "Brazil", "Germany", "France", "United Kingdom", "India", "Australia"]
FIRST = ["Ana", "Ben", "Chen", "Dara", "Eli", "Fatima", "Gus", "Hana", "Ivan", "Jo", "Kai", "Lena"]
LAST = ["Silva", "Okafor", "Wang", "Kowalski", "Moreau", "Patel", "Schmidt", "Tanaka", "Novak", "Reyes"]

STATUSES = ["created", "assigned", "delivered", "canceled"]
STATUS_WEIGHTS = [0.35, 0.30, 0.20, 0.15]
CHANNELS = ["Facebook", "Google", "Referral", "Craigslist", "Indeed", None]
REGIONS = ["North", "South", "East", "West", "Central", "Coastal"]


def schema_sql(name: str) -> str:
    return resources.files(__name__).joinpath(f"{name}.sql").read_text()


def annotations(name: str) -> dict:
    path = resources.files(__name__).joinpath(f"{name}.yaml")
    if not path.is_file():
        return {}
    return yaml.safe_load(path.read_text()) or {}


def _stamp(start: datetime, span_days: int, rng: random.Random) -> str:
    return (start + timedelta(seconds=rng.randrange(span_days * 86400))).strftime(TS)


def _seed_chinook(conn: sqlite3.Connection, rng: random.Random) -> None:
    customers = []
    for cid in range(1, 21):
        first, last = rng.choice(FIRST), rng.choice(LAST)
        customers.append((cid, first, last, f"{first}.{last}{cid}@example.com".lower(), rng.choice(COUNTRIES)))
    conn.executemany("INSERT INTO chinook_customer VALUES (?, ?, ?, ?, ?)", customers)

    tracks = []
    for tid in range(1, 61):
        idx = rng.randrange(len(GENRES))
        price = 0.99 if rng.random() < 0.8 else 1.29
        tracks.append((tid, f"Track {tid:02d}", ALBUMS[idx], GENRES[idx], price))
    # exactly one premium track so "highest unit price" has a unique answer
    tracks[41] = (42, "Thriller (Video)", "Thriller", "Pop", 1.99)
    # extra hip hop spellings; none equals 'hip hop' exactly
    tracks[7] = (8, "N.Y. State of Mind", "Illmatic", "Hip Hop/Rap", 0.99)
    tracks[15] = (16, "Represent", "Illmatic", "hip-hop", 0.99)
    tracks[23] = (24, "Halftime", "Illmatic", "Hip-Hop", 0.99)
    conn.executemany("INSERT INTO chinook_track VALUES (?, ?, ?, ?, ?)", tracks)
    prices = {t[0]: t[4] for t in tracks}

    start = datetime(2023, 10, 1)
    line_id = 1
    for iid in range(1, 161):
        # about one invoice in seven lands after the reference date
        when = _stamp(start, 653, rng)
        lines = []
        for _ in range(rng.randint(1, 4)):
            tid = rng.randint(1, 60)
            qty = rng.randint(1, 2)
            lines.append((line_id, iid, tid, prices[tid], qty))
            line_id += 1
        total = round(sum(p * q for *_, p, q in lines), 2)
        conn.execute(
            "INSERT INTO chinook_invoice VALUES (?, ?, ?, ?)", (iid, rng.randint(1, 20), when, total)
        )
        conn.executemany("INSERT INTO chinook_invoice_line VALUES (?, ?, ?, ?, ?)", lines)


def _seed_logistics(conn: sqlite3.Connection, rng: random.Random) -> None:
    conn.executemany("INSERT INTO regions VALUES (?, ?)", list(enumerate(REGIONS, start=1)))
    conn.executemany(
        "INSERT INTO accounts VALUES (?, ?, ?)",
        [(aid, f"Account {aid:02d}", rng.randint(1, len(REGIONS))) for aid in range(1, 31)],
    )
    users = []
    for uid in range(1, 81):
        token = f"inv-{rng.randrange(16**6):06x}" if rng.random() < 0.7 else None
        users.append((uid, f"user{uid}@example.com", token, _stamp(datetime(2022, 1, 1), 1000, rng)))
    conn.executemany("INSERT INTO users VALUES (?, ?, ?, ?)", users)
    conn.executemany(
        "INSERT INTO driver_details VALUES (?, ?, ?, ?)",
        [
            (did, did + 30, rng.choice(CHANNELS), rng.choice(["car", "van", "bike"]))
            for did in range(1, 51)
        ],
    )
    requests = []
    start = datetime(2023, 6, 1)
    for rid in range(1, 401):
        status = rng.choices(STATUSES, STATUS_WEIGHTS)[0]
        requests.append(
            (
                rid,
                rng.randint(1, 30),
                status,
                _stamp(start, 760, rng),
                round(rng.uniform(500.0, 40000.0), 1),
                rng.randint(5000, 60000),
            )
        )
    conn.executemany("INSERT INTO delivery_requests VALUES (?, ?, ?, ?, ?, ?)", requests)


_SEEDERS = {"chinook": _seed_chinook, "logistics": _seed_logistics}


def build_fixture(name: str, path: str | Path, seed: int = 20250417) -> Path:
    """Create fixture database ``name`` at ``path`` (overwriting it)."""
    if name not in FIXTURES:
        raise ValueError(f"unknown fixture {name!r}; expected one of {FIXTURES}")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if path.exists():
        path.unlink()
    conn = sqlite3.connect(path)
    try:
        if name != "empty":
            conn.executescript(schema_sql(name))
            _SEEDERS[name](conn, random.Random(seed))
        conn.commit()
    finally:
        conn.close()
    return path
