"""Persistence: blob store for public keys, record store for everything else.

Both are file-backed with an in-memory mode for tests. The record store keeps
typed tables in memory and appends every mutation to a newline-delimited JSON
journal, fsync'd before the call returns, so an acknowledged write survives a
crash. Reopening replays the journal; a torn final line is discarded, giving
prefix semantics. ``take`` is the atomic read-and-delete primitive behind
every single-use guarantee in the protocol: one global lock makes concurrent
takes of a key yield exactly one winner.

There are no string-assembled queries anywhere: access is typed key/record
lookup, so hostile strings (quotes, semicolons) are stored and returned as
inert data.
"""

from __future__ import annotations

import copy
import json
import os
import re
import threading
from pathlib import Path
from typing import Any, Callable, Optional

from .clockwork import SYSTEM_CLOCK, Clock
from .errors import DuplicateKey, KeyRejected, Missing

_SAFE_KEY = re.compile(r"^[A-Za-z0-9_.-]+$")


def _check_key(name: str) -> str:
    """Path-component whitelist; dots-only names would still traverse."""
    if not name or not _SAFE_KEY.match(name) or set(name) <= {"."}:
        raise KeyRejected(f"unsafe key: {name!r}")
    return name


class BlobStore:
    """Namespace/key to bytes. File-backed unless constructed without a directory."""

    def __init__(self, directory: str | Path | None = None):
        self._dir = Path(directory) if directory is not None else None
        self._mem: dict[tuple[str, str], bytes] = {}
        self._lock = threading.Lock()
        if self._dir is not None:
            self._dir.mkdir(parents=True, exist_ok=True)

    def put(self, namespace: str, key: str, data: bytes) -> None:
        _check_key(namespace)
        _check_key(key)
        with self._lock:
            if self._dir is None:
                self._mem[(namespace, key)] = bytes(data)
                return
            ns_dir = self._dir / namespace
            ns_dir.mkdir(parents=True, exist_ok=True)
            tmp = ns_dir / f".{key}.tmp"
            with open(tmp, "wb") as f:
                f.write(data)
                f.flush()
                os.fsync(f.fileno())
            os.replace(tmp, ns_dir / key)

    def get(self, namespace: str, key: str) -> bytes:
        _check_key(namespace)
        _check_key(key)
        with self._lock:
            if self._dir is None:
                try:
                    return self._mem[(namespace, key)]
                except KeyError:
                    raise Missing(f"{namespace}/{key}") from None
            path = self._dir / namespace / key
            try:
                return path.read_bytes()
            except FileNotFoundError:
                raise Missing(f"{namespace}/{key}") from None


class RecordStore:
    """Typed tables of JSON records with TTLs and linearizable take."""

    def __init__(
        self,
        journal_path: str | Path | None = None,
        clock: Clock = SYSTEM_CLOCK,
    ):
        self._clock = clock
        self._lock = threading.RLock()
        # table -> key -> (record, expires_at_ms or None)
        self._tables: dict[str, dict[str, tuple[dict, Optional[int]]]] = {}
        self._journal_path = Path(journal_path) if journal_path else None
        self._journal_file = None
        if self._journal_path is not None:
            self._journal_path.parent.mkdir(parents=True, exist_ok=True)
            self._replay_journal()
            self._journal_file = open(self._journal_path, "ab")

    # -- journal ---------------------------------------------------------

    def _replay_journal(self) -> None:
        if not self._journal_path.exists():
            return
        with open(self._journal_path, "rb") as f:
            for line in f:
                line = line.strip()
                if not line:
                    continue
                try:
                    entry = json.loads(line)
                except json.JSONDecodeError:
                    break  # torn tail from a crash; keep the clean prefix
                self._apply(entry)

    def _apply(self, entry: dict) -> None:
        op = entry["op"]
        if op == "batch":
            for sub in entry["entries"]:
                self._apply(sub)
            return
        table = self._tables.setdefault(entry["table"], {})
        if op == "put":
            table[entry["key"]] = (entry["record"], entry.get("expires_at"))
        elif op == "delete":
            table.pop(entry["key"], None)

    def _append(self, entry: dict) -> None:
        if self._journal_file is None:
            return
        self._journal_file.write(json.dumps(entry, separators=(",", ":")).encode() + b"\n")
        self._journal_file.flush()
        os.fsync(self._journal_file.fileno())

    def close(self) -> None:
        with self._lock:
            if self._journal_file is not None:
                self._journal_file.close()
                self._journal_file = None

    # -- core ops ---------------------------------------------------------

    def _live(self, table: str, key: str) -> Optional[dict]:
        entry = self._tables.get(table, {}).get(key)
        if entry is None:
            return None
        record, expires_at = entry
        if expires_at is not None and self._clock.now_ms() > expires_at:
            return None
        return record

    def insert(self, table: str, key: str, record: dict, ttl_ms: int | None = None) -> None:
        """Create-only write; colliding with a live record raises DuplicateKey."""
        with self._lock:
            if self._live(table, key) is not None:
                raise DuplicateKey(f"{table}/{key}")
            self._write(table, key, record, ttl_ms)

    def put(self, table: str, key: str, record: dict, ttl_ms: int | None = None) -> None:
        """Upsert."""
        with self._lock:
            self._write(table, key, record, ttl_ms)

    def put_many(self, items: list[tuple[str, str, dict]]) -> None:
        """Atomic multi-record upsert: one journal line, so a crash either
        persists every record or none (this is what keeps debit and credit
        inseparable)."""
        with self._lock:
            entries = []
            for table, key, record in items:
                record = copy.deepcopy(record)
                self._tables.setdefault(table, {})[key] = (record, None)
                entries.append(
                    {"op": "put", "table": table, "key": key, "record": record, "expires_at": None}
                )
            self._append({"op": "batch", "entries": entries})

    def _write(self, table: str, key: str, record: dict, ttl_ms: int | None) -> None:
        expires_at = self._clock.now_ms() + ttl_ms if ttl_ms is not None else None
        record = copy.deepcopy(record)
        self._tables.setdefault(table, {})[key] = (record, expires_at)
        self._append(
            {"op": "put", "table": table, "key": key, "record": record, "expires_at": expires_at}
        )

    def get(self, table: str, key: str) -> dict:
        with self._lock:
            record = self._live(table, key)
            if record is None:
                raise Missing(f"{table}/{key}")
            return copy.deepcopy(record)

    def take(self, table: str, key: str) -> dict:
        """Atomic read-and-delete; expired records behave as Missing."""
        with self._lock:
            record = self._live(table, key)
            if record is None:
                raise Missing(f"{table}/{key}")
            del self._tables[table][key]
            self._append({"op": "delete", "table": table, "key": key})
            return record

    def mutate(self, table: str, key: str, fn: Callable[[dict], dict]) -> dict:
        """Atomic read-modify-write of one record; fn gets and returns a dict."""
        with self._lock:
            record = self._live(table, key)
            if record is None:
                raise Missing(f"{table}/{key}")
            entry = self._tables[table][key]
            updated = fn(copy.deepcopy(record))
            expires_at = entry[1]
            self._tables[table][key] = (copy.deepcopy(updated), expires_at)
            self._append(
                {
                    "op": "put",
                    "table": table,
                    "key": key,
                    "record": updated,
                    "expires_at": expires_at,
                }
            )
            return copy.deepcopy(updated)

    def keys(self, table: str) -> list[str]:
        """Live (unexpired) keys, insertion-ordered."""
        with self._lock:
            return [k for k in self._tables.get(table, {}) if self._live(table, k) is not None]

    def sweep(self) -> int:
        """Physically drop expired records; returns how many were removed."""
        removed = 0
        with self._lock:
            now = self._clock.now_ms()
            for table, rows in self._tables.items():
                dead = [
                    k
                    for k, (_, expires_at) in rows.items()
                    if expires_at is not None and now > expires_at
                ]
                for k in dead:
                    del rows[k]
                    self._append({"op": "delete", "table": table, "key": k})
                    removed += 1
        return removed


class DataDir:
    """The server's on-disk layout; None paths mean in-memory mode."""

    def __init__(self, root: str | Path | None, clock: Clock = SYSTEM_CLOCK):
        self.root = Path(root) if root is not None else None
        if self.root is not None:
            self.root.mkdir(parents=True, exist_ok=True)
        self.blobs = BlobStore(self.root / "blobs" if self.root else None)
        self.records = RecordStore(
            self.root / "records.jsonl" if self.root else None, clock=clock
        )

    def path(self, name: str) -> Optional[Path]:
        return self.root / name if self.root is not None else None
