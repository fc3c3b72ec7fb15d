"""Record/blob store tests: atomicity, TTL, durability, key hygiene."""

import json
import os
import threading

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pp2pp.clockwork import ManualClock
from pp2pp.errors import DuplicateKey, KeyRejected, Missing
from pp2pp.store import BlobStore, RecordStore


class TestBlobStore:
    def test_put_get_roundtrip(self, tmp_path):
        blobs = BlobStore(tmp_path)
        blobs.put("pubkey", "alice", b"\x00\x01binary\xff")
        assert blobs.get("pubkey", "alice") == b"\x00\x01binary\xff"

    def test_get_absent_is_missing(self, tmp_path):
        blobs = BlobStore(tmp_path)
        with pytest.raises(Missing):
            blobs.get("pubkey", "nobody")

    @pytest.mark.parametrize("bad", ["../../etc", "a/b", "", "..", ".", "a b", "x\x00y"])
    def test_traversal_keys_rejected(self, tmp_path, bad):
        blobs = BlobStore(tmp_path)
        with pytest.raises(KeyRejected):
            blobs.put("ns", bad, b"x")
        with pytest.raises(KeyRejected):
            blobs.get(bad, "k")

    def test_overwrite(self, tmp_path):
        blobs = BlobStore(tmp_path)
        blobs.put("ns", "k", b"v1")
        blobs.put("ns", "k", b"v2")
        assert blobs.get("ns", "k") == b"v2"

    def test_in_memory_mode(self):
        blobs = BlobStore(None)
        blobs.put("ns", "k", b"v")
        assert blobs.get("ns", "k") == b"v"

    @settings(max_examples=25, deadline=None)
    @given(payload=st.binary(min_size=0, max_size=4096))
    def test_byte_exact_roundtrip(self, payload):
        blobs = BlobStore(None)
        blobs.put("ns", "key", payload)
        assert blobs.get("ns", "key") == payload

    def test_megabyte_roundtrip(self, tmp_path):
        blobs = BlobStore(tmp_path)
        payload = os.urandom(1024 * 1024)
        blobs.put("big", "one", payload)
        assert blobs.get("big", "one") == payload


class TestRecordStore:
    def test_insert_take_take(self):
        store = RecordStore()
        store.insert("t", "k", {"v": 1})
        assert store.take("t", "k") == {"v": 1}
        with pytest.raises(Missing):
            store.take("t", "k")

    def test_insert_collision(self):
        store = RecordStore()
        store.insert("t", "k", {"v": 1})
        with pytest.raises(DuplicateKey):
            store.insert("t", "k", {"v": 2})

    def test_ttl_expiry_behaves_as_missing(self):
        clock = ManualClock()
        store = RecordStore(clock=clock)
        store.insert("t", "k", {"v": 1}, ttl_ms=1000)
        clock.advance(2000)
        with pytest.raises(Missing):
            store.get("t", "k")
        with pytest.raises(Missing):
            store.take("t", "k")

    def test_expired_key_can_be_reinserted(self):
        clock = ManualClock()
        store = RecordStore(clock=clock)
        store.insert("t", "k", {"v": 1}, ttl_ms=1000)
        clock.advance(2000)
        store.insert("t", "k", {"v": 2}, ttl_ms=1000)
        assert store.get("t", "k") == {"v": 2}

    def test_racing_takes_yield_one_winner(self):
        store = RecordStore()
        store.insert("t", "k", {"v": 1})
        wins: list[dict] = []
        barrier = threading.Barrier(64)

        def contender():
            barrier.wait()
            try:
                wins.append(store.take("t", "k"))
            except Missing:
                pass

        threads = [threading.Thread(target=contender) for _ in range(64)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        assert len(wins) == 1

    def test_mutate_is_atomic_under_contention(self):
        store = RecordStore()
        store.insert("t", "counter", {"n": 0})

        def bump():
            for _ in range(100):
                store.mutate("t", "counter", lambda r: {"n": r["n"] + 1})

        threads = [threading.Thread(target=bump) for _ in range(8)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        assert store.get("t", "counter") == {"n": 800}

    def test_get_returns_copy(self):
        store = RecordStore()
        store.insert("t", "k", {"inner": [1]})
        store.get("t", "k")["inner"].append(2)
        assert store.get("t", "k") == {"inner": [1]}

    def test_hostile_strings_stored_inertly(self):
        store = RecordStore()
        hostile = "'; DROP TABLE users; --\" OR 1=1"
        store.insert("users", "mallory", {"bio": hostile})
        assert store.get("users", "mallory")["bio"] == hostile

    def test_keys_lists_live_records(self):
        clock = ManualClock()
        store = RecordStore(clock=clock)
        store.insert("t", "a", {}, ttl_ms=1000)
        store.insert("t", "b", {})
        clock.advance(2000)
        assert store.keys("t") == ["b"]

    def test_sweep_drops_expired(self):
        clock = ManualClock()
        store = RecordStore(clock=clock)
        store.insert("t", "a", {}, ttl_ms=1000)
        store.insert("t", "b", {})
        clock.advance(2000)
        assert store.sweep() == 1
        assert store.keys("t") == ["b"]


class TestDurability:
    def test_journal_replay_restores_state(self, tmp_path):
        path = tmp_path / "records.jsonl"
        store = RecordStore(path)
        store.insert("users", "alice", {"email": "a@x"})
        store.insert("tokens", "t1", {"v": 1})
        store.take("tokens", "t1")
        store.put("users", "alice", {"email": "a2@x"})
        store.close()

        reopened = RecordStore(path)
        assert reopened.get("users", "alice") == {"email": "a2@x"}
        with pytest.raises(Missing):
            reopened.get("tokens", "t1")

    def test_torn_final_line_is_discarded(self, tmp_path):
        path = tmp_path / "records.jsonl"
        store = RecordStore(path)
        store.insert("t", "a", {"v": 1})
        store.insert("t", "b", {"v": 2})
        store.close()

        raw = path.read_bytes()
        path.write_bytes(raw[:-7])  # simulate a crash mid-append
        reopened = RecordStore(path)
        assert reopened.get("t", "a") == {"v": 1}
        with pytest.raises(Missing):
            reopened.get("t", "b")

    def test_journal_lines_are_json(self, tmp_path):
        path = tmp_path / "records.jsonl"
        store = RecordStore(path)
        store.insert("t", "k", {"v": 1}, ttl_ms=5000)
        store.close()
        lines = [json.loads(l) for l in path.read_text().splitlines()]
        assert lines[0]["op"] == "put"
        assert lines[0]["table"] == "t"
        assert lines[0]["expires_at"] is not None

    def test_batch_is_all_or_nothing_across_crash(self, tmp_path):
        path = tmp_path / "records.jsonl"
        store = RecordStore(path)
        store.put("accounts", "alice", {"balance": 100})
        store.put("accounts", "bob", {"balance": 0})
        store.put_many(
            [
                ("accounts", "alice", {"balance": 70}),
                ("accounts", "bob", {"balance": 30}),
            ]
        )
        store.close()

        # tearing the batch line anywhere must revert BOTH sides
        raw = path.read_bytes()
        torn = raw[: raw.rindex(b'{"op":"batch"') + 40]
        path.write_bytes(torn)
        reopened = RecordStore(path)
        assert reopened.get("accounts", "alice") == {"balance": 100}
        assert reopened.get("accounts", "bob") == {"balance": 0}

    def test_batch_survives_clean_reopen(self, tmp_path):
        path = tmp_path / "records.jsonl"
        store = RecordStore(path)
        store.put_many([("t", "a", {"v": 1}), ("t", "b", {"v": 2})])
        store.close()
        reopened = RecordStore(path)
        assert reopened.get("t", "a") == {"v": 1}
        assert reopened.get("t", "b") == {"v": 2}

    def test_reopen_after_many_ops_matches(self, tmp_path):
        path = tmp_path / "records.jsonl"
        store = RecordStore(path)
        for i in range(200):
            store.put("t", f"k{i % 20}", {"v": i})
        expected = {k: store.get("t", k) for k in store.keys("t")}
        store.close()
        reopened = RecordStore(path)
        assert {k: reopened.get("t", k) for k in reopened.keys("t")} == expected
