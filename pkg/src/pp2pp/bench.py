"""Benchmark mode: time registration and authentication ceremonies.

Runs real HTTP ceremonies over loopback against a live server with the
software card and reports per-run and average rows in the registration /
authentication table layout: challenge-creation time, verify time, and an
independently measured end-to-end total (the total includes card-side work,
so the columns are not expected to add up).
"""

from __future__ import annotations

import os
import time
from dataclasses import dataclass

from . import crypto
from .authenticator import SmartCard
from .client import ApiClient

BENCH_UV = "bench-uv"

COLUMNS = {
    "register": ("Time to create challenge", "Time to verify and register key"),
    "auth": ("Time to create challenge", "Time to verify & authorize"),
}


@dataclass
class TimingRecord:
    op: str
    t_create_challenge: float  # ms
    t_verify: float  # ms
    t_total: float  # ms


def _ms(start: float, end: float) -> float:
    return (end - start) * 1000.0


def _register_once(api: ApiClient, card: SmartCard, username: str) -> TimingRecord:
    t0 = time.perf_counter()
    begin = api.call(
        "POST", "/register/begin", {"username": username, "email": f"{username}@bench.local"}
    )
    t1 = time.perf_counter()
    assert begin.ok, begin.body
    challenge = crypto.unb64u(begin.body["challenge"])
    _, pub, assertion = card.make_credential(
        begin.body["rp_id"], username.encode(), challenge, BENCH_UV
    )
    t2 = time.perf_counter()
    finish = api.call(
        "POST",
        "/register/finish",
        {"username": username, "public_key": pub, "assertion": assertion.to_wire()},
    )
    t3 = time.perf_counter()
    assert finish.ok, finish.body
    return TimingRecord("register", _ms(t0, t1), _ms(t2, t3), _ms(t0, t3))


def _authenticate_once(api: ApiClient, card: SmartCard, username: str) -> TimingRecord:
    t0 = time.perf_counter()
    begin = api.call("POST", "/auth/begin", {"username": username})
    t1 = time.perf_counter()
    assert begin.ok, begin.body
    challenge = crypto.unb64u(begin.body["challenge"])
    assertion = card.get_assertion(begin.body["rp_id"], challenge, uv_input=BENCH_UV)
    t2 = time.perf_counter()
    finish = api.call(
        "POST", "/auth/finish", {"username": username, "assertion": assertion.to_wire()}
    )
    t3 = time.perf_counter()
    assert finish.ok, finish.body
    exchanged = api.call("POST", "/auth/exchange", {"token": finish.body["token"]})
    t4 = time.perf_counter()
    assert exchanged.ok, exchanged.body
    return TimingRecord("auth", _ms(t0, t1), _ms(t2, t3), _ms(t0, t4))


def run_bench(mode: str, n: int, base_url: str) -> list[TimingRecord]:
    """mode: "register" or "auth". Returns one record per run."""
    if mode not in COLUMNS:
        raise ValueError("mode must be register or auth")
    api = ApiClient(base_url)
    card = SmartCard(uv_secret=BENCH_UV)
    run_id = os.urandom(4).hex()  # usernames stay unique across invocations
    records: list[TimingRecord] = []
    if mode == "auth" and n > 0:
        _register_once(api, card, f"bench_auth_{run_id}")  # setup, untimed
    for i in range(n):
        if mode == "register":
            records.append(_register_once(api, card, f"bench_{run_id}_{i}"))
        else:
            records.append(_authenticate_once(api, card, f"bench_auth_{run_id}"))
    return records


def averages(records: list[TimingRecord]) -> TimingRecord | None:
    if not records:
        return None
    n = len(records)
    return TimingRecord(
        op=records[0].op,
        t_create_challenge=sum(r.t_create_challenge for r in records) / n,
        t_verify=sum(r.t_verify for r in records) / n,
        t_total=sum(r.t_total for r in records) / n,
    )


def format_table(mode: str, records: list[TimingRecord]) -> str:
    create_col, verify_col = COLUMNS[mode]
    headers = ["Sl.No.", create_col, verify_col, "Total time for processing"]
    rows = [
        [str(i + 1), f"{r.t_create_challenge:.1f}ms", f"{r.t_verify:.1f}ms", f"{r.t_total:.1f}ms"]
        for i, r in enumerate(records)
    ]
    avg = averages(records)
    if avg is not None:
        rows.append(
            [
                "Average",
                f"{avg.t_create_challenge:.1f}ms",
                f"{avg.t_verify:.1f}ms",
                f"{avg.t_total:.1f}ms",
            ]
        )
    widths = [max(len(h), *(len(r[i]) for r in rows)) if rows else len(h) for i, h in enumerate(headers)]
    lines = ["  ".join(h.ljust(widths[i]) for i, h in enumerate(headers))]
    for row in rows:
        lines.append("  ".join(cell.ljust(widths[i]) for i, cell in enumerate(row)))
    return "\n".join(lines)


def format_csv(mode: str, records: list[TimingRecord]) -> str:
    create_col, verify_col = COLUMNS[mode]
    lines = [f"sl_no,{_slug(create_col)},{_slug(verify_col)},total_time_for_processing_ms"]
    for i, r in enumerate(records):
        lines.append(f"{i + 1},{r.t_create_challenge:.3f},{r.t_verify:.3f},{r.t_total:.3f}")
    avg = averages(records)
    if avg is not None:
        lines.append(
            f"average,{avg.t_create_challenge:.3f},{avg.t_verify:.3f},{avg.t_total:.3f}"
        )
    return "\n".join(lines)


def _slug(column: str) -> str:
    return (
        column.lower().replace(" & ", "_and_").replace(" ", "_").replace("&", "and") + "_ms"
    )
