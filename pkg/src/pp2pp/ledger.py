"""Accounts, payment tokens, and the transaction state machine.

Money is integer minor units throughout; there is no floating point anywhere
in balance math, so conservation is an exact equality: at every linearization
point the sum of balances equals the sum of initial deposits. All mutations
run inside one ledger lock, making debit/credit pairs, token redemption, and
state transitions atomic; under any concurrency exactly one of n racing
redeemers of a token wins.

Transactions walk a fixed graph:

    Pending -> Acknowledged | Rejected
    Acknowledged -> Settled
    Settled -> Disputed
    Disputed -> Resolved

Direct transfers and token redemptions pass through Pending/Acknowledged
instantly (the payer initiated, or the token is the payee's standing
acceptance) so every history is a path in the same graph. Every transition is
appended to a newline-JSON transaction log, fsync'd, and the log replays to
the exact current balances.
"""

from __future__ import annotations

import json
import os
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional

from . import crypto
from .clockwork import SYSTEM_CLOCK, Clock
from .errors import (
    AccountExists,
    AlreadyConcluded,
    AuthFailure,
    BadAmount,
    DuplicateKey,
    IllegalTransition,
    InsufficientFunds,
    Missing,
    NotParty,
    NotSettled,
    NotYourTxn,
    RedeemFailure,
    ReversalInsufficientFunds,
    SelfRedeem,
    SelfTransfer,
    TokenExpired,
    TokenSpent,
    UnknownAccount,
    UnknownPayee,
    UnknownTxn,
)
from .store import RecordStore

ACCOUNTS = "accounts"
PAYMENT_TOKENS = "payment_tokens"
TRANSACTIONS = "transactions"
TXN_INDEX = "txn_index"

PAYMENT_TOKEN_AD = b"payment-token"
PAYMENT_TOKEN_TTL_MS = 15 * 60 * 1000

LEGAL_TRANSITIONS = {
    None: {"Pending"},
    "Pending": {"Acknowledged", "Rejected"},
    "Acknowledged": {"Settled"},
    "Settled": {"Disputed"},
    "Disputed": {"Resolved"},
    "Rejected": set(),
    "Resolved": set(),
}

CHANNELS = ("QR", "NFC", "LINK", "DIRECT", "REQUEST")
TOKEN_KINDS = ("QR", "NFC", "LINK")


def _check_amount(amount) -> int:
    if not isinstance(amount, int) or isinstance(amount, bool) or amount <= 0:
        raise BadAmount("amount must be a positive integer of minor units")
    return amount


@dataclass
class RedeemResult:
    transaction: dict
    receipt: dict


class Ledger:
    def __init__(
        self,
        records: RecordStore,
        app_key: bytes,
        txn_log_path: str | Path | None = None,
        clock: Clock = SYSTEM_CLOCK,
        on_transition: Optional[Callable[[dict], None]] = None,
    ):
        self.records = records
        self.app_key = app_key
        self.clock = clock
        self.on_transition = on_transition
        self._lock = threading.RLock()
        self._log_path = Path(txn_log_path) if txn_log_path else None
        self._log_file = None
        if self._log_path is not None:
            self._log_path.parent.mkdir(parents=True, exist_ok=True)
            self._reconcile_log()
            self._log_file = open(self._log_path, "ab")

    # -- accounts -----------------------------------------------------------

    def open_account(self, username: str, initial_deposit: int = 0) -> dict:
        """The only mint: conservation is checked against the sum of these."""
        if not isinstance(initial_deposit, int) or initial_deposit < 0:
            raise BadAmount("initial deposit must be a non-negative integer")
        with self._lock:
            account = {
                "username": username,
                "balance": initial_deposit,
                "initial_deposit": initial_deposit,
                "created_at": self.clock.now_ms(),
            }
            try:
                self.records.insert(ACCOUNTS, username, account)
            except DuplicateKey:
                raise AccountExists(username) from None
            self._log({"event": "account_open", "username": username, "deposit": initial_deposit})
            return account

    def balance(self, username: str) -> dict:
        try:
            return self.records.get(ACCOUNTS, username)
        except Missing:
            raise UnknownAccount(username) from None

    def get_history(self, username: str, page: int = 0, size: int = 50) -> list[dict]:
        """Transactions where username is payer or payee, newest first."""
        self.balance(username)  # account must exist
        with self._lock:
            try:
                ids = self.records.get(TXN_INDEX, username)["txns"]
            except Missing:
                ids = []
            newest_first = list(reversed(ids))
            window = newest_first[page * size : (page + 1) * size]
            return [self.records.get(TRANSACTIONS, txn_id) for txn_id in window]

    # -- direct transfer --------------------------------------------------------

    def direct_transfer(self, payer: str, payee: str, amount: int) -> dict:
        """Atomic debit/credit, settled immediately: the payer initiated it."""
        _check_amount(amount)
        if payer == payee:
            raise SelfTransfer()
        with self._lock:
            self.balance(payer)
            try:
                self.records.get(ACCOUNTS, payee)
            except Missing:
                raise UnknownPayee(payee) from None
            txn = self._new_txn(payer, payee, amount, "DIRECT", actor=payer)
            self._transition(txn, "Acknowledged", payer)
            self._settle(txn, actor=payer)
            return txn

    # -- payment tokens ------------------------------------------------------------

    def create_payment_token(
        self, payee: str, kind: str, amount: int | None = None
    ) -> tuple[dict, str]:
        """Mint a payee-bound single-use token; returns (record, presentable form).

        QR presents the sealed payload itself, NFC tags it for the emulated
        proximity channel, LINK wraps it in a redeem URL fragment.
        """
        if kind not in TOKEN_KINDS:
            raise BadAmount(f"kind must be one of {TOKEN_KINDS}")
        if amount is not None:
            _check_amount(amount)
        with self._lock:
            self.balance(payee)
            token_id = crypto.new_auth_token()
            now = self.clock.now_ms()
            payload = json.dumps(
                {"token_id": token_id, "kind": kind, "payee": payee, "amount": amount}
            ).encode()
            sealed = crypto.seal(self.app_key, payload, PAYMENT_TOKEN_AD).to_b64()
            record = {
                "token_id": token_id,
                "kind": kind,
                "payee": payee,
                "amount": amount,
                "state": "Active",
                "created_at": now,
                "expires_at": now + PAYMENT_TOKEN_TTL_MS,
            }
            self.records.insert(PAYMENT_TOKENS, token_id, record)
            if kind == "QR":
                presentable = sealed
            elif kind == "NFC":
                presentable = f"nfc:{sealed}"
            else:
                presentable = f"pp2pp:redeem#{sealed}"
            return record, presentable


    @staticmethod
    def strip_presentable(presentable: str) -> str:
        """Accept any of the three presentable forms and return the sealed payload."""
        if presentable.startswith("nfc:"):
            return presentable[4:]
        if "#" in presentable:
            return presentable.rsplit("#", 1)[1]
        return presentable

    def redeem_payment_token(
        self, payer: str, presentable: str, amount_if_open: int | None = None
    ) -> RedeemResult:
        """Atomically spend a token: flip to Redeemed, move funds, settle.

        If any check fails the token keeps its previous state; in particular a
        broke payer does not burn the payee's token.
        """
        sealed = self.strip_presentable(presentable)
        try:
            blob = crypto.SealedBlob.from_b64(sealed)
            payload = json.loads(crypto.open_blob(self.app_key, blob, PAYMENT_TOKEN_AD))
        except (AuthFailure, ValueError) as exc:
            raise RedeemFailure(str(exc)) from None

        with self._lock:
            try:
                record = self.records.get(PAYMENT_TOKENS, payload["token_id"])
            except Missing:
                raise RedeemFailure("token not found") from None
            if record["state"] == "Redeemed":
                raise TokenSpent()
            if record["state"] in ("Expired", "Revoked"):
                raise TokenExpired() if record["state"] == "Expired" else TokenSpent()
            if self.clock.now_ms() > record["expires_at"]:
                record["state"] = "Expired"
                self.records.put(PAYMENT_TOKENS, record["token_id"], record)
                raise TokenExpired()

            payee = record["payee"]
            if payer == payee:
                raise SelfRedeem()
            amount = record["amount"] if record["amount"] is not None else amount_if_open
            if amount is None:
                raise BadAmount("open-amount token requires an explicit amount")
            _check_amount(amount)
            self.balance(payee)
            payer_account = self.balance(payer)
            if payer_account["balance"] < amount:
                raise InsufficientFunds()

            record["state"] = "Redeemed"
            self.records.put(PAYMENT_TOKENS, record["token_id"], record)
            txn = self._new_txn(payer, payee, amount, record["kind"], actor=payer)
            self._transition(txn, "Acknowledged", payee)  # the token is the acceptance
            self._settle(txn, actor=payer)
            receipt = txn["receipt"]
            return RedeemResult(transaction=txn, receipt=receipt)

    # -- payment requests ---------------------------------------------------------------

    def request_payment(self, payee: str, payer: str, amount: int) -> dict:
        _check_amount(amount)
        if payer == payee:
            raise SelfTransfer()
        with self._lock:
            self.balance(payee)
            try:
                self.records.get(ACCOUNTS, payer)
            except Missing:
                raise UnknownPayee(payer) from None
            return self._new_txn(payer, payee, amount, "REQUEST", actor=payee)

    def acknowledge(self, payer: str, txn_id: str, accept: bool) -> dict:
        with self._lock:
            txn = self._get_txn(txn_id)
            if txn["payer"] != payer:
                raise NotYourTxn(payer)
            if txn["state"] != "Pending":
                raise AlreadyConcluded()
            if accept:
                payer_account = self.balance(payer)
                if payer_account["balance"] < txn["amount"]:
                    raise InsufficientFunds()
                self._transition(txn, "Acknowledged", payer)
                self._settle(txn, actor=payer)
            else:
                self._transition(txn, "Rejected", payer)
            return txn

    # -- disputes ------------------------------------------------------------------------

    def open_dispute(self, disputant: str, txn_id: str, reason: str) -> dict:
        with self._lock:
            txn = self._get_txn(txn_id)
            if disputant not in (txn["payer"], txn["payee"]):
                raise NotParty()
            if txn["state"] != "Settled":
                raise NotSettled()
            txn["dispute"] = {"by": disputant, "reason": reason, "opened_at": self.clock.now_ms()}
            self._transition(txn, "Disputed", disputant)
            return txn

    def resolve_dispute(self, resolver: str, txn_id: str, outcome: str) -> dict:
        """Uphold keeps balances; Reverse performs the inverse transfer, but only
        if the payee still holds the funds; otherwise the dispute stays open."""
        if outcome not in ("Uphold", "Reverse"):
            raise BadAmount("outcome must be Uphold or Reverse")
        with self._lock:
            txn = self._get_txn(txn_id)
            if txn["state"] != "Disputed":
                raise NotSettled("transaction is not under dispute")
            puts = []
            if outcome == "Reverse":
                payee_account = self.balance(txn["payee"])
                if payee_account["balance"] < txn["amount"]:
                    raise ReversalInsufficientFunds()
                puts = self._move_puts(txn["payee"], txn["payer"], txn["amount"])
            txn["resolution"] = {"outcome": outcome, "by": resolver}
            self._transition(txn, "Resolved", resolver, extra_puts=puts)
            return txn

    # -- invariant helpers ------------------------------------------------------------------

    def total_balance(self) -> int:
        with self._lock:
            return sum(
                self.records.get(ACCOUNTS, u)["balance"] for u in self.records.keys(ACCOUNTS)
            )

    def total_minted(self) -> int:
        with self._lock:
            return sum(
                self.records.get(ACCOUNTS, u)["initial_deposit"]
                for u in self.records.keys(ACCOUNTS)
            )

    def replay_log(self) -> dict:
        """Rebuild balances purely from the transaction log.

        Returns {"balances": {user: n}, "violations": [...]} where violations
        are illegal state transitions found while replaying.
        """
        if self._log_path is None or not self._log_path.exists():
            return {"balances": {}, "violations": ["no transaction log"]}
        balances: dict[str, int] = {}
        states: dict[str, str] = {}
        txn_info: dict[str, dict] = {}
        violations: list[str] = []
        for line in self._log_path.read_text(encoding="utf-8").splitlines():
            if not line.strip():
                continue
            try:
                entry = json.loads(line)
            except json.JSONDecodeError:
                break  # torn tail
            if entry["event"] == "account_open":
                balances[entry["username"]] = balances.get(entry["username"], 0) + entry["deposit"]
                continue
            txn_id = entry["txn_id"]
            txn_info.setdefault(
                txn_id,
                {"payer": entry["payer"], "payee": entry["payee"], "amount": entry["amount"]},
            )
            prev = states.get(txn_id)
            state = entry["state"]
            if state not in LEGAL_TRANSITIONS.get(prev, set()):
                violations.append(f"{txn_id}: {prev} -> {state}")
            states[txn_id] = state
            info = txn_info[txn_id]
            if state == "Settled":
                balances[info["payer"]] = balances.get(info["payer"], 0) - info["amount"]
                balances[info["payee"]] = balances.get(info["payee"], 0) + info["amount"]
            elif state == "Resolved" and entry.get("outcome") == "Reverse":
                balances[info["payee"]] = balances.get(info["payee"], 0) - info["amount"]
                balances[info["payer"]] = balances.get(info["payer"], 0) + info["amount"]
        return {"balances": balances, "violations": violations}

    def current_balances(self) -> dict[str, int]:
        with self._lock:
            return {
                u: self.records.get(ACCOUNTS, u)["balance"] for u in self.records.keys(ACCOUNTS)
            }

    # -- internals -----------------------------------------------------------------------------

    def _new_txn(self, payer: str, payee: str, amount: int, channel: str, actor: str) -> dict:
        txn = {
            "txn_id": crypto.new_auth_token(),
            "payer": payer,
            "payee": payee,
            "amount": amount,
            "channel": channel,
            "state": None,
            "receipt": None,
            "created_at": self.clock.now_ms(),
            "history": [],
        }
        self._transition(txn, "Pending", actor)
        self._index(payer, txn["txn_id"])
        self._index(payee, txn["txn_id"])
        return txn

    def _transition(
        self, txn: dict, state: str, actor: str, extra_puts: list | None = None
    ) -> None:
        if state not in LEGAL_TRANSITIONS[txn["state"]]:
            raise IllegalTransition(f"{txn['state']} -> {state}")
        txn["state"] = state
        entry = (state, self.clock.now_ms(), actor)
        txn["history"].append(entry)
        # extra_puts (balance movements) commit in the same journal batch as
        # the transaction record: a crash can never separate debit, credit,
        # and the Settled state.
        self.records.put_many(
            [(TRANSACTIONS, txn["txn_id"], txn)] + list(extra_puts or [])
        )
        log_entry = {
            "event": "transition",
            "txn_id": txn["txn_id"],
            "state": state,
            "payer": txn["payer"],
            "payee": txn["payee"],
            "amount": txn["amount"],
            "channel": txn["channel"],
            "ts": entry[1],
            "actor": actor,
        }
        if state == "Resolved":
            log_entry["outcome"] = txn["resolution"]["outcome"]
        self._log(log_entry)
        if self.on_transition is not None:
            self.on_transition(log_entry)

    def _settle(self, txn: dict, actor: str) -> None:
        puts = self._move_puts(txn["payer"], txn["payee"], txn["amount"])
        txn["receipt"] = {
            "txn_id": txn["txn_id"],
            "payee": txn["payee"],
            "acknowledged_at": self.clock.now_ms(),
        }
        self._transition(txn, "Settled", actor, extra_puts=puts)

    def _move_puts(self, debit_user: str, credit_user: str, amount: int) -> list:
        """Validate and stage a debit/credit pair for an atomic batch commit."""
        debit_account = self.balance(debit_user)
        if debit_account["balance"] < amount:
            raise InsufficientFunds()
        debit_account["balance"] -= amount
        credit_account = self.balance(credit_user)
        credit_account["balance"] += amount
        return [
            (ACCOUNTS, debit_user, debit_account),
            (ACCOUNTS, credit_user, credit_account),
        ]

    def _index(self, username: str, txn_id: str) -> None:
        try:
            self.records.mutate(
                TXN_INDEX, username, lambda r: {"txns": r["txns"] + [txn_id]}
            )
        except Missing:
            self.records.put(TXN_INDEX, username, {"txns": [txn_id]})

    def _get_txn(self, txn_id: str) -> dict:
        try:
            return self.records.get(TRANSACTIONS, str(txn_id))
        except Missing:
            raise UnknownTxn(txn_id) from None

    def _log(self, entry: dict) -> None:
        if self._log_file is None:
            return
        self._log_file.write(json.dumps(entry, separators=(",", ":")).encode() + b"\n")
        self._log_file.flush()
        os.fsync(self._log_file.fileno())

    def _reconcile_log(self) -> None:
        """Self-heal after a crash between a store commit and its log append.

        The record store is the durability anchor (its journal append is the
        acknowledgment point), so any transition present in store histories but
        missing from the log is re-appended. Balance replay is order-free
        (settlements commute), so late appends keep replay exact.
        """
        logged: set[tuple[str, str]] = set()
        open_logged: set[str] = set()
        if self._log_path.exists():
            for line in self._log_path.read_text(encoding="utf-8").splitlines():
                if not line.strip():
                    continue
                try:
                    entry = json.loads(line)
                except json.JSONDecodeError:
                    break
                if entry["event"] == "account_open":
                    open_logged.add(entry["username"])
                elif entry["event"] == "transition":
                    logged.add((entry["txn_id"], entry["state"]))
        missing: list[dict] = []
        for username in self.records.keys(ACCOUNTS):
            if username not in open_logged:
                account = self.records.get(ACCOUNTS, username)
                missing.append(
                    {
                        "event": "account_open",
                        "username": username,
                        "deposit": account["initial_deposit"],
                    }
                )
        for txn_id in self.records.keys(TRANSACTIONS):
            txn = self.records.get(TRANSACTIONS, txn_id)
            for state, ts, actor in txn["history"]:
                if (txn_id, state) not in logged:
                    entry = {
                        "event": "transition",
                        "txn_id": txn_id,
                        "state": state,
                        "payer": txn["payer"],
                        "payee": txn["payee"],
                        "amount": txn["amount"],
                        "channel": txn["channel"],
                        "ts": ts,
                        "actor": actor,
                        "recovered": True,
                    }
                    if state == "Resolved":
                        entry["outcome"] = txn["resolution"]["outcome"]
                    missing.append(entry)
        if missing:
            with open(self._log_path, "ab") as f:
                for entry in missing:
                    f.write(json.dumps(entry, separators=(",", ":")).encode() + b"\n")
                f.flush()
                os.fsync(f.fileno())

    def close(self) -> None:
        with self._lock:
            if self._log_file is not None:
                self._log_file.close()
                self._log_file = None
