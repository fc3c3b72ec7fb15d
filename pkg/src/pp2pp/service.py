"""The server's request-handling core, independent of any HTTP machinery.

``Service.handle`` maps an ApiRequest (method, path, headers, JSON body,
client IP) to an ApiResponse. Every authenticated endpoint re-verifies the
session cookie against the connection's IP on every request; protocol errors
map to stable machine-readable codes and stack traces never leak. One
structured audit line is written per authentication outcome and per ledger
transition.
"""

from __future__ import annotations

import json
import logging
import threading
from dataclasses import dataclass, field
from http.cookies import SimpleCookie
from pathlib import Path
from typing import Callable, Optional

from . import crypto
from .authenticator import AssertionResponse
from .clockwork import SYSTEM_CLOCK, Clock
from .errors import (
    BadRequest,
    NotFound,
    PayloadTooLarge,
    Pp2ppError,
    RateLimited,
    RoleRequired,
    SessionInvalid,
    Unauthenticated,
)
from .ledger import Ledger
from .ratelimit import RateLimiter
from .relying_party import Outbox, RelyingParty, RpConfig
from .store import DataDir
from . import webauthn_compat

logger = logging.getLogger("pp2pp.service")

SESSION_COOKIE = "pp2pp_session"
HINT_COOKIE = "pp2pp_user"
MAX_BODY_BYTES = 64 * 1024


@dataclass
class ServiceConfig:
    rp_id: str = "pp2pp.local"
    base_url: str = "http://127.0.0.1:8455"
    data_dir: Optional[str] = None  # None: fully in-memory
    bank_users: tuple[str, ...] = ("bank",)
    initial_deposit: int = 10_000
    rate_limiting: bool = True
    rate_scale: float = 1.0
    trusted_proxy: bool = False
    key_file: Optional[str] = None


@dataclass
class ApiRequest:
    method: str
    path: str
    client_ip: str
    headers: dict = field(default_factory=dict)
    query: dict = field(default_factory=dict)
    body: bytes = b""

    def json(self) -> dict:
        if not self.body:
            return {}
        try:
            parsed = json.loads(self.body)
        except json.JSONDecodeError:
            raise BadRequest("body is not valid JSON") from None
        if not isinstance(parsed, dict):
            raise BadRequest("body must be a JSON object")
        return parsed

    def cookie(self, name: str) -> Optional[str]:
        header = self.headers.get("cookie")
        if not header:
            return None
        jar = SimpleCookie()
        try:
            jar.load(header)
        except Exception:
            return None
        morsel = jar.get(name)
        return morsel.value if morsel else None


@dataclass
class ApiResponse:
    status: int
    body: dict
    cookies: list[str] = field(default_factory=list)  # Set-Cookie header values

    def to_json(self) -> bytes:
        return json.dumps(self.body).encode()


class AuditLog:
    """Structured jsonl: one line per auth outcome and per ledger transition."""

    def __init__(self, path: str | Path | None, clock: Clock):
        self._path = Path(path) if path else None
        self._mem: list[dict] = []
        self._clock = clock
        self._lock = threading.Lock()

    def _write(self, entry: dict) -> None:
        entry = {"ts": self._clock.now_ms(), **entry}
        with self._lock:
            if self._path is None:
                self._mem.append(entry)
            else:
                with open(self._path, "a", encoding="utf-8") as f:
                    f.write(json.dumps(entry) + "\n")

    def auth_event(self, event: str, username: str, ip: str, outcome: str) -> None:
        self._write(
            {"kind": "auth", "event": event, "username": username, "ip": ip, "outcome": outcome}
        )

    def txn_event(self, entry: dict) -> None:
        self._write({"kind": "txn", **entry})

    def entries(self) -> list[dict]:
        with self._lock:
            if self._path is None:
                return list(self._mem)
            if not self._path.exists():
                return []
            return [
                json.loads(line)
                for line in self._path.read_text(encoding="utf-8").splitlines()
                if line.strip()
            ]


class Service:
    def __init__(self, config: ServiceConfig | None = None, clock: Clock = SYSTEM_CLOCK):
        self.config = config or ServiceConfig()
        self.clock = clock
        self.data = DataDir(self.config.data_dir, clock=clock)
        key_path = self.config.key_file or self.data.path("keys.bin")
        if key_path is not None:
            self.keys = crypto.load_or_create_keys(key_path)
        else:
            self.keys = crypto.ServerKeys(
                crypto._random_bytes(32), crypto._random_bytes(16)
            )
        self.audit = AuditLog(self.data.path("audit.jsonl"), clock)
        self.rp = RelyingParty(
            records=self.data.records,
            blobs=self.data.blobs,
            keys=self.keys,
            config=RpConfig(rp_id=self.config.rp_id, base_url=self.config.base_url),
            clock=clock,
            outbox=Outbox(self.data.path("outbox.jsonl")),
        )
        self.ledger = Ledger(
            records=self.data.records,
            app_key=self.keys.app_key,
            txn_log_path=self.data.path("txnlog.jsonl"),
            clock=clock,
            on_transition=self.audit.txn_event,
        )
        self.rate_limiter = RateLimiter(
            clock=clock, scale=self.config.rate_scale, enabled=self.config.rate_limiting
        )
        self._routes: dict[tuple[str, str], Callable[[ApiRequest], ApiResponse]] = {
            ("POST", "/register/begin"): self._register_begin,
            ("POST", "/register/finish"): self._register_finish,
            ("POST", "/auth/begin"): self._auth_begin,
            ("POST", "/auth/finish"): self._auth_finish,
            ("POST", "/auth/exchange"): self._auth_exchange,
            ("POST", "/auth/logout"): self._auth_logout,
            ("POST", "/auth/link/issue"): self._link_issue,
            ("GET", "/auth/link/consume"): self._link_consume,
            ("GET", "/account"): self._account,
            ("GET", "/account/history"): self._history,
            ("POST", "/pay/direct"): self._pay_direct,
            ("POST", "/pay/token/create"): self._token_create,
            ("POST", "/pay/token/redeem"): self._token_redeem,
            ("POST", "/pay/request"): self._pay_request,
            ("POST", "/pay/acknowledge"): self._acknowledge,
            ("POST", "/dispute/open"): self._dispute_open,
            ("POST", "/dispute/resolve"): self._dispute_resolve,
            ("GET", "/healthz"): self._healthz,
        }

    # -- dispatch ---------------------------------------------------------

    def handle(self, request: ApiRequest) -> ApiResponse:
        try:
            if not self.rate_limiter.allow(request.client_ip, request.path):
                raise RateLimited()
            if len(request.body) > MAX_BODY_BYTES:
                raise PayloadTooLarge()
            handler = self._routes.get((request.method, request.path))
            if handler is None:
                raise NotFound(request.path)
            return handler(request)
        except Pp2ppError as exc:
            return ApiResponse(exc.http_status, {"error": str(exc), "code": exc.code})
        except Exception:
            logger.exception("unhandled error on %s %s", request.method, request.path)
            return ApiResponse(500, {"error": "internal error", "code": "internal"})

    def close(self) -> None:
        self.ledger.close()
        self.data.records.close()

    # -- session helpers ------------------------------------------------------

    def _require_session(self, request: ApiRequest) -> str:
        cookie = request.cookie(SESSION_COOKIE)
        if not cookie:
            raise Unauthenticated("no session cookie")
        return self.rp.verify_session(cookie, request.client_ip)

    def _session_cookie_headers(self, session) -> list[str]:
        max_age = max(0, (session.expires_at - self.clock.now_ms()) // 1000)
        return [
            f"{SESSION_COOKIE}={session.cookie}; Path=/; HttpOnly; SameSite=Strict; Max-Age={max_age}"
        ]

    # -- ceremonies --------------------------------------------------------------

    def _register_begin(self, request: ApiRequest) -> ApiResponse:
        body = request.json()
        challenge = self.rp.begin_registration(
            str(body.get("username", "")), str(body.get("email", ""))
        )
        return ApiResponse(
            200,
            {
                "challenge": crypto.b64u(challenge.nonce),
                "rp_id": self.config.rp_id,
                "ttl_ms": challenge.ttl_ms,
            },
        )

    def _register_finish(self, request: ApiRequest) -> ApiResponse:
        body = request.json()
        username = str(body.get("username", ""))
        try:
            public_key, assertion = self._decode_finish(body)
            record = self.rp.finish_registration(username, public_key, assertion)
        except Pp2ppError as exc:
            self.audit.auth_event("register_finish", username, request.client_ip, exc.code)
            raise
        self.audit.auth_event("register_finish", username, request.client_ip, "ok")
        try:
            self.ledger.open_account(username, self.config.initial_deposit)
        except Pp2ppError:
            pass  # re-enrolment keeps the existing account
        return ApiResponse(
            200, {"registered": True, "username": username, "credential_id": record["credential_id"]}
        )

    def _auth_begin(self, request: ApiRequest) -> ApiResponse:
        body = request.json()
        username = str(body.get("username", ""))
        challenge = self.rp.begin_authentication(username)
        hint = self.rp.make_username_hint(username)
        return ApiResponse(
            200,
            {
                "challenge": crypto.b64u(challenge.nonce),
                "rp_id": self.config.rp_id,
                "ttl_ms": challenge.ttl_ms,
            },
            cookies=[f"{HINT_COOKIE}={hint}; Path=/; SameSite=Strict; Max-Age=600"],
        )

    def _auth_finish(self, request: ApiRequest) -> ApiResponse:
        body = request.json()
        username = str(body.get("username", ""))
        try:
            _, assertion = self._decode_finish(body, registration=False)
            token = self.rp.finish_authentication(username, assertion, request.client_ip)
        except Pp2ppError as exc:
            self.audit.auth_event("auth_finish", username, request.client_ip, exc.code)
            raise
        self.audit.auth_event("auth_finish", username, request.client_ip, "ok")
        return ApiResponse(200, {"token": token})

    def _auth_exchange(self, request: ApiRequest) -> ApiResponse:
        body = request.json()
        token = str(body.get("token", ""))
        try:
            session = self.rp.exchange_token(token, request.client_ip)
        except Pp2ppError as exc:
            self.audit.auth_event("exchange", "", request.client_ip, exc.code)
            raise
        self.audit.auth_event("exchange", session.username, request.client_ip, "ok")
        return ApiResponse(
            200,
            {"username": session.username, "expires_at": session.expires_at},
            cookies=self._session_cookie_headers(session),
        )

    def _auth_logout(self, request: ApiRequest) -> ApiResponse:
        return ApiResponse(
            200,
            {"status": "ok"},
            cookies=[f"{SESSION_COOKIE}=; Path=/; HttpOnly; Max-Age=0"],
        )

    def _link_issue(self, request: ApiRequest) -> ApiResponse:
        body = request.json()
        email = str(body.get("email", ""))
        self.rp.issue_onetime_link(email, request.client_ip)
        self.audit.auth_event("link_issue", "", request.client_ip, "ok")
        # success-shaped either way: unknown emails are not enumerable
        return ApiResponse(200, {"status": "ok"})

    def _link_consume(self, request: ApiRequest) -> ApiResponse:
        payload = str(request.query.get("payload", ""))
        try:
            session = self.rp.consume_onetime_link(payload, request.client_ip)
        except Pp2ppError as exc:
            self.audit.auth_event("link_consume", "", request.client_ip, exc.code)
            raise
        self.audit.auth_event("link_consume", session.username, request.client_ip, "ok")
        return ApiResponse(
            200,
            {"username": session.username, "expires_at": session.expires_at},
            cookies=self._session_cookie_headers(session),
        )

    def _decode_finish(self, body: dict, registration: bool = True):
        """One decoding layer for both assertion formats.

        ``card`` is the simulator's native shape; ``webauthn`` is what a real
        browser produces and is normalized here into the same structures.
        """
        fmt = body.get("format", "card")
        if fmt == "card":
            try:
                assertion = AssertionResponse.from_wire(body["assertion"])
            except (KeyError, TypeError, ValueError):
                raise BadRequest("malformed assertion") from None
            public_key = body.get("public_key") if registration else None
            if registration and not isinstance(public_key, dict):
                raise BadRequest("missing public_key")
            return public_key, assertion
        if fmt == "webauthn":
            try:
                if registration:
                    return webauthn_compat.decode_registration(body["webauthn"])
                return None, webauthn_compat.decode_assertion(body["webauthn"])
            except (KeyError, TypeError, ValueError):
                raise BadRequest("malformed webauthn payload") from None
        raise BadRequest(f"unknown format {fmt!r}")

    # -- accounts & payments ----------------------------------------------------------

    def _account(self, request: ApiRequest) -> ApiResponse:
        username = self._require_session(request)
        account = self.ledger.balance(username)
        return ApiResponse(
            200,
            {
                "username": username,
                "balance": account["balance"],
                "created_at": account["created_at"],
            },
        )

    def _history(self, request: ApiRequest) -> ApiResponse:
        username = self._require_session(request)
        page = _int_param(request.query.get("page", "0"))
        size = min(200, _int_param(request.query.get("size", "50"), default=50) or 50)
        entries = self.ledger.get_history(username, page=page, size=size)
        return ApiResponse(200, {"transactions": [_txn_summary(t) for t in entries]})

    def _pay_direct(self, request: ApiRequest) -> ApiResponse:
        username = self._require_session(request)
        body = request.json()
        txn = self.ledger.direct_transfer(
            username, str(body.get("payee", "")), body.get("amount")
        )
        return ApiResponse(200, _txn_summary(txn))

    def _token_create(self, request: ApiRequest) -> ApiResponse:
        username = self._require_session(request)
        body = request.json()
        record, presentable = self.ledger.create_payment_token(
            username, str(body.get("kind", "")).upper(), body.get("amount")
        )
        return ApiResponse(
            200,
            {
                "token_id": record["token_id"],
                "kind": record["kind"],
                "amount": record["amount"],
                "presentable": presentable,
                "expires_at": record["expires_at"],
            },
        )

    def _token_redeem(self, request: ApiRequest) -> ApiResponse:
        username = self._require_session(request)
        body = request.json()
        result = self.ledger.redeem_payment_token(
            username, str(body.get("payload", "")), body.get("amount")
        )
        summary = _txn_summary(result.transaction)
        summary["receipt"] = result.receipt
        return ApiResponse(200, summary)

    def _pay_request(self, request: ApiRequest) -> ApiResponse:
        username = self._require_session(request)
        body = request.json()
        txn = self.ledger.request_payment(
            username, str(body.get("payer", "")), body.get("amount")
        )
        return ApiResponse(200, _txn_summary(txn))

    def _acknowledge(self, request: ApiRequest) -> ApiResponse:
        username = self._require_session(request)
        body = request.json()
        txn = self.ledger.acknowledge(
            username, str(body.get("txn_id", "")), bool(body.get("accept"))
        )
        return ApiResponse(200, _txn_summary(txn))

    def _dispute_open(self, request: ApiRequest) -> ApiResponse:
        username = self._require_session(request)
        body = request.json()
        txn = self.ledger.open_dispute(
            username, str(body.get("txn_id", "")), str(body.get("reason", ""))
        )
        return ApiResponse(200, _txn_summary(txn))

    def _dispute_resolve(self, request: ApiRequest) -> ApiResponse:
        username = self._require_session(request)
        if username not in self.config.bank_users:
            raise RoleRequired("bank role required")
        body = request.json()
        txn = self.ledger.resolve_dispute(
            username, str(body.get("txn_id", "")), str(body.get("outcome", ""))
        )
        return ApiResponse(200, _txn_summary(txn))

    def _healthz(self, request: ApiRequest) -> ApiResponse:
        return ApiResponse(200, {"status": "ok"})


def _txn_summary(txn: dict) -> dict:
    return {
        "txn_id": txn["txn_id"],
        "payer": txn["payer"],
        "payee": txn["payee"],
        "amount": txn["amount"],
        "channel": txn["channel"],
        "state": txn["state"],
        "created_at": txn["created_at"],
        "history": [list(entry) for entry in txn["history"]],
    }


def _int_param(value, default: int = 0) -> int:
    try:
        n = int(value)
        return n if n >= 0 else default
    except (TypeError, ValueError):
        return default
