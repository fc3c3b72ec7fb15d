"""Relying-party ceremonies and session machinery.

Registration and authentication are challenge-response ceremonies: the server
issues a single-use 16-byte challenge, the authenticator signs it, the server
verifies the signature against the public key it holds in blob storage and
atomically consumes the challenge so nothing can be replayed. A successful
authentication mints a short-lived single-use auth token which is then
exchanged for an IP-bound sealed session cookie; the fallback path is an
email one-time link carrying an encrypted (token, requester IP) pair.

Single-use enforcement is everywhere an atomic take from the record store, so
any concurrent interleaving of consumers yields exactly one success. Sessions
are stateless: the cookie itself is the session, sealed under the cookie key
with the client IP as associated data, which is what makes a hijacked cookie
useless from any other address.
"""

from __future__ import annotations

import hashlib
import json
import re
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

from . import crypto
from .authenticator import AssertionResponse
from .clockwork import SYSTEM_CLOCK, Clock
from .errors import (
    AuthFailure,
    BadSignature,
    ChallengeExpired,
    ChallengeMissing,
    CounterRegression,
    CredentialLocked,
    DuplicateKey,
    IpMismatch,
    LinkInvalid,
    Missing,
    RpIdMismatch,
    SessionInvalid,
    TokenMissing,
    UnknownUser,
    UserExists,
    ValidationError,
)
from .store import BlobStore, RecordStore

USERS = "users"
EMAILS = "emails"
CHALLENGES = "challenges"
PENDING_TOKENS = "pending_tokens"
LINK_TOKENS = "link_tokens"

PUBKEY_NS = "pubkey"

_USERNAME = re.compile(r"^[A-Za-z0-9_.-]{1,64}$")

USERNAME_HINT_AD = b"username-hint"
SESSION_AD_PREFIX = b"session:"


@dataclass
class RpConfig:
    rp_id: str = "pp2pp.local"
    base_url: str = "http://127.0.0.1:8455"
    challenge_ttl_ms: int = 120_000
    pending_token_ttl_ms: int = 60_000
    link_ttl_ms: int = 600_000
    session_ttl_ms: int = 1_800_000


@dataclass
class Session:
    username: str
    client_ip: str
    issued_at: int
    expires_at: int
    cookie: str  # base64url sealed blob


class Outbox:
    """File-based stand-in for email delivery: one JSON object per message."""

    def __init__(self, path: str | Path | None):
        self._path = Path(path) if path else None
        self._mem: list[dict] = []
        self._lock = threading.Lock()

    def append(self, message: dict) -> None:
        with self._lock:
            if self._path is None:
                self._mem.append(message)
                return
            self._path.parent.mkdir(parents=True, exist_ok=True)
            with open(self._path, "a", encoding="utf-8") as f:
                f.write(json.dumps(message) + "\n")

    def messages(self) -> list[dict]:
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


class _Regression(Exception):
    pass


class RelyingParty:
    def __init__(
        self,
        records: RecordStore,
        blobs: BlobStore,
        keys: crypto.ServerKeys,
        config: RpConfig | None = None,
        clock: Clock = SYSTEM_CLOCK,
        outbox: Outbox | None = None,
    ):
        self.records = records
        self.blobs = blobs
        self.keys = keys
        self.config = config or RpConfig()
        self.clock = clock
        self.outbox = outbox or Outbox(None)

    # -- registration ----------------------------------------------------

    def begin_registration(self, username: str, email: str, reenroll: bool = False) -> crypto.Challenge:
        self._validate_username(username)
        if not email or "@" not in email or len(email) > 254:
            raise ValidationError("email looks invalid")
        if not reenroll and self._user_exists(username):
            raise UserExists(username)
        return self._issue_challenge(crypto.Ceremony.REGISTRATION, username, email)

    def finish_registration(self, username: str, public_key: dict, response: AssertionResponse) -> dict:
        """Verify the signed challenge, persist the public key, commit the user.

        The challenge is consumed atomically before anything else is checked:
        a replayed response finds nothing and gets ChallengeMissing. A response
        with an empty signature is browser "none" attestation: there is nothing
        to verify at enrolment, so the key is trusted on first use (standard
        WebAuthn posture); every later assertion still needs a real signature.
        """
        challenge = self._take_challenge(crypto.Ceremony.REGISTRATION, username, response)
        self._check_rp_binding(response)
        if response.signature:
            if not crypto.verify_wire_key(
                public_key, response.signed_payload(), response.signature
            ):
                raise BadSignature()
        elif public_key.get("alg") not in ("ES256",):
            # only browser platform keys may enrol without self-attestation
            raise BadSignature("attestation signature required")

        self.blobs.put(PUBKEY_NS, username, json.dumps(public_key).encode())
        record = {
            "username": username,
            "email": challenge["email"],
            "registered_at": self.clock.now_ms(),
            "credential_ref": f"{PUBKEY_NS}/{username}",
            "credential_id": crypto.b64u(response.credential_id),
            "sign_count": response.sign_count,
            "locked": False,
        }
        try:
            self.records.insert(USERS, username, record)
        except DuplicateKey:
            raise UserExists(username) from None
        self.records.put(EMAILS, challenge["email"], {"username": username})
        return record

    # -- authentication -----------------------------------------------------

    def begin_authentication(self, username: str) -> crypto.Challenge:
        # Same crypto work on both paths so unknown users are not cheap to probe.
        challenge = crypto.new_challenge(
            crypto.Ceremony.AUTHENTICATION, username, self.clock, self.config.challenge_ttl_ms
        )
        if not self._user_exists(username):
            raise UnknownUser()
        self._store_challenge(challenge, email="")
        return challenge

    def finish_authentication(
        self, username: str, response: AssertionResponse, client_ip: str
    ) -> str:
        """Full assertion check; on success mints a single-use pending auth token."""
        self._take_challenge(crypto.Ceremony.AUTHENTICATION, username, response)
        try:
            user = self.records.get(USERS, username)
        except Missing:
            raise UnknownUser() from None
        if user["locked"]:
            raise CredentialLocked()
        self._check_rp_binding(response)
        key_wire = json.loads(self.blobs.get(PUBKEY_NS, username))
        if not crypto.verify_wire_key(key_wire, response.signed_payload(), response.signature):
            raise BadSignature()
        self._bump_counter(username, response.sign_count)

        token = crypto.new_auth_token()
        self.records.insert(
            PENDING_TOKENS,
            token,
            {"username": username, "issued_at": self.clock.now_ms(), "client_ip": client_ip},
            ttl_ms=self.config.pending_token_ttl_ms,
        )
        return token

    def exchange_token(self, token: str, client_ip: str) -> Session:
        """One-shot swap of a pending auth token for a session cookie.

        The cookie binds whatever IP performs the exchange; the token itself is
        not IP-bound (the browser redirect may arrive over a different route).
        """
        try:
            record = self.records.take(PENDING_TOKENS, str(token))
        except Missing:
            raise TokenMissing() from None
        return self._issue_session(record["username"], client_ip)

    def verify_session(self, cookie: str, client_ip: str) -> str:
        """Opens the cookie bound to the presenting IP; returns the username.

        Tamper, wrong IP, and expiry are deliberately indistinguishable.
        """
        try:
            blob = crypto.SealedBlob.from_b64(cookie)
            plaintext = crypto.open_blob(
                self.keys.cookie_key, blob, SESSION_AD_PREFIX + client_ip.encode()
            )
            body = json.loads(plaintext)
            username = body["u"]
            expires_at = int(body["exp"])
        except (AuthFailure, ValueError, KeyError, TypeError):
            raise SessionInvalid() from None
        if self.clock.now_ms() > expires_at:
            raise SessionInvalid()
        return username

    # -- one-time links ------------------------------------------------------------

    def issue_onetime_link(self, email: str, requester_ip: str) -> Optional[str]:
        """Write a login link to the outbox and return it.

        Unknown emails return None after the same token/seal work and leave no
        outbox entry; the API layer responds success-shaped either way so the
        endpoint cannot be used to enumerate addresses.
        """
        token = crypto.new_auth_token()
        payload = crypto.make_link_payload(token, requester_ip, self.keys.cookie_key)
        try:
            owner = self.records.get(EMAILS, email)
        except Missing:
            return None
        self.records.insert(
            LINK_TOKENS,
            token,
            {
                "username": owner["username"],
                "requester_ip": requester_ip,
                "issued_at": self.clock.now_ms(),
            },
            ttl_ms=self.config.link_ttl_ms,
        )
        link = f"{self.config.base_url}/auth/link/consume?payload={payload}"
        self.outbox.append(
            {
                "to": email,
                "subject": "Your PP2PP sign-in link",
                "link": link,
                "issued_at": self.clock.now_ms(),
            }
        )
        return link

    def consume_onetime_link(self, payload: str, client_ip: str) -> Session:
        try:
            token, requester_ip = crypto.open_link_payload(payload, self.keys.cookie_key)
        except AuthFailure:
            raise LinkInvalid() from None
        # IP is checked before the token is consumed: a probe from the wrong
        # address must not burn the legitimate user's link.
        if requester_ip != client_ip:
            raise IpMismatch()
        try:
            record = self.records.take(LINK_TOKENS, token)
        except Missing:
            raise LinkInvalid() from None
        return self._issue_session(record["username"], client_ip)

    # -- username hint cookie (convenience only; grants nothing) ------------------------

    def make_username_hint(self, username: str) -> str:
        return crypto.seal(self.keys.app_key, username.encode(), USERNAME_HINT_AD).to_b64()

    def read_username_hint(self, hint: str) -> Optional[str]:
        try:
            blob = crypto.SealedBlob.from_b64(hint)
            return crypto.open_blob(self.keys.app_key, blob, USERNAME_HINT_AD).decode()
        except (AuthFailure, UnicodeDecodeError):
            return None

    # -- internals ----------------------------------------------------------------------

    def _validate_username(self, username: str) -> None:
        if not isinstance(username, str) or not _USERNAME.match(username or ""):
            raise ValidationError(
                "username must be 1-64 chars from [A-Za-z0-9_.-]"
            )

    def _user_exists(self, username: str) -> bool:
        try:
            self.records.get(USERS, username)
            return True
        except Missing:
            return False

    def _issue_challenge(self, ceremony: crypto.Ceremony, username: str, email: str = "") -> crypto.Challenge:
        challenge = crypto.new_challenge(
            ceremony, username, self.clock, self.config.challenge_ttl_ms
        )
        self._store_challenge(challenge, email)
        return challenge

    def _store_challenge(self, challenge: crypto.Challenge, email: str) -> None:
        # Store TTL is double the logical TTL so a late finish can still be
        # told apart (ChallengeExpired) from replay (ChallengeMissing).
        self.records.insert(
            CHALLENGES,
            challenge.nonce.hex(),
            {
                "ceremony": challenge.ceremony.value,
                "username": challenge.user_ref,
                "issued_at": challenge.issued_at,
                "ttl_ms": challenge.ttl_ms,
                "email": email,
            },
            ttl_ms=challenge.ttl_ms * 2,
        )

    def _take_challenge(
        self, ceremony: crypto.Ceremony, username: str, response: AssertionResponse
    ) -> dict:
        nonce = response.challenge_nonce()
        if nonce is None:
            raise ChallengeMissing()
        try:
            record = self.records.take(CHALLENGES, nonce.hex())
        except Missing:
            raise ChallengeMissing() from None
        if record["ceremony"] != ceremony.value or record["username"] != username:
            raise ChallengeMissing()
        if self.clock.now_ms() > record["issued_at"] + record["ttl_ms"]:
            raise ChallengeExpired()
        return record

    def _check_rp_binding(self, response: AssertionResponse) -> None:
        expected = hashlib.sha256(self.config.rp_id.encode()).digest()
        if response.rp_id_hash != expected:
            raise RpIdMismatch()

    def _bump_counter(self, username: str, new_count: int) -> None:
        def bump(record: dict) -> dict:
            # 0 -> 0 means the authenticator does not implement a counter
            # (some browser platform authenticators); anything else must grow.
            if new_count == 0 and record["sign_count"] == 0:
                return record
            if new_count <= record["sign_count"]:
                raise _Regression()
            record["sign_count"] = new_count
            return record

        try:
            self.records.mutate(USERS, username, bump)
        except _Regression:
            # Possible cloned card: lock the credential until re-enrolment.
            def lock(record: dict) -> dict:
                record["locked"] = True
                return record

            self.records.mutate(USERS, username, lock)
            raise CounterRegression() from None

    def _issue_session(self, username: str, client_ip: str) -> Session:
        issued_at = self.clock.now_ms()
        expires_at = issued_at + self.config.session_ttl_ms
        body = json.dumps({"u": username, "iat": issued_at, "exp": expires_at}).encode()
        cookie = crypto.seal(
            self.keys.cookie_key, body, SESSION_AD_PREFIX + client_ip.encode()
        ).to_b64()
        return Session(
            username=username,
            client_ip=client_ip,
            issued_at=issued_at,
            expires_at=expires_at,
            cookie=cookie,
        )
