"""Cryptographic primitives for the whole stack.

RSA-2048 signing keypairs (RS256: RSASSA-PKCS1-v1_5 over SHA-256), 16-byte
single-use challenges, AES-GCM sealing for cookies and application payloads,
UUID v4 bearer tokens, and the encrypted one-time-link payload.

Sealing uses AEAD rather than bare encryption: session cookies and payment
tokens must be unforgeable as well as unreadable, so any bit flip in a sealed
blob makes ``open_blob`` fail. Cookies are sealed under a 256-bit key, at-rest
application payloads under a 128-bit key; both live in a 48-byte key file
created with owner-only permissions on first boot.
"""

from __future__ import annotations

import base64
import ipaddress
import os
import struct
import threading
import uuid
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

from cryptography.exceptions import InvalidSignature, InvalidTag
from cryptography.hazmat.primitives import hashes, serialization
from cryptography.hazmat.primitives.asymmetric import ec, padding, rsa
from cryptography.hazmat.primitives.ciphers.aead import AESGCM

from .clockwork import Clock
from .errors import AuthFailure, EntropyUnavailable

RSA_BITS = 2048
SIGNATURE_LEN = RSA_BITS // 8
CHALLENGE_LEN = 16
COOKIE_KEY_LEN = 32
APP_KEY_LEN = 16
NONCE_LEN = 12
TAG_LEN = 16
CHALLENGE_TTL_MS = 120_000

LINK_AD = b"onetime-link"


def b64u(raw: bytes) -> str:
    """base64url without padding: the wire form of every binary field."""
    return base64.urlsafe_b64encode(raw).decode("ascii").rstrip("=")


def unb64u(encoded: str) -> bytes:
    pad = "=" * (-len(encoded) % 4)
    return base64.urlsafe_b64decode(encoded + pad)


def _random_bytes(n: int) -> bytes:
    try:
        return os.urandom(n)
    except (NotImplementedError, OSError) as exc:
        raise EntropyUnavailable(str(exc)) from exc


# --- RSA signing keypairs ----------------------------------------------------


@dataclass
class AuthKeyPair:
    """RSA-2048 pair. The private half stays inside the authenticator."""

    private_key: rsa.RSAPrivateKey
    public_key: rsa.RSAPublicKey


def generate_auth_keypair() -> AuthKeyPair:
    """Fresh RSA-2048 keypair from OS entropy."""
    private = rsa.generate_private_key(public_exponent=65537, key_size=RSA_BITS)
    return AuthKeyPair(private_key=private, public_key=private.public_key())


def sign(private_key: rsa.RSAPrivateKey, message: bytes) -> bytes:
    """RSASSA-PKCS1-v1_5 over SHA-256; always exactly 256 bytes."""
    if not message:
        raise ValueError("refusing to sign an empty message")
    sig = private_key.sign(message, padding.PKCS1v15(), hashes.SHA256())
    assert len(sig) == SIGNATURE_LEN
    return sig


def verify(public_key: rsa.RSAPublicKey, message: bytes, signature: bytes) -> bool:
    """Total function: malformed or wrong signatures return False, never raise."""
    try:
        public_key.verify(signature, message, padding.PKCS1v15(), hashes.SHA256())
        return True
    except (InvalidSignature, ValueError, TypeError):
        return False


def public_key_to_der(public_key) -> bytes:
    return public_key.public_bytes(
        encoding=serialization.Encoding.DER,
        format=serialization.PublicFormat.SubjectPublicKeyInfo,
    )


def public_key_from_der(der: bytes):
    return serialization.load_der_public_key(der)


def rsa_public_key_to_wire(public_key: rsa.RSAPublicKey) -> dict:
    """Wire form of an RSA public key: base64url modulus + integer exponent."""
    nums = public_key.public_numbers()
    n_bytes = nums.n.to_bytes((nums.n.bit_length() + 7) // 8, "big")
    return {"alg": "RS256", "n": b64u(n_bytes), "e": nums.e}


def rsa_public_key_from_wire(wire: dict) -> rsa.RSAPublicKey:
    n = int.from_bytes(unb64u(wire["n"]), "big")
    e = int(wire["e"])
    return rsa.RSAPublicNumbers(e=e, n=n).public_key()


def verify_wire_key(wire: dict, message: bytes, signature: bytes) -> bool:
    """Verify against a stored public-key record; total like ``verify``.

    RS256 is the native card algorithm; ES256 keys (stored as DER SPKI under
    ``spki``) come from browser platform authenticators.
    """
    try:
        alg = wire.get("alg")
        if alg == "RS256":
            return verify(rsa_public_key_from_wire(wire), message, signature)
        if alg == "ES256":
            key = serialization.load_der_public_key(unb64u(wire["spki"]))
            if not isinstance(key, ec.EllipticCurvePublicKey):
                return False
            key.verify(signature, message, ec.ECDSA(hashes.SHA256()))
            return True
        return False
    except (InvalidSignature, ValueError, TypeError, KeyError):
        return False


# --- challenges ---------------------------------------------------------------


class Ceremony(Enum):
    REGISTRATION = "registration"
    AUTHENTICATION = "authentication"


@dataclass
class Challenge:
    """16-byte single-use nonce; consumption-at-most-once is the store's job."""

    nonce: bytes
    ceremony: Ceremony
    user_ref: str
    issued_at: int  # ms
    ttl_ms: int = CHALLENGE_TTL_MS

    def expired(self, now_ms: int) -> bool:
        return now_ms > self.issued_at + self.ttl_ms

    def __post_init__(self):
        if len(self.nonce) != CHALLENGE_LEN:
            raise ValueError(f"challenge nonce must be {CHALLENGE_LEN} bytes")


def new_challenge(
    ceremony: Ceremony,
    user_ref: str,
    clock: Clock,
    ttl_ms: int = CHALLENGE_TTL_MS,
) -> Challenge:
    return Challenge(
        nonce=_random_bytes(CHALLENGE_LEN),
        ceremony=ceremony,
        user_ref=user_ref,
        issued_at=clock.now_ms(),
        ttl_ms=ttl_ms,
    )


# --- AEAD sealing ---------------------------------------------------------------

# Nonces are counter-derived: a per-process random 4-byte boot id plus a
# monotonically increasing 8-byte counter. Never reused under one key within
# a process; fresh boot id per process keeps cross-restart reuse negligible.
_nonce_lock = threading.Lock()
_boot_id = os.urandom(4)
_nonce_counter = 0


def _next_nonce() -> bytes:
    global _nonce_counter
    with _nonce_lock:
        _nonce_counter += 1
        return _boot_id + struct.pack(">Q", _nonce_counter)


@dataclass
class SealedBlob:
    """AES-GCM output split into its wire fields."""

    nonce: bytes  # 12 bytes
    ciphertext: bytes
    tag: bytes  # 16 bytes

    def to_bytes(self) -> bytes:
        return self.nonce + self.ciphertext + self.tag

    @classmethod
    def from_bytes(cls, raw: bytes) -> "SealedBlob":
        if len(raw) < NONCE_LEN + TAG_LEN:
            raise AuthFailure("sealed blob too short")
        return cls(
            nonce=raw[:NONCE_LEN],
            ciphertext=raw[NONCE_LEN:-TAG_LEN],
            tag=raw[-TAG_LEN:],
        )

    def to_b64(self) -> str:
        return b64u(self.to_bytes())

    @classmethod
    def from_b64(cls, encoded: str) -> "SealedBlob":
        try:
            raw = unb64u(encoded)
        except (ValueError, TypeError) as exc:
            raise AuthFailure("sealed blob not base64url") from exc
        return cls.from_bytes(raw)


def seal(key: bytes, plaintext: bytes, associated_data: bytes = b"") -> SealedBlob:
    """AES-GCM encrypt; key length selects AES-256 (cookies) or AES-128 (app data)."""
    if len(key) not in (APP_KEY_LEN, COOKIE_KEY_LEN):
        raise ValueError("key must be 16 or 32 bytes")
    nonce = _next_nonce()
    ct_and_tag = AESGCM(key).encrypt(nonce, plaintext, associated_data or None)
    return SealedBlob(nonce=nonce, ciphertext=ct_and_tag[:-TAG_LEN], tag=ct_and_tag[-TAG_LEN:])


def open_blob(key: bytes, blob: SealedBlob, associated_data: bytes = b"") -> bytes:
    """Inverse of seal. Any mismatch in key, AD, or blob bytes raises AuthFailure."""
    if len(key) not in (APP_KEY_LEN, COOKIE_KEY_LEN):
        raise ValueError("key must be 16 or 32 bytes")
    try:
        return AESGCM(key).decrypt(
            blob.nonce, blob.ciphertext + blob.tag, associated_data or None
        )
    except InvalidTag as exc:
        raise AuthFailure("seal verification failed") from exc


# --- bearer tokens -----------------------------------------------------------------


def new_auth_token() -> str:
    """RFC-4122 version-4 token (canonical lowercase 8-4-4-4-12 form)."""
    return str(uuid.uuid4())


def is_uuid4(token: str) -> bool:
    try:
        parsed = uuid.UUID(token)
    except (ValueError, AttributeError, TypeError):
        return False
    return parsed.version == 4 and str(parsed) == token.lower()


# --- one-time link payloads ----------------------------------------------------------


def make_link_payload(token: str, requester_ip: str, cookie_key: bytes) -> str:
    """Seal (token, requester IP) into one opaque url-safe string.

    The IP travels inside the plaintext, not as AD, because the server has to
    read it back when the link is opened.
    """
    ip = ipaddress.ip_address(requester_ip)  # raises ValueError on garbage
    if not is_uuid4(token):
        raise ValueError("link token must be a UUID v4")
    plaintext = f"{token}|{ip}".encode("ascii")
    return seal(cookie_key, plaintext, LINK_AD).to_b64()


def open_link_payload(payload: str, cookie_key: bytes) -> tuple[str, str]:
    """Returns (token, requester_ip); AuthFailure on any tampering."""
    blob = SealedBlob.from_b64(payload)
    plaintext = open_blob(cookie_key, blob, LINK_AD)
    try:
        token, ip_text = plaintext.decode("ascii").split("|", 1)
        ip = ipaddress.ip_address(ip_text)
    except (UnicodeDecodeError, ValueError) as exc:
        raise AuthFailure("malformed link payload") from exc
    if not is_uuid4(token):
        raise AuthFailure("malformed link token")
    return token, str(ip)


# --- key file --------------------------------------------------------------------------


@dataclass
class ServerKeys:
    cookie_key: bytes  # 32 bytes, seals session cookies and link payloads
    app_key: bytes  # 16 bytes, seals at-rest payment-token payloads

    def __post_init__(self):
        if len(self.cookie_key) != COOKIE_KEY_LEN:
            raise ValueError("cookie key must be 32 bytes")
        if len(self.app_key) != APP_KEY_LEN:
            raise ValueError("app key must be 16 bytes")


def load_or_create_keys(path: str | Path) -> ServerKeys:
    """48-byte key file (cookie key then app key), 0600, persistent across boots."""
    path = Path(path)
    if path.exists():
        raw = path.read_bytes()
        if len(raw) != COOKIE_KEY_LEN + APP_KEY_LEN:
            raise ValueError(f"key file {path} corrupt: expected 48 bytes, got {len(raw)}")
        return ServerKeys(raw[:COOKIE_KEY_LEN], raw[COOKIE_KEY_LEN:])
    raw = _random_bytes(COOKIE_KEY_LEN + APP_KEY_LEN)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd = os.open(path, os.O_WRONLY | os.O_CREAT | os.O_EXCL, 0o600)
    try:
        os.write(fd, raw)
    finally:
        os.close(fd)
    return ServerKeys(raw[:COOKIE_KEY_LEN], raw[COOKIE_KEY_LEN:])
