"""Software emulation of the FIDO2 smart card.

Private keys are generated on the card and never leave it: every outbound
message carries only public material. Before signing anything the card checks
the presented relying-party ID against the credential's enrolled RP ID: a
phished origin asking for a different RP gets InvalidDomain and no signature.
A simulated user-verification gate (passphrase standing in for the fingerprint
sensor) guards both enrolment and assertions, and a strictly increasing
per-credential counter is folded into every assertion so the relying party can
spot cloned cards.

The card persists to an encrypted file so the CLI can treat it like a
removable smart card across runs.
"""

from __future__ import annotations

import hashlib
import hmac
import json
import os
import threading
from dataclasses import dataclass
from pathlib import Path

from cryptography.hazmat.primitives import serialization
from cryptography.hazmat.primitives.kdf.scrypt import Scrypt

from . import crypto
from .errors import (
    AuthFailure,
    BadPassphrase,
    CardLocked,
    CorruptCardFile,
    InvalidDomain,
    UserVerificationFailed,
)

CARD_MAGIC = b"PP2PPCARD1"
CREDENTIAL_ID_LEN = 32
FLAG_UP = 0x01
FLAG_UV = 0x04


def rp_id_hash(rp_id: str) -> bytes:
    return hashlib.sha256(rp_id.encode("utf-8")).digest()


def authenticator_data(rp_id: str, sign_count: int, uv: bool = True) -> bytes:
    """rp_id_hash (32) || flags (1) || sign_count (4, big-endian)."""
    flags = FLAG_UP | (FLAG_UV if uv else 0)
    return rp_id_hash(rp_id) + bytes([flags]) + sign_count.to_bytes(4, "big")


@dataclass
class AssertionResponse:
    """What the card hands back: public data plus a signature, never keys.

    The signature covers authenticator_data || SHA-256(client_data); client_data
    itself rides along so the relying party can locate and verify the exact
    challenge that was signed.
    """

    credential_id: bytes
    authenticator_data: bytes
    signature: bytes
    client_data: bytes

    @property
    def sign_count(self) -> int:
        return int.from_bytes(self.authenticator_data[33:37], "big")

    @property
    def rp_id_hash(self) -> bytes:
        return self.authenticator_data[:32]

    def signed_payload(self) -> bytes:
        return self.authenticator_data + hashlib.sha256(self.client_data).digest()

    def challenge_nonce(self) -> bytes | None:
        """The server challenge this response answers.

        The card signs the raw 16-byte nonce as its client data; browsers sign
        a clientDataJSON carrying the nonce base64url-encoded.
        """
        if len(self.client_data) == 16:
            return self.client_data
        try:
            parsed = json.loads(self.client_data)
            nonce = crypto.unb64u(parsed["challenge"])
        except (ValueError, KeyError, TypeError):
            return None
        return nonce if len(nonce) == 16 else None

    def to_wire(self) -> dict:
        return {
            "credential_id": crypto.b64u(self.credential_id),
            "authenticator_data": crypto.b64u(self.authenticator_data),
            "signature": crypto.b64u(self.signature),
            "client_data": crypto.b64u(self.client_data),
        }

    @classmethod
    def from_wire(cls, wire: dict) -> "AssertionResponse":
        return cls(
            credential_id=crypto.unb64u(wire["credential_id"]),
            authenticator_data=crypto.unb64u(wire["authenticator_data"]),
            signature=crypto.unb64u(wire["signature"]),
            client_data=crypto.unb64u(wire["client_data"]),
        )


@dataclass
class _Credential:
    credential_id: bytes
    keypair: crypto.AuthKeyPair
    sign_count: int


class SmartCard:
    """One logical card: single owner, operations serialized by an internal lock."""

    def __init__(self, card_id: str | None = None, uv_secret: str = ""):
        self.card_id = card_id or crypto.new_auth_token()
        self._uv_secret = uv_secret
        self._credentials: dict[tuple[str, bytes], _Credential] = {}
        self.locked = False
        self._lock = threading.Lock()

    # -- gates -------------------------------------------------------------

    def _check_gates(self, uv_input: str) -> None:
        if self.locked:
            raise CardLocked()
        if not hmac.compare_digest(uv_input.encode(), self._uv_secret.encode()):
            raise UserVerificationFailed()

    def lock(self) -> None:
        self.locked = True

    def unlock(self, uv_input: str) -> None:
        if not hmac.compare_digest(uv_input.encode(), self._uv_secret.encode()):
            raise UserVerificationFailed()
        self.locked = False

    # -- ceremonies ----------------------------------------------------------

    def make_credential(
        self, rp_id: str, user_handle: bytes, challenge: bytes, uv_input: str
    ) -> tuple[bytes, dict, AssertionResponse]:
        """Enroll: new keypair on-card, returns (credential_id, public key wire,
        self-attestation over the registration challenge).

        Re-enrolling the same (rp_id, user_handle) replaces the old credential;
        a replaced key never signs again.
        """
        with self._lock:
            self._check_gates(uv_input)
            keypair = crypto.generate_auth_keypair()
            cred = _Credential(
                credential_id=os.urandom(CREDENTIAL_ID_LEN),
                keypair=keypair,
                sign_count=0,
            )
            self._credentials[(rp_id, bytes(user_handle))] = cred
            auth_data = authenticator_data(rp_id, cred.sign_count)
            client_data = bytes(challenge)
            payload = auth_data + hashlib.sha256(client_data).digest()
            response = AssertionResponse(
                credential_id=cred.credential_id,
                authenticator_data=auth_data,
                signature=crypto.sign(keypair.private_key, payload),
                client_data=client_data,
            )
            return cred.credential_id, crypto.rsa_public_key_to_wire(keypair.public_key), response

    def get_assertion(
        self,
        rp_id: str,
        challenge: bytes,
        client_data: bytes | None = None,
        uv_input: str = "",
        user_handle: bytes | None = None,
    ) -> AssertionResponse:
        """Sign a challenge for an enrolled RP; counter bump and signing are atomic."""
        with self._lock:
            self._check_gates(uv_input)
            cred = self._find(rp_id, user_handle)
            cred.sign_count += 1
            auth_data = authenticator_data(rp_id, cred.sign_count)
            cd = bytes(client_data) if client_data is not None else bytes(challenge)
            payload = auth_data + hashlib.sha256(cd).digest()
            return AssertionResponse(
                credential_id=cred.credential_id,
                authenticator_data=auth_data,
                signature=crypto.sign(cred.keypair.private_key, payload),
                client_data=cd,
            )

    def _find(self, rp_id: str, user_handle: bytes | None) -> _Credential:
        if user_handle is not None:
            cred = self._credentials.get((rp_id, bytes(user_handle)))
            if cred is None:
                raise InvalidDomain(f"no credential for RP {rp_id!r}")
            return cred
        matches = [c for (rp, _), c in self._credentials.items() if rp == rp_id]
        if not matches:
            raise InvalidDomain(f"no credential for RP {rp_id!r}")
        return matches[-1]

    def force_sign_count(self, rp_id: str, user_handle: bytes, value: int) -> None:
        """Test hook: fake a cloned card by rewinding the counter."""
        self._credentials[(rp_id, bytes(user_handle))].sign_count = value

    def rp_ids(self) -> list[str]:
        return sorted({rp for rp, _ in self._credentials})

    def describe(self) -> dict:
        """Public card summary; safe to print."""
        return {
            "card_id": self.card_id,
            "locked": self.locked,
            "credentials": [
                {
                    "rp_id": rp,
                    "user_handle": handle.decode("utf-8", "replace"),
                    "credential_id": crypto.b64u(cred.credential_id),
                    "sign_count": cred.sign_count,
                }
                for (rp, handle), cred in self._credentials.items()
            ],
        }

    # -- CTAP-like message interface ------------------------------------------

    def handle_message(self, message: dict) -> dict:
        """JSON-object request/response; binary fields base64url."""
        try:
            op = message.get("op")
            if op == "make_credential":
                cred_id, pub, assertion = self.make_credential(
                    rp_id=message["rp_id"],
                    user_handle=crypto.unb64u(message["user_handle"]),
                    challenge=crypto.unb64u(message["challenge"]),
                    uv_input=message.get("uv", ""),
                )
                return {
                    "ok": True,
                    "credential_id": crypto.b64u(cred_id),
                    "public_key": pub,
                    "assertion": assertion.to_wire(),
                }
            if op == "get_assertion":
                assertion = self.get_assertion(
                    rp_id=message["rp_id"],
                    challenge=crypto.unb64u(message["challenge"]),
                    client_data=(
                        crypto.unb64u(message["client_data"])
                        if "client_data" in message
                        else None
                    ),
                    uv_input=message.get("uv", ""),
                    user_handle=(
                        crypto.unb64u(message["user_handle"])
                        if "user_handle" in message
                        else None
                    ),
                )
                return {"ok": True, "assertion": assertion.to_wire()}
            return {"ok": False, "error": "bad_request"}
        except (InvalidDomain, UserVerificationFailed, CardLocked) as exc:
            return {"ok": False, "error": exc.code}

    # -- persistence -------------------------------------------------------------

    def _state_json(self) -> bytes:
        creds = []
        for (rp, handle), cred in self._credentials.items():
            pem = cred.keypair.private_key.private_bytes(
                serialization.Encoding.PEM,
                serialization.PrivateFormat.PKCS8,
                serialization.NoEncryption(),
            )
            creds.append(
                {
                    "rp_id": rp,
                    "user_handle": crypto.b64u(handle),
                    "credential_id": crypto.b64u(cred.credential_id),
                    "private_pem": pem.decode(),
                    "sign_count": cred.sign_count,
                }
            )
        return json.dumps(
            {
                "card_id": self.card_id,
                "uv_secret": self._uv_secret,
                "locked": self.locked,
                "credentials": creds,
            }
        ).encode()

    def export_card(self, path: str | Path, passphrase: str) -> None:
        """Seal the whole card under a passphrase-derived key.

        Layout: magic || salt || sealed state || SHA-256 of everything before it.
        The trailing hash catches corruption so it is distinguishable from a
        wrong passphrase (which only the AEAD can detect).
        """
        salt = os.urandom(16)
        key = _derive_card_key(passphrase, salt)
        blob = crypto.seal(key, self._state_json(), CARD_MAGIC + salt)
        body = CARD_MAGIC + salt + blob.to_bytes()
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_suffix(".tmp")
        tmp.write_bytes(body + hashlib.sha256(body).digest())
        os.replace(tmp, path)

    @classmethod
    def import_card(cls, path: str | Path, passphrase: str) -> "SmartCard":
        try:
            raw = Path(path).read_bytes()
        except FileNotFoundError:
            raise CorruptCardFile("card file missing") from None
        if len(raw) < len(CARD_MAGIC) + 16 + 28 + 32:
            raise CorruptCardFile("card file truncated")
        body, digest = raw[:-32], raw[-32:]
        if hashlib.sha256(body).digest() != digest:
            raise CorruptCardFile("card file checksum mismatch")
        if not body.startswith(CARD_MAGIC):
            raise CorruptCardFile("bad magic")
        salt = body[len(CARD_MAGIC) : len(CARD_MAGIC) + 16]
        sealed = body[len(CARD_MAGIC) + 16 :]
        key = _derive_card_key(passphrase, salt)
        try:
            state = json.loads(
                crypto.open_blob(key, crypto.SealedBlob.from_bytes(sealed), CARD_MAGIC + salt)
            )
        except AuthFailure:
            raise BadPassphrase() from None
        card = cls(card_id=state["card_id"], uv_secret=state["uv_secret"])
        card.locked = state["locked"]
        for entry in state["credentials"]:
            private = serialization.load_pem_private_key(
                entry["private_pem"].encode(), password=None
            )
            card._credentials[(entry["rp_id"], crypto.unb64u(entry["user_handle"]))] = _Credential(
                credential_id=crypto.unb64u(entry["credential_id"]),
                keypair=crypto.AuthKeyPair(private, private.public_key()),
                sign_count=entry["sign_count"],
            )
        return card

    def private_exponent_bytes(self) -> list[bytes]:
        """Test support: the secrets that must never appear in any message."""
        out = []
        for cred in self._credentials.values():
            d = cred.keypair.private_key.private_numbers().d
            out.append(d.to_bytes((d.bit_length() + 7) // 8, "big"))
        return out


def _derive_card_key(passphrase: str, salt: bytes) -> bytes:
    return Scrypt(salt=salt, length=32, n=2**14, r=8, p=1).derive(passphrase.encode())
