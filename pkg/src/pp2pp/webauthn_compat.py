"""Decoding layer for real browser WebAuthn ceremonies.

Browsers produce CBOR attestation objects and JSON client data instead of the
card simulator's flat shapes. This module normalizes both ceremonies into the
same AssertionResponse / public-key-wire structures the relying party already
verifies, so the server has exactly one verification path and one format
concession.

Only the CBOR subset WebAuthn actually uses is parsed (ints, byte/text
strings, arrays, maps). Supported credential keys: ES256 (EC2/P-256) and
RS256. Attestation statements: "none" (trust-on-first-use, no signature) and
"packed" self-attestation; certificate chains are out of scope and rejected.
"""

from __future__ import annotations

import json

from cryptography.hazmat.primitives import serialization
from cryptography.hazmat.primitives.asymmetric import ec

from . import crypto
from .authenticator import AssertionResponse

FLAG_AT = 0x40


# -- minimal CBOR ------------------------------------------------------------


def _read_head(data: bytes, pos: int) -> tuple[int, int, int]:
    initial = data[pos]
    major, info = initial >> 5, initial & 0x1F
    pos += 1
    if info < 24:
        return major, info, pos
    if info == 24:
        return major, data[pos], pos + 1
    if info == 25:
        return major, int.from_bytes(data[pos : pos + 2], "big"), pos + 2
    if info == 26:
        return major, int.from_bytes(data[pos : pos + 4], "big"), pos + 4
    if info == 27:
        return major, int.from_bytes(data[pos : pos + 8], "big"), pos + 8
    raise ValueError("unsupported CBOR length encoding")


def _decode_item(data: bytes, pos: int):
    major, arg, pos = _read_head(data, pos)
    if major == 0:
        return arg, pos
    if major == 1:
        return -1 - arg, pos
    if major == 2:
        return data[pos : pos + arg], pos + arg
    if major == 3:
        return data[pos : pos + arg].decode("utf-8"), pos + arg
    if major == 4:
        items = []
        for _ in range(arg):
            item, pos = _decode_item(data, pos)
            items.append(item)
        return items, pos
    if major == 5:
        result = {}
        for _ in range(arg):
            key, pos = _decode_item(data, pos)
            value, pos = _decode_item(data, pos)
            result[key] = value
        return result, pos
    raise ValueError(f"unsupported CBOR major type {major}")


def cbor_decode(data: bytes):
    item, pos = _decode_item(data, 0)
    return item


def cbor_decode_prefix(data: bytes):
    """Decode one item and also return how many bytes it consumed."""
    return _decode_item(data, 0)


# -- COSE key -> stored wire form ------------------------------------------------


def cose_key_to_wire(cose: dict) -> dict:
    kty = cose.get(1)
    alg = cose.get(3)
    if kty == 2 and alg == -7:  # EC2 / ES256
        if cose.get(-1) != 1:
            raise ValueError("only P-256 supported")
        x = int.from_bytes(cose[-2], "big")
        y = int.from_bytes(cose[-3], "big")
        key = ec.EllipticCurvePublicNumbers(x, y, ec.SECP256R1()).public_key()
        der = key.public_bytes(
            serialization.Encoding.DER, serialization.PublicFormat.SubjectPublicKeyInfo
        )
        return {"alg": "ES256", "spki": crypto.b64u(der)}
    if kty == 3 and alg == -257:  # RSA / RS256
        return {
            "alg": "RS256",
            "n": crypto.b64u(cose[-1]),
            "e": int.from_bytes(cose[-2], "big"),
        }
    raise ValueError(f"unsupported COSE key (kty={kty}, alg={alg})")


# -- authenticator data --------------------------------------------------------


def parse_attested_credential(auth_data: bytes) -> tuple[bytes, dict]:
    """Extract (credential_id, public key wire) from registration authData."""
    if len(auth_data) < 37:
        raise ValueError("authenticator data too short")
    flags = auth_data[32]
    if not flags & FLAG_AT:
        raise ValueError("no attested credential data present")
    pos = 37 + 16  # skip AAGUID
    cred_len = int.from_bytes(auth_data[pos : pos + 2], "big")
    pos += 2
    credential_id = auth_data[pos : pos + cred_len]
    pos += cred_len
    cose, _ = cbor_decode_prefix(auth_data[pos:])
    return credential_id, cose_key_to_wire(cose)


def _client_data_type(client_data_json: bytes, expected: str) -> None:
    parsed = json.loads(client_data_json)
    if parsed.get("type") != expected:
        raise ValueError(f"client data type is not {expected}")


# -- ceremony decoding -------------------------------------------------------------


def decode_registration(body: dict) -> tuple[dict, AssertionResponse]:
    """Normalize a browser create() result.

    body: {"client_data_json": b64url, "attestation_object": b64url}

    "none" attestation carries no signature; the returned response has an
    empty signature and the relying party treats it as trust-on-first-use.
    "packed" self-attestation (no certificate chain) is verified like any
    other assertion.
    """
    client_data = crypto.unb64u(body["client_data_json"])
    _client_data_type(client_data, "webauthn.create")
    att_obj = cbor_decode(crypto.unb64u(body["attestation_object"]))
    if not isinstance(att_obj, dict):
        raise ValueError("attestation object is not a map")
    auth_data = att_obj["authData"]
    fmt = att_obj["fmt"]
    credential_id, public_key = parse_attested_credential(auth_data)

    if fmt == "none":
        signature = b""
    elif fmt == "packed":
        att_stmt = att_obj.get("attStmt", {})
        if "x5c" in att_stmt:
            raise ValueError("certificate attestation chains not supported")
        signature = att_stmt["sig"]
    else:
        raise ValueError(f"unsupported attestation format {fmt!r}")

    response = AssertionResponse(
        credential_id=credential_id,
        authenticator_data=auth_data,
        signature=signature,
        client_data=client_data,
    )
    return public_key, response


def decode_assertion(body: dict) -> AssertionResponse:
    """Normalize a browser get() result.

    body: {"credential_id": b64url, "authenticator_data": b64url,
           "client_data_json": b64url, "signature": b64url}
    """
    client_data = crypto.unb64u(body["client_data_json"])
    _client_data_type(client_data, "webauthn.get")
    return AssertionResponse(
        credential_id=crypto.unb64u(body["credential_id"]),
        authenticator_data=crypto.unb64u(body["authenticator_data"]),
        signature=crypto.unb64u(body["signature"]),
        client_data=client_data,
    )
