"""Browser-format ceremony tests: synthesized WebAuthn payloads end to end.

A tiny CBOR encoder here builds genuine attestation objects (ES256 and RS256
COSE keys, "none" and "packed" formats) so the whole decode-verify-store path
runs exactly as it would against a real browser, without one.
"""

import hashlib
import json
import os

import pytest
from cryptography.hazmat.primitives import hashes
from cryptography.hazmat.primitives.asymmetric import ec, padding

from pp2pp import crypto
from pp2pp.authenticator import FLAG_UP, FLAG_UV
from pp2pp.clockwork import ManualClock
from pp2pp.service import ApiRequest, Service, ServiceConfig
from pp2pp.webauthn_compat import FLAG_AT, cbor_decode, cose_key_to_wire

RP_ID = "pp2pp.local"
IP = "203.0.113.5"


# -- minimal CBOR encoder (test-side only) ------------------------------------


def cbor_encode(value) -> bytes:
    if isinstance(value, int) and value >= 0:
        return _head(0, value)
    if isinstance(value, int):
        return _head(1, -1 - value)
    if isinstance(value, bytes):
        return _head(2, len(value)) + value
    if isinstance(value, str):
        raw = value.encode()
        return _head(3, len(raw)) + raw
    if isinstance(value, list):
        return _head(4, len(value)) + b"".join(cbor_encode(v) for v in value)
    if isinstance(value, dict):
        out = _head(5, len(value))
        for k, v in value.items():
            out += cbor_encode(k) + cbor_encode(v)
        return out
    raise TypeError(type(value))


def _head(major: int, arg: int) -> bytes:
    if arg < 24:
        return bytes([(major << 5) | arg])
    if arg < 256:
        return bytes([(major << 5) | 24, arg])
    if arg < 65536:
        return bytes([(major << 5) | 25]) + arg.to_bytes(2, "big")
    return bytes([(major << 5) | 26]) + arg.to_bytes(4, "big")


# -- synthetic browser authenticator ---------------------------------------------


class FakeBrowserAuthenticator:
    """Produces what navigator.credentials would, for ES256 platform keys."""

    def __init__(self, origin="http://localhost:8455", counter_works=True):
        self.key = ec.generate_private_key(ec.SECP256R1())
        self.credential_id = os.urandom(16)
        self.origin = origin
        self.counter = 0
        self.counter_works = counter_works

    def cose_key(self) -> dict:
        nums = self.key.public_key().public_numbers()
        return {1: 2, 3: -7, -1: 1, -2: nums.x.to_bytes(32, "big"), -3: nums.y.to_bytes(32, "big")}

    def client_data(self, ceremony_type: str, challenge: bytes) -> bytes:
        return json.dumps(
            {"type": ceremony_type, "challenge": crypto.b64u(challenge), "origin": self.origin}
        ).encode()

    def create(self, rp_id: str, challenge: bytes, fmt: str = "none") -> dict:
        auth_data = (
            hashlib.sha256(rp_id.encode()).digest()
            + bytes([FLAG_UP | FLAG_UV | FLAG_AT])
            + (0).to_bytes(4, "big")
            + bytes(16)  # aaguid
            + len(self.credential_id).to_bytes(2, "big")
            + self.credential_id
            + cbor_encode(self.cose_key())
        )
        client_data = self.client_data("webauthn.create", challenge)
        if fmt == "none":
            att_stmt = {}
        elif fmt == "packed":
            payload = auth_data + hashlib.sha256(client_data).digest()
            att_stmt = {"alg": -7, "sig": self.key.sign(payload, ec.ECDSA(hashes.SHA256()))}
        else:
            raise ValueError(fmt)
        att_obj = cbor_encode({"fmt": fmt, "attStmt": att_stmt, "authData": auth_data})
        return {
            "client_data_json": crypto.b64u(client_data),
            "attestation_object": crypto.b64u(att_obj),
        }

    def get(self, rp_id: str, challenge: bytes) -> dict:
        if self.counter_works:
            self.counter += 1
        auth_data = (
            hashlib.sha256(rp_id.encode()).digest()
            + bytes([FLAG_UP | FLAG_UV])
            + self.counter.to_bytes(4, "big")
        )
        client_data = self.client_data("webauthn.get", challenge)
        payload = auth_data + hashlib.sha256(client_data).digest()
        signature = self.key.sign(payload, ec.ECDSA(hashes.SHA256()))
        return {
            "credential_id": crypto.b64u(self.credential_id),
            "authenticator_data": crypto.b64u(auth_data),
            "client_data_json": crypto.b64u(client_data),
            "signature": crypto.b64u(signature),
        }


def call(service, method, path, body=None, cookies=None, ip=IP):
    headers = {}
    if cookies:
        headers["cookie"] = "; ".join(f"{k}={v}" for k, v in cookies.items())
    return service.handle(
        ApiRequest(
            method=method,
            path=path,
            client_ip=ip,
            headers=headers,
            body=json.dumps(body).encode() if body is not None else b"",
        )
    )


@pytest.fixture
def service():
    return Service(ServiceConfig(rate_limiting=False), clock=ManualClock())


def browser_register(service, authenticator, username, fmt="none"):
    begin = call(service, "POST", "/register/begin", {"username": username, "email": f"{username}@x.org"})
    assert begin.status == 200, begin.body
    challenge = crypto.unb64u(begin.body["challenge"])
    return call(
        service,
        "POST",
        "/register/finish",
        {
            "username": username,
            "format": "webauthn",
            "webauthn": authenticator.create(RP_ID, challenge, fmt=fmt),
        },
    )


def browser_login(service, authenticator, username):
    begin = call(service, "POST", "/auth/begin", {"username": username})
    assert begin.status == 200, begin.body
    challenge = crypto.unb64u(begin.body["challenge"])
    finish = call(
        service,
        "POST",
        "/auth/finish",
        {"username": username, "format": "webauthn", "webauthn": authenticator.get(RP_ID, challenge)},
    )
    if finish.status != 200:
        return finish, None
    exchanged = call(service, "POST", "/auth/exchange", {"token": finish.body["token"]})
    return exchanged, exchanged.cookies[0].split("=", 1)[1].split(";", 1)[0] if exchanged.cookies else None


class TestBrowserRegistration:
    def test_none_attestation_enrolls(self, service):
        authenticator = FakeBrowserAuthenticator()
        response = browser_register(service, authenticator, "webalice")
        assert response.status == 200, response.body
        stored = json.loads(service.data.blobs.get("pubkey", "webalice"))
        assert stored["alg"] == "ES256"

    def test_packed_self_attestation_verified(self, service):
        authenticator = FakeBrowserAuthenticator()
        response = browser_register(service, authenticator, "webbob", fmt="packed")
        assert response.status == 200, response.body

    def test_packed_with_bad_signature_rejected(self, service):
        authenticator = FakeBrowserAuthenticator()
        begin = call(service, "POST", "/register/begin", {"username": "mallory", "email": "m@x.org"})
        challenge = crypto.unb64u(begin.body["challenge"])
        payload = authenticator.create(RP_ID, challenge, fmt="packed")
        raw = bytearray(crypto.unb64u(payload["attestation_object"]))
        raw[-3] ^= 0x01  # corrupt the signature inside the CBOR
        payload["attestation_object"] = crypto.b64u(bytes(raw))
        response = call(
            service,
            "POST",
            "/register/finish",
            {"username": "mallory", "format": "webauthn", "webauthn": payload},
        )
        assert response.status in (400, 401), response.body

    def test_certificate_chains_rejected(self, service):
        authenticator = FakeBrowserAuthenticator()
        begin = call(service, "POST", "/register/begin", {"username": "certy", "email": "c@x.org"})
        challenge = crypto.unb64u(begin.body["challenge"])
        auth_data = (
            hashlib.sha256(RP_ID.encode()).digest()
            + bytes([FLAG_UP | FLAG_UV | FLAG_AT])
            + (0).to_bytes(4, "big")
            + bytes(16)
            + len(authenticator.credential_id).to_bytes(2, "big")
            + authenticator.credential_id
            + cbor_encode(authenticator.cose_key())
        )
        att_obj = cbor_encode(
            {"fmt": "packed", "attStmt": {"alg": -7, "sig": b"x", "x5c": [b"cert"]}, "authData": auth_data}
        )
        response = call(
            service,
            "POST",
            "/register/finish",
            {
                "username": "certy",
                "format": "webauthn",
                "webauthn": {
                    "client_data_json": crypto.b64u(
                        authenticator.client_data("webauthn.create", challenge)
                    ),
                    "attestation_object": crypto.b64u(att_obj),
                },
            },
        )
        assert response.status == 400, response.body

    def test_card_format_cannot_skip_attestation(self, service):
        # empty signature is only tolerated for browser ES256 enrolments
        keypair = crypto.generate_auth_keypair()
        begin = call(service, "POST", "/register/begin", {"username": "sneaky", "email": "s@x.org"})
        challenge = crypto.unb64u(begin.body["challenge"])
        from pp2pp.authenticator import authenticator_data

        response = call(
            service,
            "POST",
            "/register/finish",
            {
                "username": "sneaky",
                "public_key": crypto.rsa_public_key_to_wire(keypair.public_key),
                "assertion": {
                    "credential_id": crypto.b64u(os.urandom(32)),
                    "authenticator_data": crypto.b64u(authenticator_data(RP_ID, 0)),
                    "signature": crypto.b64u(b""),
                    "client_data": crypto.b64u(challenge),
                },
            },
        )
        assert response.status == 401 and response.body["code"] == "bad_signature"


class TestBrowserLogin:
    def test_full_browser_flow(self, service):
        authenticator = FakeBrowserAuthenticator()
        assert browser_register(service, authenticator, "webalice").status == 200
        result, cookie = browser_login(service, authenticator, "webalice")
        assert result.status == 200 and cookie
        account = call(service, "GET", "/account", cookies={"pp2pp_session": cookie})
        assert account.status == 200 and account.body["balance"] == 10_000

    def test_wrong_key_rejected(self, service):
        authenticator = FakeBrowserAuthenticator()
        imposter = FakeBrowserAuthenticator()
        imposter.credential_id = authenticator.credential_id
        assert browser_register(service, authenticator, "webalice").status == 200
        result, _ = browser_login(service, imposter, "webalice")
        assert result.status == 401 and result.body["code"] == "bad_signature"

    def test_zero_counter_authenticators_allowed(self, service):
        authenticator = FakeBrowserAuthenticator(counter_works=False)
        assert browser_register(service, authenticator, "webalice").status == 200
        first, _ = browser_login(service, authenticator, "webalice")
        second, _ = browser_login(service, authenticator, "webalice")
        assert first.status == 200 and second.status == 200

    def test_working_counter_still_enforced(self, service):
        authenticator = FakeBrowserAuthenticator()
        assert browser_register(service, authenticator, "webalice").status == 200
        browser_login(service, authenticator, "webalice")
        authenticator.counter = 0  # clone rewind
        result, _ = browser_login(service, authenticator, "webalice")
        assert result.status == 401 and result.body["code"] == "counter_regression"

    def test_card_and_browser_coexist(self, service):
        from pp2pp.authenticator import SmartCard

        authenticator = FakeBrowserAuthenticator()
        assert browser_register(service, authenticator, "webalice").status == 200
        card = SmartCard(uv_secret="1234")
        begin = call(service, "POST", "/register/begin", {"username": "cardbob", "email": "cb@x.org"})
        challenge = crypto.unb64u(begin.body["challenge"])
        _, pub, assertion = card.make_credential(RP_ID, b"cardbob", challenge, "1234")
        assert (
            call(
                service,
                "POST",
                "/register/finish",
                {"username": "cardbob", "public_key": pub, "assertion": assertion.to_wire()},
            ).status
            == 200
        )
        web_result, cookie = browser_login(service, authenticator, "webalice")
        assert web_result.status == 200
        send = call(
            service,
            "POST",
            "/pay/direct",
            {"payee": "cardbob", "amount": 100},
            cookies={"pp2pp_session": cookie},
        )
        assert send.status == 200 and send.body["state"] == "Settled"

    def test_unknown_format_rejected(self, service):
        response = call(
            service,
            "POST",
            "/register/finish",
            {"username": "x", "format": "pkcs11", "webauthn": {}},
        )
        assert response.status == 400


class TestCoseDecoding:
    def test_rs256_cose_key(self):
        keypair = crypto.generate_auth_keypair()
        nums = keypair.public_key.public_numbers()
        cose = {
            1: 3,
            3: -257,
            -1: nums.n.to_bytes(256, "big"),
            -2: nums.e.to_bytes(3, "big"),
        }
        wire = cose_key_to_wire(cose)
        assert wire["alg"] == "RS256"
        sig = crypto.sign(keypair.private_key, b"msg")
        assert crypto.verify_wire_key(wire, b"msg", sig)

    def test_unsupported_cose_rejected(self):
        with pytest.raises(ValueError):
            cose_key_to_wire({1: 1, 3: -8})  # OKP/EdDSA not supported

    def test_cbor_roundtrip(self):
        value = {
            "fmt": "none",
            "attStmt": {},
            "authData": b"\x01\x02" * 40,
            1: -7,
            -2: [1, 2, b"three", "four"],
        }
        assert cbor_decode(cbor_encode(value)) == value

    def test_cbor_long_strings(self):
        value = {"big": b"x" * 70_000, "txt": "y" * 300}
        assert cbor_decode(cbor_encode(value)) == value
