"""Smart-card simulator tests: RP binding, UV gate, counters, key confinement."""

import hashlib
import json
import os

import pytest

from pp2pp import crypto
from pp2pp.authenticator import AssertionResponse, SmartCard, authenticator_data
from pp2pp.errors import (
    BadPassphrase,
    CardLocked,
    CorruptCardFile,
    InvalidDomain,
    UserVerificationFailed,
)

RP = "pp2pp.example"
UV = "fingerprint-1234"


@pytest.fixture
def card():
    return SmartCard(uv_secret=UV)


def enroll(card, rp=RP, user=b"alice"):
    challenge = os.urandom(16)
    cred_id, pub, response = card.make_credential(rp, user, challenge, UV)
    return challenge, cred_id, pub, response


class TestMakeCredential:
    def test_enrolment_roundtrip(self, card):
        challenge, cred_id, pub, response = enroll(card)
        assert len(cred_id) == 32
        public_key = crypto.rsa_public_key_from_wire(pub)
        assert crypto.verify(public_key, response.signed_payload(), response.signature)
        assert response.rp_id_hash == hashlib.sha256(RP.encode()).digest()
        assert response.sign_count == 0
        assert response.client_data == challenge

    def test_wrong_uv_rejected(self, card):
        with pytest.raises(UserVerificationFailed):
            card.make_credential(RP, b"alice", os.urandom(16), "wrong")

    def test_locked_card_rejected(self, card):
        card.lock()
        with pytest.raises(CardLocked):
            card.make_credential(RP, b"alice", os.urandom(16), UV)
        card.unlock(UV)
        enroll(card)

    def test_reenrolment_replaces_credential(self, card):
        # Either enrolment order: only the latest public key verifies assertions.
        _, cred1, pub1, _ = enroll(card)
        _, cred2, pub2, _ = enroll(card)
        assert cred1 != cred2
        assertion = card.get_assertion(RP, os.urandom(16), uv_input=UV)
        old_key = crypto.rsa_public_key_from_wire(pub1)
        new_key = crypto.rsa_public_key_from_wire(pub2)
        assert not crypto.verify(old_key, assertion.signed_payload(), assertion.signature)
        assert crypto.verify(new_key, assertion.signed_payload(), assertion.signature)
        assert assertion.credential_id == cred2


class TestGetAssertion:
    def test_matching_rp_succeeds(self, card):
        _, _, pub, _ = enroll(card)
        challenge = os.urandom(16)
        assertion = card.get_assertion(RP, challenge, uv_input=UV)
        key = crypto.rsa_public_key_from_wire(pub)
        assert crypto.verify(key, assertion.signed_payload(), assertion.signature)

    def test_phished_rp_gets_invalid_domain(self, card):
        enroll(card)
        with pytest.raises(InvalidDomain):
            card.get_assertion("evil.example", os.urandom(16), uv_input=UV)

    def test_rp_match_is_case_sensitive(self, card):
        enroll(card)
        with pytest.raises(InvalidDomain):
            card.get_assertion(RP.upper(), os.urandom(16), uv_input=UV)

    def test_sign_count_strictly_increases(self, card):
        enroll(card)
        counts = [card.get_assertion(RP, os.urandom(16), uv_input=UV).sign_count for _ in range(5)]
        assert counts == [1, 2, 3, 4, 5]

    def test_sign_count_unique_under_concurrent_assertions(self, card):
        # counter bump and signing are atomic together: no interleaving may
        # ever emit a duplicate or out-of-order count
        import threading

        _, _, pub, _ = enroll(card)
        counts: list[int] = []
        lock = threading.Lock()

        def worker():
            for _ in range(10):
                assertion = card.get_assertion(RP, os.urandom(16), uv_input=UV)
                with lock:
                    counts.append(assertion.sign_count)

        threads = [threading.Thread(target=worker) for _ in range(8)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        assert len(counts) == 80
        assert len(set(counts)) == 80
        assert sorted(counts) == list(range(1, 81))

    def test_client_data_bound_into_signature(self, card):
        _, _, pub, _ = enroll(card)
        challenge = os.urandom(16)
        assertion = card.get_assertion(RP, challenge, client_data=b"ctx-a", uv_input=UV)
        key = crypto.rsa_public_key_from_wire(pub)
        forged = AssertionResponse(
            credential_id=assertion.credential_id,
            authenticator_data=assertion.authenticator_data,
            signature=assertion.signature,
            client_data=b"ctx-b",
        )
        assert not crypto.verify(key, forged.signed_payload(), forged.signature)

    def test_wrong_uv_rejected(self, card):
        enroll(card)
        with pytest.raises(UserVerificationFailed):
            card.get_assertion(RP, os.urandom(16), uv_input="nope")

    def test_authenticator_data_layout(self):
        data = authenticator_data("rp.example", 0x01020304)
        assert data[:32] == hashlib.sha256(b"rp.example").digest()
        assert data[32] == 0x05  # UP | UV
        assert data[33:37] == bytes([1, 2, 3, 4])


class TestKeyConfinement:
    def test_no_private_material_in_any_outbound_message(self, card):
        messages = []
        challenge = os.urandom(16)
        messages.append(
            card.handle_message(
                {
                    "op": "make_credential",
                    "rp_id": RP,
                    "user_handle": crypto.b64u(b"alice"),
                    "challenge": crypto.b64u(challenge),
                    "uv": UV,
                }
            )
        )
        for _ in range(3):
            messages.append(
                card.handle_message(
                    {
                        "op": "get_assertion",
                        "rp_id": RP,
                        "challenge": crypto.b64u(os.urandom(16)),
                        "uv": UV,
                    }
                )
            )
        messages.append(card.describe())
        secrets = card.private_exponent_bytes()
        assert secrets
        for message in messages:
            wire = json.dumps(message).encode()
            for d in secrets:
                assert d not in wire
                assert crypto.b64u(d).encode() not in wire
                assert d.hex().encode() not in wire


class TestMessageInterface:
    def test_error_messages_not_exceptions(self, card):
        response = card.handle_message(
            {
                "op": "get_assertion",
                "rp_id": RP,
                "challenge": crypto.b64u(os.urandom(16)),
                "uv": UV,
            }
        )
        assert response == {"ok": False, "error": "invalid_domain"}
        assert card.handle_message({"op": "nonsense"}) == {"ok": False, "error": "bad_request"}

    def test_assertion_wire_roundtrip(self, card):
        enroll(card)
        assertion = card.get_assertion(RP, os.urandom(16), uv_input=UV)
        again = AssertionResponse.from_wire(assertion.to_wire())
        assert again == assertion


class TestCardFile:
    def test_export_import_roundtrip(self, card, tmp_path):
        enroll(card)
        enroll(card, rp="other.example", user=b"bob")
        card.get_assertion(RP, os.urandom(16), uv_input=UV)
        path = tmp_path / "card.bin"
        card.export_card(path, "hunter2")

        restored = SmartCard.import_card(path, "hunter2")
        assert restored.card_id == card.card_id
        assert restored.describe() == card.describe()
        # restored card still signs under the same key
        assertion = restored.get_assertion(RP, os.urandom(16), uv_input=UV)
        assert assertion.sign_count == 2

    def test_wrong_passphrase(self, card, tmp_path):
        enroll(card)
        path = tmp_path / "card.bin"
        card.export_card(path, "hunter2")
        with pytest.raises(BadPassphrase):
            SmartCard.import_card(path, "hunter3")

    def test_every_flipped_byte_is_corrupt(self, card, tmp_path):
        enroll(card)
        path = tmp_path / "card.bin"
        card.export_card(path, "hunter2")
        raw = path.read_bytes()
        # Sample byte positions across the whole file, including the checksum.
        for idx in list(range(0, len(raw), max(1, len(raw) // 64))) + [len(raw) - 1]:
            bad = bytearray(raw)
            bad[idx] ^= 0x40
            path.write_bytes(bytes(bad))
            with pytest.raises(CorruptCardFile):
                SmartCard.import_card(path, "hunter2")

    def test_missing_file(self, tmp_path):
        with pytest.raises(CorruptCardFile):
            SmartCard.import_card(tmp_path / "nope.bin", "pw")

    def test_magic_required(self, tmp_path):
        path = tmp_path / "card.bin"
        body = b"NOTACARD!!" + os.urandom(64)
        path.write_bytes(body + hashlib.sha256(body).digest())
        with pytest.raises(CorruptCardFile):
            SmartCard.import_card(path, "pw")
