"""Ceremony, session, and one-time-link tests for the relying party."""

import os
import threading

import pytest

from pp2pp import crypto
from pp2pp.authenticator import AssertionResponse, SmartCard, authenticator_data
from pp2pp.clockwork import ManualClock
from pp2pp.errors import (
    BadSignature,
    ChallengeExpired,
    ChallengeMissing,
    CounterRegression,
    CredentialLocked,
    IpMismatch,
    LinkInvalid,
    RpIdMismatch,
    SessionInvalid,
    TokenMissing,
    UnknownUser,
    UserExists,
    ValidationError,
)
from pp2pp.relying_party import Outbox, RelyingParty, RpConfig
from pp2pp.store import BlobStore, RecordStore

RP_ID = "pp2pp.local"
UV = "9999"
IP_A = "203.0.113.5"
IP_B = "198.51.100.7"


@pytest.fixture
def clock():
    return ManualClock()


@pytest.fixture
def rp(clock):
    keys = crypto.ServerKeys(os.urandom(32), os.urandom(16))
    return RelyingParty(
        records=RecordStore(clock=clock),
        blobs=BlobStore(None),
        keys=keys,
        config=RpConfig(rp_id=RP_ID),
        clock=clock,
        outbox=Outbox(None),
    )


@pytest.fixture
def card():
    return SmartCard(uv_secret=UV)


def register(rp, card, username="alice", email="alice@example.org"):
    challenge = rp.begin_registration(username, email)
    _, pub, response = card.make_credential(RP_ID, username.encode(), challenge.nonce, UV)
    return rp.finish_registration(username, pub, response)


def login(rp, card, username="alice", ip=IP_A):
    challenge = rp.begin_authentication(username)
    assertion = card.get_assertion(RP_ID, challenge.nonce, uv_input=UV)
    return rp.finish_authentication(username, assertion, ip)


class TestRegistration:
    def test_begin_issues_sixteen_byte_challenge(self, rp):
        challenge = rp.begin_registration("alice", "a@x.org")
        assert len(challenge.nonce) == 16

    def test_full_flow_persists_credential(self, rp, card):
        record = register(rp, card)
        assert record["credential_ref"] == "pubkey/alice"
        stored = rp.blobs.get("pubkey", "alice")
        assert b"RS256" in stored

    def test_duplicate_username(self, rp, card):
        register(rp, card)
        with pytest.raises(UserExists):
            rp.begin_registration("alice", "other@x.org")

    @pytest.mark.parametrize("bad", ["", "x" * 300, "a b", "sp@rk", "../x"])
    def test_username_validation(self, rp, bad):
        with pytest.raises(ValidationError):
            rp.begin_registration(bad, "a@x.org")

    def test_replayed_response_gets_challenge_missing(self, rp, card):
        challenge = rp.begin_registration("alice", "a@x.org")
        _, pub, response = card.make_credential(RP_ID, b"alice", challenge.nonce, UV)
        rp.finish_registration("alice", pub, response)
        with pytest.raises(ChallengeMissing):
            rp.finish_registration("alice", pub, response)

    def test_signature_by_different_card_rejected(self, rp, card):
        challenge = rp.begin_registration("alice", "a@x.org")
        other = SmartCard(uv_secret=UV)
        _, pub, _ = card.make_credential(RP_ID, b"alice", challenge.nonce, UV)
        # response signed by a different card's key than the submitted public key
        challenge2 = rp.begin_registration("bob", "b@x.org")
        _, _, foreign = other.make_credential(RP_ID, b"bob", challenge2.nonce, UV)
        response = AssertionResponse(
            credential_id=foreign.credential_id,
            authenticator_data=foreign.authenticator_data,
            signature=foreign.signature,
            client_data=challenge.nonce,
        )
        with pytest.raises(BadSignature):
            rp.finish_registration("alice", pub, response)

    def test_expired_challenge(self, rp, card, clock):
        challenge = rp.begin_registration("alice", "a@x.org")
        _, pub, response = card.make_credential(RP_ID, b"alice", challenge.nonce, UV)
        clock.advance(120_001)
        with pytest.raises(ChallengeExpired):
            rp.finish_registration("alice", pub, response)


class TestAuthentication:
    def test_honest_flow_mints_uuid_token(self, rp, card):
        register(rp, card)
        token = login(rp, card)
        assert crypto.is_uuid4(token)

    def test_unknown_user(self, rp):
        with pytest.raises(UnknownUser):
            rp.begin_authentication("mallory")

    def test_two_live_challenges_each_work_once(self, rp, card):
        # Both consume orders must behave identically: each challenge is
        # signed when its ceremony is played and works exactly once.
        register(rp, card)
        for order in ((0, 1), (1, 0)):
            c = [rp.begin_authentication("alice"), rp.begin_authentication("alice")]
            for idx in order:
                assertion = card.get_assertion(RP_ID, c[idx].nonce, uv_input=UV)
                token = rp.finish_authentication("alice", assertion, IP_A)
                assert crypto.is_uuid4(token)
            for idx in order:
                replay = card.get_assertion(RP_ID, c[idx].nonce, uv_input=UV)
                with pytest.raises(ChallengeMissing):
                    rp.finish_authentication("alice", replay, IP_A)

    def test_assertion_replay_rejected(self, rp, card):
        register(rp, card)
        challenge = rp.begin_authentication("alice")
        assertion = card.get_assertion(RP_ID, challenge.nonce, uv_input=UV)
        rp.finish_authentication("alice", assertion, IP_A)
        with pytest.raises(ChallengeMissing):
            rp.finish_authentication("alice", assertion, IP_A)

    def test_rp_hash_mismatch_rejected_even_with_valid_signature(self, rp):
        # Craft an assertion with a key we control, enrolled legitimately, but
        # whose authenticator data names a different RP.
        keypair = crypto.generate_auth_keypair()
        challenge = rp.begin_registration("alice", "a@x.org")
        auth_data = authenticator_data(RP_ID, 0)
        payload = auth_data + __import__("hashlib").sha256(challenge.nonce).digest()
        response = AssertionResponse(
            credential_id=os.urandom(32),
            authenticator_data=auth_data,
            signature=crypto.sign(keypair.private_key, payload),
            client_data=challenge.nonce,
        )
        rp.finish_registration("alice", crypto.rsa_public_key_to_wire(keypair.public_key), response)

        auth_challenge = rp.begin_authentication("alice")
        evil_data = authenticator_data("evil.local", 1)
        evil_payload = evil_data + __import__("hashlib").sha256(auth_challenge.nonce).digest()
        evil = AssertionResponse(
            credential_id=response.credential_id,
            authenticator_data=evil_data,
            signature=crypto.sign(keypair.private_key, evil_payload),  # valid signature
            client_data=auth_challenge.nonce,
        )
        with pytest.raises(RpIdMismatch):
            rp.finish_authentication("alice", evil, IP_A)

    def test_counter_regression_locks_credential(self, rp, card):
        register(rp, card)
        login(rp, card)
        login(rp, card)
        card.force_sign_count(RP_ID, b"alice", 0)  # cloned card rewinds
        challenge = rp.begin_authentication("alice")
        stale = card.get_assertion(RP_ID, challenge.nonce, uv_input=UV)
        with pytest.raises(CounterRegression):
            rp.finish_authentication("alice", stale, IP_A)
        # credential now locked: even a fixed counter is refused
        card.force_sign_count(RP_ID, b"alice", 50)
        challenge = rp.begin_authentication("alice")
        fresh = card.get_assertion(RP_ID, challenge.nonce, uv_input=UV)
        with pytest.raises(CredentialLocked):
            rp.finish_authentication("alice", fresh, IP_A)

    def test_forged_assertion_without_enrolled_key_fails(self, rp, card):
        register(rp, card)
        challenge = rp.begin_authentication("alice")
        imposter = crypto.generate_auth_keypair()
        auth_data = authenticator_data(RP_ID, 99)
        payload = auth_data + __import__("hashlib").sha256(challenge.nonce).digest()
        forged = AssertionResponse(
            credential_id=os.urandom(32),
            authenticator_data=auth_data,
            signature=crypto.sign(imposter.private_key, payload),
            client_data=challenge.nonce,
        )
        with pytest.raises(BadSignature):
            rp.finish_authentication("alice", forged, IP_A)

    def test_garbage_client_data_is_challenge_missing(self, rp, card):
        register(rp, card)
        assertion = card.get_assertion(RP_ID, os.urandom(16), uv_input=UV)
        with pytest.raises(ChallengeMissing):
            rp.finish_authentication("alice", assertion, IP_A)


class TestTokenExchange:
    def test_exchange_is_one_shot(self, rp, card):
        register(rp, card)
        token = login(rp, card)
        session = rp.exchange_token(token, IP_A)
        assert session.username == "alice"
        with pytest.raises(TokenMissing):
            rp.exchange_token(token, IP_A)

    def test_expired_token(self, rp, card, clock):
        register(rp, card)
        token = login(rp, card)
        clock.advance(61_000)
        with pytest.raises(TokenMissing):
            rp.exchange_token(token, IP_A)

    def test_unknown_token(self, rp):
        with pytest.raises(TokenMissing):
            rp.exchange_token(crypto.new_auth_token(), IP_A)

    def test_ip_matrix_at_exchange_and_verify(self, rp, card):
        # Exchange may happen from either IP; the cookie binds the exchanging
        # IP and verification succeeds only from that same address.
        register(rp, card)
        for exchange_ip in (IP_A, IP_B):
            token = login(rp, card, ip=IP_A)
            session = rp.exchange_token(token, exchange_ip)
            for verify_ip in (IP_A, IP_B):
                if verify_ip == exchange_ip:
                    assert rp.verify_session(session.cookie, verify_ip) == "alice"
                else:
                    with pytest.raises(SessionInvalid):
                        rp.verify_session(session.cookie, verify_ip)

    def test_racing_exchanges_one_winner(self, rp, card):
        register(rp, card)
        token = login(rp, card)
        wins, losses = [], []
        barrier = threading.Barrier(16)

        def contender():
            barrier.wait()
            try:
                wins.append(rp.exchange_token(token, IP_A))
            except TokenMissing:
                losses.append(1)

        threads = [threading.Thread(target=contender) for _ in range(16)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        assert len(wins) == 1 and len(losses) == 15


class TestSessions:
    def _session(self, rp, card):
        register(rp, card)
        return rp.exchange_token(login(rp, card), IP_A)

    def test_verify_roundtrip(self, rp, card):
        session = self._session(rp, card)
        assert rp.verify_session(session.cookie, IP_A) == "alice"

    def test_wrong_ip_rejected(self, rp, card):
        session = self._session(rp, card)
        with pytest.raises(SessionInvalid):
            rp.verify_session(session.cookie, IP_B)

    def test_bitflip_rejected(self, rp, card):
        session = self._session(rp, card)
        raw = bytearray(crypto.unb64u(session.cookie))
        raw[5] ^= 0x01
        with pytest.raises(SessionInvalid):
            rp.verify_session(crypto.b64u(bytes(raw)), IP_A)

    def test_expired_session(self, rp, card, clock):
        session = self._session(rp, card)
        clock.advance(1_800_001)
        with pytest.raises(SessionInvalid):
            rp.verify_session(session.cookie, IP_A)

    def test_garbage_cookie(self, rp):
        with pytest.raises(SessionInvalid):
            rp.verify_session("not-a-cookie", IP_A)

    def test_username_hint_is_inert(self, rp):
        hint = rp.make_username_hint("alice")
        assert rp.read_username_hint(hint) == "alice"
        assert rp.read_username_hint("tampered" + hint) is None
        with pytest.raises(SessionInvalid):
            rp.verify_session(hint, IP_A)  # a hint is never a session


class TestOneTimeLinks:
    def test_issue_and_consume(self, rp, card):
        register(rp, card)
        link = rp.issue_onetime_link("alice@example.org", IP_A)
        assert link is not None
        messages = rp.outbox.messages()
        assert len(messages) == 1 and messages[0]["to"] == "alice@example.org"
        payload = link.split("payload=")[1]
        session = rp.consume_onetime_link(payload, IP_A)
        assert session.username == "alice"
        assert rp.verify_session(session.cookie, IP_A) == "alice"

    def test_unknown_email_leaves_no_trace(self, rp):
        assert rp.issue_onetime_link("ghost@example.org", IP_A) is None
        assert rp.outbox.messages() == []

    def test_wrong_ip_does_not_burn_link(self, rp, card):
        register(rp, card)
        link = rp.issue_onetime_link("alice@example.org", IP_A)
        payload = link.split("payload=")[1]
        with pytest.raises(IpMismatch):
            rp.consume_onetime_link(payload, IP_B)
        assert rp.consume_onetime_link(payload, IP_A).username == "alice"

    def test_second_open_rejected(self, rp, card):
        register(rp, card)
        payload = rp.issue_onetime_link("alice@example.org", IP_A).split("payload=")[1]
        rp.consume_onetime_link(payload, IP_A)
        with pytest.raises(LinkInvalid):
            rp.consume_onetime_link(payload, IP_A)

    def test_expired_link(self, rp, card, clock):
        register(rp, card)
        payload = rp.issue_onetime_link("alice@example.org", IP_A).split("payload=")[1]
        clock.advance(600_001)
        with pytest.raises(LinkInvalid):
            rp.consume_onetime_link(payload, IP_A)

    def test_tampered_payload(self, rp, card):
        register(rp, card)
        payload = rp.issue_onetime_link("alice@example.org", IP_A).split("payload=")[1]
        with pytest.raises(LinkInvalid):
            rp.consume_onetime_link(payload[:-4], IP_A)

    def test_two_issues_distinct_payloads(self, rp, card):
        register(rp, card)
        l1 = rp.issue_onetime_link("alice@example.org", IP_A)
        l2 = rp.issue_onetime_link("alice@example.org", IP_A)
        assert l1 != l2

    def test_outbox_file_backed(self, tmp_path, clock, card):
        keys = crypto.ServerKeys(os.urandom(32), os.urandom(16))
        rp = RelyingParty(
            records=RecordStore(clock=clock),
            blobs=BlobStore(None),
            keys=keys,
            config=RpConfig(rp_id=RP_ID),
            clock=clock,
            outbox=Outbox(tmp_path / "outbox.jsonl"),
        )
        register(rp, card)
        rp.issue_onetime_link("alice@example.org", IP_A)
        lines = (tmp_path / "outbox.jsonl").read_text().splitlines()
        assert len(lines) == 1
