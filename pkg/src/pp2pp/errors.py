"""Protocol error hierarchy.

Every rejection the server or card can produce is a distinct exception type
carrying a stable machine-readable ``code`` and the HTTP status the API layer
maps it to. Handlers raise these; the service layer serializes them as
``{"error": <message>, "code": <code>}`` and never leaks stack traces.
"""

from __future__ import annotations


class Pp2ppError(Exception):
    """Base class: a protocol-level rejection, not a programming error."""

    code = "error"
    http_status = 400

    def __init__(self, message: str | None = None):
        super().__init__(message or self.__class__.__name__)


# --- crypto ----------------------------------------------------------------

class AuthFailure(Pp2ppError):
    """AEAD open failed: tampering, wrong key, or wrong associated data."""

    code = "auth_failure"
    http_status = 401


class EntropyUnavailable(Pp2ppError):
    code = "entropy_unavailable"
    http_status = 500


# --- authenticator (card-side; never crosses the wire) ----------------------

class CardError(Pp2ppError):
    http_status = 400


class InvalidDomain(CardError):
    """No credential matches the presented RP ID (phishing defense)."""

    code = "invalid_domain"


class UserVerificationFailed(CardError):
    code = "user_verification_failed"


class CardLocked(CardError):
    code = "card_locked"


class BadPassphrase(CardError):
    code = "bad_passphrase"


class CorruptCardFile(CardError):
    code = "corrupt_card_file"


# --- store -------------------------------------------------------------------

class Missing(Pp2ppError):
    code = "missing"
    http_status = 404


class KeyRejected(Pp2ppError):
    code = "key_rejected"


class DuplicateKey(Pp2ppError):
    code = "duplicate_key"
    http_status = 409


# --- relying party -----------------------------------------------------------

class ValidationError(Pp2ppError):
    code = "validation_error"


class UserExists(Pp2ppError):
    code = "user_exists"
    http_status = 409


class UnknownUser(Pp2ppError):
    code = "unknown_user"
    http_status = 401


class ChallengeMissing(Pp2ppError):
    """Challenge unknown or already consumed (replay)."""

    code = "challenge_missing"
    http_status = 401


class ChallengeExpired(Pp2ppError):
    code = "challenge_expired"
    http_status = 401


class BadSignature(Pp2ppError):
    code = "bad_signature"
    http_status = 401


class RpIdMismatch(Pp2ppError):
    code = "rp_id_mismatch"
    http_status = 401


class CounterRegression(Pp2ppError):
    """Assertion counter went backwards: possible cloned card. Credential locked."""

    code = "counter_regression"
    http_status = 401


class CredentialLocked(Pp2ppError):
    code = "credential_locked"
    http_status = 401


class TokenMissing(Pp2ppError):
    """Auth token unknown, expired, or already exchanged."""

    code = "token_missing"
    http_status = 401


class SessionInvalid(Pp2ppError):
    """Cookie tampered, presented from the wrong IP, or expired.

    Indistinguishable to the caller by design.
    """

    code = "session_invalid"
    http_status = 401


class UnknownEmail(Pp2ppError):
    """Internal only: the API responds success-shaped to avoid enumeration."""

    code = "unknown_email"


class LinkInvalid(Pp2ppError):
    code = "link_invalid"
    http_status = 401


class IpMismatch(Pp2ppError):
    code = "ip_mismatch"
    http_status = 401


# --- ledger --------------------------------------------------------------------

class AccountExists(Pp2ppError):
    code = "account_exists"
    http_status = 409


class UnknownAccount(Pp2ppError):
    code = "unknown_account"
    http_status = 404


class UnknownPayee(Pp2ppError):
    code = "unknown_payee"
    http_status = 404


class SelfTransfer(Pp2ppError):
    code = "self_transfer"


class InsufficientFunds(Pp2ppError):
    code = "insufficient_funds"
    http_status = 409


class BadAmount(Pp2ppError):
    code = "bad_amount"


class TokenSpent(Pp2ppError):
    code = "token_spent"
    http_status = 409


class TokenExpired(Pp2ppError):
    code = "token_expired"
    http_status = 409


class SelfRedeem(Pp2ppError):
    code = "self_redeem"


class RedeemFailure(Pp2ppError):
    """Payment token payload failed to open: tampered or foreign."""

    code = "redeem_failure"
    http_status = 401


class UnknownTxn(Pp2ppError):
    code = "unknown_txn"
    http_status = 404


class NotYourTxn(Pp2ppError):
    code = "not_your_txn"
    http_status = 403


class AlreadyConcluded(Pp2ppError):
    code = "already_concluded"
    http_status = 409


class IllegalTransition(Pp2ppError):
    code = "illegal_transition"
    http_status = 409


class NotParty(Pp2ppError):
    code = "not_party"
    http_status = 403


class NotSettled(Pp2ppError):
    code = "not_settled"
    http_status = 409


class ReversalInsufficientFunds(Pp2ppError):
    """Reversal blocked: payee no longer holds the funds. Dispute stays open."""

    code = "reversal_insufficient_funds"
    http_status = 409


# --- api service -----------------------------------------------------------------

class Unauthenticated(Pp2ppError):
    code = "unauthenticated"
    http_status = 401


class RoleRequired(Pp2ppError):
    code = "role_required"
    http_status = 403


class RateLimited(Pp2ppError):
    code = "rate_limited"
    http_status = 429


class PayloadTooLarge(Pp2ppError):
    code = "payload_too_large"


class NotFound(Pp2ppError):
    code = "not_found"
    http_status = 404


class BadRequest(Pp2ppError):
    code = "bad_request"
