"""PP2PP: passwordless peer-to-peer payments at desk scale.

A FIDO2-style stack in one package: a relying-party server with
challenge-response ceremonies and IP-bound sealed session cookies, a
software smart-card authenticator, a payments ledger with QR/NFC/link/direct
channels and a dispute state machine, plus a CLI client and an adversarial
scenario suite.
"""

__version__ = "0.1.0"
