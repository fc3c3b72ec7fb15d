"""Independent reference implementations used only as test oracles.

These deliberately avoid the code paths under test: RSA signing is textbook
modular exponentiation with hand-rolled EMSA-PKCS1-v1_5 encoding, and GCM is
reimplemented from the mode definition (GHASH + CTR) on top of a bare AES
block encryption. Both are validated against published test vectors before
being trusted to judge the real implementation.
"""

from __future__ import annotations

import hashlib

from cryptography.hazmat.primitives.ciphers import Cipher, algorithms, modes

# DER DigestInfo prefix for SHA-256 (RFC 8017 section 9.2 notes).
_SHA256_DIGESTINFO = bytes.fromhex("3031300d060960864801650304020105000420")


def rsa_pkcs1v15_sha256_sign(n: int, d: int, message: bytes) -> bytes:
    """Deterministic PKCS#1 v1.5 signature via raw modular exponentiation."""
    k = (n.bit_length() + 7) // 8
    digest = hashlib.sha256(message).digest()
    t = _SHA256_DIGESTINFO + digest
    ps_len = k - len(t) - 3
    if ps_len < 8:
        raise ValueError("modulus too small")
    em = b"\x00\x01" + b"\xff" * ps_len + b"\x00" + t
    m = int.from_bytes(em, "big")
    s = pow(m, d, n)
    return s.to_bytes(k, "big")


def rsa_pkcs1v15_sha256_verify(n: int, e: int, message: bytes, signature: bytes) -> bool:
    k = (n.bit_length() + 7) // 8
    if len(signature) != k:
        return False
    s = int.from_bytes(signature, "big")
    if s >= n:
        return False
    em = pow(s, e, n).to_bytes(k, "big")
    digest = hashlib.sha256(message).digest()
    t = _SHA256_DIGESTINFO + digest
    expected = b"\x00\x01" + b"\xff" * (k - len(t) - 3) + b"\x00" + t
    return em == expected


# --- GCM from the mode definition -------------------------------------------


def _aes_block_encrypt(key: bytes, block: bytes) -> bytes:
    enc = Cipher(algorithms.AES(key), modes.ECB()).encryptor()
    return enc.update(block) + enc.finalize()


_R = 0xE1000000000000000000000000000000


def _gf_mult(x: int, y: int) -> int:
    """Multiplication in GF(2^128) with the GCM polynomial, MSB-first."""
    z = 0
    v = x
    for i in range(128):
        if (y >> (127 - i)) & 1:
            z ^= v
        if v & 1:
            v = (v >> 1) ^ _R
        else:
            v >>= 1
    return z


def _ghash(h: bytes, data: bytes) -> bytes:
    h_int = int.from_bytes(h, "big")
    y = 0
    for i in range(0, len(data), 16):
        block = data[i : i + 16].ljust(16, b"\x00")
        y = _gf_mult(y ^ int.from_bytes(block, "big"), h_int)
    return y.to_bytes(16, "big")


def _inc32(block: bytes) -> bytes:
    ctr = (int.from_bytes(block[12:], "big") + 1) % (1 << 32)
    return block[:12] + ctr.to_bytes(4, "big")


def _gctr(key: bytes, icb: bytes, data: bytes) -> bytes:
    out = bytearray()
    cb = icb
    for i in range(0, len(data), 16):
        chunk = data[i : i + 16]
        ks = _aes_block_encrypt(key, cb)
        out.extend(a ^ b for a, b in zip(chunk, ks))
        cb = _inc32(cb)
    return bytes(out)


def _pad16(data: bytes) -> bytes:
    return data + b"\x00" * (-len(data) % 16)


def gcm_encrypt(key: bytes, iv: bytes, plaintext: bytes, aad: bytes = b"") -> tuple[bytes, bytes]:
    """Returns (ciphertext, 16-byte tag). IV must be 96 bits."""
    if len(iv) != 12:
        raise ValueError("oracle only handles 96-bit IVs")
    h = _aes_block_encrypt(key, b"\x00" * 16)
    j0 = iv + b"\x00\x00\x00\x01"
    ciphertext = _gctr(key, _inc32(j0), plaintext)
    lengths = (len(aad) * 8).to_bytes(8, "big") + (len(ciphertext) * 8).to_bytes(8, "big")
    s = _ghash(h, _pad16(aad) + _pad16(ciphertext) + lengths)
    tag = bytes(a ^ b for a, b in zip(_aes_block_encrypt(key, j0), s))
    return ciphertext, tag


def gcm_decrypt(key: bytes, iv: bytes, ciphertext: bytes, tag: bytes, aad: bytes = b"") -> bytes:
    """Raises ValueError on tag mismatch."""
    if len(iv) != 12:
        raise ValueError("oracle only handles 96-bit IVs")
    h = _aes_block_encrypt(key, b"\x00" * 16)
    j0 = iv + b"\x00\x00\x00\x01"
    lengths = (len(aad) * 8).to_bytes(8, "big") + (len(ciphertext) * 8).to_bytes(8, "big")
    s = _ghash(h, _pad16(aad) + _pad16(ciphertext) + lengths)
    expected = bytes(a ^ b for a, b in zip(_aes_block_encrypt(key, j0), s))
    if expected != tag:
        raise ValueError("tag mismatch")
    return _gctr(key, _inc32(j0), ciphertext)
