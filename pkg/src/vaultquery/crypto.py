"""Symmetric primitives: PRF, deterministic and randomized encryption, KDF.

* ``prf`` is keyed BLAKE2b with a 32-byte output.
* ``det_encrypt`` is a synthetic-IV construction: the IV is the PRF of the
  plaintext under a MAC key and also serves as the authentication tag; the
  body is AES-256-CTR under that IV.
* ``rand_encrypt`` is AES-256-GCM with a random 96-bit nonce (28 bytes of
  overhead, so ciphertext length reveals plaintext length and nothing else).

All keys are 32 bytes. Key files hold the raw key bytes and are created with
mode 0600.
"""

from __future__ import annotations

import hashlib
import threading
import hmac
import os
from pathlib import Path
from typing import Callable

from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives.ciphers import Cipher, algorithms, modes
from cryptography.hazmat.primitives.ciphers.aead import AESGCM

KEY_BYTES = 32
PRF_BYTES = 32
SIV_BYTES = 16
GCM_NONCE_BYTES = 12
RAND_OVERHEAD = GCM_NONCE_BYTES + 16
MAX_DET_PLAINTEXT = 1 << 20

RandomSource = Callable[[int], bytes]


class AuthenticationError(Exception):
    """Ciphertext failed authentication (tampering or wrong key)."""


def _check_key(key: bytes) -> None:
    if len(key) != KEY_BYTES:
        raise ValueError(f"keys are {KEY_BYTES} bytes, got {len(key)}")


def generate_key(rng: RandomSource | None = None) -> bytes:
    return (rng or os.urandom)(KEY_BYTES)


def save_key(path: str | Path, key: bytes) -> None:
    _check_key(key)
    fd = os.open(path, os.O_WRONLY | os.O_CREAT | os.O_TRUNC, 0o600)
    with os.fdopen(fd, "wb") as fh:
        fh.write(key)
    os.chmod(path, 0o600)


def load_key(path: str | Path) -> bytes:
    key = Path(path).read_bytes()
    _check_key(key)
    return key


def prf(key: bytes, label: bytes, size: int = PRF_BYTES) -> bytes:
    return hashlib.blake2b(label, key=key, digest_size=size).digest()


def derive_key(master: bytes, label: bytes) -> bytes:
    _check_key(master)
    return prf(master, b"vaultquery/kdf/" + label)


def _det_keys(key: bytes) -> tuple[bytes, bytes]:
    return derive_key(key, b"det-mac"), derive_key(key, b"det-enc")


def _ctr(key: bytes, iv: bytes, data: bytes) -> bytes:
    op = Cipher(algorithms.AES(key), modes.CTR(iv)).encryptor()
    return op.update(data) + op.finalize()


def det_encrypt(key: bytes, plaintext: bytes) -> bytes:
    if len(plaintext) > MAX_DET_PLAINTEXT:
        raise ValueError("deterministic encryption is limited to 1 MiB plaintexts")
    mac_key, enc_key = _det_keys(key)
    iv = prf(mac_key, plaintext, SIV_BYTES)
    return iv + _ctr(enc_key, iv, plaintext)


def det_decrypt(key: bytes, ciphertext: bytes) -> bytes:
    if len(ciphertext) < SIV_BYTES:
        raise AuthenticationError("ciphertext too short")
    mac_key, enc_key = _det_keys(key)
    iv, body = ciphertext[:SIV_BYTES], ciphertext[SIV_BYTES:]
    plaintext = _ctr(enc_key, iv, body)
    if not hmac.compare_digest(prf(mac_key, plaintext, SIV_BYTES), iv):
        raise AuthenticationError("deterministic ciphertext failed authentication")
    return plaintext


def rand_encrypt(key: bytes, plaintext: bytes, aad: bytes = b"", rng: RandomSource | None = None) -> bytes:
    nonce = (rng or os.urandom)(GCM_NONCE_BYTES)
    return nonce + AESGCM(derive_key(key, b"rand")).encrypt(nonce, plaintext, aad or None)


def rand_decrypt(key: bytes, ciphertext: bytes, aad: bytes = b"") -> bytes:
    if len(ciphertext) < RAND_OVERHEAD:
        raise AuthenticationError("ciphertext too short")
    nonce, body = ciphertext[:GCM_NONCE_BYTES], ciphertext[GCM_NONCE_BYTES:]
    try:
        return AESGCM(derive_key(key, b"rand")).decrypt(nonce, body, aad or None)
    except InvalidTag:
        raise AuthenticationError("randomized ciphertext failed authentication") from None


def seeded_rng(seed: int) -> RandomSource:
    """Deterministic byte source for reproducible runs (not for production keys)."""
    state = {"counter": 0}
    lock = threading.Lock()
    seed_key = hashlib.blake2b(seed.to_bytes(16, "big", signed=True), digest_size=32).digest()

    def draw(n: int) -> bytes:
        out = bytearray()
        with lock:
            while len(out) < n:
                out += prf(seed_key, state["counter"].to_bytes(8, "big"), 64)
                state["counter"] += 1
        return bytes(out[:n])

    return draw
