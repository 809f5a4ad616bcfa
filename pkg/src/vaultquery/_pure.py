"""Pure-Python posting kernels (reference and fallback for ``_kernels``).

Cell layout: 9-byte plaintext ``op || id`` (id big-endian u64) XOR a pad
``BLAKE2b_16(key=cell_key, addr)[:9]``, followed by a 16-byte tag
``BLAKE2b_16(key=mac_key, addr || ct)``.
"""

import hashlib
import hmac

from .crypto import AuthenticationError

CELL_PLAINTEXT = 9
TAG_BYTES = 16
CELL_BYTES = CELL_PLAINTEXT + TAG_BYTES
ADDRESS_BYTES = 32
SIDE_NONCE_BYTES = 16

_blake2b = hashlib.blake2b


def main_address(token: bytes, counter: int) -> bytes:
    return _blake2b(b"m" + counter.to_bytes(8, "big"), key=token, digest_size=32).digest()


def side_address(token: bytes, nonce: bytes) -> bytes:
    return nonce + _blake2b(b"s" + nonce, key=token, digest_size=16).digest()


def seal_cell(cell_key: bytes, mac_key: bytes, addr: bytes, op: int, value: int) -> bytes:
    pad = _blake2b(addr, key=cell_key, digest_size=16).digest()
    pt = bytes((op,)) + value.to_bytes(8, "big")
    ct = bytes(a ^ b for a, b in zip(pt, pad))
    return ct + _blake2b(addr + ct, key=mac_key, digest_size=16).digest()


def open_cell(cell_key: bytes, mac_key: bytes, addr: bytes, cell: bytes) -> tuple[int, int]:
    if len(cell) != CELL_BYTES:
        raise AuthenticationError("malformed posting cell")
    ct, tag = cell[:CELL_PLAINTEXT], cell[CELL_PLAINTEXT:]
    if not hmac.compare_digest(_blake2b(addr + ct, key=mac_key, digest_size=16).digest(), tag):
        raise AuthenticationError("posting cell failed authentication")
    pad = _blake2b(addr, key=cell_key, digest_size=16).digest()
    pt = bytes(a ^ b for a, b in zip(ct, pad))
    return pt[0], int.from_bytes(pt[1:], "big")


def encrypt_postings(token, cell_key, mac_key, entries, start=0):
    """Seal ``(op, value)`` entries at main addresses ``start, start+1, ...``."""
    out = []
    counter = start
    for op, value in entries:
        addr = main_address(token, counter)
        out.append((addr, seal_cell(cell_key, mac_key, addr, op, value)))
        counter += 1
    return out


def probe_main(main, token):
    """Follow the counter chain until the first missing address."""
    out = []
    counter = 0
    get = main.get
    while True:
        addr = main_address(token, counter)
        cell = get(addr)
        if cell is None:
            return out
        out.append((addr, cell))
        counter += 1


def scan_side(side_addresses, token):
    """Indices of side entries whose tag verifies under ``token``."""
    hits = []
    for i, addr in enumerate(side_addresses):
        nonce = addr[:SIDE_NONCE_BYTES]
        if _blake2b(b"s" + nonce, key=token, digest_size=16).digest() == addr[SIDE_NONCE_BYTES:]:
            hits.append(i)
    return hits


def open_cells(cell_key, mac_key, pairs):
    return [open_cell(cell_key, mac_key, addr, cell) for addr, cell in pairs]
