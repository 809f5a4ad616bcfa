"""Posting-kernel backend selection.

The compiled ``_kernels`` extension is used when it imports; otherwise the
pure-Python ``_pure`` module. ``VAULTQUERY_PURE=1`` forces the fallback, and
``use()`` switches at runtime (tests and the benchmark run both).
"""

import os

from . import _pure

try:
    from . import _kernels as _native
except ImportError:  # extension not built
    _native = None

_impl = _pure if (_native is None or os.environ.get("VAULTQUERY_PURE")) else _native


def available() -> list[str]:
    return ["python"] + (["native"] if _native is not None else [])


def backend() -> str:
    return "native" if _impl is _native and _native is not None else "python"


def use(name: str) -> None:
    global _impl
    if name == "python":
        _impl = _pure
    elif name == "native":
        if _native is None:
            raise RuntimeError("compiled kernels are not available")
        _impl = _native
    else:
        raise ValueError(f"unknown backend {name!r}")


def main_address(token, counter):
    return _impl.main_address(token, counter)


def side_address(token, nonce):
    return _impl.side_address(token, nonce)


def seal_cell(cell_key, mac_key, addr, op, value):
    return _impl.seal_cell(cell_key, mac_key, addr, op, value)


def open_cell(cell_key, mac_key, addr, cell):
    return _impl.open_cell(cell_key, mac_key, addr, cell)


def encrypt_postings(token, cell_key, mac_key, entries, start=0):
    return _impl.encrypt_postings(token, cell_key, mac_key, entries, start)


def probe_main(main, token):
    return _impl.probe_main(main, token)


def scan_side(side_addresses, token):
    return _impl.scan_side(side_addresses, token)


def open_cells(cell_key, mac_key, pairs):
    return _impl.open_cells(cell_key, mac_key, pairs)


CELL_BYTES = _pure.CELL_BYTES
ADDRESS_BYTES = _pure.ADDRESS_BYTES
SIDE_NONCE_BYTES = _pure.SIDE_NONCE_BYTES
