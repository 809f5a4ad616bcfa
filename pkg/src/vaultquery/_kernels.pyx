# cython: boundscheck=False, wraparound=False
"""Compiled posting kernels; byte-for-byte identical to ``_pure``."""

from libc.string cimport memcpy
from cpython.bytes cimport PyBytes_FromStringAndSize, PyBytes_AS_STRING
from cpython.dict cimport PyDict_GetItem
from cpython.ref cimport PyObject

from .crypto import AuthenticationError

cdef extern from "sodium.h":
    int sodium_init()
    int sodium_memcmp(const void *b1, const void *b2, size_t length)
    int crypto_generichash(unsigned char *out, size_t outlen,
                           const unsigned char *inp, unsigned long long inlen,
                           const unsigned char *key, size_t keylen) nogil

if sodium_init() < 0:
    raise ImportError("libsodium failed to initialise")

DEF CELL_PLAINTEXT = 9
DEF TAG_BYTES = 16
DEF CELL_BYTES = 25
DEF ADDRESS_BYTES = 32
DEF SIDE_NONCE_BYTES = 16


cdef inline void _main_addr(const unsigned char *token, size_t toklen,
                            unsigned long long counter, unsigned char *out) nogil:
    cdef unsigned char label[9]
    cdef int i
    label[0] = 109  # "m"
    for i in range(8):
        label[8 - i] = (counter >> (8 * i)) & 0xFF
    crypto_generichash(out, 32, label, 9, token, toklen)


cdef inline void _seal(const unsigned char *cell_key, const unsigned char *mac_key,
                       const unsigned char *addr, int op, unsigned long long value,
                       unsigned char *cell) nogil:
    cdef unsigned char pad[16]
    cdef unsigned char buf[41]
    cdef int i
    crypto_generichash(pad, 16, addr, 32, cell_key, 32)
    cell[0] = (op & 0xFF) ^ pad[0]
    for i in range(8):
        cell[8 - i] = ((value >> (8 * i)) & 0xFF) ^ pad[8 - i]
    memcpy(buf, addr, 32)
    memcpy(buf + 32, cell, CELL_PLAINTEXT)
    crypto_generichash(cell + CELL_PLAINTEXT, TAG_BYTES, buf, 41, mac_key, 32)


def _check32(bytes key):
    if len(key) != 32:
        raise ValueError("kernel keys are 32 bytes")


def main_address(bytes token, unsigned long long counter):
    _check32(token)
    cdef unsigned char out[32]
    _main_addr(<const unsigned char *>PyBytes_AS_STRING(token), 32, counter, out)
    return PyBytes_FromStringAndSize(<char *>out, 32)


def side_address(bytes token, bytes nonce):
    _check32(token)
    if len(nonce) != SIDE_NONCE_BYTES:
        raise ValueError("side nonces are 16 bytes")
    cdef unsigned char label[17]
    cdef unsigned char out[32]
    label[0] = 115  # "s"
    memcpy(label + 1, PyBytes_AS_STRING(nonce), 16)
    memcpy(out, PyBytes_AS_STRING(nonce), 16)
    crypto_generichash(out + 16, 16, label, 17, <const unsigned char *>PyBytes_AS_STRING(token), 32)
    return PyBytes_FromStringAndSize(<char *>out, 32)


def seal_cell(bytes cell_key, bytes mac_key, bytes addr, int op, unsigned long long value):
    _check32(cell_key); _check32(mac_key)
    if len(addr) != ADDRESS_BYTES:
        raise ValueError("addresses are 32 bytes")
    cdef unsigned char cell[CELL_BYTES]
    _seal(<const unsigned char *>PyBytes_AS_STRING(cell_key), <const unsigned char *>PyBytes_AS_STRING(mac_key),
          <const unsigned char *>PyBytes_AS_STRING(addr), op, value, cell)
    return PyBytes_FromStringAndSize(<char *>cell, CELL_BYTES)


def open_cell(bytes cell_key, bytes mac_key, bytes addr, bytes cell):
    _check32(cell_key); _check32(mac_key)
    if len(cell) != CELL_BYTES or len(addr) != ADDRESS_BYTES:
        raise AuthenticationError("malformed posting cell")
    cdef unsigned char buf[41]
    cdef unsigned char tag[16]
    cdef unsigned char pad[16]
    cdef const unsigned char *c = <const unsigned char *>PyBytes_AS_STRING(cell)
    cdef unsigned long long value = 0
    cdef int i
    memcpy(buf, PyBytes_AS_STRING(addr), 32)
    memcpy(buf + 32, c, CELL_PLAINTEXT)
    crypto_generichash(tag, 16, buf, 41, <const unsigned char *>PyBytes_AS_STRING(mac_key), 32)
    if sodium_memcmp(tag, c + CELL_PLAINTEXT, 16) != 0:
        raise AuthenticationError("posting cell failed authentication")
    crypto_generichash(pad, 16, buf, 32, <const unsigned char *>PyBytes_AS_STRING(cell_key), 32)
    for i in range(1, 9):
        value = (value << 8) | (c[i] ^ pad[i])
    return (c[0] ^ pad[0], value)


def encrypt_postings(bytes token, bytes cell_key, bytes mac_key, entries, unsigned long long start=0):
    _check32(token); _check32(cell_key); _check32(mac_key)
    cdef const unsigned char *tk = <const unsigned char *>PyBytes_AS_STRING(token)
    cdef const unsigned char *ck = <const unsigned char *>PyBytes_AS_STRING(cell_key)
    cdef const unsigned char *mk = <const unsigned char *>PyBytes_AS_STRING(mac_key)
    cdef unsigned char addr[32]
    cdef unsigned char cell[CELL_BYTES]
    cdef unsigned long long counter = start
    cdef int op
    cdef unsigned long long value
    out = []
    for op, value in entries:
        _main_addr(tk, 32, counter, addr)
        _seal(ck, mk, addr, op, value, cell)
        out.append((PyBytes_FromStringAndSize(<char *>addr, 32), PyBytes_FromStringAndSize(<char *>cell, CELL_BYTES)))
        counter += 1
    return out


def probe_main(dict main, bytes token):
    _check32(token)
    cdef const unsigned char *tk = <const unsigned char *>PyBytes_AS_STRING(token)
    cdef unsigned char addr[32]
    cdef unsigned long long counter = 0
    cdef PyObject *hit
    out = []
    while True:
        _main_addr(tk, 32, counter, addr)
        key = PyBytes_FromStringAndSize(<char *>addr, 32)
        hit = PyDict_GetItem(main, key)
        if hit is NULL:
            return out
        out.append((key, <object>hit))
        counter += 1


def scan_side(list side_addresses, bytes token):
    _check32(token)
    cdef const unsigned char *tk = <const unsigned char *>PyBytes_AS_STRING(token)
    cdef unsigned char label[17]
    cdef unsigned char tag[16]
    cdef const unsigned char *a
    cdef Py_ssize_t i, n = len(side_addresses)
    hits = []
    label[0] = 115
    for i in range(n):
        addr = side_addresses[i]
        if len(addr) != ADDRESS_BYTES:
            continue
        a = <const unsigned char *>PyBytes_AS_STRING(addr)
        memcpy(label + 1, a, 16)
        crypto_generichash(tag, 16, label, 17, tk, 32)
        if sodium_memcmp(tag, a + 16, 16) == 0:
            hits.append(i)
    return hits


def open_cells(bytes cell_key, bytes mac_key, pairs):
    return [open_cell(cell_key, mac_key, addr, cell) for addr, cell in pairs]
