"""Bridge to the native fast range coder.

Two boundaries are supported and auto-detected in this order:

1. In-process C ABI (ctypes): a shared library exporting

       int64 fc_encode(const uint16 *freqs, size_t k,
                       const uint16 *symbols, size_t n,
                       uint8 *out, size_t out_cap);
       int64 fc_decode(const uint16 *freqs, size_t k,
                       const uint8 *payload, size_t len,
                       size_t n, uint16 *out_symbols);

   Both return a count on success and a negative error code on failure
   (-1 bad pmf, -2 symbol out of range, -3 output buffer too small,
   -5 truncated/corrupt payload).

2. Out-of-process framed stdio: a long-running subprocess speaking
   4-byte little-endian length-prefixed frames.  One job is two request
   frames -- frame A: op byte (0x45 'E' / 0x44 'D') + K u16-LE
   frequencies; frame B: for encode, n u16-LE symbols; for decode, u32-LE
   symbol count followed by the payload bytes -- answered by one response
   frame: status byte 0x00 + result (payload bytes for encode, u16-LE
   symbols for decode), or status 0x01 + utf-8 error message.

Outputs are byte-identical to the reference coder in entropy.py; tests
enforce this differentially.  When no native build is found, the
reference implementation serves both paths.
"""

from __future__ import annotations

import ctypes
import os
import struct
import subprocess
from pathlib import Path

import numpy as np

from . import entropy
from .entropy import PmfTable
from .errors import ConfigError, CorruptionError, DiffcodecError

ENV_LIB = "DIFFCODEC_FASTCODER_LIB"
ENV_BIN = "DIFFCODEC_FASTCODER_BIN"

_OP_ENCODE = 0x45
_OP_DECODE = 0x44


class ReferenceCoder:
    """The in-package bit-exact reference path."""

    name = "reference"

    def encode_indices(self, indices, pmf: PmfTable) -> bytes:
        return entropy.encode_indices(indices, pmf)

    def decode_indices(self, payload: bytes, n: int, pmf: PmfTable,
                       shape=None) -> np.ndarray:
        return entropy.decode_indices(payload, n, pmf, shape=shape)


class LibraryCoder:
    """ctypes wrapper over the C-compatible boundary."""

    name = "fast-library"

    def __init__(self, path):
        self._lib = ctypes.CDLL(str(path))
        for fn in (self._lib.fc_encode, self._lib.fc_decode):
            fn.restype = ctypes.c_int64
        self._lib.fc_encode.argtypes = [
            ctypes.POINTER(ctypes.c_uint16), ctypes.c_size_t,
            ctypes.POINTER(ctypes.c_uint16), ctypes.c_size_t,
            ctypes.POINTER(ctypes.c_uint8), ctypes.c_size_t]
        self._lib.fc_decode.argtypes = [
            ctypes.POINTER(ctypes.c_uint16), ctypes.c_size_t,
            ctypes.POINTER(ctypes.c_uint8), ctypes.c_size_t,
            ctypes.c_size_t, ctypes.POINTER(ctypes.c_uint16)]

    @staticmethod
    def _freq_array(pmf: PmfTable):
        return np.ascontiguousarray(pmf.freq, dtype=np.uint16)

    def encode_indices(self, indices, pmf: PmfTable) -> bytes:
        q = np.ascontiguousarray(np.asarray(indices).ravel(), dtype=np.uint16)
        freqs = self._freq_array(pmf)
        # Worst case: ~2 bytes/symbol at 16-bit precision, plus flush.
        cap = 2 * len(q) + 64
        out = np.empty(cap, dtype=np.uint8)
        ret = self._lib.fc_encode(
            freqs.ctypes.data_as(ctypes.POINTER(ctypes.c_uint16)), len(freqs),
            q.ctypes.data_as(ctypes.POINTER(ctypes.c_uint16)), len(q),
            out.ctypes.data_as(ctypes.POINTER(ctypes.c_uint8)), cap)
        if ret == -2:
            raise CorruptionError("index out of range for the PMF table")
        if ret < 0:
            raise DiffcodecError(f"fast encoder failed with code {ret}")
        return out[:ret].tobytes()

    def decode_indices(self, payload: bytes, n: int, pmf: PmfTable,
                       shape=None) -> np.ndarray:
        if n < 0:
            raise CorruptionError("negative symbol count")
        freqs = self._freq_array(pmf)
        buf = np.frombuffer(payload, dtype=np.uint8)
        buf = np.ascontiguousarray(buf)
        out = np.empty(max(n, 1), dtype=np.uint16)
        ret = self._lib.fc_decode(
            freqs.ctypes.data_as(ctypes.POINTER(ctypes.c_uint16)), len(freqs),
            buf.ctypes.data_as(ctypes.POINTER(ctypes.c_uint8)), len(buf), n,
            out.ctypes.data_as(ctypes.POINTER(ctypes.c_uint16)))
        if ret == -5:
            raise CorruptionError("range-coded payload truncated")
        if ret < 0:
            raise DiffcodecError(f"fast decoder failed with code {ret}")
        result = out[:n].astype(np.int64)
        return result.reshape(shape) if shape is not None else result


class SubprocessCoder:
    """Framed stdio protocol client; one coder process, many jobs."""

    name = "fast-subprocess"

    def __init__(self, binary):
        self._proc = subprocess.Popen(
            [str(binary)], stdin=subprocess.PIPE, stdout=subprocess.PIPE)

    def close(self):
        if self._proc.stdin:
            self._proc.stdin.close()
        self._proc.wait(timeout=10)

    def _send_frame(self, body: bytes) -> None:
        self._proc.stdin.write(struct.pack("<I", len(body)) + body)

    def _recv_frame(self) -> bytes:
        raw = self._proc.stdout.read(4)
        if len(raw) != 4:
            raise DiffcodecError("fast coder subprocess closed unexpectedly")
        (length,) = struct.unpack("<I", raw)
        body = self._proc.stdout.read(length)
        if len(body) != length:
            raise DiffcodecError("fast coder subprocess sent a short frame")
        return body

    def _roundtrip(self, op: int, pmf: PmfTable, data: bytes) -> bytes:
        freqs = np.ascontiguousarray(pmf.freq, dtype="<u2").tobytes()
        self._send_frame(bytes([op]) + freqs)
        self._send_frame(data)
        self._proc.stdin.flush()
        body = self._recv_frame()
        if not body:
            raise DiffcodecError("fast coder sent an empty response")
        if body[0] != 0:
            message = body[1:].decode("utf-8", "replace")
            if "corrupt" in message or "truncated" in message:
                raise CorruptionError(message)
            raise DiffcodecError(f"fast coder error: {message}")
        return body[1:]

    def encode_indices(self, indices, pmf: PmfTable) -> bytes:
        q = np.ascontiguousarray(np.asarray(indices).ravel(), dtype="<u2")
        if q.size and int(np.asarray(indices).max()) >= pmf.num_symbols:
            raise CorruptionError("index out of range for the PMF table")
        return self._roundtrip(_OP_ENCODE, pmf, q.tobytes())

    def decode_indices(self, payload: bytes, n: int, pmf: PmfTable,
                       shape=None) -> np.ndarray:
        body = self._roundtrip(_OP_DECODE, pmf,
                               struct.pack("<I", n) + payload)
        out = np.frombuffer(body, dtype="<u2").astype(np.int64)
        if len(out) != n:
            raise DiffcodecError("fast coder returned a wrong symbol count")
        return out.reshape(shape) if shape is not None else out


def _candidate_libraries():
    if os.environ.get(ENV_LIB):
        yield Path(os.environ[ENV_LIB])
    here = Path(__file__).resolve()
    for root in (Path.cwd(), *here.parents):
        yield root / "fastcoder" / "target" / "release" / "libfastcoder.so"


def _candidate_binaries():
    if os.environ.get(ENV_BIN):
        yield Path(os.environ[ENV_BIN])
    here = Path(__file__).resolve()
    for root in (Path.cwd(), *here.parents):
        yield root / "fastcoder" / "target" / "release" / "fastcoder-stdio"


def load_fast_coder():
    """Auto-detect the native coder; returns None when unavailable."""
    for path in _candidate_libraries():
        if path.is_file():
            try:
                return LibraryCoder(path)
            except OSError:
                continue
    for path in _candidate_binaries():
        if path.is_file() and os.access(path, os.X_OK):
            try:
                return SubprocessCoder(path)
            except OSError:
                continue
    return None


def get_coder(name: str = "auto"):
    """Resolve a coder choice: 'reference', 'fast', or 'auto'."""
    if name == "reference":
        return ReferenceCoder()
    if name == "fast":
        coder = load_fast_coder()
        if coder is None:
            raise ConfigError(
                "fast coder requested but no native build was found "
                f"(set {ENV_LIB} or {ENV_BIN}, or build fastcoder/)")
        return coder
    if name == "auto":
        return load_fast_coder() or ReferenceCoder()
    raise ConfigError(f"unknown coder {name!r}")
