"""PMF modeling, rate estimation, range coding, and the bitstream container.

The range coder is the reference implementation of the codec's bit-exact
contract: 32-bit range, 64-bit low to carry overflow, renormalization at
2^24, 5 flush bytes.  Any alternative coder must reproduce its output
byte for byte.
"""

from __future__ import annotations

import struct
from bisect import bisect_right
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, CorruptionError, FormatError

PMF_TOTAL = 1 << 16
_TOP = 1 << 24
_MASK32 = 0xFFFFFFFF
_NUM_FLUSH_BYTES = 5

MAGIC = b"DFO1"
VERSION = 1
FLAG_INLINE_PMF = 0x01

# magic, version, flags, K, h, w, eta_q, model_hash, payload_len
_HEADER_FMT = "<4sBBHHHf8sI"
HEADER_SIZE = struct.calcsize(_HEADER_FMT)


@dataclass(frozen=True)
class PmfTable:
    """Integer frequency table over K symbols, normalized to PMF_TOTAL."""

    freq: np.ndarray  # uint32, every entry >= 1, sum == PMF_TOTAL

    def __post_init__(self):
        freq = np.asarray(self.freq, dtype=np.uint32)
        object.__setattr__(self, "freq", freq)
        if freq.ndim != 1 or len(freq) < 2:
            raise ConfigError("PMF needs at least 2 symbols")
        if freq.min() < 1:
            raise ConfigError("every PMF frequency must be >= 1")
        if int(freq.sum()) != PMF_TOTAL:
            raise ConfigError(f"PMF frequencies must sum to {PMF_TOTAL}")

    @property
    def num_symbols(self) -> int:
        return len(self.freq)

    def cumulative(self) -> list[int]:
        """[0, f0, f0+f1, ...] with K+1 entries; strictly increasing."""
        cum = [0] * (len(self.freq) + 1)
        acc = 0
        for i, f in enumerate(self.freq):
            acc += int(f)
            cum[i + 1] = acc
        return cum


def build_pmf(histogram, smoothing: str = "add-one") -> PmfTable:
    """Turn a symbol histogram into an integer PMF table.

    Frequencies are proportional to histogram[k] + 1 (add-one smoothing),
    normalized to a total of exactly PMF_TOTAL by largest-remainder
    rounding with lowest-index tie-break, then floored at 1.
    """
    if smoothing != "add-one":
        raise ConfigError(f"unknown smoothing mode {smoothing!r}")
    hist = np.asarray(histogram, dtype=np.int64)
    k = len(hist)
    if k < 2:
        raise ConfigError("histogram needs at least 2 symbols")
    if k > 0xFFFF:
        raise ConfigError("codebook size exceeds the 16-bit header field")
    if hist.min() < 0:
        raise ConfigError("histogram counts must be non-negative")

    weights = hist + 1
    total_w = int(weights.sum())
    # Exact integer arithmetic: ideal_k = weights_k * PMF_TOTAL / total_w.
    scaled = weights * PMF_TOTAL
    base = scaled // total_w
    remainder = scaled - base * total_w
    short = PMF_TOTAL - int(base.sum())
    # Largest remainder first; ties broken by lowest index via stable sort
    # on (-remainder, index).
    order = np.lexsort((np.arange(k), -remainder))
    freq = base.copy()
    freq[order[:short]] += 1

    # Floor at 1, stealing from the richest entries (deterministically).
    deficit = int((freq == 0).sum())
    if deficit:
        freq[freq == 0] = 1
        while deficit > 0:
            donor = int(np.argmax(freq))  # argmax takes the lowest index on ties
            take = min(deficit, int(freq[donor]) - 1)
            freq[donor] -= take
            deficit -= take
    return PmfTable(freq=freq.astype(np.uint32))


def estimate_bpp(indices, pmf: PmfTable, height: int, width: int) -> float:
    """Model rate estimate: sum of -log2 PMF(symbol) over the grid, per pixel."""
    q = np.asarray(indices)
    if q.size and (q.min() < 0 or q.max() >= pmf.num_symbols):
        raise CorruptionError("index out of range for the PMF table")
    counts = np.bincount(q.ravel(), minlength=pmf.num_symbols).astype(np.float64)
    bits = -np.sum(counts * np.log2(pmf.freq.astype(np.float64) / PMF_TOTAL))
    return float(bits / (height * width))


class _RangeEncoder:
    """LZMA-style carry-aware range encoder (the bit-exact reference)."""

    def __init__(self):
        self._low = 0  # bit 32 holds the pending carry
        self._range = _MASK32
        self._cache = 0
        self._pending = 1
        self._out = bytearray()

    def encode(self, cum_lo: int, freq: int) -> None:
        r = self._range >> 16
        self._low += cum_lo * r
        self._range = r * freq
        while self._range < _TOP:
            self._shift_low()
            self._range = (self._range << 8) & _MASK32

    def _shift_low(self) -> None:
        low = self._low
        if low < 0xFF000000 or low > _MASK32:
            carry = low >> 32
            self._out.append((self._cache + carry) & 0xFF)
            filler = (0xFF + carry) & 0xFF
            self._out.extend([filler] * (self._pending - 1))
            self._cache = (low >> 24) & 0xFF
            self._pending = 0
        self._pending += 1
        self._low = (low << 8) & _MASK32

    def finish(self) -> bytes:
        for _ in range(_NUM_FLUSH_BYTES):
            self._shift_low()
        return bytes(self._out)


class _RangeDecoder:
    """Mirror of _RangeEncoder; consumes exactly the bytes it produced."""

    def __init__(self, data: bytes):
        self._data = data
        self._pos = 0
        self._range = _MASK32
        self._code = 0
        for _ in range(_NUM_FLUSH_BYTES):
            self._code = ((self._code << 8) | self._next_byte()) & _MASK32

    def _next_byte(self) -> int:
        if self._pos >= len(self._data):
            raise CorruptionError("range-coded payload truncated")
        b = self._data[self._pos]
        self._pos += 1
        return b

    def decode(self, cum: list[int]) -> int:
        r = self._range >> 16
        v = self._code // r
        if v >= PMF_TOTAL:
            v = PMF_TOTAL - 1
        sym = bisect_right(cum, v) - 1
        self._code -= cum[sym] * r
        self._range = r * (cum[sym + 1] - cum[sym])
        while self._range < _TOP:
            self._code = ((self._code << 8) | self._next_byte()) & _MASK32
            self._range = (self._range << 8) & _MASK32
        return sym


def encode_indices(indices, pmf: PmfTable) -> bytes:
    """Range-code a grid of code indices in raster order."""
    q = np.asarray(indices).ravel()
    if q.size and (q.min() < 0 or q.max() >= pmf.num_symbols):
        raise CorruptionError("index out of range for the PMF table")
    cum = pmf.cumulative()
    freq = pmf.freq
    enc = _RangeEncoder()
    for s in q.tolist():
        enc.encode(cum[s], int(freq[s]))
    return enc.finish()


def decode_indices(payload: bytes, n: int, pmf: PmfTable, shape=None) -> np.ndarray:
    """Decode n indices; returns a flat array unless shape is given."""
    if n < 0:
        raise CorruptionError("negative symbol count")
    cum = pmf.cumulative()
    dec = _RangeDecoder(payload)
    out = np.empty(n, dtype=np.int64)
    for i in range(n):
        out[i] = dec.decode(cum)
    if shape is not None:
        out = out.reshape(shape)
    return out


@dataclass
class BitstreamHeader:
    """Fixed-size leading record of a .dfo file (little-endian)."""

    num_symbols: int
    latent_height: int
    latent_width: int
    eta_q: float
    model_hash: bytes
    payload_len: int
    flags: int = 0
    version: int = VERSION

    def __post_init__(self):
        for name, value in (
            ("K", self.num_symbols),
            ("h", self.latent_height),
            ("w", self.latent_width),
        ):
            if not 0 <= value <= 0xFFFF:
                raise FormatError(f"header field {name}={value} exceeds 16 bits")
        if len(self.model_hash) != 8:
            raise FormatError("model hash must be exactly 8 bytes")
        if not 0 <= self.payload_len <= _MASK32:
            raise FormatError("payload length exceeds 32 bits")


def pack_bitstream(header: BitstreamHeader, payload: bytes,
                   inline_pmf: PmfTable | None = None) -> bytes:
    """Serialize header (+ optional inline PMF) + payload into one buffer."""
    flags = header.flags
    if inline_pmf is not None:
        flags |= FLAG_INLINE_PMF
        if inline_pmf.num_symbols != header.num_symbols:
            raise FormatError("inline PMF size disagrees with header K")
    if len(payload) != header.payload_len:
        raise FormatError("payload length disagrees with header")
    blob = struct.pack(
        _HEADER_FMT, MAGIC, header.version, flags, header.num_symbols,
        header.latent_height, header.latent_width, header.eta_q,
        header.model_hash, header.payload_len,
    )
    if inline_pmf is not None:
        # Every freq is in [1, 65535], so u16 per entry is exact.
        blob += inline_pmf.freq.astype("<u2").tobytes()
    return blob + payload


def unpack_bitstream(blob: bytes) -> tuple[BitstreamHeader, bytes, PmfTable | None]:
    """Parse and validate a .dfo buffer; returns (header, payload, inline pmf)."""
    if len(blob) < HEADER_SIZE:
        raise FormatError(f"file shorter than the {HEADER_SIZE}-byte header")
    magic, version, flags, k, h, w, eta_q, model_hash, payload_len = struct.unpack(
        _HEADER_FMT, blob[:HEADER_SIZE])
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise FormatError(f"unsupported bitstream version {version}")
    offset = HEADER_SIZE
    inline_pmf = None
    if flags & FLAG_INLINE_PMF:
        table_bytes = 2 * k
        if len(blob) < offset + table_bytes:
            raise FormatError("truncated inline PMF table")
        freq = np.frombuffer(blob[offset:offset + table_bytes], dtype="<u2")
        inline_pmf = PmfTable(freq=freq.astype(np.uint32))
        offset += table_bytes
    payload = blob[offset:]
    if len(payload) != payload_len:
        raise FormatError(
            f"payload length mismatch: header says {payload_len}, got {len(payload)}")
    header = BitstreamHeader(
        num_symbols=k, latent_height=h, latent_width=w, eta_q=eta_q,
        model_hash=model_hash, payload_len=payload_len, flags=flags,
        version=version,
    )
    return header, payload, inline_pmf


@dataclass
class RateReport:
    """Rate accounting for one compressed image."""

    estimated_bpp: float
    actual_bpp: float
    payload_bytes: int
    header_bytes: int


def rate_report(indices, pmf: PmfTable, stream: bytes,
                image_height: int, image_width: int,
                payload_len: int) -> RateReport:
    pixels = image_height * image_width
    return RateReport(
        estimated_bpp=estimate_bpp(indices, pmf, image_height, image_width),
        actual_bpp=len(stream) * 8 / pixels,
        payload_bytes=payload_len,
        header_bytes=len(stream) - payload_len,
    )
