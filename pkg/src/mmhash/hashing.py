"""Binary codes over {-1, +1}^m: thresholding of embeddings, bit-packed
storage, and popcount Hamming distance.

Bit i of a code lives at bit (i mod 64) of packed little-endian word
(i div 64); a set bit encodes +1, a clear bit -1. Thresholding maps values
>= 0 to +1, so an exact zero becomes +1 (fixed tie rule, needed for
reproducibility). Codes up to m = 256 bits are supported.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, FormatError, InvalidValue
from .numkernel import as_vector

__all__ = [
    "HashCode",
    "CodeMatrix",
    "binarize",
    "binarize_batch",
    "hamming",
    "hamming_to_many",
    "save_codes",
    "load_codes",
]

WORD_BITS = 64
MAX_BITS = 256
CODES_MAGIC = b"MMHC1"

if hasattr(np, "bitwise_count"):
    _popcount = np.bitwise_count
else:  # pragma: no cover - numpy < 2.0
    _POP16 = np.array([bin(i).count("1") for i in range(1 << 16)], dtype=np.uint8)

    def _popcount(words):
        halves = words.view(np.uint16).reshape(words.shape + (4,))
        return _POP16[halves].sum(axis=-1)


def _n_words(m: int) -> int:
    return (m + WORD_BITS - 1) // WORD_BITS


def _check_bits(m: int) -> int:
    m = int(m)
    if not 1 <= m <= MAX_BITS:
        raise InvalidValue(f"code length must be in 1..{MAX_BITS}, got {m}")
    return m


def _pack_bits(bits: np.ndarray) -> np.ndarray:
    """Pack rows of booleans into little-endian uint64 words."""
    n, m = bits.shape
    padded = np.zeros((n, _n_words(m) * WORD_BITS), dtype=np.uint8)
    padded[:, :m] = bits
    packed = np.packbits(padded, axis=1, bitorder="little")
    return np.frombuffer(packed.tobytes(), dtype="<u8").reshape(n, _n_words(m)).copy()


@dataclass(eq=False)
class HashCode:
    """A single m-bit code; words beyond bit m-1 are zero."""

    m: int
    words: np.ndarray

    def __post_init__(self):
        self.m = _check_bits(self.m)
        w = np.asarray(self.words, dtype=np.uint64)
        if w.ndim != 1 or w.shape[0] != _n_words(self.m):
            raise DimensionMismatch(
                f"code of {self.m} bits needs {_n_words(self.m)} words, got shape {w.shape}"
            )
        tail = self.m % WORD_BITS
        if tail and (w[-1] >> np.uint64(tail)) != 0:
            raise InvalidValue("padding bits beyond m must be zero")
        self.words = w

    @classmethod
    def from_bits(cls, bits) -> "HashCode":
        b = np.asarray(bits, dtype=bool)
        return cls(m=b.shape[0], words=_pack_bits(b[None, :])[0])

    @classmethod
    def from_signs(cls, signs) -> "HashCode":
        s = np.asarray(signs)
        return cls.from_bits(s >= 0)

    def bits(self) -> np.ndarray:
        unpacked = np.unpackbits(
            self.words.view(np.uint8), bitorder="little", count=self.m
        )
        return unpacked.astype(bool)

    def signs(self) -> np.ndarray:
        return np.where(self.bits(), 1, -1).astype(np.int64)

    def __eq__(self, other):
        return (
            isinstance(other, HashCode)
            and self.m == other.m
            and bool(np.all(self.words == other.words))
        )

    def __hash__(self):
        return hash((self.m, self.words.tobytes()))


@dataclass(eq=False)
class CodeMatrix:
    """n codes of a uniform length m, packed row-wise."""

    m: int
    words: np.ndarray  # (n, n_words) uint64

    def __post_init__(self):
        self.m = _check_bits(self.m)
        w = np.asarray(self.words, dtype=np.uint64)
        if w.ndim != 2 or w.shape[1] != _n_words(self.m):
            raise DimensionMismatch(
                f"codes of {self.m} bits need {_n_words(self.m)} words per row, "
                f"got shape {w.shape}"
            )
        self.words = w

    def __len__(self) -> int:
        return self.words.shape[0]

    def code(self, i: int) -> HashCode:
        return HashCode(m=self.m, words=self.words[i].copy())

    def signs(self) -> np.ndarray:
        unpacked = np.unpackbits(
            self.words.view(np.uint8).reshape(len(self), -1),
            axis=1,
            bitorder="little",
            count=self.m,
        )
        return np.where(unpacked.astype(bool), 1, -1).astype(np.int64)


def binarize(embedding) -> HashCode:
    """Threshold an embedding at zero: entry >= 0 becomes +1, else -1."""
    v = as_vector(embedding, "embedding")
    _check_bits(v.shape[0])
    return HashCode.from_signs(v)


def binarize_batch(embeddings: np.ndarray) -> CodeMatrix:
    e = np.asarray(embeddings, dtype=np.float64)
    if e.ndim != 2:
        raise DimensionMismatch(f"expected 2-d embeddings, got shape {e.shape}")
    if e.size and not np.all(np.isfinite(e)):
        raise InvalidValue("embeddings contain non-finite entries")
    m = _check_bits(e.shape[1])
    return CodeMatrix(m=m, words=_pack_bits(e >= 0))


def hamming(a: HashCode, b: HashCode) -> int:
    """Number of disagreeing positions, via popcount of the XOR-ed words."""
    if a.m != b.m:
        raise DimensionMismatch(f"code lengths differ: {a.m} vs {b.m}")
    return int(_popcount(a.words ^ b.words).sum())


def hamming_to_many(q: HashCode, codes: CodeMatrix) -> np.ndarray:
    """Hamming distance from one query code to every row of a CodeMatrix."""
    if q.m != codes.m:
        raise DimensionMismatch(f"code lengths differ: {q.m} vs {codes.m}")
    return _popcount(codes.words ^ q.words).sum(axis=1, dtype=np.int64)


def hamming_cross(a: CodeMatrix, b: CodeMatrix, chunk: int = 256) -> np.ndarray:
    """Full distance matrix between two code sets, computed in row chunks."""
    if a.m != b.m:
        raise DimensionMismatch(f"code lengths differ: {a.m} vs {b.m}")
    out = np.empty((len(a), len(b)), dtype=np.int64)
    for start in range(0, len(a), chunk):
        block = a.words[start : start + chunk]
        xor = block[:, None, :] ^ b.words[None, :, :]
        out[start : start + chunk] = _popcount(xor).sum(axis=2, dtype=np.int64)
    return out


def save_codes(path, codes: CodeMatrix) -> None:
    """Write the binary MMHC1 format: magic, m (u32 LE), n (u64 LE), then
    n rows of ceil(m/64) little-endian 64-bit words."""
    with open(path, "wb") as fh:
        fh.write(CODES_MAGIC)
        fh.write(struct.pack("<IQ", codes.m, len(codes)))
        fh.write(codes.words.astype("<u8").tobytes())


def load_codes(path) -> CodeMatrix:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[: len(CODES_MAGIC)] != CODES_MAGIC:
        raise FormatError("bad magic, not an MMHC1 file", path=path)
    header_end = len(CODES_MAGIC) + struct.calcsize("<IQ")
    if len(blob) < header_end:
        raise FormatError("truncated header", path=path)
    m, n = struct.unpack("<IQ", blob[len(CODES_MAGIC) : header_end])
    if not 1 <= m <= MAX_BITS:
        raise FormatError(f"declared code length {m} out of range", path=path)
    expected = n * _n_words(m) * 8
    body = blob[header_end:]
    if len(body) != expected:
        raise FormatError(
            f"expected {expected} payload bytes for {n} codes, found {len(body)}",
            path=path,
        )
    words = np.frombuffer(body, dtype="<u8").reshape(int(n), _n_words(m)).copy()
    tail = m % WORD_BITS
    if tail and n and np.any(words[:, -1] >> np.uint64(tail)):
        raise FormatError("padding bits beyond m are not zero", path=path)
    return CodeMatrix(m=int(m), words=words)
