"""GF(2) building blocks: bit vectors, bit matrices, elimination and the Toeplitz hash.

Bits are indexed MSB-first starting at 0. A ``BitVec`` of length n whose
integer value is v has bit i equal to ``(v >> (n - 1 - i)) & 1``. Python
integers serve as the backing store, so there is no fixed word width.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

TOEPLITZ_KEY_BITS = 320
TOEPLITZ_MAX_INPUT = 289


def _parity(x: int) -> int:
    return x.bit_count() & 1


@dataclass(frozen=True)
class BitVec:
    """Immutable bit vector; ``value`` holds the bits with bit 0 as the MSB."""

    value: int
    length: int

    def __post_init__(self):
        if self.length < 0:
            raise ValueError("negative length")
        if self.value < 0 or self.value >> self.length:
            raise ValueError(f"value does not fit in {self.length} bits")

    @classmethod
    def zeros(cls, n: int) -> "BitVec":
        return cls(0, n)

    @classmethod
    def from_bits(cls, bits: Iterable[int]) -> "BitVec":
        v = n = 0
        for b in bits:
            if b not in (0, 1):
                raise ValueError("bits must be 0 or 1")
            v = (v << 1) | b
            n += 1
        return cls(v, n)

    @classmethod
    def from_bytes(cls, data: bytes) -> "BitVec":
        return cls(int.from_bytes(data, "big"), 8 * len(data))

    @classmethod
    def from_hex(cls, text: str) -> "BitVec":
        """Parse the ``"<length>:<hex>"`` form produced by :meth:`to_hex`."""
        try:
            n_text, digits = text.strip().split(":", 1)
            n = int(n_text)
            value = int(digits, 16) if digits else 0
        except ValueError as exc:
            raise ValueError(f"malformed bit vector hex: {text!r}") from exc
        if len(digits) != (n + 3) // 4:
            raise ValueError(f"expected {(n + 3) // 4} hex digits for length {n}")
        return cls(value, n)

    def to_hex(self) -> str:
        width = (self.length + 3) // 4
        digits = format(self.value, f"0{width}x") if width else ""
        return f"{self.length}:{digits}"

    def __len__(self) -> int:
        return self.length

    def __iter__(self):
        for i in range(self.length):
            yield (self.value >> (self.length - 1 - i)) & 1

    def __getitem__(self, idx):
        if isinstance(idx, slice):
            start, stop, step = idx.indices(self.length)
            if step != 1:
                raise ValueError("only contiguous slices are supported")
            n = max(0, stop - start)
            return BitVec((self.value >> (self.length - stop)) & ((1 << n) - 1) if n else 0, n)
        if idx < 0:
            idx += self.length
        if not 0 <= idx < self.length:
            raise IndexError(idx)
        return (self.value >> (self.length - 1 - idx)) & 1

    def bits(self, first: int, last: int) -> "BitVec":
        """Inclusive slice ``first..last``."""
        return self[first:last + 1]

    def __xor__(self, other: "BitVec") -> "BitVec":
        if self.length != other.length:
            raise ValueError("length mismatch")
        return BitVec(self.value ^ other.value, self.length)

    def concat(self, *others: "BitVec") -> "BitVec":
        v, n = self.value, self.length
        for o in others:
            v = (v << o.length) | o.value
            n += o.length
        return BitVec(v, n)

    def __repr__(self) -> str:
        return f"BitVec({self.to_hex()!r})"


@dataclass(frozen=True)
class ToeplitzKey:
    key: BitVec

    def __post_init__(self):
        if self.key.length != TOEPLITZ_KEY_BITS:
            raise ValueError(f"Toeplitz key must be {TOEPLITZ_KEY_BITS} bits, got {self.key.length}")

    @classmethod
    def from_int(cls, value: int) -> "ToeplitzKey":
        return cls(BitVec(value, TOEPLITZ_KEY_BITS))

    def window(self, start: int, width: int = 32) -> int:
        """Key bits ``start .. start+width-1`` as an integer."""
        return (self.key.value >> (TOEPLITZ_KEY_BITS - start - width)) & ((1 << width) - 1)


def toeplitz_hash(key: ToeplitzKey, data: BitVec) -> int:
    """32-bit Toeplitz hash: output bit i is the parity of ``data & key[i : i+len(data)]``."""
    n = data.length
    if n > TOEPLITZ_MAX_INPUT:
        raise ValueError(f"Toeplitz input limited to {TOEPLITZ_MAX_INPUT} bits, got {n}")
    if n == 0:
        return 0
    k = key.key.value
    mask = (1 << n) - 1
    x = data.value
    out = 0
    for i in range(32):
        w = (k >> (TOEPLITZ_KEY_BITS - i - n)) & mask
        out = (out << 1) | _parity(x & w)
    return out


def num(v: BitVec) -> int:
    if v.length != 32:
        raise ValueError(f"num expects 32 bits, got {v.length}")
    return v.value


def vectorize(x: int, width: int = 32) -> BitVec:
    if x < 0 or x >> width:
        raise ValueError(f"{x} does not fit in {width} bits")
    return BitVec(x, width)


class BitMatrix:
    """Dense GF(2) matrix; each row is an int with column 0 as the MSB."""

    __slots__ = ("rows", "cols", "_data")

    def __init__(self, rows: int, cols: int, data: Sequence[int] | None = None):
        self.rows = rows
        self.cols = cols
        if data is None:
            data = [0] * rows
        if len(data) != rows:
            raise ValueError("row count mismatch")
        for r in data:
            if r < 0 or r >> cols:
                raise ValueError("row wider than column count")
        self._data = tuple(data)

    @classmethod
    def identity(cls, n: int) -> "BitMatrix":
        return cls(n, n, [1 << (n - 1 - i) for i in range(n)])

    @classmethod
    def from_lists(cls, entries: Sequence[Sequence[int]]) -> "BitMatrix":
        cols = len(entries[0]) if entries else 0
        if any(len(r) != cols for r in entries):
            raise ValueError("ragged rows")
        return cls(len(entries), cols, [BitVec.from_bits(r).value for r in entries])

    def row(self, r: int) -> int:
        return self._data[r]

    def row_ints(self) -> tuple:
        return self._data

    def __getitem__(self, rc) -> int:
        r, c = rc
        return (self._data[r] >> (self.cols - 1 - c)) & 1

    def to_lists(self) -> list:
        return [[(row >> (self.cols - 1 - c)) & 1 for c in range(self.cols)] for row in self._data]

    def column(self, c: int) -> int:
        """Column c packed as an int with row 0 as the MSB."""
        v = 0
        shift = self.cols - 1 - c
        for row in self._data:
            v = (v << 1) | ((row >> shift) & 1)
        return v

    def __matmul__(self, other):
        if isinstance(other, BitVec):
            if other.length != self.cols:
                raise ValueError("dimension mismatch")
            v = 0
            for row in self._data:
                v = (v << 1) | _parity(row & other.value)
            return BitVec(v, self.rows)
        if other.rows != self.cols:
            raise ValueError("dimension mismatch")
        out = []
        for row in self._data:
            acc = 0
            for c in range(self.cols):
                if (row >> (self.cols - 1 - c)) & 1:
                    acc ^= other._data[c]
            out.append(acc)
        return BitMatrix(self.rows, other.cols, out)

    def __eq__(self, other) -> bool:
        return (isinstance(other, BitMatrix) and self.rows == other.rows
                and self.cols == other.cols and self._data == other._data)

    def __hash__(self):
        return hash((self.rows, self.cols, self._data))

    def __repr__(self) -> str:
        return f"BitMatrix({self.rows}x{self.cols})"


def gaussian_pseudo_inverse(C: BitMatrix):
    """Row-reduce C while tracking the row operations.

    Returns ``(Z, rank, kernel_rank)`` where Z is the accumulated
    row-operation matrix, so ``Z @ C`` is the reduced echelon form of C.
    With full column rank that form is the identity stacked on zero rows.
    """
    n, m = C.rows, C.cols
    a = list(C.row_ints())
    z = [1 << (n - 1 - i) for i in range(n)]
    rank = 0
    for c in range(m):
        bit = 1 << (m - 1 - c)
        pivot = next((r for r in range(rank, n) if a[r] & bit), None)
        if pivot is None:
            continue
        a[rank], a[pivot] = a[pivot], a[rank]
        z[rank], z[pivot] = z[pivot], z[rank]
        for r in range(n):
            if r != rank and a[r] & bit:
                a[r] ^= a[rank]
                z[r] ^= z[rank]
        rank += 1
    return BitMatrix(n, n, z), rank, m - rank
