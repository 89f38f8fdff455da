"""Windows 8+ IP ID generator.

Each device holds a 320-bit Toeplitz key K, two 32-bit words K1 and K2, and
a table of M 32-bit counters. For a destination ``dst`` the generator picks
bucket ``num(K2 ^ T(K, dst[0:16]) ^ T(K, src)) mod M`` and adds the per-pair
offset ``num(K1 ^ T(K, dst || src || 0^32))`` to that bucket's counter.

Key file format (JSON)::

    {"os": "windows", "K": "320:…", "K1": "32:…", "K2": "32:…",
     "flavor": "pre-rs5", "M": 8192, "src_ip": "192.168.1.10",
     "seed": 7, "hash": "toeplitz"}

Counters are not stored. They are re-drawn from ``seed``.
"""

from __future__ import annotations

import enum
import hashlib
import json
from dataclasses import dataclass

import numpy as np

from .addr import ip_int, ip_str
from .bitcore import BitVec, ToeplitzKey, toeplitz_hash

DEFAULT_M = 8192
DEFAULT_SRC = "192.168.1.10"


class Flavor(str, enum.Enum):
    PRE_RS5 = "pre-rs5"
    RS5 = "rs5"

    @property
    def ipid_bits(self) -> int:
        return 15 if self is Flavor.PRE_RS5 else 16


@dataclass(frozen=True)
class WindowsKeyMaterial:
    K: ToeplitzKey
    K1: int
    K2: int

    @classmethod
    def random(cls, rng: np.random.Generator) -> "WindowsKeyMaterial":
        k = int.from_bytes(rng.bytes(40), "big")
        k1 = int.from_bytes(rng.bytes(4), "big")
        k2 = int.from_bytes(rng.bytes(4), "big")
        return cls(ToeplitzKey.from_int(k), k1, k2)

    def key_bits(self, first: int, last: int) -> int:
        """Inclusive slice of K as an int (``first`` is the MSB)."""
        return self.K.key.bits(first, last).value


def _streams(seed):
    keys, counters = np.random.SeedSequence(seed).spawn(2)
    return np.random.default_rng(keys), np.random.default_rng(counters)


class _ToeplitzWindows:
    """T(K, x) for inputs up to 96 bits, XOR-ing one 32-bit key window per set bit."""

    def __init__(self, key: ToeplitzKey, span: int = 96):
        self.win = [key.window(q) for q in range(span)]

    def __call__(self, x: int, n: int) -> int:
        out = 0
        win = self.win
        while x:
            low = x & -x
            out ^= win[n - low.bit_length()]
            x ^= low
        return out


class _StrongHash:
    """Keyed BLAKE2b standing in for T; used for the abstract-scheme experiments."""

    def __init__(self, key: ToeplitzKey):
        self.key = key.key.value.to_bytes(40, "big")

    def __call__(self, x: int, n: int) -> int:
        data = n.to_bytes(2, "big") + x.to_bytes((n + 7) // 8, "big")
        return int.from_bytes(hashlib.blake2b(data, key=self.key, digest_size=4).digest(), "big")


class WindowsDevice:
    """Mutable generator state for one simulated Windows host."""

    def __init__(self, keys: WindowsKeyMaterial, counters, src_ip, flavor=Flavor.PRE_RS5,
                 seed=None, hash_mode: str = "toeplitz"):
        m = len(counters)
        if m <= 0 or m & (m - 1):
            raise ValueError(f"M must be a power of two, got {m}")
        self.keys = keys
        self.counters = [int(c) & 0xFFFFFFFF for c in counters]
        self.src_ip = ip_int(src_ip)
        self.flavor = Flavor(flavor)
        self.seed = seed
        self.hash_mode = hash_mode
        if hash_mode == "toeplitz":
            self._T = _ToeplitzWindows(keys.K)
        elif hash_mode == "strong":
            self._T = _StrongHash(keys.K)
        else:
            raise ValueError(f"unknown hash mode {hash_mode!r}")
        self._src_hash = self._T(self.src_ip, 32)
        self.generated = 0

    @property
    def M(self) -> int:
        return len(self.counters)

    def bucket_index(self, dst) -> int:
        d = ip_int(dst)
        return (self.keys.K2 ^ self._T(d >> 16, 16) ^ self._src_hash) & (self.M - 1)

    def offset(self, dst) -> int:
        """Per-(dst, src) addend ``num(K1 ^ T(K, dst || src || 0^32))``."""
        d = ip_int(dst)
        return self.keys.K1 ^ self._T(((d << 32) | self.src_ip) << 32, 96)

    def generate_ipid(self, dst) -> int:
        i = self.bucket_index(dst)
        v = (self.counters[i] + self.offset(dst)) & 0xFFFFFFFF
        self.counters[i] = (self.counters[i] + 1) & 0xFFFFFFFF
        self.generated += 1
        return v & ((1 << self.flavor.ipid_bits) - 1)

    def interfere(self, bucket: int, count: int = 1):
        """Advance one counter as if an unrelated packet had used it."""
        self.counters[bucket] = (self.counters[bucket] + count) & 0xFFFFFFFF

    def to_json(self) -> str:
        k = self.keys
        return json.dumps({
            "os": "windows",
            "K": k.K.key.to_hex(),
            "K1": BitVec(k.K1, 32).to_hex(),
            "K2": BitVec(k.K2, 32).to_hex(),
            "flavor": self.flavor.value,
            "M": self.M,
            "src_ip": ip_str(self.src_ip),
            "seed": self.seed,
            "hash": self.hash_mode,
        }, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "WindowsDevice":
        d = json.loads(text)
        if d.get("os") != "windows":
            raise ValueError("not a Windows key file")
        keys = WindowsKeyMaterial(ToeplitzKey(BitVec.from_hex(d["K"])),
                                  BitVec.from_hex(d["K1"]).value, BitVec.from_hex(d["K2"]).value)
        _, crng = _streams(d["seed"])
        counters = _draw_counters(crng, int(d["M"]))
        return cls(keys, counters, d["src_ip"], d["flavor"], seed=d["seed"],
                   hash_mode=d.get("hash", "toeplitz"))


def _draw_counters(rng, m):
    return rng.integers(0, 1 << 32, size=m, dtype=np.uint64).tolist()


def windows_new_device(seed, flavor=Flavor.PRE_RS5, M: int = DEFAULT_M, src_ip=DEFAULT_SRC,
                       zero_counters: bool = False, hash_mode: str = "toeplitz") -> WindowsDevice:
    if M <= 0 or M & (M - 1):
        raise ValueError(f"M must be a power of two, got {M}")
    krng, crng = _streams(seed)
    keys = WindowsKeyMaterial.random(krng)
    counters = [0] * M if zero_counters else _draw_counters(crng, M)
    return WindowsDevice(keys, counters, src_ip, flavor, seed=seed, hash_mode=hash_mode)


def windows_generate_ipid(device: WindowsDevice, dst) -> int:
    return device.generate_ipid(dst)


def windows_bucket_index(device: WindowsDevice, dst) -> int:
    return device.bucket_index(dst)


def reference_ipid(keys: WindowsKeyMaterial, counters, src, dst, bits: int = 15):
    """Slow transcription of the generator, used to cross-check the fast path.

    Reads but does not modify ``counters``. Returns ``(bucket, ipid)``.
    """
    s, d = BitVec(ip_int(src), 32), BitVec(ip_int(dst), 32)
    i = (keys.K2 ^ toeplitz_hash(keys.K, d[0:16]) ^ toeplitz_hash(keys.K, s)) % len(counters)
    off = keys.K1 ^ toeplitz_hash(keys.K, d.concat(s, BitVec.zeros(32)))
    return i, ((counters[i] + off) & 0xFFFFFFFF) & ((1 << bits) - 1)
