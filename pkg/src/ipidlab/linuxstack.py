"""Linux/Android IP ID generator (flavors A0-A3), the lookup3 hashes it uses, and a KASLR model.

A packet to ``dst`` selects bucket ``h(dst, src, proto, key) mod M``. The
bucket counter then advances by ``1 + random(ticks since the bucket was last
used)``. A3 additionally mixes 32 bits of the kernel's net-namespace pointer,
``g(net) = (net >> rho) mod 2^32``, into the protocol word.

Hash argument packing: the three 32-bit words are ``(num(dst), num(src),
proto [^ g(net)])`` with the key as the initial value.

Device descriptor (JSON)::

    {"os": "linux", "variant": "a3", "f": 300, "M": 2048, "key_hex": "32:deadbeef",
     "arch": "x64", "rho": 6, "kaslr": true, "kernel_base_hex": "ffffffff9b000000",
     "init_net_offset": 20000000, "src_ip": "192.168.1.20", "seed": 3}
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass

import numpy as np

from .addr import ip_int, ip_str
from .bitcore import BitVec

M32 = 0xFFFFFFFF
GOLDEN = 0xDEADBEEF
DEFAULT_M = 2048
DEFAULT_SRC = "192.168.1.20"
UDP = 17

X64_BASE = 0xFFFFFFFF81000000
X64_SLOTS = 512
ARM64_BASE = 0xFFFFFF8008080000
ARM64_RANDOM_BITS = 16
ALIGN_2MB = 1 << 21
# Offset of init_net from the image base; build-specific, this is a stand-in.
DEFAULT_INIT_NET_OFFSET = 0x1A4C2C0


class Variant(str, enum.Enum):
    A0 = "a0"
    A1 = "a1"
    A2 = "a2"
    A3 = "a3"


class Arch(str, enum.Enum):
    X64 = "x64"
    ARM64 = "arm64"


DEFAULT_RHO = {Arch.X64: 6, Arch.ARM64: 7}


def _rol(x, r):
    return ((x << r) | (x >> (32 - r))) & M32


def _final(a, b, c):
    c ^= b; c = (c - _rol(b, 14)) & M32
    a ^= c; a = (a - _rol(c, 11)) & M32
    b ^= a; b = (b - _rol(a, 25)) & M32
    c ^= b; c = (c - _rol(b, 16)) & M32
    a ^= c; a = (a - _rol(c, 4)) & M32
    b ^= a; b = (b - _rol(a, 14)) & M32
    c ^= b; c = (c - _rol(b, 24)) & M32
    return c


def jenkins_lookup3(words, initval: int) -> int:
    """lookup3 word hash of three 32-bit words."""
    w0, w1, w2 = (int(w) & M32 for w in words)
    a = b = c = (GOLDEN + 12 + initval) & M32
    return _final((a + w0) & M32, (b + w1) & M32, (c + w2) & M32)


def jenkins_lookup3_a1(words, initval: int) -> int:
    """Older three-word variant: golden-ratio start on a and b, initval only on c."""
    w0, w1, w2 = (int(w) & M32 for w in words)
    return _final((w0 + GOLDEN) & M32, (w1 + GOLDEN) & M32, (w2 + initval) & M32)


def _final_np(a, b, c):
    def rol(x, r):
        return (x << np.uint32(r)) | (x >> np.uint32(32 - r))
    c = (c ^ b) - rol(b, 14)
    a = (a ^ c) - rol(c, 11)
    b = (b ^ a) - rol(a, 25)
    c = (c ^ b) - rol(b, 16)
    a = (a ^ c) - rol(c, 4)
    b = (b ^ a) - rol(a, 14)
    return (c ^ b) - rol(b, 24)


def hash_words_np(variant, dst, src, word3, key) -> np.ndarray:
    """Vectorized h over numpy arrays; any argument may be an array or a scalar."""
    u = lambda x: np.asarray(x, dtype=np.uint64).astype(np.uint32)
    dst, src, word3, key = u(dst), u(src), u(word3), u(key)
    with np.errstate(over="ignore"):
        if Variant(variant) is Variant.A1:
            g = np.uint32(GOLDEN)
            return _final_np(dst + g, src + g, word3 + key)
        iv = np.uint32(GOLDEN + 12) + key
        return _final_np(iv + dst, iv + src, iv + word3)


@dataclass(frozen=True)
class KaslrLayout:
    arch: Arch
    kernel_base: int
    init_net_offset: int

    @property
    def net_ptr(self) -> int:
        return (self.kernel_base + self.init_net_offset) & ((1 << 64) - 1)

    @property
    def slot(self) -> int:
        return kaslr_slot(self.arch, self.kernel_base)


def arch_base(arch) -> int:
    return X64_BASE if Arch(arch) is Arch.X64 else ARM64_BASE


def kaslr_slot_count(arch) -> int:
    return X64_SLOTS if Arch(arch) is Arch.X64 else 1 << ARM64_RANDOM_BITS


def kaslr_slot(arch, kernel_base: int) -> int:
    """Index of the randomized displacement; ValueError if the base is not a legal one."""
    delta = kernel_base - arch_base(arch)
    if delta < 0 or delta % ALIGN_2MB:
        raise ValueError(f"base {kernel_base:#x} is not a 2MB step above {arch_base(arch):#x}")
    slot = delta // ALIGN_2MB
    if slot >= kaslr_slot_count(arch):
        raise ValueError(f"slot {slot} out of range for {Arch(arch).value}")
    return slot


def sample_kaslr_layout(arch, seed, init_net_offset: int = DEFAULT_INIT_NET_OFFSET,
                        kaslr: bool = True) -> KaslrLayout:
    arch = Arch(arch)
    slot = int(np.random.default_rng(seed).integers(kaslr_slot_count(arch))) if kaslr else 0
    return KaslrLayout(arch, arch_base(arch) + slot * ALIGN_2MB, init_net_offset)


def g_net(net_ptr: int, rho: int) -> int:
    return (net_ptr >> rho) & M32


def g_net_for_slot(arch, slot: int, rho: int, init_net_offset: int) -> int:
    return g_net(arch_base(arch) + slot * ALIGN_2MB + init_net_offset, rho)


@dataclass(frozen=True)
class LinuxKeyMaterial:
    key: int
    net_ptr: int | None = None
    rho: int = 6
    arch: Arch = Arch.X64
    kaslr: bool = True

    @property
    def g_net(self) -> int:
        if self.net_ptr is None:
            raise ValueError("no net pointer (only A3 devices carry one)")
        return g_net(self.net_ptr, self.rho)


def linux_bucket_index(dst, src, protocol: int, keys: LinuxKeyMaterial, variant, M: int = DEFAULT_M) -> int:
    variant = Variant(variant)
    word3 = protocol & 0xFF
    if variant is Variant.A3:
        word3 ^= keys.g_net
    h = jenkins_lookup3_a1 if variant is Variant.A1 else jenkins_lookup3
    return h((ip_int(dst), ip_int(src), word3), keys.key) & (M - 1)


class LinuxDevice:
    """Bucketed counters with per-bucket last-use ticks."""

    def __init__(self, variant, f: int, keys: LinuxKeyMaterial, src_ip=DEFAULT_SRC, M: int = DEFAULT_M,
                 seed=None, layout: KaslrLayout | None = None, init_net_offset: int | None = None):
        if M <= 0 or M & (M - 1):
            raise ValueError(f"M must be a power of two, got {M}")
        self.variant = Variant(variant)
        if self.variant is Variant.A3 and keys.net_ptr is None:
            raise ValueError("A3 needs a net pointer")
        self.f = f
        self.keys = keys
        self.src_ip = ip_int(src_ip)
        self.M = M
        self.seed = seed
        self.layout = layout
        self.init_net_offset = layout.init_net_offset if layout else init_net_offset
        ss = np.random.SeedSequence(seed)
        _, table_seq, hop_seq = ss.spawn(3)
        self.beta = np.random.default_rng(table_seq).integers(0, 1 << 16, size=M).tolist()
        self.tau = [0] * M
        self._hop_rng = np.random.default_rng(hop_seq)
        self.clock = 0

    def bucket_index(self, dst, protocol: int = UDP) -> int:
        return linux_bucket_index(dst, self.src_ip, protocol, self.keys, self.variant, self.M)

    def ticks(self, seconds: float) -> int:
        return int(np.floor(self.f * seconds))

    def generate_ipid(self, dst, protocol: int = UDP, t_now: int = 0) -> int:
        if t_now < self.clock:
            raise ValueError(f"clock regression: {t_now} < {self.clock}")
        self.clock = t_now
        if self.variant is Variant.A0:
            return 0
        i = self.bucket_index(dst, protocol)
        elapsed = t_now - self.tau[i]
        hop = 1 + (int(self._hop_rng.random() * elapsed) if elapsed > 0 else 0)
        self.beta[i] = (self.beta[i] + hop) & 0xFFFF
        self.tau[i] = t_now
        return self.beta[i]

    def interfere(self, bucket: int, count: int = 1):
        self.beta[bucket] = (self.beta[bucket] + count) & 0xFFFF

    def W_log2(self) -> int:
        return keyspace_log2(self.variant, self.keys.arch, self.keys.kaslr)

    def to_json(self) -> str:
        k = self.keys
        return json.dumps({
            "os": "linux",
            "variant": self.variant.value,
            "f": self.f,
            "M": self.M,
            "key_hex": BitVec(k.key, 32).to_hex(),
            "arch": k.arch.value,
            "rho": k.rho,
            "kaslr": k.kaslr,
            "kernel_base_hex": format(self.layout.kernel_base, "016x") if self.layout else None,
            "init_net_offset": self.init_net_offset,
            "src_ip": ip_str(self.src_ip),
            "seed": self.seed,
        }, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "LinuxDevice":
        d = json.loads(text)
        if d.get("os") != "linux":
            raise ValueError("not a Linux device descriptor")
        arch = Arch(d.get("arch") or "x64")
        layout = None
        if d.get("kernel_base_hex"):
            layout = KaslrLayout(arch, int(d["kernel_base_hex"], 16), int(d["init_net_offset"]))
        keys = LinuxKeyMaterial(BitVec.from_hex(d["key_hex"]).value,
                                layout.net_ptr if layout else None,
                                int(d.get("rho") or DEFAULT_RHO[arch]), arch, bool(d.get("kaslr", True)))
        return cls(d["variant"], int(d["f"]), keys, d.get("src_ip", DEFAULT_SRC), int(d["M"]),
                   seed=d.get("seed"), layout=layout, init_net_offset=d.get("init_net_offset"))


def keyspace_log2(variant, arch=Arch.X64, kaslr: bool = True) -> int:
    """log2 of the search space: 32 for A1/A2, plus the KASLR entropy for A3."""
    if Variant(variant) is not Variant.A3 or not kaslr:
        return 32
    return 32 + (9 if Arch(arch) is Arch.X64 else ARM64_RANDOM_BITS)


def linux_new_device(seed, variant=Variant.A2, f: int = 300, arch=None, rho: int | None = None,
                     kaslr: bool = True, M: int = DEFAULT_M, src_ip=DEFAULT_SRC,
                     init_net_offset: int = DEFAULT_INIT_NET_OFFSET,
                     key_range: tuple | None = None) -> LinuxDevice:
    """Build a device from one seed. ``key_range`` confines the planted key (for scaled-down searches)."""
    variant = Variant(variant)
    if variant is Variant.A3 and arch is None:
        raise ValueError("A3 requires an architecture")
    arch = Arch(arch or Arch.X64)
    key_seq, layout_seq = np.random.SeedSequence(seed).spawn(2)
    krng = np.random.default_rng(key_seq)
    lo, hi = key_range or (0, 1 << 32)
    key = int(krng.integers(lo, hi))
    layout = None
    net = None
    if variant is Variant.A3:
        layout = sample_kaslr_layout(arch, np.random.default_rng(layout_seq).integers(1 << 63),
                                     init_net_offset, kaslr)
        net = layout.net_ptr
    rho = DEFAULT_RHO[arch] if rho is None else rho
    keys = LinuxKeyMaterial(key, net, rho, arch, kaslr)
    return LinuxDevice(variant, f, keys, src_ip, M, seed=seed, layout=layout, init_net_offset=init_net_offset)


def linux_generate_ipid(device: LinuxDevice, dst, protocol: int = UDP, t_now: int = 0) -> int:
    return device.generate_ipid(dst, protocol, t_now)
