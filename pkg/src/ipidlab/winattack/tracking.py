"""Device IDs, counter prediction, verification and re-identification from extracted keys.

Stored-key records are one JSON object per line::

    {"key_tail_hex": "45:0a1b…", "tail_width": 45, "beta0": 1234,
     "offset_secret": 5678, "plan_digest": "3f2a…"}
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from ..addr import ip_int
from ..bitcore import BitVec
from .phase1 import MASK15
from .phase2 import WindowsExtraction, t15


@dataclass(frozen=True)
class WindowsDeviceId:
    tail_width: int
    candidate_set: tuple

    def __post_init__(self):
        if not 0 < self.tail_width <= 45:
            raise ValueError("tail width must be in 1..45")
        if not self.candidate_set:
            raise ValueError("a device ID needs at least one candidate")

    @property
    def unique(self) -> bool:
        return len(self.candidate_set) == 1

    def resolve(self, policy: str = "drop"):
        """Single ID, or for several tails: None ("drop") or all of them ("multi")."""
        if self.unique:
            return self.candidate_set[0]
        if policy == "drop":
            return None
        if policy == "multi":
            return self.candidate_set
        raise ValueError(f"unknown policy {policy!r}")

    def hex(self, tail: int) -> str:
        return BitVec(tail, self.tail_width).to_hex()


def derive_device_id(survivors, tail_width: int = 41) -> WindowsDeviceId:
    if not survivors:
        raise ValueError("no survivors to derive an ID from")
    tails = sorted({s.key_tail(tail_width) for s in survivors})
    return WindowsDeviceId(tail_width, tuple(tails))


def predict_counter(extraction: WindowsExtraction, dst, observed_ipid: int) -> int:
    """Counter value (mod 2^14) that produced ``observed_ipid`` for ``dst``."""
    w = extraction.key_bits_18_62
    s = (t15(w, ip_int(dst)) ^ extraction.offset_secret) & 0x3FFF
    return (observed_ipid - s) & 0x3FFF


def verify_extraction_9bit(extraction: WindowsExtraction, pair, pair_ipids,
                           tail_width: int = 40) -> bool:
    """Check a fresh pair mod 2^9 using only the ``tail_width`` lowest key bits.

    Accepts either send order, i.e. a delta of +1 or -1 on top of S1 - S0.
    """
    return (pair_ipids[1] & 0x1FF) in verification_candidates(extraction, pair, pair_ipids[0], tail_width)


def verification_candidates(extraction: WindowsExtraction, pair, first_ipid: int,
                            tail_width: int = 40) -> set:
    if tail_width < 40:
        raise ValueError("the 9-bit check needs at least 40 key bits")
    w = extraction.key_tail(tail_width)
    a, b = ip_int(pair[0]), ip_int(pair[1])
    s0 = t15(w, a) ^ extraction.offset_secret
    s1 = t15(w, b) ^ extraction.offset_secret
    return {(first_ipid + k + s1 - s0) & 0x1FF for k in (1, -1)}


def fast_track_candidates(stored_keys, ipid0: int, pair_ipids, plan, tail_width: int = 45,
                          both_orders: bool = False, max_gap: int = 0) -> list:
    """Stored extractions consistent with a fresh measurement.

    For each stored key the counter start is guessed one bit at a time from
    the least significant end. A guess of n bits fixes S mod 2^n for every
    pair, so the pair equation can prune mod 2^n before the next bit is
    tried. A tail of w key bits supports a depth of ``min(14, w - 31)``.
    """
    depth = min(14, tail_width - 31)
    if depth < 1:
        raise ValueError("tail too short for fast tracking")
    ip0 = plan.phase1_ips[0]
    xs = [(ip0 ^ a, ip0 ^ b) for a, b in plan.phase2_pairs]
    d_obs = [(int(b) - int(a)) & MASK15 for a, b in pair_ipids]
    ks = set(range(1, max_gap + 2))
    if both_orders:
        ks |= {-k for k in ks}
    matches = []
    for ext in stored_keys:
        w = ext.key_tail(tail_width)
        ts = [(t15(w, xa), t15(w, xb)) for xa, xb in xs]
        frontier = [0]
        for n in range(1, depth + 1):
            mod = (1 << n) - 1
            ks_n = {k & mod for k in ks}
            nxt = []
            for beta in frontier:
                for cand in (beta, beta | (1 << (n - 1))):
                    off0 = (ipid0 - cand) & mod
                    if all(((d - ((tb ^ off0) & mod) + ((ta ^ off0) & mod)) & mod) in ks_n
                           for d, (ta, tb) in zip(d_obs, ts)):
                        nxt.append(cand)
            frontier = nxt
            if not frontier:
                break
        if frontier:
            matches.append(ext)
    return matches


def fast_track_match(stored_keys, ipid0: int, pair_ipids, plan, **kw):
    """The unique stored key consistent with the measurement, else None."""
    if not stored_keys:
        return None
    found = fast_track_candidates(stored_keys, ipid0, pair_ipids, plan, **kw)
    keys = {e.key_bits_18_62 for e in found}
    return found[0] if len(keys) == 1 else None


def abstract_scheme_fingerprint(ipids) -> tuple:
    """IPID deltas against the first value; stable for a fixed device and source."""
    return tuple((v - ipids[0]) & MASK15 for v in ipids[1:])


def extraction_record(ext: WindowsExtraction, tail_width: int, plan_digest: str) -> dict:
    return {
        "key_tail_hex": BitVec(ext.key_tail(tail_width), tail_width).to_hex(),
        "tail_width": tail_width,
        "beta0": ext.beta0_mod_2_14,
        "offset_secret": ext.offset_secret,
        "plan_digest": plan_digest,
    }


def record_extraction(rec: dict) -> WindowsExtraction:
    return WindowsExtraction(rec["beta0"], BitVec.from_hex(rec["key_tail_hex"]).value,
                             rec["offset_secret"])


def append_records(path, records):
    with open(path, "a", encoding="utf-8") as fh:
        for r in records:
            fh.write(json.dumps(r) + "\n")


def load_records(path) -> list:
    p = Path(path)
    if not p.exists():
        return []
    return [json.loads(line) for line in p.read_text().splitlines() if line.strip()]
