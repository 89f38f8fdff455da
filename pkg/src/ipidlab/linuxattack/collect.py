"""Burst splitting and collision-pair collection."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..addr import ip_int

CHROME_OFFSETS = (0.0, 0.25, 0.75, 1.75, 3.75, 7.75, 15.75, 23.75, 31.75)
BURST_LABELS = tuple(f"B{i}" for i in range(9))


class RetestSignal(Exception):
    """The measurement cannot support a decision; the tracker should sample again."""


@dataclass
class BurstObservation:
    label: str
    records: list = field(default_factory=list)  # (dst, ipid, t_arrive)

    def __len__(self):
        return len(self.records)


@dataclass(frozen=True)
class CandidatePairSet:
    pairs: dict  # (dst_i, dst_j) -> delta, with dst_i < dst_j

    def __len__(self):
        return len(self.pairs)


@dataclass(frozen=True)
class CollisionSet:
    pairs: tuple  # sorted (dst_i, dst_j)

    def __len__(self):
        return len(self.pairs)

    def addresses(self):
        """Distinct addresses and the index arrays of each pair into them."""
        addrs = sorted({a for p in self.pairs for a in p})
        pos = {a: i for i, a in enumerate(addrs)}
        pi = np.array([pos[a] for a, _ in self.pairs], dtype=np.int64)
        pj = np.array([pos[b] for _, b in self.pairs], dtype=np.int64)
        return np.array(addrs, dtype=np.uint32), pi, pj


def split_bursts(records, offsets=CHROME_OFFSETS, duration: float = 0.6, start: float = 0.0) -> dict:
    """Assign each delivered record to the burst window whose centre is nearest its arrival.

    ``records`` are objects or tuples exposing dst, ipid and t_arrive;
    records without an arrival time are skipped.
    """
    centres = np.asarray(offsets, dtype=float) + duration / 2 + start
    out = {BURST_LABELS[i]: BurstObservation(BURST_LABELS[i]) for i in range(len(offsets))}
    for rec in records:
        dst, ipid, t = _fields(rec)
        if t is None:
            continue
        b = int(np.argmin(np.abs(centres - t)))
        out[BURST_LABELS[b]].records.append((dst, ipid, t))
    return out


def _fields(rec):
    if isinstance(rec, tuple):
        return ip_int(rec[0]), int(rec[1]), rec[2]
    return ip_int(rec.dst), int(rec.ipid), rec.t_arrive


def select_bursts(bursts: dict, expected: int, primary=("B4", "B5"), fallback=("B3", "B5"),
                  max_missing: float = 0.5):
    """Pick the two bursts to analyze; raise RetestSignal when the late bursts are mostly missing."""
    def healthy(label):
        return label in bursts and len(bursts[label]) >= (1 - max_missing) * expected

    if not any(len(b) for b in bursts.values()):
        raise RetestSignal("empty trace")
    if all(healthy(lbl) for lbl in primary):
        return bursts[primary[0]], bursts[primary[1]]
    if all(healthy(lbl) for lbl in fallback):
        return bursts[fallback[0]], bursts[fallback[1]]
    raise RetestSignal("too many records missing from the late bursts")


def window_bound(f: float, delta_L: float) -> float:
    return f * delta_L + 10


def collect_candidates(burst: BurstObservation, f: float, delta_L: float,
                       both_directions: bool = False) -> CandidatePairSet:
    """Pairs (lower address, higher address) whose IPID step lies strictly inside (0, f*delta_L + 10)."""
    if len(burst.records) < 2:
        return CandidatePairSet({})
    recs = sorted(burst.records)
    dst = np.array([r[0] for r in recs], dtype=np.int64)
    ipid = np.array([r[1] for r in recs], dtype=np.int64)
    lam = window_bound(f, delta_L)
    diff = (ipid[None, :] - ipid[:, None]) & 0xFFFF
    ok = (diff > 0) & (diff < lam)
    if both_directions:
        ok |= (diff.T > 0) & (diff.T < lam)
    ok &= np.triu(np.ones_like(ok), k=1).astype(bool)
    ok &= dst[:, None] != dst[None, :]
    ii, jj = np.nonzero(ok)
    return CandidatePairSet({(int(dst[i]), int(dst[j])): int(diff[i, j]) for i, j in zip(ii, jj)})


def intersect_bursts(c_a: CandidatePairSet, c_b: CandidatePairSet) -> CollisionSet:
    return CollisionSet(tuple(sorted(c_a.pairs.keys() & c_b.pairs.keys())))
