"""First phase: recover key bits 33..62 and the counter start modulo 2^14.

For every guess of the starting counter, the J observed IPIDs give
``15(J-1)`` linear equations in the 30 key bits. The precomputed
row-operation matrix Z turns them into 30 solved bits plus ``15(J-1)-30``
consistency checks that must all vanish.

Z is linear, so ``Z·(D^1 || ... || D^{J-1})`` is the XOR of one table lookup
per block. The tables are built once per plan, and the 2^14 guesses are
evaluated as numpy vectors.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from ..bitcore import BitMatrix, BitVec, gaussian_pseudo_inverse
from .plan import MeasurementPlan, build_coefficient_matrix

BETA_SPACE = 1 << 14
MASK15 = 0x7FFF


@dataclass(frozen=True, order=True)
class Phase1Result:
    beta0_mod_2_14: int
    key_bits_33_62: int
    permutation_used: tuple
    gap_configuration: tuple
    # (IPID^0 - beta0 - slot offset) mod 2^15; its top bit is arbitrary
    ip0_offset: int = 0


def _linear_table(columns) -> np.ndarray:
    """Table of XOR-combinations: entry v is the XOR of columns[k] for set bits k of v."""
    t = np.zeros(1, dtype=np.uint64)
    for c in columns:
        t = np.concatenate([t, t ^ np.uint64(c)])
    return t


class PreparedPlan:
    """Plan-specific precomputation shared by every measurement using the plan."""

    def __init__(self, plan: MeasurementPlan):
        self.plan = plan
        C = build_coefficient_matrix(plan.phase1_ips)
        self.Z, self.rank, self.kernel_rank = gaussian_pseudo_inverse(C)
        if self.kernel_rank:
            raise ValueError(f"coefficient matrix has kernel rank {self.kernel_rank}; screen the IP set")
        n = C.rows
        self.n_rows = n
        self.n_tail = n - 30
        self.tail_shift = max(0, self.n_tail - 64)
        self.exact_tail = self.tail_shift == 0
        cols = [self.Z.column(c) for c in range(n)]
        self.key_tables, self.tail_tables = [], []
        tail_mask = (1 << self.n_tail) - 1
        for j in range(1, plan.J):
            block = [cols[15 * (j - 1) + 14 - k] for k in range(15)]
            self.key_tables.append(_linear_table([c >> self.n_tail for c in block]))
            self.tail_tables.append(_linear_table([(c & tail_mask) >> self.tail_shift for c in block]))
        from .phase2 import PairTables
        self.pairs = PairTables(plan)

    def solve(self, d_values) -> tuple:
        """Exact ``Z·D`` for one candidate: returns (key bits 33..62, tail residue)."""
        d = BitVec(0, 0).concat(*(BitVec(v, 15) for v in d_values))
        r = (self.Z @ d).value
        return r >> self.n_tail, r & ((1 << self.n_tail) - 1)


@lru_cache(maxsize=64)
def prepare_plan(plan: MeasurementPlan) -> PreparedPlan:
    return PreparedPlan(plan)


def gap_configurations(J: int, max_gap: int):
    """All gap vectors (g_1..g_{J-1}) with total at most max_gap, smallest totals first."""
    for total in range(max_gap + 1):
        for bars in itertools.combinations(range(total + J - 2), J - 2):
            parts, prev = [], -1
            for b in bars:
                parts.append(b - prev - 1)
                prev = b
            parts.append(total + J - 2 - prev - 1)
            yield tuple(parts)


def slot_offsets(gaps) -> tuple:
    """Counter offset of each transmission slot given the lost packets before it."""
    offs, acc = [0], 0
    for s, g in enumerate(gaps, start=1):
        acc += g
        offs.append(s + acc)
    return tuple(offs)


def detect_global_counter(ipids, bits: int = 15) -> bool:
    """True when the values are consecutive counter readings in some order."""
    mod = 1 << bits
    vals = [v % mod for v in ipids]
    want = set(range(len(vals)))
    return any({(v - base) % mod for v in vals} == want for base in vals)


def phase1_extract(ipids, plan: MeasurementPlan, prepared: PreparedPlan | None = None,
                   try_permutations: bool = False, max_gap: int = 0,
                   beta_range: tuple = (0, BETA_SPACE),
                   reject_global_counter: bool = True) -> list:
    """Enumerate counter starts (and optionally orders and gaps); return sorted survivors.

    ``beta_range`` restricts the enumeration to a slice of the 2^14 starting
    values, so the work can be split into independent units and merged with
    :func:`merge_results`.
    """
    prep = prepared or prepare_plan(plan)
    J = plan.J
    if len(ipids) != J:
        raise ValueError(f"expected {J} IPIDs, got {len(ipids)}")
    ip = [int(v) & MASK15 for v in ipids]
    if reject_global_counter and detect_global_counter(ip):
        return []
    b = np.arange(*beta_range, dtype=np.int64)
    n_off = J + max_gap
    offs = np.arange(n_off, dtype=np.int64)
    A = (np.asarray(ip, dtype=np.int64)[:, None, None] - offs[None, :, None] - b[None, None, :]) & MASK15
    perms = itertools.permutations(range(J)) if try_permutations else [tuple(range(J))]
    gap_list = list(gap_configurations(J, max_gap))
    found = set()
    for perm in perms:
        for gaps in gap_list:
            so = slot_offsets(gaps)
            c = [so[perm[j]] for j in range(J)]
            base = A[0, c[0]]
            tail = prep.tail_tables[0][A[1, c[1]] ^ base]
            for j in range(2, J):
                tail = tail ^ prep.tail_tables[j - 1][A[j, c[j]] ^ base]
            for h in np.flatnonzero(tail == 0):
                beta = int(b[h])
                ds = [int(A[j, c[j], h] ^ A[0, c[0], h]) for j in range(1, J)]
                key, residue = prep.solve(ds)
                if residue:
                    continue
                found.add(Phase1Result(beta, key, perm, gaps, (ip[0] - beta - c[0]) & MASK15))
    return sorted(found)


def phase1_extract_batch(ipid_rows, plan: MeasurementPlan, prepared: PreparedPlan | None = None,
                         chunk: int = 64) -> list:
    """In-order, gap-free extraction for many measurements of one plan at once."""
    prep = prepared or prepare_plan(plan)
    rows = np.asarray(ipid_rows, dtype=np.int64) & MASK15
    J = plan.J
    b = np.arange(BETA_SPACE, dtype=np.int64)
    out = []
    ident, nogaps = tuple(range(J)), (0,) * (J - 1)
    for lo in range(0, len(rows), chunk):
        blk = rows[lo:lo + chunk]
        base = (blk[:, 0:1] - b[None, :]) & MASK15
        tail = None
        for j in range(1, J):
            d = ((blk[:, j:j + 1] - j - b[None, :]) & MASK15) ^ base
            t = prep.tail_tables[j - 1][d]
            tail = t if tail is None else tail ^ t
        hit_rows, hit_cols = np.nonzero(tail == 0)
        per = [set() for _ in range(len(blk))]
        for r, h in zip(hit_rows.tolist(), hit_cols.tolist()):
            ip = blk[r].tolist()
            if detect_global_counter(ip):
                continue
            ds = [((ip[j] - j - h) & MASK15) ^ ((ip[0] - h) & MASK15) for j in range(1, J)]
            key, residue = prep.solve(ds)
            if not residue:
                per[r].add(Phase1Result(h, key, ident, nogaps, (ip[0] - h) & MASK15))
        out.extend(sorted(s) for s in per)
    return out


def merge_results(*parts) -> list:
    """Deterministic union of survivor lists from independent work units."""
    return sorted(set().union(*map(set, parts)))
