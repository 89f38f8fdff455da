"""Measurement plans for the Windows extraction: IP sets, screening, parameter choice."""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field

import numpy as np

from ..addr import class_b, ip_int, ip_str
from ..bitcore import BitMatrix, gaussian_pseudo_inverse


def _bit(x: int, i: int) -> int:
    return (x >> (31 - i)) & 1


@dataclass(frozen=True)
class MeasurementPlan:
    """J same-/16 addresses for the first phase plus G same-/16 pairs for the second.

    Plan file format (JSON)::

        {"phase1_ips": ["10.1.2.3", ...], "phase2_pairs": [["10.7.0.1", "10.7.9.9"], ...]}
    """

    phase1_ips: tuple
    phase2_pairs: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "phase1_ips", tuple(ip_int(a) for a in self.phase1_ips))
        object.__setattr__(self, "phase2_pairs",
                           tuple((ip_int(a), ip_int(b)) for a, b in self.phase2_pairs))

    @property
    def J(self) -> int:
        return len(self.phase1_ips)

    @property
    def G(self) -> int:
        return len(self.phase2_pairs)

    @property
    def Q(self) -> int:
        """Pairs whose leading address bit matches that of the first phase-1 address."""
        lead = _bit(self.phase1_ips[0], 0)
        return sum(_bit(a, 0) == lead for a, _ in self.phase2_pairs)

    def to_json(self) -> str:
        return json.dumps({"phase1_ips": [ip_str(a) for a in self.phase1_ips],
                           "phase2_pairs": [[ip_str(a), ip_str(b)] for a, b in self.phase2_pairs]},
                          indent=2)

    @classmethod
    def from_json(cls, text: str) -> "MeasurementPlan":
        d = json.loads(text)
        try:
            return cls(d["phase1_ips"], [tuple(p) for p in d.get("phase2_pairs", [])])
        except (KeyError, TypeError, ValueError) as exc:
            raise ValueError(f"malformed plan: {exc}") from exc

    def digest(self) -> str:
        return hashlib.sha256(self.to_json().encode()).hexdigest()[:16]

    def send_order(self) -> list:
        """Destinations in nominal transmission order."""
        out = list(self.phase1_ips)
        for a, b in self.phase2_pairs:
            out += [a, b]
        return out


@dataclass
class ScreeningReport:
    ok: bool
    failures: list = field(default_factory=list)
    rank: int = 0
    kernel_rank: int = 0


def build_coefficient_matrix(phase1_ips) -> BitMatrix:
    """Coefficients of the first-phase equations.

    Row ``15(j-1) + r`` holds the low 16 bits of ``IP^j ^ IP^0`` shifted so
    that address bit 16 lands in column r. Column c multiplies key bit 33+c.
    """
    ips = [ip_int(a) for a in phase1_ips]
    rows = []
    for ip in ips[1:]:
        x = (ip ^ ips[0]) & 0xFFFF
        rows.extend(x << (14 - r) for r in range(15))
    return BitMatrix(len(rows), 30, rows)


def phase1_conditions(phase1_ips) -> list:
    """Cheap necessary conditions for a full-rank coefficient matrix; returns failures."""
    ips = [ip_int(a) for a in phase1_ips]
    fails = []
    if len({class_b(a) for a in ips}) != 1:
        fails.append("phase1 addresses span more than one class B network")
    low = [a & 0xFFFF for a in ips]
    if len({_bit(a, 16) for a in ips}) == 1:
        fails.append("n1: all phase1 addresses share bit 16")
    if len({a & 1 for a in low}) == 1:
        fails.append("n2: all phase1 addresses share bit 31")
    if not any(((a ^ ips[0]) & 0xFFFF).bit_count() & 1 for a in ips[1:]):
        fails.append("parity: every IP^j ^ IP^0 has even weight in bits 16..31")
    return fails


def validate_ip_set(plan: MeasurementPlan) -> ScreeningReport:
    fails = []
    if plan.J < 4:
        fails.append(f"J={plan.J} < 4")
    if plan.G < 2:
        fails.append(f"G={plan.G} < 2")
    fails += phase1_conditions(plan.phase1_ips)
    nets = [class_b(plan.phase1_ips[0])]
    for a, b in plan.phase2_pairs:
        if class_b(a) != class_b(b):
            fails.append(f"pair {ip_str(a)}/{ip_str(b)} spans two class B networks")
        if a == b:
            fails.append(f"pair {ip_str(a)} repeats one address")
        nets.append(class_b(a))
    if len(set(nets)) != len(nets):
        fails.append("class B networks are not distinct across groups")
    if plan.Q >= plan.G:
        fails.append(f"Q={plan.Q} >= G={plan.G}: key bit 18 unrecoverable")
    rank = kr = 0
    if plan.J >= 2:
        _, rank, kr = gaussian_pseudo_inverse(build_coefficient_matrix(plan.phase1_ips))
        if kr:
            fails.append(f"coefficient matrix kernel rank {kr}")
    return ScreeningReport(not fails, fails, rank, kr)


def _random_low_halves(rng, n):
    return [int(x) for x in rng.choice(1 << 16, size=n, replace=False)]


def random_phase1_ips(rng: np.random.Generator, J: int, prefix: int | None = None) -> list:
    """J distinct addresses in one class B satisfying the three cheap conditions."""
    if prefix is None:
        prefix = int(rng.integers(1, 1 << 16))
    while True:
        ips = [(prefix << 16) | x for x in _random_low_halves(rng, J)]
        if not phase1_conditions(ips):
            return ips


def random_plan(rng: np.random.Generator, J: int = 6, G: int = 12, Q: int = 3,
                max_tries: int = 1000) -> MeasurementPlan:
    """Draw a plan that passes :func:`validate_ip_set`."""
    if not 0 <= Q < G:
        raise ValueError("need 0 <= Q < G")
    for _ in range(max_tries):
        nets = rng.choice(1 << 16, size=4 * G + 8, replace=False).tolist()
        p1 = nets.pop()
        lead = p1 >> 15
        same = [n for n in nets if n >> 15 == lead][:Q]
        diff = [n for n in nets if n >> 15 != lead][:G - Q]
        if len(same) < Q or len(diff) < G - Q:
            continue
        order = same + diff
        rng.shuffle(order)
        pairs = []
        for n in order:
            a, b = _random_low_halves(rng, 2)
            pairs.append(((n << 16) | a, (n << 16) | b))
        plan = MeasurementPlan(random_phase1_ips(rng, J, p1), pairs)
        if validate_ip_set(plan).ok:
            return plan
    raise RuntimeError("could not draw a valid plan")


def choose_parameters(L: int, T: float, alpha: float):
    """Pick (J, G, Q) for L available addresses and a CPU budget of T seconds.

    J is the largest value with ``alpha * J! <= T``, capped at L-4. The rest
    of the addresses form G = (L-J)//2 pairs, and Q balances the two K_18
    false-positive terms ``2^-(J-1+Q)`` and ``2^-(G-Q)``.
    """
    if alpha <= 0 or T <= 0:
        raise ValueError("alpha and T must be positive")
    if L < 8:
        raise ValueError(f"L={L} too small: need J >= 4 and G >= 2")
    j = 1
    while alpha * math.factorial(j + 1) <= T:
        j += 1
    J = min(j, L - 4)
    if J < 4:
        raise ValueError(f"CPU budget T={T} with alpha={alpha} allows only J={J} < 4")
    G = (L - J) // 2
    Q = max(0, min(G - 1, (G - (J - 1)) // 2))
    return J, G, Q
