"""False-positive / false-negative estimates, parameter selection and the attack-time model."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..linuxstack import DEFAULT_M
from . import _kernels
from .collect import CHROME_OFFSETS

DELTA_400 = 0.6
BURST_GAP = 4.0


def log_binom_pmf(n: int, i: int, p: float) -> float:
    return (math.lgamma(n + 1) - math.lgamma(i + 1) - math.lgamma(n - i + 1)
            + i * math.log(p) + (n - i) * math.log1p(-p))


def binom_tail(n: int, nu: int, p: float) -> float:
    """P(Binomial(n, p) >= nu), summed in log space."""
    if nu <= 0:
        return 1.0
    if nu > n:
        return 0.0
    logs = [log_binom_pmf(n, i, p) for i in range(nu, n + 1)]
    top = max(logs)
    return math.exp(top) * math.fsum(math.exp(x - top) for x in logs)


def prob_fn(L: int, nu: int, M: int = DEFAULT_M, keep: float = 1.0) -> float:
    """Poisson probability of fewer than nu true pairs; the mean is C(L,2)/M times ``keep``."""
    lam = L * (L - 1) / 2 / M * keep
    if lam == 0:
        return 1.0 if nu >= 1 else 0.0
    return math.fsum(math.exp(i * math.log(lam) - lam - math.lgamma(i + 1)) for i in range(nu))


def prob_fp_given(n_pairs: int, nu: int, W_log2: int, M: int = DEFAULT_M) -> float:
    """Chance that some wrong key among 2^W - 1 matches at least nu of n_pairs random pairs."""
    tail = binom_tail(n_pairs, nu, 1 / M)
    if tail == 0.0:
        return 0.0
    if tail >= 1.0:
        return 1.0
    return -math.expm1((2.0 ** W_log2 - 1) * math.log1p(-tail))


def delta_for(L: int, delta_400: float = DELTA_400) -> float:
    return L / 400 * delta_400


def expected_pairs(L: int, f: float, M: int = DEFAULT_M, dt: float = BURST_GAP,
                   delta_400: float = DELTA_400) -> int:
    """Analytic |U|: false pairs surviving both bursts plus the true collisions."""
    d = delta_for(L, delta_400)
    lam = f * d + 10
    c2 = L * (L - 1) / 2
    return math.floor(lam / (f * dt) * c2 * lam / 2 ** 16 + c2 / M)


def prob_fp(L: int, nu: int, f: float, W_log2: int, M: int = DEFAULT_M, dt: float = BURST_GAP) -> float:
    return prob_fp_given(expected_pairs(L, f, M, dt), nu, W_log2, M)


@dataclass(frozen=True)
class ParameterChoice:
    L: int
    nu: int
    prob_fp: float
    prob_fn: float


def best_nu(L: int, f: float, W_log2: int, M: int = DEFAULT_M, dt: float = BURST_GAP,
            loss: float = 0.0, max_nu: int = 80) -> ParameterChoice:
    """The nu minimizing FP+FN at a given L. Loss thins the true pairs by (1-loss)^4."""
    keep = (1 - loss) ** 4
    A = expected_pairs(L, f, M, dt)
    best = None
    for nu in range(1, max_nu + 1):
        fp = prob_fp_given(A, nu, W_log2, M)
        fn = prob_fn(L, nu, M, keep)
        if best is None or fp + fn < best.prob_fp + best.prob_fn:
            best = ParameterChoice(L, nu, fp, fn)
    return best


def optimal_parameters(f: float, M: int = DEFAULT_M, W_log2: int = 48, dt: float = BURST_GAP,
                       loss: float = 0.0, target: float = 1e-6,
                       candidates=range(200, 501, 50)) -> ParameterChoice:
    """Smallest L (from the round candidates) whose best nu gives FP+FN <= target."""
    table = [best_nu(L, f, W_log2, M, dt, loss) for L in candidates]
    for row in table:
        if row.prob_fp + row.prob_fn <= target:
            return row
    return min(table, key=lambda r: r.prob_fp + r.prob_fn)


def parameter_table(f: float, M: int = DEFAULT_M, W_log2: int = 48, dt: float = BURST_GAP,
                    loss: float = 0.0, candidates=range(200, 501, 50)) -> list:
    return [best_nu(L, f, W_log2, M, dt, loss) for L in candidates]


@dataclass
class MonteCarloResult:
    pairs: np.ndarray  # |U| per session
    true_pairs: np.ndarray  # correct pairs within U per session
    prob_fp: float
    prob_fn: float

    @property
    def mean(self) -> float:
        return float(self.pairs.mean())

    @property
    def std(self) -> float:
        return float(self.pairs.std(ddof=1))

    def p_A(self) -> np.ndarray:
        return np.bincount(self.pairs) / len(self.pairs)

    def p_T(self) -> np.ndarray:
        return np.bincount(self.true_pairs) / len(self.true_pairs)


def session_addresses(L: int, seed: int = 0) -> np.ndarray:
    """L distinct unicast addresses, sorted ascending."""
    rng = np.random.default_rng(seed)
    out = set()
    while len(out) < L:
        out.update(rng.integers(1 << 24, 0xDF000000, size=L - len(out)).tolist())
    return np.array(sorted(out), dtype=np.int64)


def run_sessions(L: int, f: float, runs: int, loss: float = 0.01, delta: float | None = None,
                 bursts=("B4", "B5"), M: int = DEFAULT_M, seed: int = 0,
                 offsets=CHROME_OFFSETS, src: int = 0xC0A80114):
    """Per-session |U| and true-pair counts from the compiled session simulator."""
    delta = delta_for(L) if delta is None else delta
    a, b = (int(x[1:]) for x in bursts)
    addrs = session_addresses(L, seed)
    return _kernels.simulate_sessions(runs, L, float(f), float(delta), float(loss),
                                      np.asarray(offsets, dtype=np.float64), a, b, M, seed,
                                      addrs.astype(np.uint32), src)


def simulate_fp_fn(L: int, nu: int, f: float, loss: float = 0.01, runs: int = 10_000,
                   W_log2: int = 48, M: int = DEFAULT_M, seed: int = 0) -> MonteCarloResult:
    """Empirical |U| and true-pair distributions with plug-in FP/FN estimates.

    FN is the empirical mass of sessions with fewer than nu true pairs (0 when
    none were seen in ``runs``). FP averages the per-|U| binomial FP over p_A.
    """
    if runs < 10_000:
        raise ValueError("runs must be at least 10^4")
    P, T = run_sessions(L, f, runs, loss, M=M, seed=seed)
    p_T = np.bincount(T) / runs
    fn = float(p_T[:nu].sum())
    p_A = np.bincount(P) / runs
    fp = math.fsum(float(p) * prob_fp_given(n, nu, W_log2, M) for n, p in enumerate(p_A) if p > 0)
    return MonteCarloResult(P, T, fp, fn)


def estimate_attack_time(r: float, W_log2: float, E_P: float) -> float:
    """Seconds for a full scan: r per key-pair test, 2^W keys, E_P pairs per key."""
    if r <= 0:
        raise ValueError("r must be positive")
    return r * 2.0 ** W_log2 * E_P
