"""Compiled inner loops: key-range scanning and whole-session Monte Carlo."""

import numpy as np
from numba import njit, uint32

GOLDEN = 0xDEADBEEF
LANES = 512


M32 = 0xFFFFFFFF


@njit(inline="always")
def _rol(x, r):
    # numba widens uint32 arithmetic to 64 bits; drop the carries before shifting down
    x &= M32
    return (x << r) | (x >> (32 - r))


@njit(inline="always")
def _tail(a, b, c):
    # all final-mix steps after the first, which depends on the key alone
    a ^= c; a -= _rol(c, 11)
    b ^= a; b -= _rol(a, 25)
    c ^= b; c -= _rol(b, 16)
    a ^= c; a -= _rol(c, 4)
    b ^= a; b -= _rol(a, 14)
    c ^= b; c -= _rol(b, 24)
    return c & M32


@njit(inline="always")
def hash3(a1, w0, w1, w2, key):
    if a1:
        a = w0 + uint32(GOLDEN)
        b = w1 + uint32(GOLDEN)
        c = w2 + key
    else:
        iv = uint32(GOLDEN + 12) + key
        a = iv + w0
        b = iv + w1
        c = iv + w2
    c ^= b; c -= _rol(b, 14)
    return _tail(a, b, c)


@njit(nogil=True, cache=True)
def scan_counts(k_lo, n, addrs, pi, pj, src, word3, a1, mask, counts):
    """counts[t] = number of pairs (addrs[pi], addrs[pj]) sharing a bucket under key k_lo + t."""
    na = addrs.shape[0]
    npairs = pi.shape[0]
    buck = np.empty((na, LANES), dtype=np.uint32)
    cmix = np.empty(LANES, dtype=np.uint32)
    abase = np.empty(LANES, dtype=np.uint32)
    bmix = np.empty(LANES, dtype=np.uint32)
    cnt = np.empty(LANES, dtype=np.uint16)
    s = uint32(src)
    w2 = uint32(word3)
    m = uint32(mask)
    for blk in range(0, n, LANES):
        width = min(LANES, n - blk)
        for l in range(LANES):
            key = uint32(k_lo + blk + l)
            if a1:
                a0 = uint32(GOLDEN)
                b = s + uint32(GOLDEN)
                c = w2 + key
            else:
                a0 = uint32(GOLDEN + 12) + key
                b = a0 + s
                c = a0 + w2
            c ^= b; c -= _rol(b, 14)
            abase[l] = a0
            bmix[l] = b
            cmix[l] = c
        for t in range(na):
            d = uint32(addrs[t])
            for l in range(LANES):
                buck[t, l] = _tail(abase[l] + d, bmix[l], cmix[l]) & m
        for l in range(LANES):
            cnt[l] = 0
        for p in range(npairs):
            x = pi[p]
            y = pj[p]
            for l in range(LANES):
                cnt[l] += buck[x, l] == buck[y, l]
        for l in range(width):
            counts[blk + l] = cnt[l]


@njit(cache=True)
def _seed(s):
    np.random.seed(s)


@njit(cache=True)
def _burst_pairs(idx, ipid, n, L, lam):
    """Pair codes i*L+j (i<j by address rank) with 0 < ipid_j - ipid_i mod 2^16 < lam, sorted."""
    order = np.argsort(ipid[:n])
    v = ipid[:n][order]
    ix = idx[:n][order]
    out = np.empty(64, dtype=np.int64)
    cnt = 0
    for p in range(n):
        for q in range(p + 1, p + n):
            qq = q % n
            d = v[qq] - v[p]
            if q >= n:
                d += 65536
            if d >= lam:
                break
            if d > 0 and ix[qq] > ix[p]:
                if cnt == out.shape[0]:
                    grown = np.empty(cnt * 2, dtype=np.int64)
                    grown[:cnt] = out
                    out = grown
                out[cnt] = ix[p] * L + ix[qq]
                cnt += 1
    res = np.sort(out[:cnt])
    return res


@njit(cache=True)
def simulate_sessions(runs, L, f, delta, loss, offsets, use_a, use_b, M, seed, addrs, src):
    """Monte Carlo of full sessions.

    Returns per-session (|U|, true pairs in U). Each session has a fresh key
    and counter table. Every burst up to ``use_b`` is played, in global send
    order, so the per-bucket timestamps are realistic for the analyzed bursts.
    """
    _seed(seed)
    P = np.zeros(runs, dtype=np.int64)
    T = np.zeros(runs, dtype=np.int64)
    lam = f * delta + 10.0
    nb = use_b + 1
    ev_t = np.empty(nb * L, dtype=np.float64)
    for b in range(nb):
        for k in range(L):
            ev_t[b * L + k] = offsets[b] + delta * k / L
    order = np.argsort(ev_t, kind="mergesort")
    bk = np.empty(L, dtype=np.int64)
    beta = np.empty(M, dtype=np.int64)
    tau = np.empty(M, dtype=np.int64)
    ia = np.empty(L, dtype=np.int64)
    pa = np.empty(L, dtype=np.int64)
    ib = np.empty(L, dtype=np.int64)
    pb = np.empty(L, dtype=np.int64)
    for r in range(runs):
        key = uint32(np.random.randint(0, 2 ** 32))
        for k in range(L):
            bk[k] = hash3(False, uint32(addrs[k]), uint32(src), uint32(17), key) & (M - 1)
        for i in range(M):
            beta[i] = np.random.randint(0, 65536)
            tau[i] = 0
        t0 = 60.0 + np.random.random() * 3600.0
        na = 0
        nbv = 0
        for e in range(nb * L):
            ev = order[e]
            b = ev // L
            k = ev % L
            now = np.int64(np.floor(f * (t0 + ev_t[ev])))
            i = bk[k]
            el = now - tau[i]
            hop = 1
            if el > 0:
                hop += np.int64(np.random.random() * el)
            beta[i] = (beta[i] + hop) & 0xFFFF
            tau[i] = now
            if np.random.random() >= loss:
                if b == use_a:
                    ia[na] = k
                    pa[na] = beta[i]
                    na += 1
                elif b == use_b:
                    ib[nbv] = k
                    pb[nbv] = beta[i]
                    nbv += 1
        ca = _burst_pairs(ia, pa, na, L, lam)
        cb = _burst_pairs(ib, pb, nbv, L, lam)
        # merge-intersect the two sorted code lists
        x = 0
        y = 0
        p = 0
        tp = 0
        while x < ca.shape[0] and y < cb.shape[0]:
            if ca[x] == cb[y]:
                p += 1
                if bk[ca[x] // L] == bk[ca[x] % L]:
                    tp += 1
                x += 1
                y += 1
            elif ca[x] < cb[y]:
                x += 1
            else:
                y += 1
        P[r] = p
        T[r] = tp
    return P, T
