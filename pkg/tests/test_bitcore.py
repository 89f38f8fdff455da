import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ipidlab.addr import ip_bits
from ipidlab.bitcore import (BitMatrix, BitVec, ToeplitzKey, gaussian_pseudo_inverse, num,
                             toeplitz_hash, vectorize)
from ipidlab.winattack import build_coefficient_matrix, random_phase1_ips

from oracles import gf2_matmul, int_to_bits, toeplitz_by_definition

keys = st.integers(0, 2 ** 320 - 1).map(ToeplitzKey.from_int)


def bitvecs(max_len=289, min_len=0):
    return st.integers(min_len, max_len).flatmap(
        lambda n: st.integers(0, 2 ** n - 1).map(lambda v: BitVec(v, n)))


class TestBitVec:
    def test_msb_first_indexing(self):
        v = BitVec.from_bits([1, 0, 0, 1, 1])
        assert [v[i] for i in range(5)] == [1, 0, 0, 1, 1]
        assert v.value == 0b10011
        assert v[-1] == 1

    def test_slices_and_inclusive_bits(self):
        v = BitVec(0xABCD, 16)
        assert v[0:4] == BitVec(0xA, 4)
        assert v.bits(4, 11) == BitVec(0xBC, 8)
        assert v[16:16].length == 0

    def test_hex_round_trip_and_format(self):
        v = BitVec(0x1F, 6)
        assert v.to_hex() == "6:1f"
        assert BitVec.from_hex("6:1f") == v
        assert BitVec.from_hex("0:") == BitVec(0, 0)

    @pytest.mark.parametrize("bad", ["6:1f0", "x:1f", "8", "8:zz"])
    def test_hex_rejects_malformed(self, bad):
        with pytest.raises(ValueError):
            BitVec.from_hex(bad)

    def test_value_must_fit(self):
        with pytest.raises(ValueError):
            BitVec(4, 2)

    def test_concat_and_xor(self):
        a, b = BitVec(0b10, 2), BitVec(0b011, 3)
        assert a.concat(b) == BitVec(0b10011, 5)
        assert (b ^ BitVec(0b110, 3)) == BitVec(0b101, 3)
        with pytest.raises(ValueError):
            a ^ b

    @given(bitvecs(100))
    def test_hex_round_trip_property(self, v):
        assert BitVec.from_hex(v.to_hex()) == v


class TestToeplitz:
    def test_zero_key_annihilates(self):
        assert toeplitz_hash(ToeplitzKey.from_int(0), BitVec(2 ** 96 - 1, 96)) == 0

    @given(keys, st.integers(0, 288))
    def test_single_bit_selects_key_window(self, key, m):
        data = BitVec(1 << (288 - m), 289)
        assert toeplitz_hash(key, data) == key.key.bits(m, m + 31).value

    def test_rejects_long_input(self):
        with pytest.raises(ValueError):
            toeplitz_hash(ToeplitzKey.from_int(1), BitVec(0, 290))

    def test_key_length_enforced(self):
        with pytest.raises(ValueError):
            ToeplitzKey(BitVec(0, 319))

    @settings(max_examples=200)
    @given(keys, bitvecs(120))
    def test_matches_definition(self, key, data):
        assert toeplitz_hash(key, data) == toeplitz_by_definition(int_to_bits(key.key.value, 320), list(data))

    def test_trailing_zero_identity_1000_instances(self):
        rng = random.Random(2)
        for _ in range(1000):
            key = ToeplitzKey.from_int(rng.getrandbits(320))
            n = rng.randint(0, 239)
            pad = rng.randint(0, 50)
            data = BitVec(rng.getrandbits(n) if n else 0, n)
            assert toeplitz_hash(key, data.concat(BitVec.zeros(pad))) == toeplitz_hash(key, data)

    def test_split_decomposition_1000_instances(self):
        rng = random.Random(3)
        for _ in range(1000):
            key = ToeplitzKey.from_int(rng.getrandbits(320))
            n1 = rng.randint(0, 144)
            n2 = rng.randint(0, 289 - n1)
            a = BitVec(rng.getrandbits(n1) if n1 else 0, n1)
            b = BitVec(rng.getrandbits(n2) if n2 else 0, n2)
            assert toeplitz_hash(key, a.concat(b)) == (
                toeplitz_hash(key, a) ^ toeplitz_hash(key, BitVec.zeros(n1).concat(b)))


class TestNumVectorize:
    def test_examples(self):
        assert num(BitVec(1, 32)) == 1
        assert num(ip_bits("127.0.0.1")) == 0x7F000001
        assert vectorize(0, 32) == BitVec.zeros(32)
        assert list(vectorize(1, 32)) == [0] * 31 + [1]
        assert list(vectorize(2 ** 14, 15)) == [1] + [0] * 14

    def test_rejects(self):
        with pytest.raises(ValueError):
            num(BitVec(0, 31))
        with pytest.raises(ValueError):
            vectorize(2 ** 15, 15)
        with pytest.raises(ValueError):
            vectorize(-1, 8)

    @given(st.integers(0, 2 ** 32 - 1))
    def test_num_inverts_vectorize(self, x):
        assert num(vectorize(x)) == x

    @given(st.integers(0, 2 ** 32 - 1).map(lambda v: BitVec(v, 32)))
    def test_vectorize_inverts_num(self, v):
        assert vectorize(num(v)) == v


class TestBitMatrix:
    def test_lists_round_trip_and_indexing(self):
        rows = [[1, 0, 1], [0, 1, 1]]
        m = BitMatrix.from_lists(rows)
        assert m.to_lists() == rows
        assert m[0, 2] == 1 and m[1, 0] == 0
        assert m.column(2) == 0b11

    @settings(max_examples=50)
    @given(st.integers(1, 12), st.integers(1, 12), st.integers(1, 12), st.integers(0, 2 ** 32))
    def test_matmul_matches_list_product(self, n, m, p, seed):
        rnd = random.Random(seed)
        A = [[rnd.randint(0, 1) for _ in range(m)] for _ in range(n)]
        B = [[rnd.randint(0, 1) for _ in range(p)] for _ in range(m)]
        assert (BitMatrix.from_lists(A) @ BitMatrix.from_lists(B)).to_lists() == gf2_matmul(A, B)

    def test_matrix_vector(self):
        m = BitMatrix.from_lists([[1, 1, 0], [0, 1, 1]])
        assert m @ BitVec(0b110, 3) == BitVec(0b01, 2)


def _identity_stack(rows):
    return [[int(r == c) for c in range(30)] for r in range(rows)]


class TestPseudoInverse:
    def test_padded_identity(self):
        C = BitMatrix(45, 30, BitMatrix.identity(30).row_ints() + (0,) * 15)
        Z, rank, kr = gaussian_pseudo_inverse(C)
        assert (rank, kr) == (30, 0)
        assert Z == BitMatrix.identity(45)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2 ** 32))
    def test_random_full_rank(self, seed):
        rnd = random.Random(seed)
        rows = [[rnd.randint(0, 1) for _ in range(30)] for _ in range(75)]
        Z, rank, kr = gaussian_pseudo_inverse(BitMatrix.from_lists(rows))
        if rank == 30:
            assert gf2_matmul(Z.to_lists(), rows) == _identity_stack(75)
        assert kr == 30 - rank

    def test_valid_ip_sets_give_identity_stack(self):
        import numpy as np
        rng = np.random.default_rng(4)
        checked = 0
        while checked < 25:
            ips = random_phase1_ips(rng, 6)
            C = build_coefficient_matrix(ips)
            Z, rank, kr = gaussian_pseudo_inverse(C)
            if kr:
                continue
            assert gf2_matmul(Z.to_lists(), C.to_lists()) == _identity_stack(75)
            checked += 1

    def test_shared_bit16_leaves_kernel(self):
        ips = [0x0A0B0000 | x for x in (0x1234, 0x2345, 0x3456, 0x4567, 0x5671, 0x6702)]
        assert len({(ip >> 15) & 1 for ip in ips}) == 1
        _, rank, kr = gaussian_pseudo_inverse(build_coefficient_matrix(ips))
        assert kr >= 1 and rank + kr == 30
