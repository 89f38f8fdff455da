import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import chisquare

from ipidlab.linuxstack import (ALIGN_2MB, ARM64_BASE, X64_BASE, Arch, LinuxDevice, Variant,
                                g_net_for_slot, hash_words_np, jenkins_lookup3, jenkins_lookup3_a1,
                                kaslr_slot, keyspace_log2, linux_bucket_index, linux_generate_ipid,
                                linux_new_device, sample_kaslr_layout)

from oracles import hashlittle, lookup2_seeded_final, words_le

u32 = st.integers(0, 2 ** 32 - 1)


@given(u32, u32, u32, u32)
def test_lookup3_matches_byte_oracle(a, b, c, key):
    assert jenkins_lookup3((a, b, c), key) == hashlittle(words_le((a, b, c)), key)


@given(u32, u32, u32, u32)
def test_a1_hash_matches_seeded_oracle(a, b, c, key):
    assert jenkins_lookup3_a1((a, b, c), key) == lookup2_seeded_final((a, b, c), key)


@settings(max_examples=30)
@given(st.sampled_from([Variant.A1, Variant.A2]), st.integers(0, 2 ** 31))
def test_vector_hash_matches_scalar(variant, seed):
    rng = np.random.default_rng(seed)
    d, s, w, k = (rng.integers(0, 2 ** 32, size=64, dtype=np.uint64) for _ in range(4))
    h = jenkins_lookup3_a1 if variant is Variant.A1 else jenkins_lookup3
    got = hash_words_np(variant, d, s, w, k)
    assert got.tolist() == [h((int(x), int(y), int(z)), int(q)) for x, y, z, q in zip(d, s, w, k)]


def test_old_and_new_hashes_differ():
    rng = np.random.default_rng(1)
    d = rng.integers(0, 2 ** 32, size=1000, dtype=np.uint64)
    a1 = hash_words_np(Variant.A1, d, 7, 17, 12345)
    a2 = hash_words_np(Variant.A2, d, 7, 17, 12345)
    assert (a1 != a2).mean() > 0.99


@pytest.mark.parametrize("variant", [Variant.A1, Variant.A2])
def test_single_bit_flip_avalanche(variant):
    rng = np.random.default_rng(2)
    n = 100_000
    words = rng.integers(0, 2 ** 32, size=(4, n), dtype=np.uint64)
    which = rng.integers(0, 4, size=n)
    bit = rng.integers(0, 32, size=n).astype(np.uint64)
    flipped = words.copy()
    flipped[which, np.arange(n)] ^= np.uint64(1) << bit
    h0 = hash_words_np(variant, *words)
    h1 = hash_words_np(variant, *flipped)
    diff = h0 ^ h1
    per_bit = np.array([((diff >> np.uint32(i)) & np.uint32(1)).mean() for i in range(32)])
    assert np.all(np.abs(per_bit - 0.5) <= 0.02)


def test_bucket_distribution_is_uniform():
    rng = np.random.default_rng(3)
    d = rng.integers(0, 2 ** 32, size=1_000_000, dtype=np.uint64)
    b = hash_words_np(Variant.A2, d, 0xC0A80114, 17, 0x1234ABCD) & np.uint32(2047)
    assert chisquare(np.bincount(b, minlength=2048)).pvalue > 1e-3


def test_bucket_index_agrees_with_vector_hash():
    dev = linux_new_device(4, Variant.A3, arch="x64")
    w3 = 17 ^ dev.keys.g_net
    for d in (1, 0x08080808, 0xC0000201):
        want = int(hash_words_np(Variant.A3, d, dev.src_ip, w3, dev.keys.key)) & 2047
        assert dev.bucket_index(d) == want


def test_same_tick_steps_by_one():
    dev = linux_new_device(5)
    a = dev.generate_ipid("1.2.3.4", t_now=100)
    b = dev.generate_ipid("1.2.3.4", t_now=100)
    assert (b - a) & 0xFFFF == 1


@settings(max_examples=200)
@given(st.integers(0, 10_000), st.integers(0, 10_000))
def test_hop_bounded_by_elapsed_ticks(t1, gap):
    dev = linux_new_device(6)
    a = dev.generate_ipid("1.2.3.4", t_now=t1)
    b = dev.generate_ipid("1.2.3.4", t_now=t1 + gap)
    assert 1 <= (b - a) & 0xFFFF <= max(1, gap)


def test_mean_hop():
    dev = linux_new_device(7)
    hops = []
    t = 0
    prev = dev.generate_ipid("9.9.9.9", t_now=t)
    for _ in range(20_000):
        t += 300
        cur = dev.generate_ipid("9.9.9.9", t_now=t)
        hops.append((cur - prev) & 0xFFFF)
        prev = cur
    # hop = 1 + floor(u * 300): mean 150.5, sd about 86.6
    assert abs(np.mean(hops) - 150.5) < 4 * 86.6 / np.sqrt(len(hops))


def test_clock_regression_rejected():
    dev = linux_new_device(8)
    dev.generate_ipid("1.1.1.1", t_now=50)
    with pytest.raises(ValueError):
        dev.generate_ipid("1.1.1.1", t_now=49)


def test_a0_is_constant_zero():
    dev = linux_new_device(9, Variant.A0)
    assert {linux_generate_ipid(dev, d, t_now=t) for t, d in enumerate(["1.1.1.1", "2.2.2.2"])} == {0}


def test_table_size_power_of_two():
    with pytest.raises(ValueError):
        linux_new_device(0, M=1000)


def test_a3_needs_architecture():
    with pytest.raises(ValueError):
        linux_new_device(0, Variant.A3)


def test_kaslr_slot_examples():
    assert kaslr_slot("x64", X64_BASE) == 0
    assert kaslr_slot("x64", X64_BASE + 511 * ALIGN_2MB) == 511
    assert kaslr_slot("arm64", ARM64_BASE + 65535 * ALIGN_2MB) == 65535
    for bad in (X64_BASE + 512 * ALIGN_2MB, X64_BASE + 4096, X64_BASE - ALIGN_2MB):
        with pytest.raises(ValueError):
            kaslr_slot("x64", bad)


def test_sampled_layouts_are_legal():
    for s in range(200):
        for arch in Arch:
            lay = sample_kaslr_layout(arch, s)
            assert 0 <= lay.slot < (512 if arch is Arch.X64 else 65536)


def test_kaslr_off_pins_g_net():
    gs = {linux_new_device(s, Variant.A3, arch="x64", kaslr=False).keys.g_net for s in range(20)}
    assert len(gs) == 1
    on = {linux_new_device(s, Variant.A3, arch="x64").keys.g_net for s in range(20)}
    assert len(on) > 1


def test_g_net_for_slot_matches_device():
    for arch in Arch:
        dev = linux_new_device(10, Variant.A3, arch=arch)
        lay = dev.layout
        assert g_net_for_slot(arch, lay.slot, dev.keys.rho, lay.init_net_offset) == dev.keys.g_net


def test_keyspace_sizes():
    assert keyspace_log2(Variant.A1) == keyspace_log2(Variant.A2) == 32
    assert keyspace_log2(Variant.A3, Arch.X64) == 41
    assert keyspace_log2(Variant.A3, Arch.ARM64) == 48
    assert keyspace_log2(Variant.A3, Arch.ARM64, kaslr=False) == 32


@pytest.mark.parametrize("kw", [dict(variant=Variant.A1), dict(variant=Variant.A2),
                                dict(variant=Variant.A3, arch="x64"),
                                dict(variant=Variant.A3, arch="arm64", rho=5)])
def test_descriptor_round_trip(kw):
    a = linux_new_device(11, **kw)
    b = LinuxDevice.from_json(a.to_json())
    assert b.keys == a.keys and b.W_log2() == a.W_log2()
    for t, d in enumerate(["1.2.3.4", "5.6.7.8", "1.2.3.4"]):
        assert a.generate_ipid(d, t_now=t * 10) == b.generate_ipid(d, t_now=t * 10)


def test_other_descriptor_rejected():
    with pytest.raises(ValueError):
        LinuxDevice.from_json('{"os": "windows"}')


def test_protocol_changes_bucket_assignment():
    dev = linux_new_device(12)
    d = np.arange(1000) + 0x0A000000
    udp = [linux_bucket_index(int(x), dev.src_ip, 17, dev.keys, dev.variant) for x in d]
    tcp = [linux_bucket_index(int(x), dev.src_ip, 6, dev.keys, dev.variant) for x in d]
    assert np.mean(np.array(udp) == np.array(tcp)) < 0.01
