import ipaddress

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import chisquare

from ipidlab.addr import ip_int
from ipidlab.winstack import (Flavor, WindowsDevice, reference_ipid, windows_bucket_index,
                              windows_generate_ipid, windows_new_device)

from oracles import int_to_bits, windows_ipid_straight_line

addresses = st.integers(0, 2 ** 32 - 1)


@pytest.fixture(scope="module")
def device():
    return windows_new_device(11)


def test_same_seed_same_device():
    a, b = windows_new_device(5), windows_new_device(5)
    assert a.keys == b.keys and a.counters == b.counters


def test_distinct_seeds_distinct_keys():
    assert windows_new_device(1).keys.K != windows_new_device(2).keys.K


def test_default_table_size():
    assert windows_new_device(0).M == 8192


@pytest.mark.parametrize("m", [0, 3, 8191])
def test_table_size_must_be_power_of_two(m):
    with pytest.raises(ValueError):
        windows_new_device(0, M=m)


def test_successive_ipids_to_one_destination_step_by_one():
    dev = windows_new_device(3)
    a = windows_generate_ipid(dev, "10.0.0.1")
    b = windows_generate_ipid(dev, "10.0.0.1")
    assert b == (a + 1) % 2 ** 15


@given(addresses, st.integers(0, 2 ** 16 - 1))
def test_bucket_ignores_second_half(device, dst, low):
    assert windows_bucket_index(device, dst) == windows_bucket_index(device, (dst & 0xFFFF0000) | low)
    assert 0 <= windows_bucket_index(device, dst) < device.M


def test_same_class_b_shares_bucket(device):
    assert device.bucket_index("172.16.3.4") == device.bucket_index("172.16.250.9")


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2 ** 32), addresses, addresses, st.sampled_from(list(Flavor)))
def test_matches_straight_line_transcription(seed, src, dst, flavor):
    dev = windows_new_device(seed, flavor, M=64, src_ip=src)
    k = dev.keys
    bucket, want = windows_ipid_straight_line(int_to_bits(k.K.key.value, 320), k.K1, k.K2,
                                              list(dev.counters), src, dst, flavor.ipid_bits)
    assert dev.bucket_index(dst) == bucket
    assert dev.generate_ipid(dst) == want


def test_reference_transcription_agrees(device):
    rng = np.random.default_rng(0)
    for dst in rng.integers(0, 2 ** 32, 50).tolist():
        counters = list(device.counters)
        assert reference_ipid(device.keys, counters, device.src_ip, dst) == (
            device.bucket_index(dst), device.generate_ipid(dst))


def test_rs5_masks_to_pre_rs5():
    a, b = windows_new_device(9, Flavor.PRE_RS5), windows_new_device(9, Flavor.RS5)
    for d in ("1.2.3.4", "1.2.3.4", "8.8.8.8", "200.1.1.1"):
        wide = b.generate_ipid(d)
        assert wide < 2 ** 16
        assert wide % 2 ** 15 == a.generate_ipid(d)


def test_consecutive_after_offset_within_one_class_b():
    dev = windows_new_device(4)
    dsts = [f"99.12.{i}.{i * 7 % 250}" for i in range(20)]
    counts = [(dev.generate_ipid(d) - dev.offset(d)) % 2 ** 15 for d in dsts]
    assert all((b - a) % 2 ** 15 == 1 for a, b in zip(counts, counts[1:]))


def test_total_increments_equal_packets():
    dev = windows_new_device(6)
    before = sum(dev.counters)
    rng = np.random.default_rng(1)
    for d in rng.integers(0, 2 ** 32, 300).tolist():
        dev.generate_ipid(d)
    assert sum(dev.counters) - before == 300 == dev.generated  # no counter wrapped at these values
    assert max(dev.counters) < 2 ** 32


def test_bucket_uniformity_chi_square(device):
    # the bucket depends only on the /16 prefix, so tabulate every prefix once
    by_prefix = np.array([device.bucket_index(p << 16) for p in range(1 << 16)])
    dsts = np.random.default_rng(7).integers(0, 2 ** 32, 10 ** 6, dtype=np.uint64)
    counts = np.bincount(by_prefix[(dsts >> 16).astype(np.int64)], minlength=device.M)
    assert chisquare(counts).pvalue > 0.001


def test_ipv6_rejected(device):
    with pytest.raises(ValueError):
        device.generate_ipid(ipaddress.IPv6Address("::1"))
    with pytest.raises(ValueError):
        ip_int("fe80::1")


def test_key_file_round_trip():
    dev = windows_new_device(21, Flavor.RS5, M=1024, src_ip="10.9.8.7")
    again = WindowsDevice.from_json(dev.to_json())
    assert again.keys == dev.keys and again.counters == dev.counters
    assert again.flavor is Flavor.RS5 and again.src_ip == dev.src_ip
    assert "counters" not in dev.to_json()


def test_interference_advances_one_bucket():
    dev = windows_new_device(8)
    b = dev.bucket_index("5.5.5.5")
    first = dev.generate_ipid("5.5.5.5")
    dev.interfere(b)
    assert dev.generate_ipid("5.5.5.5") == (first + 2) % 2 ** 15


def test_strong_hash_mode_runs():
    dev = windows_new_device(8, hash_mode="strong")
    assert 0 <= dev.generate_ipid("1.1.1.1") < 2 ** 15
    with pytest.raises(ValueError):
        windows_new_device(8, hash_mode="md5")
