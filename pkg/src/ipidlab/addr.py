"""IPv4 address helpers. Addresses are handled internally as 32-bit ints."""

from __future__ import annotations

import ipaddress
import numbers

from .bitcore import BitVec


def ip_int(addr) -> int:
    """Accept an integer (numpy included), dotted string or ``IPv4Address``; IPv6 is rejected."""
    if isinstance(addr, numbers.Integral):
        addr = int(addr)
        if not 0 <= addr < 1 << 32:
            raise ValueError(f"not a 32-bit address: {addr}")
        return addr
    if isinstance(addr, ipaddress.IPv6Address):
        raise ValueError("IPv6 is not supported")
    try:
        return int(ipaddress.IPv4Address(addr))
    except ipaddress.AddressValueError as exc:
        raise ValueError(f"not an IPv4 address: {addr!r}") from exc


def ip_str(addr) -> str:
    return str(ipaddress.IPv4Address(ip_int(addr)))


def ip_bits(addr) -> BitVec:
    """Address as a 32-bit vector in network byte order."""
    return BitVec(ip_int(addr), 32)


def class_b(addr) -> int:
    """The /16 prefix (bits 0..15)."""
    return ip_int(addr) >> 16
