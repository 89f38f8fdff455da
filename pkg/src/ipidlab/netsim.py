"""Tracker-side observations of simulated devices: burst timing, jitter, loss, interference.

Trace file: one JSON object per line, keys always in this order::

    {"dst": "10.1.2.3", "ipid": 1234, "t_send": 3.75, "t_arrive": 3.8121, "burst": "B4", "dropped": false}

``t_arrive`` is null for dropped records.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np

from .addr import ip_int, ip_str
from .linuxattack.collect import BURST_LABELS, CHROME_OFFSETS

TRACE_FIELDS = ("dst", "ipid", "t_send", "t_arrive", "burst", "dropped")
WINDOWS_SPACING = 0.001


@dataclass(frozen=True)
class NetworkModel:
    jitter_sigma: float = 0.1
    loss_rate: float = 0.01
    seed: int | None = 0
    rewrite_ipid: bool = False  # middlebox replacing every IPID with a random value

    def __post_init__(self):
        if not 0 <= self.loss_rate <= 1:
            raise ValueError("loss_rate must be in [0, 1]")
        if self.jitter_sigma < 0:
            raise ValueError("jitter_sigma must be non-negative")


@dataclass(frozen=True)
class BurstSchedule:
    offsets: tuple = CHROME_OFFSETS
    duration: float = 0.6
    start: float = 0.0

    def __post_init__(self):
        if any(b <= a for a, b in zip(self.offsets, self.offsets[1:])):
            raise ValueError("burst offsets must be strictly increasing")

    def first(self, n: int) -> "BurstSchedule":
        return replace(self, offsets=tuple(self.offsets[:n]))


@dataclass
class PacketRecord:
    dst: int
    ipid: int
    t_send: float
    t_arrive: float | None
    burst: str
    dropped: bool = False

    def to_json(self) -> str:
        return json.dumps({
            "dst": ip_str(self.dst),
            "ipid": self.ipid,
            "t_send": round(self.t_send, 9),
            "t_arrive": None if self.t_arrive is None else round(self.t_arrive, 9),
            "burst": self.burst,
            "dropped": self.dropped,
        })

    @classmethod
    def from_json(cls, line: str) -> "PacketRecord":
        d = json.loads(line)
        return cls(ip_int(d["dst"]), int(d["ipid"]), float(d["t_send"]),
                   None if d["t_arrive"] is None else float(d["t_arrive"]), d["burst"], bool(d["dropped"]))


@dataclass
class PacketTrace:
    records: list = field(default_factory=list)
    # simulator-side metadata, never serialized: bucket per record and IPID width
    buckets: list = field(default_factory=list)
    ipid_bits: int = 16

    def delivered(self) -> list:
        return [r for r in self.records if not r.dropped]

    def write(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            for r in self.records:
                fh.write(r.to_json() + "\n")

    @classmethod
    def read(cls, path) -> "PacketTrace":
        with open(path, encoding="utf-8") as fh:
            recs = [PacketRecord.from_json(line) for line in fh if line.strip()]
        return cls(recs)


class _Channel:
    """Loss, jitter and optional IPID rewriting applied per record."""

    def __init__(self, model: NetworkModel, ipid_bits: int):
        self.model = model
        self.rng = np.random.default_rng(model.seed)
        self.mask = (1 << ipid_bits) - 1

    def deliver(self, dst, ipid, t_send, label, force_drop=False) -> PacketRecord:
        lost = force_drop or self.rng.random() < self.model.loss_rate
        jitter = self.rng.normal(0.0, self.model.jitter_sigma) if self.model.jitter_sigma else 0.0
        if self.model.rewrite_ipid:
            ipid = int(self.rng.integers(0, self.mask + 1))
        return PacketRecord(dst, ipid, t_send, None if lost else t_send + jitter, label, lost)


def simulate_linux_session(device, dst_list, schedule: BurstSchedule = BurstSchedule(),
                           model: NetworkModel = NetworkModel(), protocol: int = 17,
                           boot_time: float = 600.0) -> PacketTrace:
    """One packet per destination per burst, in ascending address order, spread across the burst window.

    ``boot_time`` is the device uptime in seconds when the session starts;
    the tick clock reads ``floor(f * (boot_time + t_send))``.
    """
    dsts = [ip_int(d) for d in dst_list]
    if dsts != sorted(dsts):
        raise ValueError("dst_list must be sorted ascending")
    chan = _Channel(model, 16)
    trace = PacketTrace(ipid_bits=16)
    L = len(dsts)
    events = []
    for b, off in enumerate(schedule.offsets):
        label = BURST_LABELS[b] if b < len(BURST_LABELS) else f"B{b}"
        for k, d in enumerate(dsts):
            events.append((schedule.start + off + schedule.duration * k / L, b, d, label))
    # early bursts overlap when spread over the full window; play them in time order
    events.sort(key=lambda e: (e[0], e[1]))
    for t, _, d, label in events:
        tick = int(np.floor(device.f * (boot_time + t)))
        ipid = device.generate_ipid(d, protocol, tick)
        trace.records.append(chan.deliver(d, ipid, t, label))
        trace.buckets.append(device.bucket_index(d, protocol))
    return trace


@dataclass(frozen=True)
class WindowsSessionOptions:
    permutation: tuple | None = None  # permutation[j] = transmission slot of phase-1 packet j
    drops: tuple = ()  # phase-1 packets whose first transmission is lost and resent
    packets_per_dst: int = 1
    pair_reversed: tuple = ()  # pair indices sent in reverse order


def simulate_windows_session(device, plan, options: WindowsSessionOptions = WindowsSessionOptions(),
                             model: NetworkModel = NetworkModel(jitter_sigma=0.0, loss_rate=0.0),
                             start: float = 0.0, interference: tuple = ()) -> PacketTrace:
    """Phase-1 packets back to back, then each pair back to back.

    A dropped phase-1 packet is sent twice: the lost copy consumes a counter
    value and the resend carries the next one. ``interference`` is a list of
    ``(bucket, time)`` events applied to the device as the session runs.
    """
    J = plan.J
    perm = options.permutation or tuple(range(J))
    if sorted(perm) != list(range(J)):
        raise ValueError("permutation must be a rearrangement of 0..J-1")
    order = [perm.index(s) for s in range(J)]
    schedule = []
    for j in order:
        if j in options.drops:
            schedule.append((plan.phase1_ips[j], "P1", True))
        schedule.extend((plan.phase1_ips[j], "P1", False) for _ in range(options.packets_per_dst))
    for g, (a, b) in enumerate(plan.phase2_pairs):
        first, second = (b, a) if g in options.pair_reversed else (a, b)
        for d in (first, second):
            schedule.extend((d, f"G{g + 1}", False) for _ in range(options.packets_per_dst))
    bits = device.flavor.ipid_bits
    chan = _Channel(model, bits)
    trace = PacketTrace(ipid_bits=bits)
    events = sorted(interference, key=lambda e: e[1])
    for n, (dst, label, lost) in enumerate(schedule):
        t = start + n * WINDOWS_SPACING
        while events and events[0][1] <= t:
            device.interfere(events.pop(0)[0])
        ipid = device.generate_ipid(dst)
        trace.records.append(chan.deliver(dst, ipid, t, label, force_drop=lost))
        trace.buckets.append(device.bucket_index(dst))
    for bucket, _ in events:
        device.interfere(bucket)
    return trace


def inject_interference(trace: PacketTrace, bucket: int, when: float) -> PacketTrace:
    """Return a copy of the trace as if ``bucket`` had been advanced once at time ``when``.

    Every later record that used the bucket sees its IPID shifted by one.
    """
    if not trace.buckets:
        raise ValueError("trace carries no bucket metadata")
    if trace.records and not (trace.records[0].t_send <= when):
        raise ValueError("interference time lies before the session")
    mask = (1 << trace.ipid_bits) - 1
    out = []
    for rec, bk in zip(trace.records, trace.buckets):
        if bk == bucket and rec.t_send > when:
            rec = replace(rec, ipid=(rec.ipid + 1) & mask)
        out.append(rec)
    return PacketTrace(out, list(trace.buckets), trace.ipid_bits)


def windows_observations(trace: PacketTrace, plan, bits: int = 15):
    """Pull phase-1 IPIDs (plan order) and pair IPIDs out of a delivered trace.

    Uses the last delivered record per destination, so a resend replaces its
    lost original. Returns ``None`` if a destination is missing.
    """
    mask = (1 << bits) - 1
    seen = {}
    for r in trace.records:
        if not r.dropped:
            seen[r.dst] = r.ipid & mask
    try:
        p1 = [seen[d] for d in plan.phase1_ips]
        pairs = [(seen[a], seen[b]) for a, b in plan.phase2_pairs]
    except KeyError:
        return None
    return p1, pairs
