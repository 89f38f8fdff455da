"""Command-line front end: ``ipidlab gen-device | measure | attack | estimate | bench``.

Exit codes: 0 success, 1 usage error, 2 retest (the measurement cannot
support a decision), 3 ambiguous (several candidate keys).

``--config FILE`` reads ``key = value`` lines (``#`` starts a comment); keys
are option names with dashes or underscores, and command-line flags win::

    os = linux
    variant = a2
    seed = 7

Reports go to stdout as one JSON object per line (``--format json``, the
default) or as an aligned table (``--format table``).
"""

from __future__ import annotations

import hashlib
import json
import math
import sys
import time
from pathlib import Path

import click
import numpy as np

from .bitcore import BitVec
from .linuxattack import (InsufficientCollisions, KeySearchConfig, RetestSignal, cached_search,
                          collect_candidates, device_id_from_key, estimate_attack_time,
                          exhaustive_search, intersect_bursts, load_cache, optimal_parameters,
                          parameter_table, select_bursts, split_bursts)
from .linuxattack import _kernels
from .linuxattack.analysis import delta_for, session_addresses
from .linuxstack import Arch, LinuxDevice, Variant, keyspace_log2, linux_new_device
from .netsim import (BurstSchedule, NetworkModel, PacketTrace, WindowsSessionOptions,
                     simulate_linux_session, simulate_windows_session, windows_observations)
from .winattack import (MeasurementPlan, append_records, choose_parameters, derive_device_id,
                        extract_windows, extraction_record, phase1_extract, prepare_plan,
                        random_plan)
from .winstack import Flavor, WindowsDevice, windows_new_device

EXIT_OK, EXIT_USAGE, EXIT_RETEST, EXIT_AMBIGUOUS = 0, 1, 2, 3
WINDOWS_TAIL = 45


def key_digest(text: str) -> str:
    return hashlib.sha256(text.encode()).hexdigest()[:16]


def windows_key_text(tail: int, width: int = WINDOWS_TAIL) -> str:
    return "windows:" + BitVec(tail, width).to_hex()


def linux_key_text(key: int, g_net: int | None) -> str:
    text = "linux:" + BitVec(key, 32).to_hex()
    return text if g_net is None else text + ":" + BitVec(g_net, 32).to_hex()


def sub_seeds(seed: int, n: int) -> list:
    """Independent integer seeds for n subsystems, all derived from one session seed."""
    return [int(x) for x in np.random.SeedSequence(seed).generate_state(n, dtype=np.uint32)]


def parse_range(text: str | None):
    if not text:
        return None
    try:
        lo, hi = (int(x, 0) for x in text.split(":"))
    except ValueError:
        raise click.BadParameter(f"expected LO:HI, got {text!r}")
    if hi <= lo:
        raise click.BadParameter("empty range")
    return lo, hi


def read_config(path) -> dict:
    out = {}
    for n, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise click.UsageError(f"{path}:{n}: expected key = value")
        k, v = (s.strip() for s in line.split("=", 1))
        out[k.replace("-", "_")] = v
    return out


def emit(rows, fmt: str):
    rows = rows if isinstance(rows, list) else [rows]
    if fmt == "json":
        for r in rows:
            click.echo(json.dumps(r))
        return
    keys = list(dict.fromkeys(k for r in rows for k in r))
    cells = [[str(r.get(k, "")) for k in keys] for r in rows]
    widths = [max(len(k), *(len(c[i]) for c in cells)) for i, k in enumerate(keys)]
    click.echo("  ".join(k.ljust(w) for k, w in zip(keys, widths)))
    for c in cells:
        click.echo("  ".join(x.ljust(w) for x, w in zip(c, widths)))


def load_device(path):
    text = Path(path).read_text()
    kind = json.loads(text).get("os")
    if kind == "windows":
        return WindowsDevice.from_json(text)
    if kind == "linux":
        return LinuxDevice.from_json(text)
    raise click.UsageError(f"{path}: unknown device descriptor")


format_option = click.option("--format", "fmt", type=click.Choice(["json", "table"]), default="json",
                             show_default=True)


@click.group(context_settings={"help_option_names": ["-h", "--help"]})
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False),
              help="key = value file supplying option defaults")
@click.pass_context
def cli(ctx, config_path):
    """Simulate IPID generators, measure them, and recover their keys."""
    if config_path:
        flat = read_config(config_path)
        ctx.default_map = {name: _defaults_for(cmd, flat) for name, cmd in cli.commands.items()}


def _defaults_for(cmd, flat: dict) -> dict:
    """Config entries keyed by option spelling, re-keyed by the parameter each one feeds."""
    out = {}
    for param in cmd.params:
        for opt in getattr(param, "opts", []):
            key = opt.lstrip("-").replace("-", "_")
            if key in flat:
                out[param.name] = flat[key]
    return out


@cli.command("gen-device")
@click.option("--os", "os_name", type=click.Choice(["windows", "linux"]), required=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", type=click.Path(dir_okay=False), default="device.json", show_default=True)
@click.option("--flavor", type=click.Choice([f.value for f in Flavor]), default="pre-rs5", show_default=True)
@click.option("--variant", type=click.Choice([v.value for v in Variant]), default="a2", show_default=True)
@click.option("--arch", type=click.Choice([a.value for a in Arch]), default=None)
@click.option("--f", "freq", type=int, default=300, show_default=True, help="Linux tick rate (Hz)")
@click.option("--rho", type=int, default=None)
@click.option("--kaslr/--no-kaslr", default=True)
@click.option("--M", "buckets", type=int, default=None, help="counter table size")
@click.option("--src-ip", default=None)
@click.option("--plant-range", default=None, help="LO:HI confining the planted Linux key")
@format_option
def gen_device(os_name, seed, out, flavor, variant, arch, freq, rho, kaslr, buckets, src_ip,
               plant_range, fmt):
    """Create a device and write its descriptor."""
    extra = {} if buckets is None else {"M": buckets}
    if src_ip:
        extra["src_ip"] = src_ip
    if os_name == "windows":
        dev = windows_new_device(seed, flavor, **extra)
        digest = key_digest(windows_key_text(dev.keys.key_bits(18, 62)))
        W = None
    else:
        if variant == "a3" and arch is None:
            raise click.UsageError("--variant a3 requires --arch")
        dev = linux_new_device(seed, variant, freq, arch, rho, kaslr,
                               key_range=parse_range(plant_range), **extra)
        g = dev.keys.g_net if dev.variant is Variant.A3 else None
        digest = key_digest(linux_key_text(dev.keys.key, g))
        W = dev.W_log2()
    Path(out).write_text(dev.to_json() + "\n")
    emit({"descriptor": out, "os": os_name, "planted_digest": digest, "W_log2": W}, fmt)
    return EXIT_OK


@cli.command()
@click.option("--device", "device_path", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--out", type=click.Path(dir_okay=False), default="trace.jsonl", show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--plan", "plan_path", type=click.Path(exists=True, dir_okay=False), default=None,
              help="Windows plan to use (a random valid plan is drawn otherwise)")
@click.option("--plan-out", type=click.Path(dir_okay=False), default=None,
              help="where to write the drawn plan (default: <out>.plan.json)")
@click.option("--J", "J", type=int, default=6, show_default=True)
@click.option("--G", "G", type=int, default=12, show_default=True)
@click.option("--Q", "Q", type=int, default=3, show_default=True)
@click.option("--reverse", is_flag=True, help="send phase-1 packets in reverse order")
@click.option("--drop", type=int, multiple=True, help="phase-1 packet index lost once and resent")
@click.option("--L", "L", type=int, default=400, show_default=True)
@click.option("--bursts", type=int, default=6, show_default=True)
@click.option("--loss", type=float, default=None, help="loss rate (Linux default 0.01, Windows 0)")
@click.option("--jitter", type=float, default=None, help="jitter sigma in s (Linux default 0.1, Windows 0)")
@click.option("--rewrite-ipid", is_flag=True, help="corrupt every IPID as a rewriting middlebox would")
@format_option
def measure(device_path, out, seed, plan_path, plan_out, J, G, Q, reverse, drop, L, bursts, loss,
            jitter, rewrite_ipid, fmt):
    """Run a simulated measurement session and write the trace."""
    dev = load_device(device_path)
    plan_seed, net_seed, addr_seed = sub_seeds(seed, 3)
    info = {"trace": out}
    if isinstance(dev, WindowsDevice):
        if plan_path:
            try:
                plan = MeasurementPlan.from_json(Path(plan_path).read_text())
            except (ValueError, KeyError, TypeError) as e:
                raise click.UsageError(f"malformed plan: {e}")
        else:
            plan = random_plan(np.random.default_rng(plan_seed), J, G, Q)
            plan_path = plan_out or out + ".plan.json"
            Path(plan_path).write_text(plan.to_json() + "\n")
        model = NetworkModel(jitter or 0.0, loss or 0.0, net_seed, rewrite_ipid)
        opts = WindowsSessionOptions(tuple(reversed(range(plan.J))) if reverse else None, tuple(drop))
        trace = simulate_windows_session(dev, plan, opts, model)
        info.update(plan=plan_path, plan_digest=plan.digest())
    else:
        model = NetworkModel(0.1 if jitter is None else jitter, 0.01 if loss is None else loss,
                             net_seed, rewrite_ipid)
        dsts = session_addresses(L, addr_seed).tolist()
        trace = simulate_linux_session(dev, dsts, BurstSchedule().first(bursts), model)
    trace.write(out)
    info.update(records=len(trace.records), delivered=len(trace.delivered()))
    emit(info, fmt)
    return EXIT_OK


def _attack_windows(dev, trace, plan_path, try_permutations, max_gap, both_orders, store):
    if not plan_path:
        raise click.UsageError("a Windows attack needs --plan")
    plan = MeasurementPlan.from_json(Path(plan_path).read_text())
    obs = windows_observations(trace, plan, bits=15)
    report = {"os": "windows", "plan_digest": plan.digest()}
    if obs is None:
        return report | {"status": "retest", "reason": "plan destinations missing from trace"}, EXIT_RETEST
    p1, pairs = obs
    t0 = time.perf_counter()
    survivors, ext = extract_windows(p1, pairs, plan, prepare_plan(plan), try_permutations, max_gap,
                                     both_orders)
    report["elapsed_seconds"] = round(time.perf_counter() - t0, 6)
    report["phase1_survivors"] = len(survivors)
    if not ext:
        return report | {"status": "retest", "reason": "no key survived extraction"}, EXIT_RETEST
    ident = derive_device_id(ext, WINDOWS_TAIL)
    report["candidates"] = [{"key_tail_hex": ident.hex(t), "digest": key_digest(windows_key_text(t))}
                            for t in ident.candidate_set]
    if store:
        append_records(store, [extraction_record(e, WINDOWS_TAIL, plan.digest()) for e in ext])
    if ident.unique:
        return report | {"status": "unique"}, EXIT_OK
    return report | {"status": "ambiguous"}, EXIT_AMBIGUOUS


def _attack_linux(dev, trace, nu, search_range, threads, cache):
    L = len({r.dst for r in trace.records})
    delta = delta_for(L)
    config = KeySearchConfig(nu=nu, variant=dev.variant, src_ip=dev.src_ip, M=dev.M, f=dev.f,
                             delta_L=delta, arch=dev.keys.arch, rho=dev.keys.rho, kaslr=dev.keys.kaslr,
                             init_net_offset=dev.init_net_offset or KeySearchConfig.init_net_offset)
    report = {"os": "linux", "W_log2": config.W_log2, "nu": nu}
    try:
        a, b = select_bursts(split_bursts(trace.delivered()), L)
    except RetestSignal as e:
        return report | {"status": "retest", "reason": str(e)}, EXIT_RETEST
    U = intersect_bursts(collect_candidates(a, dev.f, delta), collect_candidates(b, dev.f, delta))
    report.update(bursts=[a.label, b.label], collision_pairs=len(U))
    try:
        if cache:
            res = cached_search(U, config, load_cache(cache, config), cache, key_range=search_range,
                                threads=threads)
            accepted, elapsed = res.accepted, res.elapsed
            report["from_cache"] = res.from_cache
        else:
            res = exhaustive_search(U, config, search_range, threads)
            accepted, elapsed = res.accepted, res.elapsed
            report["scanned"] = res.scanned
    except InsufficientCollisions as e:
        return report | {"status": "retest", "reason": str(e)}, EXIT_RETEST
    report["elapsed_seconds"] = round(elapsed, 6)
    if not accepted:
        return report | {"status": "retest", "reason": "no key reached the threshold"}, EXIT_RETEST
    cands = []
    for ak in accepted:
        c = {"key_hex": BitVec(ak.key, 32).to_hex(), "matched_pairs": ak.matched_pairs,
             "digest": key_digest(linux_key_text(ak.key, ak.g_net))}
        if ak.g_net is not None:
            c["g_net_hex"] = BitVec(ak.g_net, 32).to_hex()
            try:
                c["kernel_base_hex"] = format(device_id_from_key(ak, config).reconstructed_kernel_base, "016x")
            except ValueError:
                c["kernel_base_hex"] = None
        cands.append(c)
    report["candidates"] = cands
    if len(accepted) == 1:
        return report | {"status": "unique"}, EXIT_OK
    return report | {"status": "ambiguous"}, EXIT_AMBIGUOUS


@cli.command()
@click.option("--trace", "trace_path", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--device", "device_path", type=click.Path(exists=True, dir_okay=False), required=True,
              help="descriptor; only its public parameters are used")
@click.option("--plan", "plan_path", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--try-permutations", is_flag=True)
@click.option("--max-gap", type=int, default=0, show_default=True)
@click.option("--both-orders", is_flag=True)
@click.option("--store", type=click.Path(dir_okay=False), default=None,
              help="append Windows extractions to this record file")
@click.option("--nu", type=int, default=11, show_default=True)
@click.option("--search-range", default=None, help="LO:HI slice of the Linux search space")
@click.option("--threads", type=int, default=None)
@click.option("--cache", type=click.Path(dir_okay=False), default=None, help="Linux accepted-key cache")
@click.option("--report", "report_path", type=click.Path(dir_okay=False), default=None)
@format_option
def attack(trace_path, device_path, plan_path, try_permutations, max_gap, both_orders, store, nu,
           search_range, threads, cache, report_path, fmt):
    """Recover the key from a trace."""
    dev = load_device(device_path)
    trace = PacketTrace.read(trace_path)
    if isinstance(dev, WindowsDevice):
        report, code = _attack_windows(dev, trace, plan_path, try_permutations, max_gap, both_orders, store)
    else:
        report, code = _attack_linux(dev, trace, nu, parse_range(search_range), threads, cache)
    if report_path:
        Path(report_path).write_text(json.dumps(report) + "\n")
    emit(report, fmt)
    return code


@cli.command()
@click.option("--os", "os_name", type=click.Choice(["windows", "linux"]), required=True)
@click.option("--L", "L", type=int, default=30, show_default=True, help="Windows: addresses available")
@click.option("--T", "T", type=float, default=1.0, show_default=True, help="Windows: CPU budget (s)")
@click.option("--alpha", type=float, default=0.001, show_default=True, help="Windows: seconds per J! unit")
@click.option("--f", "freq", type=float, default=300, show_default=True)
@click.option("--W", "W", type=float, default=48, show_default=True, help="log2 of the key space")
@click.option("--M", "buckets", type=int, default=2048, show_default=True)
@click.option("--loss", type=float, default=0.0, show_default=True)
@click.option("--table", "full_table", is_flag=True, help="Linux: print every candidate L")
@click.option("--time", "attack_time", is_flag=True, help="attack-time model instead of parameters")
@click.option("--r", "r", type=float, default=6.8645e-13, show_default=True)
@click.option("--EP", "EP", type=float, default=65.47, show_default=True)
@format_option
def estimate(os_name, L, T, alpha, freq, W, buckets, loss, full_table, attack_time, r, EP, fmt):
    """Parameter choices and error / time estimates."""
    if attack_time:
        emit({"r": r, "W_log2": W, "E_P": EP, "seconds": estimate_attack_time(r, W, EP)}, fmt)
        return EXIT_OK
    if os_name == "windows":
        try:
            J, G, Q = choose_parameters(L, T, alpha)
        except ValueError as e:
            raise click.UsageError(str(e))
        emit({"J": J, "G": G, "Q": Q, "work_seconds": alpha * math.factorial(J)}, fmt)
        return EXIT_OK
    Wi = int(W)
    rows = (parameter_table(freq, buckets, Wi, loss=loss) if full_table
            else [optimal_parameters(freq, buckets, Wi, loss=loss)])
    emit([{"L": p.L, "nu": p.nu, "prob_fp": p.prob_fp, "prob_fn": p.prob_fn} for p in rows], fmt)
    return EXIT_OK


def _bench_windows(quick: bool) -> dict:
    rng = np.random.default_rng(0)
    times = {}
    for J in (5, 6):
        plan = random_plan(rng, J, 12, 3)
        prep = prepare_plan(plan)
        dev = windows_new_device(J)
        ids = [dev.generate_ipid(d) for d in plan.phase1_ips]
        beta = (0, 1 << 10) if quick else (0, 1 << 14)
        t0 = time.perf_counter()
        phase1_extract(ids, plan, prep, try_permutations=True, beta_range=beta)
        times[J] = time.perf_counter() - t0
    return {"phase1_J5_seconds": times[5], "phase1_J6_seconds": times[6],
            "ratio_J6_J5": times[6] / times[5], "alpha": times[6] / math.factorial(6)}


def _bench_linux(quick: bool) -> dict:
    n_keys = 1 << (14 if quick else 22)
    n_pairs = 64
    addrs = session_addresses(2 * n_pairs, 1).astype(np.uint32)
    pi = np.arange(0, 2 * n_pairs, 2)
    pj = pi + 1
    counts = np.empty(n_keys, dtype=np.uint16)
    _kernels.scan_counts(0, 512, addrs, pi, pj, 0xC0A80114, 17, False, 2047, counts)  # compile/warm
    t0 = time.perf_counter()
    _kernels.scan_counts(0, n_keys, addrs, pi, pj, 0xC0A80114, 17, False, 2047, counts)
    dt = time.perf_counter() - t0
    rate = n_keys * n_pairs / dt
    return {"key_pair_tests_per_second": rate, "r": 1 / rate,
            "full_2^32_seconds_at_65_pairs": estimate_attack_time(1 / rate, 32, 65.47)}


@cli.command()
@click.option("--os", "os_name", type=click.Choice(["windows", "linux", "both"]), default="both",
              show_default=True)
@click.option("--quick", is_flag=True, help="small sizes for a smoke run")
@format_option
def bench(os_name, quick, fmt):
    """Throughput of phase 1 and of the key-search kernel on this machine."""
    rows = []
    if os_name in ("windows", "both"):
        rows.append({"bench": "windows"} | _bench_windows(quick))
    if os_name in ("linux", "both"):
        rows.append({"bench": "linux"} | _bench_linux(quick))
    emit(rows, fmt)
    return EXIT_OK


def main(argv=None) -> int:
    try:
        rv = cli.main(args=argv, prog_name="ipidlab", standalone_mode=False)
    except click.exceptions.Exit as e:
        return e.exit_code
    except click.exceptions.Abort:
        return EXIT_USAGE
    except click.ClickException as e:
        e.show()
        return EXIT_USAGE
    except ValueError as e:
        click.echo(f"Error: {e}", err=True)
        return EXIT_USAGE
    return rv if isinstance(rv, int) else EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
