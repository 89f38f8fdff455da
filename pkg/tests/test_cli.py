import json
import subprocess
import sys

import pytest

from ipidlab.cli import main


def run(capsys, *args):
    code = main([str(a) for a in args])
    out = capsys.readouterr().out
    rows = [json.loads(line) for line in out.splitlines() if line.startswith("{")]
    return code, rows


@pytest.fixture
def win(tmp_path, capsys):
    dev = tmp_path / "win.json"
    code, rows = run(capsys, "gen-device", "--os", "windows", "--seed", 5, "--out", dev)
    assert code == 0
    return dev, rows[0]["planted_digest"]


@pytest.fixture
def lin(tmp_path, capsys):
    dev = tmp_path / "lin.json"
    code, rows = run(capsys, "gen-device", "--os", "linux", "--variant", "a2", "--seed", 9,
                     "--plant-range", "0x10000000:0x10100000", "--out", dev)
    assert code == 0 and rows[0]["W_log2"] == 32
    return dev, rows[0]["planted_digest"]


def test_windows_round_trip(win, tmp_path, capsys):
    dev, digest = win
    trace = tmp_path / "t.jsonl"
    code, rows = run(capsys, "measure", "--device", dev, "--out", trace, "--seed", 1)
    assert code == 0 and rows[0]["records"] == 30
    code, rows = run(capsys, "attack", "--trace", trace, "--device", dev, "--plan", rows[0]["plan"])
    assert code == 0 and rows[0]["status"] == "unique"
    assert [c["digest"] for c in rows[0]["candidates"]] == [digest]


def test_windows_reverse_needs_permutations(win, tmp_path, capsys):
    dev, digest = win
    trace = tmp_path / "t.jsonl"
    _, rows = run(capsys, "measure", "--device", dev, "--out", trace, "--reverse")
    plan = rows[0]["plan"]
    assert run(capsys, "attack", "--trace", trace, "--device", dev, "--plan", plan)[0] == 2
    code, rows = run(capsys, "attack", "--trace", trace, "--device", dev, "--plan", plan, "--try-permutations")
    assert code == 0 and rows[0]["candidates"][0]["digest"] == digest


def test_windows_drop_needs_gap_budget(win, tmp_path, capsys):
    dev, digest = win
    trace = tmp_path / "t.jsonl"
    _, rows = run(capsys, "measure", "--device", dev, "--out", trace, "--drop", 3)
    plan = rows[0]["plan"]
    code, rows = run(capsys, "attack", "--trace", trace, "--device", dev, "--plan", plan, "--max-gap", 1)
    assert code == 0 and rows[0]["candidates"][0]["digest"] == digest


def test_windows_rewritten_trace_asks_for_retest(win, tmp_path, capsys):
    dev, _ = win
    trace = tmp_path / "t.jsonl"
    _, rows = run(capsys, "measure", "--device", dev, "--out", trace, "--rewrite-ipid")
    code, rows = run(capsys, "attack", "--trace", trace, "--device", dev, "--plan", rows[0]["plan"])
    assert code == 2 and rows[0]["status"] == "retest"


def test_windows_store_and_report(win, tmp_path, capsys):
    dev, _ = win
    trace, store, report = tmp_path / "t.jsonl", tmp_path / "keys.jsonl", tmp_path / "r.json"
    _, rows = run(capsys, "measure", "--device", dev, "--out", trace)
    run(capsys, "attack", "--trace", trace, "--device", dev, "--plan", rows[0]["plan"], "--store", store,
        "--report", report)
    assert json.loads(report.read_text())["status"] == "unique"
    assert json.loads(store.read_text().splitlines()[0])["tail_width"] == 45


def test_windows_attack_needs_plan(win, tmp_path, capsys):
    dev, _ = win
    trace = tmp_path / "t.jsonl"
    run(capsys, "measure", "--device", dev, "--out", trace)
    assert run(capsys, "attack", "--trace", trace, "--device", dev)[0] == 1


def test_traces_are_byte_identical(win, lin, tmp_path, capsys):
    for dev, _ in (win, lin):
        a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
        run(capsys, "measure", "--device", dev, "--out", a, "--seed", 4)
        run(capsys, "measure", "--device", dev, "--out", b, "--seed", 4)
        assert a.read_bytes() == b.read_bytes()


def test_linux_round_trip(lin, tmp_path, capsys, monkeypatch):
    dev, digest = lin
    trace = tmp_path / "t.jsonl"
    assert run(capsys, "measure", "--device", dev, "--out", trace, "--seed", 2)[0] == 0
    rng = "0x10000000:0x10100000"
    code, rows = run(capsys, "attack", "--trace", trace, "--device", dev, "--search-range", rng)
    assert code == 0 and [c["digest"] for c in rows[0]["candidates"]] == [digest]
    monkeypatch.setenv("IPIDLAB_THREADS", "1")
    code, again = run(capsys, "attack", "--trace", trace, "--device", dev, "--search-range", rng,
                      "--threads", 4)
    assert code == 0 and again[0]["candidates"] == rows[0]["candidates"]


def test_linux_cache(lin, tmp_path, capsys):
    dev, digest = lin
    trace, cache = tmp_path / "t.jsonl", tmp_path / "cache.jsonl"
    run(capsys, "measure", "--device", dev, "--out", trace, "--seed", 2)
    rng = "0x10000000:0x10100000"
    _, first = run(capsys, "attack", "--trace", trace, "--device", dev, "--search-range", rng, "--cache", cache)
    _, second = run(capsys, "attack", "--trace", trace, "--device", dev, "--cache", cache)
    assert first[0]["from_cache"] is False and second[0]["from_cache"] is True
    assert second[0]["candidates"][0]["digest"] == digest


def test_linux_rewritten_trace_asks_for_retest(lin, tmp_path, capsys):
    dev, _ = lin
    trace = tmp_path / "t.jsonl"
    run(capsys, "measure", "--device", dev, "--out", trace, "--rewrite-ipid")
    code, rows = run(capsys, "attack", "--trace", trace, "--device", dev, "--search-range", "0:65536")
    assert code == 2 and rows[0]["status"] == "retest"


def test_linux_empty_trace_asks_for_retest(lin, tmp_path, capsys):
    dev, _ = lin
    trace = tmp_path / "t.jsonl"
    run(capsys, "measure", "--device", dev, "--out", trace, "--loss", 1.0)
    assert run(capsys, "attack", "--trace", trace, "--device", dev, "--search-range", "0:16")[0] == 2


def test_a3_requires_arch(tmp_path, capsys):
    assert main(["gen-device", "--os", "linux", "--variant", "a3", "--out", str(tmp_path / "d.json")]) == 1


def test_android_keyspace(tmp_path, capsys):
    code, rows = run(capsys, "gen-device", "--os", "linux", "--variant", "a3", "--arch", "arm64",
                     "--out", tmp_path / "d.json")
    assert code == 0 and rows[0]["W_log2"] == 48


def test_a3_attack_reports_kernel_base(tmp_path, capsys):
    dev = tmp_path / "d.json"
    _, rows = run(capsys, "gen-device", "--os", "linux", "--variant", "a3", "--arch", "x64", "--seed", 3,
                  "--plant-range", "0:4096", "--out", dev)
    digest = rows[0]["planted_digest"]
    desc = json.loads(dev.read_text())
    base = int(desc["kernel_base_hex"], 16)
    slot = (base - 0xFFFFFFFF81000000) >> 21
    trace = tmp_path / "t.jsonl"
    run(capsys, "measure", "--device", dev, "--out", trace)
    lo = slot << 32
    code, rows = run(capsys, "attack", "--trace", trace, "--device", dev, "--search-range", f"{lo}:{lo + 4096}")
    assert code == 0
    cand = rows[0]["candidates"][0]
    assert cand["digest"] == digest and cand["kernel_base_hex"] == desc["kernel_base_hex"]


def test_bad_range_is_usage_error(lin, tmp_path, capsys):
    dev, _ = lin
    trace = tmp_path / "t.jsonl"
    run(capsys, "measure", "--device", dev, "--out", trace)
    assert main(["attack", "--trace", str(trace), "--device", str(dev), "--search-range", "9:3"]) == 1


def test_estimate_windows(capsys):
    code, rows = run(capsys, "estimate", "--os", "windows", "--L", 30, "--T", 1, "--alpha", 0.001)
    assert code == 0 and (rows[0]["J"], rows[0]["G"], rows[0]["Q"]) == (6, 12, 3)
    assert run(capsys, "estimate", "--os", "windows", "--alpha", 0)[0] == 1


def test_estimate_linux(capsys):
    code, rows = run(capsys, "estimate", "--os", "linux", "--f", 300, "--W", 48)
    assert code == 0 and (rows[0]["L"], rows[0]["nu"]) == (400, 11)
    code, rows = run(capsys, "estimate", "--os", "linux", "--table")
    assert [r["L"] for r in rows] == list(range(200, 501, 50))


def test_estimate_time(capsys):
    code, rows = run(capsys, "estimate", "--os", "linux", "--time")
    assert code == 0 and rows[0]["seconds"] == pytest.approx(6.8645e-13 * 2 ** 48 * 65.47)


def test_table_format(capsys):
    assert main(["estimate", "--os", "windows", "--format", "table"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0].split() == ["J", "G", "Q", "work_seconds"] and lines[1].split()[:3] == ["6", "12", "3"]


def test_bench_quick(capsys):
    code, rows = run(capsys, "bench", "--quick")
    assert code == 0 and {r["bench"] for r in rows} == {"windows", "linux"}
    assert all(v > 0 for r in rows for k, v in r.items() if k != "bench")


def test_config_file(tmp_path, capsys):
    cfg = tmp_path / "c.conf"
    cfg.write_text("# defaults\nos = linux\nvariant = a1\nseed = 7\n")
    code, rows = run(capsys, "--config", cfg, "gen-device", "--out", tmp_path / "d.json")
    assert code == 0 and json.loads((tmp_path / "d.json").read_text())["variant"] == "a1"
    code, rows = run(capsys, "--config", cfg, "gen-device", "--variant", "a2", "--out", tmp_path / "e.json")
    assert json.loads((tmp_path / "e.json").read_text())["variant"] == "a2"


def test_bad_config_line(tmp_path, capsys):
    cfg = tmp_path / "c.conf"
    cfg.write_text("nonsense\n")
    assert main(["--config", str(cfg), "gen-device", "--os", "windows", "--out", str(tmp_path / "d.json")]) == 1


def test_unknown_descriptor(tmp_path, capsys):
    bad = tmp_path / "d.json"
    bad.write_text('{"os": "plan9"}')
    trace = tmp_path / "t.jsonl"
    trace.write_text("")
    assert main(["attack", "--trace", str(trace), "--device", str(bad)]) == 1


def test_console_script_help():
    out = subprocess.run([sys.executable, "-m", "ipidlab.cli", "--help"], capture_output=True, text=True)
    assert out.returncode == 0
    assert all(c in out.stdout for c in ("gen-device", "measure", "attack", "estimate", "bench"))
