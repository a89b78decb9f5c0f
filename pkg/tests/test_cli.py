import io
import subprocess
import sys

import pytest

from tangletrust.cli import OUT_DIR_ENV, main
from tangletrust.ledger import Ledger
from tangletrust.simnet import SimConfig, to_ini
from tangletrust.simnet.report import CSV_NAMES, parse_csv

TINY = SimConfig(seed=2, n_honest=24, n_malicious=12, n_evaluators=8, duration_ticks=100, n_devices=1)


def run(*argv):
    out, err = io.StringIO(), io.StringIO()
    code = main(list(argv), out, err)
    return code, out.getvalue(), err.getvalue()


@pytest.fixture(scope="module")
def scenario_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "tiny.cfg"
    cfg.write_text(to_ini(TINY))
    code, out, err = run("scenario", str(cfg), "--out-dir", str(root / "a"))
    assert code == 0, err
    return root


@pytest.mark.parametrize("argv,code", [
    (["bench", "--class", "pow15", "--nodes", "0"], 2),
    (["bench", "--class", "pow99", "--secs", "0.1"], 2),
    (["bench", "--class", "pow15", "--secs", "soon"], 2),
    (["frobnicate"], 2),
    ([], 2),
    (["scenario", "/nonexistent/x.cfg"], 4),
    (["ledger", "inspect", "/nonexistent/snap"], 4),
])
def test_exit_codes(argv, code):
    assert run(*argv)[0] == code


def test_invalid_config_exits_three(tmp_path):
    bad = tmp_path / "bad.cfg"
    bad.write_text("[scenario]\nwarp_speed = 9\n")
    code, _, err = run("scenario", str(bad), "--out-dir", str(tmp_path))
    assert code == 3 and "warp_speed" in err


def test_bench_emits_one_parseable_row(tmp_path):
    code, out, _ = run("bench", "--class", "pow15", "--secs", "0.3", "--out-dir", str(tmp_path))
    assert code == 0
    parsed = parse_csv(out)
    assert parsed["columns"] == ("class", "nodes", "tps")
    [row] = parsed["rows"]
    assert row["class"] == "pow15" and row["nodes"] == 1 and row["tps"] > 0
    assert (tmp_path / "bench-pow15-1.csv").read_text() == out


def test_scenario_outputs_round_trip_through_inspect(scenario_dir):
    out_dir = scenario_dir / "a"
    for name in CSV_NAMES:
        code, out, _ = run("ledger", "inspect", str(out_dir / name))
        assert code == 0 and "round-trip ok" in out
    code, out, _ = run("ledger", "inspect", str(out_dir / "ledger.snapshot"))
    assert code == 0
    digest = Ledger.load(out_dir / "ledger.snapshot").state_digest().hex()
    assert f"state digest: {digest}" in out
    code, out, _ = run("ledger", "inspect", str(out_dir / "report.json"))
    assert code == 0 and out.startswith(f"report seed={TINY.seed}")


def test_rerun_is_byte_identical(scenario_dir, monkeypatch):
    monkeypatch.setenv(OUT_DIR_ENV, str(scenario_dir / "b"))
    assert run("scenario", "--config", str(scenario_dir / "tiny.cfg"))[0] == 0
    for name in CSV_NAMES + ("report.json", "ledger.snapshot"):
        assert (scenario_dir / "a" / name).read_bytes() == (scenario_dir / "b" / name).read_bytes(), name


def test_inspect_rejects_garbage(tmp_path):
    junk = tmp_path / "junk.txt"
    junk.write_text("hello\n")
    assert run("ledger", "inspect", str(junk))[0] == 4


def test_trs_and_trade_commands(scenario_dir, tmp_path):
    snap = str(scenario_dir / "a" / "ledger.snapshot")
    ledger = Ledger.load(snap)
    fb = ledger.feedback[0]
    code, out, _ = run("trs", "score", "--aggregator", "average", "--subject", fb.subject.hex()[:20], "--snapshot", snap)
    assert code == 0 and 0.0 <= float(out) <= 1.0
    code, out, _ = run("trs", "score", "--aggregator", "netflow", "--evaluator", fb.rater.hex(),
                       "--subject", fb.subject.hex(), "--snapshot", snap)
    assert code == 0 and 0.0 <= float(out) <= 1.0
    assert run("trs", "score", "--aggregator", "netflow", "--subject", fb.subject.hex(), "--snapshot", snap)[0] == 2
    assert run("trs", "score", "--aggregator", "average", "--subject", "", "--snapshot", snap)[0] == 2
    edges = tmp_path / "edges.txt"
    assert run("trs", "export", "--snapshot", snap, "--output", str(edges))[0] == 0
    assert edges.read_text().count("\n") >= 1
    code, out, _ = run("trade", "trace", fb.trade_ref.hex()[:24], "--snapshot", snap)
    assert code == 0 and "final state" in out and "Requested" in out


def test_experiment_tables(tmp_path):
    code, out, _ = run("experiment", "doublespend", "--runs", "2", "--out-dir", str(tmp_path))
    assert code == 0
    rows = parse_csv(out)["rows"]
    assert len(rows) == 4 and {r["dumb"] for r in rows} == {0, 1}
    assert (tmp_path / "doublespend.csv").read_text() == out


def test_console_script_module_entry():
    proc = subprocess.run([sys.executable, "-m", "tangletrust.cli", "bench", "--class", "nope"],
                          capture_output=True, text=True)
    assert proc.returncode == 2 and "usage error" in proc.stderr
