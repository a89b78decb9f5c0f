"""Acceptance criteria, each run at its stated tolerance and time budget."""
import itertools
import os
import random
import statistics
import subprocess
import sys
import time
from fractions import Fraction

import pytest

from conftest import VERDICTS
from oracles import f_measure, min_cut
from tangletrust.bench import BenchSpec, MessageClass, run_bench
from tangletrust.chain import accumulated_attempts
from tangletrust.core import pow_solve
from tangletrust.reputation import InteractionGraph, NetFlowScorer
from tangletrust.simnet import Scenario
from tangletrust.simnet.config import load_config
from tangletrust.simnet.doublespend import sweep
from tangletrust.simnet.liveness import run_liveness
from tangletrust.simnet.throughput import scaling

pytestmark = pytest.mark.slow

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
DEFAULT_CFG = os.path.join(ROOT, "scenarios", "default.cfg")


def verdict(n, ok, detail):
    line = f"{'PASS' if ok else 'FAIL'} criterion {n}: {detail}"
    VERDICTS.append(line)
    print(line)
    assert ok, line


class Timer:
    def __enter__(self):
        self.t0 = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.secs = time.perf_counter() - self.t0


_runs = {}


def default_run(seed, protected=True):
    """Default config at ``seed``; cached so criteria 7 and 8 share work. Returns (scenario, report, seconds)."""
    key = (seed, protected)
    if key not in _runs:
        cfg = load_config(DEFAULT_CFG).with_(seed=seed, protected=protected)
        with Timer() as t:
            sc = Scenario(cfg)
            report = sc.run()
        _runs[key] = (sc, report, t.secs)
    return _runs[key]


def test_criterion_1_pow_attempts():
    with Timer() as t:
        attempts = [pow_solve(b"acceptance/pow/%d" % i, 8).nonce + 1 for i in range(1000)]
    mean = statistics.fmean(attempts)
    verdict(1, 218 <= mean <= 294 and t.secs < 30, f"mean attempts {mean:.1f} in [218, 294], {t.secs:.1f}s < 30s")


def test_criterion_2_work_conservation():
    targets = [(16, 1), (15, 2), (14, 4), (13, 8), (12, 16)]
    with Timer() as t:
        runs = [accumulated_attempts(b"conservation/%d" % i, targets) for i in range(500)]
    means = [statistics.fmean(r[j] for r in runs) for j in range(len(targets))]
    ratios = {F: means[j] / means[0] for j, (_, F) in enumerate(targets) if F > 1}
    ok = all(abs(r - 1) <= 0.10 for r in ratios.values()) and t.secs < 120
    shown = ", ".join(f"F={F}: {r:.3f}" for F, r in ratios.items())
    verdict(2, ok, f"relaxed/unrelaxed mean attempts {shown} within 10%, {t.secs:.0f}s < 120s")


def test_criterion_3_throughput_ordering():
    tps = {cls: run_bench(BenchSpec(cls, 1, 5.0)).tps for cls in MessageClass}
    w, p15, p20 = tps[MessageClass.WEAKREQ], tps[MessageClass.POW15], tps[MessageClass.POW20]
    ok = w > p15 > p20 and w >= 10 * p15
    verdict(3, ok, f"weakreq {w:.1f} > pow15 {p15:.2f} > pow20 {p20:.3f} TPS, weakreq/pow15 = {w / p15:.0f} >= 10")


def test_criterion_4_linear_scaling():
    with Timer() as t:
        tps = scaling((1, 2, 5, 10))
    ok = all(tps[k] >= 0.8 * k * tps[1] for k in tps) and t.secs < 120
    shown = ", ".join(f"k={k}: {v / tps[1]:.2f}x" for k, v in tps.items())
    verdict(4, ok, f"TPS(k)/TPS(1) {shown} >= 0.8k, {t.secs:.0f}s < 120s")


def test_criterion_5_liveness():
    with Timer() as t:
        summary = run_liveness(range(20))
    ratio, rec = summary.median_ratio, summary.sw_recoveries(50)
    ok = ratio >= 5 and rec >= 19 and t.secs < 300
    verdict(5, ok, f"median persistence WTA/SW {ratio:.1f} >= 5, SW honest lead within 50 blocks {rec}/20, "
                   f"{t.secs:.0f}s < 300s")


def test_criterion_6_double_spend():
    bare = sweep(range(20), with_dumb=False)
    guarded = sweep(range(20), with_dumb=True)
    lost = sum(r.winner == "attacker" for r in bare)
    saved = sum(r.winner == "honest" for r in guarded)
    verdict(6, lost == 20 and saved == 20,
            f"attacker wins without dumb inflow {lost}/20, honest confirmed with inflow {saved}/20")


def test_criterion_7_mitigation_suite():
    _, report, secs = default_run(1)
    out = report.attack_outcomes
    starts = report.extras["whitewash_start_scores"]
    checks = {
        "replay accepted 0": out["Replay"]["attempts"] > 0 and out["Replay"]["successes"] == 0,
        "ballot stuffing accepted 0": out["BallotStuffing"]["attempts"] > 0 and out["BallotStuffing"]["successes"] == 0,
        "whitewash starts at 0": bool(starts) and all(s == {"average": 0.0, "netflow": 0.0} for s in starts),
        "slander rejected 100%": out["Slandering"]["attempts"] > 0 and out["Slandering"]["successes"] == 0,
        "PoB-less AppDoS rejected 100%": out["AppDoS"]["attempts"] > 0 and out["AppDoS"]["successes"] == 0,
        "WeakReq abuse served 0": out["WeakReqAbuse"]["attempts"] > 0 and out["WeakReqAbuse"]["successes"] == 0,
        "runtime < 180s": secs < 180,
    }
    failed = [k for k, v in checks.items() if not v]
    verdict(7, not failed, "; ".join(checks) + f" ({secs:.0f}s)" + (f"; failed: {failed}" if failed else ""))


def test_criterion_8_protection_improves_fscore():
    wins = {"average": 0, "netflow": 0}
    exact = True
    with Timer() as t:
        for seed in range(1, 11):
            _, prot, _ = default_run(seed, True)
            _, bare, _ = default_run(seed, False)
            for r in (prot, bare):
                for agg, (tp, fp, fn, _) in r.confusion.items():
                    exact &= Fraction(r.fscore[agg]).limit_denominator(10 ** 6) == f_measure(tp, fp, fn)
            for agg in wins:
                wins[agg] += prot.fscore[agg] > bare.fscore[agg]
    ok = exact and all(v >= 9 for v in wins.values()) and t.secs < 600
    verdict(8, ok, f"F-Score exact vs oracle: {exact}; protected > unprotected: average {wins['average']}/10, "
                   f"netflow {wins['netflow']}/10 (need >= 9); {t.secs:.0f}s < 600s")


def _graphs():
    """All 2- and 3-vertex graphs with capacities 0..4, all 4-vertex 0/1 graphs, a seeded 5-vertex sample."""
    for n, values in ((2, range(5)), (3, range(5)), (4, (0, 1))):
        pairs = list(itertools.permutations(range(n), 2))
        for caps in itertools.product(values, repeat=len(pairs)):
            yield n, {p: c for p, c in zip(pairs, caps) if c}
    rng = random.Random(5)
    pairs = list(itertools.permutations(range(5), 2))
    for _ in range(3000):
        yield 5, {p: c for p in pairs if (c := rng.randint(0, 4))}


def test_criterion_9_netflow_oracle():
    graphs = mismatches = 0
    for n, caps in _graphs():
        graphs += 1
        g = InteractionGraph()
        for v in range(n):
            g.add_vertex(v)
        for (u, v), c in caps.items():
            g.add_edge(u, v, c)
        scorer = NetFlowScorer(g)
        for e in range(n):
            out_cap = sum(c for (u, _), c in caps.items() if u == e)
            got = scorer.scores(e, list(range(n)))
            for s in range(n):
                if s == e or out_cap == 0:
                    want = 0.0
                else:
                    want = float(min(Fraction(1), Fraction(min_cut(n, caps, s, e), out_cap)))
                mismatches += got[s] != want
    verdict(9, graphs >= 10 ** 4 and mismatches == 0, f"{graphs} graphs, {mismatches} score mismatches")


def _cli_scenario(out_dir, hashseed):
    env = dict(os.environ, PYTHONHASHSEED=str(hashseed))
    subprocess.run([sys.executable, "-m", "tangletrust.cli", "scenario", DEFAULT_CFG, "--out-dir", out_dir],
                   check=True, env=env, capture_output=True)
    return {name: open(os.path.join(out_dir, name), "rb").read() for name in sorted(os.listdir(out_dir))}


def test_criterion_10_determinism(tmp_path):
    a = _cli_scenario(str(tmp_path / "a"), 1)
    b = _cli_scenario(str(tmp_path / "b"), 2)
    same = a == b and "ledger.snapshot" in a and "report.json" in a
    verdict(10, same, f"two runs of seed 1 under different hash seeds: {len(a)} files byte-identical = {same}")
