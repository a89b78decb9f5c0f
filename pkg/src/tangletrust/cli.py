"""``tangletrust`` command line.

Exit codes: 0 success, 1 unexpected failure, 2 usage error, 3 invalid
configuration, 4 file I/O or unreadable input.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from collections import Counter
from typing import List, Optional, Sequence

from .bench import BenchSpec, MessageClass, UsageError, run_bench
from .core import digest, encode
from .ledger import Ledger
from .reputation import InteractionGraph, NetFlowScorer, aggregate_average
from .simnet.config import ConfigInvalid, load_config
from .simnet.report import CsvFormatError, parse_csv, render_csv, render_table

OUT_DIR_ENV = "TANGLETRUST_OUT_DIR"
SNAPSHOT_NAME = "ledger.snapshot"

EXIT_OK, EXIT_ERROR, EXIT_USAGE, EXIT_CONFIG, EXIT_IO = 0, 1, 2, 3, 4


class IoFailure(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _out_dir(arg: Optional[str]) -> str:
    return arg or os.environ.get(OUT_DIR_ENV) or "out"


def _read_text(path: str) -> str:
    try:
        with open(path, encoding="utf-8") as fh:
            return fh.read()
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc.strerror or exc}") from exc


def _write_text(path: str, text: str) -> None:
    try:
        parent = os.path.dirname(path)
        if parent:
            os.makedirs(parent, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc.strerror or exc}") from exc


def _load_ledger(path: str) -> Ledger:
    text = _read_text(path)
    try:
        return Ledger.from_lines(text.splitlines())
    except Exception as exc:  # any malformed record means the file is not a usable snapshot
        raise IoFailure(f"{path}: not a valid ledger snapshot ({exc})") from exc


def _resolve(prefix: str, candidates, what: str) -> bytes:
    prefix = prefix.lower()
    hits = sorted({c for c in candidates if c.hex().startswith(prefix)})
    if not hits:
        raise UsageError(f"no {what} matches {prefix!r}")
    if len(hits) > 1:
        raise UsageError(f"{what} prefix {prefix!r} is ambiguous ({len(hits)} matches)")
    return hits[0]


# -- bench --------------------------------------------------------------------


def cmd_bench(args, out) -> int:
    try:
        cls = MessageClass(args.message_class.lower())
    except ValueError as exc:
        raise UsageError(f"unknown message class {args.message_class!r}") from exc
    spec = BenchSpec(cls, args.nodes, args.secs, args.seed).validate()
    res = run_bench(spec)
    config = digest(encode(("bench", cls.value, spec.node_count, repr(spec.duration)))).hex()[:16]
    text = render_table({"seed": spec.seed, "config": config}, ("class", "nodes", "tps"),
                        [(cls.value, res.nodes, res.tps)])
    out.write(text)
    if args.out_dir or os.environ.get(OUT_DIR_ENV):
        _write_text(os.path.join(_out_dir(args.out_dir), f"bench-{cls.value}-{spec.node_count}.csv"), text)
    return EXIT_OK


# -- scenario -----------------------------------------------------------------


def cmd_scenario(args, out) -> int:
    from .simnet.scenario import Scenario

    path = args.config or args.file
    if path is None:
        raise UsageError("scenario needs a config file (positional or --config)")
    cfg = load_config(path) if os.path.exists(path) else _missing(path)
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.unprotected:
        changes["protected"] = False
    if changes:
        cfg = cfg.with_(**changes)
    cfg.validate()
    sc = Scenario(cfg)
    report = sc.run()
    out_dir = _out_dir(args.out_dir)
    try:
        written = report.write(out_dir)
    except OSError as exc:
        raise IoFailure(f"cannot write to {out_dir}: {exc.strerror or exc}") from exc
    snap = os.path.join(out_dir, SNAPSHOT_NAME)
    _write_text(snap, sc.ledger.snapshot_text())
    for name, val in sorted(report.fscore.items()):
        out.write(f"fscore {name}: {'n/a' if val is None else f'{val:.4f}'}\n")
    for p in written + [snap]:
        out.write(f"wrote {p}\n")
    return EXIT_OK


def _missing(path: str):
    raise IoFailure(f"cannot read {path}: no such file")


# -- ledger inspect -----------------------------------------------------------


def _describe_snapshot(ledger: Ledger) -> List[str]:
    chain = ledger.chain
    canon = ledger.canonical_tip
    on_path = {b.id for b in chain.path(canon.id)}
    kinds = Counter(m.kind.value for m in ledger.tangle.messages.values() if not m.is_genesis)
    lines = [
        f"tangle messages: {len(ledger.tangle.messages)} ({', '.join(f'{k}={v}' for k, v in sorted(kinds.items()))})",
        f"tips: {len(ledger.tangle.tips)}",
        f"blocks: {len(chain.blocks) - 1}",
        f"canonical height: {canon.height}  work: {chain.work[canon.id]}  tip: {canon.id.hex()[:16]}",
        f"leaves: {len(chain.leaves())}",
    ]
    forks = sorted((b for b, kids in chain.children.items() if len(kids) > 1), key=lambda b: chain.blocks[b].height)
    lines.append(f"fork points: {len(forks)}")
    for b in forks:
        lines.append(f"  at height {chain.blocks[b].height}: {len(chain.children[b])} children")
    lines.append("height  block             dumb_refs  work  canonical")
    for b in sorted(chain.blocks.values(), key=lambda b: (b.height, b.id)):
        if b.height == 0:
            continue
        lines.append(f"{b.height:>6}  {b.id.hex()[:16]}  {len(b.dumb_refs):>9}  {chain.work[b.id]:>4}  "
                     f"{'yes' if b.id in on_path else 'no'}")
    lines.append(f"state digest: {ledger.state_digest().hex()}")
    return lines


def cmd_inspect(args, out) -> int:
    text = _read_text(args.file)
    stripped = text.lstrip()
    if stripped.startswith("#"):
        try:
            parsed = parse_csv(text)
        except CsvFormatError as exc:
            raise IoFailure(f"{args.file}: {exc}") from exc
        if render_csv(parsed) != text:
            out.write(f"{args.file}: CSV does not round-trip\n")
            return EXIT_ERROR
        meta = ", ".join(f"{k}={v}" for k, v in parsed["header"].items())
        out.write(f"table {parsed['table']} ({meta}): {len(parsed['rows'])} rows, columns "
                  f"{','.join(parsed['columns'])}; round-trip ok\n")
        for row in parsed["rows"]:
            out.write("  " + "  ".join(f"{c}={row[c]}" for c in parsed["columns"]) + "\n")
        return EXIT_OK
    first = stripped.split("\n", 1)[0]
    try:
        head = json.loads(first) if first else None
    except json.JSONDecodeError:
        head = None
    if isinstance(head, dict) and "kind" in head:
        for line in _describe_snapshot(_load_ledger(args.file)):
            out.write(line + "\n")
        return EXIT_OK
    try:
        report = json.loads(text)
    except json.JSONDecodeError as exc:
        raise IoFailure(f"{args.file}: not a snapshot, CSV table or report") from exc
    if not isinstance(report, dict) or "config_digest" not in report:
        raise IoFailure(f"{args.file}: not a snapshot, CSV table or report")
    out.write(f"report seed={report['seed']} config={report['config_digest']} ticks={report['elapsed_ticks']}\n")
    for name, val in sorted(report["fscore"].items()):
        out.write(f"  fscore {name}: {val}\n")
    for kind, o in sorted(report["attack_outcomes"].items()):
        out.write(f"  attack {kind}: attempts={o['attempts']} successes={o['successes']}\n")
    return EXIT_OK


# -- trs ----------------------------------------------------------------------


def cmd_trs_score(args, out) -> int:
    ledger = _load_ledger(args.snapshot)
    known = set(ledger.registry.identities) | {fb.rater for fb in ledger.feedback} | \
        {fb.subject for fb in ledger.feedback}
    subject = _resolve(args.subject, known, "subject")
    if args.aggregator == "average":
        score = aggregate_average(fb for fb in ledger.feedback if fb.subject == subject)
    else:
        if args.evaluator is None:
            raise UsageError("netflow needs --evaluator")
        evaluator = _resolve(args.evaluator, known, "evaluator")
        graph = InteractionGraph.from_feedback(ledger.feedback, sorted(known))
        score = NetFlowScorer(graph).score(evaluator, subject)
    out.write(f"{score!r}\n")
    return EXIT_OK


def cmd_trs_export(args, out) -> int:
    ledger = _load_ledger(args.snapshot)
    text = InteractionGraph.from_feedback(ledger.feedback).to_edgelist()
    if args.output:
        _write_text(args.output, text)
    else:
        out.write(text)
    return EXIT_OK


# -- trade trace --------------------------------------------------------------


def cmd_trade_trace(args, out) -> int:
    ledger = _load_ledger(args.snapshot)
    sid = _resolve(args.session, ledger.sessions, "trade session")
    s = ledger.sessions[sid]
    out.write(f"session {sid.hex()}\n  buyer {s.buyer.hex()}\n  seller {s.seller.hex()}\n  price {s.price}\n")
    if s.mediator is not None:
        out.write(f"  mediator {s.mediator.hex()}\n")
    for tick, event, state in s.history:
        out.write(f"  t={tick:<6} {event:<10} -> {state}\n")
    out.write(f"  final state {s.state.value}\n")
    return EXIT_OK


# -- experiments --------------------------------------------------------------


def cmd_experiment(args, out) -> int:
    seeds = range(args.seed, args.seed + args.runs)
    meta = {"seed": args.seed, "config": f"{args.name}-{args.runs}"}
    if args.name == "liveness":
        from .simnet.liveness import run_liveness

        summary = run_liveness(list(seeds))
        rows = [(r.mode, r.seed, r.persistence, r.honest_ahead_by) for r in summary.wta + summary.sw]
        text = render_table(meta, ("mode", "seed", "persistence", "honest_ahead_by"), rows)
    elif args.name == "doublespend":
        from .simnet.doublespend import sweep

        rows = [(int(dumb), r.seed, r.winner, r.honest_weight, r.attacker_weight)
                for dumb in (False, True) for r in sweep(list(seeds), dumb)]
        text = render_table(meta, ("dumb", "seed", "winner", "honest_weight", "attacker_weight"), rows)
    else:
        from .simnet.throughput import scaling

        text = render_table(meta, ("nodes", "tps"), sorted(scaling(seed=args.seed).items()))
    out.write(text)
    if args.out_dir or os.environ.get(OUT_DIR_ENV):
        _write_text(os.path.join(_out_dir(args.out_dir), f"{args.name}.csv"), text)
    return EXIT_OK


# -- entry --------------------------------------------------------------------


def _float(text: str) -> float:
    try:
        return float(text)
    except ValueError as exc:
        raise UsageError(f"not a number: {text!r}") from exc


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="tangletrust", description="Tangle + sliding-window chain + reputation simulator")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    b = sub.add_parser("bench", help="measure real-PoW message throughput on this host")
    b.add_argument("--class", dest="message_class", required=True, help="pow15, pow20 or weakreq")
    b.add_argument("--nodes", type=int, default=1)
    b.add_argument("--secs", type=_float, default=5.0)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--out-dir")
    b.set_defaults(func=cmd_bench)

    s = sub.add_parser("scenario", help="run a mixed attack scenario and write report, CSVs and snapshot")
    s.add_argument("file", nargs="?")
    s.add_argument("--config")
    s.add_argument("--seed", type=int)
    s.add_argument("--unprotected", action="store_true", help="disable payment coupling and seller ack")
    s.add_argument("--out-dir")
    s.set_defaults(func=cmd_scenario)

    lg = sub.add_parser("ledger", help="ledger snapshot tools")
    lsub = lg.add_subparsers(dest="ledger_command", required=True, parser_class=_Parser)
    li = lsub.add_parser("inspect", help="describe a snapshot, report.json or emitted CSV")
    li.add_argument("file")
    li.set_defaults(func=cmd_inspect)

    t = sub.add_parser("trs", help="trust and reputation scoring")
    tsub = t.add_subparsers(dest="trs_command", required=True, parser_class=_Parser)
    ts = tsub.add_parser("score")
    ts.add_argument("--aggregator", choices=("average", "netflow"), required=True)
    ts.add_argument("--evaluator")
    ts.add_argument("--subject", required=True)
    ts.add_argument("--snapshot", required=True)
    ts.set_defaults(func=cmd_trs_score)
    te = tsub.add_parser("export", help="write the interaction graph as 'from to capacity' lines")
    te.add_argument("--snapshot", required=True)
    te.add_argument("--output")
    te.set_defaults(func=cmd_trs_export)

    tr = sub.add_parser("trade", help="trade session tools")
    trsub = tr.add_subparsers(dest="trade_command", required=True, parser_class=_Parser)
    tt = trsub.add_parser("trace")
    tt.add_argument("session")
    tt.add_argument("--snapshot", required=True)
    tt.set_defaults(func=cmd_trade_trace)

    ex = sub.add_parser("experiment", help="emit plot-ready data for the focused simulations")
    ex.add_argument("name", choices=("liveness", "doublespend", "scaling"))
    ex.add_argument("--seed", type=int, default=0)
    ex.add_argument("--runs", type=int, default=20)
    ex.add_argument("--out-dir")
    ex.set_defaults(func=cmd_experiment)
    return p


def main(argv: Optional[Sequence[str]] = None, out=None, err=None) -> int:
    out = out or sys.stdout
    err = err or sys.stderr
    try:
        args = build_parser().parse_args(argv)
        return args.func(args, out)
    except UsageError as exc:
        err.write(f"usage error: {exc}\n")
        return EXIT_USAGE
    except ConfigInvalid as exc:
        err.write(f"invalid config: {exc}\n")
        return EXIT_CONFIG
    except IoFailure as exc:
        err.write(f"i/o failure: {exc}\n")
        return EXIT_IO
    except SystemExit as exc:  # argparse --help
        return int(exc.code or 0)
    except Exception as exc:
        err.write(f"error: {type(exc).__name__}: {exc}\n")
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
