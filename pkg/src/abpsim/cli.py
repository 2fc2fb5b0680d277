"""Command line entry point: ``abpsim run|validate|oracle|report|broadcast``."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .broadcast import AdhocNetwork, BroadcastMessage, PriorityBroadcast, greedy_route
from .metrics import LogParseError, downtime_oracle, parse_log, read_run_csv, read_summary_csv, run_csv
from .runner import default_out_dir, run_matrix
from .scenario import PROTOCOLS, ScenarioError, load_bundled, load_scenario

EXIT_FAIL, EXIT_USAGE = 1, 2


def parse_seeds(text: str) -> tuple[int, ...]:
    """``10`` -> 1..10, ``3,5,8`` -> those seeds, ``4-9`` -> 4..9."""
    text = text.strip()
    try:
        if "," in text:
            seeds = tuple(int(s) for s in text.split(",") if s.strip())
        elif "-" in text.lstrip("-"):
            lo, hi = text.split("-", 1)
            seeds = tuple(range(int(lo), int(hi) + 1))
        else:
            n = int(text)
            if n < 1:
                raise ValueError
            seeds = tuple(range(1, n + 1))
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad seed list {text!r}") from None
    if not seeds:
        raise argparse.ArgumentTypeError("no seeds given")
    return seeds


def _load(path):
    return load_bundled() if path is None else load_scenario(path)


def cmd_run(args) -> int:
    cfg = _load(args.scenario)
    protocols = list(cfg.scenario.protocols) if args.protocol == "all" else [args.protocol]
    seeds = args.seeds or cfg.run.seeds
    result = run_matrix(cfg, protocols, seeds, args.out, jobs=args.jobs)
    if result.summaries:
        print(format_table({p: s.by_index() for p, s in result.summaries.items()}))
        print(f"wrote {len(result.files)} files to {args.out}")
    for f in result.failures:
        print(f"FAIL {f}", file=sys.stderr)
    return EXIT_FAIL if result.failures else 0


def cmd_validate(args) -> int:
    cfg = _load(args.scenario)
    cov = cfg.world().coverage(cfg.run.dt, cfg.run.resolution, cfg.run.duration)
    print(f"scenario {cfg.scenario.name}: {len(cfg.aps)} access points, "
          f"{len(cfg.obstacles)} obstacles, path {cfg.path.duration:.1f} s")
    for ap, spans in cov.intervals.items():
        text = ", ".join(f"[{a / 1e6:.3f}, {'end' if b >= 2 ** 62 else f'{b / 1e6:.3f}'})"
                         for a, b in spans)
        print(f"  {ap}: {text or 'never in range'}")
    for a, b in cov.gaps():
        print(f"  coverage gap [{a / 1e6:.3f}, {b / 1e6:.3f})")
    return 0


def cmd_oracle(args) -> int:
    text = Path(args.log).read_text(encoding="utf-8")
    try:
        records = downtime_oracle(text)
    except LogParseError as exc:
        print(f"{args.log}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    seed = args.seed
    if seed is None:
        run = next((f for _, _, _, kind, f in parse_log(text) if kind == "run"), {})
        seed = int(run.get("seed", 0))
    out = run_csv(records, seed)
    sys.stdout.write(out)
    if args.csv:
        stored = read_run_csv(Path(args.csv).read_text(encoding="utf-8"))
        mine = read_run_csv(out)
        if stored != mine:
            print(f"MISMATCH between {args.log} and {args.csv}", file=sys.stderr)
            return EXIT_FAIL
        print(f"match: {len(mine)} records", file=sys.stderr)
    return 0


def format_table(by_protocol: dict) -> str:
    """Handover rows, one mean/ci95 column pair per protocol."""
    protocols = list(by_protocol)
    indices = sorted({i for stats in by_protocol.values() for i in stats})
    head = f"{'handover':>8} {'cause':<13}" + "".join(f"{p:>22}" for p in protocols)
    lines = [head, "-" * len(head)]
    for i in indices:
        cause = next((s[i].cause for s in by_protocol.values() if i in s), "")
        row = f"{i:>8} {cause:<13}"
        for p in protocols:
            h = by_protocol[p].get(i)
            if h is None:
                row += f"{'-':>22}"
            else:
                ci = "" if h.ci95 is None else f" ±{h.ci95:.3f}"
                row += f"{f'{h.mean:.3f}{ci}':>22}"
        lines.append(row)
    return "\n".join(lines)


class _Row:
    def __init__(self, row):
        self.cause = row["cause"]
        self.mean = float(row["mean_s"])
        self.ci95 = float(row["ci95_s"]) if row["ci95_s"] else None


def cmd_report(args) -> int:
    src = Path(args.input)
    files = sorted(src.glob("*_summary.csv"))
    if not files:
        print(f"no *_summary.csv files in {src}", file=sys.stderr)
        return EXIT_FAIL
    by_protocol = {}
    for f in files:
        rows = read_summary_csv(f.read_text(encoding="utf-8"))
        proto = f.name[: -len("_summary.csv")]
        by_protocol[proto] = {int(r["handover_index"]): _Row(r) for r in rows
                              if r["handover_index"] != "all"}
    order = [p for p in PROTOCOLS if p in by_protocol] + \
            [p for p in by_protocol if p not in PROTOCOLS]
    print("mean downtime per handover, seconds")
    print(format_table({p: by_protocol[p] for p in order}))
    return 0


def cmd_broadcast(args) -> int:
    cfg = _load(args.scenario)
    if cfg.adhoc is None or not cfg.adhoc.nodes:
        print("scenario has no [adhoc] nodes", file=sys.stderr)
        return EXIT_FAIL
    ad = cfg.adhoc
    positions = {f"n{i}": p for i, p in enumerate(ad.nodes)}
    net = AdhocNetwork(positions, ad.radio_range, cfg.obstacles)
    sim = PriorityBroadcast(net, ad.backoff())
    origin = f"n{args.origin}"
    sim.broadcast(origin, BroadcastMessage("m0", net.positions[origin], args.ttl))
    res = sim.run()["m0"]
    print(f"delivered {len(res.delivered)}/{len(net.nodes)} nodes with "
          f"{len(res.transmissions)} transmissions (flooding: {len(net.nodes)})")
    if ad.gateway is not None:
        ap = next(a for a in cfg.aps if a.id == ad.gateway)
        gw = AdhocNetwork({**positions, ap.id: ap.position}, ad.radio_range, cfg.obstacles)
        route = greedy_route(gw, origin, ap.id)
        print("relay route: " + (" -> ".join(route) if route else "no route"))
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="abpsim", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="simulate protocols x seeds and write CSVs and logs")
    run.add_argument("--scenario", help="scenario file (default: bundled)")
    run.add_argument("--protocol", choices=[*PROTOCOLS, "all"], default="all")
    run.add_argument("--seeds", type=parse_seeds, help="count (1..n) or list a,b,c or range a-b")
    run.add_argument("--out", default=default_out_dir(),
                     help="output directory (default: $ABPSIM_OUT or ./abpsim-out)")
    run.add_argument("--jobs", type=int, default=1)
    run.set_defaults(func=cmd_run)

    val = sub.add_parser("validate", help="check a scenario file and show its coverage")
    val.add_argument("--scenario")
    val.set_defaults(func=cmd_validate)

    orc = sub.add_parser("oracle", help="recompute downtime records from an event log")
    orc.add_argument("--log", required=True)
    orc.add_argument("--csv", help="per-run CSV to compare against")
    orc.add_argument("--seed", type=int, help="seed column (default: from the log)")
    orc.set_defaults(func=cmd_oracle)

    rep = sub.add_parser("report", help="comparison table from a run directory")
    rep.add_argument("--in", dest="input", required=True)
    rep.set_defaults(func=cmd_report)

    bc = sub.add_parser("broadcast", help="broadcast over the scenario's ad-hoc nodes")
    bc.add_argument("--scenario")
    bc.add_argument("--origin", type=int, default=0)
    bc.add_argument("--ttl", type=int, default=16)
    bc.set_defaults(func=cmd_broadcast)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except ScenarioError as exc:
        for d in exc.diagnostics:
            print(f"{getattr(args, 'scenario', None) or 'scenario'}: {d}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
