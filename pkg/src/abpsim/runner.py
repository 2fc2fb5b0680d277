"""Run orchestration: one simulation per (protocol, seed) and the output files."""
from __future__ import annotations

import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from .abps import AbpsClient, ProxyServer
from .engine import Engine, EventLog, us
from .lisp import LispClient
from .metrics import (DowntimeRecord, DowntimeTracker, RunSummary, aggregate,
                      bar_chart_data, check_disjoint, downtime_oracle, run_csv, summary_csv)
from .mipv6 import Mipv6Client
from .radio import RadioLink
from .scenario import PROTOCOLS, ScenarioConfig

log = logging.getLogger(__name__)

FLOW = "mn"


@dataclass
class RunResult:
    protocol: str
    seed: int
    log: EventLog
    records: list[DowntimeRecord]
    sent: int
    delivered: list[int]
    retransmissions: int
    problems: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.problems


def build_client(protocol: str, engine: Engine, radio: RadioLink, config: ScenarioConfig):
    if protocol == "abps":
        return AbpsClient(engine, radio, ProxyServer(window=config.abps.window), config.abps, FLOW)
    if protocol == "mipv6":
        return Mipv6Client(engine, radio, config.mipv6, FLOW)
    if protocol == "lisp":
        return LispClient(engine, radio, config.lisp, FLOW)
    raise ValueError(f"unknown protocol {protocol!r}")


def simulate(config: ScenarioConfig, protocol: str, seed: int, coverage=None,
             check: bool = True) -> RunResult:
    """Simulate one run. With ``check`` the run's invariants are verified."""
    engine = Engine(seed)
    tracker = DowntimeTracker(protocol)
    engine.listeners.append(tracker.feed)
    engine.note("sim", "run", protocol=protocol, seed=seed)

    world = config.world()
    if coverage is None:
        coverage = world.coverage(config.run.dt, config.run.resolution, config.run.duration)
    radio = RadioLink(engine, world, config.link, nic_count=2 if protocol == "abps" else 1,
                      coverage=coverage)
    client = build_client(protocol, engine, radio, config)

    end = us(config.run.duration)
    interval = us(config.traffic.interval)
    payload = bytes(config.traffic.payload_len)
    phase = engine.rng("traffic.phase").randrange(interval)

    def tick(event):
        client.client_send(payload, event)
        nxt = event.fire_at + interval
        if nxt <= end:
            engine.call_at(nxt, "mn", "send", tick)

    engine.call_at(us(config.traffic.start) + phase, "mn", "send", tick)
    if protocol == "abps":
        ka = us(config.abps.keepalive_interval)
        client.start_keepalive(engine.rng("keepalive.phase").randrange(ka))
    radio.start()
    engine.run_until(end)
    engine.note("sim", "end")
    records = tracker.finish(end)

    result = RunResult(protocol, seed, engine.log, records, client.next_seq,
                       client.delivered, client.retransmissions)
    if check:
        result.problems = check_run(result, radio)
    return result


def check_run(result: RunResult, radio: RadioLink | None = None) -> list[str]:
    problems = []
    if downtime_oracle(result.log.serialize(), result.protocol) != result.records:
        problems.append("online downtime differs from the log oracle")
    if not check_disjoint(result.records):
        problems.append("downtime records overlap")
    # only the proxy server deduplicates; plain UDP may deliver a seq twice
    if result.protocol == "abps" and len(set(result.delivered)) != len(result.delivered):
        problems.append("correspondent received a duplicate")
    if radio is not None:
        for nic in radio.nics:
            try:
                nic.check_invariants()
            except AssertionError as exc:
                problems.append(str(exc))
    return problems


# -- matrix ---------------------------------------------------------------------
def _job(args) -> tuple[str, int, str, str, list[DowntimeRecord], list[str]]:
    config, protocol, seed = args
    r = simulate(config, protocol, seed)
    return protocol, seed, r.log.serialize(), run_csv(r.records, seed), r.records, r.problems


def run_name(protocol: str, seed: int) -> str:
    return f"{protocol}_seed{seed:03d}"


@dataclass
class MatrixResult:
    summaries: dict[str, RunSummary]
    failures: list[str]
    files: list[Path]
    runs: dict[tuple[str, int], list[DowntimeRecord]] = field(default_factory=dict)


def run_matrix(config: ScenarioConfig, protocols: Sequence[str], seeds: Sequence[int],
               out_dir, jobs: int = 1) -> MatrixResult:
    """Run every (protocol, seed) pair and write logs, per-run and aggregate CSVs."""
    out = Path(out_dir)
    if not protocols:
        log.warning("empty protocol list, nothing to run")
        return MatrixResult({}, [], [])
    for p in protocols:
        if p not in PROTOCOLS:
            raise ValueError(f"unknown protocol {p!r}")
    out.mkdir(parents=True, exist_ok=True)
    work = [(config, p, s) for p in protocols for s in seeds]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            done = list(pool.map(_job, work))
    else:
        done = [_job(w) for w in work]

    files: list[Path] = []
    failures: list[str] = []

    def write(path: Path, text: str) -> None:
        try:
            path.write_text(text, encoding="utf-8")
            files.append(path)
        except OSError as exc:
            failures.append(f"{path}: {exc.strerror or exc}")

    per_protocol: dict[str, list[list[DowntimeRecord]]] = {p: [] for p in protocols}
    runs = {}
    for protocol, seed, log_text, csv_text, records, problems in done:
        name = run_name(protocol, seed)
        write(out / f"{name}.log", log_text)
        write(out / f"{name}.csv", csv_text)
        per_protocol[protocol].append(records)
        runs[(protocol, seed)] = records
        failures += [f"{name}: {p}" for p in problems]

    # canonical protocol order keeps outputs independent of the request order
    order = sorted(per_protocol, key=PROTOCOLS.index)
    summaries = {p: aggregate(per_protocol[p], p) for p in order}
    for p, s in summaries.items():
        write(out / f"{p}_summary.csv", summary_csv(s))
    write(out / "downtime_bars.dat", bar_chart_data(list(summaries.values())))
    return MatrixResult(summaries, failures, files, runs)


def default_out_dir() -> str:
    return os.environ.get("ABPSIM_OUT", "abpsim-out")
