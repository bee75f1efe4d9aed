"""Scenario configuration, single runs, sweeps and result files."""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import itertools
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

from . import __version__
from .apps import ConfigurationError, DtSink, OnOffApp, TwinApp
from .engine import Simulator, seconds_to_ns, substream
from .metrics import FlowRecord, flow_stats, summarize
from .netstack import MacParams, Network
from .topology import END_USER, SCALES, TWINNED, NetworkGraph, assign_stations, build_topology, compute_routes
from .transport import MSS, TcpConnection, UdpFlow

log = logging.getLogger(__name__)

DEFAULT_FPS = (0.5, 1.0, 2.0, 5.0, 10.0)
DEFAULT_SEEDS = (1, 2, 3, 4, 5)

FLOW_HEADER = [
    "scenario_id", "scale", "protocol", "fp_pps", "bt", "seed", "flow_id", "flow_kind",
    "sent", "delivered", "mean_delay_s", "mean_jitter_s", "loss_ratio", "fa_pps", "tau",
]
AGGREGATE_HEADER = [
    "scenario_id", "scale", "protocol", "fp_pps", "bt", "seed", "flow_kind", "metric",
    "count", "mean", "median", "q1", "q3", "min", "max",
]
AGGREGATE_METRICS = ("mean_delay_s", "mean_jitter_s", "loss_ratio", "fa_pps", "tau")


@dataclass(frozen=True)
class ScenarioConfig:
    scale: str = "small"
    protocol: str = "udp"
    fp: float = 1.0
    bt: bool = False
    duration: float = 20.0
    seed: int = 1
    queue_capacity: int = 100
    bg_rate_bps: int = 100_000
    td_fraction: float = 0.5
    slot_us: float = 20.0
    difs_us: float = 50.0
    sifs_us: float = 10.0
    cw_min: int = 15
    cw_max: int = 1023
    retry_limit: int = 7
    phy_rate_bps: int = 1_000_000
    mac_overhead: int = 34

    def validate(self) -> "ScenarioConfig":
        problems = []
        if self.scale not in SCALES:
            problems.append(f"scale must be one of {sorted(SCALES)}")
        if self.protocol not in ("udp", "tcp"):
            problems.append("protocol must be 'udp' or 'tcp'")
        if not self.fp > 0:
            problems.append("fp must be positive")
        if not self.duration > 0:
            problems.append("duration must be positive")
        if self.seed < 0:
            problems.append("seed must be non-negative")
        if self.queue_capacity < 1:
            problems.append("queue_capacity must be at least 1")
        if self.bg_rate_bps <= 0:
            problems.append("bg_rate_bps must be positive")
        if not 0 <= self.td_fraction <= 1:
            problems.append("td_fraction must lie in [0, 1]")
        if self.cw_min < 1 or self.cw_max < self.cw_min:
            problems.append("need 1 <= cw_min <= cw_max")
        if self.retry_limit < 0:
            problems.append("retry_limit must be non-negative")
        if self.phy_rate_bps <= 0 or self.slot_us <= 0 or self.difs_us < 0 or self.sifs_us < 0:
            problems.append("MAC timings and PHY rate must be positive")
        if problems:
            raise ConfigurationError("invalid scenario config: " + "; ".join(problems))
        return self

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ScenarioConfig":
        known = {f.name: f for f in dataclasses.fields(cls)}
        unknown = set(data) - set(known)
        if unknown:
            raise ConfigurationError(f"unknown config keys: {sorted(unknown)}")
        values = {}
        for key, value in data.items():
            kind = known[key].type
            ok = {
                "bool": isinstance(value, bool),
                "int": isinstance(value, int) and not isinstance(value, bool),
                "float": isinstance(value, (int, float)) and not isinstance(value, bool),
                "str": isinstance(value, str),
            }.get(kind, True)
            if not ok:
                raise ConfigurationError(f"{key} must be of type {kind}, got {value!r}")
            values[key] = float(value) if kind == "float" else value
        return cls(**values)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1)

    @classmethod
    def from_json(cls, text: str) -> "ScenarioConfig":
        return cls.from_dict(json.loads(text))

    @property
    def config_hash(self) -> str:
        canon = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()[:16]

    @property
    def scenario_id(self) -> str:
        return f"{self.scale}-{self.protocol}-fp{self.fp:g}-{'bt' if self.bt else 'nobt'}-s{self.seed}"

    def mac_params(self) -> MacParams:
        return MacParams(
            slot_ns=int(round(self.slot_us * 1000)),
            difs_ns=int(round(self.difs_us * 1000)),
            sifs_ns=int(round(self.sifs_us * 1000)),
            cw_min=self.cw_min,
            cw_max=self.cw_max,
            retry_limit=self.retry_limit,
            phy_rate_bps=self.phy_rate_bps,
            mac_overhead=self.mac_overhead,
        )


@dataclass
class ResultSet:
    config: ScenarioConfig
    records: list[FlowRecord]
    rows: list[dict]
    aggregates: list[dict]
    meta: dict = field(default_factory=dict)

    def twin_rows(self) -> list[dict]:
        return [r for r in self.rows if r["flow_kind"] == "twin"]


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _scenario_cols(config: ScenarioConfig) -> dict:
    return {
        "scenario_id": config.scenario_id,
        "scale": config.scale,
        "protocol": config.protocol,
        "fp_pps": f"{config.fp:g}",
        "bt": config.bt,
        "seed": config.seed,
    }


def aggregate_rows(config: ScenarioConfig, rows: list[dict]) -> list[dict]:
    out = []
    for kind in ("twin", "background"):
        subset = [r for r in rows if r["flow_kind"] == kind]
        if not subset:
            continue
        for metric in AGGREGATE_METRICS:
            out.append({**_scenario_cols(config), "flow_kind": kind, "metric": metric,
                        **summarize(r[metric] for r in subset)})
    return out


def _delivery(sink: DtSink, rec: FlowRecord):
    def deliver(seq, now, sent_ns):
        sink.receive(rec.flow_id, seq, now)
        rec.sent[seq] = sent_ns
    return deliver


def simulate(graph: NetworkGraph, roles: dict[int, str], config: ScenarioConfig,
             trace=None, tcp_log=None, fault_rate: float = 0.0) -> ResultSet:
    """Wire apps onto ``graph`` per ``config``, run for the duration and score every flow.

    ``fault_rate`` drops packets on wired links at random on top of queue
    overflow; it exists for robustness checks and is off in normal runs.
    """
    sim = Simulator()
    routes = compute_routes(graph)
    net = Network(sim, graph, routes, config.mac_params(), seed=config.seed, trace=trace)
    if fault_rate:
        net.inject_faults(fault_rate, substream(config.seed, "faults"))
    server = graph.dt_server
    sink = DtSink()
    records: list[FlowRecord] = []
    twin_apps = []
    bg_apps = []
    flow = 0

    for sta in sorted(s for s, role in roles.items() if role == TWINNED):
        rec = FlowRecord(flow, "twin", config.protocol, config.fp)
        records.append(rec)
        deliver = _delivery(sink, rec)
        if config.protocol == "udp":
            udp = UdpFlow(net, flow, sta, server, deliver)

            def send(seq, udp=udp, rec=rec):
                rec.sent[seq] = sim.now
                udp.send(seq)
        else:
            conn = TcpConnection(net, flow, sta, server, deliver, state_log=tcp_log)
            conn.open()

            def send(seq, conn=conn):
                conn.send(MSS)
        app = TwinApp(sim, send, config.fp, config.duration)
        app.start()
        twin_apps.append((rec, app))
        flow += 1

    if config.bt:
        for sta in sorted(s for s, role in roles.items() if role == END_USER):
            rec = FlowRecord(flow, "background", "tcp", None)
            records.append(rec)
            deliver = _delivery(sink, rec)
            conn = TcpConnection(net, flow, server, sta, deliver, state_log=tcp_log)
            conn.open()
            app = OnOffApp(sim, lambda seq, conn=conn: conn.send(MSS), substream(config.seed, f"onoff/sta{sta}"),
                           rate_bps=config.bg_rate_bps)
            app.start()
            bg_apps.append((rec, app))
            flow += 1

    events = sim.run_until(seconds_to_ns(config.duration))
    census = net.check_conservation()

    for rec, app in twin_apps:
        rec.scheduled = app.scheduled
    for rec, app in bg_apps:
        rec.scheduled = app.offered
    rows = []
    for rec in records:
        rec.received = sink.log(rec.flow_id)
        c = net.counters[rec.flow_id]
        rec.drops = {"queue": c.dropped_queue, "wlan": c.dropped_wlan, "fault": c.dropped_fault}
        st = flow_stats(rec, config.duration)
        rows.append({
            **_scenario_cols(config),
            "flow_id": rec.flow_id,
            "flow_kind": rec.kind,
            "sent": st.sent,
            "delivered": st.delivered,
            "mean_delay_s": st.mean_delay,
            "mean_jitter_s": st.mean_jitter,
            "loss_ratio": st.loss_ratio,
            "fa_pps": st.fa,
            "tau": st.tau,
        })
    meta = {
        "scenario_id": config.scenario_id,
        "config_hash": config.config_hash,
        "seed": config.seed,
        "version": __version__,
        "events": events,
        "twin_flows": len(twin_apps),
        "background_flows": len(bg_apps),
        "conservation": {
            "flows_checked": len(net.counters),
            "violations": 0,
            "packets_injected": sum(c.injected for c in net.counters.values()),
            "packets_delivered": sum(c.delivered for c in net.counters.values()),
            "queue_drops": sum(c.dropped_queue for c in net.counters.values()),
            "wlan_drops": sum(c.dropped_wlan for c in net.counters.values()),
            "fault_drops": sum(c.dropped_fault for c in net.counters.values()),
            "in_flight": sum(census.values()),
        },
    }
    return ResultSet(config, records, rows, aggregate_rows(config, rows), meta)


def run_scenario(config: ScenarioConfig, trace=None, tcp_log=None) -> ResultSet:
    config.validate()
    graph = build_topology(config.scale, config.queue_capacity)
    roles = assign_stations(graph, config.td_fraction, substream(config.seed, "assign"))
    return simulate(graph, roles, config, trace=trace, tcp_log=tcp_log)


def sweep_configs(base: ScenarioConfig, scales, protocols, fps, bts, seeds) -> list[ScenarioConfig]:
    axes = [list(scales), list(protocols), list(fps), list(bts), list(seeds)]
    if any(not a for a in axes):
        raise ConfigurationError("every sweep axis needs at least one value")
    return [
        dataclasses.replace(base, scale=sc, protocol=pr, fp=float(fp), bt=bool(bt), seed=int(sd))
        for sc, pr, fp, bt, sd in itertools.product(*axes)
    ]


def _run_safe(config: ScenarioConfig):
    try:
        return run_scenario(config)
    except Exception as exc:  # recorded in the manifest; the sweep carries on
        log.exception("run %s failed", config.scenario_id)
        return f"{type(exc).__name__}: {exc}"


def run_sweep(base: ScenarioConfig, out_dir, scales=tuple(SCALES), protocols=("udp", "tcp"), fps=DEFAULT_FPS,
              bts=(False, True), seeds=DEFAULT_SEEDS, jobs: int = 1) -> tuple[list, list]:
    """Run the Cartesian product and write the result files; returns ``(results, failures)``."""
    configs = sweep_configs(base, scales, protocols, fps, bts, seeds)
    for cfg in configs:
        cfg.validate()
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(_run_safe, configs))
    else:
        outcomes = []
        for i, cfg in enumerate(configs):
            log.info("[%d/%d] %s", i + 1, len(configs), cfg.scenario_id)
            outcomes.append(_run_safe(cfg))
    results = [o for o in outcomes if isinstance(o, ResultSet)]
    failures = [(cfg, o) for cfg, o in zip(configs, outcomes) if not isinstance(o, ResultSet)]
    emit_results(results, out_dir, failures)
    return results, failures


def emit_results(results: list[ResultSet], out_dir, failures=()) -> dict[str, str]:
    paths = {
        "flows": os.path.join(out_dir, "flows.csv"),
        "aggregates": os.path.join(out_dir, "aggregates.csv"),
        "manifest": os.path.join(out_dir, "manifest.json"),
    }
    try:
        os.makedirs(out_dir, exist_ok=True)
        with open(paths["flows"], "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(FLOW_HEADER)
            for res in results:
                for row in res.rows:
                    w.writerow([_fmt(row[k]) for k in FLOW_HEADER])
        with open(paths["aggregates"], "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(AGGREGATE_HEADER)
            for res in results:
                for row in res.aggregates:
                    w.writerow([_fmt(row[k]) for k in AGGREGATE_HEADER])
        runs = [{"status": "ok", "config": res.config.to_dict(), **res.meta} for res in results]
        runs += [{"status": "failed", "scenario_id": cfg.scenario_id, "config": cfg.to_dict(),
                  "config_hash": cfg.config_hash, "error": err} for cfg, err in failures]
        manifest = {"tool": "twinsim", "version": __version__,
                    "runs": runs, "failed": len(failures)}
        with open(paths["manifest"], "w") as fh:
            json.dump(manifest, fh, indent=1, sort_keys=True)
            fh.write("\n")
    except OSError as exc:
        raise OSError(f"could not write results under {out_dir}: {exc}") from exc
    return paths
