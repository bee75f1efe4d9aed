"""Command line entry point: ``twinsim run | sweep | topology``."""

from __future__ import annotations

import argparse
import contextlib
import csv
import dataclasses
import json
import logging
import sys

from .apps import ConfigurationError
from .engine import NS_PER_S, substream
from .experiment import DEFAULT_FPS, DEFAULT_SEEDS, ScenarioConfig, emit_results, run_scenario, run_sweep
from .topology import SCALES, assign_stations, build_topology, dump_topology

# CLI flag -> config field, for the override flags shared by run and sweep
OVERRIDES = {
    "duration": float,
    "queue_capacity": int,
    "bg_rate_bps": int,
    "td_fraction": float,
    "slot_us": float,
    "difs_us": float,
    "sifs_us": float,
    "cw_min": int,
    "cw_max": int,
    "retry_limit": int,
    "phy_rate_bps": int,
    "mac_overhead": int,
}


def _add_overrides(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON scenario config; flags override its values")
    for name, kind in OVERRIDES.items():
        p.add_argument("--" + name.replace("_", "-"), dest=name, type=kind, default=None)


def _base_config(args, extra: dict) -> ScenarioConfig:
    data = {}
    if args.config:
        with open(args.config) as fh:
            data = json.load(fh)
    base = ScenarioConfig.from_dict(data)
    changes = {k: getattr(args, k) for k in OVERRIDES if getattr(args, k) is not None}
    changes.update({k: v for k, v in extra.items() if v is not None})
    return dataclasses.replace(base, **changes)


def _split(text, kind=str):
    return [kind(x) for x in text.split(",") if x]


def _bt_values(text):
    table = {"on": True, "off": False, "1": True, "0": False, "true": True, "false": False}
    try:
        return [table[x.lower()] for x in _split(text)]
    except KeyError as exc:
        raise argparse.ArgumentTypeError(f"bad background-traffic value {exc}") from None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="twinsim", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="simulate one scenario")
    run.add_argument("--scale", choices=sorted(SCALES))
    run.add_argument("--protocol", choices=["udp", "tcp"])
    run.add_argument("--fp", type=float, help="planned twinning frequency, packets/s")
    run.add_argument("--bt", action=argparse.BooleanOptionalAction, default=None, help="background traffic")
    run.add_argument("--seed", type=int)
    run.add_argument("--out", required=True, help="output directory")
    run.add_argument("--trace", help="write the per-packet event trace (JSON lines) here")
    run.add_argument("--tcp-trace", help="write per-connection cwnd/ssthresh/rto samples (CSV) here")
    run.add_argument("--dump-topology", help="write the topology document (JSON) here")
    _add_overrides(run)

    sw = sub.add_parser("sweep", help="run a Cartesian experiment matrix")
    sw.add_argument("--scales", type=lambda s: _split(s), default=list(SCALES))
    sw.add_argument("--protocols", type=lambda s: _split(s), default=["udp", "tcp"])
    sw.add_argument("--fps", type=lambda s: _split(s, float), default=list(DEFAULT_FPS))
    sw.add_argument("--bt", dest="bts", type=_bt_values, default=[False, True], help="comma list of on/off")
    sw.add_argument("--seeds", type=lambda s: _split(s, int), default=list(DEFAULT_SEEDS))
    sw.add_argument("--jobs", type=int, default=1)
    sw.add_argument("--out", required=True)
    _add_overrides(sw)

    topo = sub.add_parser("topology", help="dump a preset topology with station roles and routes")
    topo.add_argument("--scale", choices=sorted(SCALES), default="small")
    topo.add_argument("--seed", type=int, default=1)
    topo.add_argument("--td-fraction", type=float, default=0.5)
    topo.add_argument("--out", required=True)
    return parser


def _cmd_run(args) -> int:
    config = _base_config(args, {"scale": args.scale, "protocol": args.protocol, "fp": args.fp,
                                 "bt": args.bt, "seed": args.seed}).validate()
    tcp_log = [] if args.tcp_trace else None
    with contextlib.ExitStack() as stack:
        trace = stack.enter_context(open(args.trace, "w")) if args.trace else None
        result = run_scenario(config, trace=trace, tcp_log=tcp_log)
    paths = emit_results([result], args.out)
    if tcp_log is not None:
        with open(args.tcp_trace, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["time_s", "flow_id", "cwnd_bytes", "ssthresh_bytes", "rto_s"])
            for t, flow, cwnd, ssthresh, rto in tcp_log:
                w.writerow([repr(t / NS_PER_S), flow, repr(cwnd), repr(ssthresh), repr(rto / NS_PER_S)])
    if args.dump_topology:
        graph = build_topology(config.scale, config.queue_capacity)
        roles = assign_stations(graph, config.td_fraction, substream(config.seed, "assign"))
        dump_topology(graph, args.dump_topology, roles)
    twin = result.twin_rows()
    taus = sorted(r["tau"] for r in twin)
    med = taus[len(taus) // 2] if taus else float("nan")
    print(f"{config.scenario_id}: {len(twin)} twin flows, median tau {med:.4f}, "
          f"{result.meta['events']} events -> {paths['flows']}")
    return 0


def _cmd_sweep(args) -> int:
    base = _base_config(args, {}).validate()
    results, failures = run_sweep(base, args.out, scales=args.scales, protocols=args.protocols, fps=args.fps,
                                  bts=args.bts, seeds=args.seeds, jobs=args.jobs)
    print(f"{len(results)} runs ok, {len(failures)} failed -> {args.out}")
    for cfg, err in failures:
        print(f"FAILED {cfg.scenario_id}: {err}", file=sys.stderr)
    return 0 if not failures else 1


def _cmd_topology(args) -> int:
    graph = build_topology(args.scale)
    roles = assign_stations(graph, args.td_fraction, substream(args.seed, "assign"))
    dump_topology(graph, args.out, roles)
    print(f"{args.scale}: {len(graph.nodes)} nodes, {len(graph.links)} links, {len(graph.wlans)} WLANs -> {args.out}")
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return {"run": _cmd_run, "sweep": _cmd_sweep, "topology": _cmd_topology}[args.command](args)
    except ConfigurationError as exc:
        print(f"twinsim: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
