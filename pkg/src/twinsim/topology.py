"""Three-tier campus topologies (core / distribution / access) with WLANs."""

from __future__ import annotations

import json
import math
from collections import deque
from dataclasses import dataclass, field

from .engine import RandomStream, ns_to_seconds

CORE = "core-switch"
DISTRIBUTION = "distribution-switch"
ACCESS = "access-switch"
AP = "access-point"
STATION = "station"
DT_SERVER = "dt-server"

TWINNED = "twinned-device"
END_USER = "end-user-device"

L3_RATE_BPS = 1_000_000
L3_DELAY_NS = 2_000_000
L2_RATE_BPS = 500_000
L2_DELAY_NS = 1_000_000
QUEUE_CAPACITY = 100
STATIONS_PER_AP = 10


class TopologyError(ValueError):
    pass


@dataclass(frozen=True)
class TopologyScale:
    name: str
    ap_count: int
    distribution: int
    access: int
    aps_per_access: int = 2


SCALES = {
    "small": TopologyScale("small", 4, distribution=2, access=2),
    "middle": TopologyScale("middle", 16, distribution=4, access=8),
    "large": TopologyScale("large", 32, distribution=8, access=16),
}


@dataclass(frozen=True)
class Node:
    id: int
    role: str
    name: str


@dataclass(frozen=True)
class Link:
    a: int
    b: int
    rate_bps: int
    delay_ns: int
    queue_capacity: int
    layer: str


@dataclass
class Wlan:
    ap: int
    channel: int
    stations: list[int] = field(default_factory=list)


@dataclass
class NetworkGraph:
    scale: str
    nodes: list[Node] = field(default_factory=list)
    links: list[Link] = field(default_factory=list)
    wlans: list[Wlan] = field(default_factory=list)

    def add_node(self, role: str, name: str) -> int:
        node = Node(len(self.nodes), role, name)
        self.nodes.append(node)
        return node.id

    def add_link(self, a, b, rate_bps, delay_ns, queue_capacity, layer):
        self.links.append(Link(a, b, rate_bps, delay_ns, queue_capacity, layer))

    def ids(self, role: str) -> list[int]:
        return [n.id for n in self.nodes if n.role == role]

    @property
    def dt_server(self) -> int:
        (server,) = self.ids(DT_SERVER)
        return server

    def wlan_of(self) -> dict[int, int]:
        """Map each station to the index of its WLAN."""
        return {sta: i for i, w in enumerate(self.wlans) for sta in w.stations}

    def adjacency(self) -> dict[int, list[int]]:
        adj: dict[int, set[int]] = {n.id: set() for n in self.nodes}
        for link in self.links:
            adj[link.a].add(link.b)
            adj[link.b].add(link.a)
        for w in self.wlans:
            for sta in w.stations:
                adj[w.ap].add(sta)
                adj[sta].add(w.ap)
        return {k: sorted(v) for k, v in adj.items()}

    def validate(self) -> None:
        if len(self.ids(CORE)) not in (0, 2):
            raise TopologyError("a tiered graph needs exactly two core switches")
        if len(self.ids(DT_SERVER)) != 1:
            raise TopologyError("exactly one dt-server is required")
        aps = self.ids(AP)
        if sorted(w.ap for w in self.wlans) != sorted(aps):
            raise TopologyError("every access point must own exactly one WLAN")
        channels = [w.channel for w in self.wlans]
        if len(set(channels)) != len(channels):
            raise TopologyError("WLAN channels must be pairwise distinct")
        adj = self.adjacency()
        seen = {0}
        todo = deque([0])
        while todo:
            for v in adj[todo.popleft()]:
                if v not in seen:
                    seen.add(v)
                    todo.append(v)
        if len(seen) != len(self.nodes):
            raise TopologyError("graph is disconnected")


def build_topology(scale: str | TopologyScale, queue_capacity: int = QUEUE_CAPACITY) -> NetworkGraph:
    """Build one of the small / middle / large presets.

    Distribution switches come in linked pairs. Each access switch uplinks to
    both members of one pair, each distribution switch to both cores, and the
    dt-server hangs off core 0.
    """
    if isinstance(scale, str):
        try:
            scale = SCALES[scale]
        except KeyError:
            raise TopologyError(f"unknown scale {scale!r}; expected one of {sorted(SCALES)}") from None
    g = NetworkGraph(scale.name)
    l3 = dict(rate_bps=L3_RATE_BPS, delay_ns=L3_DELAY_NS, queue_capacity=queue_capacity, layer="L3")
    l2 = dict(rate_bps=L2_RATE_BPS, delay_ns=L2_DELAY_NS, queue_capacity=queue_capacity, layer="L2")

    cores = [g.add_node(CORE, f"core{i}") for i in range(2)]
    dists = [g.add_node(DISTRIBUTION, f"dist{i}") for i in range(scale.distribution)]
    accesses = [g.add_node(ACCESS, f"access{i}") for i in range(scale.access)]
    aps = [g.add_node(AP, f"ap{i}") for i in range(scale.access * scale.aps_per_access)]

    g.add_link(cores[0], cores[1], **l3)
    for d in dists:
        for c in cores:
            g.add_link(c, d, **l3)
    pairs = [dists[i : i + 2] for i in range(0, len(dists), 2)]
    for pair in pairs:
        g.add_link(pair[0], pair[1], **l3)
    per_pair = len(accesses) // len(pairs)
    for i, acc in enumerate(accesses):
        for d in pairs[i // per_pair]:
            g.add_link(d, acc, **l3)
    for i, ap in enumerate(aps):
        g.add_link(accesses[i // scale.aps_per_access], ap, **l2)
    for i, ap in enumerate(aps):
        wlan = Wlan(ap=ap, channel=i + 1)
        for j in range(STATIONS_PER_AP):
            wlan.stations.append(g.add_node(STATION, f"sta{i}.{j}"))
        g.wlans.append(wlan)
    server = g.add_node(DT_SERVER, "dt")
    g.add_link(cores[0], server, **l3)
    g.validate()
    return g


def two_node_graph(rate_bps=L3_RATE_BPS, delay_ns=L3_DELAY_NS, queue_capacity=QUEUE_CAPACITY) -> NetworkGraph:
    """One station wired straight to the dt-server; used as a closed-form check."""
    g = NetworkGraph("p2p")
    sta = g.add_node(STATION, "sta0")
    server = g.add_node(DT_SERVER, "dt")
    g.add_link(sta, server, rate_bps, delay_ns, queue_capacity, "L3")
    g.validate()
    return g


def assign_stations(graph: NetworkGraph, td_fraction: float, rng: RandomStream) -> dict[int, str]:
    """Pick ``round(n * td_fraction)`` twinned devices inside every WLAN."""
    if not 0.0 <= td_fraction <= 1.0:
        raise TopologyError("td_fraction must lie in [0, 1]")
    roles = {}
    for wlan in graph.wlans:
        k = math.floor(len(wlan.stations) * td_fraction + 0.5)
        order = rng.shuffle(wlan.stations)
        for idx, sta in enumerate(order):
            roles[sta] = TWINNED if idx < k else END_USER
    # stations outside any WLAN (wired test graphs) are twinned devices
    for sta in graph.ids(STATION):
        roles.setdefault(sta, TWINNED)
    return dict(sorted(roles.items()))


class RoutingTable:
    """Hop-count shortest paths, ties broken by the lowest next-hop id.

    Trees are built per destination on first use and cached.
    """

    def __init__(self, graph: NetworkGraph):
        self.adj = graph.adjacency()
        self._next: dict[int, dict[int, int]] = {}

    def tree(self, dest: int) -> dict[int, int]:
        tree = self._next.get(dest)
        if tree is None:
            dist = {dest: 0}
            todo = deque([dest])
            while todo:
                u = todo.popleft()
                for v in self.adj[u]:
                    if v not in dist:
                        dist[v] = dist[u] + 1
                        todo.append(v)
            if len(dist) != len(self.adj):
                raise TopologyError(f"destination {dest} is unreachable from part of the graph")
            tree = {}
            for u, d in dist.items():
                if u != dest:
                    tree[u] = min(v for v in self.adj[u] if dist[v] == d - 1)
            self._next[dest] = tree
        return tree

    def next_hop(self, node: int, dest: int) -> int:
        return self.tree(dest)[node]

    def path(self, src: int, dest: int) -> list[int]:
        if src == dest:
            return []
        tree = self.tree(dest)
        out = [src]
        while out[-1] != dest:
            out.append(tree[out[-1]])
        return out


def compute_routes(graph: NetworkGraph) -> RoutingTable:
    routes = RoutingTable(graph)
    # probing one tree surfaces a disconnected graph immediately
    routes.tree(graph.nodes[0].id)
    return routes


def topology_document(graph: NetworkGraph, roles: dict[int, str] | None = None) -> dict:
    routes = compute_routes(graph)
    doc = {
        "scale": graph.scale,
        "nodes": [
            {"id": n.id, "role": n.role, "name": n.name, **({"station_role": roles[n.id]} if roles and n.id in roles else {})}
            for n in graph.nodes
        ],
        "links": [
            {
                "a": ln.a,
                "b": ln.b,
                "layer": ln.layer,
                "rate_bps": ln.rate_bps,
                "delay_s": ns_to_seconds(ln.delay_ns),
                "queue_capacity": ln.queue_capacity,
            }
            for ln in graph.links
        ],
        "wlans": [{"ap": w.ap, "channel": w.channel, "stations": w.stations} for w in graph.wlans],
        "routes": {
            str(dest): {str(u): v for u, v in sorted(routes.tree(dest).items())} for dest in (n.id for n in graph.nodes)
        },
    }
    return doc


def dump_topology(graph: NetworkGraph, path, roles=None) -> None:
    with open(path, "w") as fh:
        json.dump(topology_document(graph, roles), fh, indent=1)
        fh.write("\n")
