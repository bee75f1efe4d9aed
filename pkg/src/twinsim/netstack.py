"""Packet forwarding over drop-tail wired links and a contention-based WLAN MAC."""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass

from .engine import NS_PER_S, RandomStream, Simulator
from .topology import NetworkGraph, RoutingTable

UDP_HEADER = 28
TCP_HEADER = 40
WIRED_FRAMING = 14
PAYLOAD = 1024

DATA = "data"
SYN = "tcp-syn"
SYNACK = "tcp-synack"
ACK_CTL = "tcp-ack-ctl"
ACK = "tcp-ack"


class RoutingError(RuntimeError):
    pass


class ConservationError(AssertionError):
    pass


class Packet:
    __slots__ = ("flow", "kind", "src", "dst", "app_seq", "seq", "ack", "payload", "header", "created", "hops")

    def __init__(self, flow, kind, src, dst, payload, header, created, app_seq=-1, seq=0, ack=0):
        self.flow = flow
        self.kind = kind
        self.src = src
        self.dst = dst
        self.app_seq = app_seq
        self.seq = seq
        self.ack = ack
        self.payload = payload
        self.header = header
        self.created = created
        self.hops = 0

    @property
    def size(self) -> int:
        return self.payload + self.header

    def __repr__(self):
        return f"Packet(flow={self.flow}, kind={self.kind}, {self.src}->{self.dst}, app_seq={self.app_seq}, seq={self.seq})"


def transmit_time(wire_bytes: int, rate_bps: float) -> float:
    """Serialization time in seconds."""
    if rate_bps <= 0:
        raise ValueError("rate must be positive")
    return wire_bytes * 8 / rate_bps


def transmit_ns(wire_bytes: int, rate_bps: int) -> int:
    # round half up on the exact rational
    num = wire_bytes * 8 * NS_PER_S
    return (2 * num + rate_bps) // (2 * rate_bps)


class LinkState:
    """One direction of a point-to-point link.

    Departures follow the FIFO recurrence ``start = max(now, busy_until)``,
    so each accepted packet costs exactly one future event (its arrival at
    the peer). ``capacity`` bounds the packets waiting behind the one being
    serialized.
    """

    __slots__ = ("src", "dst", "rate_bps", "delay_ns", "capacity", "busy_until",
                 "_ends", "enqueued", "dropped", "transmitted", "_tx_cache", "intervals")

    def __init__(self, src, dst, rate_bps, delay_ns, capacity, record=False):
        self.src = src
        self.dst = dst
        self.rate_bps = rate_bps
        self.delay_ns = delay_ns
        self.capacity = capacity
        self.busy_until = 0
        self._ends = deque()
        self.enqueued = 0
        self.dropped = 0
        self.transmitted = 0
        self._tx_cache = {}
        self.intervals = [] if record else None

    def backlog(self, now: int) -> int:
        """Packets waiting (not counting the one on the wire) at ``now``."""
        ends = self._ends
        while ends and ends[0] <= now:
            ends.popleft()
        return len(ends) - 1 if ends else 0

    def enqueue(self, wire_bytes: int, now: int) -> int:
        """Return the arrival time at the peer, or -1 when the queue is full."""
        if self.backlog(now) >= self.capacity:
            self.dropped += 1
            return -1
        tx = self._tx_cache.get(wire_bytes)
        if tx is None:
            tx = self._tx_cache[wire_bytes] = transmit_ns(wire_bytes, self.rate_bps)
        start = self.busy_until if self.busy_until > now else now
        end = start + tx
        self.busy_until = end
        self._ends.append(end)
        self.enqueued += 1
        self.transmitted += 1
        if self.intervals is not None:
            self.intervals.append((start, end))
        return end + self.delay_ns


@dataclass(frozen=True)
class MacParams:
    slot_ns: int = 20_000
    difs_ns: int = 50_000
    sifs_ns: int = 10_000
    cw_min: int = 15
    cw_max: int = 1023
    retry_limit: int = 7
    phy_rate_bps: int = 1_000_000
    mac_overhead: int = 34
    ack_bytes: int = 14

    def contention_window(self, retry: int) -> int:
        return min((self.cw_min + 1) * (1 << retry) - 1, self.cw_max)


class MacState:
    __slots__ = ("node", "queue", "hol", "cw", "retry", "backoff", "start",
                 "successes", "collisions", "drops", "queue_drops")

    def __init__(self, node, cw):
        self.node = node
        self.queue = deque()
        self.hol = None
        self.cw = cw
        self.retry = 0
        self.backoff = 0
        self.start = 0
        self.successes = 0
        self.collisions = 0
        self.drops = 0
        self.queue_drops = 0


class WlanMedium:
    """Slotted DCF contention on one channel.

    Instead of ticking every slot, the medium keeps a slot grid anchored one
    DIFS after the last busy period and schedules a single event at the
    earliest backoff expiry. Contenders that expire in the same slot collide.
    Frames reach the next hop ``frame airtime`` after the winning slot.
    """

    def __init__(self, sim: Simulator, channel: int, members, params: MacParams, rng: RandomStream,
                 deliver, drop, capacity: int, record=False):
        self.sim = sim
        self.channel = channel
        self.params = params
        self.rng = rng
        self.capacity = capacity
        self._deliver = deliver
        self._drop = drop
        self.macs = {node: MacState(node, params.cw_min) for node in members}
        self.contenders: list[MacState] = []
        self.busy_until = 0
        self.grid0 = params.difs_ns
        self._token = 0
        self._armed_slot = -1
        self._airtime = {}
        self.ack_ns = transmit_ns(params.ack_bytes, params.phy_rate_bps)
        self.successes = 0
        self.collisions = 0
        self.log = [] if record else None

    def airtime(self, packet: Packet) -> int:
        size = packet.payload + packet.header + self.params.mac_overhead
        t = self._airtime.get(size)
        if t is None:
            t = self._airtime[size] = transmit_ns(size, self.params.phy_rate_bps)
        return t

    def enqueue(self, node: int, packet: Packet, next_hop: int) -> bool:
        mac = self.macs[node]
        if mac.hol is None:
            mac.hol = (packet, next_hop)
            mac.backoff = self.rng.integer(mac.cw)
            self._join(mac)
            return True
        if len(mac.queue) >= self.capacity:
            mac.queue_drops += 1
            return False
        mac.queue.append((packet, next_hop))
        return True

    def _join(self, mac: MacState) -> None:
        p = self.params
        lag = self.sim.now + p.difs_ns - self.grid0
        mac.start = -(-lag // p.slot_ns) if lag > 0 else 0
        self.contenders.append(mac)
        slot = mac.start + mac.backoff
        if self._armed_slot < 0 or slot < self._armed_slot:
            self._arm(slot)

    def _arm(self, slot: int) -> None:
        self._token += 1
        self._armed_slot = slot
        self.sim.schedule(self.grid0 + slot * self.params.slot_ns, self._fire, self._token)

    def _rearm(self) -> None:
        if self.contenders:
            self._arm(min(m.start + m.backoff for m in self.contenders))
        else:
            self._armed_slot = -1
            self._token += 1

    def _next(self, mac: MacState) -> None:
        if mac.queue:
            mac.hol = mac.queue.popleft()
            mac.backoff = self.rng.integer(mac.cw)
            mac.start = 0
        else:
            mac.hol = None
            self.contenders.remove(mac)

    def _fire(self, token: int) -> None:
        if token != self._token:
            return
        p = self.params
        now = self.sim.now
        slot = (now - self.grid0) // p.slot_ns
        winners = []
        for m in self.contenders:
            if m.start + m.backoff == slot:
                winners.append(m)
            else:
                counted = slot - m.start
                if counted > 0:
                    m.backoff -= counted
                m.start = 0
        frame = max(self.airtime(m.hol[0]) for m in winners)
        busy_end = now + frame + p.sifs_ns + self.ack_ns
        if len(winners) == 1:
            m = winners[0]
            packet, nh = m.hol
            self._deliver(nh, packet, now + frame)
            m.successes += 1
            self.successes += 1
            if self.log is not None:
                self.log.append((now, now + frame, m.node))
            m.cw = p.cw_min
            m.retry = 0
            self._next(m)
        else:
            self.collisions += 1
            for m in winners:
                m.collisions += 1
                m.retry += 1
                if m.retry > p.retry_limit:
                    m.drops += 1
                    self._drop(m.hol[0])
                    m.cw = p.cw_min
                    m.retry = 0
                    self._next(m)
                else:
                    m.cw = p.contention_window(m.retry)
                    m.backoff = self.rng.integer(m.cw)
                    m.start = 0
        self.busy_until = busy_end
        self.grid0 = busy_end + p.difs_ns
        self._rearm()

    def queued_packets(self):
        for mac in self.macs.values():
            if mac.hol is not None:
                yield mac.hol[0]
            for packet, _ in mac.queue:
                yield packet


class FlowCounters:
    __slots__ = ("injected", "delivered", "dropped_queue", "dropped_wlan", "dropped_fault")

    def __init__(self):
        self.injected = 0
        self.delivered = 0
        self.dropped_queue = 0
        self.dropped_wlan = 0
        self.dropped_fault = 0


class Network:
    """Wires links and WLANs of a graph and forwards packets hop by hop."""

    def __init__(self, sim: Simulator, graph: NetworkGraph, routes: RoutingTable,
                 mac: MacParams = MacParams(), seed: int = 0, trace=None, record=False):
        self.sim = sim
        self.graph = graph
        self.routes = routes
        self.mac = mac
        self.trace = trace
        self.links: dict[tuple[int, int], LinkState] = {}
        for ln in graph.links:
            self.links[(ln.a, ln.b)] = LinkState(ln.a, ln.b, ln.rate_bps, ln.delay_ns, ln.queue_capacity, record)
            self.links[(ln.b, ln.a)] = LinkState(ln.b, ln.a, ln.rate_bps, ln.delay_ns, ln.queue_capacity, record)
        capacity = graph.links[0].queue_capacity if graph.links else 100
        self.wlans: list[WlanMedium] = []
        self.wlan_of: dict[int, WlanMedium] = {}
        for i, w in enumerate(graph.wlans):
            medium = WlanMedium(sim, w.channel, [w.ap, *w.stations], mac, RandomStream(seed, f"backoff/wlan{i}"),
                                self._wireless_arrival, self._wireless_drop, capacity, record)
            self.wlans.append(medium)
            for node in (w.ap, *w.stations):
                self.wlan_of[node] = medium
        self.handlers = {}
        self.counters: dict[int, FlowCounters] = {}
        self._hop = {}
        self.fault_rate = 0.0
        self._fault_rng = None

    def inject_faults(self, rate: float, rng: RandomStream) -> None:
        """Drop each packet offered to a wired link with probability ``rate``."""
        self.fault_rate = rate
        self._fault_rng = rng

    def register(self, flow: int, handler) -> None:
        """``handler(packet)`` receives every packet of ``flow`` reaching its destination."""
        self.handlers[flow] = handler
        self.counters.setdefault(flow, FlowCounters())

    def _emit(self, event, node, packet):
        self.trace.write(json.dumps({
            "t": self.sim.now / NS_PER_S, "event": event, "node": node, "flow": packet.flow,
            "kind": packet.kind, "app_seq": packet.app_seq, "seq": packet.seq, "ack": packet.ack,
        }, separators=(",", ":")) + "\n")

    def inject(self, node: int, packet: Packet) -> None:
        self.counters[packet.flow].injected += 1
        if self.trace is not None:
            self._emit("send", node, packet)
        self.forward(node, packet)

    def _hop_for(self, node, dst):
        key = (node, dst)
        hop = self._hop.get(key)
        if hop is None:
            try:
                nh = self.routes.next_hop(node, dst)
            except KeyError:
                raise RoutingError(f"no route from {node} to {dst}") from None
            link = self.links.get((node, nh))
            hop = self._hop[key] = (nh, link, None if link is not None else self.wlan_of[node])
        return hop

    def forward(self, node: int, packet: Packet) -> None:
        if node == packet.dst:
            self.counters[packet.flow].delivered += 1
            if self.trace is not None:
                self._emit("deliver", node, packet)
            self.handlers[packet.flow](packet)
            return
        nh, link, wlan = self._hop_for(node, packet.dst)
        if link is not None:
            if self.fault_rate and self._fault_rng.random() < self.fault_rate:
                self.counters[packet.flow].dropped_fault += 1
                if self.trace is not None:
                    self._emit("drop", node, packet)
                return
            arrival = link.enqueue(packet.payload + packet.header + WIRED_FRAMING, self.sim.now)
            if arrival < 0:
                self._queue_drop(node, packet)
            else:
                if self.trace is not None:
                    self._emit("enqueue", node, packet)
                self.sim.schedule(arrival, self._arrive, nh, packet)
        elif wlan.enqueue(node, packet, nh):
            if self.trace is not None:
                self._emit("enqueue", node, packet)
        else:
            self._queue_drop(node, packet)

    def _queue_drop(self, node, packet):
        self.counters[packet.flow].dropped_queue += 1
        if self.trace is not None:
            self._emit("drop", node, packet)

    def _arrive(self, node: int, packet: Packet) -> None:
        packet.hops += 1
        self.forward(node, packet)

    def _wireless_arrival(self, node, packet, when):
        self.sim.schedule(when, self._arrive, node, packet)

    def _wireless_drop(self, packet):
        self.counters[packet.flow].dropped_wlan += 1
        if self.trace is not None:
            self._emit("drop", -1, packet)

    def in_flight(self) -> dict[int, int]:
        """Census of packets still inside the network, walked from queues and pending events."""
        counts: dict[int, int] = {}
        for _, _, action, args in self.sim.pending():
            if getattr(action, "__func__", None) is Network._arrive and action.__self__ is self:
                flow = args[1].flow
                counts[flow] = counts.get(flow, 0) + 1
        for medium in self.wlans:
            for packet in medium.queued_packets():
                counts[packet.flow] = counts.get(packet.flow, 0) + 1
        return counts

    def check_conservation(self) -> dict[int, int]:
        """Assert injected = delivered + drops + in-flight for every flow."""
        census = self.in_flight()
        violations = {}
        for flow, c in self.counters.items():
            rhs = c.delivered + c.dropped_queue + c.dropped_wlan + c.dropped_fault + census.get(flow, 0)
            if c.injected != rhs:
                violations[flow] = c.injected - rhs
        if violations:
            raise ConservationError(f"packet conservation violated for flows {violations}")
        return census
