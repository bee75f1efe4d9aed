import pytest
from hypothesis import given, settings, strategies as st

from twinsim.engine import NS_PER_S, Simulator, substream
from twinsim.netstack import (
    DATA, PAYLOAD, TCP_HEADER, UDP_HEADER, WIRED_FRAMING, ConservationError, LinkState, MacParams,
    Network, Packet, WlanMedium, transmit_ns, transmit_time,
)
from twinsim.topology import ACCESS, AP, build_topology, compute_routes, two_node_graph


class ScriptedRng:
    """Stands in for a RandomStream with a fixed sequence of backoff draws."""

    def __init__(self, values, default=0):
        self.values = list(values)
        self.default = default

    def integer(self, n):
        v = self.values.pop(0) if self.values else self.default
        return min(v, n)


def test_transmit_time_values():
    assert transmit_time(1052, 1_000_000) == pytest.approx(8.416e-3, abs=1e-12)
    assert transmit_time(0, 1_000_000) == 0
    assert transmit_time(1052, 500_000) == pytest.approx(16.832e-3, abs=1e-12)
    assert transmit_ns(1052, 1_000_000) == 8_416_000
    assert transmit_ns(1052, 500_000) == 16_832_000
    with pytest.raises(ValueError):
        transmit_time(10, 0)


def test_wire_sizes():
    assert PAYLOAD + UDP_HEADER + WIRED_FRAMING == 1066
    assert PAYLOAD + TCP_HEADER + WIRED_FRAMING == 1078


def test_idle_link_arrival():
    link = LinkState(0, 1, 1_000_000, 2_000_000, 100)
    assert link.enqueue(1052, 0) == 10_416_000


def test_back_to_back_spacing():
    link = LinkState(0, 1, 1_000_000, 2_000_000, 100)
    first = link.enqueue(1052, 0)
    second = link.enqueue(1052, 0)
    assert second - first == 8_416_000


def test_full_queue_drops():
    link = LinkState(0, 1, 1_000_000, 2_000_000, 100)
    # one on the wire plus 100 waiting
    for _ in range(101):
        assert link.enqueue(1052, 0) > 0
    assert link.backlog(0) == 100
    assert link.enqueue(1052, 0) == -1
    assert link.dropped == 1


@given(st.lists(st.tuples(st.integers(0, 50_000_000), st.integers(54, 1100)), min_size=1, max_size=80))
def test_link_never_overlaps(arrivals):
    link = LinkState(0, 1, 1_000_000, 2_000_000, 10, record=True)
    now = 0
    for gap, size in arrivals:
        now += gap
        link.enqueue(size, now)
    iv = link.intervals
    assert all(a[1] <= b[0] for a, b in zip(iv, iv[1:]))
    assert all(s < e for s, e in iv)


def test_queue_drains_under_light_load():
    link = LinkState(0, 1, 1_000_000, 2_000_000, 100)
    tx = transmit_ns(1066, 1_000_000)
    for k in range(50):
        t = k * 20_000_000  # one packet every 20 ms, well under capacity
        assert link.backlog(t) == 0
        link.enqueue(1066, t)
        assert link.backlog(t + tx) == 0


def test_contention_window_sequence():
    mac = MacParams()
    assert [mac.contention_window(k) for k in range(8)] == [15, 31, 63, 127, 255, 511, 1023, 1023]


def _medium(members, rng, record=True):
    sim = Simulator()
    got, dropped = [], []
    medium = WlanMedium(sim, 1, members, MacParams(), rng,
                        lambda nh, p, t: got.append((nh, p, t)), dropped.append, capacity=100, record=record)
    return sim, medium, got, dropped


def _pkt(i=0):
    return Packet(0, DATA, 1, 0, PAYLOAD, UDP_HEADER, 0, app_seq=i)


def test_single_station_zero_backoff_transmits_after_difs():
    sim, medium, got, _ = _medium([0, 1], ScriptedRng([0]))
    medium.enqueue(1, _pkt(), 0)
    sim.run_until(NS_PER_S)
    frame = transmit_ns(PAYLOAD + UDP_HEADER + 34, 1_000_000)
    assert medium.log[0][0] == MacParams().difs_ns
    assert got[0][2] == MacParams().difs_ns + frame


def test_retry_exhaustion_drops():
    # both stations always draw 0 -> every attempt collides
    sim, medium, got, dropped = _medium([0, 1, 2], ScriptedRng([], default=0))
    medium.enqueue(1, _pkt(1), 0)
    medium.enqueue(2, _pkt(2), 0)
    sim.run_until(NS_PER_S)
    assert got == []
    assert len(dropped) == 2
    assert medium.collisions == 8  # initial attempt + 7 retries
    assert medium.macs[1].drops == 1 and medium.macs[2].drops == 1


def test_backoff_freezes_while_medium_busy():
    # station 1 draws 2 slots, station 2 draws 5; 2 wins, 1 resumes with 3 left
    sim, medium, got, _ = _medium([0, 1, 2], ScriptedRng([2, 5, 0]))
    medium.enqueue(1, _pkt(1), 0)
    medium.enqueue(2, _pkt(2), 0)
    sim.run_until(NS_PER_S)
    p = MacParams()
    frame = transmit_ns(PAYLOAD + UDP_HEADER + 34, 1_000_000)
    ack = transmit_ns(14, 1_000_000)
    first = p.difs_ns + 2 * p.slot_ns
    busy_end = first + frame + p.sifs_ns + ack
    assert [entry[2] for entry in medium.log] == [1, 2]
    assert medium.log[1][0] == busy_end + p.difs_ns + 3 * p.slot_ns


def test_saturated_pair_no_overlap():
    sim, medium, got, _ = _medium([0, 1, 2], substream(3, "sat"))
    for node in (1, 2):
        for i in range(50):
            medium.enqueue(node, _pkt(i), 0)
    sim.run_until(2 * NS_PER_S)
    log = medium.log
    assert all(a[1] <= b[0] for a, b in zip(log, log[1:]))


def _small_net(seed=1, **kw):
    g = build_topology("small")
    sim = Simulator()
    net = Network(sim, g, compute_routes(g), seed=seed, **kw)
    return g, sim, net


def test_delivery_at_destination_is_terminal():
    g, sim, net = _small_net()
    seen = []
    net.register(0, seen.append)
    p = Packet(0, DATA, g.dt_server, g.dt_server, PAYLOAD, UDP_HEADER, 0)
    net.inject(g.dt_server, p)
    assert seen == [p]
    assert p.hops == 0


def test_ap_forwards_upstream_on_wired_link():
    g, sim, net = _small_net()
    net.register(0, lambda p: None)
    ap = g.ids(AP)[0]
    access = min(ln.a for ln in g.links if ln.b == ap)
    assert g.nodes[access].role == ACCESS
    net.inject(ap, Packet(0, DATA, ap, g.dt_server, PAYLOAD, UDP_HEADER, 0))
    assert net.links[(ap, access)].enqueued == 1


def test_hop_count_matches_bfs():
    g, sim, net = _small_net()
    routes = compute_routes(g)
    delivered = []
    net.register(0, delivered.append)
    sta = g.wlans[2].stations[4]
    net.inject(sta, Packet(0, DATA, sta, g.dt_server, PAYLOAD, UDP_HEADER, 0))
    sim.run_until(NS_PER_S)
    assert len(delivered) == 1
    assert delivered[0].hops == len(routes.path(sta, g.dt_server)) - 1 == 5


def test_two_node_closed_form_delay():
    g = two_node_graph()
    sim = Simulator()
    net = Network(sim, g, compute_routes(g))
    arrivals = []
    net.register(0, lambda p: arrivals.append(sim.now))
    net.inject(0, Packet(0, DATA, 0, 1, PAYLOAD, UDP_HEADER, 0))
    sim.run_until(NS_PER_S)
    assert arrivals == [8_528_000 + 2_000_000]


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 60), st.integers(1, 400))
def test_conservation_with_random_cut(seed, count, horizon_ms):
    g, sim, net = _small_net(seed=seed)
    net.inject_faults(0.1, substream(seed, "faults"))
    rng = substream(seed, "traffic")
    stations = [s for w in g.wlans for s in w.stations]
    for flow in range(3):
        net.register(flow, lambda p: None)
    for i in range(count):
        sta = stations[rng.integer(len(stations) - 1)]
        flow = i % 3
        sim.schedule(rng.integer(50_000_000), net.inject, sta, Packet(flow, DATA, sta, g.dt_server, PAYLOAD, UDP_HEADER, 0))
    sim.run_until(horizon_ms * 1_000_000)
    census = net.check_conservation()
    total = sum(c.injected for c in net.counters.values())
    assert total == sum(c.delivered + c.dropped_queue + c.dropped_wlan + c.dropped_fault for c in net.counters.values()) + sum(census.values())


def test_conservation_violation_is_detected():
    g, sim, net = _small_net()
    net.register(0, lambda p: None)
    net.counters[0].injected += 1
    with pytest.raises(ConservationError):
        net.check_conservation()


def test_trace_lines(tmp_path):
    import io
    import json

    buf = io.StringIO()
    g = two_node_graph()
    sim = Simulator()
    net = Network(sim, g, compute_routes(g), trace=buf)
    net.register(0, lambda p: None)
    net.inject(0, Packet(0, DATA, 0, 1, PAYLOAD, UDP_HEADER, 0, app_seq=0))
    sim.run_until(NS_PER_S)
    events = [json.loads(line)["event"] for line in buf.getvalue().splitlines()]
    assert events == ["send", "enqueue", "deliver"]
