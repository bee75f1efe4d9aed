"""Datagram and reliable-stream transports driven by the event loop."""

from __future__ import annotations

from dataclasses import dataclass

from .engine import NS_PER_S
from .netstack import ACK, ACK_CTL, DATA, PAYLOAD, SYN, SYNACK, TCP_HEADER, UDP_HEADER, Network, Packet

MSS = PAYLOAD

CLOSED = "closed"
SYN_SENT = "syn-sent"
SYN_RECEIVED = "syn-received"
ESTABLISHED = "established"


class ProtocolError(AssertionError):
    """A segment violated an invariant the simulator itself guarantees."""


@dataclass(frozen=True)
class TcpParams:
    mss: int = MSS
    initial_cwnd: int = 1
    initial_ssthresh: int = 64
    min_rto_ns: int = 200_000_000
    max_rto_ns: int = 60 * NS_PER_S
    initial_rto_ns: int = NS_PER_S
    dupack_threshold: int = 3


class UdpFlow:
    """Fire-and-forget datagrams, one per application message."""

    def __init__(self, net: Network, flow: int, src: int, dst: int, on_deliver):
        self.net = net
        self.flow = flow
        self.src = src
        self.dst = dst
        self.sent = 0
        self.delivered = 0
        self._on_deliver = on_deliver
        net.register(flow, self._receive)

    def send(self, app_seq: int, payload: int = PAYLOAD) -> int:
        now = self.net.sim.now
        self.sent += 1
        self.net.inject(self.src, Packet(self.flow, DATA, self.src, self.dst, payload, UDP_HEADER, now, app_seq=app_seq))
        return now

    def _receive(self, packet: Packet) -> None:
        self.delivered += 1
        self._on_deliver(packet.app_seq, self.net.sim.now, packet.created)


class RttEstimator:
    """Smoothed RTT / RTT variance estimator with a clamped, backed-off RTO."""

    def __init__(self, params: TcpParams = TcpParams()):
        self.params = params
        self.srtt = None
        self.rttvar = None
        self.rto = params.initial_rto_ns

    def update(self, sample_ns: int) -> int:
        if sample_ns <= 0:
            raise ValueError("RTT sample must be positive")
        if self.srtt is None:
            self.srtt = float(sample_ns)
            self.rttvar = sample_ns / 2
        else:
            self.rttvar = 0.75 * self.rttvar + 0.25 * abs(self.srtt - sample_ns)
            self.srtt = 0.875 * self.srtt + 0.125 * sample_ns
        self.rto = self._clamp(int(round(self.srtt + 4 * self.rttvar)))
        return self.rto

    def back_off(self) -> int:
        self.rto = min(2 * self.rto, self.params.max_rto_ns)
        return self.rto

    def _clamp(self, rto):
        return max(self.params.min_rto_ns, min(rto, self.params.max_rto_ns))


class TcpConnection:
    """One-way reliable byte stream from ``src`` (active opener) to ``dst``.

    The sender side runs a Reno-style window without fast-recovery
    inflation; the receiver acknowledges every data segment cumulatively and
    hands complete messages to ``on_deliver(app_seq, now, sent_ns)`` strictly
    in order, where ``sent_ns`` is the transmit time of the segment copy that
    was accepted. ``on_transmit(app_seq, now)`` fires on the first wire
    transmission of each message.
    """

    def __init__(self, net: Network, flow: int, src: int, dst: int, on_deliver,
                 on_transmit=None, params: TcpParams = TcpParams(), state_log=None):
        self.net = net
        self.sim = net.sim
        self.flow = flow
        self.src = src
        self.dst = dst
        self.params = params
        mss = params.mss
        self.phase = CLOSED
        self.cwnd = float(params.initial_cwnd * mss)
        self.ssthresh = float(params.initial_ssthresh * mss)
        self.snd_una = 0
        self.snd_nxt = 0
        self.snd_max = 0
        self.app_bytes = 0
        self.dupacks = 0
        self.rtt = RttEstimator(params)
        self.retransmissions = 0
        self.timeouts = 0
        self._sent_at: dict[int, tuple[int, bool]] = {}
        self._syn_at = None
        self._timer = None
        self._timer_at = 0
        self._timer_token = 0
        self._deadline = None
        self._on_transmit = on_transmit
        self._state_log = state_log
        # receiver half
        self.rcv_phase = CLOSED
        self.rcv_nxt = 0
        self._ooo: dict[int, int] = {}
        self.delivered_msgs = 0
        self._on_deliver = on_deliver
        net.register(flow, self._receive)

    # -- sender ---------------------------------------------------------
    def open(self) -> None:
        if self.phase != CLOSED:
            raise ProtocolError("open() on a connection that is not closed")
        self.phase = SYN_SENT
        self._send_syn(retransmit=False)

    def _send_syn(self, retransmit: bool) -> None:
        now = self.sim.now
        self._syn_at = None if retransmit else now
        self._control(self.src, self.dst, SYN)
        self._restart_timer()

    def _control(self, src, dst, kind, ack=0):
        self.net.inject(src, Packet(self.flow, kind, src, dst, 0, TCP_HEADER, self.sim.now, ack=ack))

    def send(self, nbytes: int = MSS) -> None:
        """Append application bytes; segments leave once the window allows."""
        self.app_bytes += nbytes
        if self.phase == ESTABLISHED:
            self._pump()

    @property
    def flight(self) -> int:
        return self.snd_nxt - self.snd_una

    def _pump(self) -> None:
        mss = self.params.mss
        now = self.sim.now
        while self.snd_nxt < self.app_bytes:
            seg = min(mss, self.app_bytes - self.snd_nxt)
            if self.snd_nxt - self.snd_una + seg > self.cwnd:
                break
            self._transmit(self.snd_nxt, seg, now)
            self.snd_nxt += seg
            if self.snd_nxt > self.snd_max:
                self.snd_max = self.snd_nxt
        if self._deadline is None and self.snd_max > self.snd_una:
            self._restart_timer()

    def _transmit(self, seq: int, seg: int, now: int) -> None:
        retrans = seq < self.snd_max
        if retrans:
            self.retransmissions += 1
            self._sent_at[seq] = (now, True)
        else:
            self._sent_at[seq] = (now, False)
            if self._on_transmit is not None:
                self._on_transmit(seq // self.params.mss, now)
        self.net.inject(self.src, Packet(self.flow, DATA, self.src, self.dst, seg, TCP_HEADER, now,
                                         app_seq=seq // self.params.mss, seq=seq))

    def _restart_timer(self) -> None:
        # one pending event per connection; moving the deadline later just re-arms on expiry
        self._deadline = self.sim.now + self.rtt.rto
        if self._timer is None or self._timer_at > self._deadline:
            self._timer_token += 1
            self._timer = self.sim.schedule(self._deadline, self._timer_fired, self._timer_token)
            self._timer_at = self._deadline

    def _stop_timer(self) -> None:
        self._deadline = None

    def _timer_fired(self, token: int) -> None:
        if token != self._timer_token:
            return
        self._timer = None
        if self._deadline is None:
            return
        if self.sim.now < self._deadline:
            self._timer_token += 1
            self._timer = self.sim.schedule(self._deadline, self._timer_fired, self._timer_token)
            self._timer_at = self._deadline
            return
        self._deadline = None
        self._on_timeout()

    def _log_state(self):
        if self._state_log is not None:
            self._state_log.append((self.sim.now, self.flow, self.cwnd, self.ssthresh, self.rtt.rto))

    def _on_timeout(self) -> None:
        if self.phase == SYN_SENT:
            self.rtt.back_off()
            self.timeouts += 1
            self._send_syn(retransmit=True)
            self._log_state()
            return
        self.on_rto()

    def on_rto(self) -> None:
        """Timer expiry with unacknowledged data: collapse the window and go back to ``snd_una``."""
        if self.snd_max == self.snd_una:
            return
        mss = self.params.mss
        self.timeouts += 1
        outstanding = self.snd_max - self.snd_una
        self.ssthresh = max(outstanding / 2, 2 * mss)
        self.cwnd = float(mss)
        self.dupacks = 0
        self.rtt.back_off()
        self.snd_nxt = self.snd_una
        self._restart_timer()
        self._pump()
        self._log_state()

    def on_ack(self, ack: int) -> None:
        if ack > self.snd_max:
            raise ProtocolError(f"flow {self.flow}: ACK {ack} beyond highest sent byte {self.snd_max}")
        mss = self.params.mss
        now = self.sim.now
        if ack > self.snd_una:
            sent = self._sent_at.get(ack - mss)
            if sent is not None and not sent[1]:
                self.rtt.update(now - sent[0])
            for seq in range(self.snd_una, ack, mss):
                self._sent_at.pop(seq, None)
            self.snd_una = ack
            if self.snd_nxt < ack:
                self.snd_nxt = ack
            self.dupacks = 0
            if self.cwnd < self.ssthresh:
                self.cwnd += mss
            else:
                self.cwnd += mss * mss / self.cwnd
            if self.snd_max > self.snd_una:
                self._restart_timer()
            else:
                self._stop_timer()
            self._pump()
            self._log_state()
        elif ack == self.snd_una and self.snd_max > self.snd_una:
            self.dupacks += 1
            if self.dupacks == self.params.dupack_threshold:
                self.ssthresh = max(self.flight / 2, 2 * mss)
                self.cwnd = self.ssthresh
                seg = min(mss, self.app_bytes - self.snd_una)
                self._transmit(self.snd_una, seg, now)
                self._restart_timer()
                self._log_state()

    def _on_synack(self) -> None:
        if self.phase != SYN_SENT:
            # duplicate SYN-ACK: repeat the handshake ACK only
            self._control(self.src, self.dst, ACK_CTL)
            return
        if self._syn_at is not None:
            self.rtt.update(self.sim.now - self._syn_at)
        self.phase = ESTABLISHED
        self._stop_timer()
        self._control(self.src, self.dst, ACK_CTL)
        self._pump()

    # -- receiver -------------------------------------------------------
    def _receive(self, packet: Packet) -> None:
        kind = packet.kind
        if packet.dst == self.src:
            if kind == ACK:
                if self.phase == ESTABLISHED:
                    self.on_ack(packet.ack)
            elif kind == SYNACK:
                self._on_synack()
            return
        if kind == SYN:
            if self.rcv_phase == CLOSED:
                self.rcv_phase = SYN_RECEIVED
            self._control(self.dst, self.src, SYNACK)
        elif kind == ACK_CTL:
            if self.rcv_phase == SYN_RECEIVED:
                self.rcv_phase = ESTABLISHED
        elif kind == DATA:
            if self.rcv_phase == SYN_RECEIVED:
                self.rcv_phase = ESTABLISHED
            self._receive_data(packet)

    def _receive_data(self, packet: Packet) -> None:
        seq = packet.seq
        now = self.sim.now
        if seq == self.rcv_nxt:
            self._accept(packet.payload, now, packet.created)
            ooo = self._ooo
            while self.rcv_nxt in ooo:
                self._accept(self.params.mss, now, ooo.pop(self.rcv_nxt))
        elif seq > self.rcv_nxt and seq not in self._ooo:
            self._ooo[seq] = packet.created
        self._control(self.dst, self.src, ACK, ack=self.rcv_nxt)

    def _accept(self, nbytes: int, now: int, sent_ns: int) -> None:
        self.rcv_nxt += nbytes
        complete = self.rcv_nxt // self.params.mss
        while self.delivered_msgs < complete:
            self._on_deliver(self.delivered_msgs, now, sent_ns)
            self.delivered_msgs += 1
