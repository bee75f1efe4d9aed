"""Twin senders, on/off background sources and the receive-side sink."""

from __future__ import annotations

from fractions import Fraction

from .engine import NS_PER_S, RandomStream, Simulator
from .netstack import PAYLOAD


class ConfigurationError(ValueError):
    pass


def _exact(x) -> Fraction:
    return x if isinstance(x, Fraction) else Fraction(repr(x)) if isinstance(x, float) else Fraction(x)


def twin_schedule_ns(fp: float, duration: float) -> list[int]:
    """Send epochs ``k / fp`` strictly before ``duration``, in nanoseconds."""
    if fp <= 0:
        raise ConfigurationError(f"planned twinning frequency must be positive, got {fp}")
    if duration <= 0:
        raise ConfigurationError(f"duration must be positive, got {duration}")
    rate = _exact(fp)
    horizon = _exact(duration)
    epochs = []
    k = 0
    while Fraction(k) / rate < horizon:
        epochs.append(round(Fraction(k * NS_PER_S) / rate))
        k += 1
    return epochs


def twin_schedule(fp: float, duration: float) -> list[float]:
    return [t / NS_PER_S for t in twin_schedule_ns(fp, duration)]


class TwinApp:
    """Hands one 1024-byte message to the transport at every planned epoch."""

    def __init__(self, sim: Simulator, send, fp: float, duration: float):
        self.sim = sim
        self.fp = fp
        self._send = send
        self.epochs = twin_schedule_ns(fp, duration)
        self.scheduled = 0

    def start(self) -> None:
        if self.epochs:
            self.sim.schedule(self.epochs[0], self._fire)

    def _fire(self) -> None:
        seq = self.scheduled
        self.scheduled += 1
        self._send(seq)
        if self.scheduled < len(self.epochs):
            self.sim.schedule(self.epochs[self.scheduled], self._fire)


class OnOffApp:
    """Alternating on/off source; on and off lengths are redrawn every cycle.

    During an on period of length ``d`` a message leaves each time another
    full message worth of bytes has accumulated at ``rate_bps``, i.e.
    ``floor(d * rate / (8 * 1024))`` messages per period.
    """

    def __init__(self, sim: Simulator, send, rng: RandomStream, rate_bps: int = 100_000,
                 on_range=(0.0, 2.0), off_range=(0.0, 0.5), message_bytes: int = PAYLOAD):
        self.sim = sim
        self.rng = rng
        self.rate_bps = rate_bps
        self.on_range = on_range
        self.off_range = off_range
        self.interval_ns = message_bytes * 8 * NS_PER_S // rate_bps
        self._send = send
        self.state = "off"
        self.offered = 0
        self.on_durations: list[float] = []
        self.off_durations: list[float] = []
        self._period_end = 0

    def start(self) -> None:
        self.sim.schedule(self.sim.now, self.enter_on)

    def enter_on(self) -> None:
        d = self.rng.uniform(*self.on_range)
        self.on_durations.append(d)
        self.state = "on"
        now = self.sim.now
        self._period_end = now + int(d * NS_PER_S)
        first = now + self.interval_ns
        if first <= self._period_end:
            self.sim.schedule(first, self._emit)
        else:
            self.sim.schedule(self._period_end, self.enter_off)

    def _emit(self) -> None:
        self._send(self.offered)
        self.offered += 1
        nxt = self.sim.now + self.interval_ns
        if nxt <= self._period_end:
            self.sim.schedule(nxt, self._emit)
        else:
            self.sim.schedule(self._period_end, self.enter_off)

    def enter_off(self) -> None:
        d = self.rng.uniform(*self.off_range)
        self.off_durations.append(d)
        self.state = "off"
        self.sim.schedule(self.sim.now + int(d * NS_PER_S), self.enter_on)


def messages_per_on_period(duration: float, rate_bps: int, message_bytes: int = PAYLOAD) -> int:
    interval_ns = message_bytes * 8 * NS_PER_S // rate_bps
    return int(duration * NS_PER_S) // interval_ns


class DuplicateDelivery(AssertionError):
    pass


class DtSink:
    """Per-flow reception log of ``(app_seq, receive_ns)``."""

    def __init__(self):
        self.logs: dict[int, list[tuple[int, int]]] = {}
        self._seen: dict[int, set[int]] = {}

    def receive(self, flow: int, app_seq: int, now: int) -> None:
        seen = self._seen.setdefault(flow, set())
        if app_seq in seen:
            raise DuplicateDelivery(f"flow {flow} delivered app_seq {app_seq} twice")
        seen.add(app_seq)
        self.logs.setdefault(flow, []).append((app_seq, now))

    def log(self, flow: int) -> list[tuple[int, int]]:
        return self.logs.get(flow, [])
