"""Discrete-event core: integer-nanosecond clock, event heap and seeded substreams."""

from __future__ import annotations

import hashlib
from heapq import heappop, heappush

import numpy as np

NS_PER_S = 1_000_000_000


class SchedulingError(RuntimeError):
    """Raised when an event is scheduled before the current clock."""


def seconds_to_ns(seconds: float) -> int:
    return int(round(seconds * NS_PER_S))


def ns_to_seconds(ns: int) -> float:
    return ns / NS_PER_S


class Simulator:
    """Single-threaded event loop ordered by ``(time_ns, seq)``.

    ``seq`` is an insertion counter, so events sharing a timestamp run in
    the order they were scheduled. Handlers are plain callables invoked with
    the positional arguments given at scheduling time.
    """

    def __init__(self, trace=None):
        self.now = 0
        self.executed = 0
        self._queue = []
        self._seq = 0
        self._cancelled = set()
        self._trace = trace

    def schedule(self, time_ns: int, action, *args) -> int:
        if time_ns < self.now:
            raise SchedulingError(
                f"event {getattr(action, '__qualname__', action)!s} at {time_ns} ns "
                f"is before the clock ({self.now} ns)"
            )
        seq = self._seq
        self._seq = seq + 1
        heappush(self._queue, (time_ns, seq, action, args))
        return seq

    def schedule_in(self, delay_ns: int, action, *args) -> int:
        return self.schedule(self.now + delay_ns, action, *args)

    def cancel(self, event_id: int) -> None:
        self._cancelled.add(event_id)

    def pending(self):
        """Yield ``(time_ns, seq, action, args)`` of every live queued event."""
        for item in self._queue:
            if item[1] not in self._cancelled:
                yield item

    def __len__(self):
        return len(self._queue) - len(self._cancelled)

    def run_until(self, t_end_ns: int) -> int:
        if t_end_ns < self.now:
            raise SchedulingError(f"horizon {t_end_ns} ns is before the clock ({self.now} ns)")
        queue = self._queue
        cancelled = self._cancelled
        trace = self._trace
        count = 0
        last = self.now
        while queue and queue[0][0] <= t_end_ns:
            time_ns, seq, action, args = heappop(queue)
            if cancelled and seq in cancelled:
                cancelled.discard(seq)
                continue
            assert time_ns >= last, "event timestamps went backwards"
            last = time_ns
            self.now = time_ns
            if trace is not None:
                trace.append((time_ns, seq, action.__qualname__))
            action(*args)
            count += 1
        self.now = t_end_ns
        self.executed += count
        return count


class RandomStream:
    """Philox-backed stream keyed by ``(seed, label)``.

    Draws are buffered in blocks; the value sequence depends only on the key,
    never on how other streams are consumed.
    """

    _BLOCK = 512

    def __init__(self, seed: int, label: str):
        if seed < 0:
            raise ValueError("seed must be non-negative")
        digest = hashlib.sha256(label.encode("utf-8")).digest()
        words = [int.from_bytes(digest[i : i + 4], "little") for i in range(0, 16, 4)]
        self.seed = seed
        self.label = label
        self._gen = np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, *words])))
        self._buf: list[float] = []
        self._pos = 0

    def random(self) -> float:
        if self._pos >= len(self._buf):
            self._buf = self._gen.random(self._BLOCK).tolist()
            self._pos = 0
        value = self._buf[self._pos]
        self._pos += 1
        return value

    def uniform(self, a: float, b: float) -> float:
        return a + (b - a) * self.random()

    def integer(self, n: int) -> int:
        """Uniform integer in the closed range ``[0, n]``."""
        return int(self.random() * (n + 1))

    def shuffle(self, items: list) -> list:
        out = list(items)
        for i in range(len(out) - 1, 0, -1):
            j = self.integer(i)
            out[i], out[j] = out[j], out[i]
        return out


def substream(seed: int, label: str) -> RandomStream:
    return RandomStream(seed, label)
