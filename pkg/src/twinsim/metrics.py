"""Per-flow delay, jitter, loss and twin alignment ratio."""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .engine import NS_PER_S


@dataclass
class FlowRecord:
    flow_id: int
    kind: str
    protocol: str
    fp: float | None
    scheduled: int = 0
    sent: dict[int, int] = field(default_factory=dict)
    received: list[tuple[int, int]] = field(default_factory=list)
    drops: dict[str, int] = field(default_factory=dict)

    def delays_ns(self) -> np.ndarray:
        """Delays of received messages in receive order."""
        sent = self.sent
        return np.array([t - sent[seq] for seq, t in self.received], dtype=np.int64)


@dataclass(frozen=True)
class FlowStats:
    sent: int
    delivered: int
    mean_delay: float | None
    mean_jitter: float | None
    loss_ratio: float | None
    fa: float
    tau: float | None


def mean_delay(record: FlowRecord) -> float | None:
    d = record.delays_ns()
    if d.size == 0:
        return None
    return float(d.mean()) / NS_PER_S


def mean_jitter(record: FlowRecord) -> float | None:
    """Mean absolute difference of consecutive delays, ordered by reception."""
    d = record.delays_ns()
    if d.size < 2:
        return None
    return float(np.abs(np.diff(d)).mean()) / NS_PER_S


def loss_ratio(sent: int, delivered: int) -> float | None:
    if sent <= 0:
        return None
    return float(1 - Fraction(delivered, sent))


def twin_alignment_ratio(received: int, duration: float, fp: float) -> tuple[float, float]:
    """Return ``(f_a, tau)``; both are correctly rounded from exact rationals."""
    if duration <= 0 or fp <= 0:
        raise ValueError("duration and fp must be positive")
    fa = Fraction(received) / Fraction(duration)
    return float(fa), float(fa / Fraction(fp))


def flow_stats(record: FlowRecord, duration: float) -> FlowStats:
    delivered = len(record.received)
    sent = record.scheduled
    if record.fp is not None:
        fa, tau = twin_alignment_ratio(delivered, duration, record.fp)
    else:
        fa, tau = float(Fraction(delivered) / Fraction(duration)), None
    return FlowStats(
        sent=sent,
        delivered=delivered,
        mean_delay=mean_delay(record),
        mean_jitter=mean_jitter(record),
        loss_ratio=loss_ratio(sent, delivered),
        fa=fa,
        tau=tau,
    )


def summarize(values) -> dict[str, float | int | None]:
    """count / mean / median / quartiles / extrema of the defined values."""
    vals = np.array([v for v in values if v is not None], dtype=float)
    if vals.size == 0:
        return {"count": 0, "mean": None, "median": None, "q1": None, "q3": None, "min": None, "max": None}
    q1, med, q3 = np.percentile(vals, [25, 50, 75])
    return {
        "count": int(vals.size),
        "mean": float(vals.mean()),
        "median": float(med),
        "q1": float(q1),
        "q3": float(q3),
        "min": float(vals.min()),
        "max": float(vals.max()),
    }
