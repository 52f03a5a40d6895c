"""Deterministic discrete-event engine and the network substrate.

The engine is a plain (timestamp, sequence) heap: ties fire in insertion
order, so a run is a pure function of (configuration, seed).  Paths are
full duplex; each direction is an independent drop-tail channel with its
own seeded random stream, so adding a consumer of randomness anywhere
else never perturbs the loss pattern of an existing path.
"""

from __future__ import annotations

import heapq
import random
import zlib
from dataclasses import dataclass, field


class SimulationError(Exception):
    """Raised on causality bugs and invalid simulation input."""


def stream_seed(root_seed: int, label: str) -> int:
    """Stable per-consumer seed derived from the scenario seed and a label."""
    return ((root_seed & 0xFFFFFFFF) << 32) ^ zlib.crc32(label.encode("utf-8"))


class Engine:
    """Event loop with a monotone clock and deterministic tie-breaking."""

    def __init__(self) -> None:
        self.now = 0.0
        self._heap: list = []
        self._seq = 0
        self.trace: list[str] | None = None  # packet-level log when enabled

    def enable_trace(self) -> None:
        self.trace = []

    def log(self, line: str) -> None:
        if self.trace is not None:
            self.trace.append(line)

    def schedule(self, at: float, fn, *args) -> None:
        """Enqueue fn(*args) to fire at simulated time `at`."""
        if at < self.now:
            raise SimulationError(
                f"event scheduled at {at!r} before current time {self.now!r}")
        heapq.heappush(self._heap, (at, self._seq, fn, args))
        self._seq += 1

    def run(self, until: float) -> None:
        """Process events in (timestamp, sequence) order up to `until` inclusive."""
        heap = self._heap
        while heap and heap[0][0] <= until:
            at, _, fn, args = heapq.heappop(heap)
            self.now = at
            fn(*args)
        self.now = max(self.now, until)

    def pending(self) -> int:
        return len(self._heap)


def capacity_at(trace: list[tuple[float, float]], t: float) -> float:
    """Capacity (bits/s) in effect at time t: last breakpoint with time <= t."""
    if t < 0:
        raise SimulationError(f"capacity_at called with negative time {t}")
    cap = trace[0][1]
    for ts, c in trace:
        if ts <= t:
            cap = c
        else:
            break
    return cap


def load_capacity_trace(path: str) -> list[tuple[float, float]]:
    """Read a `time_s,capacity_mbps` breakpoint file into (s, bits/s) pairs."""
    out: list[tuple[float, float]] = []
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != 2:
                raise SimulationError(f"{path}:{lineno}: expected 'time_s,capacity_mbps'")
            t, mbps = float(parts[0]), float(parts[1])
            out.append((t, mbps * 1e6))
    return validate_trace(out, origin=path)


def validate_trace(trace: list[tuple[float, float]], origin: str = "trace") -> list[tuple[float, float]]:
    if not trace:
        raise SimulationError(f"{origin}: empty capacity trace")
    if trace[0][0] != 0.0:
        raise SimulationError(f"{origin}: first breakpoint must be at time 0")
    last = -1.0
    for t, c in trace:
        if t <= last:
            raise SimulationError(f"{origin}: breakpoint times must strictly increase")
        if c <= 0:
            raise SimulationError(f"{origin}: capacities must be positive")
        last = t
    return trace


@dataclass
class PathConfig:
    """One physical path: capacity trace, one-way delay, wire loss, buffer."""
    name: str
    capacity_trace: list[tuple[float, float]]  # (seconds, bits/s)
    prop_delay: float                          # seconds, one way
    loss_prob: float = 0.0
    queue_limit: int = 100

    def __post_init__(self) -> None:
        validate_trace(self.capacity_trace, origin=self.name)
        if not 0.0 <= self.loss_prob <= 1.0:
            raise SimulationError(f"{self.name}: loss_prob must be in [0, 1]")
        if self.queue_limit < 1:
            raise SimulationError(f"{self.name}: queue_limit must be >= 1")
        if self.prop_delay < 0:
            raise SimulationError(f"{self.name}: prop_delay must be >= 0")


@dataclass(slots=True)
class Packet:
    flow_id: int
    subflow_id: int
    seq: int
    size: int            # bytes
    sent_at: float
    is_ack: bool = False
    ack_next: int = -1   # cumulative ack (next expected seq) on ACK packets


ENQUEUED = "enqueued"
DROP_LOSS = "dropped_random_loss"
DROP_QUEUE = "dropped_queue_full"


class Channel:
    """One direction of a path: finite FIFO, serialization, wire loss.

    Occupancy counts every packet whose serialization has not completed,
    including the one on the wire.  The random stream is consumed exactly
    once per arriving packet, before the queue check.
    """

    def __init__(self, engine: Engine, config: PathConfig, seed: int, tag: str) -> None:
        self.engine = engine
        self.config = config
        self.tag = tag
        self.rng = random.Random(stream_seed(seed, f"path:{config.name}:{tag}"))
        self.busy_until = 0.0
        self.queue_len = 0
        # conservation bookkeeping
        self.accepted = 0
        self.dropped_loss = 0
        self.dropped_queue = 0
        self.completed = 0

    def send(self, packet: Packet, now: float, deliver) -> str:
        """Attempt transmission; on success `deliver(packet)` fires at the far end."""
        if self.rng.random() < self.config.loss_prob:
            self.dropped_loss += 1
            self.engine.log(f"{now:.9f} loss {self.tag} f{packet.flow_id} s{packet.subflow_id} q{packet.seq}")
            return DROP_LOSS
        if self.queue_len >= self.config.queue_limit:
            self.dropped_queue += 1
            self.engine.log(f"{now:.9f} qdrop {self.tag} f{packet.flow_id} s{packet.subflow_id} q{packet.seq}")
            return DROP_QUEUE
        self.queue_len += 1
        assert self.queue_len <= self.config.queue_limit
        self.accepted += 1
        start = max(self.busy_until, now)
        done = start + packet.size * 8.0 / capacity_at(self.config.capacity_trace, start)
        self.busy_until = done
        self.engine.schedule(done, self._tx_done, packet, deliver)
        return ENQUEUED

    def _tx_done(self, packet: Packet, deliver) -> None:
        self.queue_len -= 1
        self.completed += 1
        self.engine.schedule(self.engine.now + self.config.prop_delay, deliver, packet)


class Path:
    """Full-duplex path: two independent channels built from one config."""

    def __init__(self, engine: Engine, config: PathConfig, seed: int) -> None:
        self.config = config
        self.down = Channel(engine, config, seed, "down")
        self.up = Channel(engine, config, seed, "up")

    def channel(self, direction: str) -> Channel:
        return self.down if direction == "down" else self.up

    @property
    def name(self) -> str:
        return self.config.name
