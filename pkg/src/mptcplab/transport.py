"""TCP/MPTCP endpoint state machines.

One `MptcpConnection` owns the sender- and receiver-side state of every
subflow.  Data packets consume path capacity; ACKs return after the pure
propagation delay of the same path.  Loss detection is 3 duplicate ACKs
(NewReno-style recovery, one decrease per window) with a retransmit
timeout of max(1 s, 4*srtt) as backstop.  There is no slow start: flows
begin at the minimum window and rely on the controller's increase rule,
which keeps the compared controllers on an equal footing.

Controllers:
  * ``lia``    - coupled linked-increases: per-ACK increase min(1/w, alpha).
  * ``hybrid`` - LIA inner loop; an external agent periodically resets the
                 windows and schedule via ``apply_enforcement``.
  * ``drl``    - windows are held at the last enforced values between
                 enforcement slots (no ACK increase, no loss decrease).
  * ``cubic``  - standard single-path CUBIC, used for competing flows.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .core import Engine, Packet, Path, SimulationError

LIA = "lia"
HYBRID = "hybrid"
DRL = "drl"
CUBIC = "cubic"

W_MIN = 2.0                 # packets
CUBIC_C = 0.4               # packets / s^3
CUBIC_BETA = 0.7
SRTT_GAIN = 0.125
DUP_ACK_THRESHOLD = 3
ACK_BYTES = 40


def lia_alpha(windows: list[float], rtts: list[float]) -> float:
    """Coupled-increase cap: max_j(w_j/rtt_j^2) / (sum_j w_j/rtt_j)^2."""
    if not windows or len(windows) != len(rtts):
        raise ValueError("lia_alpha needs matching non-empty window/rtt vectors")
    if any(r <= 0 for r in rtts):
        raise ValueError("lia_alpha needs positive rtts")
    num = max(w / (r * r) for w, r in zip(windows, rtts))
    den = sum(w / r for w, r in zip(windows, rtts))
    return num / (den * den)


def compute_schedule(windows: list[float], rtts: list[float]) -> list[float]:
    """Per-subflow send probabilities proportional to the rates w_i/rtt_i."""
    if not windows or len(windows) != len(rtts):
        raise ValueError("compute_schedule needs matching non-empty vectors")
    if any(r <= 0 for r in rtts):
        raise ValueError("compute_schedule needs positive rtts")
    rates = [w / r for w, r in zip(windows, rtts)]
    total = sum(rates)
    if total <= 0:
        raise ValueError("compute_schedule: all-zero windows cannot be normalized")
    return [x / total for x in rates]


@dataclass
class CubicState:
    w_max: float
    epoch_start: float
    k_cubic: float


def cubic_reset(state: CubicState, cwnd: float, now: float) -> None:
    """Start a new epoch after a loss (or at flow start) from window `cwnd`."""
    state.w_max = cwnd
    state.epoch_start = now
    state.k_cubic = ((state.w_max * (1.0 - CUBIC_BETA)) / CUBIC_C) ** (1.0 / 3.0)


def cubic_window(state: CubicState, now: float, srtt: float) -> float:
    """W(t) = C*(t - epoch_start - K)^3 + w_max, clamped to the minimum window.

    `srtt` is accepted for interface parity with RTT-aware CUBIC variants;
    the plain RFC 8312 concave/convex curve does not use it.
    """
    t = now - state.epoch_start
    w = CUBIC_C * (t - state.k_cubic) ** 3 + state.w_max
    return max(W_MIN, w)


def apportion(batch: int, weights: list[float], caps: list[int]) -> list[int]:
    """Largest-remainder split of `batch` across slots in proportion to
    `weights`, never exceeding per-slot `caps`.  Overflow from capped slots
    spills to the remaining slots in remainder order; ties break by index,
    so the result is deterministic.
    """
    n = len(weights)
    total_w = sum(weights)
    if total_w <= 0:
        weights = [1.0] * n
        total_w = float(n)
    quotas = [batch * w / total_w for w in weights]
    counts = [min(int(math.floor(q)), c) for q, c in zip(quotas, caps)]
    left = batch - sum(counts)
    order = sorted(range(n), key=lambda i: (-(quotas[i] - math.floor(quotas[i])), i))
    while left > 0:
        progressed = False
        for i in order:
            if left == 0:
                break
            if counts[i] < caps[i]:
                counts[i] += 1
                left -= 1
                progressed = True
        if not progressed:
            break
    return counts


class SubflowState:
    """Sender and receiver state of one subflow, pinned to one path."""

    __slots__ = (
        "index", "path", "cwnd", "srtt", "_srtt_seeded", "rate_estimate",
        "next_seq", "ack_next", "outstanding", "dup_acks", "recovery_point",
        "total_sent", "total_delivered", "rx_expected", "rx_ooo", "rx_count",
        "_rate_pending", "_rate_last_t", "rto_deadline", "_rto_scheduled",
        "cubic", "deliver_cb",
    )

    def __init__(self, index: int, path: Path, packet_bytes: int) -> None:
        self.index = index
        self.path = path
        self.cwnd = W_MIN
        # pre-sample estimate: serialization + both propagation legs
        ser = packet_bytes * 8.0 / path.config.capacity_trace[0][1]
        self.srtt = 2.0 * path.config.prop_delay + ser
        self._srtt_seeded = False
        self.rate_estimate = 0.0
        self.next_seq = 0
        self.ack_next = 0
        self.outstanding: set[int] = set()
        self.dup_acks = 0
        self.recovery_point: int | None = None
        self.total_sent = 0
        self.total_delivered = 0
        self.rx_expected = 0
        self.rx_ooo: set[int] = set()
        self.rx_count = 0
        self._rate_pending = 0
        self._rate_last_t = 0.0
        self.rto_deadline = math.inf
        self._rto_scheduled = False
        self.cubic: CubicState | None = None
        self.deliver_cb = None

    @property
    def in_flight(self) -> int:
        return len(self.outstanding)

    def observe_rtt(self, sample: float) -> None:
        if self._srtt_seeded:
            self.srtt += SRTT_GAIN * (sample - self.srtt)
        else:
            self.srtt = sample
            self._srtt_seeded = True

    def observe_delivery(self, pkts: int, now: float) -> None:
        # EWMA of delivered rate with a one-RTT time constant
        self._rate_pending += pkts
        dt = now - self._rate_last_t
        if dt > 0:
            inst = self._rate_pending / dt
            a = 1.0 - math.exp(-dt / max(self.srtt, 1e-6))
            self.rate_estimate += a * (inst - self.rate_estimate)
            self._rate_last_t = now
            self._rate_pending = 0

    def enforcement_cap(self) -> float:
        """Upper window bound for agent enforcement: 4x the estimated
        bandwidth-delay product, never below the inner loop's own value."""
        return max(4.0 * self.rate_estimate * self.srtt, self.cwnd)


class MptcpConnection:
    """Multipath sender with per-subflow windows and a derived schedule.

    The schedule is always the rate-proportional probability vector of the
    current windows; an enforcement resets the windows (and therefore the
    schedule) atomically at a slot boundary, after which the inner loop's
    fine adjustment carries both forward.
    """

    def __init__(self, engine: Engine, flow_id: int, paths: list[Path],
                 controller: str = LIA, packet_bytes: int = 1500) -> None:
        if controller not in (LIA, HYBRID, DRL, CUBIC):
            raise SimulationError(f"unknown controller {controller!r}")
        if controller == CUBIC and len(paths) != 1:
            raise SimulationError("cubic is single-path only")
        if len({p.name for p in paths}) != len(paths):
            raise SimulationError("a connection may use each path at most once")
        self.engine = engine
        self.flow_id = flow_id
        self.controller = controller
        self.packet_bytes = packet_bytes
        self.subflows = [SubflowState(i, p, packet_bytes) for i, p in enumerate(paths)]
        for sf in self.subflows:
            sf.deliver_cb = self._make_deliver(sf.index)
            sf._rate_last_t = engine.now
            if controller == CUBIC:
                sf.cubic = CubicState(0.0, 0.0, 0.0)
                cubic_reset(sf.cubic, sf.cwnd, engine.now)
        self.direction = "up"
        self.schedule = [1.0 / len(paths)] * len(paths)
        self.packets_to_send: int | None = 0
        self.unacked = 0
        self.on_complete = None
        self.completed_transfers = 0

    # ------------------------------------------------------------------
    # application interface

    def start_transfer(self, nbytes: int, direction: str, on_complete=None) -> None:
        if self.unacked or self.packets_to_send:
            raise SimulationError(f"flow {self.flow_id}: previous transfer still active")
        npkts = max(1, math.ceil(nbytes / self.packet_bytes))
        self.direction = direction
        self.packets_to_send = npkts
        self.unacked = npkts
        self.on_complete = on_complete
        self.dispatch()

    def start_unbounded(self, direction: str) -> None:
        """Continuous transfer that never completes (competitor traffic)."""
        self.direction = direction
        self.packets_to_send = None
        self.unacked = 0
        self.dispatch()

    # ------------------------------------------------------------------
    # sending

    def dispatch(self) -> None:
        """Send as much as window space allows, striped against the schedule."""
        if self.packets_to_send == 0:
            return
        subflows = self.subflows
        spaces = [max(0, int(math.floor(sf.cwnd)) - len(sf.outstanding)) for sf in subflows]
        total_space = sum(spaces)
        if total_space == 0:
            return
        batch = total_space if self.packets_to_send is None \
            else min(total_space, self.packets_to_send)
        if len(subflows) > 1:
            self.schedule = compute_schedule(
                [sf.cwnd for sf in subflows], [sf.srtt for sf in subflows])
        counts = apportion(batch, self.schedule, spaces)
        now = self.engine.now
        for sf, n in zip(subflows, counts):
            if n == 0:
                continue
            assert len(sf.outstanding) + n <= math.ceil(sf.cwnd)
            channel = sf.path.channel(self.direction)
            for _ in range(n):
                seq = sf.next_seq
                sf.next_seq += 1
                sf.outstanding.add(seq)
                sf.total_sent += 1
                if self.packets_to_send is not None:
                    self.packets_to_send -= 1
                pkt = Packet(self.flow_id, sf.index, seq, self.packet_bytes, now)
                self.engine.log(f"{now:.9f} send f{self.flow_id} s{sf.index} q{seq}")
                channel.send(pkt, now, sf.deliver_cb)
            self._arm_rto(sf)

    def _make_deliver(self, index: int):
        def deliver(pkt: Packet) -> None:
            self._on_data_arrival(index, pkt)
        return deliver

    def _retransmit(self, sf: SubflowState) -> None:
        seq = sf.ack_next
        if seq not in sf.outstanding:
            return
        now = self.engine.now
        sf.total_sent += 1
        pkt = Packet(self.flow_id, sf.index, seq, self.packet_bytes, now)
        self.engine.log(f"{now:.9f} rexmit f{self.flow_id} s{sf.index} q{seq}")
        sf.path.channel(self.direction).send(pkt, now, sf.deliver_cb)
        self._arm_rto(sf)

    # ------------------------------------------------------------------
    # receiver side (ACKs return after the pure propagation delay)

    def _on_data_arrival(self, index: int, pkt: Packet) -> None:
        sf = self.subflows[index]
        sf.rx_count += 1
        s = pkt.seq
        if s == sf.rx_expected:
            sf.rx_expected += 1
            while sf.rx_expected in sf.rx_ooo:
                sf.rx_ooo.remove(sf.rx_expected)
                sf.rx_expected += 1
        elif s > sf.rx_expected:
            sf.rx_ooo.add(s)
        now = self.engine.now
        self.engine.log(f"{now:.9f} recv f{self.flow_id} s{index} q{s} e{sf.rx_expected}")
        ack = Packet(self.flow_id, index, s, ACK_BYTES, pkt.sent_at,
                     is_ack=True, ack_next=sf.rx_expected)
        self.engine.schedule(now + sf.path.config.prop_delay, self._on_ack, index, ack)

    # ------------------------------------------------------------------
    # ACK clock

    def _on_ack(self, index: int, ack: Packet) -> None:
        sf = self.subflows[index]
        now = self.engine.now
        sf.observe_rtt(now - ack.sent_at)
        self.engine.log(f"{now:.9f} ack f{self.flow_id} s{index} a{ack.ack_next}")
        if ack.ack_next > sf.ack_next:
            advanced = ack.ack_next - sf.ack_next
            for q in range(sf.ack_next, ack.ack_next):
                sf.outstanding.discard(q)
            sf.ack_next = ack.ack_next
            sf.total_delivered += advanced
            sf.observe_delivery(advanced, now)
            sf.dup_acks = 0
            if sf.recovery_point is not None:
                if sf.ack_next >= sf.recovery_point:
                    sf.recovery_point = None
                else:
                    self._retransmit(sf)  # partial ack: next hole, no new decrease
            self._increase_window(sf)
            self._arm_rto(sf)
            if self.unacked:
                self.unacked -= min(advanced, self.unacked)
                if self.unacked == 0 and self.packets_to_send == 0:
                    self._transfer_done()
                    return
        else:
            if sf.outstanding:
                sf.dup_acks += 1
                if sf.dup_acks >= DUP_ACK_THRESHOLD and sf.recovery_point is None:
                    self.on_loss(index)
                    sf.recovery_point = sf.next_seq
                    sf.dup_acks = 0
                    self._retransmit(sf)
        self.dispatch()

    def _increase_window(self, sf: SubflowState) -> None:
        if self.controller == CUBIC:
            sf.cwnd = cubic_window(sf.cubic, self.engine.now, sf.srtt)
        elif self.controller in (LIA, HYBRID):
            self.lia_on_ack(sf.index)
        # drl: window held until the next enforcement

    def lia_on_ack(self, index: int) -> None:
        """Coupled additive increase on subflow `index`."""
        sf = self.subflows[index]
        alpha = lia_alpha([s.cwnd for s in self.subflows],
                          [s.srtt for s in self.subflows])
        sf.cwnd += min(1.0 / sf.cwnd, alpha)

    def on_loss(self, index: int) -> None:
        """Multiplicative decrease after a loss indication on subflow `index`."""
        sf = self.subflows[index]
        if self.controller in (LIA, HYBRID):
            sf.cwnd = max(W_MIN, sf.cwnd / 2.0)
        elif self.controller == CUBIC:
            w = sf.cwnd
            sf.cwnd = max(W_MIN, CUBIC_BETA * w)
            cubic_reset(sf.cubic, w, self.engine.now)
        # drl: window held

    # ------------------------------------------------------------------
    # retransmit timeout: max(1 s, 4*srtt), lazily rescheduled

    def _arm_rto(self, sf: SubflowState) -> None:
        if not sf.outstanding:
            sf.rto_deadline = math.inf
            return
        sf.rto_deadline = self.engine.now + max(1.0, 4.0 * sf.srtt)
        if not sf._rto_scheduled:
            sf._rto_scheduled = True
            self.engine.schedule(sf.rto_deadline, self._rto_check, sf)

    def _rto_check(self, sf: SubflowState) -> None:
        sf._rto_scheduled = False
        if not sf.outstanding or sf.rto_deadline == math.inf:
            return
        now = self.engine.now
        if now < sf.rto_deadline:
            sf._rto_scheduled = True
            self.engine.schedule(sf.rto_deadline, self._rto_check, sf)
            return
        self.engine.log(f"{now:.9f} rto f{self.flow_id} s{sf.index} q{sf.ack_next}")
        self.on_loss(sf.index)
        sf.recovery_point = sf.next_seq
        sf.dup_acks = 0
        self._retransmit(sf)
        self.dispatch()

    def _transfer_done(self) -> None:
        self.completed_transfers += 1
        for sf in self.subflows:
            sf.rto_deadline = math.inf
        cb = self.on_complete
        self.on_complete = None
        if cb is not None:
            cb()

    # ------------------------------------------------------------------
    # outer-loop enforcement

    def apply_enforcement(self, windows: list[float], schedule: list[float]) -> None:
        """Adopt enforced windows and schedule; the inner loop continues its
        fine adjustment from these values until the next enforcement."""
        if len(windows) != len(self.subflows) or len(schedule) != len(self.subflows):
            raise SimulationError("enforcement dimension mismatch")
        if abs(sum(schedule) - 1.0) > 1e-9 or any(h < 0 for h in schedule):
            raise SimulationError("enforced schedule is not a probability vector")
        for sf, w in zip(self.subflows, windows):
            sf.cwnd = min(max(w, W_MIN), sf.enforcement_cap())
        self.schedule = list(schedule)
        self.dispatch()
