"""Edge-learning traffic generator and its efficiency/fairness metrics.

Each worker cycles download -> compute -> upload against a parameter
server; download and upload move one model replica each, compute is a
jittered timer.  A coordinator applies the synchronization scheme when
uploads finish: bulk-synchronous (everyone waits for the slowest), stale-
synchronous with a staleness bound, or fully asynchronous.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass, field

from .core import Engine
from .transport import MptcpConnection

BSP = "bsp"
SSP = "ssp"
TAP = "tap"

DOWNLOADING = "downloading"
COMPUTING = "computing"
UPLOADING = "uploading"
WAITING = "waiting"


@dataclass(frozen=True)
class ParallelismScheme:
    kind: str
    staleness: int = 1  # SSP bound s; unused for BSP/TAP

    def __post_init__(self) -> None:
        if self.kind not in (BSP, SSP, TAP):
            raise ValueError(f"unknown parallelism scheme {self.kind!r}")
        if self.kind == SSP and self.staleness < 1:
            raise ValueError("SSP staleness must be >= 1")

    def label(self) -> str:
        return f"ssp{self.staleness}" if self.kind == SSP else self.kind


@dataclass(slots=True)
class IterationRecord:
    worker_id: int
    index: int
    start: float   # download start (arrival of the iteration's data flow)
    end: float     # upload completion (departure)

    @property
    def duration(self) -> float:
        return self.end - self.start


class Worker:
    """Phase machine of one edge worker bound to one MPTCP connection."""

    def __init__(self, engine: Engine, worker_id: int, conn: MptcpConnection,
                 model_bytes: int, compute_mean: float, compute_jitter: float,
                 rng: random.Random) -> None:
        if not 0.0 <= compute_jitter < 1.0:
            raise ValueError("compute jitter must be in [0, 1)")
        self.engine = engine
        self.worker_id = worker_id
        self.conn = conn
        self.model_bytes = model_bytes
        self.compute_mean = compute_mean
        self.compute_jitter = compute_jitter
        self.rng = rng
        self.phase = WAITING
        self.iterations_done = 0
        self.records: list[IterationRecord] = []
        self.transfer_spans: list[tuple[float, float]] = []  # active (t0, t1)
        self._iter_start = 0.0
        self._transfer_start = 0.0
        self.coordinator: "Coordinator" | None = None

    def start(self) -> None:
        self.begin_iteration()

    def begin_iteration(self) -> None:
        self.phase = DOWNLOADING
        self._iter_start = self.engine.now
        self._transfer_start = self.engine.now
        self.conn.start_transfer(self.model_bytes, "down", self._download_done)

    def _download_done(self) -> None:
        self.phase = COMPUTING
        self.transfer_spans.append((self._transfer_start, self.engine.now))
        jitter = self.rng.uniform(-self.compute_jitter, self.compute_jitter)
        duration = self.compute_mean * (1.0 + jitter)
        self.engine.schedule(self.engine.now + duration, self._compute_done)

    def _compute_done(self) -> None:
        self.phase = UPLOADING
        self._transfer_start = self.engine.now
        self.conn.start_transfer(self.model_bytes, "up", self._upload_done)

    def _upload_done(self) -> None:
        self.transfer_spans.append((self._transfer_start, self.engine.now))
        self.iterations_done += 1
        self.records.append(IterationRecord(
            self.worker_id, self.iterations_done, self._iter_start, self.engine.now))
        self.phase = WAITING
        if self.coordinator is not None:
            self.coordinator.on_upload_complete(self)
        else:
            self.begin_iteration()


def barrier_check(scheme: ParallelismScheme, workers: list[Worker]) -> list[Worker]:
    """Workers allowed to leave the post-upload barrier right now."""
    waiting = [w for w in workers if w.phase == WAITING]
    if scheme.kind == TAP:
        return waiting
    if scheme.kind == BSP:
        return waiting if len(waiting) == len(workers) else []
    min_done = min(w.iterations_done for w in workers)
    return [w for w in waiting if w.iterations_done - min_done <= scheme.staleness - 1]


class Coordinator:
    """Releases workers from the barrier according to the scheme, keeping
    the staleness invariant asserted on every release."""

    def __init__(self, scheme: ParallelismScheme, workers: list[Worker]) -> None:
        self.scheme = scheme
        self.workers = workers
        for w in workers:
            w.coordinator = self

    def start(self) -> None:
        for w in self.workers:
            w.begin_iteration()

    def on_upload_complete(self, worker: Worker) -> None:
        released = barrier_check(self.scheme, self.workers)
        counts = [w.iterations_done for w in self.workers]
        if self.scheme.kind == BSP and released:
            assert max(counts) - min(counts) == 0
        if self.scheme.kind == SSP:
            assert max(counts) - min(counts) <= self.scheme.staleness
        for w in released:
            w.begin_iteration()


# ----------------------------------------------------------------------
# metrics

def unfairness(iteration_counts: list[int]) -> float:
    """Population standard deviation of per-worker completed iterations."""
    if len(iteration_counts) < 2:
        raise ValueError("unfairness needs at least two workers")
    mean = sum(iteration_counts) / len(iteration_counts)
    var = sum((c - mean) ** 2 for c in iteration_counts) / len(iteration_counts)
    return math.sqrt(var)


def proportional_fairness_check(candidate: list[float], reference: list[float],
                                tol: float = 1e-9) -> bool:
    """True iff sum((candidate - reference) / reference) <= 0, i.e. the
    reference is weakly preferred in aggregate relative change."""
    if len(candidate) != len(reference):
        raise ValueError("allocation vectors must have equal length")
    if any(r <= 0 for r in reference):
        raise ValueError("reference rates must be positive")
    return sum((c - r) / r for c, r in zip(candidate, reference)) <= tol


def water_fill(links: list[tuple[float, set[int]]], n: int) -> list[float]:
    """Max-min fair allocation for n users over shared links by progressive
    filling: all users grow at the same rate; a saturated link freezes its
    members."""
    for u in range(n):
        if not any(u in members for _, members in links):
            raise ValueError(f"user {u} is on no link; allocation unbounded")
    alloc = [0.0] * n
    frozen = [False] * n
    remaining = [cap for cap, _ in links]
    while not all(frozen):
        delta = None
        for li, (cap, members) in enumerate(links):
            active = sum(1 for u in members if not frozen[u])
            if active:
                delta = min(delta, remaining[li] / active) if delta is not None \
                    else remaining[li] / active
        if delta is None:
            break
        for u in range(n):
            if not frozen[u]:
                alloc[u] += delta
        for li, (cap, members) in enumerate(links):
            active = sum(1 for u in members if not frozen[u])
            remaining[li] -= delta * active
            if active and remaining[li] <= 1e-12 * max(cap, 1.0):
                for u in members:
                    frozen[u] = True
    return alloc


def max_min_check(allocation: list[float],
                  links: list[tuple[float, set[int]]]) -> bool:
    """True iff the allocation is feasible and no rate can be raised without
    lowering an already smaller-or-equal rate: compared against the
    water-filling reference, which is the unique max-min point here."""
    n = len(allocation)
    scale = max(cap for cap, _ in links)
    eps = 1e-6 * scale
    for cap, members in links:
        used = sum(allocation[u] for u in members)
        if used > cap + eps:
            raise ValueError("infeasible allocation exceeds a link capacity")
    reference = water_fill(links, n)
    return all(abs(a - r) <= eps for a, r in zip(allocation, reference))


def aggregate_utility(rates: list[float]) -> float:
    """Sum of log rates: the quantity proportional fairness maximizes."""
    if any(r <= 0 for r in rates):
        raise ValueError("aggregate utility needs positive rates")
    return sum(math.log(r) for r in rates)


def throughput_fluctuation(series: list[float]) -> float:
    """Mean absolute change between consecutive samples."""
    if len(series) < 2:
        raise ValueError("fluctuation needs at least two samples")
    return sum(abs(b - a) for a, b in zip(series, series[1:])) / (len(series) - 1)


@dataclass
class RunMetrics:
    scheme: str
    controller: str
    seed: int
    mean_iter_time_s: float
    unfairness_iters: float
    mean_fluct_pps: float
    straggler_mean_tput_pps: float
    aggregate_utility: float
    iteration_counts: list[int] = field(default_factory=list)
    mean_slot_reward: float = float("nan")
    agent_compute_s_per_sim_s: float = 0.0

    CSV_HEADER = ("scheme,controller,seed,mean_iter_time_s,unfairness_iters,"
                  "mean_fluct_pps,straggler_mean_tput_pps,aggregate_utility")

    def csv_row(self) -> str:
        return (f"{self.scheme},{self.controller},{self.seed},"
                f"{self.mean_iter_time_s:.6f},{self.unfairness_iters:.6f},"
                f"{self.mean_fluct_pps:.6f},{self.straggler_mean_tput_pps:.6f},"
                f"{self.aggregate_utility:.6f}")
