"""Scenario execution and agent training.

`run_scenario` wires paths, workers, competitors and per-connection agents
onto one engine, runs it, and returns metrics plus time-series rows.
`train_agent` drives randomized single-connection episodes drawn from the
tuned emulation ranges and returns per-episode training logs and the
trained networks.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass, field

import numpy as np

from .agent import (
    AgentNetworks, ConnectionAgent, MODE_INFER, MODE_NULL, MODE_TRAIN,
    RATE_FLOOR,
)
from .core import Engine, Path, PathConfig, stream_seed
from .scenario import Scenario
from .transport import CUBIC, DRL, HYBRID, LIA, MptcpConnection
from .workload import (
    DOWNLOADING, UPLOADING, Coordinator, RunMetrics, Worker,
    aggregate_utility, unfairness,
)

TIMESERIES_HEADER = "t_s,flow_id,subflow_id,rate_pps,cwnd_pkts,rtt_s"
TRAIN_LOG_HEADER = "episode,steps,mean_reward,critic_loss"


class Sampler:
    """Periodic per-subflow rate/cwnd/rtt rows plus coarser per-flow rate
    series used for the fluctuation metrics."""

    def __init__(self, engine: Engine, conns: list[MptcpConnection],
                 interval: float, fluct_interval: float) -> None:
        self.engine = engine
        self.conns = conns
        self.interval = interval
        self.fluct_interval = fluct_interval
        self.rows: list[str] = []
        self.flow_series: dict[int, list[float]] = {c.flow_id: [] for c in conns}
        self._fine = {(c.flow_id, sf.index): 0 for c in conns for sf in c.subflows}
        self._coarse = {c.flow_id: 0 for c in conns}

    def start(self) -> None:
        self.engine.schedule(self.engine.now + self.interval, self._sample_fine)
        self.engine.schedule(self.engine.now + self.fluct_interval, self._sample_coarse)

    def _sample_fine(self) -> None:
        t = self.engine.now
        for conn in self.conns:
            for sf in conn.subflows:
                key = (conn.flow_id, sf.index)
                rate = (sf.total_delivered - self._fine[key]) / self.interval
                self._fine[key] = sf.total_delivered
                self.rows.append(f"{t:.3f},{conn.flow_id},{sf.index},"
                                 f"{rate:.3f},{sf.cwnd:.6f},{sf.srtt:.6f}")
        self.engine.schedule(t + self.interval, self._sample_fine)

    def _sample_coarse(self) -> None:
        t = self.engine.now
        for conn in self.conns:
            total = sum(sf.total_delivered for sf in conn.subflows)
            rate = (total - self._coarse[conn.flow_id]) / self.fluct_interval
            self._coarse[conn.flow_id] = total
            self.flow_series[conn.flow_id].append(rate)
        self.engine.schedule(t + self.fluct_interval, self._sample_coarse)


@dataclass
class RunResult:
    metrics: RunMetrics
    timeseries: list[str]
    flow_series: dict[int, list[float]]
    straggler_id: int
    straggler_series: list[float]
    iteration_counts: list[int]
    trace: list[str] | None = None
    agents: list = field(default_factory=list)

    def write_outputs(self, out_dir: str) -> None:
        import os
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "metrics.csv"), "w") as fh:
            fh.write(RunMetrics.CSV_HEADER + "\n" + self.metrics.csv_row() + "\n")
        with open(os.path.join(out_dir, "timeseries.csv"), "w") as fh:
            fh.write(TIMESERIES_HEADER + "\n")
            fh.write("\n".join(self.timeseries))
            fh.write("\n")
        with open(os.path.join(out_dir, "straggler.csv"), "w") as fh:
            fh.write("interval,rate_pps\n")
            for i, r in enumerate(self.straggler_series):
                fh.write(f"{i},{r:.3f}\n")


def _resolve_networks(scenario: Scenario, networks: AgentNetworks | None,
                      action_dim: int) -> AgentNetworks | None:
    if networks is not None:
        return networks
    if scenario.agent.checkpoint:
        return AgentNetworks.load(scenario.agent.checkpoint)
    return AgentNetworks(action_dim=action_dim,
                         seed=stream_seed(scenario.seed, "nets"))


def run_scenario(scenario: Scenario, networks: AgentNetworks | None = None,
                 collect_trace: bool = False) -> RunResult:
    engine = Engine()
    if collect_trace:
        engine.enable_trace()
    paths = {spec.name: Path(engine,
                             PathConfig(spec.name, spec.capacity_trace,
                                        spec.prop_delay, spec.loss_prob,
                                        spec.queue_limit),
                             seed=scenario.seed)
             for spec in scenario.paths}

    agent_workers = [w for w in scenario.workers if w.controller in (HYBRID, DRL)]
    mode = scenario.agent.mode
    shared_nets = None
    if agent_workers and mode == MODE_INFER:
        dim = max(len(w.paths) for w in agent_workers)
        shared_nets = _resolve_networks(scenario, networks, dim)

    workers: list[Worker] = []
    agents: list[ConnectionAgent] = []
    conns: list[MptcpConnection] = []
    for wid, spec in enumerate(scenario.workers):
        conn = MptcpConnection(engine, wid, [paths[p] for p in spec.paths],
                               spec.controller, scenario.packet_bytes)
        conns.append(conn)
        worker = Worker(engine, wid, conn, spec.model_bytes, spec.compute_mean,
                        spec.compute_jitter,
                        random.Random(stream_seed(scenario.seed, f"compute:{wid}")))
        workers.append(worker)
        if spec.controller in (HYBRID, DRL):
            if mode == MODE_NULL:
                nets = None
            elif mode == MODE_TRAIN:
                # independent learner per connection
                nets = networks if (networks is not None and len(agent_workers) == 1) \
                    else AgentNetworks(action_dim=len(spec.paths),
                                       seed=stream_seed(scenario.seed, f"nets:{wid}"))
            else:
                nets = shared_nets
            if nets is not None and nets.action_dim < len(spec.paths):
                raise ValueError(f"checkpoint action dimension {nets.action_dim} "
                                 f"< {len(spec.paths)} subflows of worker {wid}")
            agent = ConnectionAgent(engine, conn, nets, mode=mode,
                                    slot_s=scenario.agent.slot_s,
                                    kappa=scenario.agent.kappa,
                                    minibatch=scenario.agent.minibatch,
                                    seed=stream_seed(scenario.seed, f"agent:{wid}"))
            agent.start()
            agents.append(agent)

    for ci, spec in enumerate(scenario.competitors):
        conn = MptcpConnection(engine, 1000 + ci, [paths[spec.path]], CUBIC,
                               scenario.packet_bytes)
        conn.start_unbounded(spec.direction)
        conns.append(conn)

    sampler = Sampler(engine, conns, scenario.sample_interval, scenario.fluct_interval)
    sampler.start()
    Coordinator(scenario.scheme, workers).start()
    engine.run(scenario.duration)

    return _assemble(scenario, workers, agents, sampler, engine)


def _assemble(scenario: Scenario, workers: list[Worker],
              agents: list[ConnectionAgent], sampler: Sampler,
              engine: Engine) -> RunResult:
    duration = scenario.duration
    records = [r for w in workers for r in w.records]
    mean_iter = (sum(r.duration for r in records) / len(records)
                 if records else float("nan"))
    counts = [w.iterations_done for w in workers]
    unf = unfairness(counts) if len(counts) >= 2 else 0.0

    # fluctuation is measured while a flow is actively transferring: rate
    # changes across bins that lie fully inside one transfer span, so the
    # download/compute/upload duty cycle does not masquerade as jitter
    bin_s = scenario.fluct_interval
    diffs: list[float] = []
    for w in workers:
        series = sampler.flow_series[w.worker_id]
        spans = list(w.transfer_spans)
        if w.phase in (DOWNLOADING, UPLOADING):
            spans.append((w._transfer_start, duration))
        for t0, t1 in spans:
            first = math.ceil(t0 / bin_s)
            last = math.floor(t1 / bin_s) - 1  # bin i covers [i, i+1) * bin_s
            run = [series[i] for i in range(first, last + 1) if i < len(series)]
            diffs.extend(abs(b - a) for a, b in zip(run, run[1:]))
    mean_fluct = sum(diffs) / len(diffs) if diffs else float("nan")

    straggler_id = min(range(len(workers)), key=lambda i: (counts[i], i))
    straggler_series = sampler.flow_series[workers[straggler_id].worker_id]
    straggler_mean = (sum(straggler_series) / len(straggler_series)
                      if straggler_series else 0.0)

    rates = []
    for w in workers:
        delivered = sum(sf.total_delivered for sf in w.conn.subflows)
        rates.append(max(delivered / duration, RATE_FLOOR))
    utility = aggregate_utility(rates)

    slot_rewards = [r for a in agents for r in a.slot_rewards]
    mean_reward = (sum(slot_rewards) / len(slot_rewards)
                   if slot_rewards else float("nan"))
    agent_compute = sum(a.compute_seconds for a in agents) / duration

    controller = workers[0].conn.controller if workers else "none"
    metrics = RunMetrics(
        scheme=scenario.scheme.label(),
        controller=controller,
        seed=scenario.seed,
        mean_iter_time_s=mean_iter,
        unfairness_iters=unf,
        mean_fluct_pps=mean_fluct,
        straggler_mean_tput_pps=straggler_mean,
        aggregate_utility=utility,
        iteration_counts=counts,
        mean_slot_reward=mean_reward,
        agent_compute_s_per_sim_s=agent_compute,
    )
    return RunResult(metrics=metrics, timeseries=sampler.rows,
                     flow_series=sampler.flow_series,
                     straggler_id=straggler_id,
                     straggler_series=straggler_series,
                     iteration_counts=counts,
                     trace=engine.trace, agents=agents)


# ----------------------------------------------------------------------
# training

TRAIN_CAPACITY_MBPS = (4.0, 128.0)
TRAIN_RTT_S = (0.003, 0.300)
TRAIN_QUEUE = (20, 500)
TRAIN_LOSS_MAX = 0.03
DEFAULT_LINK_SCALE = 8.0     # desk-scale divider on drawn capacities
DEFAULT_EPISODE_SLOTS = 250
HYBRID_SLOT_S = 0.1
DRL_SLOT_S = 0.02            # a pure learned controller must react at
                             # transport timescales; no inner loop covers it


def default_slot(controller: str) -> float:
    return DRL_SLOT_S if controller == DRL else HYBRID_SLOT_S


@dataclass
class EpisodeLog:
    episode: int
    steps: int
    mean_reward: float
    critic_loss: float

    def csv_row(self) -> str:
        loss = f"{self.critic_loss:.6f}" if not math.isnan(self.critic_loss) else "nan"
        return f"{self.episode},{self.steps},{self.mean_reward:.6f},{loss}"


@dataclass
class TrainResult:
    controller: str
    sessions: list[list[EpisodeLog]]
    networks: AgentNetworks

    def session_curve(self, s: int) -> list[float]:
        return [e.mean_reward for e in self.sessions[s]]

    def mean_curve(self) -> list[float]:
        n = min(len(s) for s in self.sessions)
        return [sum(s[i].mean_reward for s in self.sessions) / len(self.sessions)
                for i in range(n)]

    def write_outputs(self, out_dir: str) -> None:
        import os
        os.makedirs(out_dir, exist_ok=True)
        for i, episodes in enumerate(self.sessions):
            with open(os.path.join(out_dir, f"train_{self.controller}_s{i}.csv"),
                      "w") as fh:
                fh.write(TRAIN_LOG_HEADER + "\n")
                fh.write("\n".join(e.csv_row() for e in episodes))
                fh.write("\n")
        self.networks.save(os.path.join(out_dir, f"checkpoint_{self.controller}.npz"))


def moving_average(xs: list[float], window: int = 20) -> list[float]:
    out = []
    acc = 0.0
    for i, x in enumerate(xs):
        acc += x
        if i >= window:
            acc -= xs[i - window]
        out.append(acc / min(i + 1, window))
    return out


def _log_uniform(rng: random.Random, lo: float, hi: float) -> float:
    return math.exp(rng.uniform(math.log(lo), math.log(hi)))


def draw_training_paths(rng: random.Random,
                        link_scale: float = DEFAULT_LINK_SCALE,
                        episode_len_s: float = 25.0) -> list[PathConfig]:
    """Two paths drawn from the tuned emulation ranges, desk-scaled in
    capacity by `link_scale`.

    Half the episodes pair equal-capacity paths (the evaluation topologies
    are symmetric) and half draw them independently; one path carries a
    square-wave capacity drop with probability one half, so the stream
    contains the time-varying bottlenecks the controller exists for.
    """
    cap0 = _log_uniform(rng, *TRAIN_CAPACITY_MBPS)
    cap1 = cap0 if rng.random() < 0.5 else _log_uniform(rng, *TRAIN_CAPACITY_MBPS)
    wave_path = rng.randrange(2) if rng.random() < 0.5 else -1
    specs = []
    for i, cap in enumerate((cap0, cap1)):
        cap_bps = cap * 1e6 / link_scale
        if i == wave_path:
            period = rng.uniform(2.0, 8.0)
            factor = rng.uniform(0.2, 0.5)
            trace = []
            t, level = 0.0, True
            while t < episode_len_s:
                trace.append((t, cap_bps if level else cap_bps * factor))
                t += period / 2.0
                level = not level
        else:
            trace = [(0.0, cap_bps)]
        rtt = _log_uniform(rng, *TRAIN_RTT_S)
        queue = rng.randint(*TRAIN_QUEUE)
        loss = rng.uniform(0.0, TRAIN_LOSS_MAX)
        specs.append(PathConfig(name=f"t{i}", capacity_trace=trace,
                                prop_delay=rtt / 2.0, loss_prob=loss,
                                queue_limit=queue))
    return specs


def train_agent(controller: str = HYBRID, sessions: int = 3,
                session_samples: int = 30000, base_seed: int = 0,
                slot_s: float | None = None,
                episode_slots: int = DEFAULT_EPISODE_SLOTS,
                link_scale: float = DEFAULT_LINK_SCALE,
                kappa: float = 1.0, minibatch: int = 32,
                progress=None) -> TrainResult:
    """Train the agent over randomized single-connection scenarios.

    Each session starts from fresh networks and a fresh replay buffer and
    stores `session_samples` transitions; episodes are `episode_slots`
    decision slots on a freshly drawn two-path network.  The returned
    networks are the final session's.
    """
    if controller not in (HYBRID, DRL):
        raise ValueError("training applies to hybrid or drl controllers")
    slot = slot_s if slot_s is not None else default_slot(controller)
    sessions_out: list[list[EpisodeLog]] = []
    nets = None
    for s in range(sessions):
        # sessions repeat the same scenario stream from fresh weights; the
        # scenario and initialization seeds are controller-independent so an
        # ablation comparison sees identical conditions
        nets = AgentNetworks(action_dim=2,
                             seed=stream_seed(base_seed, f"nets:{s}"))
        agent: ConnectionAgent | None = None
        episodes: list[EpisodeLog] = []
        episode = 0
        while agent is None or agent.samples_stored < session_samples:
            ep_seed = stream_seed(base_seed, f"ep:{episode}")
            rng = random.Random(ep_seed)
            engine = Engine()
            paths = [Path(engine, cfg, seed=ep_seed)
                     for cfg in draw_training_paths(
                         rng, link_scale, episode_len_s=episode_slots * slot)]
            conn = MptcpConnection(engine, 0, paths, controller)
            conn.start_unbounded("up")
            if agent is None:
                agent = ConnectionAgent(
                    engine, conn, nets, mode=MODE_TRAIN, slot_s=slot,
                    kappa=kappa, minibatch=minibatch,
                    seed=stream_seed(base_seed, f"agent:{s}"))
            else:
                agent.rebind(engine, conn)
                agent.reset_episode()
            agent.start()
            engine.run(episode_slots * slot)
            losses = [l for l in agent.critic_losses]
            episodes.append(EpisodeLog(
                episode=episode,
                steps=len(agent.slot_rewards),
                mean_reward=sum(agent.slot_rewards) / len(agent.slot_rewards),
                critic_loss=(sum(losses) / len(losses)) if losses else float("nan"),
            ))
            if progress is not None:
                progress(controller, s, episodes[-1])
            episode += 1
        sessions_out.append(episodes)
    return TrainResult(controller=controller, sessions=sessions_out, networks=nets)
