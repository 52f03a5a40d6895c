"""Learned outer control loop for multipath connections.

Once per decision slot the agent turns per-subflow transport counters into
a 6-feature observation, folds the variable-length observation list
through an LSTM encoder into a fixed vector, maps that to one action per
subflow with a tanh actor, and enforces the resulting windows/schedule on
the connection.  Training is deterministic-policy-gradient style: a replay
buffer, a critic regressed on soft-target Bellman values, and policy
gradients chained critic -> actor -> encoder, with slowly tracking target
copies of all three networks.

Two controller flavours share this machinery: ``hybrid`` lets the
model-based inner loop keep adjusting windows between slots, ``drl`` holds
the enforced windows until the next slot so the agent is the only
controller.
"""

from __future__ import annotations

import math
import random
import time
from dataclasses import dataclass, field

import numpy as np

from .nnet import Adam, LstmCell, Mlp, load_checkpoint, save_checkpoint
from .transport import MptcpConnection, W_MIN, compute_schedule

# fixed feature scales (not running statistics, for reproducibility)
RATE_SCALE = 1e4      # packets/s
RTT_SCALE = 0.3       # seconds
CWND_SCALE = 100.0    # packets

REPLAY_CAPACITY = 2024
GAMMA = 0.97
TAU = 0.005
ACTOR_LR = 0.0009
CRITIC_LR = 0.009
OU_THETA = 0.15
OU_MU = 0.0
OU_SIGMA = 0.2
RATE_FLOOR = 1e-3     # packets/s, keeps log-utility finite on idle subflows

MODE_NULL = "null"
MODE_INFER = "infer"
MODE_TRAIN = "train"


@dataclass(slots=True)
class SubflowObservation:
    sending_rate: float    # packets/s over the slot, retransmissions included
    throughput: float      # delivered packets/s over the slot
    rtt: float             # smoothed rtt at slot end, seconds
    cwnd_delta: float      # window change since previous slot, packets
    schedule_share: float
    rtt_diff: float        # rtt minus the connection-minimum rtt

    def to_vector(self) -> np.ndarray:
        return np.array([
            self.sending_rate / RATE_SCALE,
            self.throughput / RATE_SCALE,
            self.rtt / RTT_SCALE,
            self.cwnd_delta / CWND_SCALE,
            self.schedule_share,
            self.rtt_diff / RTT_SCALE,
        ])


def observation_sequence(observations: list[SubflowObservation]) -> np.ndarray:
    """Stack normalized observations as an LSTM input (time, 1, features)."""
    if not observations:
        raise ValueError("need at least one subflow observation")
    return np.stack([o.to_vector() for o in observations], axis=0)[:, None, :]


def slot_utility(rates: list[float]) -> float:
    """Sum of log delivered rates (packets/s), floored to stay finite."""
    return sum(math.log(max(r, RATE_FLOOR)) for r in rates)


@dataclass(slots=True)
class Transition:
    state: list[SubflowObservation]
    action: np.ndarray
    reward: float
    next_state: list[SubflowObservation]
    # normalized (subflows, features) arrays, cached once on insertion
    state_seq: np.ndarray | None = None
    next_state_seq: np.ndarray | None = None

    def ensure_arrays(self) -> None:
        if self.state_seq is None:
            self.state_seq = np.stack([o.to_vector() for o in self.state])
            self.next_state_seq = np.stack([o.to_vector() for o in self.next_state])


class ReplayBuffer:
    """Fixed-capacity ring buffer; minibatches sample uniformly without
    replacement."""

    def __init__(self, capacity: int = REPLAY_CAPACITY) -> None:
        self.capacity = capacity
        self._items: list[Transition] = []
        self._next = 0

    def add(self, item: Transition) -> None:
        item.ensure_arrays()
        if len(self._items) < self.capacity:
            self._items.append(item)
        else:
            self._items[self._next] = item
        self._next = (self._next + 1) % self.capacity

    def __len__(self) -> int:
        return len(self._items)

    def sample(self, k: int, rng: np.random.Generator) -> list[Transition]:
        if k > len(self._items):
            raise ValueError(f"replay holds {len(self._items)} < minibatch {k}")
        idx = rng.choice(len(self._items), size=k, replace=False)
        return [self._items[i] for i in idx]


class OuNoise:
    """Mean-reverting exploration noise, one state per action dimension."""

    def __init__(self, dim: int, rng: random.Random,
                 theta: float = OU_THETA, mu: float = OU_MU,
                 sigma: float = OU_SIGMA) -> None:
        self.dim = dim
        self.rng = rng
        self.theta = theta
        self.mu = mu
        self.sigma = sigma
        self.x = np.zeros(dim)

    def step(self) -> np.ndarray:
        for i in range(self.dim):
            self.x[i] += self.theta * (self.mu - self.x[i]) \
                + self.sigma * self.rng.gauss(0.0, 1.0)
        return self.x.copy()

    def reset(self) -> None:
        self.x[:] = 0.0


class AgentNetworks:
    """Encoder (LSTM), actor and critic with target copies and optimizers."""

    def __init__(self, action_dim: int, hidden_size: int = 128,
                 obs_dim: int = 6, seed: int = 0,
                 actor_lr: float = ACTOR_LR, critic_lr: float = CRITIC_LR,
                 gamma: float = GAMMA, tau: float = TAU) -> None:
        rng = np.random.default_rng(seed)
        self.action_dim = action_dim
        self.hidden_size = hidden_size
        self.obs_dim = obs_dim
        self.gamma = gamma
        self.tau = tau
        self.encoder = LstmCell(obs_dim, hidden_size, rng)
        self.actor = Mlp([hidden_size, 128, 128, action_dim],
                         ["relu", "relu", "tanh"], rng)
        self.critic = Mlp([hidden_size + action_dim, 128, 128, 1],
                          ["relu", "relu", "linear"], rng)
        # near-zero output layers keep the initial policy unsaturated and the
        # initial value estimates near zero; without this the actor locks
        # into a tanh corner before the critic has any shape
        for net in (self.actor, self.critic):
            out = net.layers[-1]
            out.W = rng.uniform(-3e-3, 3e-3, size=out.W.shape)
            out.b = np.zeros_like(out.b)
            out.gW = np.zeros_like(out.W)
            out.gb = np.zeros_like(out.b)
        self.t_encoder = LstmCell(obs_dim, hidden_size)
        self.t_actor = Mlp([hidden_size, 128, 128, action_dim],
                           ["relu", "relu", "tanh"])
        self.t_critic = Mlp([hidden_size + action_dim, 128, 128, 1],
                            ["relu", "relu", "linear"])
        for online, target in self._pairs():
            for p, q in zip(online.parameters(), target.parameters()):
                q[:] = p
        self.encoder_opt = Adam(self.encoder.parameters(), actor_lr)
        self.actor_opt = Adam(self.actor.parameters(), actor_lr)
        self.critic_opt = Adam(self.critic.parameters(), critic_lr)

    def _pairs(self):
        return [(self.encoder, self.t_encoder),
                (self.actor, self.t_actor),
                (self.critic, self.t_critic)]

    # ------------------------------------------------------------------
    # inference

    def final_state(self, observations: list[SubflowObservation]) -> np.ndarray:
        """Fold subflow observations (in subflow order) into a fixed vector."""
        h, _ = self.encoder.forward_sequence(observation_sequence(observations))
        return h[0]

    def act(self, final_state: np.ndarray, noise: OuNoise | None = None,
            explore: bool = False) -> np.ndarray:
        a = self.actor.forward(final_state[None, :])[0]
        if explore and noise is not None:
            a = np.clip(a + noise.step(), -1.0, 1.0)
        return a

    # ------------------------------------------------------------------
    # training

    def soft_update(self) -> None:
        tau = self.tau
        for online, target in self._pairs():
            for p, q in zip(online.parameters(), target.parameters()):
                q *= 1.0 - tau
                q += tau * p

    def train_step(self, replay: ReplayBuffer, k: int,
                   rng: np.random.Generator) -> dict:
        """One critic regression step and one policy-ascent step on the
        actor and encoder, from a k-sample uniform minibatch."""
        batch = replay.sample(k, rng)
        groups: dict[tuple[int, int], list[Transition]] = {}
        for tr in batch:
            groups.setdefault((len(tr.state), len(tr.next_state)), []).append(tr)

        # -- critic: minimize mean squared TD error against target nets.
        # The online encoder output is treated as a constant here; its own
        # update comes from the policy chain below, so the forward pass (and
        # its caches) can be shared between the two phases.
        self.critic.zero_grads()
        critic_loss = 0.0
        q_sum = 0.0
        prepared = []
        for items in groups.values():
            xs = np.stack([tr.state_seq for tr in items], axis=1)
            xs_next = np.stack([tr.next_state_seq for tr in items], axis=1)
            rewards = np.array([[tr.reward] for tr in items])
            actions = np.stack([tr.action for tr in items], axis=0)
            f_next, _ = self.t_encoder.forward_sequence(xs_next)
            a_next = self.t_actor.forward(f_next)
            q_next = self.t_critic.forward(np.concatenate([f_next, a_next], axis=1))
            y = rewards + self.gamma * q_next
            f_cur, caches = self.encoder.forward_sequence(xs)
            q = self.critic.forward(np.concatenate([f_cur, actions], axis=1))
            err = q - y
            critic_loss += float(np.sum(err * err)) / k
            q_sum += float(np.sum(q))
            self.critic.backward(2.0 * err / k)
            prepared.append((len(items), f_cur, caches))
        self.critic_opt.step(self.critic.gradients())
        self.critic.zero_grads()

        # -- policy: ascend Q(f, actor(f)), chaining through actor and encoder.
        # The action-space gradient is "inverted" at the box bounds: the
        # outward component shrinks as an action nears its bound while the
        # inward component stays full, so the actor can never lock itself
        # into a corner that exploration noise cannot escape.
        self.actor.zero_grads()
        self.encoder.zero_grads()
        for group_size, f_cur, caches in prepared:
            a_pred = self.actor.forward(f_cur)
            self.critic.forward(np.concatenate([f_cur, a_pred], axis=1))
            d_in = self.critic.backward(np.full((group_size, 1), -1.0 / k))
            d_a = d_in[:, self.hidden_size:]
            ascent = d_a < 0.0  # d_a is the descent direction of -Q
            bound_room = np.where(ascent, 1.0 - a_pred, 1.0 + a_pred) * 0.5
            d_f = self.actor.backward(d_a * bound_room)
            self.encoder.backward_sequence(d_f, caches)
        self.actor_opt.step(self.actor.gradients())
        self.encoder_opt.step(self.encoder.gradients())
        self.actor.zero_grads()
        self.encoder.zero_grads()
        self.critic.zero_grads()  # discard gradients from the policy pass

        return {"critic_loss": critic_loss, "mean_q": q_sum / k}

    # ------------------------------------------------------------------
    # persistence

    def _named_modules(self):
        return [("encoder", self.encoder), ("actor", self.actor),
                ("critic", self.critic), ("t_encoder", self.t_encoder),
                ("t_actor", self.t_actor), ("t_critic", self.t_critic)]

    def tensors(self) -> dict[str, np.ndarray]:
        out = {}
        for name, mod in self._named_modules():
            for i, p in enumerate(mod.parameters()):
                out[f"{name}/{i}"] = p
        return out

    def save(self, path: str) -> None:
        save_checkpoint(path, self.tensors(), meta={
            "action_dim": self.action_dim,
            "hidden_size": self.hidden_size,
            "obs_dim": self.obs_dim,
        })

    @classmethod
    def load(cls, path: str) -> "AgentNetworks":
        tensors, meta = load_checkpoint(path)
        nets = cls(action_dim=int(meta["action_dim"]),
                   hidden_size=int(meta["hidden_size"]),
                   obs_dim=int(meta["obs_dim"]))
        for name, mod in nets._named_modules():
            for i, p in enumerate(mod.parameters()):
                key = f"{name}/{i}"
                if tensors[key].shape != p.shape:
                    raise ValueError(f"checkpoint tensor {key} has shape "
                                     f"{tensors[key].shape}, expected {p.shape}")
                p[:] = tensors[key]
        return nets


def enforce_action(conn: MptcpConnection, action: np.ndarray,
                   kappa: float = 1.0) -> tuple[list[float], list[float]]:
    """Map per-subflow actions in [-1, 1] to enforced windows by
    multiplicative scaling 2^(a*kappa), derive the schedule from the
    enforced windows, and apply both to the connection."""
    if len(action) != len(conn.subflows):
        raise ValueError(f"action dimension {len(action)} != "
                         f"{len(conn.subflows)} subflows")
    windows = []
    for sf, a in zip(conn.subflows, action):
        w = sf.cwnd * 2.0 ** (float(a) * kappa)
        windows.append(min(max(w, W_MIN), sf.enforcement_cap()))
    schedule = compute_schedule(windows, [sf.srtt for sf in conn.subflows])
    conn.apply_enforcement(windows, schedule)
    return windows, schedule


@dataclass(slots=True)
class _SubflowSnapshot:
    sent: int = 0
    delivered: int = 0
    cwnd: float = W_MIN


class ConnectionAgent:
    """Slot-clocked daemon bound to one connection.

    Modes: ``null`` always enforces the neutral action (a pure pass-through
    used for equivalence checks), ``infer`` runs the greedy policy from a
    checkpoint, ``train`` adds OU exploration and a train/soft-update step
    per slot.
    """

    def __init__(self, engine, conn: MptcpConnection, nets: AgentNetworks | None,
                 mode: str = MODE_INFER, slot_s: float = 0.1, kappa: float = 1.0,
                 minibatch: int = 32, seed: int = 0,
                 replay: ReplayBuffer | None = None) -> None:
        if mode not in (MODE_NULL, MODE_INFER, MODE_TRAIN):
            raise ValueError(f"unknown agent mode {mode!r}")
        if mode != MODE_NULL and nets is None:
            raise ValueError("infer/train modes need networks")
        self.engine = engine
        self.conn = conn
        self.nets = nets
        self.mode = mode
        self.slot_s = slot_s
        self.kappa = kappa
        self.minibatch = minibatch
        self.replay = replay if replay is not None else ReplayBuffer()
        self.noise = OuNoise(nets.action_dim if nets else len(conn.subflows),
                             random.Random(seed))
        self.sample_rng = np.random.default_rng(seed)
        self._snaps = [_SubflowSnapshot(cwnd=sf.cwnd) for sf in conn.subflows]
        self._prev_obs: list[SubflowObservation] | None = None
        self._prev_action: np.ndarray | None = None
        self.slot_rewards: list[float] = []
        self.critic_losses: list[float] = []
        self.samples_stored = 0
        self.train_steps = 0
        self.compute_seconds = 0.0  # wall-clock spent in agent code

    def start(self) -> None:
        self.engine.schedule(self.engine.now + self.slot_s, self._tick)

    def reset_episode(self) -> None:
        """Forget cross-slot state at an episode boundary (replay persists)."""
        self._prev_obs = None
        self._prev_action = None
        self.noise.reset()
        self.slot_rewards.clear()
        self.critic_losses.clear()

    def rebind(self, engine, conn: MptcpConnection) -> None:
        """Attach to a fresh simulation (new episode), keeping networks,
        replay and exploration RNG state."""
        self.engine = engine
        self.conn = conn
        self._snaps = [_SubflowSnapshot(cwnd=sf.cwnd) for sf in conn.subflows]

    # ------------------------------------------------------------------

    def observe(self) -> tuple[list[SubflowObservation], list[float]]:
        """One observation per subflow over the just-elapsed slot, plus the
        slot-average delivered rates used for the reward."""
        conn = self.conn
        min_rtt = min(sf.srtt for sf in conn.subflows)
        observations = []
        rates = []
        for sf, snap in zip(conn.subflows, self._snaps):
            sending = (sf.total_sent - snap.sent) / self.slot_s
            delivered = (sf.total_delivered - snap.delivered) / self.slot_s
            observations.append(SubflowObservation(
                sending_rate=sending,
                throughput=delivered,
                rtt=sf.srtt,
                cwnd_delta=sf.cwnd - snap.cwnd,
                schedule_share=conn.schedule[sf.index],
                rtt_diff=sf.srtt - min_rtt,
            ))
            rates.append(delivered)
            snap.sent = sf.total_sent
            snap.delivered = sf.total_delivered
            snap.cwnd = sf.cwnd
        return observations, rates

    def compute_reward(self, rates: list[float]) -> float:
        return slot_utility(rates)

    def _tick(self) -> None:
        conn = self.conn
        if conn.packets_to_send == 0 and conn.unacked == 0 \
                and all(not sf.outstanding for sf in conn.subflows):
            # nothing to control on a fully idle connection; the daemon loop
            # body runs on schedule/rate changes only.  Drop the dangling
            # previous observation so idle gaps never enter the replay.
            self._prev_obs = None
            self._prev_action = None
            for sf, snap in zip(conn.subflows, self._snaps):
                snap.sent = sf.total_sent
                snap.delivered = sf.total_delivered
                snap.cwnd = sf.cwnd
            self.engine.schedule(self.engine.now + self.slot_s, self._tick)
            return
        t0 = time.perf_counter()
        observations, rates = self.observe()
        reward = self.compute_reward(rates)
        n = len(self.conn.subflows)
        if self.mode == MODE_NULL:
            action = np.zeros(n)
        else:
            f = self.nets.final_state(observations)
            action = self.nets.act(f, self.noise, explore=(self.mode == MODE_TRAIN))[:n]
        self.compute_seconds += time.perf_counter() - t0
        enforce_action(self.conn, action, self.kappa)
        t1 = time.perf_counter()
        if self._prev_obs is not None:
            self.replay.add(Transition(self._prev_obs, self._prev_action,
                                       reward, observations))
            self.samples_stored += 1
        self._prev_obs = observations
        self._prev_action = action
        self.slot_rewards.append(reward)
        if self.mode == MODE_TRAIN and len(self.replay) >= self.minibatch:
            stats = self.nets.train_step(self.replay, self.minibatch, self.sample_rng)
            self.nets.soft_update()
            self.critic_losses.append(stats["critic_loss"])
            self.train_steps += 1
        self.compute_seconds += time.perf_counter() - t1
        self.engine.schedule(self.engine.now + self.slot_s, self._tick)
