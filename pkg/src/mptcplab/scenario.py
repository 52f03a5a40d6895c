"""Scenario configuration: schema, YAML loader and validation.

A scenario file is a nested key-value document (YAML).  Validation errors
carry the offending field path; values outside the emulation ranges the
presets were tuned for (4-128 Mbps capacity, 3-300 ms RTT, 20-500 packet
buffers) only produce warnings, since the ranges are defaults rather than
hard limits.

Schema (see README for the full field reference)::

    duration_s: 60.0
    seed: 1
    packet_bytes: 1500          # optional
    transfer_scale: 100.0       # optional, divides model sizes (desk scale)
    paths:
      - name: shared
        capacity_mbps: 20.0     # or trace: [[t_s, mbps], ...] or trace_file
        prop_delay_ms: 50.0
        loss: 0.03
        queue_limit_pkts: 100
    workers:
      - controller: hybrid      # lia | hybrid | drl
        paths: [shared, access]
        model_mb: 600.0         # pre-scale size
        compute_mean_s: 0.5
        compute_jitter: 0.1
        count: 3                # optional shorthand for identical workers
    competitors:
      - path: shared
        direction: down         # down | up
        count: 1
    scheme: {kind: tap}         # bsp | ssp (staleness: s) | tap
    agent:
      mode: infer               # null | infer | train
      checkpoint: ckpt.npz
      slot_s: 0.1
      kappa: 1.0
      minibatch: 32
      session_samples: 30000
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import yaml

from .core import load_capacity_trace, validate_trace
from .transport import DRL, HYBRID, LIA
from .workload import BSP, SSP, TAP, ParallelismScheme

log = logging.getLogger(__name__)

CAPACITY_RANGE_MBPS = (4.0, 128.0)
RTT_RANGE_MS = (3.0, 300.0)
QUEUE_RANGE_PKTS = (20, 500)


class ScenarioError(Exception):
    """Invalid scenario configuration; message carries the field path."""


@dataclass
class PathSpec:
    name: str
    capacity_trace: list[tuple[float, float]]  # (s, bits/s)
    prop_delay: float
    loss_prob: float = 0.0
    queue_limit: int = 100


@dataclass
class WorkerSpec:
    controller: str
    paths: list[str]
    model_bytes: int
    compute_mean: float = 0.5
    compute_jitter: float = 0.1


@dataclass
class CompetitorSpec:
    path: str
    direction: str = "down"


@dataclass
class AgentSpec:
    mode: str = "null"
    checkpoint: str | None = None
    slot_s: float = 0.1
    kappa: float = 1.0
    minibatch: int = 32
    session_samples: int = 30000
    shared_policy: bool = True


@dataclass
class Scenario:
    duration: float
    seed: int
    paths: list[PathSpec]
    workers: list[WorkerSpec]
    competitors: list[CompetitorSpec] = field(default_factory=list)
    scheme: ParallelismScheme = field(default_factory=lambda: ParallelismScheme(TAP))
    agent: AgentSpec = field(default_factory=AgentSpec)
    packet_bytes: int = 1500
    sample_interval: float = 0.1
    fluct_interval: float = 1.0
    name: str = "scenario"


def _req(mapping: dict, key: str, where: str):
    if key not in mapping:
        raise ScenarioError(f"{where}.{key}: required field missing")
    return mapping[key]


def _num(value, where: str, positive: bool = True) -> float:
    if not isinstance(value, (int, float)) or isinstance(value, bool):
        raise ScenarioError(f"{where}: expected a number, got {value!r}")
    if positive and value <= 0:
        raise ScenarioError(f"{where}: must be positive, got {value!r}")
    return float(value)


def _parse_path(raw: dict, idx: int, base_dir: str) -> PathSpec:
    where = f"paths[{idx}]"
    if not isinstance(raw, dict):
        raise ScenarioError(f"{where}: expected a mapping")
    name = str(_req(raw, "name", where))
    if "trace_file" in raw:
        import os
        trace = load_capacity_trace(os.path.join(base_dir, raw["trace_file"]))
    elif "trace" in raw:
        pts = raw["trace"]
        if not isinstance(pts, list) or not all(
                isinstance(p, (list, tuple)) and len(p) == 2 for p in pts):
            raise ScenarioError(f"{where}.trace: expected [[time_s, mbps], ...]")
        trace = validate_trace([(float(t), float(m) * 1e6) for t, m in pts],
                               origin=f"{where}.trace")
    else:
        mbps = _num(_req(raw, "capacity_mbps", where), f"{where}.capacity_mbps")
        trace = [(0.0, mbps * 1e6)]
    prop_ms = _num(_req(raw, "prop_delay_ms", where), f"{where}.prop_delay_ms",
                   positive=False)
    if prop_ms < 0:
        raise ScenarioError(f"{where}.prop_delay_ms: must be >= 0")
    loss = raw.get("loss", 0.0)
    if not isinstance(loss, (int, float)) or not 0.0 <= loss <= 1.0:
        raise ScenarioError(f"{where}.loss: must be a probability in [0, 1]")
    queue = raw.get("queue_limit_pkts", 100)
    if not isinstance(queue, int) or queue < 1:
        raise ScenarioError(f"{where}.queue_limit_pkts: must be an integer >= 1")

    for t, bps in trace:
        mbps = bps / 1e6
        if not CAPACITY_RANGE_MBPS[0] <= mbps <= CAPACITY_RANGE_MBPS[1]:
            log.warning("%s: capacity %.3g Mbps at t=%.3gs outside the tuned "
                        "range %s", where, mbps, t, CAPACITY_RANGE_MBPS)
    rtt_ms = 2 * prop_ms
    if not RTT_RANGE_MS[0] <= rtt_ms <= RTT_RANGE_MS[1]:
        log.warning("%s: base RTT %.3g ms outside the tuned range %s",
                    where, rtt_ms, RTT_RANGE_MS)
    if not QUEUE_RANGE_PKTS[0] <= queue <= QUEUE_RANGE_PKTS[1]:
        log.warning("%s: queue limit %d outside the tuned range %s",
                    where, queue, QUEUE_RANGE_PKTS)
    return PathSpec(name, trace, prop_ms / 1e3, float(loss), queue)


def _parse_workers(raw_list, path_names: set[str], scale: float) -> list[WorkerSpec]:
    if not isinstance(raw_list, list) or not raw_list:
        raise ScenarioError("workers: expected a non-empty list")
    out: list[WorkerSpec] = []
    for idx, raw in enumerate(raw_list):
        where = f"workers[{idx}]"
        if not isinstance(raw, dict):
            raise ScenarioError(f"{where}: expected a mapping")
        controller = raw.get("controller", LIA)
        if controller not in (LIA, HYBRID, DRL):
            raise ScenarioError(f"{where}.controller: unknown controller "
                                f"{controller!r} (lia, hybrid or drl)")
        paths = _req(raw, "paths", where)
        if not isinstance(paths, list) or not paths:
            raise ScenarioError(f"{where}.paths: expected a non-empty list")
        for p in paths:
            if p not in path_names:
                raise ScenarioError(f"{where}.paths: unknown path {p!r}")
        model_mb = _num(_req(raw, "model_mb", where), f"{where}.model_mb")
        mean = _num(raw.get("compute_mean_s", 0.5), f"{where}.compute_mean_s",
                    positive=False)
        jitter = raw.get("compute_jitter", 0.1)
        if not isinstance(jitter, (int, float)) or not 0.0 <= jitter < 1.0:
            raise ScenarioError(f"{where}.compute_jitter: must be in [0, 1)")
        count = raw.get("count", 1)
        if not isinstance(count, int) or count < 1:
            raise ScenarioError(f"{where}.count: must be an integer >= 1")
        model_bytes = max(1, int(round(model_mb * 1e6 / scale)))
        for _ in range(count):
            out.append(WorkerSpec(controller, list(paths), model_bytes,
                                  mean, float(jitter)))
    return out


def _parse_competitors(raw_list, path_names: set[str]) -> list[CompetitorSpec]:
    if raw_list is None:
        return []
    if not isinstance(raw_list, list):
        raise ScenarioError("competitors: expected a list")
    out: list[CompetitorSpec] = []
    for idx, raw in enumerate(raw_list):
        where = f"competitors[{idx}]"
        if not isinstance(raw, dict):
            raise ScenarioError(f"{where}: expected a mapping")
        path = str(_req(raw, "path", where))
        if path not in path_names:
            raise ScenarioError(f"{where}.path: unknown path {path!r}")
        direction = raw.get("direction", "down")
        if direction not in ("down", "up"):
            raise ScenarioError(f"{where}.direction: must be 'down' or 'up'")
        count = raw.get("count", 1)
        if not isinstance(count, int) or count < 1:
            raise ScenarioError(f"{where}.count: must be an integer >= 1")
        out.extend(CompetitorSpec(path, direction) for _ in range(count))
    return out


def _parse_scheme(raw) -> ParallelismScheme:
    if raw is None:
        return ParallelismScheme(TAP)
    if isinstance(raw, str):
        raw = {"kind": raw}
    if not isinstance(raw, dict):
        raise ScenarioError("scheme: expected a mapping or a kind string")
    kind = raw.get("kind", TAP)
    if kind not in (BSP, SSP, TAP):
        raise ScenarioError(f"scheme.kind: unknown scheme {kind!r}")
    staleness = raw.get("staleness", 1)
    if not isinstance(staleness, int) or staleness < 1:
        raise ScenarioError("scheme.staleness: must be an integer >= 1")
    return ParallelismScheme(kind, staleness)


def _parse_agent(raw) -> AgentSpec:
    if raw is None:
        return AgentSpec()
    if not isinstance(raw, dict):
        raise ScenarioError("agent: expected a mapping")
    mode = raw.get("mode", "null")
    if mode not in ("null", "infer", "train"):
        raise ScenarioError(f"agent.mode: unknown mode {mode!r}")
    spec = AgentSpec(
        mode=mode,
        checkpoint=raw.get("checkpoint"),
        slot_s=_num(raw.get("slot_s", 0.1), "agent.slot_s"),
        kappa=_num(raw.get("kappa", 1.0), "agent.kappa", positive=False),
        minibatch=raw.get("minibatch", 32),
        session_samples=raw.get("session_samples", 30000),
        shared_policy=bool(raw.get("shared_policy", True)),
    )
    if not isinstance(spec.minibatch, int) or spec.minibatch < 1:
        raise ScenarioError("agent.minibatch: must be an integer >= 1")
    if not isinstance(spec.session_samples, int) or spec.session_samples < 1:
        raise ScenarioError("agent.session_samples: must be an integer >= 1")
    return spec


def scenario_from_dict(raw: dict, base_dir: str = ".",
                       name: str = "scenario") -> Scenario:
    if not isinstance(raw, dict):
        raise ScenarioError("scenario: expected a mapping at top level")
    known = {"duration_s", "seed", "packet_bytes", "transfer_scale", "paths",
             "workers", "competitors", "scheme", "agent", "sample_interval_s",
             "fluct_interval_s", "name"}
    for key in raw:
        if key not in known:
            raise ScenarioError(f"{key}: unknown field")
    duration = _num(_req(raw, "duration_s", "scenario"), "duration_s")
    seed = raw.get("seed", 0)
    if not isinstance(seed, int):
        raise ScenarioError("seed: must be an integer")
    scale = _num(raw.get("transfer_scale", 1.0), "transfer_scale")
    packet_bytes = raw.get("packet_bytes", 1500)
    if not isinstance(packet_bytes, int) or packet_bytes < 1:
        raise ScenarioError("packet_bytes: must be an integer >= 1")
    raw_paths = _req(raw, "paths", "scenario")
    if not isinstance(raw_paths, list) or not raw_paths:
        raise ScenarioError("paths: expected a non-empty list")
    paths = [_parse_path(p, i, base_dir) for i, p in enumerate(raw_paths)]
    names = [p.name for p in paths]
    if len(set(names)) != len(names):
        raise ScenarioError("paths: duplicate path names")
    workers = _parse_workers(_req(raw, "workers", "scenario"), set(names), scale)
    competitors = _parse_competitors(raw.get("competitors"), set(names))
    scheme = _parse_scheme(raw.get("scheme"))
    agent = _parse_agent(raw.get("agent"))
    return Scenario(
        duration=duration, seed=seed, paths=paths, workers=workers,
        competitors=competitors, scheme=scheme, agent=agent,
        packet_bytes=packet_bytes,
        sample_interval=_num(raw.get("sample_interval_s", 0.1), "sample_interval_s"),
        fluct_interval=_num(raw.get("fluct_interval_s", 1.0), "fluct_interval_s"),
        name=str(raw.get("name", name)),
    )


def load_scenario(path: str) -> Scenario:
    import os
    with open(path) as fh:
        try:
            raw = yaml.safe_load(fh)
        except yaml.YAMLError as exc:
            raise ScenarioError(f"{path}: not valid YAML ({exc})") from exc
    return scenario_from_dict(raw, base_dir=os.path.dirname(path) or ".",
                              name=os.path.splitext(os.path.basename(path))[0])
