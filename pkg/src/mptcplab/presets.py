"""Experiment presets.

Each preset is a pure function of (name, seed, controller): rebuilding with
the same arguments yields an identical scenario and therefore byte-identical
outputs.  Transfer sizes are desk-scaled (divided by `transfer_scale`) so a
full sweep runs in minutes; pass scale=1 for full-size transfers.

  exp1  square-wave bottleneck capacity, one worker, rate-tracking runs
  exp2  six workers + CUBIC rivals on a shared path, synchronous (BSP)
  exp3  same as exp2 but fully asynchronous (TAP)
  exp4  exp3 with the straggler's throughput series as the headline output
  exp5  exp3 topology, unfairness / iteration-time focus
  exp6  fixed 50 Mbps, sweep the number of stragglers
  exp8  agent compute-cost proxy (wall-clock per simulated second)
"""

from __future__ import annotations

from .runner import default_slot
from .scenario import Scenario, scenario_from_dict
from .transport import DRL, HYBRID, LIA

PRESET_NAMES = ["exp1", "exp2", "exp3", "exp4", "exp5", "exp6", "exp8"]

# square wave of the varying bottleneck path (seconds, Mbps)
EXP1_WAVE = [[0.0, 8.0], [15.0, 2.0], [30.0, 8.0], [45.0, 2.0]]
SWEEP_CAPACITIES_MBPS = [20.0, 30.0, 40.0, 50.0]


def _agent_section(controller: str, checkpoint: str | None,
                   mode: str = "infer") -> dict:
    if controller not in (HYBRID, DRL):
        return {"mode": "null"}
    return {
        "mode": mode,
        "checkpoint": checkpoint,
        "slot_s": default_slot(controller),
        "kappa": 1.0,
    }


def exp1(seed: int, controller: str = HYBRID, checkpoint: str | None = None,
         duration: float = 60.0, scale: float = 100.0) -> Scenario:
    """Time-varying bottleneck: fixed 8 Mbps path plus a square-wave path,
    50 ms delay and 3% loss on both, one worker cycling model transfers."""
    raw = {
        "name": f"exp1-{controller}-{seed}",
        "duration_s": duration,
        "seed": seed,
        "transfer_scale": scale,
        "paths": [
            {"name": "fixed", "capacity_mbps": 8.0, "prop_delay_ms": 50.0,
             "loss": 0.03, "queue_limit_pkts": 100},
            {"name": "wave", "trace": EXP1_WAVE, "prop_delay_ms": 50.0,
             "loss": 0.03, "queue_limit_pkts": 100},
        ],
        "workers": [
            {"controller": controller, "paths": ["fixed", "wave"],
             "model_mb": 600.0, "compute_mean_s": 0.0, "compute_jitter": 0.0},
        ],
        "scheme": {"kind": "tap"},
        "agent": _agent_section(controller, checkpoint),
    }
    return scenario_from_dict(raw, name=raw["name"])


def _shared_bottleneck(seed: int, controller: str, checkpoint: str | None,
                       scheme: str, duration: float, scale: float,
                       capacity_mbps: float | None = None,
                       straggler_count: int = 0,
                       agent_mode: str = "infer",
                       name: str = "exp") -> Scenario:
    """Six worker flows over two shared paths, competing with one CUBIC
    rival per direction on the bottleneck path."""
    cap = capacity_mbps if capacity_mbps is not None \
        else SWEEP_CAPACITIES_MBPS[seed % len(SWEEP_CAPACITIES_MBPS)]
    workers = []
    for i in range(6):
        slow = i < straggler_count
        workers.append({
            "controller": controller, "paths": ["bneck", "side"],
            "model_mb": 300.0, "compute_mean_s": 2.5 if slow else 0.5,
            "compute_jitter": 0.1,
        })
    raw = {
        "name": f"{name}-{controller}-{seed}",
        "duration_s": duration,
        "seed": seed,
        "transfer_scale": scale,
        "paths": [
            {"name": "bneck", "capacity_mbps": cap, "prop_delay_ms": 15.0,
             "loss": 0.03, "queue_limit_pkts": 150},
            {"name": "side", "capacity_mbps": cap, "prop_delay_ms": 15.0,
             "loss": 0.03, "queue_limit_pkts": 150},
        ],
        "workers": workers,
        "competitors": [
            {"path": "bneck", "direction": "down"},
            {"path": "bneck", "direction": "up"},
        ],
        "scheme": {"kind": scheme},
        "agent": _agent_section(controller, checkpoint, mode=agent_mode),
    }
    return scenario_from_dict(raw, name=raw["name"])


def exp2(seed: int, controller: str = HYBRID, checkpoint: str | None = None,
         duration: float = 90.0, scale: float = 100.0) -> Scenario:
    return _shared_bottleneck(seed, controller, checkpoint, "bsp", duration,
                              scale, name="exp2")


def exp3(seed: int, controller: str = HYBRID, checkpoint: str | None = None,
         duration: float = 90.0, scale: float = 100.0) -> Scenario:
    return _shared_bottleneck(seed, controller, checkpoint, "tap", duration,
                              scale, name="exp3")


def exp4(seed: int, controller: str = HYBRID, checkpoint: str | None = None,
         duration: float = 90.0, scale: float = 100.0) -> Scenario:
    return _shared_bottleneck(seed, controller, checkpoint, "tap", duration,
                              scale, name="exp4")


def exp5(seed: int, controller: str = HYBRID, checkpoint: str | None = None,
         duration: float = 90.0, scale: float = 100.0) -> Scenario:
    return _shared_bottleneck(seed, controller, checkpoint, "tap", duration,
                              scale, name="exp5")


def exp6(seed: int, controller: str = HYBRID, checkpoint: str | None = None,
         duration: float = 75.0, scale: float = 100.0,
         straggler_count: int = 1) -> Scenario:
    if not 0 <= straggler_count <= 6:
        raise ValueError("straggler count must be in 0..6")
    return _shared_bottleneck(seed, controller, checkpoint, "tap", duration,
                              scale, capacity_mbps=50.0,
                              straggler_count=straggler_count, name="exp6")


def exp8(seed: int, controller: str = HYBRID, checkpoint: str | None = None,
         duration: float = 30.0, scale: float = 100.0) -> Scenario:
    """Compute-cost proxy run: agents train online so the wall-clock cost
    covers inference plus training.  The timing output is a property of the
    host, not of the simulation, and is reported separately from the
    deterministic CSVs."""
    return _shared_bottleneck(seed, controller, checkpoint, "tap", duration,
                              scale, agent_mode="train", name="exp8")


def build_preset(name: str, seed: int, controller: str = HYBRID,
                 checkpoint: str | None = None, duration: float | None = None,
                 scale: float | None = None, **kwargs) -> Scenario:
    if name not in PRESET_NAMES:
        raise ValueError(f"unknown preset {name!r}; choose from {PRESET_NAMES}")
    fn = globals()[name]
    args: dict = {"seed": seed, "controller": controller, "checkpoint": checkpoint}
    if duration is not None:
        args["duration"] = duration
    if scale is not None:
        args["scale"] = scale
    args.update(kwargs)
    return fn(**args)
