"""Command-line front end.

    mptcplab run <scenario.yaml> --out DIR [--trace]
    mptcplab preset <name> --seed S [--controller C] [--checkpoint CKPT]
                    [--scale F] [--duration D] [--stragglers K] --out DIR
    mptcplab train --sessions N --out DIR [--controller C] [--samples M]
                   [--seed S] [--link-scale F]
    mptcplab validate <scenario.yaml>
"""

from __future__ import annotations

import argparse
import logging
import os
import sys

from . import presets
from .runner import run_scenario, train_agent
from .scenario import ScenarioError, load_scenario
from .transport import DRL, HYBRID, LIA

log = logging.getLogger("mptcplab")


def _write_run(result, out_dir: str, trace: bool) -> None:
    result.write_outputs(out_dir)
    if trace and result.trace is not None:
        with open(os.path.join(out_dir, "packets.log"), "w") as fh:
            fh.write("\n".join(result.trace))
            fh.write("\n")
    m = result.metrics
    print(f"{m.controller}/{m.scheme} seed={m.seed}: "
          f"mean_iter={m.mean_iter_time_s:.3f}s unfairness={m.unfairness_iters:.3f} "
          f"fluct={m.mean_fluct_pps:.1f}pps utility={m.aggregate_utility:.3f}")
    print(f"outputs written to {out_dir}")


def cmd_run(args) -> int:
    scenario = load_scenario(args.scenario)
    result = run_scenario(scenario, collect_trace=args.trace)
    _write_run(result, args.out, args.trace)
    return 0


def cmd_preset(args) -> int:
    kwargs = {}
    if args.name == "exp6":
        kwargs["straggler_count"] = args.stragglers
    scenario = presets.build_preset(
        args.name, seed=args.seed, controller=args.controller,
        checkpoint=args.checkpoint, duration=args.duration, scale=args.scale,
        **kwargs)
    if args.controller in (HYBRID, DRL) and not args.checkpoint:
        log.warning("no checkpoint given; using untrained seeded networks")
    result = run_scenario(scenario, collect_trace=args.trace)
    _write_run(result, args.out, args.trace)
    if args.name == "exp8":
        proxy = result.metrics.agent_compute_s_per_sim_s
        path = os.path.join(args.out, "compute_proxy.txt")
        with open(path, "w") as fh:
            fh.write(
                "# Wall-clock agent compute per simulated second (host-specific\n"
                "# proxy for controller overhead; excluded from determinism checks)\n"
                f"{args.controller},{proxy:.6f}\n")
        print(f"agent compute proxy: {proxy:.4f} s/sim-s -> {path}")
    return 0


def cmd_train(args) -> int:
    def progress(controller, session, ep):
        if ep.episode % 10 == 0:
            print(f"[{controller} s{session}] episode {ep.episode}: "
                  f"mean_reward={ep.mean_reward:.3f} "
                  f"critic_loss={ep.critic_loss:.4f}")
    result = train_agent(controller=args.controller, sessions=args.sessions,
                         session_samples=args.samples, base_seed=args.seed,
                         link_scale=args.link_scale, progress=progress)
    result.write_outputs(args.out)
    print(f"checkpoint and training logs written to {args.out}")
    return 0


def cmd_validate(args) -> int:
    try:
        scenario = load_scenario(args.scenario)
    except ScenarioError as exc:
        print(f"INVALID: {exc}")
        return 1
    print(f"OK: {scenario.name}: {len(scenario.paths)} paths, "
          f"{len(scenario.workers)} workers, {len(scenario.competitors)} "
          f"competitors, scheme={scenario.scheme.label()}")
    return 0


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    parser = argparse.ArgumentParser(prog="mptcplab", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run a scenario file")
    p.add_argument("scenario")
    p.add_argument("--out", required=True)
    p.add_argument("--trace", action="store_true", help="write packets.log")
    p.set_defaults(fn=cmd_run)

    p = sub.add_parser("preset", help="run a named experiment preset")
    p.add_argument("name", choices=presets.PRESET_NAMES)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--controller", choices=[LIA, HYBRID, DRL], default=HYBRID)
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--scale", type=float, default=None,
                   help="transfer-size divider (default per preset)")
    p.add_argument("--duration", type=float, default=None)
    p.add_argument("--stragglers", type=int, default=1, help="exp6 only")
    p.add_argument("--trace", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_preset)

    p = sub.add_parser("train", help="train the agent on randomized scenarios")
    p.add_argument("--controller", choices=[HYBRID, DRL], default=HYBRID)
    p.add_argument("--sessions", type=int, default=3)
    p.add_argument("--samples", type=int, default=30000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--link-scale", type=float, default=8.0)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("validate", help="validate a scenario file")
    p.add_argument("scenario")
    p.set_defaults(fn=cmd_validate)

    args = parser.parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
