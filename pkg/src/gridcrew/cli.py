"""Command-line entry points: train, evaluate, compare, gen-scenario, validate-scenario.

Settings resolve as command-line flags > GRIDCREW_* environment variables >
``--config`` file (``key = value`` lines) > built-in defaults.  Exit codes:
0 success, 1 runtime failure, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import platform
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from . import env as envmod
from .baselines import BaselineConfig, decider
from .generator import TEMPLATES, generate_text
from .grid import ScenarioError, bundled_path, load_scenario
from .net import CheckpointError, PolicyValueNet
from .train import TrainConfig, agent_decider, load_cases, play_episode, sample_cases, train_loop


class ConfigError(ValueError):
    pass


def _int_list(text):
    return [int(t) for t in str(text).replace(",", " ").split()]


def _noise(text):
    """``alpha,fraction`` for self-play root noise, or ``none``."""
    if text is None or str(text).strip().lower() in ("none", "off", "0"):
        return None
    parts = [float(t) for t in str(text).split(",")]
    if len(parts) != 2 or parts[0] <= 0 or not 0 <= parts[1] <= 1:
        raise ValueError(f"expected 'alpha,fraction' with alpha > 0 and 0 <= fraction <= 1, got {text!r}")
    return tuple(parts)


def _bool(text):
    if isinstance(text, bool):
        return text
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


# key -> (type, default); every key is also a --flag (underscores become dashes)
SETTINGS = {
    "scenario": (str, "eight_node"),
    "cases": (str, None),
    "checkpoint": (str, None),
    "out": (str, "runs/latest"),
    "seed": (int, 0),
    "seeds": (_int_list, [0]),
    "jobs": (int, 1),
    "no_timing": (_bool, False),
    "episodes": (int, 2000),
    "sims": (int, 30),
    "c_puct": (float, 1.25),
    "gamma": (float, 1.0),
    "tau_initial": (float, 1.0),
    "tau_final": (float, 1e-2),
    "tau_switch": (int, 10),
    "lr": (float, None),
    "l2": (float, 1e-4),
    "batch": (int, 32),
    "hidden": (_int_list, None),
    "buffer": (int, 20_000),
    "train_steps": (int, 32),
    "eval_every": (int, 20),
    "eval_sims": (int, None),
    "checkpoint_every": (int, 0),
    "max_decisions": (int, None),
    "root_noise": (_noise, (0.3, 0.25)),
    "algorithms": (str, "alphazero:30,vanilla_mcts:200,oluct:200"),
    "uct_c": (float, float(np.sqrt(2.0))),
    "rollout_depth": (int, 20),
    "tree_dump": (str, None),
    "log_dir": (str, None),
}

COMMAND_KEYS = {
    "train": ["scenario", "cases", "out", "seed", "no_timing", "episodes", "sims", "c_puct", "gamma",
              "tau_initial", "tau_final", "tau_switch", "lr", "l2", "batch", "hidden", "buffer", "train_steps",
              "eval_every", "eval_sims", "checkpoint_every", "max_decisions", "root_noise"],
    "evaluate": ["scenario", "cases", "checkpoint", "out", "seeds", "jobs", "no_timing", "sims", "c_puct", "gamma",
                 "max_decisions", "tree_dump", "log_dir"],
    "compare": ["scenario", "cases", "checkpoint", "out", "seeds", "jobs", "no_timing", "algorithms", "c_puct",
                "gamma", "uct_c", "rollout_depth", "max_decisions"],
}


def read_config_file(path) -> dict:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {path}")
    out = {}
    for lineno, raw in enumerate(p.read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line or line.startswith("["):
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        k, v = (s.strip() for s in line.split("=", 1))
        k = k.replace("-", "_")
        if k not in SETTINGS:
            raise ConfigError(f"{path}:{lineno}: unknown setting {k!r}")
        out[k] = v
    return out


def resolve(args, keys) -> dict:
    """Merge flags, environment, config file and defaults for ``keys``."""
    file_vals = read_config_file(args.config) if getattr(args, "config", None) else {}
    out = {}
    for k in keys:
        kind, default = SETTINGS[k]
        flag = getattr(args, k, None)
        env = os.environ.get(f"GRIDCREW_{k.upper()}")
        try:
            if flag is not None and flag is not False:
                out[k] = flag if not isinstance(flag, str) or kind is str else kind(flag)
            elif env is not None:
                out[k] = kind(env)
            elif k in file_vals:
                out[k] = kind(file_vals[k])
            else:
                out[k] = default
        except ValueError as exc:
            raise ConfigError(f"bad value for {k}: {exc}") from None
    return out


def _positive(cfg, *names):
    for n in names:
        if n in cfg and cfg[n] is not None and cfg[n] < 1:
            raise ConfigError(f"--{n.replace('_', '-')} must be >= 1 (got {cfg[n]})")


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------

def _sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_manifest(out_dir: Path, command: str, cfg: dict, scenario_ids, outputs, checkpoint=None) -> Path:
    manifest = {
        "command": command,
        "argv": sys.argv[1:],
        "config": cfg,
        "scenario_ids": list(scenario_ids),
        "seeds": cfg.get("seeds", [cfg.get("seed")]),
        "outputs": {k: str(v) for k, v in outputs.items()},
        "versions": {"gridcrew": __version__, "numpy": np.__version__, "python": platform.python_version(),
                     "checkpoint_sha256": _sha256(checkpoint) if checkpoint else None},
    }
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / f"manifest_{command}.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def _load_scenario(name, max_decisions=None):
    sc = load_scenario(name)
    if max_decisions:
        from dataclasses import replace
        sc = replace(sc, max_decisions=max_decisions)
    return sc


def _cases_for(scenario, cases_arg, seed):
    if cases_arg:
        return load_cases(cases_arg, scenario)
    bundled = bundled_path(f"{scenario.scenario_id}.cases")
    if bundled.exists():
        return load_cases(bundled, scenario)
    return sample_cases(scenario, 10, seed)


def _calls_str(calls) -> str:
    return "[" + " ".join(str(int(c)) for c in calls) + "]"


def _num(x) -> str:
    return repr(round(float(x), 6))


# worker-side cache so process pools load each scenario/checkpoint once
_WORKER: dict = {}


def _worker_objects(scenario_name, max_decisions, checkpoint):
    key = (scenario_name, max_decisions, checkpoint)
    if key not in _WORKER:
        sc = _load_scenario(scenario_name, max_decisions)
        net = PolicyValueNet.load(checkpoint) if checkpoint else None
        _WORKER[key] = (sc, envmod.EnvContext(sc), net)
    return _WORKER[key]


def _run_case(task):
    """One (case, algorithm, seed) episode; returns a result dict (runs in worker processes too)."""
    (scenario_name, max_decisions, checkpoint, case, algorithm, sims, seed, opts) = task
    sc, ctx, net = _worker_objects(scenario_name, max_decisions, checkpoint)
    dumps = []
    if algorithm == "alphazero":
        base = agent_decider(net, sims, opts["c_puct"], opts["gamma"], seed)
        if opts.get("tree_dump"):
            from .mcts import search

            def decide(state, t):
                res = search(state, net, sims, opts["c_puct"], opts["gamma"], 0.0, seed=[seed, t], keep_tree=True)
                dumps.append({"case": case.case_id, "seed": seed, "decision": t, "vehicle": state.pending.vehicle_id,
                              **res.to_dict()})
                return res.best_action()
        else:
            decide = base
    else:
        decide = decider(BaselineConfig(algorithm, sims if algorithm != "greedy" else 1, opts["uct_c"],
                                        opts["rollout_depth"], opts["gamma"], seed))
    final, spent = play_episode(sc, decide, case.damage, case.calls, seed, ctx)
    trajectories = {v.vehicle_id: envmod.trajectory_string(final, v.vehicle_id) for v in final.vehicles}
    return {
        "case": case.case_id, "algorithm": algorithm, "M": sims, "seed": seed,
        "outage_hours": envmod.episode_outage_hours(final),
        "ms_per_decision": 1000.0 * float(np.mean(spent)) if spent else 0.0,
        "decisions": final.decisions, "truncated": final.truncated,
        "trajectory": " | ".join(trajectories[v] for v in sorted(trajectories)) if len(trajectories) > 1
        else next(iter(trajectories.values())),
        "log": [e.as_dict() for e in final.episode_log], "dumps": dumps,
    }


def _run_all(tasks, jobs):
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(_run_case, tasks))
    return [_run_case(t) for t in tasks]


def _parse_algorithms(text) -> list:
    out = []
    for item in text.split(","):
        item = item.strip()
        if not item:
            continue
        name, _, m = item.partition(":")
        if name not in ("alphazero", "vanilla_mcts", "oluct", "greedy"):
            raise ConfigError(f"unknown algorithm {name!r}")
        sims = int(m) if m else (0 if name == "greedy" else 30)
        if name != "greedy" and sims < 1:
            raise ConfigError(f"algorithm {name} needs M >= 1")
        out.append((name, sims))
    if not out:
        raise ConfigError("no algorithms given")
    return out


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_train(args) -> int:
    cfg = resolve(args, COMMAND_KEYS["train"])
    _positive(cfg, "episodes", "sims", "batch", "buffer", "eval_every", "max_decisions")
    sc = _load_scenario(cfg["scenario"], cfg["max_decisions"])
    cases = _cases_for(sc, cfg["cases"], cfg["seed"])
    large = len(sc.grid.segments) > 20
    lr = cfg["lr"] if cfg["lr"] is not None else (1e-3 if large else 1e-4)
    hidden = tuple(cfg["hidden"]) if cfg["hidden"] else ((150, 150) if large else (120, 120))
    cfg["lr"], cfg["hidden"] = lr, list(hidden)
    try:
        tc = TrainConfig(sc, episodes=cfg["episodes"], sims_per_move=cfg["sims"], c_puct=cfg["c_puct"],
                         gamma=cfg["gamma"], tau_initial=cfg["tau_initial"], tau_final=cfg["tau_final"],
                         tau_switch=cfg["tau_switch"], hidden_dims=hidden, learning_rate=lr, l2_coeff=cfg["l2"],
                         batch_size=cfg["batch"], buffer_capacity=cfg["buffer"],
                         train_steps_per_episode=cfg["train_steps"], eval_every=cfg["eval_every"],
                         eval_cases=cases, eval_sims=cfg["eval_sims"], seed=cfg["seed"],
                         checkpoint_every=cfg["checkpoint_every"], root_noise=cfg["root_noise"])
        tc.make_net()
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    out = Path(cfg["out"])
    outputs = {"metrics": out / "metrics.csv", "checkpoint": out / "checkpoints" / "final.json"}
    write_manifest(out, "train", cfg, [sc.scenario_id], outputs)

    def progress(row):
        if not args.quiet:
            print(f"episode {row['episode']}: eval outage {row['eval_outage_hours']:.2f} h, "
                  f"value loss {row['value_loss']:.4g}, policy loss {row['policy_loss']:.4g}", flush=True)

    train_loop(tc, metrics_path=outputs["metrics"], checkpoint_dir=out / "checkpoints",
               timing=not cfg["no_timing"], progress=progress)
    print(f"wrote {outputs['metrics']} and {outputs['checkpoint']}")
    return 0


EVAL_HEADER = ["case", "seed", "phone_calls", "damaged_lines", "outage_hours", "trajectory", "decisions",
               "truncated", "ms_per_decision"]


def cmd_evaluate(args) -> int:
    cfg = resolve(args, COMMAND_KEYS["evaluate"])
    _positive(cfg, "sims", "jobs", "max_decisions")
    if not cfg["checkpoint"]:
        raise ConfigError("evaluate needs --checkpoint")
    if not Path(cfg["checkpoint"]).exists():
        raise ConfigError(f"checkpoint not found: {cfg['checkpoint']}")
    sc = _load_scenario(cfg["scenario"], cfg["max_decisions"])
    PolicyValueNet.load(cfg["checkpoint"])   # fail early on a bad file
    cases = _cases_for(sc, cfg["cases"], cfg["seeds"][0])
    out = Path(cfg["out"])
    outputs = {"evaluation": out / "evaluation.csv"}
    if cfg["tree_dump"]:
        outputs["tree_dump"] = Path(cfg["tree_dump"])
    if cfg["log_dir"]:
        outputs["logs"] = Path(cfg["log_dir"])
    write_manifest(out, "evaluate", cfg, [sc.scenario_id], outputs, cfg["checkpoint"])
    opts = {"c_puct": cfg["c_puct"], "gamma": cfg["gamma"], "tree_dump": cfg["tree_dump"]}
    tasks = [(cfg["scenario"], cfg["max_decisions"], cfg["checkpoint"], case, "alphazero", cfg["sims"], seed, opts)
             for case in cases for seed in cfg["seeds"]]
    results = _run_all(tasks, cfg["jobs"])
    by_case = {c.case_id: c for c in cases}
    with open(outputs["evaluation"], "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(EVAL_HEADER)
        for r in results:
            c = by_case[r["case"]]
            w.writerow([r["case"], r["seed"], _calls_str(c.calls), "[" + " ".join(c.damage) + "]",
                        _num(r["outage_hours"]), r["trajectory"], r["decisions"], int(r["truncated"]),
                        "NA" if cfg["no_timing"] else f"{r['ms_per_decision']:.3f}"])
    if cfg["tree_dump"]:
        with open(cfg["tree_dump"], "w") as fh:
            for r in results:
                for d in r["dumps"]:
                    fh.write(json.dumps(d, sort_keys=True) + "\n")
    if cfg["log_dir"]:
        Path(cfg["log_dir"]).mkdir(parents=True, exist_ok=True)
        for r in results:
            with open(Path(cfg["log_dir"]) / f"case{r['case']}_seed{r['seed']}.jsonl", "w") as fh:
                for rec in r["log"]:
                    fh.write(json.dumps(rec, sort_keys=True) + "\n")
    if not args.quiet:
        for r in results:
            traj = r["trajectory"] if len(r["trajectory"]) <= 60 else r["trajectory"][:57] + "..."
            print(f"case {r['case']} seed {r['seed']}: {r['outage_hours']:.2f} h  {traj}")
        print(f"mean outage {np.mean([r['outage_hours'] for r in results]):.2f} h; wrote {outputs['evaluation']}")
    return 0


COMPARE_HEADER = ["case", "algorithm", "M", "seed", "outage_hours", "ms_per_decision"]
SUMMARY_HEADER = ["case", "algorithm", "M", "mean_outage_hours", "mean_ms_per_decision"]


def cmd_compare(args) -> int:
    cfg = resolve(args, COMMAND_KEYS["compare"])
    _positive(cfg, "jobs", "rollout_depth", "max_decisions")
    algos = _parse_algorithms(cfg["algorithms"])
    if any(a == "alphazero" for a, _ in algos):
        if not cfg["checkpoint"]:
            raise ConfigError("the alphazero entry in --algorithms needs --checkpoint")
        if not Path(cfg["checkpoint"]).exists():
            raise ConfigError(f"checkpoint not found: {cfg['checkpoint']}")
        PolicyValueNet.load(cfg["checkpoint"])
    sc = _load_scenario(cfg["scenario"], cfg["max_decisions"])
    cases = _cases_for(sc, cfg["cases"], cfg["seeds"][0])
    out = Path(cfg["out"])
    outputs = {"comparison": out / "compare.csv", "summary": out / "compare_summary.csv"}
    write_manifest(out, "compare", cfg, [sc.scenario_id], outputs, cfg["checkpoint"])
    opts = {"c_puct": cfg["c_puct"], "gamma": cfg["gamma"], "uct_c": cfg["uct_c"],
            "rollout_depth": cfg["rollout_depth"]}
    tasks = [(cfg["scenario"], cfg["max_decisions"], cfg["checkpoint"], case, name, sims, seed, opts)
             for case in cases for name, sims in algos for seed in cfg["seeds"]]
    results = _run_all(tasks, cfg["jobs"])
    timing = not cfg["no_timing"]
    with open(outputs["comparison"], "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(COMPARE_HEADER)
        for r in results:
            w.writerow([r["case"], r["algorithm"], r["M"], r["seed"], _num(r["outage_hours"]),
                        f"{r['ms_per_decision']:.3f}" if timing else "NA"])
    rows = []
    with open(outputs["summary"], "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SUMMARY_HEADER)
        for case in [c.case_id for c in cases] + ["ALL"]:
            for name, sims in algos:
                sel = [r for r in results if r["algorithm"] == name and r["M"] == sims
                       and (case == "ALL" or r["case"] == case)]
                hours = float(np.mean([r["outage_hours"] for r in sel]))
                ms = float(np.mean([r["ms_per_decision"] for r in sel]))
                rows.append((case, name, sims, hours, ms))
                w.writerow([case, name, sims, _num(hours), f"{ms:.3f}" if timing else "NA"])
    if not args.quiet:
        for case, name, sims, hours, ms in rows:
            if case == "ALL":
                print(f"{name:>12} M={sims:<4} mean outage {hours:9.2f} h" + (f"  {ms:8.2f} ms/decision" if timing else ""))
        print(f"wrote {outputs['comparison']} and {outputs['summary']}")
    return 0


def cmd_gen_scenario(args) -> int:
    for name in ("lines", "segments", "customers", "zones"):
        v = getattr(args, name)
        if v is not None and v < 0:
            raise ConfigError(f"--{name} must be non-negative")
    try:
        text = generate_text(args.template, args.seed, lines=args.lines, segments=args.segments,
                             customers=args.customers, zones=args.zones, belief_unit=args.belief_unit,
                             scenario_id=args.id)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    if args.output:
        Path(args.output).parent.mkdir(parents=True, exist_ok=True)
        Path(args.output).write_text(text)
        if not args.quiet:
            print(f"wrote {args.output}")
    else:
        sys.stdout.write(text)
    return 0


def cmd_validate(args) -> int:
    status = 0
    for path in args.paths:
        try:
            sc = load_scenario(path)
        except ScenarioError as exc:
            print(f"{path}: INVALID: {exc}", file=sys.stderr)
            status = 2
            continue
        g = sc.grid
        print(f"{path}: ok ({sc.scenario_id}: {len(g.road.nodes)} nodes, {len(g.lines)} lines, "
              f"{len(g.segments)} segments, {len(g.customers)} customer nodes, {len(g.zones)} zones)")
    return status


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

HELP = {
    "scenario": "scenario file or bundled name (eight_node, ieee123_like)",
    "cases": "fixed fault cases file (default: bundled <scenario>.cases or 10 sampled cases)",
    "checkpoint": "network checkpoint (JSON)",
    "out": "output directory",
    "seed": "random seed",
    "seeds": "comma-separated seeds",
    "jobs": "worker processes",
    "no_timing": "write NA in timing columns so outputs are byte-identical across runs",
    "sims": "simulations per move (M)",
    "algorithms": "comma list of name:M, names: alphazero vanilla_mcts oluct greedy",
    "hidden": "hidden layer widths, e.g. 120,120",
    "root_noise": "Dirichlet noise at self-play search roots as alpha,fraction (default 0.3,0.25) or none",
    "tree_dump": "write root search statistics of every decision to this JSON-lines file",
    "log_dir": "write one JSON-lines dispatch log per case and seed here",
}


def _add_settings(p, keys):
    for k in keys:
        flag = "--" + k.replace("_", "-")
        if SETTINGS[k][0] is _bool:
            p.add_argument(flag, dest=k, action="store_true", default=None, help=HELP.get(k))
        else:
            p.add_argument(flag, dest=k, default=None, help=HELP.get(k))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gridcrew", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"gridcrew {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="settings file with 'key = value' lines")
    common.add_argument("--quiet", action="store_true", help="less console output")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn, helptext in (("train", cmd_train, "self-play training"),
                               ("evaluate", cmd_evaluate, "run a checkpoint on fixed fault cases"),
                               ("compare", cmd_compare, "compare the agent with baselines")):
        p = sub.add_parser(name, parents=[common], help=helptext)
        _add_settings(p, COMMAND_KEYS[name])
        p.set_defaults(func=fn)
    g = sub.add_parser("gen-scenario", parents=[common], help="generate a random radial scenario")
    g.add_argument("--template", choices=sorted(TEMPLATES), default="radial7")
    g.add_argument("--seed", type=int, default=0)
    for name in ("lines", "segments", "customers", "zones"):
        g.add_argument(f"--{name}", type=int, default=None)
    g.add_argument("--belief-unit", choices=["line", "segment"], default=None)
    g.add_argument("--id", default=None, help="scenario id")
    g.add_argument("--output", "-o", default=None, help="output path (stdout if omitted)")
    g.set_defaults(func=cmd_gen_scenario)
    v = sub.add_parser("validate-scenario", parents=[common], help="check scenario files")
    v.add_argument("paths", nargs="+")
    v.set_defaults(func=cmd_validate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ScenarioError, CheckpointError, FileNotFoundError) as exc:
        print(f"gridcrew {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except KeyboardInterrupt:
        return 1
    except Exception as exc:  # runtime failure: report and exit 1
        print(f"gridcrew {args.command}: failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
