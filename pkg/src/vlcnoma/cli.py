"""Command-line entry point.

Relative ``--out`` directories are resolved under ``$VLCNOMA_OUT_ROOT`` when it
is set. Exit status: 0 success, 1 configuration error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import platform
import sys
from pathlib import Path

import numpy as np
import scipy
import yaml

from . import __version__, bo, config, handover, metrics, ppo

OUT_ROOT_ENV = "VLCNOMA_OUT_ROOT"
log = logging.getLogger("vlcnoma")


def _out_dir(arg: str | None, default: str) -> Path:
    path = Path(arg or default)
    root = os.environ.get(OUT_ROOT_ENV)
    if root and not path.is_absolute():
        path = Path(root) / path
    path.mkdir(parents=True, exist_ok=True)
    return path


def _load_config(path: str | None) -> config.SimConfig:
    return config.load(path) if path else config.validate(config.SimConfig())


def write_manifest(out: Path, cfg: config.SimConfig, seed: int | None, argv: list,
                   extra: dict | None = None) -> None:
    manifest = {
        "command": argv,
        "seed": seed,
        "config_sha256": cfg.digest(),
        "versions": {"vlcnoma": __version__, "python": platform.python_version(),
                     "numpy": np.__version__, "scipy": scipy.__version__,
                     "pyyaml": yaml.__version__},
        **(extra or {}),
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    config.dump(cfg, out / "config.yaml")


def _write_eval(out: Path, episodes, summary, logs, cfg) -> None:
    metrics.write_episode_csv(episodes, out / "episodes.csv")
    metrics.write_samples_csv(episodes, out / "samples.csv")
    metrics.write_summary_json(summary, out / "summary.json")
    flat = [ev for lg in logs for ev in lg]
    handover.write_event_log(flat, cfg.handover.pingpong_window_s, out / "handovers.csv")


# ------------------------------------------------------------- subcommands
def cmd_train(args, argv) -> int:
    cfg = _load_config(args.config)
    out = _out_dir(args.out, f"train-{args.algo}-seed{args.seed}")
    learner, rows = ppo.train(args.algo, cfg, args.seed, args.steps)
    ppo.write_curve(rows, out / "learning_curve.csv")
    learner.save(out / "checkpoint.npz", {"config": cfg.to_dict(), "seed": args.seed,
                                          "steps": rows[-1].step if rows else 0})
    write_manifest(out, cfg, args.seed, argv, {"algo": args.algo})
    print(f"wrote {out}")
    return 0


def cmd_evaluate(args, argv) -> int:
    from . import nn
    meta = nn.read_meta(args.checkpoint)
    cfg = _load_config(args.config) if args.config else config.from_dict(meta["config"])
    learner = ppo.load_learner(args.checkpoint, cfg)
    out = _out_dir(args.out, "evaluate")
    episodes, summary, logs = ppo.evaluate(ppo.learner_policy(learner), cfg, args.episodes,
                                           seed=args.seed)
    _write_eval(out, episodes, summary, logs, cfg)
    write_manifest(out, cfg, args.seed, argv, {"checkpoint": str(args.checkpoint)})
    _print_summary(summary)
    return 0


def cmd_baseline(args, argv) -> int:
    cfg = _load_config(args.config)
    out = _out_dir(args.out, "baseline")
    episodes, summary, logs = ppo.evaluate(ppo.baseline, cfg, args.episodes, seed=args.seed)
    _write_eval(out, episodes, summary, logs, cfg)
    write_manifest(out, cfg, args.seed, argv, {"policy": "baseline"})
    _print_summary(summary)
    return 0


def cmd_tune(args, argv) -> int:
    cfg = _load_config(args.config)
    if args.algo:
        cfg.bo.algo = args.algo
    if args.trial_steps is not None:
        cfg.bo.trial_steps = args.trial_steps
    tuner = args.tuner or cfg.bo.tuner
    n = args.trials or cfg.bo.n_trials
    out = _out_dir(args.out, f"tune-{tuner}")
    bounds = [cfg.bo.w_qos_bounds, cfg.bo.w_stab_bounds]
    objective = bo.marl_objective(cfg, args.seed)
    if tuner == "grid":
        best, trials = bo.run_grid(objective, bounds, n, cfg.env.dt_s)
    else:
        best, trials = bo.run_bo(objective, bounds, min(cfg.bo.n_init, n), n,
                                 cfg.bo.grid_step, args.seed, cfg.env.dt_s)
    bo.write_trials(trials, out / "trials.csv")
    (out / "best.json").write_text(json.dumps(
        {"w_qos": float(best.w[0]), "w_stab": float(best.w[1]), "score": best.score,
         "trial": best.index}, indent=2))
    write_manifest(out, cfg, args.seed, argv, {"tuner": tuner})
    print(f"best w_qos={best.w[0]:.3f} w_stab={best.w[1]:.3f} score={best.score:.4f}")
    return 0


def cmd_validate(args, argv) -> int:
    cfg = config.load(args.file)
    print(f"ok: {args.file} ({cfg.n_aps} APs, {cfg.users.n_users} users)")
    return 0


def cmd_export(args, argv) -> int:
    cfg = config.reduced() if args.reduced else config.SimConfig()
    text = yaml.safe_dump(cfg.to_dict(), sort_keys=False)
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


def _print_summary(summary: dict) -> None:
    for k, v in summary.items():
        if isinstance(v, dict):
            print(f"{k:>16}: {v['mean']:.6g} +/- {v['ci95']:.3g}")


# ------------------------------------------------------------------ parser
def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="vlcnoma", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train MAPPO or CenPPO")
    t.add_argument("--algo", choices=("mappo", "cenppo"), required=True)
    t.add_argument("--config")
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--steps", type=int, help="environment steps (default: ppo.total_steps)")
    t.add_argument("--out")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("evaluate", help="greedy evaluation of a checkpoint")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--episodes", type=int, default=1000)
    e.add_argument("--config", help="override the configuration stored with the checkpoint")
    e.add_argument("--seed", type=int, default=12345)
    e.add_argument("--out")
    e.set_defaults(func=cmd_evaluate)

    b = sub.add_parser("baseline", help="evaluate the rule-based baseline")
    b.add_argument("--config")
    b.add_argument("--episodes", type=int, default=1000)
    b.add_argument("--seed", type=int, default=12345)
    b.add_argument("--out")
    b.set_defaults(func=cmd_baseline)

    w = sub.add_parser("tune-weights", help="tune the main reward weights")
    w.add_argument("--config")
    w.add_argument("--trials", type=int)
    w.add_argument("--tuner", choices=("bo", "grid"))
    w.add_argument("--algo", choices=("mappo", "cenppo"))
    w.add_argument("--trial-steps", type=int)
    w.add_argument("--seed", type=int, default=0)
    w.add_argument("--out")
    w.set_defaults(func=cmd_tune)

    v = sub.add_parser("validate-config", help="check a configuration file")
    v.add_argument("file")
    v.set_defaults(func=cmd_validate)

    x = sub.add_parser("export-defaults", help="write the default configuration")
    x.add_argument("--out")
    x.add_argument("--reduced", action="store_true", help="4 APs and 10 users")
    x.set_defaults(func=cmd_export)
    return p


def main(argv: list | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args, argv)
    except (config.ConfigError, FileNotFoundError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
