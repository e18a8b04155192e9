"""Command-line interface.

Subcommands: train-single, train-iatrpo, train-matrpo, eval, replay, render.
Every run takes --config/--seed/--out-dir, emits artifacts stamped with the
config hash and seed, and is bit-for-bit reproducible for a fixed pair.

Exit codes: 0 success, 2 configuration error, 3 file/checkpoint error,
4 numeric failure, 1 anything else.
"""

from __future__ import annotations

import os

# keep BLAS deterministic and snappy for the small matrices used here
os.environ.setdefault("OPENBLAS_NUM_THREADS", "1")
os.environ.setdefault("OMP_NUM_THREADS", "1")
os.environ.setdefault("MKL_NUM_THREADS", "1")

import argparse
import json
import logging
import re
import sys
from pathlib import Path

import numpy as np
import yaml

from .checkpoint import CheckpointError, load_handle, save_handle
from .config import ConfigError, RunConfig, build_env, build_geometry, load_config
from .envs import n_roles
from .evalr import (compromise_analysis, evaluate, first_arrival_stats,
                    mixed_pairing_eval, play_episode)
from .logio import MetricsWriter, artifact_preamble, write_episode_log
from .policies import PolicyHandle
from .render import render_trajectories
from .trainer import train_iatrpo, train_matrpo, train_single

log = logging.getLogger("iatrpo")

EXIT_OK = 0
EXIT_OTHER = 1
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_NUMERIC = 4


def _load(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    if args.seed is not None:
        cfg.curriculum.seed = args.seed
    cfg.validate()
    return cfg


def _prepare_out(args, cfg: RunConfig, subcommand: str) -> Path:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "run.json", "w", encoding="utf-8") as fh:
        fh.write(json.dumps({
            "format_version": 1,
            "subcommand": subcommand,
            "config_hash": cfg.hash(),
            "seed": cfg.curriculum.seed,
        }, sort_keys=True) + "\n")
    with open(out / "resolved_config.yaml", "w", encoding="utf-8") as fh:
        fh.write(artifact_preamble(cfg.hash(), cfg.curriculum.seed) + "\n")
        yaml.safe_dump(cfg.to_dict(), fh, sort_keys=True)
    log.info("run: %s  env=%s dt=%s horizon=%s  seed=%d  config=%s",
             subcommand, cfg.env.id, cfg.env.dt, cfg.env.horizon,
             cfg.curriculum.seed, cfg.hash())
    return out


def _run_meta(cfg: RunConfig, iterations: int) -> dict:
    return {"seed": cfg.curriculum.seed, "iterations": iterations,
            "config_hash": cfg.hash(), "env_id": cfg.env.id}


def _progress(every: int = 50):
    def on_row(row):
        if row["iteration"] % every == 0 and row.get("success_probe") != "":
            log.info("iter %4d agent %d  ep_len %.1f  probe %.3f  kl %.4f",
                     row["iteration"], row["agent"], row["mean_episode_length"],
                     row["success_probe"], row["kl"])
    return on_row


def cmd_train_single(args) -> int:
    cfg = _load(args)
    out = _prepare_out(args, cfg, "train-single")
    seed = cfg.curriculum.seed
    roles = [args.role] if args.role is not None else list(range(n_roles(cfg.env.id)))
    builder = lambda roles=None: build_env(cfg.env, roles)
    with open(out / "metrics_single.csv", "w", encoding="utf-8") as fh:
        writer = MetricsWriter(fh, cfg.hash(), seed)
        for role in roles:
            log.info("stage 1: training role %d", role)
            handle, rows = train_single(builder, role, cfg.trpo, cfg.curriculum,
                                        seed, on_row=lambda r: (writer.write_row(r),
                                                                _progress()(r)))
            iters = rows[-1]["iteration"] + 1 if rows else 0
            save_handle(handle, out / f"single_role{role}.ckpt", _run_meta(cfg, iters))
    log.info("stage-1 checkpoints written to %s", out)
    return EXIT_OK


def _load_singles(single_dir: Path, roles) -> dict[int, PolicyHandle]:
    singles = {}
    for role in roles:
        path = Path(single_dir) / f"single_role{role}.ckpt"
        handle, _ = load_handle(path)
        if handle.kind != "single":
            raise CheckpointError(f"{path}: expected a single-agent checkpoint")
        singles[role] = handle
    return singles


def cmd_train_iatrpo(args) -> int:
    cfg = _load(args)
    out = _prepare_out(args, cfg, "train-iatrpo")
    seed = cfg.curriculum.seed
    roles = range(n_roles(cfg.env.id))
    singles = _load_singles(args.single_dir, roles)
    builder = lambda roles=None: build_env(cfg.env, roles)
    with open(out / "metrics_iatrpo.csv", "w", encoding="utf-8") as fh:
        writer = MetricsWriter(fh, cfg.hash(), seed)
        handles, rows = train_iatrpo(builder, singles, cfg.trpo, cfg.curriculum,
                                     seed, on_row=lambda r: (writer.write_row(r),
                                                             _progress()(r)))
    iters = rows[-1]["iteration"] + 1 if rows else 0
    for role, handle in handles.items():
        save_handle(handle, out / f"composed_role{role}.ckpt", _run_meta(cfg, iters))
    log.info("stage-2 checkpoints written to %s", out)
    return EXIT_OK


def cmd_train_matrpo(args) -> int:
    cfg = _load(args)
    out = _prepare_out(args, cfg, "train-matrpo")
    seed = cfg.curriculum.seed
    builder = lambda roles=None: build_env(cfg.env, roles)
    with open(out / "metrics_matrpo.csv", "w", encoding="utf-8") as fh:
        writer = MetricsWriter(fh, cfg.hash(), seed)
        handles, rows = train_matrpo(builder, cfg.trpo, cfg.curriculum, seed,
                                     on_row=lambda r: (writer.write_row(r),
                                                       _progress()(r)))
    iters = rows[-1]["iteration"] + 1 if rows else 0
    for role, handle in handles.items():
        save_handle(handle, out / f"matrpo_role{role}.ckpt", _run_meta(cfg, iters))
    log.info("baseline checkpoints written to %s", out)
    return EXIT_OK


def load_run_policies(run_dir) -> dict[int, PolicyHandle]:
    """Discover checkpoints in a training run directory (composed, matrpo, or
    single, in that order of preference)."""
    run_dir = Path(run_dir)
    for prefix in ("composed", "matrpo", "single"):
        found = {}
        for path in sorted(run_dir.glob(f"{prefix}_role*.ckpt")):
            m = re.match(rf"{prefix}_role(\d+)\.ckpt", path.name)
            if m:
                handle, _ = load_handle(path)
                found[int(m.group(1))] = handle
        if found:
            return found
    raise CheckpointError(f"no policy checkpoints found in {run_dir}")


def _csv_out(out: Path, name: str, cfg: RunConfig, header: list[str], rows) -> Path:
    path = out / name
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(artifact_preamble(cfg.hash(), cfg.curriculum.seed) + "\n")
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(repr(v) if isinstance(v, float) else str(v)
                              for v in row) + "\n")
    return path


def cmd_eval(args) -> int:
    cfg = _load(args)
    out = _prepare_out(args, cfg, "eval")
    seed = cfg.curriculum.seed
    n_ep = args.episodes or cfg.eval.n_episodes
    run_dirs = args.run_dir
    if args.metric == "success":
        policies = load_run_policies(run_dirs[0])
        rows = []
        if args.solo:
            for role in sorted(policies):
                env = build_env(cfg.env, roles=(role,))
                stats = evaluate(env, [policies[role]], n_ep, seed)
                rows.append((f"role{role}", stats.joint_success))
                log.info("solo success role %d: %.4f", role, stats.joint_success)
        else:
            env = build_env(cfg.env)
            stats = evaluate(env, [policies[r] for r in env.roles], n_ep, seed)
            rows.append(("joint", stats.joint_success))
            for i, r in enumerate(env.roles):
                rows.append((f"role{r}", stats.per_agent_success[i]))
            log.info("joint success: %.4f", stats.joint_success)
        _csv_out(out, "eval_success.csv", cfg, ["subject", "success_rate"], rows)
    elif args.metric == "first-arrival":
        env = build_env(cfg.env)
        groups = {}
        for d in run_dirs:
            policies = load_run_policies(d)
            handles = [policies[r] for r in env.roles]
            traces = [play_episode(env, handles, seed, ep) for ep in range(n_ep)]
            groups[len(groups)] = traces
        mean, std = first_arrival_stats(groups)
        rows = [(f"role{r}", mean[i], std[i]) for i, r in enumerate(env.roles)]
        _csv_out(out, "eval_first_arrival.csv", cfg,
                 ["subject", "first_share_mean_pct", "first_share_std_pct"], rows)
        log.info("first-arrival shares: %s", rows)
    elif args.metric == "frechet":
        env = build_env(cfg.env)
        policies = load_run_policies(run_dirs[0])
        composed = [policies[r] for r in env.roles]
        if any(h.kind != "composed" for h in composed):
            raise CheckpointError("frechet compromise analysis needs composed checkpoints")
        singles = [_single_from_composed(h) for h in composed]
        means, pct, degenerate = compromise_analysis(env, singles, composed, n_ep, seed)
        rows = [(f"role{r}", means[i], pct[i], int(degenerate))
                for i, r in enumerate(env.roles)]
        _csv_out(out, "eval_frechet.csv", cfg,
                 ["subject", "frechet_mean", "compromise_pct", "degenerate"], rows)
        log.info("compromise percentages: %s", [(s, p) for s, _, p, _ in rows])
    elif args.metric == "mixed":
        env = build_env(cfg.env)
        by_seed = {}
        for d in run_dirs:
            policies = load_run_policies(d)
            with open(Path(d) / "run.json", encoding="utf-8") as fh:
                run_seed = json.load(fh)["seed"]
            by_seed[run_seed] = policies
        results, mean, std = mixed_pairing_eval(by_seed, env, cfg.eval.n_pairs,
                                                n_ep, seed)
        rows = [("|".join(map(str, assign)), rate) for assign, rate in results]
        rows.append(("mean", mean))
        rows.append(("std", std))
        _csv_out(out, "eval_mixed.csv", cfg, ["pairing", "success_rate"], rows)
        log.info("mixed pairing success: %.4f +- %.4f over %d pairings",
                 mean, std, len(results))
    return EXIT_OK


def _single_from_composed(handle: PolicyHandle) -> PolicyHandle:
    """Rebuild the frozen stage-1 policy carried inside a composed checkpoint."""
    from .nnet import ParameterVector
    from .policies import NetActor, NetValue
    actor_pv = ParameterVector(handle.frozen_actor.spec,
                               handle.frozen_actor.values.copy(),
                               handle.actor.log_std.copy())
    critic_pv = ParameterVector(handle.frozen_critic.spec,
                                handle.frozen_critic.values.copy())
    return PolicyHandle("single", handle.role, 0, handle.norms,
                        NetActor(actor_pv), NetValue(critic_pv))


def cmd_replay(args) -> int:
    cfg = _load(args)
    out = _prepare_out(args, cfg, "replay")
    seed = cfg.curriculum.seed
    policies = load_run_policies(args.run_dir)
    env = build_env(cfg.env)
    handles = [policies[r] for r in env.roles]
    traces = [play_episode(env, handles, seed, ep, record_steps=True)
              for ep in range(args.episodes)]
    with open(out / "episodes.jsonl", "w", encoding="utf-8") as fh:
        write_episode_log(traces, fh, cfg.hash(), seed, cfg.env.id)
    if args.svg:
        single_traces = None
        if all(h.kind == "composed" for h in handles):
            single_traces = []
            for trace in traces:
                per_agent = []
                for i, role in enumerate(env.roles):
                    solo_env = build_env(cfg.env, roles=(role,))
                    solo = play_episode(solo_env, [_single_from_composed(handles[i])],
                                        seed, trace.episode)
                    per_agent.append(solo.positions[0])
                single_traces.append(per_agent)
        render_trajectories(traces, build_geometry(cfg.env),
                            out / "trajectories.svg", single_traces,
                            cfg.hash(), seed)
    log.info("replayed %d episodes into %s", len(traces), out)
    return EXIT_OK


def cmd_render(args) -> int:
    cfg = _load(args)
    out = _prepare_out(args, cfg, "render")
    from .evalr import EpisodeTrace
    from .logio import read_episode_log
    header, records = read_episode_log(args.trace)
    episodes: dict[int, list[dict]] = {}
    meta: dict[int, dict] = {}
    for rec in records:
        if rec["type"] == "episode":
            meta[rec["episode"]] = rec
            episodes[rec["episode"]] = []
        elif rec["type"] == "step":
            episodes[rec["episode"]].append(rec)
    traces = []
    for ep in sorted(episodes):
        steps = episodes[ep]
        if not steps:
            continue
        n = len(steps[0]["agents"])
        positions = [[] for _ in range(n)]
        for k, step in enumerate(steps):
            for i in range(n):
                x, y = step["agents"][i][0], step["agents"][i][1]
                if k == 0 or step["actions"][i] is not None:
                    positions[i].append([x, y])
        traces.append(EpisodeTrace(
            positions=[np.array(p) for p in positions],
            outcomes=meta[ep]["outcomes"], first_arrival=meta[ep]["first_arrival"],
            goals=[np.array(g) for g in meta[ep]["goals"]],
            seed=meta[ep]["seed"], episode=ep, env_id=header.get("env_id", "")))
    render_trajectories(traces, build_geometry(cfg.env), out / "trajectories.svg",
                        None, cfg.hash(), cfg.curriculum.seed)
    log.info("rendered %d episodes", len(traces))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="iatrpo",
        description="Two-stage curriculum multi-agent TRPO: training, "
                    "evaluation, and trajectory tooling.")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=str, default=None, help="YAML config path")
    common.add_argument("--seed", type=int, default=None, help="master seed override")
    common.add_argument("--out-dir", type=str, required=True, help="output directory")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train-single", parents=[common],
                       help="stage 1: train each role alone")
    p.add_argument("--role", type=int, default=None, help="train only this role")
    p.set_defaults(fn=cmd_train_single)

    p = sub.add_parser("train-iatrpo", parents=[common],
                       help="stage 2: frozen singles + modifiers")
    p.add_argument("--single-dir", type=str, required=True,
                   help="directory with stage-1 checkpoints")
    p.set_defaults(fn=cmd_train_iatrpo)

    p = sub.add_parser("train-matrpo", parents=[common],
                       help="from-scratch centralized-critic baseline")
    p.set_defaults(fn=cmd_train_matrpo)

    p = sub.add_parser("eval", parents=[common], help="evaluation metrics")
    p.add_argument("--metric", choices=["success", "first-arrival", "frechet", "mixed"],
                   required=True)
    p.add_argument("--run-dir", action="append", required=True,
                   help="training run directory (repeat for grouped metrics)")
    p.add_argument("--episodes", type=int, default=None,
                   help="override eval.n_episodes")
    p.add_argument("--solo", action="store_true",
                   help="success: evaluate each role alone in its own course")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("replay", parents=[common],
                       help="roll episodes from checkpoints into logs/SVG")
    p.add_argument("--run-dir", type=str, required=True)
    p.add_argument("--episodes", type=int, default=5)
    p.add_argument("--svg", action="store_true")
    p.set_defaults(fn=cmd_replay)

    p = sub.add_parser("render", parents=[common],
                       help="render an episode log to SVG")
    p.add_argument("--trace", type=str, required=True, help="episodes.jsonl path")
    p.set_defaults(fn=cmd_render)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, stream=sys.stderr,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as e:
        log.error("config error: %s", e)
        return EXIT_CONFIG
    except (CheckpointError, OSError) as e:
        log.error("i/o error: %s", e)
        return EXIT_IO
    except FloatingPointError as e:
        log.error("numeric failure: %s", e)
        return EXIT_NUMERIC
    except Exception as e:  # pragma: no cover - last-resort reporting
        log.error("failed: %s", e, exc_info=True)
        return EXIT_OTHER


if __name__ == "__main__":
    sys.exit(main())
