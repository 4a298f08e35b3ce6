"""Command-line entry point.

    rltrack phantom  [--config SPEC] --out DIR
    rltrack train    [--config RUN] [--seed N] [--workers N] [--out DIR]
    rltrack track    --checkpoint FILE --data DIR [--npv N] [--step MM] [--min-length MM] [--max-length MM] --out DIR
    rltrack score    --tractogram FILE --data DIR [--min-length MM] [--max-length MM] --out DIR
    rltrack sweep    [--config RUN] [--grid FILE] --out DIR
    rltrack baseline --data DIR [--npv N] --out DIR

Every failure exits nonzero after printing one JSON object
``{"error": ..., "message": ..., "command": ...}`` on stderr.
"""
import argparse
import csv
import json
import os
import sys
from dataclasses import replace

import numpy as np

from .agents.training import evaluate, grid_sweep, load_agent, train_loop
from .config import ConfigError, load_config, read_mapping, resolve, write_resolved
from .env import (PeakFollower, TrackingConfig, TrackingEnv, TrackingError, rescale_step, track,
                  write_reason_csv)
from .phantom import (desk_phantom_spec, generate_phantom, load_phantom, phantom_spec_from_dict,
                      save_phantom)
from .scoring import GroundTruth, score, write_scores
from .streamlines import load_s1, save_s1

EXIT_INVALID = 2
EXIT_MISSING = 3


class CLIError(ValueError):
    pass


def _require_out(args):
    if not args.out:
        raise CLIError("--out is required")
    os.makedirs(args.out, exist_ok=True)
    return args.out


def _write_json(path, doc):
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)


def load_data(cfg):
    """Phantom for a run config: a saved directory, the desk preset or an inline spec."""
    if cfg.data:
        return load_phantom(cfg.data)
    ph = cfg.phantom
    if ph in (None, "desk"):
        return generate_phantom(desk_phantom_spec())
    if isinstance(ph, str):
        ph = read_mapping(ph)
    if not isinstance(ph, dict):
        raise ConfigError("phantom: expected 'desk', a spec file path or a spec mapping")
    return generate_phantom(phantom_spec_from_dict(ph))


def _env_for(phantom, cfg):
    return TrackingEnv.from_phantom(phantom, cfg.tracking, cfg.reward)


# -- subcommands ------------------------------------------------------------------

def cmd_phantom(args):
    out = _require_out(args)
    spec = phantom_spec_from_dict(read_mapping(args.config)) if args.config else desk_phantom_spec()
    ph = generate_phantom(spec)
    save_phantom(ph, out)
    return {"out": out, "bundles": ph.bundle_names, "dims": list(spec.dims),
            "wm_voxels": int(ph.wm_mask.data.sum())}


def cmd_train(args):
    cfg = load_config(args.config, args.seed, args.workers, args.out)
    if not cfg.out:
        raise CLIError("--out (or 'out' in the config) is required")
    write_resolved(cfg, cfg.out)
    ph = load_data(cfg)
    env = _env_for(ph, cfg)
    res = train_loop(cfg.algo, env, cfg.hparams, episodes=cfg.episodes,
                     n_streamlines=cfg.n_streamlines, seed=cfg.seed, workers=cfg.workers,
                     out_dir=cfg.out)
    report, _ = evaluate(res.agent, env, phantom=ph, seeds_per_voxel=cfg.eval["seeds_per_voxel"],
                         seed=cfg.seed, workers=cfg.workers)
    write_scores(report, cfg.out)
    return {"out": cfg.out, "final_asr": res.final_asr(), "vc_rate": report.vc_rate,
            "vb": report.vb, "mean_ol": report.mean_ol}


def tracking_config_for(meta, voxel_size, npv=None, step=None, min_length=None, max_length=None):
    """Checkpoint tracking settings adapted to a target volume.

    Without an explicit ``step`` the trained step size is rescaled by the ratio
    of voxel sizes, so each step crosses the same number of voxels.
    """
    base = TrackingConfig(**meta["tracking"])
    if npv is not None and int(npv) < 1:
        raise TrackingError(f"npv must be >= 1, got {npv}")
    if step is None:
        step = rescale_step(base.step_size, meta["voxel_size"], voxel_size)
    updates = {"step_size": float(step), "noise": "none", "noise_sigma": 0.0}
    if npv is not None:
        updates["seeds_per_voxel"] = int(npv)
    if min_length is not None:
        updates["min_length"] = float(min_length)
    if max_length is not None:
        updates["max_length"] = float(max_length)
    return replace(base, **updates)


def cmd_track(args):
    if args.npv is not None and args.npv < 1:
        raise TrackingError(f"npv must be >= 1, got {args.npv}")
    out = _require_out(args)
    if not args.checkpoint or not args.data:
        raise CLIError("track needs --checkpoint and --data")
    agent, meta = load_agent(args.checkpoint)
    ph = load_phantom(args.data)
    vs = float(ph.wm_mask.affine.voxel_sizes[0])
    tcfg = tracking_config_for(meta, vs, args.npv, args.step, args.min_length, args.max_length)
    env = TrackingEnv.from_phantom(ph, tcfg)
    if env.state_dim != agent.state_dim:
        raise CLIError(f"shape mismatch: checkpoint expects state size {agent.state_dim}, "
                       f"data gives {env.state_dim}")
    seed = args.seed or 0
    seeds = env.seed_pool(np.random.default_rng([seed, 103]))
    batch = track(env, agent.policy(stochastic=False), seeds, seed=seed, workers=args.workers or 1)
    save_s1(os.path.join(out, "tractogram.s1"), batch.streamlines)
    write_reason_csv(os.path.join(out, "reasons.csv"), batch)
    summary = {"n_streamlines": len(batch), "step_size": tcfg.step_size,
               "seeds_per_voxel": tcfg.seeds_per_voxel, "seed": seed,
               "algo": meta["algo"], "tracking": dict(vars(tcfg))}
    _write_json(os.path.join(out, "track.json"), summary)
    return {"out": out, "n_streamlines": len(batch), "step_size": tcfg.step_size}


def cmd_score(args):
    out = _require_out(args)
    if not args.tractogram or not args.data:
        raise CLIError("score needs --tractogram and --data")
    streamlines = load_s1(args.tractogram)
    ph = load_phantom(args.data)
    gt = GroundTruth.from_phantom(ph, 20.0 if args.min_length is None else args.min_length,
                                  200.0 if args.max_length is None else args.max_length)
    report = score(streamlines, gt)
    write_scores(report, out)
    return {"out": out, "vc_rate": report.vc_rate, "vb": report.vb, "mean_ol": report.mean_ol}


def cmd_baseline(args):
    out = _require_out(args)
    if not args.data:
        raise CLIError("baseline needs --data")
    ph = load_phantom(args.data)
    cfg = load_config(args.config, args.seed, args.workers, out)
    tcfg = cfg.tracking
    if args.npv is not None:
        if args.npv < 1:
            raise TrackingError(f"npv must be >= 1, got {args.npv}")
        tcfg = replace(tcfg, seeds_per_voxel=args.npv)
    env = TrackingEnv.from_phantom(ph, tcfg)
    seeds = env.seed_pool(np.random.default_rng([cfg.seed, 103]))
    batch = track(env, PeakFollower(env.peaks), seeds, seed=cfg.seed, workers=cfg.workers)
    save_s1(os.path.join(out, "tractogram.s1"), batch.streamlines)
    write_reason_csv(os.path.join(out, "reasons.csv"), batch)
    report = score(batch.streamlines, GroundTruth.from_phantom(ph, tcfg.min_length, tcfg.max_length))
    write_scores(report, out)
    return {"out": out, "vc_rate": report.vc_rate, "vb": report.vb, "mean_ol": report.mean_ol}


def cmd_sweep(args):
    cfg = load_config(args.config, args.seed, args.workers, args.out)
    if not cfg.out:
        raise CLIError("--out (or 'out' in the config) is required")
    grid = cfg.grid
    if args.grid:
        grid = resolve({"algo": cfg.algo, "grid": read_mapping(args.grid)}).grid
    if not grid:
        raise CLIError("sweep needs a grid (--grid FILE or 'grid' in the config)")
    cfg = replace(cfg, grid=grid)
    write_resolved(cfg, cfg.out)
    ph = load_data(cfg)
    env = _env_for(ph, cfg)

    def run(hp):
        res = train_loop(cfg.algo, env, hp, episodes=cfg.episodes, n_streamlines=cfg.n_streamlines,
                         seed=cfg.seed, workers=cfg.workers)
        report, _ = evaluate(res.agent, env, phantom=ph,
                             seeds_per_voxel=cfg.eval["seeds_per_voxel"], seed=cfg.seed,
                             workers=cfg.workers)
        return {"vc_rate": report.vc_rate, "mean_ol": report.mean_ol}

    ranked = grid_sweep(cfg.algo, grid, run, base=cfg.hparams)
    keys = sorted(grid)
    with open(os.path.join(cfg.out, "sweep.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["rank"] + keys + ["vc_rate", "mean_ol"])
        for i, r in enumerate(ranked):
            w.writerow([i + 1] + [r["params"][k] for k in keys] + [repr(r["vc_rate"]), repr(r["mean_ol"])])
    _write_json(os.path.join(cfg.out, "sweep.json"), {"algo": cfg.algo, "ranked": ranked})
    return {"out": cfg.out, "best": ranked[0]}


COMMANDS = {"phantom": cmd_phantom, "train": cmd_train, "track": cmd_track, "score": cmd_score,
            "sweep": cmd_sweep, "baseline": cmd_baseline}


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML/JSON config file")
    common.add_argument("--seed", type=int, help="master RNG seed")
    common.add_argument("--workers", type=int, help="worker threads for rollouts")
    common.add_argument("--out", help="output directory")

    p = argparse.ArgumentParser(prog="rltrack", description="RL tractography on synthetic phantoms")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("phantom", parents=[common], help="generate a phantom (V1 volumes + ground truth)")
    sub.add_parser("train", parents=[common], help="train an agent")
    t = sub.add_parser("track", parents=[common], help="track a phantom with a trained agent")
    t.add_argument("--checkpoint")
    t.add_argument("--data", help="phantom directory")
    t.add_argument("--npv", type=int, help="seeds per voxel")
    t.add_argument("--step", type=float, help="step size in mm (default: rescaled from training)")
    t.add_argument("--min-length", type=float)
    t.add_argument("--max-length", type=float)
    s = sub.add_parser("score", parents=[common], help="score a tractogram against ground truth")
    s.add_argument("--tractogram")
    s.add_argument("--data", help="phantom directory")
    s.add_argument("--min-length", type=float)
    s.add_argument("--max-length", type=float)
    w = sub.add_parser("sweep", parents=[common], help="grid search, ranked by VC then OL")
    w.add_argument("--grid", help="YAML/JSON mapping of hyperparameter lists")
    b = sub.add_parser("baseline", parents=[common], help="deterministic peak-following tracker")
    b.add_argument("--data", help="phantom directory")
    b.add_argument("--npv", type=int, help="seeds per voxel")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    if args.workers is not None and args.workers < 1:
        return _fail(args.command, "ConfigError", "--workers must be >= 1", EXIT_INVALID)
    try:
        result = COMMANDS[args.command](args)
    except FileNotFoundError as exc:
        return _fail(args.command, "FileNotFoundError", str(exc), EXIT_MISSING)
    except (ValueError, KeyError, OSError) as exc:
        return _fail(args.command, type(exc).__name__, str(exc), EXIT_INVALID)
    print(json.dumps(result, sort_keys=True, default=float))
    return 0


def _fail(command, kind, message, code):
    print(json.dumps({"error": kind, "message": message, "command": command}), file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
