"""Episode loop, evaluation and hyperparameter grid search."""
import csv
import itertools
import os
import time
from dataclasses import dataclass, field, replace

import numpy as np

from ..env import TrackingEnv, rollout_episode, track
from ..nn import load_checkpoint, save_checkpoint
from ..scoring import GroundTruth, score
from . import make_agent
from .hparams import AgentHyperparams, default_hparams

PROGRESS_FIELDS = ["episode", "asr", "actor_loss", "critic_loss", "n_transitions", "wall_time"]


@dataclass
class TrainResult:
    agent: object
    rows: list = field(default_factory=list)

    @property
    def asr(self):
        return np.array([r["asr"] for r in self.rows])

    def final_asr(self, last=10):
        a = self.asr
        return float(a[-last:].mean()) if len(a) else float("nan")


def training_env(env, algo, hp):
    """Copy of ``env`` with FA-scaled exploration noise for deterministic actors."""
    if algo in ("ddpg", "td3"):
        cfg = replace(env.cfg, noise="fa_scaled", noise_sigma=hp.sigma)
    else:
        cfg = replace(env.cfg, noise="none", noise_sigma=0.0)
    return TrackingEnv(cfg, env.signal, env.wm, env.peaks, env.fa, env.rois, env.interface,
                       env.reward_cfg)


def train_loop(algo, env, hp=None, episodes=1000, n_streamlines=4096, seed=0, workers=1,
               out_dir=None, log=None):
    """Train ``algo`` for ``episodes`` rollouts of ``n_streamlines`` seeds each.

    Seeds for every episode are drawn without replacement from the env's seed
    pool.  Progress rows hold the average sum of reward per streamline (ASR).
    With ``out_dir`` a ``progress.csv`` and a final ``checkpoint.bin`` are written.
    """
    hp = hp or default_hparams(algo)
    tenv = training_env(env, algo, hp)
    agent = make_agent(algo, env.state_dim, hp, seed)
    pool = env.seed_pool(np.random.default_rng([seed, 101]))
    n = min(n_streamlines, len(pool))
    policy = agent.policy(stochastic=True)
    result = TrainResult(agent)
    t0 = time.perf_counter()
    for ep in range(episodes):
        pick = np.random.default_rng([seed, ep, 102]).choice(len(pool), n, replace=False)
        batch, tb = rollout_episode(tenv, policy, pool[pick], seed=seed, episode=ep,
                                    collect=True, workers=workers)
        losses = agent.update(tb, ep)
        row = {"episode": ep, "asr": float(batch.returns.mean()),
               "actor_loss": float(losses.get("actor_loss", np.nan)),
               "critic_loss": float(losses.get("critic_loss", np.nan)),
               "n_transitions": 0 if tb is None else len(tb),
               "wall_time": time.perf_counter() - t0}
        result.rows.append(row)
        if log is not None:
            log(row)
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        write_progress(os.path.join(out_dir, "progress.csv"), result.rows, seed)
        save_agent(os.path.join(out_dir, "checkpoint.bin"), agent, algo, env, seed)
    return result


def write_progress(path, rows, seed):
    with open(path, "w", newline="") as fh:
        fh.write(f"# seed={seed}\n")
        w = csv.DictWriter(fh, fieldnames=PROGRESS_FIELDS)
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})


def save_agent(path, agent, algo, env, seed):
    meta = {"algo": algo, "seed": seed, "state_dim": env.state_dim,
            "voxel_size": float(env.wm.affine.voxel_sizes[0]),
            "hparams": agent.hp.to_dict(), "tracking": dict(vars(env.cfg))}
    save_checkpoint(path, agent.nets(), agent.arrays(), meta)


def load_agent(path):
    nets, arrays, meta = load_checkpoint(path)
    hp = AgentHyperparams(**meta["hparams"])
    agent = make_agent(meta["algo"], meta["state_dim"], hp, meta["seed"])
    agent.load_state(nets, arrays)
    return agent, meta


def evaluate(agent, env, phantom=None, gt=None, seeds_per_voxel=None, seed=0, workers=1):
    """Track the whole seed mask with the deterministic policy and score it."""
    cfg = env.cfg
    if seeds_per_voxel is not None:
        cfg = replace(cfg, seeds_per_voxel=seeds_per_voxel)
    eval_env = TrackingEnv(replace(cfg, noise="none"), env.signal, env.wm, env.peaks, env.fa,
                           env.rois, env.interface, env.reward_cfg)
    seeds = eval_env.seed_pool(np.random.default_rng([seed, 103]))
    batch = track(eval_env, agent.policy(stochastic=False), seeds, seed=seed, workers=workers)
    if gt is None:
        gt = GroundTruth.from_phantom(phantom, cfg.min_length, cfg.max_length)
    return score(batch.streamlines, gt), batch


def rank_results(results):
    """Sort (params, vc, ol) records by VC, ties broken by OL (both descending)."""
    return sorted(results, key=lambda r: (-r["vc_rate"], -r["mean_ol"]))


def grid_sweep(algo, grid, run, base=None):
    """Try every combination in ``grid`` and rank the outcomes.

    ``run(hp)`` trains and scores one configuration, returning a dict with at
    least ``vc_rate`` and ``mean_ol``.  Returns the ranked list of records;
    the first entry is the selected configuration.
    """
    base = base or default_hparams(algo)
    keys = sorted(grid)
    records = []
    for values in itertools.product(*(grid[k] for k in keys)):
        params = dict(zip(keys, values))
        hp = replace(base, **params)
        out = run(hp)
        records.append({"params": params, "vc_rate": float(out["vc_rate"]),
                        "mean_ol": float(out["mean_ol"])})
    return rank_results(records)
