"""Acceptance gate: one PASS/FAIL line per criterion.

Criteria 1-3 rerun the exact unit checks in a fresh interpreter and time them.
Criteria 4-7 train on the desk phantom (200 episodes x 256 streamlines); runs
are cached for the session so shared configurations train once.  Criterion 8
drives the CLI pipeline with 1 and 3 workers and compares every artifact.
"""
import filecmp
import functools
import os
import subprocess
import sys
import time

import numpy as np
import pytest
import yaml

from rltrack.agents import default_hparams
from rltrack.agents.training import evaluate, train_loop
from rltrack.cli import main
from rltrack.env import PeakFollower, TrackingConfig, TrackingEnv, track
from rltrack.phantom import desk_phantom_spec, generate_phantom
from rltrack.scoring import GroundTruth, score

HERE = os.path.dirname(os.path.abspath(__file__))
EPISODES = 200
N_STREAMLINES = 256
SEEDS = range(5)
FEW_SEEDS = range(3)


def run_pytest(node_ids):
    t = time.perf_counter()
    proc = subprocess.run([sys.executable, "-m", "pytest", "-q", "-p", "no:cacheprovider", *node_ids],
                          cwd=os.path.dirname(HERE), capture_output=True, text=True)
    return proc.returncode == 0, time.perf_counter() - t, proc.stdout.strip().splitlines()[-1:]


def test_criterion_1_unit_correctness(acceptance):
    env, nn, ag = "tests/test_env.py::", "tests/test_nn.py::", "tests/test_agents.py::"
    ok, secs, tail = run_pytest([
        env + "test_scale_action_examples", env + "test_reward_examples",
        env + "test_reward_first_step_and_no_peaks", env + "test_replay_rewards_straight_line",
        nn + "test_gradient_check",
        ag + "test_discounted_returns_example", ag + "test_returns_and_gae_match_brute_force",
        ag + "test_gae_lambda_one_is_returns_minus_values",
        ag + "test_ppo_clipped_objective_never_exceeds_unclipped",
        ag + "test_trpo_accepted_steps_respect_kl_bound",
        ag + "test_td3_target_not_above_either_twin",
        ag + "test_sac_alpha_zero_collapses_to_min_q_target"])
    passed = acceptance(1, ok and secs < 60, f"unit checks {tail} in {secs:.1f}s (limit 60s)")
    assert passed


def test_criterion_2_scorer_oracle(acceptance):
    ok, secs, tail = run_pytest(["tests/test_scoring.py::test_scorer_matches_set_enumeration_oracle"])
    passed = acceptance(2, ok and secs < 60, f"20 toy tractograms vs oracle {tail} in {secs:.1f}s")
    assert passed


def test_criterion_3_baseline(acceptance, phantom):
    t = time.perf_counter()
    env = TrackingEnv.from_phantom(phantom, TrackingConfig())
    seeds = env.seed_pool(np.random.default_rng([0, 103]))
    batch = track(env, PeakFollower(env.peaks), seeds, seed=0)
    rep = score(batch.streamlines, GroundTruth.from_phantom(phantom))
    secs = time.perf_counter() - t
    n = len(phantom.bundle_names)
    passed = acceptance(3, rep.vc_rate >= 0.90 and rep.vb == n and secs < 60,
                        f"peak follower vc_rate={rep.vc_rate:.3f} (>=0.90) VB={rep.vb}/{n} in {secs:.1f}s")
    assert passed


# -- training runs -------------------------------------------------------------------

@functools.lru_cache(maxsize=None)
def desk():
    return generate_phantom(desk_phantom_spec())


@functools.lru_cache(maxsize=None)
def trained(algo, seed, retracking=True, n_prev_dirs=4):
    """Train and evaluate once per configuration; returns a summary dict."""
    ph = desk()
    env = TrackingEnv.from_phantom(ph, TrackingConfig(retracking=retracking, n_prev_dirs=n_prev_dirs))
    t = time.process_time()
    res = train_loop(algo, env, default_hparams(algo), episodes=EPISODES,
                     n_streamlines=N_STREAMLINES, seed=seed)
    rep, _ = evaluate(res.agent, env, phantom=ph, seed=seed)
    return {"vc": rep.vc_rate, "vb": rep.vb, "ol": rep.mean_ol, "asr": res.final_asr(),
            "cpu": time.process_time() - t}


def fmt(values):
    return "[" + ", ".join(f"{v:.3f}" for v in values) + "]"


@pytest.mark.slow
def test_criterion_4_sac_auto_learns(acceptance):
    runs = [trained("sac_auto", s) for s in SEEDS]
    hits = [r["vc"] >= 0.5 and r["vb"] == 3 for r in runs]
    cpu = sum(r["cpu"] for r in runs)
    passed = acceptance(4, sum(hits) >= 3 and cpu < 1800,
                        f"SAC-Auto vc_rate per seed {fmt(r['vc'] for r in runs)} "
                        f"VB {[r['vb'] for r in runs]}; {sum(hits)}/5 seeds pass (need 3); "
                        f"cpu {cpu / 60:.1f} min (limit 30)")
    assert passed


@pytest.mark.slow
def test_criterion_5_retracking_ablation(acceptance):
    base = [trained("sac_auto", s)["vc"] for s in SEEDS]
    off = [trained("sac_auto", s, retracking=False)["vc"] for s in SEEDS]
    drops = [b - o for b, o in zip(base, off)]
    hits = sum(d >= 0.20 for d in drops)
    passed = acceptance(5, hits >= 3,
                        f"vc_rate drop without retracking {fmt(drops)}; "
                        f"{hits}/5 seeds drop >= 0.20 (need 3)")
    assert passed


@pytest.mark.slow
def test_criterion_6_state_ablation(acceptance):
    four = [trained("sac_auto", s)["vc"] for s in FEW_SEEDS]
    zero = [trained("sac_auto", s, n_prev_dirs=0)["vc"] for s in FEW_SEEDS]
    two = [trained("sac_auto", s, n_prev_dirs=2)["vc"] for s in FEW_SEEDS]
    gap = abs(float(np.median(two)) - float(np.median(four)))
    ok = float(np.median(zero)) <= 0.10 and gap <= 0.10
    passed = acceptance(6, ok, f"median vc_rate: 0 dirs {np.median(zero):.3f} (<=0.10), "
                               f"2 dirs {np.median(two):.3f} vs 4 dirs {np.median(four):.3f} "
                               f"(gap {gap:.3f} <= 0.10); per seed 0:{fmt(zero)} 2:{fmt(two)}")
    assert passed


@pytest.mark.slow
def test_criterion_7_off_policy_beats_on_policy(acceptance):
    off = {a: [trained(a, s)["asr"] for s in FEW_SEEDS] for a in ("sac", "sac_auto", "td3")}
    on = {a: [trained(a, s)["asr"] for s in FEW_SEEDS] for a in ("vpg", "a2c")}
    m_off = float(np.median([v for vs in off.values() for v in vs]))
    m_on = float(np.median([v for vs in on.values() for v in vs]))
    detail = "; ".join(f"{a} {np.median(v):.2f}" for a, v in {**off, **on}.items())
    passed = acceptance(7, m_off > m_on, f"median final ASR off-policy {m_off:.2f} > on-policy "
                                          f"{m_on:.2f} ({detail}; equal budget "
                                          f"{EPISODES}x{N_STREAMLINES} seeds)")
    assert passed


def strip_wall_time(path):
    rows = [line.split(",") for line in open(path).read().splitlines()]
    return [r[:-1] if len(r) > 1 else r for r in rows]


def test_criterion_8_determinism(acceptance, tmp_path):
    ph = tmp_path / "ph"
    assert main(["phantom", "--out", str(ph)]) == 0
    cfg = tmp_path / "run.yaml"
    cfg.write_text(yaml.safe_dump({"algo": "sac_auto", "episodes": 3, "n_streamlines": 64,
                                   "hparams": {"width": 32, "batch_size": 64},
                                   "eval": {"seeds_per_voxel": 1}, "data": str(ph)}))
    for w in (1, 3):
        d = tmp_path / f"w{w}"
        assert main(["train", "--config", str(cfg), "--seed", "5", "--workers", str(w),
                     "--out", str(d / "train")]) == 0
        assert main(["track", "--checkpoint", str(d / "train" / "checkpoint.bin"), "--data", str(ph),
                     "--npv", "2", "--seed", "5", "--workers", str(w), "--out", str(d / "track")]) == 0
        assert main(["score", "--tractogram", str(d / "track" / "tractogram.s1"), "--data", str(ph),
                     "--out", str(d / "score")]) == 0
    same, names = [], []
    for sub in ("train", "track", "score"):
        for name in sorted(os.listdir(tmp_path / "w1" / sub)):
            a, b = tmp_path / "w1" / sub / name, tmp_path / "w3" / sub / name
            names.append(f"{sub}/{name}")
            if name == "progress.csv":
                same.append(strip_wall_time(a) == strip_wall_time(b))
            elif name == "config.resolved.json":
                # records the worker count and output path themselves
                norm = {"workers": 0, "out": ""}
                same.append(yaml.safe_load(a.read_text()) | norm == yaml.safe_load(b.read_text()) | norm)
            else:
                same.append(filecmp.cmp(a, b, shallow=False))
    diff = [n for n, s in zip(names, same) if not s]
    passed = acceptance(8, not diff, f"{len(names)} artifacts, 1 vs 3 workers; differing: {diff or 'none'}")
    assert passed
