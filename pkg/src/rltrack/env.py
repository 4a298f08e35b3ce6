"""Tractography as a batched MDP.

A streamline is grown one fixed-length step at a time.  The agent sees the
signal around the tip plus its recent directions, proposes a 3-vector, and
the environment normalises it to the step size, checks the stopping rules and
hands back a reward for following the local peaks smoothly.

State layout (``assemble_states``), in this order:

1. signal at 7 positions, position-major: tip, +x, -x, +y, -y, +z, -z, where
   each neighbour sits one voxel size away along that world axis (7*C values);
2. WM mask at the same 7 positions (only when ``include_wm_in_state``);
3. the last ``n_prev_dirs`` unit segments, newest first, zero padded.

Randomness: every step draws one (n, 6) block of standard normals from a
generator keyed on (seed, episode, phase, step) and row ``i`` belongs to
streamline ``i``.  Columns 0-2 go to the policy (stochastic policies turn them
into actions), columns 3-5 to the FA-scaled exploration noise.  Nothing
depends on which streamlines are still active or how work is split between
threads, so episodes are reproducible for any worker count.
"""
import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np

from .volume import nearest_voxel

FORWARD, RETRACK, BACKWARD = 0, 1, 2
MIN_ACTION_NORM = 1e-8


class TrackingError(ValueError):
    pass


class TerminationReason(IntEnum):
    EXITED_MASK = 1
    REACHED_GM = 2
    ANGLE_EXCEEDED = 3
    CUMULATIVE_ANGLE_EXCEEDED = 4
    TOO_LONG = 5

    @property
    def label(self):
        return self.name.lower()


@dataclass
class TrackingConfig:
    step_size: float = 0.75
    max_length: float = 200.0
    min_length: float = 20.0
    theta_max: float = 30.0
    cumulative_angle_max: float = 180.0
    cumulative_window: int = 10
    n_prev_dirs: int = 4
    include_wm_in_state: bool = True
    signal_kind: str = "fodf"
    seeding: str = "wm"
    retracking: bool = True
    seeds_per_voxel: int = 10
    noise: str = "none"
    noise_sigma: float = 0.0
    mask_threshold: float = 0.1
    interpolate_mask: bool = True

    def __post_init__(self):
        if not self.step_size > 0:
            raise TrackingError("step_size must be > 0")
        if not 0 <= self.min_length < self.max_length:
            raise TrackingError("need 0 <= min_length < max_length")
        if not 0 < self.theta_max <= 90:
            raise TrackingError("theta_max must be in (0, 90]")
        if not self.cumulative_angle_max > 0 or self.cumulative_window < 2:
            raise TrackingError("cumulative angle rule needs a positive bound and window >= 2")
        if self.n_prev_dirs not in (0, 2, 4):
            raise TrackingError("n_prev_dirs must be 0, 2 or 4")
        if self.signal_kind not in ("fodf", "raw"):
            raise TrackingError(f"unknown signal_kind {self.signal_kind!r}")
        if self.seeding not in ("wm", "interface"):
            raise TrackingError(f"unknown seeding {self.seeding!r}")
        if self.seeds_per_voxel < 1:
            raise TrackingError("seeds_per_voxel must be >= 1")
        if self.noise not in ("none", "fa_scaled"):
            raise TrackingError(f"unknown noise {self.noise!r}")
        if self.noise_sigma < 0:
            raise TrackingError("noise_sigma must be >= 0")

    @property
    def max_points(self):
        """Upper bound on the points of one streamline (the terminal step included)."""
        return int(np.floor(self.max_length / self.step_size)) + 2


@dataclass
class RewardConfig:
    alpha_length: float = 0.0
    alpha_gm: float = 0.0

    def __post_init__(self):
        for name in ("alpha_length", "alpha_gm"):
            v = getattr(self, name)
            if not np.isfinite(v) or v < 0:
                raise TrackingError(f"{name} must be finite and >= 0")


@dataclass
class StreamlineBatch:
    """Finished streamlines of one episode (or one tracking pass).

    ``streamlines[i]`` runs from the far end of the forward half, through the
    seed (at row ``seed_index[i]``), to the end of the backward half.
    ``reasons[i]`` holds the stopping reason of the forward and backward half
    (0 when a half was not tracked, e.g. with interface seeding).
    """

    seeds: np.ndarray
    streamlines: list
    seed_index: np.ndarray
    reasons: np.ndarray
    returns: np.ndarray = None

    def __len__(self):
        return len(self.streamlines)

    def forward_half(self, i):
        return self.streamlines[i][: self.seed_index[i] + 1][::-1]

    def lengths(self):
        return np.array([_polyline_length(s) for s in self.streamlines])

    def reason_counts(self):
        r = self.reasons[self.reasons > 0]
        return {t.label: int(np.sum(r == t)) for t in TerminationReason}


def _polyline_length(pts):
    return float(np.linalg.norm(np.diff(pts, axis=0), axis=1).sum()) if len(pts) > 1 else 0.0


@dataclass
class TransitionBatch:
    """Flat (s, a, r, s', done) arrays plus the bookkeeping learners need.

    ``truncated`` marks a done caused by the length cap, where the value of
    the next state should still be bootstrapped.  ``traj`` identifies the
    trajectory (2*i for the forward half of streamline i, 2*i+1 for its
    retrack + backward half) and ``step`` the position within it.
    """

    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray
    dones: np.ndarray
    truncated: np.ndarray
    traj: np.ndarray
    step: np.ndarray
    phase: np.ndarray = field(default=None)

    def __len__(self):
        return len(self.rewards)

    @property
    def terminals(self):
        return self.dones & ~self.truncated

    def trajectory_order(self):
        """Permutation that makes every trajectory contiguous and time ordered."""
        return np.lexsort((self.step, self.traj))

    def take(self, idx):
        return TransitionBatch(**{k: v[idx] for k, v in self.__dict__.items() if v is not None})

    @classmethod
    def concat(cls, parts):
        parts = [p for p in parts if p is not None and len(p)]
        if not parts:
            return None
        keys = [k for k, v in parts[0].__dict__.items() if v is not None]
        return cls(**{k: np.concatenate([getattr(p, k) for p in parts]) for k in keys})


# -- single-streamline operations -------------------------------------------

def scale_action(a, step_size):
    """Step of length ``step_size`` along ``a``; None when ``a`` is (near) zero."""
    a = np.asarray(a, dtype=np.float64)
    n = np.linalg.norm(a)
    if n < MIN_ACTION_NORM:
        return None
    return step_size * a / n


def _dot3(a, b):
    return a[..., 0] * b[..., 0] + a[..., 1] * b[..., 1] + a[..., 2] * b[..., 2]


def _unit_rows(v):
    n = np.sqrt(_dot3(v, v))
    out = np.zeros_like(v)
    ok = n > 0
    out[ok] = v[ok] / n[ok, None]
    return out, n


def peak_alignment(peaks, u_hat):
    """max_k |<v_k, u>| over the (zero padded) peaks; (N, K, 3), (N, 3) -> (N,)."""
    if peaks.shape[1] == 0:
        return np.zeros(len(u_hat))
    return np.abs(_dot3(peaks, u_hat[:, None, :])).max(axis=1)


def rewards(peaks, u, u_prev, has_prev, reached_gm, length, reward_cfg, max_length):
    """Vectorised step reward; see ``reward_step`` for the formula."""
    u_hat, _ = _unit_rows(np.asarray(u, dtype=np.float64))
    p_hat, _ = _unit_rows(np.asarray(u_prev, dtype=np.float64))
    align = peak_alignment(np.asarray(peaks, dtype=np.float64), u_hat)
    smooth = np.where(has_prev, _dot3(u_hat, p_hat), 1.0)
    r = align * smooth
    if reward_cfg.alpha_length:
        r = r + reward_cfg.alpha_length * (np.asarray(length, dtype=np.float64) / max_length)
    if reward_cfg.alpha_gm:
        r = r + reward_cfg.alpha_gm * np.asarray(reached_gm, dtype=np.float64)
    return r


def reward_step(peaks, u, u_prev=None, reached_gm=False, length_so_far=0.0,
                reward_cfg=None, max_length=200.0):
    """Peak alignment times smoothness, plus the optional length and GM bonuses.

    ``r = max_k |<v_k, u>| * <u, u_prev> + a_len * length/max_length + a_gm * [gm]``
    with unit vectors throughout.  Peaks are axial, hence the absolute value.
    Without a previous segment the smoothness factor is 1; a voxel without
    peaks contributes 0.
    """
    reward_cfg = reward_cfg or RewardConfig()
    pk = np.asarray(peaks, dtype=np.float64).reshape(1, -1, 3)
    has_prev = u_prev is not None
    prev = np.zeros((1, 3)) if u_prev is None else np.asarray(u_prev, dtype=np.float64).reshape(1, 3)
    return float(rewards(pk, np.asarray(u, dtype=np.float64).reshape(1, 3), prev,
                         np.array([has_prev]), np.array([reached_gm]),
                         np.array([length_so_far]), reward_cfg, max_length)[0])


def turning_angles(dirs):
    """Angles in degrees between consecutive unit directions."""
    d = np.asarray(dirs, dtype=np.float64)
    return np.degrees(np.arccos(np.clip(_dot3(d[:-1], d[1:]), -1.0, 1.0)))


def seed_points(mask, seeds_per_voxel, rng):
    """``seeds_per_voxel`` uniform points inside every nonzero voxel of ``mask``."""
    if seeds_per_voxel < 1:
        raise TrackingError("seeds_per_voxel must be >= 1")
    vox = np.argwhere(np.asarray(mask.data) > 0)
    if len(vox) == 0:
        raise TrackingError("seed mask is empty")
    rng = np.random.default_rng(rng)
    base = np.repeat(vox.astype(np.float64), seeds_per_voxel, axis=0)
    jitter = rng.uniform(-0.5, 0.5, size=base.shape)
    return mask.affine.voxel_to_world(base + jitter)


def rescale_step(step_size, train_voxel_size, track_voxel_size):
    """Keep the number of voxels crossed per step when the voxel size changes."""
    return float(step_size) * float(track_voxel_size) / float(train_voxel_size)


def write_reason_csv(path, batch):
    counts = batch.reason_counts()
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["reason", "count"])
        for t in TerminationReason:
            w.writerow([t.label, counts[t.label]])


# -- the environment ---------------------------------------------------------

class TrackingEnv:
    """Volumes plus configuration; stateless between episodes."""

    def __init__(self, cfg, signal, wm, peaks, fa, rois, interface=None, reward_cfg=None):
        self.cfg = cfg
        self.reward_cfg = reward_cfg or RewardConfig()
        self.signal = signal
        self.wm = wm
        self.peaks = peaks
        self.fa = fa
        self.rois = rois
        self.interface = interface
        vs = wm.affine.voxel_sizes
        off = np.zeros((7, 3))
        for k in range(3):
            off[1 + 2 * k, k] = vs[k]
            off[2 + 2 * k, k] = -vs[k]
        self.offsets = off
        self.hist_len = max(cfg.cumulative_window - 1, cfg.n_prev_dirs, 1)

    @classmethod
    def from_phantom(cls, phantom, cfg, reward_cfg=None):
        signal = phantom.fodf if cfg.signal_kind == "fodf" else phantom.raw
        return cls(cfg, signal, phantom.wm_mask, phantom.peaks, phantom.fa, phantom.rois,
                   phantom.interface_mask, reward_cfg)

    @property
    def state_dim(self):
        c = self.signal.channels
        return 7 * c + (7 if self.cfg.include_wm_in_state else 0) + 3 * self.cfg.n_prev_dirs

    def seed_mask(self):
        if self.cfg.seeding == "interface":
            if self.interface is None:
                raise TrackingError("interface seeding needs an interface mask")
            return self.interface
        return self.wm

    def seed_pool(self, rng):
        return seed_points(self.seed_mask(), self.cfg.seeds_per_voxel, rng)

    def assemble_states(self, pos, hist):
        """States for tips ``pos`` (m, 3) with direction history ``hist`` (m, H, 3)."""
        m = len(pos)
        pts = (pos[:, None, :] + self.offsets[None]).reshape(-1, 3)
        parts = [self.signal.sample(pts).reshape(m, -1)]
        if self.cfg.include_wm_in_state:
            parts.append(self.wm.sample(pts).reshape(m, 7))
        n = self.cfg.n_prev_dirs
        if n:
            parts.append(hist[:, ::-1][:, :n].reshape(m, 3 * n))
        return np.concatenate(parts, axis=1).astype(np.float32)

    def in_gm(self, points):
        return self.rois.nearest(points)[:, 0] > 0

    def mask_value(self, points):
        if self.cfg.interpolate_mask:
            return self.wm.sample(points)
        return self.wm.nearest(points)[:, 0]

    def check_termination(self, new_pos, u_hat, hist, hcount, nseg):
        """Stopping reason (0 = keep going) for each proposed step, by priority."""
        cfg = self.cfg
        m = len(new_pos)
        out = np.zeros(m, dtype=np.int64)
        too_long = (nseg + 1) * cfg.step_size > cfg.max_length
        out[too_long] = TerminationReason.TOO_LONG
        w = cfg.cumulative_window
        seq = np.concatenate([hist[:, -(w - 1):], u_hat[:, None, :]], axis=1)
        ang = np.degrees(np.arccos(np.clip(_dot3(seq[:, :-1], seq[:, 1:]), -1.0, 1.0)))
        valid = np.arange(w - 1)[None, :] >= (w - 1 - hcount)[:, None]
        cum = np.where(valid, ang, 0.0).sum(axis=1)
        out[cum > cfg.cumulative_angle_max] = TerminationReason.CUMULATIVE_ANGLE_EXCEEDED
        has_prev = hcount > 0
        out[has_prev & (ang[:, -1] > cfg.theta_max)] = TerminationReason.ANGLE_EXCEEDED
        out[self.in_gm(new_pos)] = TerminationReason.REACHED_GM
        out[self.mask_value(new_pos) <= cfg.mask_threshold] = TerminationReason.EXITED_MASK
        return out


def _push(hist, rows, u_hat):
    hist[rows, :-1] = hist[rows, 1:]
    hist[rows, -1] = u_hat


def _normals(seed, episode, phase, step, n):
    ss = np.random.SeedSequence([int(seed), int(episode), int(phase), int(step)])
    return np.random.Generator(np.random.Philox(ss)).standard_normal((n, 6))


class _Run:
    """Mutable per-episode arrays; rows are streamlines."""

    def __init__(self, env, seeds, policy, seed, episode, collect, workers):
        self.env = env
        self.cfg = env.cfg
        self.seeds = np.asarray(seeds, dtype=np.float64).reshape(-1, 3)
        self.n = n = len(self.seeds)
        self.policy = policy
        self.seed = seed
        self.episode = episode
        self.collect = collect
        self.workers = max(1, int(workers))
        self.need_state = collect or getattr(policy, "needs_state", True)
        lmax = self.cfg.max_points
        self.fwd = np.zeros((n, lmax, 3))
        self.fwd[:, 0] = self.seeds
        self.fwd_n = np.ones(n, dtype=np.int64)
        self.bwd = np.zeros((n, lmax, 3))
        self.bwd_n = np.zeros(n, dtype=np.int64)
        self.reasons = np.zeros((n, 2), dtype=np.int64)
        self.returns = np.zeros(n)
        self.parts = []
        self.pool = ThreadPoolExecutor(self.workers) if self.workers > 1 else None

    def close(self):
        if self.pool is not None:
            self.pool.shutdown()

    def _chunked(self, fn, m, *arrays):
        """Apply ``fn`` to contiguous row chunks and stitch the results back."""
        if self.pool is None or m < 2 * self.workers:
            return fn(*arrays)
        bounds = np.linspace(0, m, self.workers + 1).astype(int)
        jobs = [self.pool.submit(fn, *[a[lo:hi] for a in arrays])
                for lo, hi in zip(bounds[:-1], bounds[1:])]
        res = [j.result() for j in jobs]
        if isinstance(res[0], tuple):
            return tuple(np.concatenate(r) for r in zip(*res))
        return np.concatenate(res)

    def states(self, pos, hist):
        if not self.need_state:
            return np.zeros((len(pos), 0), dtype=np.float32)
        return self._chunked(self.env.assemble_states, len(pos), pos, hist)

    def propose(self, states, pos, hist, hcount, eps):
        prev = hist[:, -1]
        has_prev = hcount > 0
        if hasattr(self.policy, "directions"):
            a = self.policy.directions(pos, prev, has_prev)
        else:
            a = self.policy(states, eps[:, :3])
        a = np.asarray(a, dtype=np.float64).reshape(-1, 3)
        if self.cfg.noise == "fa_scaled" and self.cfg.noise_sigma > 0:
            a = a + (self.cfg.noise_sigma * self.env.fa.sample(pos))[:, None] * eps[:, 3:]
        return a

    def record(self, s, a, r, s2, done, trunc, rows, phase, step):
        if not self.collect:
            return
        half = 0 if phase == FORWARD else 1
        self.parts.append(TransitionBatch(
            states=s, actions=a.astype(np.float32), rewards=r, next_states=s2,
            dones=done, truncated=trunc, traj=2 * rows + half,
            step=np.asarray(step, dtype=np.int64) * np.ones(len(rows), dtype=np.int64),
            phase=np.full(len(rows), phase, dtype=np.int8)))

    def free_phase(self, phase, pos, hist, hcount, nseg, cur, base_step, flip_first=False):
        """Track every row until it stops; new points go to the phase's buffer."""
        env, cfg = self.env, self.cfg
        buf, cnt = (self.fwd, self.fwd_n) if phase == FORWARD else (self.bwd, self.bwd_n)
        col = 0 if phase == FORWARD else 1
        active = np.ones(self.n, dtype=bool)
        k = 0
        while active.any():
            rows = np.nonzero(active)[0]
            eps = _normals(self.seed, self.episode, phase, k, self.n)[rows]
            p, h, hc, ns = pos[rows], hist[rows], hcount[rows], nseg[rows]
            s = cur[rows]
            a = self.propose(s, p, h, hc, eps)
            a_hat, norm = _unit_rows(a)
            if flip_first and k == 0:
                trial = p + cfg.step_size * a_hat
                bad = (env.mask_value(trial) <= cfg.mask_threshold) | env.in_gm(trial)
                a[bad] *= -1.0
                a_hat[bad] *= -1.0
            zero = norm < MIN_ACTION_NORM
            new = p + cfg.step_size * a_hat
            codes = self._chunked(env.check_termination, len(rows), new, a_hat, h, hc, ns)
            codes[zero] = TerminationReason.ANGLE_EXCEEDED
            peaks = env.peaks.nearest(p)
            r = rewards(peaks, a_hat, h[:, -1], hc > 0, codes == TerminationReason.REACHED_GM,
                        (ns + 1) * cfg.step_size, env.reward_cfg, cfg.max_length)
            r[zero] = 0.0
            move = ~zero
            mr = rows[move]
            buf[mr, cnt[mr]] = new[move]
            cnt[mr] += 1
            pos[mr] = new[move]
            _push(hist, mr, a_hat[move])
            hcount[mr] = np.minimum(hcount[mr] + 1, hist.shape[1])
            nseg[mr] += 1
            s2 = s.copy()
            if move.any():
                s2[move] = self.states(pos[mr], hist[mr])
            cur[rows] = s2
            done = codes > 0
            self.returns[rows] += r
            self.record(s, a, r, s2, done, codes == TerminationReason.TOO_LONG,
                        rows, phase, base_step[rows] + k)
            self.reasons[rows[done], col] = codes[done]
            active[rows[done]] = False
            k += 1

    def replay_phase(self, pos, hist, hcount, cur):
        """Walk back along the flipped forward half, rewarding proposed actions."""
        env, cfg = self.env, self.cfg
        m_seg = self.fwd_n - 1
        for j in range(int(m_seg.max(initial=0))):
            rows = np.nonzero(m_seg > j)[0]
            eps = _normals(self.seed, self.episode, RETRACK, j, self.n)[rows]
            p, h, hc = pos[rows], hist[rows], hcount[rows]
            s = cur[rows]
            a = self.propose(s, p, h, hc, eps)
            a_hat, norm = _unit_rows(a)
            peaks = env.peaks.nearest(p)
            r = rewards(peaks, a_hat, h[:, -1], hc > 0, np.zeros(len(rows), bool),
                        m_seg[rows] * cfg.step_size, env.reward_cfg, cfg.max_length)
            r[norm < MIN_ACTION_NORM] = 0.0
            nxt = self.fwd[rows, m_seg[rows] - j - 1]
            seg_hat, _ = _unit_rows(nxt - p)
            pos[rows] = nxt
            _push(hist, rows, seg_hat)
            hcount[rows] = np.minimum(hcount[rows] + 1, hist.shape[1])
            s2 = self.states(nxt, hist[rows])
            cur[rows] = s2
            self.returns[rows] += r
            no = np.zeros(len(rows), dtype=bool)
            self.record(s, a, r, s2, no, no, rows, RETRACK, j)

    def run(self):
        cfg, n, H = self.cfg, self.n, self.env.hist_len
        pos = self.seeds.copy()
        hist = np.zeros((n, H, 3))
        hcount = np.zeros(n, dtype=np.int64)
        nseg = np.zeros(n, dtype=np.int64)
        cur = self.states(pos, hist)
        interface = cfg.seeding == "interface"
        self.free_phase(FORWARD, pos, hist, hcount, nseg, cur, np.zeros(n, dtype=np.int64),
                        flip_first=interface)
        if not interface:
            m_seg = self.fwd_n - 1
            hist = np.zeros((n, H, 3))
            hcount = np.zeros(n, dtype=np.int64)
            if cfg.retracking:
                pos = self.fwd[np.arange(n), m_seg].copy()
                cur = self.states(pos, hist)
                self.replay_phase(pos, hist, hcount, cur)
            else:
                pos = self.seeds.copy()
                # history = the first directions of the reversed forward half,
                # i.e. the segments nearest the far end, oldest first
                for t in range(min(4, int(m_seg.max(initial=0)))):
                    rows = np.nonzero(m_seg > t)[0]
                    i_hi = m_seg[rows] - t
                    d_hat, _ = _unit_rows(self.fwd[rows, i_hi - 1] - self.fwd[rows, i_hi])
                    _push(hist, rows, d_hat)
                    hcount[rows] += 1
                cur = self.states(pos, hist)
            nseg = m_seg.copy()
            base = m_seg.copy() if cfg.retracking else np.zeros(n, dtype=np.int64)
            self.free_phase(BACKWARD, pos, hist, hcount, nseg, cur, base)
        return self.finish()

    def finish(self):
        lines = []
        for i in range(self.n):
            f = self.fwd[i, : self.fwd_n[i]][::-1]
            b = self.bwd[i, : self.bwd_n[i]]
            lines.append(np.vstack([f, b]) if len(b) else f.copy())
        batch = StreamlineBatch(self.seeds.copy(), lines, self.fwd_n - 1, self.reasons.copy(),
                                self.returns.copy())
        return batch, TransitionBatch.concat(self.parts)


def rollout_episode(env, policy, seeds, seed=0, episode=0, collect=True, workers=1):
    """Track a batch of seeds with ``policy`` and return (streamlines, transitions).

    ``policy(states, eps)`` maps float32 states (m, D) and standard normals
    (m, 3) to actions (m, 3).  An object with a ``directions(pos, prev,
    has_prev)`` method is called that way instead (used by the peak-following
    tracker).  With WM seeding each streamline gets a forward half, then
    either a retrack replay of the flipped half followed by free tracking past
    the seed, or (retracking off) free tracking from the seed primed with the
    far-end directions of the forward half.  Interface seeding tracks a
    single half and flips a first action that would leave the mask or land in
    an ROI straight away.
    """
    run = _Run(env, seeds, policy, seed, episode, collect, workers)
    try:
        return run.run()
    finally:
        run.close()


def track(env, policy, seeds, seed=0, workers=1, chunk=4096):
    """Track many seeds in fixed-size chunks without collecting transitions."""
    seeds = np.asarray(seeds, dtype=np.float64).reshape(-1, 3)
    out = []
    for c, lo in enumerate(range(0, len(seeds), chunk)):
        b, _ = rollout_episode(env, policy, seeds[lo:lo + chunk], seed=seed, episode=c,
                               collect=False, workers=workers)
        out.append(b)
    if not out:
        raise TrackingError("no seeds to track")
    return StreamlineBatch(
        np.concatenate([b.seeds for b in out]),
        [s for b in out for s in b.streamlines],
        np.concatenate([b.seed_index for b in out]),
        np.concatenate([b.reasons for b in out]),
        np.concatenate([b.returns for b in out]))


class PeakFollower:
    """Deterministic classical tracker: take the peak closest to the last step.

    The first step takes the first stored peak as is.  A voxel without peaks
    yields a zero action, which stops the streamline.
    """

    needs_state = False

    def __init__(self, peaks):
        self.peaks = peaks

    def directions(self, pos, prev, has_prev):
        pk = self.peaks.nearest(pos)
        dots = _dot3(pk, prev[:, None, :])
        best = np.argmax(np.abs(dots), axis=1)
        rows = np.arange(len(pos))
        chosen = pk[rows, best]
        sign = np.where(dots[rows, best] < 0, -1.0, 1.0)
        return np.where(has_prev[:, None], chosen * sign[:, None], pk[:, 0])


def baseline_deterministic_tracker(env, seeds=None, seed=0, workers=1):
    """Peak-following reference tractogram over the env's seed mask."""
    if seeds is None:
        seeds = env.seed_pool(seed)
    return track(env, PeakFollower(env.peaks), seeds, seed=seed, workers=workers)


def replay_rewards(env, streamline):
    """Reward sum of a fixed polyline, each segment treated as the action."""
    pts = np.asarray(streamline, dtype=np.float64)
    if len(pts) < 2:
        return 0.0
    u = np.diff(pts, axis=0)
    prev = np.vstack([np.zeros((1, 3)), u[:-1]])
    has_prev = np.arange(len(u)) > 0
    gm = np.zeros(len(u), dtype=bool)
    length = np.arange(1, len(u) + 1) * env.cfg.step_size
    r = rewards(env.peaks.nearest(pts[:-1]), u, prev, has_prev, gm, length,
                env.reward_cfg, env.cfg.max_length)
    return float(r.sum())


def seed_batch(env, rng):
    """Seed points for ``env``'s configured seeding strategy."""
    return env.seed_pool(rng)


def voxel_seed_check(mask, points):
    """True where each point's nearest voxel is set in ``mask``."""
    idx, ok = nearest_voxel(mask.affine, mask.dims, points)
    out = np.zeros(len(idx), dtype=bool)
    i = idx[ok]
    out[ok] = mask.data[i[:, 0], i[:, 1], i[:, 2]] > 0
    return out


__all__ = [
    "TrackingConfig", "RewardConfig", "StreamlineBatch", "TransitionBatch",
    "TerminationReason", "TrackingEnv", "TrackingError", "scale_action", "reward_step",
    "rewards", "seed_points", "seed_batch", "rollout_episode", "track", "PeakFollower",
    "baseline_deterministic_tracker", "replay_rewards", "rescale_step",
    "write_reason_csv", "turning_angles", "voxel_seed_check",
]
