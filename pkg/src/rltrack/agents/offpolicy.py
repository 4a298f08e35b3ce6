"""Off-policy learners: DDPG, TD3, SAC and SAC with automatic temperature.

Transitions go into a replay buffer after every episode, followed by a
number of minibatch updates proportional to the new data, clipped to a
per-episode range so late episodes with long streamlines stay affordable.  Target networks
track the live ones by Polyak averaging with rate ``tau``.
"""
import math

import numpy as np

from ..nn import LOG_STD_MAX, LOG_STD_MIN, Adam, squashed_sample
from .base import Agent, make_mlp
from .buffers import ReplayBuffer


def q_forward(net, s, a):
    return net.forward(np.hstack([s, np.asarray(a, dtype=s.dtype)]))


def q_value(net, s, a):
    return q_forward(net, s, a)[0][:, 0].astype(np.float64)


def q_regress(net, opt, s, a, y):
    """One optimizer step on 0.5 * mean((Q(s, a) - y)^2); returns the loss."""
    q, cache = q_forward(net, s, a)
    diff = q[:, 0].astype(np.float64) - y
    grads, _, _ = net.backward(cache, (diff / len(diff))[:, None].astype(q.dtype))
    net.params = opt.step(net.params, grads)
    return 0.5 * float(np.mean(diff * diff))


def action_grad(net, s, a, weight, fwd=None):
    """d/da of sum(weight * Q(s, a)) for each row, plus Q(s, a).

    ``fwd`` may carry an existing ``q_forward`` result for the same inputs.
    """
    q, cache = fwd if fwd is not None else q_forward(net, s, a)
    _, dx, _ = net.backward(cache, np.asarray(weight, dtype=q.dtype)[:, None], param_grads=False)
    return dx[:, -3:].astype(np.float64), q[:, 0].astype(np.float64)


class OffPolicyAgent(Agent):
    on_policy = False
    n_critics = 1

    def __init__(self, state_dim, hp, seed=0):
        super().__init__(state_dim, hp, seed)
        rng = self.rng(1)
        self.actor = make_mlp(state_dim, self.actor_outputs, hp, rng)
        self.critics = [make_mlp(state_dim + 3, 1, hp, rng) for _ in range(self.n_critics)]
        self.actor_target = self.actor.copy()
        self.critic_targets = [c.copy() for c in self.critics]
        self.aopt = Adam(hp.lr)
        self.copts = [Adam(hp.lr) for _ in self.critics]
        self.replay = ReplayBuffer(hp.replay_capacity, state_dim)
        self.steps = 0

    actor_outputs = 3

    def nets(self):
        out = {"actor": self.actor, "actor_target": self.actor_target}
        for i, (c, t) in enumerate(zip(self.critics, self.critic_targets)):
            out[f"critic{i + 1}"] = c
            out[f"critic{i + 1}_target"] = t
        return out

    def assign(self, name, value):
        if name.startswith("critic"):
            i = int(name[6]) - 1
            if name.endswith("_target"):
                self.critic_targets[i] = value
            else:
                self.critics[i] = value
        else:
            super().assign(name, value)

    def n_updates(self, n_new):
        hp = self.hp
        n = int(round(hp.updates_per_transition * n_new))
        return min(max(n, hp.min_updates_per_episode), hp.max_updates_per_episode)

    def update(self, tb, episode):
        if tb is not None and len(tb):
            self.replay.push_batch(tb)
        if len(self.replay) < self.hp.batch_size:
            return {}
        rng = self.rng(episode, 9)
        totals = {}
        n = self.n_updates(0 if tb is None else len(tb))
        for _ in range(n):
            batch = self.replay.sample(self.hp.batch_size, rng)
            out = self.train_step(*batch, rng=rng)
            self.steps += 1
            for k, v in out.items():
                totals[k] = totals.get(k, 0.0) + v
        self.updates += 1
        return {k: v / n for k, v in totals.items()}

    def soft_update(self, tau=None):
        tau = self.hp.tau if tau is None else tau
        self.actor_target.soft_update_from(self.actor, tau)
        for t, c in zip(self.critic_targets, self.critics):
            t.soft_update_from(c, tau)

    def train_step(self, s, a, r, s2, term, rng):
        raise NotImplementedError


class DDPG(OffPolicyAgent):
    """Deterministic tanh actor; exploration noise is added by the environment."""

    name = "ddpg"

    def policy(self, stochastic=True):
        net = self.actor

        def act(states, eps):
            return np.tanh(net(states).astype(np.float64))
        return act

    def target(self, r, s2, term):
        a2 = np.tanh(self.actor_target(s2).astype(np.float64))
        return r + self.hp.gamma * (1.0 - term) * q_value(self.critic_targets[0], s2, a2)

    def actor_step(self, s, critic):
        z, cache = self.actor.forward(s)
        pa = np.tanh(z.astype(np.float64))
        n = len(s)
        dq, q = action_grad(critic, s, pa, np.full(n, -1.0 / n))
        dz = dq * (1.0 - pa * pa)
        grads, _, _ = self.actor.backward(cache, dz.astype(z.dtype))
        self.actor.params = self.aopt.step(self.actor.params, grads)
        return -float(np.mean(q))

    def train_step(self, s, a, r, s2, term, rng):
        y = self.target(r.astype(np.float64), s2, term.astype(np.float64))
        closs = q_regress(self.critics[0], self.copts[0], s, a, y)
        aloss = self.actor_step(s, self.critics[0])
        self.soft_update()
        return {"actor_loss": aloss, "critic_loss": closs}


class TD3(DDPG):
    """Twin critics, smoothed target actions, delayed actor and target updates."""

    name = "td3"
    n_critics = 2

    def target(self, r, s2, term, rng=None):
        hp = self.hp
        a2 = np.tanh(self.actor_target(s2).astype(np.float64))
        noise = np.clip(hp.target_noise * rng.standard_normal(a2.shape), -hp.noise_clip, hp.noise_clip)
        a2 = np.clip(a2 + noise, -1.0, 1.0)
        q = np.minimum(q_value(self.critic_targets[0], s2, a2), q_value(self.critic_targets[1], s2, a2))
        return r + hp.gamma * (1.0 - term) * q

    def train_step(self, s, a, r, s2, term, rng):
        y = self.target(r.astype(np.float64), s2, term.astype(np.float64), rng)
        closs = sum(q_regress(c, o, s, a, y) for c, o in zip(self.critics, self.copts)) / 2
        aloss = 0.0
        if self.steps % self.hp.policy_delay == 0:
            aloss = self.actor_step(s, self.critics[0])
            self.soft_update()
        return {"actor_loss": aloss, "critic_loss": closs}


class SAC(OffPolicyAgent):
    """Soft actor-critic with a tanh-squashed Gaussian actor and twin critics."""

    name = "sac"
    n_critics = 2
    actor_outputs = 6
    auto_alpha = False
    target_entropy = -3.0

    def __init__(self, state_dim, hp, seed=0):
        super().__init__(state_dim, hp, seed)
        self.log_alpha = np.array([math.log(hp.alpha) if hp.alpha > 0 else -np.inf], dtype=np.float32)
        self.alpha_opt = Adam(hp.lr)

    @property
    def alpha(self):
        return float(np.exp(self.log_alpha[0]))

    def arrays(self):
        return {"log_alpha": self.log_alpha}

    def policy(self, stochastic=True):
        net = self.actor

        def act(states, eps):
            out = net(states).astype(np.float64)
            if not stochastic:
                return np.tanh(out[:, :3])
            a, _, _ = squashed_sample(out[:, :3], out[:, 3:], eps)
            return a
        return act

    def sample(self, net, s, eps):
        out = net(s).astype(np.float64)
        a, logp, _ = squashed_sample(out[:, :3], out[:, 3:], eps)
        return a, logp

    def target(self, r, s2, term, rng):
        eps = rng.standard_normal((len(s2), 3))
        a2, logp2 = self.sample(self.actor, s2, eps)
        q = np.minimum(q_value(self.critic_targets[0], s2, a2), q_value(self.critic_targets[1], s2, a2))
        return r + self.hp.gamma * (1.0 - term) * (q - self.alpha * logp2)

    def actor_step(self, s, rng):
        n = len(s)
        out, cache = self.actor.forward(s)
        raw = out.astype(np.float64)
        mean, ls_raw = raw[:, :3], raw[:, 3:]
        eps = rng.standard_normal((n, 3))
        a, logp, u = squashed_sample(mean, ls_raw, eps)
        f1 = q_forward(self.critics[0], s, a)
        f2 = q_forward(self.critics[1], s, a)
        q1 = f1[0][:, 0].astype(np.float64)
        q2 = f2[0][:, 0].astype(np.float64)
        pick1 = q1 <= q2
        dq1, _ = action_grad(self.critics[0], s, a, np.where(pick1, -1.0 / n, 0.0), f1)
        dq2, _ = action_grad(self.critics[1], s, a, np.where(pick1, 0.0, -1.0 / n), f2)
        dl_da = dq1 + dq2
        alpha = self.alpha
        dl_du = alpha * 2.0 * a / n + dl_da * (1.0 - a * a)
        sigma = np.exp(np.clip(ls_raw, LOG_STD_MIN, LOG_STD_MAX))
        inside = (ls_raw > LOG_STD_MIN) & (ls_raw < LOG_STD_MAX)
        dls = (-alpha / n + dl_du * sigma * eps) * inside
        grads, _, _ = self.actor.backward(cache, np.hstack([dl_du, dls]).astype(out.dtype))
        self.actor.params = self.aopt.step(self.actor.params, grads)
        loss = float(np.mean(alpha * logp - np.minimum(q1, q2)))
        return loss, logp

    def train_step(self, s, a, r, s2, term, rng):
        y = self.target(r.astype(np.float64), s2, term.astype(np.float64), rng)
        closs = sum(q_regress(c, o, s, a, y) for c, o in zip(self.critics, self.copts)) / 2
        aloss, logp = self.actor_step(s, rng)
        out = {"actor_loss": aloss, "critic_loss": closs}
        if self.auto_alpha:
            # d/dlog_alpha of -log_alpha * mean(logp + target_entropy)
            g = -float(np.mean(logp + self.target_entropy))
            self.log_alpha = self.alpha_opt.step([self.log_alpha],
                                                 [np.array([g], dtype=np.float32)])[0]
            out["alpha"] = self.alpha
        self.soft_update()
        return out


class SACAuto(SAC):
    """SAC whose temperature is learned toward a target entropy of -3."""

    name = "sac_auto"
    auto_alpha = True
