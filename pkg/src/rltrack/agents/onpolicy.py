"""On-policy learners: VPG, A2C, TRPO, ACKTR and PPO.

All five share a Gaussian policy whose mean comes from an MLP and whose
log-std is a free vector.  Each update consumes the transitions of exactly
one episode, reordered so trajectories are contiguous.
"""
import math

import numpy as np

from ..nn import (RMSProp, Adam, GaussianPolicyHead, KFACStats, gaussian_entropy,
                  gaussian_kl, gaussian_logprob, kfac_step, layer_matrices,
                  set_layer_matrices)
from .base import Agent, batched_apply, critic_step, make_mlp
from .buffers import RolloutBuffer


def conjugate_gradient(fvp, b, iters=10, tol=1e-10):
    """Approximately solve F x = b with F given as a matrix-vector product."""
    x = np.zeros_like(b)
    r = b.copy()
    p = b.copy()
    rr = r @ r
    for _ in range(iters):
        if rr < tol:
            break
        Fp = fvp(p)
        alpha = rr / (p @ Fp)
        x += alpha * p
        r -= alpha * Fp
        new_rr = r @ r
        p = r + (new_rr / rr) * p
        rr = new_rr
    return x


class OnPolicyAgent(Agent):
    on_policy = True
    uses_critic = True

    def __init__(self, state_dim, hp, seed=0):
        super().__init__(state_dim, hp, seed)
        rng = self.rng(1)
        self.actor = GaussianPolicyHead(make_mlp(state_dim, 3, hp, rng))
        self.critic = make_mlp(state_dim, 1, hp, rng) if self.uses_critic else None
        self.buffer = RolloutBuffer()

    # interface -----------------------------------------------------------
    def policy(self, stochastic=True):
        net = self.actor.net

        def act(states, eps):
            mean = net(states).astype(np.float64)
            if not stochastic:
                return mean
            return mean + np.exp(self.actor.log_std.astype(np.float64)) * eps
        return act

    def nets(self):
        out = {"actor": self.actor.net}
        if self.critic is not None:
            out["critic"] = self.critic
        return out

    def arrays(self):
        return {"log_std": self.actor.log_std}

    def assign(self, name, value):
        if name == "actor":
            self.actor.net = value
        elif name == "log_std":
            self.actor.log_std = value
        else:
            super().assign(name, value)

    def value(self, s):
        return batched_apply(lambda x: self.critic(x)[:, 0].astype(np.float64), s)

    def update(self, tb, episode):
        if tb is None or len(tb) == 0:
            return {}
        self.buffer.add(tb)
        self.buffer.finish(self.value if self.critic is not None else None,
                           self.hp.gamma, self.hp.lam, self.hp.normalize_advantages)
        try:
            out = self._update(self.buffer, episode)
        finally:
            self.buffer.clear()
        self.updates += 1
        return out

    # shared gradient pieces ----------------------------------------------
    def actor_grads(self, s, a, weight):
        """Grads of ``-mean(weight * log pi(a|s)) - entropy * H`` and its value."""
        head, hp = self.actor, self.hp
        mean, cache = head.net.forward(s)
        mean = mean.astype(np.float64)
        ls = head.log_std.astype(np.float64)
        inv_var = np.exp(-2.0 * ls)
        n = len(s)
        diff = a.astype(np.float64) - mean
        w = weight[:, None]
        dmean = -(w * diff * inv_var) / n
        dls = -(w * (diff * diff * inv_var - 1.0)).sum(axis=0) / n - hp.entropy
        grads, _, _ = head.net.backward(cache, dmean.astype(head.net.dtype))
        logp = gaussian_logprob(mean, ls, a)
        loss = -float(np.mean(weight * logp)) - hp.entropy * float(gaussian_entropy(ls))
        return grads, dls.astype(head.log_std.dtype), loss

    def _update(self, buf, episode):
        raise NotImplementedError


class VPG(OnPolicyAgent):
    """REINFORCE with (normalised) discounted returns as weights."""

    name = "vpg"
    uses_critic = False

    def __init__(self, state_dim, hp, seed=0):
        super().__init__(state_dim, hp, seed)
        self.opt = RMSProp(hp.lr)

    def _update(self, buf, episode):
        d = buf.data
        grads, dls, loss = self.actor_grads(d.states, d.actions, buf.advantages)
        params = self.opt.step(self.actor.net.params + [self.actor.log_std], grads + [dls])
        self.actor.net.params, self.actor.log_std = params[:-1], params[-1]
        return {"actor_loss": loss, "critic_loss": 0.0}


class A2C(OnPolicyAgent):
    """Advantage actor-critic with GAE and separate policy and value nets."""

    name = "a2c"

    def __init__(self, state_dim, hp, seed=0):
        super().__init__(state_dim, hp, seed)
        self.opt = RMSProp(hp.lr)
        self.vopt = RMSProp(hp.lr)

    def _update(self, buf, episode):
        d = buf.data
        grads, dls, loss = self.actor_grads(d.states, d.actions, buf.advantages)
        params = self.opt.step(self.actor.net.params + [self.actor.log_std], grads + [dls])
        self.actor.net.params, self.actor.log_std = params[:-1], params[-1]
        vloss = critic_step(self.critic, self.vopt, d.states, buf.returns)
        return {"actor_loss": loss, "critic_loss": vloss}


class PPO(OnPolicyAgent):
    """Clipped-ratio surrogate, K minibatch epochs per episode."""

    name = "ppo"

    def __init__(self, state_dim, hp, seed=0):
        super().__init__(state_dim, hp, seed)
        self.opt = Adam(hp.lr)
        self.vopt = Adam(hp.lr)

    @staticmethod
    def clip_weights(ratio, adv, eps):
        """d/dlogp of min(r A, clip(r) A): r A where the unclipped term is the min, else 0."""
        unclipped = ratio * adv
        clipped = np.clip(ratio, 1.0 - eps, 1.0 + eps) * adv
        return np.where(unclipped <= clipped, unclipped, 0.0), np.minimum(unclipped, clipped)

    def _update(self, buf, episode):
        d, hp = buf.data, self.hp
        logp_old = self.actor.logprob(d.states, d.actions)
        rng = self.rng(episode, 5)
        n = len(d)
        bs = min(hp.batch_size, n)
        aloss = vloss = 0.0
        for _ in range(hp.epochs):
            idx = rng.choice(n, size=bs, replace=False)
            s, a, adv = d.states[idx], d.actions[idx], buf.advantages[idx]
            ratio = np.exp(self.actor.logprob(s, a) - logp_old[idx])
            w, obj = self.clip_weights(ratio, adv, hp.clip)
            # d(r A)/dtheta = r A dlogp/dtheta, so w acts as a per-sample weight on dlogp
            grads, dls, _ = self.actor_grads(s, a, w)
            params = self.opt.step(self.actor.net.params + [self.actor.log_std], grads + [dls])
            self.actor.net.params, self.actor.log_std = params[:-1], params[-1]
            aloss = -float(obj.mean())
            vloss = critic_step(self.critic, self.vopt, s, buf.returns[idx])
        return {"actor_loss": aloss, "critic_loss": vloss}


class TRPO(OnPolicyAgent):
    """Natural-gradient step found by CG, then a KL-bounded backtracking search."""

    name = "trpo"

    def __init__(self, state_dim, hp, seed=0):
        super().__init__(state_dim, hp, seed)
        self.vopt = Adam(hp.lr)
        self.last_kl = 0.0
        self.accepted = False

    def flat(self):
        return np.concatenate([self.actor.net.get_flat().astype(np.float64),
                               self.actor.log_std.astype(np.float64)])

    def set_flat(self, flat):
        k = self.actor.net.size
        self.actor.net.set_flat(flat[:k])
        self.actor.log_std = flat[k:].astype(self.actor.net.dtype)

    def fisher_vector_product(self, s):
        """Exact Fisher (KL Hessian) product for the Gaussian policy at states ``s``."""
        net = self.actor.net
        _, cache = net.forward(s)
        inv_var = np.exp(-2.0 * self.actor.log_std.astype(np.float64))
        k = net.size
        n = len(s)

        def fvp(v):
            jv = net.jvp(cache, net.unflatten(v[:k].astype(net.dtype))).astype(np.float64)
            g, _, _ = net.backward(cache, (jv * inv_var / n).astype(net.dtype))
            out = np.concatenate([net.flatten_grads(g).astype(np.float64), 2.0 * v[k:]])
            return out + self.hp.cg_damping * v
        return fvp

    def surrogate(self, s, a, adv, logp_old):
        ratio = np.exp(self.actor.logprob(s, a) - logp_old)
        ls = self.actor.log_std.astype(np.float64)
        return float(np.mean(ratio * adv)) + self.hp.entropy * float(gaussian_entropy(ls))

    def mean_kl(self, s, mean_old, ls_old):
        mean_new = self.actor.net(s).astype(np.float64)
        ls_new = np.broadcast_to(self.actor.log_std.astype(np.float64), mean_new.shape)
        return float(np.mean(gaussian_kl(mean_old, np.broadcast_to(ls_old, mean_old.shape),
                                         mean_new, ls_new)))

    def policy_step(self, s, a, adv, rng):
        hp = self.hp
        mean_old = self.actor.net(s).astype(np.float64)
        ls_old = self.actor.log_std.astype(np.float64).copy()
        logp_old = gaussian_logprob(mean_old, ls_old, a)
        grads, dls, _ = self.actor_grads(s, a, adv)
        g = -np.concatenate([self.actor.net.flatten_grads(grads).astype(np.float64),
                             dls.astype(np.float64)])
        sub = s if len(s) <= hp.fisher_samples else s[rng.choice(len(s), hp.fisher_samples, replace=False)]
        fvp = self.fisher_vector_product(sub)
        x = conjugate_gradient(fvp, g, hp.cg_iters)
        shs = float(x @ fvp(x))
        self.accepted = False
        if not shs > 0:
            return 0.0
        full = math.sqrt(2.0 * hp.delta / shs) * x
        saved_params = [p.copy() for p in self.actor.net.params]
        saved_ls = self.actor.log_std.copy()
        old = self.flat()
        l_old = self.surrogate(s, a, adv, logp_old)
        for k in range(hp.backtracks):
            self.set_flat(old + hp.backtrack_coef ** k * full)
            kl = self.mean_kl(s, mean_old, ls_old)
            if kl <= hp.delta and self.surrogate(s, a, adv, logp_old) > l_old:
                self.accepted = True
                self.last_kl = kl
                return -l_old
        self.actor.net.params = saved_params
        self.actor.log_std = saved_ls
        self.last_kl = 0.0
        return -l_old

    def _update(self, buf, episode):
        d = buf.data
        rng = self.rng(episode, 6)
        aloss = self.policy_step(d.states, d.actions, buf.advantages, rng)
        vloss = 0.0
        for _ in range(self.hp.epochs):
            vloss = critic_step(self.critic, self.vopt, d.states, buf.returns)
        return {"actor_loss": aloss, "critic_loss": vloss}


class ACKTR(OnPolicyAgent):
    """A2C losses minimised with K-FAC natural gradient under a KL trust region."""

    name = "acktr"

    def __init__(self, state_dim, hp, seed=0):
        super().__init__(state_dim, hp, seed)
        self.astats = KFACStats(self.actor.net, hp.kfac_decay)
        self.vstats = KFACStats(self.critic, hp.kfac_decay)
        self.last_nu = 1.0

    def _fisher_sample(self, s, rng):
        return s if len(s) <= self.hp.fisher_samples else \
            s[rng.choice(len(s), self.hp.fisher_samples, replace=False)]

    def _update(self, buf, episode):
        d, hp = buf.data, self.hp
        rng = self.rng(episode, 7)
        net = self.actor.net
        # curvature statistics from the model's own sampled log-likelihood
        fs = self._fisher_sample(d.states, rng)
        mean, cache = net.forward(fs)
        sigma = np.exp(self.actor.log_std.astype(np.float64))
        eps = rng.standard_normal(mean.shape)
        _, _, dpre = net.backward(cache, (eps / sigma).astype(net.dtype))
        self.astats.update(cache, dpre)
        grads, dls, aloss = self.actor_grads(d.states, d.actions, buf.advantages)
        new, new_extra, nu = kfac_step(layer_matrices(net), layer_matrices(net, grads),
                                       self.astats.A, self.astats.G, hp.lr, hp.delta,
                                       hp.kfac_damping, [(self.actor.log_std, dls, 2.0)])
        set_layer_matrices(net, new)
        self.actor.log_std = new_extra[0]
        self.last_nu = nu
        # critic: Gaussian output with unit variance
        v, vcache = self.critic.forward(fs)
        _, _, vdpre = self.critic.backward(vcache, rng.standard_normal(v.shape).astype(v.dtype))
        self.vstats.update(vcache, vdpre)
        v, vcache = self.critic.forward(d.states)
        diff = v[:, 0].astype(np.float64) - buf.returns
        vloss = 0.5 * float(np.mean(diff * diff))
        vgrads, _, _ = self.critic.backward(vcache, (diff / len(diff))[:, None].astype(v.dtype))
        vnew, _, _ = kfac_step(layer_matrices(self.critic), layer_matrices(self.critic, vgrads),
                               self.vstats.A, self.vstats.G, hp.lr, hp.delta, hp.kfac_damping)
        set_layer_matrices(self.critic, vnew)
        return {"actor_loss": aloss, "critic_loss": vloss}
