"""Shared agent plumbing."""
import numpy as np

from ..nn import MLP


def make_mlp(n_in, n_out, hp, rng):
    return MLP((n_in, hp.width, hp.width, n_out), hp.activation, rng=rng)


def critic_step(net, opt, s, target):
    """One optimizer step of 0.5 * mean((net(s) - target)^2); returns the loss."""
    v, cache = net.forward(s)
    diff = v[:, 0].astype(np.float64) - target
    loss = 0.5 * float(np.mean(diff * diff))
    dv = (diff / len(diff))[:, None].astype(net.dtype)
    grads, _, _ = net.backward(cache, dv)
    net.params = opt.step(net.params, grads)
    return loss


def batched_apply(fn, x, chunk=8192):
    if len(x) <= chunk:
        return fn(x)
    return np.concatenate([fn(x[i:i + chunk]) for i in range(0, len(x), chunk)])


class Agent:
    """Common interface: ``policy`` for rollouts, ``update`` after each episode."""

    name = ""
    on_policy = True

    def __init__(self, state_dim, hp, seed=0):
        self.state_dim = int(state_dim)
        self.hp = hp
        self.seed = int(seed)
        self.updates = 0

    def rng(self, *key):
        return np.random.default_rng([self.seed, *key])

    def policy(self, stochastic=True):
        raise NotImplementedError

    def update(self, tb, episode):
        raise NotImplementedError

    def nets(self):
        raise NotImplementedError

    def arrays(self):
        return {}

    def load_state(self, nets, arrays):
        for name, net in nets.items():
            self.assign(name, net)
        for name, value in arrays.items():
            self.assign(name, np.array(value, dtype=np.float32))

    def assign(self, name, value):
        if not hasattr(self, name):
            raise KeyError(f"{self.name} has no component {name!r}")
        setattr(self, name, value)
