"""Experience storage and return estimators."""
import numpy as np

from .. import kernels


def discounted_returns(rewards, gamma, dones, bootstrap=None, backend=None):
    """``G_t = r_t + gamma * G_{t+1}``, restarting after each done.

    At a done step the continuation is ``bootstrap[t]`` (0 by default), which
    lets truncated trajectories fall back on a value estimate.
    """
    r = np.asarray(rewards, dtype=np.float64)
    d = np.asarray(dones, dtype=bool)
    b = np.zeros_like(r) if bootstrap is None else np.asarray(bootstrap, dtype=np.float64)
    return kernels.discounted(r, d, b, gamma, backend=backend)


def gae(rewards, values, gamma, lam, dones, next_values=None, terminals=None, backend=None):
    """Generalised advantage estimates over concatenated trajectories.

    ``values`` holds V(s_t) for every step plus, when ``next_values`` is not
    given, one bootstrap entry for the state after the last step.  Inside a
    trajectory ``next_values[t]`` is V(s_{t+1}).  ``terminals`` marks dones
    whose next state is worth zero (defaults to ``dones``); a truncated done
    still bootstraps from ``next_values`` but stops the recursion.
    """
    r = np.asarray(rewards, dtype=np.float64)
    v = np.asarray(values, dtype=np.float64)
    if next_values is None:
        next_values = v[1:]
        v = v[:-1]
    nv = np.asarray(next_values, dtype=np.float64)
    d = np.asarray(dones, dtype=bool)
    term = d if terminals is None else np.asarray(terminals, dtype=bool)
    return kernels.gae(r, v, nv, term, d, gamma, lam, backend=backend)


class ReplayBuffer:
    """Fixed-capacity FIFO ring of (s, a, r, s', terminal), sampled uniformly."""

    def __init__(self, capacity, state_dim, action_dim=3):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = int(capacity)
        self.s = np.zeros((capacity, state_dim), dtype=np.float32)
        self.a = np.zeros((capacity, action_dim), dtype=np.float32)
        self.r = np.zeros(capacity, dtype=np.float32)
        self.s2 = np.zeros((capacity, state_dim), dtype=np.float32)
        self.term = np.zeros(capacity, dtype=np.float32)
        self.ptr = 0
        self.size = 0
        self.pushed = 0

    def __len__(self):
        return self.size

    def push(self, s, a, r, s2, terminal):
        n = len(r)
        if n > self.capacity:
            s, a, r, s2, terminal = (x[-self.capacity:] for x in (s, a, r, s2, terminal))
            self.pushed += n - self.capacity
            n = self.capacity
        idx = (self.ptr + np.arange(n)) % self.capacity
        self.s[idx] = s
        self.a[idx] = a
        self.r[idx] = r
        self.s2[idx] = s2
        self.term[idx] = terminal
        self.ptr = (self.ptr + n) % self.capacity
        self.size = min(self.capacity, self.size + n)
        self.pushed += n

    def push_batch(self, tb):
        self.push(tb.states, tb.actions, tb.rewards, tb.next_states, tb.terminals)

    def sample(self, batch_size, rng):
        if self.size == 0:
            raise ValueError("cannot sample from an empty buffer")
        idx = rng.integers(0, self.size, size=batch_size)
        return self.s[idx], self.a[idx], self.r[idx], self.s2[idx], self.term[idx]


class RolloutBuffer:
    """On-policy storage for one update: transitions in trajectory order.

    Holds states, actions, rewards, next states, done/terminal flags and,
    once ``finish`` runs, values, returns and advantages.  ``clear`` must be
    called after the policy update that consumed it.
    """

    def __init__(self):
        self.clear()

    def clear(self):
        self.data = None
        self.values = None
        self.returns = None
        self.advantages = None
        self.logp = None

    def __len__(self):
        return 0 if self.data is None else len(self.data)

    def add(self, tb):
        if self.data is not None:
            raise RuntimeError("rollout buffer already holds an unconsumed batch")
        self.data = tb.take(tb.trajectory_order())

    def finish(self, value_fn, gamma, lam, normalize=True):
        d = self.data
        trunc = d.truncated
        if value_fn is None:
            v = np.zeros(len(d))
            v2 = np.zeros(len(d))
        else:
            # inside a trajectory s'_t is s_{t+1}; only truncations need an extra pass
            v = value_fn(d.states)
            v2 = np.append(v[1:], 0.0)
            v2[d.dones] = 0.0
            if trunc.any():
                v2[trunc] = value_fn(d.next_states[trunc])
        self.values = v
        self.returns = discounted_returns(d.rewards, gamma, d.dones, np.where(trunc, v2, 0.0))
        if value_fn is None:
            adv = self.returns.copy()
        else:
            adv = gae(d.rewards, v, gamma, lam, d.dones, next_values=v2, terminals=d.terminals)
        if normalize and len(adv) > 1:
            adv = (adv - adv.mean()) / (adv.std() + 1e-8)
        self.advantages = adv
