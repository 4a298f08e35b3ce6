"""Small dense networks with hand-written gradients, policy heads and optimizers.

Layers compute ``y = x @ W + b`` with ``W`` of shape (fan_in, fan_out); hidden
layers use ReLU or tanh, the output layer is linear.  Parameters default to
float32; build a float64 net for gradient checks.
"""
import json
import math

import numpy as np

LOG_STD_MIN, LOG_STD_MAX = -20.0, 2.0
LOG_2PI = math.log(2.0 * math.pi)
CKPT_MAGIC = b"RLTCKPT1\n"


class ShapeError(ValueError):
    pass


def _act(name):
    if name == "relu":
        return (lambda z: np.maximum(z, 0), lambda z, h: (z > 0).astype(z.dtype))
    if name == "tanh":
        return (np.tanh, lambda z, h: 1.0 - h * h)
    raise ValueError(f"unknown activation {name!r}")


class MLP:
    """Fully connected net: widths (in, h1, ..., out), linear output layer."""

    def __init__(self, widths, activation="relu", rng=None, dtype=np.float32):
        self.widths = tuple(int(w) for w in widths)
        if len(self.widths) < 2 or min(self.widths) < 1:
            raise ShapeError(f"bad widths {widths}")
        self.activation = activation
        self.dtype = np.dtype(dtype)
        self._f, self._df = _act(activation)
        rng = np.random.default_rng(rng)
        self.params = []
        for fan_in, fan_out in zip(self.widths[:-1], self.widths[1:]):
            bound = 1.0 / math.sqrt(fan_in)
            self.params.append(rng.uniform(-bound, bound, (fan_in, fan_out)).astype(self.dtype))
            self.params.append(rng.uniform(-bound, bound, fan_out).astype(self.dtype))

    @property
    def n_layers(self):
        return len(self.widths) - 1

    def layer(self, i):
        return self.params[2 * i], self.params[2 * i + 1]

    def forward(self, x):
        """Return the output and a cache for ``backward``/``jvp``."""
        x = np.asarray(x, dtype=self.dtype)
        if x.ndim != 2 or x.shape[1] != self.widths[0]:
            raise ShapeError(f"expected (N, {self.widths[0]}) input, got {x.shape}")
        inputs, pre, post = [], [], []
        h = x
        for i in range(self.n_layers):
            W, b = self.layer(i)
            inputs.append(h)
            z = h @ W + b
            pre.append(z)
            h = z if i == self.n_layers - 1 else self._f(z)
            post.append(h)
        return h, (inputs, pre, post)

    def __call__(self, x):
        return self.forward(x)[0]

    def backward(self, cache, dy, param_grads=True):
        """Gradients of ``sum(dy * y)``: (param grads, dx, grads wrt each pre-activation).

        With ``param_grads=False`` only dx and the pre-activation grads are formed.
        """
        inputs, pre, post = cache
        g = np.asarray(dy, dtype=self.dtype)
        if g.shape != post[-1].shape:
            raise ShapeError(f"upstream grad {g.shape} does not match output {post[-1].shape}")
        grads = [None] * len(self.params)
        dpre = [None] * self.n_layers
        for i in range(self.n_layers - 1, -1, -1):
            if i != self.n_layers - 1:
                g = g * self._df(pre[i], post[i])
            dpre[i] = g
            W, _ = self.layer(i)
            if param_grads:
                grads[2 * i] = inputs[i].T @ g
                grads[2 * i + 1] = g.sum(axis=0, dtype=np.float64).astype(self.dtype)
            g = g @ W.T
        return grads, g, dpre

    def jvp(self, cache, dparams):
        """Directional derivative of the outputs along parameter tangent ``dparams``."""
        inputs, pre, post = cache
        dh = None
        for i in range(self.n_layers):
            W, _ = self.layer(i)
            dz = inputs[i] @ dparams[2 * i] + dparams[2 * i + 1]
            if dh is not None:
                dz = dz + dh @ W
            dh = dz if i == self.n_layers - 1 else self._df(pre[i], post[i]) * dz
        return dh

    # flat parameter views -------------------------------------------------
    def get_flat(self):
        return np.concatenate([p.ravel() for p in self.params])

    def set_flat(self, flat):
        flat = np.asarray(flat)
        if flat.size != self.size:
            raise ShapeError(f"expected {self.size} values, got {flat.size}")
        k = 0
        for i, p in enumerate(self.params):
            self.params[i] = flat[k:k + p.size].reshape(p.shape).astype(self.dtype)
            k += p.size

    @property
    def size(self):
        return sum(p.size for p in self.params)

    def flatten_grads(self, grads):
        return np.concatenate([g.ravel() for g in grads])

    def unflatten(self, flat):
        out, k = [], 0
        for p in self.params:
            out.append(np.asarray(flat[k:k + p.size]).reshape(p.shape).astype(self.dtype))
            k += p.size
        return out

    def copy(self):
        other = MLP.__new__(MLP)
        other.__dict__.update(self.__dict__)
        other.params = [p.copy() for p in self.params]
        return other

    def soft_update_from(self, src, tau):
        """Polyak average: theta <- (1 - tau) theta + tau theta_src."""
        for i, p in enumerate(src.params):
            self.params[i] = ((1.0 - tau) * self.params[i] + tau * p).astype(self.dtype)

    def spec(self):
        return {"widths": list(self.widths), "activation": self.activation}


# -- Gaussian heads ------------------------------------------------------------

def gaussian_logprob(mean, log_std, a):
    """Diagonal Gaussian log-density summed over the last axis."""
    z = (a - mean) * np.exp(-log_std)
    return (-0.5 * z * z - log_std - 0.5 * LOG_2PI).sum(axis=-1)


def gaussian_entropy(log_std):
    return (log_std + 0.5 * (LOG_2PI + 1.0)).sum(axis=-1)


def gaussian_kl(mu0, ls0, mu1, ls1):
    """KL(N0 || N1) for diagonal Gaussians, summed over the last axis."""
    v0, v1 = np.exp(2 * ls0), np.exp(2 * ls1)
    return (ls1 - ls0 + (v0 + (mu0 - mu1) ** 2) / (2 * v1) - 0.5).sum(axis=-1)


def log1m_tanh2(u):
    """Stable log(1 - tanh(u)^2)."""
    return 2.0 * (math.log(2.0) - u - np.logaddexp(0.0, -2.0 * u))


def squashed_sample(mean, log_std, eps):
    """Reparameterised tanh-Gaussian sample and its log-density (Jacobian included)."""
    log_std = np.clip(log_std, LOG_STD_MIN, LOG_STD_MAX)
    u = mean + np.exp(log_std) * eps
    a = np.tanh(u)
    logp = (-0.5 * eps * eps - log_std - 0.5 * LOG_2PI).sum(axis=-1) - log1m_tanh2(u).sum(axis=-1)
    return a, logp, u


def squashed_logprob(mean, log_std, a):
    """log-density of a given squashed action (clipped away from +-1)."""
    a = np.clip(a, -1 + 1e-6, 1 - 1e-6)
    u = np.arctanh(a)
    log_std = np.clip(log_std, LOG_STD_MIN, LOG_STD_MAX)
    return gaussian_logprob(mean, log_std, u) - log1m_tanh2(u).sum(axis=-1)


class GaussianPolicyHead:
    """Gaussian policy over R^3 built on an MLP.

    ``state_std=False``: the MLP gives the mean and ``log_std`` is a free
    parameter vector.  ``state_std=True``: the MLP has 2*dim outputs, mean
    then log-std (clamped to [-20, 2]).  ``squash`` applies tanh to samples.
    """

    def __init__(self, net, dim=3, state_std=False, squash=False, log_std_init=0.0):
        self.net = net
        self.dim = dim
        self.state_std = state_std
        self.squash = squash
        self.log_std = None if state_std else np.full(dim, log_std_init, dtype=net.dtype)

    def dist(self, s):
        out, cache = self.net.forward(s)
        if self.state_std:
            mean = out[:, :self.dim]
            log_std = np.clip(out[:, self.dim:], LOG_STD_MIN, LOG_STD_MAX)
        else:
            mean = out
            log_std = np.broadcast_to(self.log_std, mean.shape)
        return mean, log_std, cache

    def sample(self, s, eps):
        """(action, log pi(action|s)) using the supplied standard normals."""
        mean, log_std, _ = self.dist(s)
        if self.squash:
            a, logp, _ = squashed_sample(mean, log_std, eps)
            return a, logp
        a = mean + np.exp(log_std) * eps
        return a, gaussian_logprob(mean, log_std, a)

    def logprob(self, s, a):
        mean, log_std, _ = self.dist(s)
        if self.squash:
            return squashed_logprob(mean, log_std, a)
        return gaussian_logprob(mean, log_std, a)

    def entropy(self, s):
        _, log_std, _ = self.dist(s)
        return gaussian_entropy(log_std)

    def mode(self, s):
        mean, _, _ = self.dist(s)
        return np.tanh(mean) if self.squash else mean


def gaussian_logprob_and_sample(head, s, rng):
    """Draw a reparameterised action for each state with ``rng``; returns (a, logp)."""
    eps = np.random.default_rng(rng).standard_normal((len(s), head.dim))
    return head.sample(s, eps)


# -- optimizers ----------------------------------------------------------------

class Adam:
    def __init__(self, lr, betas=(0.9, 0.999), eps=1e-8):
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = None
        self.v = None

    def step(self, params, grads):
        if self.m is None:
            self.m = [np.zeros_like(p) for p in params]
            self.v = [np.zeros_like(p) for p in params]
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for i, (p, g) in enumerate(zip(params, grads)):
            self.m[i] = self.b1 * self.m[i] + (1 - self.b1) * g
            self.v[i] = self.b2 * self.v[i] + (1 - self.b2) * g * g
            step = self.lr * (self.m[i] / c1) / (np.sqrt(self.v[i] / c2) + self.eps)
            params[i] = (p - step).astype(p.dtype)
        return params


class RMSProp:
    def __init__(self, lr, rho=0.99, eps=1e-8):
        self.lr = lr
        self.rho = rho
        self.eps = eps
        self.v = None

    def step(self, params, grads):
        if self.v is None:
            self.v = [np.zeros_like(p) for p in params]
        for i, (p, g) in enumerate(zip(params, grads)):
            self.v[i] = self.rho * self.v[i] + (1 - self.rho) * g * g
            params[i] = (p - self.lr * g / (np.sqrt(self.v[i]) + self.eps)).astype(p.dtype)
        return params


def adam_step(params, grads, state, lr):
    """Functional wrapper: ``state`` is an ``Adam`` instance (created if None)."""
    state = state or Adam(lr)
    state.lr = lr
    return state.step(list(params), grads), state


def rmsprop_step(params, grads, state, lr):
    state = state or RMSProp(lr)
    state.lr = lr
    return state.step(list(params), grads), state


# -- K-FAC ---------------------------------------------------------------------

class KFACError(ArithmeticError):
    pass


def _damped_inverse(M, add, max_doublings=5):
    """Inverse of ``M + add*I`` via Cholesky, doubling ``add`` when not PD."""
    n = len(M)
    add = float(add)
    for _ in range(max_doublings + 1):
        try:
            L = np.linalg.cholesky(M + add * np.eye(n))
            Linv = np.linalg.inv(L)
            return Linv.T @ Linv, add
        except np.linalg.LinAlgError:
            add = add * 2.0 if add > 0 else 1e-8
    raise KFACError("K-FAC factor not positive definite after damping retries")


def kfac_directions(grads_w, A_list, G_list, damping):
    """Per-layer ``(A + pi d I)^-1 grad (G + d/pi I)^-1`` on bias-augmented grads.

    ``grads_w[l]`` has shape (fan_in + 1, fan_out) with the bias grad as the last
    row.  ``pi`` balances the two factors by their mean eigenvalue.
    """
    out = []
    for g, A, G in zip(grads_w, A_list, G_list):
        g = np.asarray(g, dtype=np.float64)
        if damping > 0:
            ta = np.trace(A) / len(A)
            tg = np.trace(G) / len(G)
            pi = math.sqrt(ta / tg) if ta > 0 and tg > 0 else 1.0
            Ai, _ = _damped_inverse(A, pi * damping)
            Gi, _ = _damped_inverse(G, damping / pi)
        else:
            Ai, _ = _damped_inverse(A, 0.0)
            Gi, _ = _damped_inverse(G, 0.0)
        out.append(Ai @ g @ Gi)
    return out


def kfac_step(params, grads_w, A_list, G_list, lr, delta, damping=1e-3, extra=None):
    """One trust-region-scaled natural gradient descent step.

    ``params``/``grads_w`` are per-layer bias-augmented (fan_in + 1, fan_out)
    matrices.  ``extra`` is an optional list of (param, grad, fisher_diag)
    for parameters outside the dense layers.  The step is scaled by
    ``nu = min(1, sqrt(2 delta / (lr^2 * sum(dir . grad))))`` so the predicted
    KL stays under ``delta``.  Returns the updated params, extra params and nu.
    """
    dirs = kfac_directions(grads_w, A_list, G_list, damping)
    extra = extra or []
    edirs = [g / f for _, g, f in extra]
    quad = sum(float(np.sum(d * g)) for d, g in zip(dirs, grads_w))
    quad += sum(float(np.sum(d * g)) for d, (_, g, _) in zip(edirs, extra))
    nu = 1.0 if quad <= 0 or delta is None else min(1.0, math.sqrt(2.0 * delta / (lr * lr * quad)))
    new = [(p - lr * nu * d).astype(p.dtype) for p, d in zip(params, dirs)]
    new_extra = [(p - lr * nu * d).astype(p.dtype) for (p, _, _), d in zip(extra, edirs)]
    return new, new_extra, nu


class KFACStats:
    """EMA of per-layer activation and pre-activation-gradient second moments."""

    def __init__(self, net, decay=0.95):
        self.decay = decay
        self.A = [None] * net.n_layers
        self.G = [None] * net.n_layers

    def update(self, cache, dpre):
        inputs = cache[0]
        for i, (x, g) in enumerate(zip(inputs, dpre)):
            n = len(x)
            xa = np.hstack([x, np.ones((n, 1), dtype=x.dtype)]).astype(np.float64)
            g = np.asarray(g, dtype=np.float64)
            A = xa.T @ xa / n
            G = g.T @ g / n
            if self.A[i] is None:
                self.A[i], self.G[i] = A, G
            else:
                d = self.decay
                self.A[i] = d * self.A[i] + (1 - d) * A
                self.G[i] = d * self.G[i] + (1 - d) * G


def layer_matrices(net, grads=None):
    """Bias-augmented per-layer (fan_in + 1, fan_out) matrices of params or grads."""
    src = net.params if grads is None else grads
    return [np.vstack([src[2 * i], src[2 * i + 1][None, :]]) for i in range(net.n_layers)]


def set_layer_matrices(net, mats):
    for i, M in enumerate(mats):
        net.params[2 * i] = np.ascontiguousarray(M[:-1]).astype(net.dtype)
        net.params[2 * i + 1] = np.ascontiguousarray(M[-1]).astype(net.dtype)


# -- checkpoints ---------------------------------------------------------------

def save_checkpoint(path, nets, arrays=None, meta=None):
    """Write named nets and arrays: magic, one JSON header line, float32 LE blob."""
    arrays = arrays or {}
    header = {"nets": {}, "arrays": {}, "meta": meta or {}}
    blobs = []
    for name in sorted(nets):
        net = nets[name]
        header["nets"][name] = net.spec()
        blobs.extend(np.asarray(p, dtype="<f4").ravel() for p in net.params)
    for name in sorted(arrays):
        a = np.asarray(arrays[name], dtype="<f4")
        header["arrays"][name] = list(a.shape)
        blobs.append(a.ravel())
    text = json.dumps(header, sort_keys=True).encode("utf-8")
    if b"\n" in text:
        raise ValueError("checkpoint header must be a single line")
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC)
        fh.write(text + b"\n")
        fh.write(np.concatenate(blobs).astype("<f4").tobytes() if blobs else b"")


def load_checkpoint(path):
    """Inverse of ``save_checkpoint``; returns (nets, arrays, meta)."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if not raw.startswith(CKPT_MAGIC):
        raise ValueError(f"{path}: not a checkpoint file")
    end = raw.index(b"\n", len(CKPT_MAGIC))
    header = json.loads(raw[len(CKPT_MAGIC):end].decode("utf-8"))
    blob = np.frombuffer(raw, dtype="<f4", offset=end + 1)
    k = 0
    nets = {}
    for name in sorted(header["nets"]):
        spec = header["nets"][name]
        net = MLP(spec["widths"], spec["activation"], rng=0)
        for i, p in enumerate(net.params):
            net.params[i] = blob[k:k + p.size].reshape(p.shape).astype(np.float32)
            k += p.size
        nets[name] = net
    arrays = {}
    for name in sorted(header["arrays"]):
        shape = tuple(header["arrays"][name])
        n = int(np.prod(shape)) if shape else 1
        arrays[name] = blob[k:k + n].reshape(shape).astype(np.float32)
        k += n
    if k != blob.size:
        raise ValueError(f"{path}: blob size mismatch ({blob.size} floats, header needs {k})")
    return nets, arrays, header["meta"]
