"""Hyperparameters: defaults, per-algorithm selected values and search grids."""
from dataclasses import asdict, dataclass, fields

ALGORITHMS = ("vpg", "a2c", "trpo", "acktr", "ppo", "ddpg", "td3", "sac", "sac_auto")
ON_POLICY = ("vpg", "a2c", "trpo", "acktr", "ppo")
OFF_POLICY = ("ddpg", "td3", "sac", "sac_auto")


@dataclass
class AgentHyperparams:
    lr: float = 5e-4
    gamma: float = 0.5
    lam: float = 0.95
    entropy: float = 0.001
    clip: float = 0.2
    delta: float = 0.001
    sigma: float = 0.2
    alpha: float = 0.2
    epochs: int = 1
    backtracks: int = 10
    backtrack_coef: float = 0.5
    width: int = 256
    activation: str = "relu"
    batch_size: int = 256
    replay_capacity: int = 2 ** 17
    updates_per_transition: float = 0.02
    min_updates_per_episode: int = 16
    max_updates_per_episode: int = 32
    tau: float = 0.005
    normalize_advantages: bool = True
    policy_delay: int = 2
    target_noise: float = 0.2
    noise_clip: float = 0.5
    cg_iters: int = 10
    cg_damping: float = 0.01
    fisher_samples: int = 2048
    kfac_decay: float = 0.95
    kfac_damping: float = 1e-3

    def __post_init__(self):
        if not 0 < self.gamma <= 1:
            raise ValueError("gamma must be in (0, 1]")
        if not 0 <= self.lam <= 1:
            raise ValueError("lam must be in [0, 1]")
        for name in ("clip", "delta", "sigma", "alpha", "entropy", "lr", "tau"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.activation not in ("relu", "tanh"):
            raise ValueError(f"unknown activation {self.activation!r}")
        if not 1 <= self.min_updates_per_episode <= self.max_updates_per_episode:
            raise ValueError("need 1 <= min_updates_per_episode <= max_updates_per_episode")
        if self.epochs < 1 or self.batch_size < 1 or self.width < 1:
            raise ValueError("epochs, batch_size and width must be >= 1")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def field_names(cls):
        return [f.name for f in fields(cls)]


# per-algorithm tuned values
SELECTED = {
    "vpg": dict(lr=0.0005, gamma=0.75),
    "a2c": dict(lr=1e-5, gamma=0.5),
    "trpo": dict(lr=0.001, gamma=0.75, delta=0.001, epochs=3),
    "acktr": dict(lr=0.01, gamma=0.5, delta=0.001),
    "ppo": dict(lr=5e-5, gamma=0.5, clip=0.05, epochs=30),
    "ddpg": dict(lr=0.0005, gamma=0.95, sigma=0.35),
    "td3": dict(lr=0.0005, gamma=0.9, sigma=0.4),
    "sac": dict(lr=0.0005, gamma=0.85, alpha=0.15),
    "sac_auto": dict(lr=0.0005, gamma=0.5),
}

_LR = [1e-5, 5e-5, 1e-4, 5e-4, 1e-3, 5e-3]
_GAMMA = [0.5, 0.75, 0.85, 0.9, 0.95, 0.99]
GRIDS = {
    "vpg": dict(lr=_LR, gamma=_GAMMA),
    "a2c": dict(lr=_LR, gamma=_GAMMA),
    "trpo": dict(lr=_LR, gamma=_GAMMA, delta=[0.001, 0.01, 0.1]),
    "acktr": dict(lr=[0.01, 0.1, 0.15, 0.2, 0.25], gamma=_GAMMA,
                  delta=[1e-4, 5e-4, 1e-3, 5e-3, 1e-2]),
    "ppo": dict(lr=_LR, gamma=_GAMMA, clip=[0.05, 0.1, 0.2]),
    "ddpg": dict(lr=_LR, gamma=_GAMMA, sigma=[0.2, 0.25, 0.3, 0.35, 0.4]),
    "td3": dict(lr=_LR, gamma=_GAMMA, sigma=[0.2, 0.25, 0.3, 0.35, 0.4]),
    "sac": dict(lr=_LR, gamma=_GAMMA, alpha=[0.075, 0.1, 0.15, 0.2, 0.3]),
    "sac_auto": dict(lr=_LR, gamma=_GAMMA),
}


def default_hparams(algo, **overrides):
    if algo not in ALGORITHMS:
        raise ValueError(f"unknown algorithm {algo!r}")
    values = dict(SELECTED[algo])
    values.update(overrides)
    return AgentHyperparams(**values)
