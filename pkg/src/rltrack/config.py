"""Run configuration files.

A run config is YAML (or JSON) with these top-level keys, all optional::

    algo: sac_auto
    seed: 0
    workers: 1
    out: runs/sac_auto
    data: phantoms/desk        # directory written by ``rltrack phantom``
    phantom: desk              # or a phantom spec mapping; used when ``data`` is absent
    episodes: 200
    n_streamlines: 256
    tracking: {...}            # TrackingConfig fields
    reward: {...}              # RewardConfig fields
    hparams: {...}             # AgentHyperparams fields (merged over the algorithm's defaults)
    eval: {seeds_per_voxel: 10}
    grid: {lr: [...], gamma: [...]}   # sweep only

Unknown keys are rejected at every level.  ``resolve`` fills in defaults and
``write_resolved`` stores the result next to a run's outputs.
"""
import json
import os
from dataclasses import asdict, dataclass, field, fields

import yaml

from .agents.hparams import ALGORITHMS, AgentHyperparams, default_hparams
from .env import RewardConfig, TrackingConfig


class ConfigError(ValueError):
    pass


TOP_KEYS = {"algo", "seed", "workers", "out", "data", "phantom", "episodes", "n_streamlines",
            "tracking", "reward", "hparams", "eval", "grid"}
EVAL_KEYS = {"seeds_per_voxel"}


def read_mapping(path):
    """Parse a YAML/JSON file that must hold a mapping."""
    if not os.path.isfile(path):
        raise FileNotFoundError(f"{path}: no such file")
    with open(path) as fh:
        try:
            doc = yaml.safe_load(fh)
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: not valid YAML/JSON ({exc})") from None
    if doc is None:
        doc = {}
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return doc


def _check_keys(section, given, allowed):
    unknown = set(given) - set(allowed)
    if unknown:
        raise ConfigError(f"{section}: unknown keys {sorted(unknown)}")


def _build(section, cls, values):
    if not isinstance(values, dict):
        raise ConfigError(f"{section}: expected a mapping")
    _check_keys(section, values, [f.name for f in fields(cls)])
    try:
        return cls(**values)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{section}: {exc}") from None


@dataclass
class RunConfig:
    algo: str = "sac_auto"
    seed: int = 0
    workers: int = 1
    out: str = None
    data: str = None
    phantom: object = "desk"
    episodes: int = 200
    n_streamlines: int = 256
    tracking: TrackingConfig = field(default_factory=TrackingConfig)
    reward: RewardConfig = field(default_factory=RewardConfig)
    hparams: AgentHyperparams = None
    eval: dict = field(default_factory=lambda: {"seeds_per_voxel": None})
    grid: dict = None

    def to_dict(self):
        d = asdict(self)
        d["eval"] = dict(self.eval)
        return d


def resolve(doc=None, seed=None, workers=None, out=None):
    """Validate a config mapping and fill in defaults; CLI flags override file values."""
    doc = dict(doc or {})
    _check_keys("config", doc, TOP_KEYS)
    algo = doc.get("algo", "sac_auto")
    if algo not in ALGORITHMS:
        raise ConfigError(f"config: unknown algo {algo!r}; choose from {', '.join(ALGORITHMS)}")
    hp_over = doc.get("hparams") or {}
    if not isinstance(hp_over, dict):
        raise ConfigError("hparams: expected a mapping")
    _check_keys("hparams", hp_over, AgentHyperparams.field_names())
    try:
        hp = default_hparams(algo, **hp_over)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"hparams: {exc}") from None
    ev = doc.get("eval") or {}
    _check_keys("eval", ev, EVAL_KEYS)
    grid = doc.get("grid")
    if grid is not None:
        if not isinstance(grid, dict) or not grid:
            raise ConfigError("grid: expected a non-empty mapping of lists")
        _check_keys("grid", grid, AgentHyperparams.field_names())
        for k, v in grid.items():
            if not isinstance(v, list) or not v:
                raise ConfigError(f"grid.{k}: expected a non-empty list")
    cfg = RunConfig(
        algo=algo,
        seed=int(doc.get("seed", 0) if seed is None else seed),
        workers=int(doc.get("workers", 1) if workers is None else workers),
        out=doc.get("out") if out is None else out,
        data=doc.get("data"),
        phantom=doc.get("phantom", "desk"),
        episodes=int(doc.get("episodes", 200)),
        n_streamlines=int(doc.get("n_streamlines", 256)),
        tracking=_build("tracking", TrackingConfig, doc.get("tracking") or {}),
        reward=_build("reward", RewardConfig, doc.get("reward") or {}),
        hparams=hp,
        eval={"seeds_per_voxel": ev.get("seeds_per_voxel")},
        grid=grid,
    )
    if cfg.workers < 1:
        raise ConfigError("workers must be >= 1")
    if cfg.episodes < 1 or cfg.n_streamlines < 1:
        raise ConfigError("episodes and n_streamlines must be >= 1")
    spv = cfg.eval["seeds_per_voxel"]
    if spv is not None and int(spv) < 1:
        raise ConfigError("eval.seeds_per_voxel must be >= 1")
    return cfg


def load_config(path=None, seed=None, workers=None, out=None):
    doc = read_mapping(path) if path else {}
    return resolve(doc, seed=seed, workers=workers, out=out)


def write_resolved(cfg, out_dir, name="config.resolved.json"):
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, name)
    with open(path, "w") as fh:
        json.dump(cfg.to_dict(), fh, indent=2, sort_keys=True)
    return path
