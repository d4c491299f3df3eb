"""Training configuration, presets and config-file loading."""

from __future__ import annotations

import copy
import json
from dataclasses import asdict, dataclass, field, fields, is_dataclass

import yaml

from .agents import AgentConfig
from .errors import ConfigError
from .gail import DiscriminatorConfig

ALGOS = ("her", "ddpgfd_her", "goal_gail", "goal_sagail")
DEMO_SAMPLING = ("union", "ratio")

# admission thresholds for the desk environments (goal-space units)
DEFAULT_C_COMB = {"bitflip": 1.0, "pointpush2d": 0.05 * 0.35, "planarrotate": 0.25}


@dataclass
class HerSettings:
    replay_k: float = 4.0


@dataclass
class GailSettings:
    initial_weight: float = 0.5
    anneal: str = "linear_to_zero"
    # epochs over which the weight reaches zero; None means the whole run
    anneal_epochs: int | None = None


@dataclass
class AdmissionSettings:
    c_comb: float | None = None
    require_success: bool = True
    expert_capacity_factor: int = 20


@dataclass
class TrainConfig:
    env: str = "bitflip8"
    env_params: dict = field(default_factory=dict)
    algo: str = "her"
    seed: int = 0
    seeds: list = field(default_factory=lambda: [0])
    epochs: int = 10
    cycles_per_epoch: int = 50
    episodes_per_cycle: int = 40
    policy_batches: int = 40
    policy_batch_size: int = 5120
    eval_episodes: int = 100
    demos: str | None = None
    demo_sampling: str = "union"
    demo_ratio_initial: float = 0.5
    # fraction of training over which the explicit ratio anneals to the union ratio
    demo_ratio_anneal_frac: float = 0.5
    agent_buffer_capacity: int = 10_000
    agent: AgentConfig = field(default_factory=AgentConfig)
    her: HerSettings = field(default_factory=HerSettings)
    disc: DiscriminatorConfig = field(default_factory=DiscriminatorConfig)
    gail: GailSettings = field(default_factory=GailSettings)
    admission: AdmissionSettings = field(default_factory=AdmissionSettings)

    def validate(self):
        if self.algo not in ALGOS:
            raise ConfigError(f"algo must be one of {ALGOS}, got {self.algo!r}")
        if self.demo_sampling not in DEMO_SAMPLING:
            raise ConfigError(f"demo_sampling must be one of {DEMO_SAMPLING}")
        if self.epochs < 0 or self.cycles_per_epoch < 1 or self.episodes_per_cycle < 1:
            raise ConfigError("epochs >= 0, cycles_per_epoch >= 1 and episodes_per_cycle >= 1 required")
        if self.policy_batches < 0 or self.policy_batch_size < 1 or self.eval_episodes < 1:
            raise ConfigError("invalid batch or evaluation sizes")
        if not 0.0 <= self.demo_ratio_initial <= 1.0:
            raise ConfigError("demo_ratio_initial must lie in [0, 1]")
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        if not 0.0 <= self.gail.initial_weight <= 1.0:
            raise ConfigError("gail.initial_weight must lie in [0, 1]")
        return self

    @property
    def uses_demos(self):
        return self.algo != "her"

    @property
    def uses_discriminator(self):
        return self.algo in ("goal_gail", "goal_sagail")

    @property
    def uses_admission(self):
        return self.algo == "goal_sagail"

    def c_comb(self):
        if self.admission.c_comb is not None:
            return self.admission.c_comb
        key = "bitflip" if self.env.startswith("bitflip") else self.env
        return DEFAULT_C_COMB[key]

    def to_dict(self):
        return asdict(self)

    def with_overrides(self, **kwargs):
        cfg = copy.deepcopy(self)
        for k, v in kwargs.items():
            set_path(cfg, k, v)
        return cfg


def _coerce(target_type_value, raw):
    """Convert ``raw`` (often a string from the CLI) to the type of the current value."""
    if not isinstance(raw, str):
        return raw
    current = target_type_value
    if isinstance(current, bool):
        if raw.lower() in ("1", "true", "yes", "on"):
            return True
        if raw.lower() in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"expected a boolean, got {raw!r}")
    try:
        value = yaml.safe_load(raw)
    except yaml.YAMLError:
        return raw
    if isinstance(current, float) and isinstance(value, int):
        return float(value)
    return value


def set_path(cfg, path, raw):
    """Set a dotted attribute path such as ``agent.gamma`` on a config tree."""
    parts = path.split(".")
    obj = cfg
    for p in parts[:-1]:
        if not hasattr(obj, p):
            raise ConfigError(f"unknown config key {path!r}")
        obj = getattr(obj, p)
    last = parts[-1]
    if isinstance(obj, dict):
        obj[last] = _coerce(obj.get(last), raw)
        return
    if not hasattr(obj, last):
        raise ConfigError(f"unknown config key {path!r}")
    setattr(obj, last, _coerce(getattr(obj, last), raw))


def _apply_mapping(obj, mapping, prefix=""):
    for key, value in mapping.items():
        if not hasattr(obj, key):
            raise ConfigError(f"unknown config key {prefix + key!r}")
        current = getattr(obj, key)
        if is_dataclass(current) and isinstance(value, dict):
            _apply_mapping(current, value, prefix + key + ".")
        else:
            setattr(obj, key, value)


def from_dict(data, base=None):
    cfg = copy.deepcopy(base) if base is not None else TrainConfig()
    _apply_mapping(cfg, data)
    return cfg


def preset(name, env=None, algo=None):
    """``paper`` keeps the published budget; ``desk`` shrinks it for a laptop."""
    cfg = TrainConfig()
    if env is not None:
        cfg.env = env
    if algo is not None:
        cfg.algo = algo
    if name == "paper":
        return cfg
    if name != "desk":
        raise ConfigError(f"unknown preset {name!r}; choose 'desk' or 'paper'")
    cfg.cycles_per_epoch = 10
    cfg.episodes_per_cycle = 16
    cfg.policy_batches = 40
    cfg.policy_batch_size = 256
    cfg.agent.hidden_sizes = [64, 64, 64, 64]
    cfg.disc.hidden_sizes = (64, 64, 64, 64)
    cfg.disc.n_batches = 40
    cfg.disc.batch_size = 256
    return cfg


def load_config(path, base=None):
    """Read a YAML or JSON config file on top of ``base`` (default: paper preset)."""
    with open(path) as fh:
        text = fh.read()
    try:
        data = json.loads(text) if str(path).endswith(".json") else yaml.safe_load(text)
    except (json.JSONDecodeError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from None
    data = data or {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    base_name = data.pop("preset", None)
    if base is None:
        base = preset(base_name or "paper", data.get("env"), data.get("algo"))
    return from_dict(data, base)


def config_fields(cls=TrainConfig):
    return [f.name for f in fields(cls)]
