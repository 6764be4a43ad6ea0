"""Training configuration: every knob in one serializable record.

``grid_config()`` and ``line_config()`` return the tuned presets for the
two shipped tasks; JSON round-trips one-to-one with the dataclass fields
and dotted-path overrides let the CLI adjust any single knob.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field


class ConfigError(ValueError):
    """Invalid configuration value or unknown override key."""


@dataclass
class KernelConfig:
    kind: str = "rbf"
    bandwidth: float | str = "median"
    projection: tuple[int, ...] = (0, 1)


@dataclass
class LineEnvConfig:
    length: float = 5.0
    v_max: float = 1.0


@dataclass
class AnnotationCfg:
    # "oracle": scripted node-based annotator; "human": judgments arrive
    # through the service queue; "none": no preference collection at all
    # (plain-PPO baseline runs)
    mode: str = "oracle"
    mislabel_ratio: float = 0.0
    warmup_iters: int = 50
    # trajectories hitting fewer landmarks than this are never surfaced for
    # preference comparison (they are not preference trajectories); 0 means
    # every trajectory competes
    min_nodes: int = 1
    pause_timeout_s: float | None = None
    fallback_to_oracle: bool = False


@dataclass
class TrainConfig:
    env: str = "grid"
    map_path: str | None = None
    seed: int = 0
    iterations: int = 1500
    episodes_per_iteration: int = 8
    max_episode_steps: int = 240
    epochs_per_iteration: int = 80
    pg_epochs: int | None = None
    gamma: float = 0.99
    gae_lambda: float = 0.95
    clip_epsilon: float = 0.3
    policy_lr: float = 1.5e-5
    value_lr: float = 1e-2
    hidden_sizes: tuple[int, ...] = (64, 64)
    init_std: float = 0.65
    advantage_norm: bool = True
    preferred_capacity: int = 8
    guidance_coef: float = 1.0
    no_pi: bool = False
    no_pg: bool = False
    eval_episodes: int = 20
    dtype: str = "float64"
    checkpoint_every: int = 200
    traj_dump_every: int = 0
    kernel: KernelConfig = field(default_factory=KernelConfig)
    line: LineEnvConfig = field(default_factory=LineEnvConfig)
    annotation: AnnotationCfg = field(default_factory=AnnotationCfg)

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.env not in ("grid", "line"):
            raise ConfigError(f"env must be 'grid' or 'line', got {self.env!r}")
        if self.policy_lr <= 0 or self.value_lr <= 0:
            raise ConfigError("learning rates must be positive")
        if not 0.0 < self.clip_epsilon < 1.0:
            raise ConfigError("clip_epsilon must be in (0, 1)")
        if not 0.0 < self.gamma <= 1.0:
            raise ConfigError("gamma must be in (0, 1]")
        if self.no_pi and self.no_pg:
            raise ConfigError("no_pi and no_pg cannot both be set")
        if self.episodes_per_iteration < 1 or self.iterations < 1:
            raise ConfigError("iterations and episodes_per_iteration must be >= 1")
        if self.preferred_capacity < 1:
            raise ConfigError("preferred_capacity must be >= 1")
        if self.annotation.mode not in ("oracle", "human", "none"):
            raise ConfigError("annotation.mode must be 'oracle', 'human' or 'none'")
        if self.annotation.mode == "none" and not self.no_pg:
            raise ConfigError("annotation.mode 'none' requires no_pg "
                              "(guidance needs preferences)")
        if not 0.0 <= self.annotation.mislabel_ratio <= 1.0:
            raise ConfigError("annotation.mislabel_ratio must be in [0, 1]")
        if self.dtype not in ("float64", "float32"):
            raise ConfigError("dtype must be 'float64' or 'float32'")

    @property
    def effective_pg_epochs(self) -> int:
        return self.epochs_per_iteration if self.pg_epochs is None else self.pg_epochs

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["hidden_sizes"] = list(self.hidden_sizes)
        d["kernel"]["projection"] = list(self.kernel.projection)
        return d

    def to_json(self, indent: int = 2) -> str:
        return json.dumps(self.to_dict(), indent=indent)


def config_from_dict(d: dict) -> TrainConfig:
    d = dict(d)
    try:
        kernel = KernelConfig(**{**d.pop("kernel", {})})
        kernel = dataclasses.replace(kernel, projection=tuple(kernel.projection))
        line = LineEnvConfig(**d.pop("line", {}))
        annotation = AnnotationCfg(**d.pop("annotation", {}))
        if "hidden_sizes" in d:
            d["hidden_sizes"] = tuple(d["hidden_sizes"])
        known = {f.name for f in dataclasses.fields(TrainConfig)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return TrainConfig(**d, kernel=kernel, line=line, annotation=annotation)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def config_from_json(text: str) -> TrainConfig:
    try:
        return config_from_dict(json.loads(text))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc


def load_config(path) -> TrainConfig:
    with open(path, encoding="utf-8") as fh:
        return config_from_json(fh.read())


def grid_config(**overrides) -> TrainConfig:
    """Key-door-treasure preset (the discrete-control column of the tuning table)."""
    cfg = TrainConfig(
        env="grid",
        iterations=1500,
        episodes_per_iteration=8,
        max_episode_steps=240,
        epochs_per_iteration=80,
        clip_epsilon=0.3,
        policy_lr=1.5e-5,
        value_lr=1e-2,
        kernel=KernelConfig(projection=(0, 1)),
    )
    return _apply_field_overrides(cfg, overrides)


def line_config(**overrides) -> TrainConfig:
    """Sparse-line preset (the continuous-control column, hopper-scale noise).

    The track length defaults to 40 units: long enough that a random policy
    essentially never crosses it within the horizon, which is what makes the
    task a hard-exploration problem rather than a lucky random walk.
    """
    cfg = TrainConfig(
        env="line",
        iterations=2000,
        episodes_per_iteration=20,
        max_episode_steps=500,
        epochs_per_iteration=80,
        clip_epsilon=0.27,
        policy_lr=4e-4,
        value_lr=1e-3,
        init_std=0.65,
        kernel=KernelConfig(projection=(0,)),
        line=LineEnvConfig(length=40.0, v_max=1.0),
    )
    return _apply_field_overrides(cfg, overrides)


def _apply_field_overrides(cfg: TrainConfig, overrides: dict) -> TrainConfig:
    if not overrides:
        return cfg
    d = cfg.to_dict()
    for key, value in overrides.items():
        if key not in d:
            raise ConfigError(f"unknown config key {key!r}")
        d[key] = value
    return config_from_dict(d)


def _coerce(old, raw: str):
    if isinstance(old, bool):
        if raw.lower() in ("1", "true", "yes"):
            return True
        if raw.lower() in ("0", "false", "no"):
            return False
        raise ConfigError(f"cannot parse {raw!r} as bool")
    if isinstance(old, int) and not isinstance(old, bool):
        return int(raw)
    if isinstance(old, float):
        return float(raw)
    if isinstance(old, (list, tuple)):
        parts = [p for p in raw.split(",") if p != ""]
        elem = old[0] if len(old) else 0
        return [type(elem)(p) for p in parts]
    if old is None:
        # nullable knobs: ints/floats accepted, 'none' clears
        if raw.lower() in ("none", "null"):
            return None
        try:
            return int(raw)
        except ValueError:
            try:
                return float(raw)
            except ValueError:
                return raw
    return raw


def apply_overrides(cfg: TrainConfig, pairs) -> TrainConfig:
    """Apply ``dotted.key=value`` overrides on top of an existing config."""
    d = cfg.to_dict()
    for pair in pairs:
        if "=" not in pair:
            raise ConfigError(f"override {pair!r} is not of the form key=value")
        key, raw = pair.split("=", 1)
        node = d
        parts = key.split(".")
        for p in parts[:-1]:
            if not isinstance(node, dict) or p not in node:
                raise ConfigError(f"unknown config key {key!r}")
            node = node[p]
        leaf = parts[-1]
        if not isinstance(node, dict) or leaf not in node:
            raise ConfigError(f"unknown config key {key!r}")
        if key == "kernel.bandwidth":
            node[leaf] = raw if raw == "median" else float(raw)
        else:
            node[leaf] = _coerce(node[leaf], raw)
    return config_from_dict(d)
