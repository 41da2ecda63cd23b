"""Hyperparameter and run configuration.

A run is described by a flat ``key = value`` text file; every key can be
overridden on the command line. Unknown keys are rejected so that typos in
an experiment config never pass silently.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields

from .errors import ConfigError

ACTIVATIONS = ("identity", "sigmoid", "tanh", "relu")


@dataclass(frozen=True)
class HyperParams:
    """Model hyperparameters.

    latent_dim      -- embedding width d
    order           -- number of previous items fed to the network (L)
    num_targets     -- future items treated as positives per instance (T)
    heights         -- horizontal filter heights; empty means 1..order
    num_h_filters   -- horizontal filters per height
    num_v_filters   -- vertical (per-item weighting) filters
    num_negatives   -- negatives sampled per target (or per instance, see flag)
    """

    latent_dim: int = 50
    order: int = 5
    num_targets: int = 3
    heights: tuple[int, ...] = ()
    num_h_filters: int = 16
    num_v_filters: int = 4
    conv_act: str = "relu"
    fc_act: str = "relu"
    vertical_act: str = "identity"  # applied to the vertical conv output; off by default
    dropout: float = 0.5
    l2: float = 1e-6
    lr: float = 1e-3
    num_negatives: int = 3
    negatives_per_instance: bool = False

    def __post_init__(self):
        if not self.heights:
            object.__setattr__(self, "heights", tuple(range(1, self.order + 1)))
        else:
            object.__setattr__(self, "heights", tuple(sorted(set(int(h) for h in self.heights))))
        if self.latent_dim < 1:
            raise ConfigError("latent_dim must be >= 1")
        if self.order < 1:
            raise ConfigError("order must be >= 1")
        if self.num_targets < 1:
            raise ConfigError("num_targets must be >= 1")
        if any(h < 1 or h > self.order for h in self.heights):
            raise ConfigError(f"every filter height must lie in 1..{self.order}")
        if self.num_h_filters < 1 or self.num_v_filters < 1:
            raise ConfigError("filter counts must be >= 1")
        for name in ("conv_act", "fc_act", "vertical_act"):
            if getattr(self, name) not in ACTIVATIONS:
                raise ConfigError(f"{name} must be one of {ACTIVATIONS}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must lie in [0, 1)")
        if self.l2 < 0:
            raise ConfigError("l2 must be >= 0")
        if self.lr < 0:
            raise ConfigError("lr must be >= 0")
        if self.num_negatives < 1:
            raise ConfigError("num_negatives must be >= 1")

    @property
    def total_h_filters(self) -> int:
        return len(self.heights) * self.num_h_filters

    @property
    def fc_input_dim(self) -> int:
        return self.total_h_filters + self.latent_dim * self.num_v_filters


def _parse_bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


@dataclass
class RunConfig:
    """Fully resolved configuration of one run (data + model + training)."""

    data: str = ""
    format: str = "tsv"
    min_feedback: int = 5
    latent_dim: int = 50
    order: int = 5
    num_targets: int = 3
    heights: str = ""  # comma list, e.g. "1,2,3"; empty -> 1..order
    num_h_filters: int = 16
    num_v_filters: int = 4
    conv_act: str = "relu"
    fc_act: str = "relu"
    vertical_act: str = "identity"
    dropout: float = 0.5
    l2: float = 1e-6
    lr: float = 1e-3
    num_negatives: int = 3
    negatives_per_instance: bool = False
    exclude_history_negatives: bool = False
    exclude_seen: bool = True
    batch_size: int = 100
    epochs: int = 30
    patience: int = 5
    seed: int = 42
    eval_n: str = "1,5,10"
    ap_mode: str = "standard"

    def __post_init__(self):
        self.explicit: set[str] = set()  # keys set via file or override

    @classmethod
    def field_names(cls) -> tuple[str, ...]:
        return tuple(f.name for f in fields(cls))

    @classmethod
    def from_sources(cls, path: str | None = None, overrides: dict[str, str] | None = None) -> "RunConfig":
        """Build a config from an optional file plus override pairs."""
        cfg = cls()
        if path is not None:
            cfg.apply(parse_config_file(path))
        if overrides:
            cfg.apply(overrides)
        return cfg

    def apply(self, pairs: dict[str, str]) -> None:
        by_name = {f.name: f for f in fields(self)}
        for key, raw in pairs.items():
            if key not in by_name:
                raise ConfigError(f"unknown config key: {key}")
            default = by_name[key].default
            try:
                if isinstance(default, bool):
                    value = _parse_bool(raw)
                elif isinstance(default, int):
                    value = int(raw)
                elif isinstance(default, float):
                    value = float(raw)
                else:
                    value = raw.strip()
            except ValueError as exc:
                raise ConfigError(f"bad value for {key}: {raw!r} ({exc})") from exc
            setattr(self, key, value)
            self.explicit.add(key)

    def hyperparams(self) -> HyperParams:
        heights: tuple[int, ...] = ()
        if self.heights.strip():
            heights = tuple(int(h) for h in self.heights.split(","))
        return HyperParams(
            latent_dim=self.latent_dim,
            order=self.order,
            num_targets=self.num_targets,
            heights=heights,
            num_h_filters=self.num_h_filters,
            num_v_filters=self.num_v_filters,
            conv_act=self.conv_act,
            fc_act=self.fc_act,
            vertical_act=self.vertical_act,
            dropout=self.dropout,
            l2=self.l2,
            lr=self.lr,
            num_negatives=self.num_negatives,
            negatives_per_instance=self.negatives_per_instance,
        )

    def eval_cutoffs(self) -> tuple[int, ...]:
        return tuple(int(n) for n in self.eval_n.split(","))

    def to_pairs(self) -> dict[str, str]:
        pairs = {}
        for f in fields(self):
            value = getattr(self, f.name)
            if isinstance(value, bool):
                value = "true" if value else "false"
            pairs[f.name] = str(value)
        return pairs

    def resolved_text(self) -> str:
        return "\n".join(f"{k} = {v}" for k, v in self.to_pairs().items()) + "\n"


def parse_config_file(path: str) -> dict[str, str]:
    """Read a flat ``key = value`` file; '#' starts a comment line."""
    pairs: dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            if "=" not in stripped:
                raise ConfigError(f"{path}:{line_no}: expected 'key = value', got {stripped!r}")
            key, _, value = stripped.partition("=")
            pairs[key.strip()] = value.strip()
    return pairs


def parse_override_args(args: list[str]) -> dict[str, str]:
    """Parse repeated ``--set key=value`` payloads."""
    pairs: dict[str, str] = {}
    for item in args:
        if "=" not in item:
            raise ConfigError(f"override must look like key=value, got {item!r}")
        key, _, value = item.partition("=")
        pairs[key.strip()] = value.strip()
    return pairs


def asdict(cfg) -> dict:
    return dataclasses.asdict(cfg)
