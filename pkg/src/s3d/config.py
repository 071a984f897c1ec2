"""Single validated source of truth for every tunable.

Configuration comes from one JSON file; command-line flags override
individual keys. Validation happens once, up front, and includes the
fail-fast cross-check that the network's feature hierarchy matches the
span grid and that synthetic instances fit inside one training window.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from .data import JitterSpec, SyntheticSpec
from .errors import ConfigError
from .metrics import EvalConfig
from .net.network import NetworkConfig, s3d_tiny

NETWORK_BUILDERS = {"s3d-tiny": s3d_tiny}


@dataclass(frozen=True)
class RunConfig:
    seed: int = 42
    threads: int = 1

    # synthetic dataset
    data: SyntheticSpec = field(default_factory=SyntheticSpec)
    num_train_videos: int = 40
    num_test_videos: int = 10

    # network and span grid
    network: str = "s3d-tiny"
    ratios: tuple[float, ...] = (0.25, 0.5, 0.75, 1.0)

    # joint loss
    alpha: float = 1.0
    beta: float = 1.0

    # optimization
    learning_rate: float = 1e-3
    momentum: float = 0.9
    lr_decay_epochs: tuple[int, ...] = ()
    lr_decay_factor: float = 0.1
    epochs: int = 12
    batch_size: int = 8

    # windowing and augmentation
    window_stride: int = 32
    jitter_max_shift: int = 8
    jitter_crop_pixels: int = 1
    jitter_flip_prob: float = 0.5

    # inference
    score_threshold: float = 0.05
    nms_threshold: float = 0.5

    # evaluation
    iou_thresholds: tuple[float, ...] = (0.3, 0.4, 0.5, 0.6, 0.7)

    def __post_init__(self) -> None:
        self.validate()

    def validate(self) -> None:
        if self.network not in NETWORK_BUILDERS:
            raise ConfigError(f"unknown network {self.network!r}; known: {sorted(NETWORK_BUILDERS)}")
        if self.window_stride < 1:
            raise ConfigError("window_stride must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if not (0.0 <= self.score_threshold <= 1.0):
            raise ConfigError("score_threshold must lie in [0, 1]")
        if not (0.0 <= self.nms_threshold <= 1.0):
            raise ConfigError("nms_threshold must lie in [0, 1]")
        if self.num_train_videos < 0 or self.num_test_videos < 0:
            raise ConfigError("video counts must be >= 0")
        if not (0.0 < self.lr_decay_factor <= 1.0):
            raise ConfigError("lr_decay_factor must lie in (0, 1]")
        if any(e < 0 for e in self.lr_decay_epochs):
            raise ConfigError("lr_decay_epochs must be >= 0")
        EvalConfig(self.iou_thresholds)
        netcfg = self.make_network_config()  # grid/feature cross-check happens here
        window_sec = netcfg.input_shape[0] / self.data.fps
        if self.data.instance_length_range_sec[1] > window_sec:
            raise ConfigError(
                f"instances up to {self.data.instance_length_range_sec[1]}s cannot fit a "
                f"{window_sec}s training window"
            )
        if self.window_stride > netcfg.input_shape[0]:
            raise ConfigError("window_stride larger than the window leaves gaps")

    def make_network_config(self) -> NetworkConfig:
        builder = NETWORK_BUILDERS[self.network]
        return builder(
            num_classes=self.data.num_classes,
            ratios=self.ratios,
            loss_alpha=self.alpha,
            loss_beta=self.beta,
            learning_rate=self.learning_rate,
            momentum=self.momentum,
        )

    def jitter_spec(self) -> JitterSpec:
        return JitterSpec(
            max_shift_frames=self.jitter_max_shift,
            crop_pixels=self.jitter_crop_pixels,
            flip_prob=self.jitter_flip_prob,
        )

    def eval_config(self) -> EvalConfig:
        return EvalConfig(self.iou_thresholds)

    def to_json_dict(self) -> dict:
        d = asdict(self)
        d["data"] = asdict(self.data)
        return d

    def config_hash(self) -> str:
        payload = json.dumps(self.to_json_dict(), sort_keys=True).encode("utf-8")
        return hashlib.sha256(payload).hexdigest()[:12]

    @staticmethod
    def from_dict(raw: dict) -> "RunConfig":
        raw = dict(raw)
        known = {f.name for f in fields(RunConfig)}
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        if "data" in raw and isinstance(raw["data"], dict):
            data_known = {f.name for f in fields(SyntheticSpec)}
            data_unknown = set(raw["data"]) - data_known
            if data_unknown:
                raise ConfigError(f"unknown data config keys: {sorted(data_unknown)}")
            d = {
                k: tuple(v) if isinstance(v, list) else v for k, v in raw["data"].items()
            }
            raw["data"] = SyntheticSpec(**d)
        for key in ("ratios", "iou_thresholds", "lr_decay_epochs"):
            if key in raw and isinstance(raw[key], list):
                raw[key] = tuple(raw[key])
        return RunConfig(**raw)

    def learning_rate_at(self, epoch: int) -> float:
        """Step-decayed learning rate for the given epoch index."""
        decays = sum(1 for e in self.lr_decay_epochs if epoch >= e)
        return self.learning_rate * self.lr_decay_factor**decays

    @staticmethod
    def from_json_file(path: str | Path) -> "RunConfig":
        try:
            raw = json.loads(Path(path).read_text())
        except json.JSONDecodeError as e:
            raise ConfigError(f"config file {path} is not valid JSON: {e}") from e
        return RunConfig.from_dict(raw)

    def with_overrides(self, **kwargs) -> "RunConfig":
        kwargs = {k: v for k, v in kwargs.items() if v is not None}
        if not kwargs:
            return self
        data_updates = {}
        for key in list(kwargs):
            if key.startswith("data_"):
                data_updates[key[len("data_"):]] = kwargs.pop(key)
        cfg = self
        if data_updates:
            cfg = replace(cfg, data=replace(cfg.data, **data_updates))
        return replace(cfg, **kwargs) if kwargs else cfg
