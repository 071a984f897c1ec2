"""Trainable multi-scale temporal detection network.

A trunk of 3-D conv / pool / relu layers produces a hierarchy of feature
maps whose temporal lengths shrink layer by layer. Each feature layer
feeds a convolutional predictor with kernel (3, H_f, W_f) and temporal
padding 1, emitting (K+3)*R channels per temporal cell: K class logits,
one activity logit (sigmoid applied at the module boundary) and two span
offsets for each of the R scale ratios. Prediction vectors come out in
default-span grid order: (layer, cell, ratio).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError, InputError, TrainingDiverged
from ..loss import LossWeights, LossReport, make_batch_targets, total_loss_grads
from ..spans import DefaultSpanGrid, MatchResult, Span, SpanGridConfig, match_spans, tile_default_spans
from . import ops
from .ops import LayerSpec


@dataclass(frozen=True)
class PredictionVector:
    """Per-default-span network output: K class logits, the post-sigmoid
    activity probability, and (center, log-length) offsets."""

    class_scores: tuple[float, ...]
    act_score: float
    offsets: tuple[float, float]


@dataclass(frozen=True)
class NetworkConfig:
    input_shape: tuple[int, int, int]  # (L, H, W)
    num_classes: int
    ratios: tuple[float, ...]
    layers: tuple[LayerSpec, ...]
    in_channels: int = 3
    loss_alpha: float = 1.0
    loss_beta: float = 1.0
    learning_rate: float = 1e-3
    momentum: float = 0.9

    def __post_init__(self) -> None:
        if self.num_classes < 1:
            raise ConfigError(f"num_classes must be >= 1, got {self.num_classes}")
        if not any(spec.is_feature_layer for spec in self.layers):
            raise ConfigError("config defines no feature layers")
        self.grid_config()  # fail fast on a non-decreasing feature hierarchy

    def shape_trace(self) -> list[tuple[int, int, int, int]]:
        """Output shape after every trunk layer, weights not needed."""
        shape = (*self.input_shape, self.in_channels)
        trace = []
        for spec in self.layers:
            shape = spec.output_shape(shape)
            trace.append(shape)
        return trace

    def feature_shapes(self) -> list[tuple[int, int, int, int]]:
        trace = self.shape_trace()
        return [s for s, spec in zip(trace, self.layers) if spec.is_feature_layer]

    def feature_lengths(self) -> tuple[int, ...]:
        return tuple(s[0] for s in self.feature_shapes())

    def grid_config(self) -> SpanGridConfig:
        return SpanGridConfig(self.feature_lengths(), self.ratios)

    def predictor_specs(self) -> list[LayerSpec]:
        k3r = (self.num_classes + 3) * len(self.ratios)
        specs = []
        for lf, hf, wf, cf in self.feature_shapes():
            specs.append(
                LayerSpec(
                    kind="conv3d",
                    in_channels=cf,
                    out_channels=k3r,
                    kernel=(3, hf, wf),
                    stride=(1, 1, 1),
                    padding=(1, 0, 0),
                )
            )
        return specs

    def num_predictions(self) -> int:
        return len(self.ratios) * sum(self.feature_lengths())

    def to_json_dict(self) -> dict:
        return {
            "input_shape": list(self.input_shape),
            "num_classes": self.num_classes,
            "ratios": list(self.ratios),
            "in_channels": self.in_channels,
            "loss_alpha": self.loss_alpha,
            "loss_beta": self.loss_beta,
            "learning_rate": self.learning_rate,
            "momentum": self.momentum,
            "layers": [
                {
                    "kind": s.kind,
                    "in_channels": s.in_channels,
                    "out_channels": s.out_channels,
                    "kernel": list(s.kernel),
                    "stride": list(s.stride),
                    "padding": list(s.padding),
                    "is_feature_layer": s.is_feature_layer,
                }
                for s in self.layers
            ],
        }

    @staticmethod
    def from_json_dict(d: dict) -> "NetworkConfig":
        try:
            layers = tuple(
                LayerSpec(
                    kind=s["kind"],
                    in_channels=s["in_channels"],
                    out_channels=s["out_channels"],
                    kernel=tuple(s["kernel"]),
                    stride=tuple(s["stride"]),
                    padding=tuple(s["padding"]),
                    is_feature_layer=s["is_feature_layer"],
                )
                for s in d["layers"]
            )
            return NetworkConfig(
                input_shape=tuple(d["input_shape"]),
                num_classes=d["num_classes"],
                ratios=tuple(d["ratios"]),
                layers=layers,
                in_channels=d.get("in_channels", 3),
                loss_alpha=d.get("loss_alpha", 1.0),
                loss_beta=d.get("loss_beta", 1.0),
                learning_rate=d.get("learning_rate", 1e-3),
                momentum=d.get("momentum", 0.9),
            )
        except KeyError as e:
            raise ConfigError(f"network config missing key {e}") from e


def s3d_tiny(
    num_classes: int = 3,
    ratios: tuple[float, ...] = (0.25, 0.5, 0.75, 1.0),
    input_shape: tuple[int, int, int] = (64, 16, 16),
    **overrides,
) -> NetworkConfig:
    """Desk-scale reference network: 64x16x16x3 input, base stack of four
    conv+relu+pool blocks down to an 8x1x1x32 feature map, then three
    stride-2 temporal conv layers; feature lengths (8, 4, 2, 1)."""

    def block(cin: int, cout: int, pool_stride: tuple[int, int, int], feature: bool = False):
        return [
            LayerSpec("conv3d", cin, cout, kernel=(3, 3, 3), padding=(1, 1, 1)),
            LayerSpec("relu"),
            LayerSpec(
                "maxpool3d", kernel=pool_stride, stride=pool_stride, is_feature_layer=feature
            ),
        ]

    def aux(c: int):
        return [
            LayerSpec("conv3d", c, c, kernel=(3, 1, 1), stride=(2, 1, 1), padding=(1, 0, 0)),
            LayerSpec("relu", is_feature_layer=True),
        ]

    layers = (
        block(3, 8, (1, 2, 2))
        + block(8, 16, (2, 2, 2))
        + block(16, 32, (2, 2, 2))
        + block(32, 32, (2, 2, 2), feature=True)
        + aux(32)
        + aux(32)
        + aux(32)
    )
    return NetworkConfig(
        input_shape=input_shape,
        num_classes=num_classes,
        ratios=ratios,
        layers=tuple(layers),
        **overrides,
    )


def paper_scale(num_classes: int = 20, ratios: tuple[float, ...] = (0.25, 0.5, 0.75, 1.0)) -> NetworkConfig:
    """Full-scale structure: 256x112x112x3 input through a conv1-conv5
    stack to a 32x7x7x512 feature map, a 2x downsampling pool, and a
    stride-2 temporal hierarchy; feature lengths (32, 16, 8, 4, 2, 1).
    Intended for shape algebra, not desk-scale training."""

    def conv(cin, cout, feature=False):
        return [
            LayerSpec("conv3d", cin, cout, kernel=(3, 3, 3), padding=(1, 1, 1)),
            LayerSpec("relu", is_feature_layer=feature),
        ]

    def pool(stride):
        return [LayerSpec("maxpool3d", kernel=stride, stride=stride)]

    def aux(cin, cout):
        return [
            LayerSpec("conv3d", cin, cout, kernel=(3, 1, 1), stride=(2, 1, 1), padding=(1, 0, 0)),
            LayerSpec("relu", is_feature_layer=True),
        ]

    layers = (
        conv(3, 64) + pool((1, 2, 2))
        + conv(64, 128) + pool((2, 2, 2))
        + conv(128, 256) + conv(256, 256) + pool((2, 2, 2))
        + conv(256, 512) + conv(512, 512) + pool((2, 2, 2))
        + conv(512, 512) + conv(512, 512, feature=True)   # 32 x 7 x 7
        + pool((2, 2, 2))
        + conv(512, 512, feature=True)                     # 16 x 3 x 3
        + aux(512, 256)                                    # 8
        + aux(256, 256)                                    # 4
        + aux(256, 256)                                    # 2
        + aux(256, 256)                                    # 1
    )
    return NetworkConfig(
        input_shape=(256, 112, 112),
        num_classes=num_classes,
        ratios=ratios,
        layers=tuple(layers),
    )


@dataclass
class _LayerState:
    """Parameters for one conv layer."""

    weights: np.ndarray
    bias: np.ndarray


class Network:
    """Parameter container plus forward/backward over one video window."""

    def __init__(self, config: NetworkConfig, rng: np.random.Generator | None = None):
        self.config = config
        self.grid: DefaultSpanGrid = tile_default_spans(config.grid_config())
        self.predictor_layer_specs = config.predictor_specs()
        self.trunk_params: list[_LayerState | None] = []
        for spec in config.layers:
            self.trunk_params.append(self._init_layer(spec, rng))
        self.predictor_params: list[_LayerState] = [
            self._init_layer(spec, rng) for spec in self.predictor_specs_iter()
        ]

    def predictor_specs_iter(self):
        return self.predictor_layer_specs

    @staticmethod
    def _init_layer(spec: LayerSpec, rng: np.random.Generator | None) -> _LayerState | None:
        if spec.kind != "conv3d":
            return None
        shape = (*spec.kernel, spec.in_channels, spec.out_channels)
        if rng is None:
            weights = np.zeros(shape)
        else:
            fan_in = spec.kernel[0] * spec.kernel[1] * spec.kernel[2] * spec.in_channels
            weights = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape)
        return _LayerState(weights=weights, bias=np.zeros(spec.out_channels))

    # --- parameter traversal (declaration order: trunk convs, then predictors) ---

    def parameter_arrays(self) -> list[np.ndarray]:
        arrays = []
        for state in self.trunk_params:
            if state is not None:
                arrays.extend([state.weights, state.bias])
        for state in self.predictor_params:
            arrays.extend([state.weights, state.bias])
        return arrays

    def parameter_names(self) -> list[str]:
        names = []
        for i, state in enumerate(self.trunk_params):
            if state is not None:
                names.extend([f"trunk{i}.weights", f"trunk{i}.bias"])
        for i in range(len(self.predictor_params)):
            names.extend([f"predictor{i}.weights", f"predictor{i}.bias"])
        return names

    # --- forward ---

    def forward_raw(self, video: np.ndarray, keep_cache: bool = True):
        """Run the trunk and predictors.

        Returns (raw, caches) where raw is the (num spans, K+3) channel
        matrix in grid order with the activity channel still a logit.
        """
        expected = (*self.config.input_shape, self.config.in_channels)
        if video.shape != expected:
            raise InputError(f"input shape {video.shape} != configured {expected}")
        x = np.ascontiguousarray(video, dtype=np.float64)
        trunk_cache: list[tuple] = []
        feature_maps: list[np.ndarray] = []
        for spec, state in zip(self.config.layers, self.trunk_params):
            if spec.kind == "conv3d":
                out, xp = ops.conv3d_forward(x, state.weights, state.bias, spec)
                trunk_cache.append(("conv3d", xp) if keep_cache else ("conv3d", None))
            elif spec.kind == "maxpool3d":
                out, argmax = ops.maxpool3d_forward(x, spec)
                trunk_cache.append(("maxpool3d", (argmax, x.shape)) if keep_cache else ("maxpool3d", None))
            elif spec.kind == "relu":
                out, mask = ops.relu_forward(x)
                trunk_cache.append(("relu", mask) if keep_cache else ("relu", None))
            else:  # sigmoid
                out = ops.sigmoid(x)
                trunk_cache.append(("sigmoid", out) if keep_cache else ("sigmoid", None))
            if spec.is_feature_layer:
                feature_maps.append(out)
            x = out

        k3 = self.config.num_classes + 3
        r = len(self.config.ratios)
        raw_parts = []
        pred_cache = []
        for fmap, spec, state in zip(feature_maps, self.predictor_layer_specs, self.predictor_params):
            out, xp = ops.conv3d_forward(fmap, state.weights, state.bias, spec)
            pred_cache.append(xp if keep_cache else None)
            # (L_f, 1, 1, (K+3)*R) -> (L_f * R, K+3), cell-major then ratio
            raw_parts.append(out.reshape(out.shape[0] * r, k3))
        raw = np.concatenate(raw_parts, axis=0)
        cache = (trunk_cache, feature_maps, pred_cache) if keep_cache else None
        return raw, cache

    def split_raw(self, raw: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Raw channels -> (class logits, activity probabilities, offsets)."""
        k = self.config.num_classes
        class_logits = raw[:, :k]
        act_probs = ops.sigmoid(raw[:, k])
        offsets = raw[:, k + 1 : k + 3]
        return class_logits, act_probs, offsets

    def match(self, ground_truths: list[tuple[Span, int]]) -> MatchResult:
        """Match window annotations against this network's default spans."""
        return match_spans(self.grid, ground_truths, num_classes=self.config.num_classes)

    def forward(self, video: np.ndarray) -> list[PredictionVector]:
        raw, _ = self.forward_raw(video, keep_cache=False)
        class_logits, act_probs, offsets = self.split_raw(raw)
        return [
            PredictionVector(
                class_scores=tuple(class_logits[i]),
                act_score=float(act_probs[i]),
                offsets=(float(offsets[i, 0]), float(offsets[i, 1])),
            )
            for i in range(raw.shape[0])
        ]

    # --- backward ---

    def backward(
        self,
        cache,
        grad_class_logits: np.ndarray,
        grad_act_probs: np.ndarray,
        act_probs: np.ndarray,
        grad_offsets: np.ndarray,
    ) -> list[np.ndarray]:
        """Gradients w.r.t. every parameter array, in declaration order.

        Takes gradients w.r.t. the split outputs; the sigmoid on the
        activity channel is chained here since the network owns it.
        """
        trunk_cache, feature_maps, pred_cache = cache
        k = self.config.num_classes
        r = len(self.config.ratios)
        grad_raw = np.empty((grad_class_logits.shape[0], k + 3))
        grad_raw[:, :k] = grad_class_logits
        grad_raw[:, k] = grad_act_probs * act_probs * (1.0 - act_probs)
        grad_raw[:, k + 1 : k + 3] = grad_offsets

        # predictors first: their input grads seed the feature-map grads
        feature_grads: list[np.ndarray] = []
        pred_grads: list[tuple[np.ndarray, np.ndarray]] = []
        offset = 0
        for fmap, spec, state, xp in zip(
            feature_maps, self.predictor_layer_specs, self.predictor_params, pred_cache
        ):
            lf = fmap.shape[0]
            part = grad_raw[offset : offset + lf * r].reshape(lf, 1, 1, r * (k + 3))
            offset += lf * r
            gin, gw, gb = ops.conv3d_backward(part, xp, state.weights, spec)
            feature_grads.append(gin)
            pred_grads.append((gw, gb))

        trunk_grads: list[tuple[np.ndarray, np.ndarray] | None] = [None] * len(self.config.layers)
        feature_idx = len(feature_maps) - 1
        grad_x = None
        for li in reversed(range(len(self.config.layers))):
            spec = self.config.layers[li]
            kind, cached = trunk_cache[li]
            if spec.is_feature_layer:
                inject = feature_grads[feature_idx]
                feature_idx -= 1
                grad_x = inject if grad_x is None else grad_x + inject
            if grad_x is None:
                # layers beyond the last feature layer receive no gradient
                continue
            if kind == "conv3d":
                state = self.trunk_params[li]
                gin, gw, gb = ops.conv3d_backward(grad_x, cached, state.weights, spec)
                trunk_grads[li] = (gw, gb)
                grad_x = gin
            elif kind == "maxpool3d":
                argmax, in_shape = cached
                grad_x = ops.maxpool3d_backward(grad_x, argmax, in_shape, spec)
            elif kind == "relu":
                grad_x = ops.relu_backward(grad_x, cached)
            else:
                grad_x = ops.sigmoid_backward(grad_x, cached)

        arrays: list[np.ndarray] = []
        for li, state in enumerate(self.trunk_params):
            if state is None:
                continue
            if trunk_grads[li] is None:
                arrays.extend([np.zeros_like(state.weights), np.zeros_like(state.bias)])
            else:
                arrays.extend(list(trunk_grads[li]))
        for gw, gb in pred_grads:
            arrays.extend([gw, gb])
        return arrays


def network_forward(network: Network, video: np.ndarray) -> list[PredictionVector]:
    """One prediction vector per default span, in grid order."""
    return network.forward(video)


class SgdMomentum:
    """Classic momentum update: v <- mu*v + g; theta <- theta - lr*v."""

    def __init__(self, learning_rate: float, momentum: float = 0.9):
        self.learning_rate = learning_rate
        self.momentum = momentum
        self.velocities: list[np.ndarray] | None = None

    def step(self, params: list[np.ndarray], grads: list[np.ndarray]) -> None:
        if self.velocities is None:
            self.velocities = [np.zeros_like(p) for p in params]
        if len(params) != len(grads) or len(params) != len(self.velocities):
            raise InputError("parameter/gradient count mismatch")
        for p, g, v in zip(params, grads, self.velocities):
            v *= self.momentum
            v += g
            p -= self.learning_rate * v

    def state_arrays(self) -> list[np.ndarray]:
        return [] if self.velocities is None else self.velocities


def train_step(
    network: Network,
    batch: list[tuple[np.ndarray, "MatchResult"]],
    optimizer: SgdMomentum,
    weights: LossWeights | None = None,
) -> LossReport:
    """One SGD-with-momentum update on the joint loss over a batch of
    (window frames, match result) pairs. Returns the pre-update loss."""
    if not batch:
        raise InputError("train_step requires a nonempty batch")
    if weights is None:
        weights = LossWeights(network.config.loss_alpha, network.config.loss_beta)

    raws, caches, acts = [], [], []
    for i, (video, _) in enumerate(batch):
        raw, cache = network.forward_raw(video)
        if not np.all(np.isfinite(raw)):
            raise TrainingDiverged(f"non-finite prediction tensor for batch window {i}")
        raws.append(raw)
        caches.append(cache)
        acts.append(network.split_raw(raw)[1])

    matches = [m for _, m in batch]
    targets = make_batch_targets(matches, acts)

    span_count = raws[0].shape[0]
    class_logits = np.concatenate([network.split_raw(r)[0] for r in raws])
    act_probs = np.concatenate(acts)
    offsets = np.concatenate([network.split_raw(r)[2] for r in raws])

    report, g_off, g_cls, g_act = total_loss_grads(offsets, class_logits, act_probs, targets, weights)
    for name, value in (("loc", report.loc), ("conf", report.conf), ("act", report.act)):
        if not np.isfinite(value):
            raise TrainingDiverged(f"non-finite {name} loss tensor")

    total_grads: list[np.ndarray] | None = None
    for i in range(len(batch)):
        sl = slice(i * span_count, (i + 1) * span_count)
        grads = network.backward(caches[i], g_cls[sl], g_act[sl], act_probs[sl], g_off[sl])
        if total_grads is None:
            total_grads = grads
        else:
            for acc, g in zip(total_grads, grads):
                acc += g

    optimizer.step(network.parameter_arrays(), total_grads)
    return report
