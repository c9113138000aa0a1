"""Sensor-attention fusion network and its early/late fusion baselines.

Attention model data flow for a batch ``X[N, S, C, K]``::

    per-sensor multi-kernel block  -> F[N, S, L]            (sensor vectors)
    a   = F w                         [N, S]
    a^  = tanh(a W^T + b)             [N, S]
    att = softmax(a^) over sensors    [N, S]
    F^  = F * att[..., None]          [N, S, L]
    inter-sensor multi-kernel block on F^ as a 1-channel S x L image
    dense(128, relu) -> dense(M) -> softmax

A multi-kernel block runs parallel conv -> batch norm -> relu branches with
SAME padding, concatenates them on the channel axis and 2x2 max-pools.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .nn import tensor as T
from .nn.layers import BatchNorm, Conv2d, Dense, Module, kaiming_uniform
from .nn.tensor import Parameter, Tensor

VARIANTS = ("attention", "no_attention", "early", "late")
DEFAULT_KERNELS = ((1, 3), (3, 3), (5, 5))
LARGER_KERNELS = ((7, 7), (9, 9))


@dataclass
class ModelConfig:
    kernel_sizes: tuple[tuple[int, int], ...] = DEFAULT_KERNELS
    filters_per_kernel: int = 8
    use_larger_kernels: bool = False
    shared_sensor_blocks: bool = True
    hidden_units: int = 128

    def __post_init__(self):
        self.kernel_sizes = tuple(tuple(int(v) for v in k) for k in self.kernel_sizes)
        if not self.kernel_sizes:
            raise ValueError("at least one kernel size is required")
        if self.filters_per_kernel < 1 or self.hidden_units < 1:
            raise ValueError("filter and hidden-unit counts must be >= 1")

    @property
    def all_kernels(self) -> tuple[tuple[int, int], ...]:
        return self.kernel_sizes + (LARGER_KERNELS if self.use_larger_kernels else ())

    def to_dict(self) -> dict:
        d = asdict(self)
        d["kernel_sizes"] = [list(k) for k in self.kernel_sizes]
        return d


@dataclass
class ForwardResult:
    probs: Tensor
    logits: Tensor | None = None
    attention: Tensor | None = None
    # pooled output of each sensor block (the maps the class-activation grids read)
    sensor_maps: list[Tensor] = field(default_factory=list)


class MultiKernelBlock(Module):
    def __init__(self, in_channels: int, kernels, filters: int, rng: np.random.Generator):
        self.convs = [Conv2d(in_channels, filters, k, rng) for k in kernels]
        self.norms = [BatchNorm(filters) for _ in kernels]

    @property
    def out_channels(self) -> int:
        return sum(c.weight.shape[0] for c in self.convs)

    def feature_maps(self, x: Tensor) -> Tensor:
        return T.concat([T.relu(bn(conv(x))) for conv, bn in zip(self.convs, self.norms)], axis=1)

    def __call__(self, x: Tensor) -> tuple[Tensor, Tensor]:
        maps = self.feature_maps(x)
        return maps, T.max_pool2d(maps)


def pooled_len(channels: int, h: int, w: int) -> int:
    return channels * (h // 2) * (w // 2)


class Classifier(Module):
    def __init__(self, in_features: int, hidden: int, num_classes: int, rng: np.random.Generator):
        self.hidden = Dense(in_features, hidden, rng, activation="relu")
        self.out = Dense(hidden, num_classes, rng)

    def __call__(self, x: Tensor) -> Tensor:
        return self.out(self.hidden(x))


class SensorAttention(Module):
    """Sensor scores ``softmax(tanh(W (F w) + b))``.

    W starts at the identity so each sensor is first scored by its own
    features, and w at a tenth of the Kaiming bound so ``tanh`` starts in its
    linear range.  Sensor vectors are non-negative with a large common
    component; at full Kaiming scale ``F w`` saturates the tanh and the
    attention never leaves its initial pattern.
    """

    def __init__(self, vec_len: int, num_sensors: int, rng: np.random.Generator):
        self.w = Parameter(0.1 * kaiming_uniform(rng, (vec_len, 1), vec_len), name="w")
        self.W = Parameter(np.eye(num_sensors), name="W")
        self.b = Parameter(np.zeros(num_sensors), name="b", decay=False)

    def scores(self, F: Tensor) -> Tensor:
        n, s, _ = F.shape
        a = T.reshape(T.matmul(F, self.w), (n, s))
        return T.softmax(T.tanh(T.linear(a, self.W, self.b)), axis=1)


def apply_attention(F: Tensor, att: Tensor) -> Tensor:
    """Scale row s of every F[n] by att[n, s]."""
    n, s = att.shape
    return T.mul(F, T.reshape(att, (n, s, 1)))


class HarModel(Module):
    """Common interface: ``forward(x, train)`` on ``x[N, S, C, K]``."""

    variant = ""

    def __init__(self, num_sensors: int, num_channels: int, width: int, num_classes: int,
                 config: ModelConfig | None = None, seed: int = 0):
        self.num_sensors = num_sensors
        self.num_channels = num_channels
        self.width = width
        self.num_classes = num_classes
        self.config = config or ModelConfig()
        self.seed = seed

    def header(self) -> dict:
        return {"variant": self.variant, "num_sensors": self.num_sensors,
                "num_channels": self.num_channels, "width": self.width,
                "num_classes": self.num_classes, "seed": self.seed,
                "config": self.config.to_dict()}

    def _check_input(self, x: np.ndarray) -> None:
        expected = (self.num_sensors, self.num_channels, self.width)
        if x.ndim != 4 or tuple(x.shape[1:]) != expected:
            raise ValueError(f"model expects input [N, {', '.join(map(str, expected))}], got {list(x.shape)}")

    def forward(self, x: np.ndarray, train: bool = False) -> ForwardResult:
        raise NotImplementedError

    def predict_proba(self, x: np.ndarray) -> np.ndarray:
        with T.no_grad():
            self.eval()
            return self.forward(x).probs.data


class AttentionHar(HarModel):
    """Per-sensor blocks -> sensor attention -> inter-sensor block -> classifier.

    ``use_attention=False`` freezes the attention at 1/S for every sensor.
    """

    def __init__(self, num_sensors, num_channels, width, num_classes, config=None, seed=0,
                 use_attention: bool = True):
        super().__init__(num_sensors, num_channels, width, num_classes, config, seed)
        self.variant = "attention" if use_attention else "no_attention"
        cfg = self.config
        rng = np.random.default_rng(seed)
        kernels = cfg.all_kernels
        n_blocks = 1 if cfg.shared_sensor_blocks else num_sensors
        self.sensor_blocks = [MultiKernelBlock(1, kernels, cfg.filters_per_kernel, rng)
                              for _ in range(n_blocks)]
        maps = self.sensor_blocks[0].out_channels
        self.vec_len = pooled_len(maps, num_channels, width)
        if self.vec_len == 0:
            raise ValueError(f"image {num_channels}x{width} too small for 2x2 pooling")
        self.attention = SensorAttention(self.vec_len, num_sensors, rng) if use_attention else None
        if num_sensors >= 2:
            self.inter_block = MultiKernelBlock(1, kernels, cfg.filters_per_kernel, rng)
            self.fused_len = pooled_len(self.inter_block.out_channels, num_sensors, self.vec_len)
        else:
            self.inter_block = None
            self.fused_len = self.vec_len
        self.classifier = Classifier(self.fused_len, cfg.hidden_units, num_classes, rng)

    def sensor_vectors(self, x: np.ndarray) -> tuple[Tensor, list[Tensor]]:
        n, s, c, k = x.shape
        if self.config.shared_sensor_blocks:
            _, pooled = self.sensor_blocks[0](Tensor(x.reshape(n * s, 1, c, k)))
            F = T.reshape(pooled, (n, s, self.vec_len))
            return F, [pooled]
        vecs, all_maps = [], []
        for i, block in enumerate(self.sensor_blocks):
            _, pooled = block(Tensor(x[:, i:i + 1]))
            vecs.append(T.reshape(pooled, (n, self.vec_len)))
            all_maps.append(pooled)
        return T.stack(vecs, axis=1), all_maps

    def forward(self, x: np.ndarray, train: bool = False) -> ForwardResult:
        self._check_input(x)
        self.train(train)
        n, s = x.shape[:2]
        F, maps = self.sensor_vectors(x)
        if self.attention is not None:
            att = self.attention.scores(F)
        else:
            att = Tensor(np.full((n, s), 1.0 / s))
        F_hat = apply_attention(F, att)
        if self.inter_block is not None:
            _, fused = self.inter_block(T.reshape(F_hat, (n, 1, s, self.vec_len)))
            feats = T.reshape(fused, (n, self.fused_len))
        else:
            feats = T.reshape(F_hat, (n, self.fused_len))
        logits = self.classifier(feats)
        return ForwardResult(probs=T.softmax(logits, axis=1), logits=logits,
                             attention=att, sensor_maps=maps)

    def per_sensor(self, maps: list[np.ndarray], n: int) -> list[np.ndarray]:
        """Split ``sensor_maps`` arrays (values or grads) into one ``[N, ch, C/2, K/2]`` per sensor."""
        if self.config.shared_sensor_blocks:
            arr = maps[0].reshape(n, self.num_sensors, *maps[0].shape[1:])
            return [arr[:, s] for s in range(self.num_sensors)]
        return list(maps)


class EarlyFusionHar(HarModel):
    """Sensors stacked as input channels into one multi-kernel block."""

    variant = "early"

    def __init__(self, num_sensors, num_channels, width, num_classes, config=None, seed=0):
        super().__init__(num_sensors, num_channels, width, num_classes, config, seed)
        rng = np.random.default_rng(seed)
        cfg = self.config
        self.block = MultiKernelBlock(num_sensors, cfg.all_kernels, cfg.filters_per_kernel, rng)
        self.feat_len = pooled_len(self.block.out_channels, num_channels, width)
        self.classifier = Classifier(self.feat_len, cfg.hidden_units, num_classes, rng)

    def forward(self, x: np.ndarray, train: bool = False) -> ForwardResult:
        self._check_input(x)
        self.train(train)
        _, pooled = self.block(Tensor(x))
        logits = self.classifier(T.reshape(pooled, (x.shape[0], self.feat_len)))
        return ForwardResult(probs=T.softmax(logits, axis=1), logits=logits, sensor_maps=[pooled])


class LateFusionHar(HarModel):
    """Independent per-sensor networks whose class probabilities are averaged."""

    variant = "late"

    def __init__(self, num_sensors, num_channels, width, num_classes, config=None, seed=0):
        super().__init__(num_sensors, num_channels, width, num_classes, config, seed)
        rng = np.random.default_rng(seed)
        cfg = self.config
        self.blocks = [MultiKernelBlock(1, cfg.all_kernels, cfg.filters_per_kernel, rng)
                       for _ in range(num_sensors)]
        self.feat_len = pooled_len(self.blocks[0].out_channels, num_channels, width)
        self.classifiers = [Classifier(self.feat_len, cfg.hidden_units, num_classes, rng)
                            for _ in range(num_sensors)]

    def forward(self, x: np.ndarray, train: bool = False) -> ForwardResult:
        self._check_input(x)
        self.train(train)
        n, s = x.shape[:2]
        probs, maps = None, []
        for i in range(s):
            _, pooled = self.blocks[i](Tensor(x[:, i:i + 1]))
            maps.append(pooled)
            p = T.softmax(self.classifiers[i](T.reshape(pooled, (n, self.feat_len))), axis=1)
            probs = p if probs is None else probs + p
        return ForwardResult(probs=T.mul(probs, 1.0 / s), sensor_maps=maps)


def build_model(variant: str, num_sensors: int, num_channels: int, width: int, num_classes: int,
                config: ModelConfig | None = None, seed: int = 0) -> HarModel:
    if variant == "attention":
        return AttentionHar(num_sensors, num_channels, width, num_classes, config, seed)
    if variant == "no_attention":
        return AttentionHar(num_sensors, num_channels, width, num_classes, config, seed,
                            use_attention=False)
    if variant == "early":
        return EarlyFusionHar(num_sensors, num_channels, width, num_classes, config, seed)
    if variant == "late":
        return LateFusionHar(num_sensors, num_channels, width, num_classes, config, seed)
    raise ValueError(f"unknown model variant {variant!r}; choose from {VARIANTS}")


def build_attention_model(meta, image_shape, seed=0, config=None) -> AttentionHar:
    return build_model("attention", meta.num_sensors, *image_shape, meta.num_classes, config, seed)


def build_no_attention_model(meta, image_shape, seed=0, config=None) -> AttentionHar:
    return build_model("no_attention", meta.num_sensors, *image_shape, meta.num_classes, config, seed)


def build_early_fusion_model(meta, image_shape, seed=0, config=None) -> EarlyFusionHar:
    return build_model("early", meta.num_sensors, *image_shape, meta.num_classes, config, seed)


def build_late_fusion_model(meta, image_shape, seed=0, config=None) -> LateFusionHar:
    return build_model("late", meta.num_sensors, *image_shape, meta.num_classes, config, seed)


def model_from_header(header: dict) -> HarModel:
    cfg = ModelConfig(**header["config"])
    return build_model(header["variant"], header["num_sensors"], header["num_channels"],
                       header["width"], header["num_classes"], cfg, header["seed"])
