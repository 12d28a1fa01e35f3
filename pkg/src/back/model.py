"""Unidimensional residual network for 12-lead ECG classification.

Stem:   Conv(K, stride 1) -> BN -> ReLU
Block:  main  BN -> ReLU -> Dropout -> Conv(stride=subsample) -> BN -> ReLU -> Dropout -> Conv
        skip  MaxPool(subsample) [-> 1x1 Conv when the channel count changes]
        out = main + skip
Head:   flatten (channel-major) -> Dense -> sigmoid
"""

import dataclasses
import json
import struct
from collections import OrderedDict
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

import numpy as np

from .constants import (
    BASE_FILTERS,
    DROPOUT_RATE,
    FILTER_GROWTH,
    INPUT_SAMPLES,
    KERNEL_LENGTH,
    MAX_DECIMATION,
    N_BLOCKS,
    N_CLASSES,
    N_LEADS,
    SUBSAMPLE,
    WEIGHTS_MAGIC,
    WEIGHTS_VERSION,
)
from .errors import ConfigError, ConfigMismatchError, ShapeError, TruncatedFileError, FileFormatError
from .logging_config import logger
from .tensor_core import (
    FLOAT32,
    BatchNorm1d,
    BCELoss,
    Conv1d,
    Dense,
    Dropout,
    MaxPool1d,
    OpContext,
    ReLU,
    Sigmoid,
    Tensor,
)
from .utils import atomic_write_bytes

BUFFER_SUFFIXES = (".running_mean", ".running_var")


@dataclass(frozen=True)
class ResNetConfig:
    """Architecture description; block b = 1..n_blocks has base_filters + filter_growth * (b // 2) filters."""

    n_blocks: int = N_BLOCKS
    kernel_length: int = KERNEL_LENGTH
    input_leads: int = N_LEADS
    input_samples: int = INPUT_SAMPLES
    base_filters: int = BASE_FILTERS
    filter_growth: int = FILTER_GROWTH
    subsample: int = SUBSAMPLE
    dropout_rate: float = DROPOUT_RATE
    n_classes: int = N_CLASSES

    def validate(self) -> "ResNetConfig":
        for name in ("n_blocks", "kernel_length", "input_leads", "input_samples",
                     "base_filters", "subsample", "n_classes"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.filter_growth < 0:
            raise ConfigError(f"filter_growth must be non-negative, got {self.filter_growth}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError(f"dropout_rate must lie in [0, 1), got {self.dropout_rate}")
        reduction = self.subsample ** self.n_blocks
        if self.input_samples % reduction:
            raise ConfigError(
                f"input_samples={self.input_samples} is not divisible by "
                f"subsample^n_blocks={reduction}"
            )
        return self

    def block_filters(self) -> List[int]:
        return [self.base_filters + self.filter_growth * (b // 2) for b in range(1, self.n_blocks + 1)]

    def block_lengths(self) -> List[int]:
        return [self.input_samples // self.subsample ** b for b in range(1, self.n_blocks + 1)]

    def dense_features(self) -> int:
        return self.block_filters()[-1] * self.block_lengths()[-1]

    def architecture(self) -> Tuple:
        """Fields that determine parameter shapes (dropout does not)."""
        return tuple(v for k, v in dataclasses.asdict(self).items() if k != "dropout_rate")

    def to_dict(self) -> dict:
        data = dataclasses.asdict(self)
        data["filter_schedule"] = self.block_filters()
        return data

    @classmethod
    def from_dict(cls, data: dict) -> "ResNetConfig":
        data = dict(data)
        schedule = data.pop("filter_schedule", None)
        config = cls(**data).validate()
        if schedule is not None and list(schedule) != config.block_filters():
            raise ConfigMismatchError(
                f"stored filter schedule {schedule} differs from the derived {config.block_filters()}"
            )
        return config


def parameter_shapes(config: ResNetConfig) -> "OrderedDict[str, Tuple[int, ...]]":
    """Canonical parameter names and shapes, in serialization order."""
    shapes = OrderedDict()

    def conv(name, c_out, c_in, kernel):
        shapes[f"{name}.weight"] = (c_out, c_in, kernel)
        shapes[f"{name}.bias"] = (c_out,)

    def bn(name, channels):
        for suffix in (".gamma", ".beta") + BUFFER_SUFFIXES:
            shapes[f"{name}{suffix}"] = (channels,)

    k = config.kernel_length
    conv("stem.conv", config.base_filters, config.input_leads, k)
    bn("stem.bn", config.base_filters)
    channels = config.base_filters
    for b, filters in enumerate(config.block_filters(), start=1):
        prefix = f"blocks.{b}"
        bn(f"{prefix}.bn1", channels)
        conv(f"{prefix}.conv1", filters, channels, k)
        bn(f"{prefix}.bn2", filters)
        conv(f"{prefix}.conv2", filters, filters, k)
        if filters != channels:
            conv(f"{prefix}.skip", filters, channels, 1)
        channels = filters
    shapes["dense.weight"] = (config.dense_features(), config.n_classes)
    shapes["dense.bias"] = (config.n_classes,)
    return shapes


def is_buffer(name: str) -> bool:
    """Running statistics are state, not trainable parameters."""
    return name.endswith(BUFFER_SUFFIXES)


@dataclass
class ModelWeights:
    """Named parameter tensors keyed by canonical layer path.

    ``decimation`` is the input decimation factor the weights were trained with.
    """

    config: ResNetConfig
    params: "OrderedDict[str, Tensor]"
    decimation: int = 1

    def validate(self) -> "ModelWeights":
        expected = parameter_shapes(self.config)
        missing = [name for name in expected if name not in self.params]
        unknown = [name for name in self.params if name not in expected]
        if missing or unknown:
            raise ShapeError(f"parameter set mismatch: missing={missing} unknown={unknown}")
        for name, shape in expected.items():
            if self.params[name].shape != shape:
                raise ShapeError(f"{name} has shape {self.params[name].shape}, expected {shape}")
        return self

    def copy(self) -> "ModelWeights":
        return ModelWeights(self.config, OrderedDict((k, v.copy()) for k, v in self.params.items()), self.decimation)


def _he_normal(rng: np.random.Generator, shape, fan_in: int, dtype) -> Tensor:
    return (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(dtype)


def _mean_preserving_projection(rng: np.random.Generator, shape, dtype) -> Tensor:
    """1x1 skip projection: N(0, 1/c_in) entries, each row re-centred to sum to 1.

    Unit row sums map a mean shared by the input channels to the same mean on
    every output channel.
    """
    c_out, c_in, _ = shape
    g = rng.standard_normal((c_out, c_in)) / np.sqrt(c_in)
    w = g - g.mean(axis=1, keepdims=True) + 1.0 / c_in
    return w.reshape(shape).astype(dtype)


class ResNet1d:
    """The residual network: parameters plus forward and backward passes."""

    def __init__(self, weights: ModelWeights):
        self.config = weights.config.validate()
        self.params = weights.validate().params
        self.filters = self.config.block_filters()

    @classmethod
    def build(cls, config: ResNetConfig, rng: np.random.Generator, dtype=FLOAT32) -> "ResNet1d":
        """He-normal conv/dense weights, zero biases, BN gamma 1 / beta 0, unit running variance.

        Skip projections use the mean-preserving scheme of ``_mean_preserving_projection``.
        """
        config.validate()
        params = OrderedDict()
        for name, shape in parameter_shapes(config).items():
            if name.endswith(".skip.weight"):
                params[name] = _mean_preserving_projection(rng, shape, dtype)
            elif name.endswith(".weight"):
                fan_in = int(np.prod(shape[1:])) if len(shape) == 3 else shape[0]
                params[name] = _he_normal(rng, shape, fan_in, dtype)
            elif name.endswith((".gamma", ".running_var")):
                params[name] = np.ones(shape, dtype=dtype)
            else:
                params[name] = np.zeros(shape, dtype=dtype)
        logger.debug(
            f"Built ResNet1d: {config.n_blocks} blocks, filters {config.block_filters()}, "
            f"{sum(p.size for n, p in params.items() if not is_buffer(n))} trainable parameters"
        )
        return cls(ModelWeights(config, params))

    @classmethod
    def from_weights(cls, weights: ModelWeights, dtype=FLOAT32) -> "ResNet1d":
        params = OrderedDict((k, np.array(v, dtype=dtype)) for k, v in weights.params.items())
        return cls(ModelWeights(weights.config, params))

    @property
    def dtype(self):
        return self.params["dense.weight"].dtype

    @property
    def weights(self) -> ModelWeights:
        return ModelWeights(self.config, self.params)

    def snapshot(self) -> ModelWeights:
        return self.weights.copy()

    def trainable_names(self) -> List[str]:
        return [name for name in self.params if not is_buffer(name)]

    # -- layer sequences -------------------------------------------------

    def _stem_steps(self):
        return [("conv", "stem.conv", 1), ("bn", "stem.bn"), ("relu",)]

    def _main_steps(self, b: int):
        prefix = f"blocks.{b}"
        return [
            ("bn", f"{prefix}.bn1"), ("relu",), ("dropout",), ("conv", f"{prefix}.conv1", self.config.subsample),
            ("bn", f"{prefix}.bn2"), ("relu",), ("dropout",), ("conv", f"{prefix}.conv2", 1),
        ]

    def _skip_steps(self, b: int):
        steps = [("maxpool", self.config.subsample)]
        if f"blocks.{b}.skip.weight" in self.params:
            steps.append(("conv", f"blocks.{b}.skip", 1))
        return steps

    def _run_steps(self, steps, x, training, rng, updates, tape):
        for step in steps:
            kind = step[0]
            ctx = OpContext(training=training, rng=rng)
            if kind == "conv":
                _, name, stride = step
                x = Conv1d.forward(ctx, x, self.params[f"{name}.weight"], self.params[f"{name}.bias"], stride)
            elif kind == "bn":
                name = step[1]
                x, mean, var = BatchNorm1d.forward(
                    ctx, x, self.params[f"{name}.gamma"], self.params[f"{name}.beta"],
                    self.params[f"{name}.running_mean"], self.params[f"{name}.running_var"],
                )
                if training:
                    updates[f"{name}.running_mean"] = mean
                    updates[f"{name}.running_var"] = var
            elif kind == "relu":
                x = ReLU.forward(ctx, x)
            elif kind == "dropout":
                x = Dropout.forward(ctx, x, self.config.dropout_rate)
            elif kind == "maxpool":
                x = MaxPool1d.forward(ctx, x, step[1])
            if tape is not None:
                tape.append((step, ctx))
        return x

    def _backprop_steps(self, tape, grad, grads):
        for step, ctx in reversed(tape):
            kind = step[0]
            if kind == "conv":
                grad, gw, gb = Conv1d.backward(ctx, grad)
                grads[f"{step[1]}.weight"] = gw
                grads[f"{step[1]}.bias"] = gb
            elif kind == "bn":
                grad, gg, gbeta = BatchNorm1d.backward(ctx, grad)
                grads[f"{step[1]}.gamma"] = gg
                grads[f"{step[1]}.beta"] = gbeta
            elif kind == "relu":
                grad = ReLU.backward(ctx, grad)
            elif kind == "dropout":
                grad = Dropout.backward(ctx, grad)
            elif kind == "maxpool":
                grad = MaxPool1d.backward(ctx, grad)
        return grad

    # -- passes ----------------------------------------------------------

    def _check_batch(self, batch: Tensor) -> Tensor:
        expected = (self.config.input_leads, self.config.input_samples)
        if batch.ndim != 3 or batch.shape[1:] != expected:
            raise ShapeError(f"expected a batch of shape [B, {expected[0]}, {expected[1]}], got {batch.shape}")
        return np.ascontiguousarray(batch, dtype=self.dtype)

    def residual_block(self, x: Tensor, block_index: int, training: bool = False,
                       rng: Optional[np.random.Generator] = None) -> Tensor:
        """Apply block ``block_index`` (1-based) to x; returns main + skip."""
        updates = {}
        main = self._run_steps(self._main_steps(block_index), x, training, rng, updates, None)
        skip = self._run_steps(self._skip_steps(block_index), x, training, rng, updates, None)
        self.params.update(updates)
        return main + skip

    def stage_outputs(self, batch: Tensor, training: bool = True,
                      rng: Optional[np.random.Generator] = None) -> List[Tensor]:
        """Activations after the stem and after every residual block.

        Running statistics are left untouched even in training mode.
        """
        x = self._check_batch(batch)
        discarded = {}
        x = self._run_steps(self._stem_steps(), x, training, rng, discarded, None)
        outputs = [x]
        for b in range(1, self.config.n_blocks + 1):
            main = self._run_steps(self._main_steps(b), x, training, rng, discarded, None)
            x = main + self._run_steps(self._skip_steps(b), x, training, rng, discarded, None)
            outputs.append(x)
        return outputs

    def _forward(self, batch, training, rng, keep_tape):
        x = self._check_batch(batch)
        updates = {}
        tapes = {} if keep_tape else None

        def run(key, steps, value):
            tape = [] if keep_tape else None
            out = self._run_steps(steps, value, training, rng, updates, tape)
            if keep_tape:
                tapes[key] = tape
            return out

        x = run("stem", self._stem_steps(), x)
        for b in range(1, self.config.n_blocks + 1):
            main = run(("main", b), self._main_steps(b), x)
            skip = run(("skip", b), self._skip_steps(b), x)
            x = main + skip

        feature_shape = x.shape
        flat = x.reshape(x.shape[0], -1)
        dense_ctx, sigmoid_ctx = OpContext(training=training), OpContext(training=training)
        logits = Dense.forward(dense_ctx, flat, self.params["dense.weight"], self.params["dense.bias"])
        probs = Sigmoid.forward(sigmoid_ctx, logits)

        if training:
            self.params.update(updates)
        if keep_tape:
            tapes["head"] = (feature_shape, dense_ctx, sigmoid_ctx)
        return probs, tapes

    def forward(self, batch: Tensor, training: bool = False,
                rng: Optional[np.random.Generator] = None) -> Tensor:
        """Per-class probabilities [B, n_classes]; rows are not normalized.

        Training mode uses batch statistics, updates the BN running statistics
        and applies dropout drawn from ``rng``.
        """
        probs, _ = self._forward(batch, training, rng, keep_tape=False)
        return probs

    __call__ = forward

    def _backward(self, tapes, grad_probs: Tensor) -> Dict[str, Tensor]:
        grads = {}
        feature_shape, dense_ctx, sigmoid_ctx = tapes["head"]
        grad = Sigmoid.backward(sigmoid_ctx, grad_probs)
        grad, grads["dense.weight"], grads["dense.bias"] = Dense.backward(dense_ctx, grad)
        grad = grad.reshape(feature_shape)
        for b in range(self.config.n_blocks, 0, -1):
            grad_main = self._backprop_steps(tapes[("main", b)], grad, grads)
            grad_skip = self._backprop_steps(tapes[("skip", b)], grad, grads)
            grad = grad_main + grad_skip
        self._backprop_steps(tapes["stem"], grad, grads)
        return grads

    def loss_and_grads(self, batch: Tensor, labels: Tensor, training: bool = True,
                       rng: Optional[np.random.Generator] = None) -> Tuple[float, Dict[str, Tensor], Tensor]:
        """Mean cross-entropy of one batch, its gradient for every trainable parameter, and the probabilities."""
        probs, tapes = self._forward(batch, training, rng, keep_tape=True)
        loss_ctx = OpContext(training=training)
        loss = BCELoss.forward(loss_ctx, probs, np.asarray(labels))
        grads = self._backward(tapes, BCELoss.backward(loss_ctx, 1.0))
        return loss, grads, probs

    def loss(self, batch: Tensor, labels: Tensor, training: bool = False,
             rng: Optional[np.random.Generator] = None) -> float:
        probs = self.forward(batch, training=training, rng=rng)
        return BCELoss.forward(OpContext(), probs, np.asarray(labels))


# -- weight file ------------------------------------------------------------
#
# "RNW1" | u32 version | u32 len | JSON config (+ "decimation") | per parameter:
#   u16 name len | name | u8 rank | u32 dims[rank] | float32 LE data


def encode_weights(weights: ModelWeights) -> bytes:
    header = json.dumps({**weights.config.to_dict(), "decimation": weights.decimation}, sort_keys=True).encode("utf-8")
    parts = [WEIGHTS_MAGIC, struct.pack("<II", WEIGHTS_VERSION, len(header)), header]
    for name, value in weights.params.items():
        encoded = name.encode("utf-8")
        parts.append(struct.pack("<H", len(encoded)))
        parts.append(encoded)
        parts.append(struct.pack(f"<B{value.ndim}I", value.ndim, *value.shape))
        parts.append(np.ascontiguousarray(value, dtype="<f4").tobytes())
    return b"".join(parts)


def save_weights(model, path: str) -> None:
    """Write the model (or ModelWeights) to path atomically."""
    weights = model.weights if isinstance(model, ResNet1d) else model
    weights.validate()
    atomic_write_bytes(path, encode_weights(weights))
    logger.info(f"Saved weights to {path}")


class _Reader:
    def __init__(self, payload: bytes, source: str):
        self.payload = payload
        self.source = source
        self.offset = 0

    def take(self, n: int, what: str) -> bytes:
        end = self.offset + n
        if end > len(self.payload):
            raise TruncatedFileError(f"{self.source}: file ends inside {what}")
        chunk = self.payload[self.offset:end]
        self.offset = end
        return chunk

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))

    @property
    def exhausted(self) -> bool:
        return self.offset >= len(self.payload)


def decode_weights(payload: bytes, source: str = "<bytes>",
                   expected_config: Optional[ResNetConfig] = None) -> ModelWeights:
    reader = _Reader(payload, source)
    magic = reader.take(len(WEIGHTS_MAGIC), "magic")
    if magic != WEIGHTS_MAGIC:
        raise FileFormatError(f"{source}: bad magic {magic!r}, expected {WEIGHTS_MAGIC!r}")
    (version,) = reader.unpack("<I", "version")
    if version != WEIGHTS_VERSION:
        raise FileFormatError(f"{source}: unsupported weight format version {version}")
    (header_len,) = reader.unpack("<I", "config length")
    try:
        block = json.loads(reader.take(header_len, "config block").decode("utf-8"))
        decimation = block.pop("decimation", 1)
        config = ResNetConfig.from_dict(block)
    except (UnicodeDecodeError, json.JSONDecodeError, TypeError, AttributeError) as e:
        raise FileFormatError(f"{source}: unreadable config block: {e}") from e
    if isinstance(decimation, bool) or not isinstance(decimation, int) or not 1 <= decimation <= MAX_DECIMATION:
        raise FileFormatError(f"{source}: decimation {decimation!r} outside [1, {MAX_DECIMATION}]")

    if expected_config is not None and expected_config.architecture() != config.architecture():
        raise ConfigMismatchError(
            f"{source}: weights were built for {config.to_dict()}, model expects {expected_config.to_dict()}"
        )

    expected = parameter_shapes(config)
    params = OrderedDict()
    while not reader.exhausted:
        (name_len,) = reader.unpack("<H", "parameter name length")
        name = reader.take(name_len, "parameter name").decode("utf-8")
        (rank,) = reader.unpack("<B", f"rank of {name}")
        shape = reader.unpack(f"<{rank}I", f"shape of {name}")
        count = int(np.prod(shape)) if rank else 1
        data = np.frombuffer(reader.take(4 * count, f"data of {name}"), dtype="<f4")
        if name not in expected:
            raise ShapeError(f"{source}: unexpected parameter {name}")
        if tuple(shape) != expected[name]:
            raise ShapeError(f"{source}: {name} has shape {tuple(shape)}, config implies {expected[name]}")
        params[name] = data.reshape(shape).astype(FLOAT32)

    if len(params) < len(expected):
        missing = [name for name in expected if name not in params]
        raise TruncatedFileError(f"{source}: file ends before parameters {missing[:3]}...")
    return ModelWeights(config, OrderedDict((name, params[name]) for name in expected), decimation).validate()


def load_weights(path: str, expected_config: Optional[ResNetConfig] = None) -> ModelWeights:
    """Read an RNW1 file; pass expected_config to verify architecture compatibility."""
    with open(path, "rb") as f:
        payload = f.read()
    weights = decode_weights(payload, path, expected_config)
    logger.debug(f"Loaded {len(weights.params)} parameter tensors from {path}")
    return weights
