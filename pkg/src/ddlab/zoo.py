"""The three width-parameterized architecture families.

Every family is scaled by a single width unit k:

* SimpleFC: flatten -> dense(d -> k) -> ReLU -> dense(k -> 10). Penultimate
  feature dimension k.
* CNN5: four conv stages (3x3 conv, stride 1, padding 1 -> batch norm ->
  ReLU -> max pool) with widths [k, 2k, 4k, 8k] and pool sizes [2, 2, 2, 4],
  shrinking 32 -> 16 -> 8 -> 4 -> 1, then dense(8k -> 10). Penultimate 8k.
* ResNet18: 3x3 stem conv + batch norm + ReLU, four stages of two residual
  basic blocks with widths [k, 2k, 4k, 8k] and first-block strides
  [1, 2, 2, 2], global average pooling over the final 4x4 map, then
  dense(8k -> 10). Penultimate 8k.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .nn.layers import (
    BatchNorm2d,
    Conv2d,
    Dense,
    Flatten,
    GlobalAvgPool,
    MaxPool2d,
    ReLU,
    ResidualBlock,
)
from .nn.model import Model

FAMILIES = ("SimpleFC", "CNN5", "ResNet18")
WIDTH_RANGE = {"SimpleFC": (1, 1000), "CNN5": (1, 64), "ResNet18": (1, 64)}
CNN5_POOLS = (2, 2, 2, 4)
STAGE_MULTIPLIERS = (1, 2, 4, 8)
RESNET_STRIDES = (1, 2, 2, 2)


@dataclass(frozen=True)
class ModelSpec:
    family: str
    width_k: int
    input_shape: tuple = (1, 28, 28)
    class_count: int = 10

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}, expected one of {FAMILIES}")
        lo, hi = WIDTH_RANGE[self.family]
        if not lo <= self.width_k <= hi:
            raise ValueError(f"{self.family} width k={self.width_k} outside [{lo}, {hi}]")
        if self.class_count < 2:
            raise ValueError("class_count must be >= 2")
        object.__setattr__(self, "input_shape", tuple(int(v) for v in self.input_shape))


def _require_conv_input(spec: ModelSpec):
    if tuple(spec.input_shape) != (3, 32, 32):
        raise ValueError(f"{spec.family} expects input shape (3, 32, 32), got {spec.input_shape}")


def build_simplefc(spec: ModelSpec, seed: int = 0, dtype=np.float64) -> Model:
    if spec.family != "SimpleFC":
        raise ValueError(f"spec family is {spec.family}, not SimpleFC")
    d = math.prod(spec.input_shape)
    k = spec.width_k
    rng = np.random.default_rng(seed)
    layers = [Flatten(), Dense(d, k, rng, dtype), ReLU()]
    classifier = Dense(k, spec.class_count, rng, dtype)
    return Model(spec, layers, classifier, seed, dtype)


def build_cnn5(spec: ModelSpec, seed: int = 0, dtype=np.float64, batchnorm: bool = True) -> Model:
    if spec.family != "CNN5":
        raise ValueError(f"spec family is {spec.family}, not CNN5")
    _require_conv_input(spec)
    k = spec.width_k
    rng = np.random.default_rng(seed)
    layers = []
    in_ch = spec.input_shape[0]
    for mult, pool in zip(STAGE_MULTIPLIERS, CNN5_POOLS):
        width = mult * k
        layers.append(Conv2d(in_ch, width, 3, 1, 1, rng, dtype, bias=True))
        if batchnorm:
            layers.append(BatchNorm2d(width, dtype))
        layers.append(ReLU())
        layers.append(MaxPool2d(pool))
        in_ch = width
    layers.append(Flatten())
    classifier = Dense(8 * k, spec.class_count, rng, dtype)
    return Model(spec, layers, classifier, seed, dtype)


def build_resnet18(spec: ModelSpec, seed: int = 0, dtype=np.float64) -> Model:
    if spec.family != "ResNet18":
        raise ValueError(f"spec family is {spec.family}, not ResNet18")
    _require_conv_input(spec)
    k = spec.width_k
    rng = np.random.default_rng(seed)
    layers = [
        Conv2d(spec.input_shape[0], k, 3, 1, 1, rng, dtype, bias=False),
        BatchNorm2d(k, dtype),
        ReLU(),
    ]
    in_ch = k
    for mult, stride in zip(STAGE_MULTIPLIERS, RESNET_STRIDES):
        width = mult * k
        layers.append(ResidualBlock(in_ch, width, stride, rng, dtype))
        layers.append(ResidualBlock(width, width, 1, rng, dtype))
        in_ch = width
    layers.append(GlobalAvgPool())
    classifier = Dense(8 * k, spec.class_count, rng, dtype)
    return Model(spec, layers, classifier, seed, dtype)


def build(spec: ModelSpec, seed: int = 0, dtype=np.float64, **kwargs) -> Model:
    builder = {
        "SimpleFC": build_simplefc,
        "CNN5": build_cnn5,
        "ResNet18": build_resnet18,
    }[spec.family]
    return builder(spec, seed=seed, dtype=dtype, **kwargs)


def count_params(spec: ModelSpec) -> int:
    """Closed-form count of learnable scalars (running stats excluded)."""
    k = spec.width_k
    cls = spec.class_count
    in_ch = spec.input_shape[0]
    if spec.family == "SimpleFC":
        d = math.prod(spec.input_shape)
        return d * k + k + k * cls + cls
    if spec.family == "CNN5":
        total = 0
        prev = in_ch
        for mult in STAGE_MULTIPLIERS:
            width = mult * k
            total += prev * 9 * width + width  # conv weight + bias
            total += 2 * width                 # batch-norm scale + shift
            prev = width
        return total + 8 * k * cls + cls
    if spec.family == "ResNet18":
        total = in_ch * 9 * k + 2 * k  # stem conv + batch norm
        prev = k
        for mult, stride in zip(STAGE_MULTIPLIERS, RESNET_STRIDES):
            width = mult * k
            for block_in, block_stride in ((prev, stride), (width, 1)):
                total += block_in * 9 * width + 2 * width  # conv1 + bn1
                total += width * 9 * width + 2 * width     # conv2 + bn2
                if block_stride != 1 or block_in != width:
                    total += block_in * width + 2 * width  # 1x1 projection + bn
            prev = width
        return total + 8 * k * cls + cls
    raise ValueError(f"unknown family {spec.family!r}")
