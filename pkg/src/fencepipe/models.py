"""Model graphs: a micro U-Net for segmentation and two small classifiers.

A model is a flat list of layer specs wired by name plus a dict of named
parameter tensors. forward() replays the list, so saving weights plus the
config is enough to rebuild the exact network.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Union

import numpy as np

from . import tensor as T
from .errors import ConfigError, DimensionError, GraphError
from .tensor import Tensor


@dataclass
class UNetConfig:
    in_channels: int = 3
    out_channels: int = 1
    depth: int = 3
    base_filters: int = 8
    padding: str = "same"  # "valid" center-crops skip connections instead


@dataclass
class ClassifierConfig:
    kind: str = "cnn"  # "cnn" | "residual"
    num_classes: int = 2
    in_channels: int = 3
    input_size: int = 512
    blocks: int = 3
    base_filters: int = 8


@dataclass(frozen=True)
class LayerSpec:
    name: str
    kind: str  # conv | conv1x1 | pool | upconv | concat | add | flatten | dense
    inputs: tuple[str, ...]
    activation: str = "none"
    padding: str = "same"


@dataclass
class ModelGraph:
    kind: str  # "unet" | "cnn" | "residual"
    config: Union[UNetConfig, ClassifierConfig]
    layers: list[LayerSpec]
    params: dict[str, Tensor]
    seed: int
    epoch: int = 0


_PARAM_KINDS = {"conv", "conv1x1", "upconv", "dense"}


class _Builder:
    """Accumulates layer specs and He-initialised parameters in layer order."""

    def __init__(self, seed: int):
        self.rng = np.random.default_rng(seed)
        self.layers: list[LayerSpec] = []
        self.params: dict[str, Tensor] = {}

    def _he(self, shape: tuple[int, ...], fan_in: int) -> Tensor:
        w = self.rng.normal(0.0, math.sqrt(2.0 / fan_in), size=shape)
        return Tensor(w, requires_grad=True)

    def add(self, spec: LayerSpec, wshape=None, fan_in=None, out_ch=None) -> str:
        self.layers.append(spec)
        if spec.kind in _PARAM_KINDS:
            self.params[spec.name + ".w"] = self._he(wshape, fan_in)
            self.params[spec.name + ".b"] = Tensor(np.zeros(out_ch), requires_grad=True)
        return spec.name

    def conv(self, name, src, cin, cout, activation="relu", padding="same"):
        return self.add(
            LayerSpec(name, "conv", (src,), activation, padding),
            wshape=(3, 3, cin, cout), fan_in=9 * cin, out_ch=cout,
        )

    def conv1x1(self, name, src, cin, cout, activation="none"):
        return self.add(
            LayerSpec(name, "conv1x1", (src,), activation),
            wshape=(cin, cout), fan_in=cin, out_ch=cout,
        )

    def upconv(self, name, src, cin, cout, activation="relu"):
        return self.add(
            LayerSpec(name, "upconv", (src,), activation),
            wshape=(2, 2, cin, cout), fan_in=4 * cin, out_ch=cout,
        )

    def dense(self, name, src, n, m, activation="none"):
        return self.add(
            LayerSpec(name, "dense", (src,), activation),
            wshape=(n, m), fan_in=n, out_ch=m,
        )

    def plain(self, name, kind, *srcs, activation="none"):
        return self.add(LayerSpec(name, kind, tuple(srcs), activation))


def build_unet(config: UNetConfig, seed: int = 0) -> ModelGraph:
    """Encoder-decoder with skip connections, sigmoid map output.

    Each encoder stage is two 3x3 conv+relu then a 2x2 maxpool; the decoder
    mirrors it with a relu'd 2x2 transposed conv, channel concat with the
    stage's skip, and two conv+relu. The head is a 1x1 conv + sigmoid.
    """
    if config.depth < 1:
        raise ConfigError(f"unet depth must be >= 1, got {config.depth}")
    if config.base_filters < 1:
        raise ConfigError(f"base_filters must be >= 1, got {config.base_filters}")
    if config.padding not in ("same", "valid"):
        raise ConfigError(f"padding must be 'same' or 'valid', got {config.padding!r}")
    if config.in_channels < 1 or config.out_channels < 1:
        raise ConfigError("in_channels and out_channels must be >= 1")

    b = _Builder(seed)
    pad = config.padding
    x = "@input"
    ch = config.in_channels
    skips: list[tuple[str, int]] = []
    for s in range(config.depth):
        f = config.base_filters * (2 ** s)
        x = b.conv(f"enc{s}a", x, ch, f, padding=pad)
        x = b.conv(f"enc{s}b", x, f, f, padding=pad)
        skips.append((x, f))
        x = b.plain(f"pool{s}", "pool", x)
        ch = f
    f = config.base_filters * (2 ** config.depth)
    x = b.conv("bot_a", x, ch, f, padding=pad)
    x = b.conv("bot_b", x, f, f, padding=pad)
    ch = f
    for s in reversed(range(config.depth)):
        skip, f = skips[s]
        x = b.upconv(f"up{s}", x, ch, f)
        x = b.plain(f"cat{s}", "concat", skip, x)
        x = b.conv(f"dec{s}a", x, 2 * f, f, padding=pad)
        x = b.conv(f"dec{s}b", x, f, f, padding=pad)
        ch = f
    b.conv1x1("head", x, ch, config.out_channels, activation="sigmoid")
    return ModelGraph("unet", replace(config), b.layers, b.params, seed)


def build_classifier(config: ClassifierConfig, seed: int = 0) -> ModelGraph:
    """Build the plain CNN or the residual classifier named by config.kind."""
    if config.kind not in ("cnn", "residual"):
        raise ConfigError(f"classifier kind must be 'cnn' or 'residual', got {config.kind!r}")
    if config.num_classes < 2:
        raise ConfigError(f"num_classes must be >= 2, got {config.num_classes}")
    if config.blocks < 1:
        raise ConfigError(f"blocks must be >= 1, got {config.blocks}")
    if config.input_size < 1 or config.input_size % (2 ** config.blocks):
        raise ConfigError(
            f"input_size {config.input_size} must be divisible by 2^blocks={2 ** config.blocks}"
        )

    b = _Builder(seed)
    x = "@input"
    ch = config.in_channels
    if config.kind == "residual":
        x = b.conv("stem", x, ch, config.base_filters)
        ch = config.base_filters
    for s in range(config.blocks):
        f = config.base_filters * (2 ** s)
        if config.kind == "cnn":
            x = b.conv(f"block{s}", x, ch, f)
        else:
            x = _residual_block(b, f"res{s}", x, ch, f)
        x = b.plain(f"pool{s}", "pool", x)
        ch = f
    side = config.input_size // (2 ** config.blocks)
    x = b.plain("flat", "flatten", x)
    b.dense("head", x, side * side * ch, config.num_classes, activation="softmax")
    return ModelGraph(config.kind, replace(config), b.layers, b.params, seed)


def _residual_block(b: _Builder, name: str, src: str, cin: int, cout: int) -> str:
    """conv+relu, conv, add the block input (1x1-projected if channels change), relu."""
    mid = b.conv(f"{name}_c1", src, cin, cout)
    out = b.conv(f"{name}_c2", mid, cout, cout, activation="none")
    skip = src if cin == cout else b.conv1x1(f"{name}_proj", src, cin, cout)
    return b.plain(f"{name}_add", "add", out, skip, activation="relu")


def forward(model: ModelGraph, x) -> Tensor:
    """Run the graph on one [H,W,K] image and return the output tensor."""
    if not isinstance(x, Tensor):
        x = Tensor(x)
    if x.data.ndim != 3:
        raise DimensionError(f"forward: expected [H,W,K] input, got shape {x.data.shape}")
    cfg = model.config
    if x.data.shape[2] != cfg.in_channels:
        raise DimensionError(
            f"forward: model expects {cfg.in_channels} channels, got {x.data.shape[2]}"
        )
    if model.kind == "unet" and cfg.padding == "same":
        step = 2 ** cfg.depth
        h, w = x.data.shape[:2]
        if h % step or w % step:
            raise DimensionError(
                f"forward: unet of depth {cfg.depth} needs H,W divisible by {step}, got {h}x{w}"
            )
    if model.kind in ("cnn", "residual"):
        h, w = x.data.shape[:2]
        if (h, w) != (cfg.input_size, cfg.input_size):
            raise DimensionError(
                f"forward: classifier expects {cfg.input_size}x{cfg.input_size}, got {h}x{w}"
            )

    outs: dict[str, Tensor] = {"@input": x}
    for spec in model.layers:
        try:
            srcs = [outs[n] for n in spec.inputs]
        except KeyError as exc:
            raise GraphError(f"layer {spec.name} wires unknown input {exc}") from None
        if spec.kind == "conv":
            y = T.conv2d(srcs[0], model.params[spec.name + ".w"],
                         model.params[spec.name + ".b"], padding=spec.padding)
        elif spec.kind == "conv1x1":
            y = T.conv1x1(srcs[0], model.params[spec.name + ".w"],
                          model.params[spec.name + ".b"])
        elif spec.kind == "pool":
            y = T.maxpool2(srcs[0])
        elif spec.kind == "upconv":
            y = T.upconv2(srcs[0], model.params[spec.name + ".w"],
                          model.params[spec.name + ".b"])
        elif spec.kind == "concat":
            skip, up = srcs
            if skip.data.shape[:2] != up.data.shape[:2]:
                skip = T.crop_center(skip, up.data.shape[0], up.data.shape[1])
            y = T.concat_channels(skip, up)
        elif spec.kind == "add":
            y = T.add(srcs[0], srcs[1])
        elif spec.kind == "flatten":
            y = T.flatten(srcs[0])
        elif spec.kind == "dense":
            y = T.dense(srcs[0], model.params[spec.name + ".w"],
                        model.params[spec.name + ".b"])
        else:
            raise GraphError(f"layer {spec.name} has unknown kind {spec.kind!r}")
        if spec.activation != "none":
            y = T.activate(y, spec.activation)
        outs[spec.name] = y
    return outs[model.layers[-1].name]


def param_count(model: ModelGraph) -> int:
    """Total number of trainable scalars."""
    return sum(t.data.size for t in model.params.values())


def zero_grads(model: ModelGraph) -> None:
    for t in model.params.values():
        t.grad = None


def clone_model(model: ModelGraph) -> ModelGraph:
    """Deep-copy parameters; layer specs are immutable and shared."""
    params = {k: Tensor(t.data.copy(), requires_grad=True) for k, t in model.params.items()}
    return ModelGraph(model.kind, replace(model.config), list(model.layers),
                      params, model.seed, model.epoch)
