"""Multiscale convolutional feature extractors.

Both variants emit five levels with spatial size (H/2^i, W/2^i), i=1..5:

* ``tiny``          -- five stride-2 conv/norm/ReLU stages; the default for
                       tests and desk-scale training.
* ``resnet50-like`` -- stem plus four bottleneck stages matching standard
                       ResNet50 tap points and widths (64, 256, 512, 1024,
                       2048), so externally converted weights can be loaded
                       through the tensor archive.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .errors import ConfigurationError, InputError
from .nn import BatchNorm2d, Conv2d, Module, ModuleList
from .params import ParameterSet

IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)

TINY_CHANNELS = (8, 16, 32, 64, 128)
RESNET50_CHANNELS = (64, 256, 512, 1024, 2048)
NUM_LEVELS = 5


@dataclass
class BackboneConfig:
    variant: str = "tiny"
    stage_channels: tuple = TINY_CHANNELS
    input_size: tuple = (384, 384)

    def __post_init__(self):
        if self.variant not in ("tiny", "resnet50-like"):
            raise ConfigurationError(f"unknown backbone variant {self.variant!r}")
        self.stage_channels = tuple(int(c) for c in self.stage_channels)
        if len(self.stage_channels) != NUM_LEVELS:
            raise ConfigurationError("backbone needs exactly 5 stage channel counts")
        if any(c <= 0 for c in self.stage_channels):
            raise ConfigurationError("stage channels must be positive")
        if self.variant == "resnet50-like" and self.stage_channels != RESNET50_CHANNELS:
            raise ConfigurationError(f"resnet50-like stage channels are fixed to {RESNET50_CHANNELS}")
        h, w = self.input_size
        if h % 32 or w % 32:
            raise ConfigurationError(f"input size {self.input_size} must be divisible by 32")

    def level_sizes(self, h=None, w=None):
        h = self.input_size[0] if h is None else h
        w = self.input_size[1] if w is None else w
        return [(h // 2**i, w // 2**i) for i in range(1, NUM_LEVELS + 1)]


@dataclass
class FeaturePyramid:
    levels: list = field(default_factory=list)

    def __post_init__(self):
        if len(self.levels) != NUM_LEVELS:
            raise ConfigurationError(f"feature pyramid needs {NUM_LEVELS} levels, got {len(self.levels)}")

    def __iter__(self):
        return iter(self.levels)

    def __getitem__(self, i):
        return self.levels[i]

    def validate(self, cfg: BackboneConfig, h: int, w: int):
        for i, level in enumerate(self.levels):
            expect = (level.shape[0], cfg.stage_channels[i], h // 2 ** (i + 1), w // 2 ** (i + 1))
            if level.shape != expect:
                raise ConfigurationError(f"level {i + 1} shape {level.shape}, expected {expect}")
            if not np.all(np.isfinite(level.data)):
                raise InputError(f"level {i + 1} contains non-finite values")
        return self


class ConvNorm(Module):
    def __init__(self, cin, cout, kernel, stride, padding, rng, dtype):
        super().__init__()
        self.conv = Conv2d(cin, cout, kernel, rng, stride=stride, padding=padding, dtype=dtype)
        self.norm = BatchNorm2d(cout, dtype=dtype)

    def __call__(self, x):
        return self.norm(self.conv(x))


class TinyBackbone(Module):
    def __init__(self, cfg: BackboneConfig, rng, dtype=np.float32):
        super().__init__()
        cin = 3
        for i, cout in enumerate(cfg.stage_channels, start=1):
            setattr(self, f"stage{i}", ConvNorm(cin, cout, 3, 2, 1, rng, dtype))
            cin = cout

    def __call__(self, x: Tensor) -> list:
        levels = []
        for i in range(1, NUM_LEVELS + 1):
            x = ag.relu(getattr(self, f"stage{i}")(x))
            levels.append(x)
        return levels


class Bottleneck(Module):
    """1x1 reduce -> 3x3 (stride) -> 1x1 expand, with projection shortcut."""

    def __init__(self, cin, cout, stride, rng, dtype):
        super().__init__()
        width = cout // 4
        self.a = ConvNorm(cin, width, 1, 1, 0, rng, dtype)
        self.b = ConvNorm(width, width, 3, stride, 1, rng, dtype)
        self.c = ConvNorm(width, cout, 1, 1, 0, rng, dtype)
        self.shortcut = ConvNorm(cin, cout, 1, stride, 0, rng, dtype) if (stride != 1 or cin != cout) else None

    def __call__(self, x):
        main = self.c(ag.relu(self.b(ag.relu(self.a(x)))))
        skip = x if self.shortcut is None else self.shortcut(x)
        return ag.relu(ag.add(main, skip))


class ResNet50Backbone(Module):
    STAGE_BLOCKS = (3, 4, 6, 3)

    def __init__(self, cfg: BackboneConfig, rng, dtype=np.float32):
        super().__init__()
        self.stem = ConvNorm(3, 64, 7, 2, 3, rng, dtype)
        cin = 64
        for li, (blocks, cout) in enumerate(zip(self.STAGE_BLOCKS, RESNET50_CHANNELS[1:]), start=1):
            stage = ModuleList()
            for bi in range(blocks):
                # layer1 keeps H/4 from the maxpool; later stages halve on entry
                stride = 2 if (bi == 0 and li > 1) else 1
                stage.append(Bottleneck(cin, cout, stride, rng, dtype))
                cin = cout
            setattr(self, f"layer{li}", stage)

    def __call__(self, x: Tensor) -> list:
        x = ag.relu(self.stem(x))
        levels = [x]  # H/2
        x = ag.max_pool2d(x, 3, stride=2, padding=1)  # H/4
        for li in range(1, 5):
            for block in getattr(self, f"layer{li}"):
                x = block(x)
            levels.append(x)
        return levels


def build_backbone(cfg: BackboneConfig, rng=None, dtype=np.float32) -> Module:
    rng = rng or np.random.default_rng(0)
    if cfg.variant == "tiny":
        return TinyBackbone(cfg, rng, dtype)
    return ResNet50Backbone(cfg, rng, dtype)


def normalize_image(image: Tensor, mean=IMAGENET_MEAN, std=IMAGENET_STD) -> Tensor:
    dtype = image.data.dtype
    mean = np.asarray(mean, dtype=dtype).reshape(1, -1, 1, 1)
    std = np.asarray(std, dtype=dtype).reshape(1, -1, 1, 1)
    return ag.div(ag.sub(image, Tensor(mean)), Tensor(std))


def check_image(image: Tensor):
    if image.ndim != 4 or image.shape[1] != 3:
        raise InputError(f"expected (B, 3, H, W) image batch, got {image.shape}")
    b, _, h, w = image.shape
    if h % 32 or w % 32:
        raise InputError(f"image size ({h},{w}) must be divisible by 32")
    if not np.all(np.isfinite(image.data)):
        raise InputError("image contains non-finite values")


def backbone_forward(image, params: ParameterSet, cfg: BackboneConfig,
                     mean=IMAGENET_MEAN, std=IMAGENET_STD) -> FeaturePyramid:
    """Run a backbone described by `cfg` with weights from `params`.

    Deterministic for fixed (image, params, cfg). The image batch holds
    [0,1] values and is channel-normalized with (mean, std) first.
    """
    image = image if isinstance(image, Tensor) else Tensor(image)
    check_image(image)
    dtype = next(iter(params.tensors.values())).dtype if params.tensors else np.float32
    net = build_backbone(cfg, np.random.default_rng(0), dtype=dtype)
    net.load_state_dict(params.tensors, strict=True)
    x = normalize_image(Tensor(image.data.astype(dtype, copy=False)), mean, std)
    levels = net(x)
    b, _, h, w = image.shape
    return FeaturePyramid(levels=levels).validate(cfg, h, w)
