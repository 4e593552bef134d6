"""Gated local pooling: sigmoid-masked fusion plus window pooling.

In FR mode each level fuses distorted/reference features through a mask
computed from their absolute difference; in NR mode the mask gates a 1x1
channel map of the single image's features. All five levels are then
window-averaged down to the coarsest grid and projected to a common width,
yielding sequences of shape (B, H5*W5, D).
"""

from __future__ import annotations

from . import autograd as ag
from .autograd import Tensor
from .errors import ConfigurationError, InputError
from .nn import Conv2d, Linear, Module

NUM_LEVELS = 5


class GateConv(Module):
    """Bottleneck mask head: 3x3 reduce -> ReLU -> 1x1 to a single channel."""

    def __init__(self, channels: int, rng, dtype):
        super().__init__()
        hidden = max(channels // 4, 1)
        self.conv1 = Conv2d(channels, hidden, 3, rng, padding=1, dtype=dtype)
        self.conv2 = Conv2d(hidden, 1, 1, rng, dtype=dtype)

    def __call__(self, x: Tensor) -> Tensor:
        return self.conv2(ag.relu(self.conv1(x)))


class GlpLevel(Module):
    def __init__(self, channels: int, level: int, d_model: int, mode: str, rng, dtype):
        super().__init__()
        self.gate = GateConv(channels, rng, dtype)
        if mode == "NR":
            self.value = Conv2d(channels, channels, 1, rng, dtype=dtype)
        else:
            self.value = None
        fused_channels = 3 * channels if mode == "FR" else channels
        self.reduce = Linear(fused_channels, d_model, rng, dtype=dtype)
        self.mode = mode
        self.window = 2 ** (NUM_LEVELS - level)

    def fuse_fr(self, fd: Tensor, fr: Tensor) -> Tensor:
        """mask(|fd-fr|) * (fd ++ fr ++ |fd-fr|); output (B, 3C, H, W)."""
        if self.mode != "FR":
            raise ConfigurationError("fuse_fr called on an NR-configured level")
        if fd.shape != fr.shape:
            raise InputError(f"distorted/reference shape mismatch: {fd.shape} vs {fr.shape}")
        diff = ag.abs_(ag.sub(fd, fr))
        mask = ag.sigmoid(self.gate(diff))  # (B, 1, H, W), values in (0,1)
        return ag.mul(mask, ag.concat([fd, fr, diff], axis=1))

    def fuse_nr(self, f: Tensor) -> Tensor:
        """mask(f) * (1x1 channel map of f); output (B, C, H, W)."""
        if self.mode != "NR" or self.value is None:
            raise ConfigurationError("fuse_nr called on an FR-configured level")
        mask = ag.sigmoid(self.gate(f))
        return ag.mul(mask, self.value(f))

    def mask_of(self, x: Tensor) -> Tensor:
        """The sigmoid gate map for `x` (FR: pass the abs-difference)."""
        return ag.sigmoid(self.gate(x))

    def pool_project(self, fused: Tensor) -> Tensor:
        """Window-average to the coarsest grid, project channels, flatten."""
        b, c, h, w = fused.shape
        if h % self.window or w % self.window:
            raise InputError(f"spatial dims ({h},{w}) not divisible by window {self.window}")
        pooled = ag.avg_pool2d(fused, self.window) if self.window > 1 else fused
        _, _, h5, w5 = pooled.shape
        seq = ag.reshape(ag.transpose(pooled, (0, 2, 3, 1)), (b, h5 * w5, c))
        return self.reduce(seq)


class GatedLocalPooling(Module):
    """Per-level gated fusion + pooling, plus one shared positional encoding."""

    def __init__(self, stage_channels, d_model: int, mode: str, seq_len: int, rng, dtype):
        super().__init__()
        if mode not in ("FR", "NR"):
            raise ConfigurationError(f"mode must be FR or NR, got {mode!r}")
        self.mode = mode
        for i, c in enumerate(stage_channels, start=1):
            setattr(self, f"level{i}", GlpLevel(c, i, d_model, mode, rng, dtype))
        # one parameter shared by all five levels
        self.pos_embedding = Tensor(
            rng.normal(0.0, 0.02, size=(seq_len, d_model)).astype(dtype), requires_grad=True)

    def level(self, i: int) -> GlpLevel:
        return getattr(self, f"level{i}")

    def add_positional(self, g: Tensor) -> Tensor:
        if g.shape[1:] != self.pos_embedding.shape:
            raise ConfigurationError(
                f"positional encoding {self.pos_embedding.shape} does not match features {g.shape}")
        return ag.add(g, self.pos_embedding)

    def __call__(self, pyramid, reference_pyramid=None) -> list:
        """Pyramid(s) -> five (B, H5*W5, D) sequences with positions added."""
        out = []
        for i in range(1, NUM_LEVELS + 1):
            lvl = self.level(i)
            if self.mode == "FR":
                if reference_pyramid is None:
                    raise InputError("FR mode requires a reference pyramid")
                fused = lvl.fuse_fr(pyramid[i - 1], reference_pyramid[i - 1])
            else:
                if reference_pyramid is not None:
                    raise InputError("NR mode forbids a reference pyramid")
                fused = lvl.fuse_nr(pyramid[i - 1])
            out.append(self.add_positional(lvl.pool_project(fused)))
        return out
