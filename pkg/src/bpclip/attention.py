"""Scaled dot-product attention and the dual-branch cross-scale encoder.

The information branch runs cross attention with queries from the shallower
level and keys/values from the adjacent deeper one (bottom-up); the weight
branch runs self attention per level and ends in a sigmoid, bounding its
output in (0,1) before it multiplies the information branch.
"""

from __future__ import annotations

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .errors import ConfigurationError, InputError
from .nn import LayerNorm, Linear, Mlp, Module, ModuleList

NUM_FUSED = 4  # five pyramid levels -> four cross-scale outputs


def sdp_attention(q: Tensor, k: Tensor, v: Tensor, num_heads: int = 1,
                  capture: dict | None = None) -> Tensor:
    """softmax(Q K^T / sqrt(d_k)) V per head, heads concatenated.

    q: (B, Lq, D); k, v: (B, Lk, D). Rows of the attention matrix sum to 1.
    `capture`, when given, receives the attention probabilities under
    "probs" as a (B, heads, Lq, Lk) array.
    """
    if q.ndim != 3 or k.ndim != 3 or v.ndim != 3:
        raise InputError("attention inputs must be (B, L, D)")
    b, lq, d = q.shape
    if k.shape[0] != b or v.shape[0] != b:
        raise InputError("attention inputs disagree on batch size")
    if k.shape[2] != d or v.shape[2] != d:
        raise InputError(f"attention width mismatch: q {d}, k {k.shape[2]}, v {v.shape[2]}")
    if k.shape[1] != v.shape[1]:
        raise InputError(f"key/value length mismatch: {k.shape[1]} vs {v.shape[1]}")
    if d % num_heads:
        raise ConfigurationError(f"width {d} not divisible by {num_heads} heads")
    dk = d // num_heads
    lk = k.shape[1]

    def split_heads(t, length):
        return ag.transpose(ag.reshape(t, (b, length, num_heads, dk)), (0, 2, 1, 3))

    qh = split_heads(q, lq)
    kh = split_heads(k, lk)
    vh = split_heads(v, lk)
    scores = ag.mul(ag.matmul(qh, ag.transpose(kh, (0, 1, 3, 2))), 1.0 / np.sqrt(dk))
    probs = ag.softmax(scores, axis=-1)
    if capture is not None:
        capture["probs"] = probs.data.copy()
    out = ag.matmul(probs, vh)  # (B, heads, Lq, dk)
    return ag.reshape(ag.transpose(out, (0, 2, 1, 3)), (b, lq, d))


class MscaBlock(Module):
    """Cross attention between adjacent pyramid levels, plus residual.

    direction "bottom_up": queries from the shallower level, keys/values
    from the deeper one. "top_down" (ablation) swaps the roles; the
    residual always follows the query source.
    """

    def __init__(self, d_model: int, num_heads: int, rng, dtype,
                 direction: str = "bottom_up", layer_norm: bool = False):
        super().__init__()
        if direction not in ("bottom_up", "top_down"):
            raise ConfigurationError(f"unknown MSCA direction {direction!r}")
        self.wq = Linear(d_model, d_model, rng, dtype=dtype)
        self.wk = Linear(d_model, d_model, rng, dtype=dtype)
        self.wv = Linear(d_model, d_model, rng, dtype=dtype)
        self.norm_q = LayerNorm(d_model, dtype=dtype) if layer_norm else None
        self.norm_kv = LayerNorm(d_model, dtype=dtype) if layer_norm else None
        self.num_heads = num_heads
        self.direction = direction

    @property
    def query_source(self) -> str:
        return "shallow" if self.direction == "bottom_up" else "deep"

    def __call__(self, shallow: Tensor, deep: Tensor, capture: dict | None = None) -> Tensor:
        if shallow.shape != deep.shape:
            raise InputError(f"adjacent levels must share shape: {shallow.shape} vs {deep.shape}")
        q_src, kv_src = (shallow, deep) if self.direction == "bottom_up" else (deep, shallow)
        q_in = self.norm_q(q_src) if self.norm_q else q_src
        kv_in = self.norm_kv(kv_src) if self.norm_kv else kv_src
        attended = sdp_attention(self.wq(q_in), self.wk(kv_in), self.wv(kv_in),
                                 self.num_heads, capture)
        return ag.add(attended, q_src)


class SaBlock(Module):
    """Self attention with residual."""

    def __init__(self, d_model: int, num_heads: int, rng, dtype, layer_norm: bool = False):
        super().__init__()
        self.wq = Linear(d_model, d_model, rng, dtype=dtype)
        self.wk = Linear(d_model, d_model, rng, dtype=dtype)
        self.wv = Linear(d_model, d_model, rng, dtype=dtype)
        self.norm = LayerNorm(d_model, dtype=dtype) if layer_norm else None
        self.num_heads = num_heads

    def __call__(self, g: Tensor, capture: dict | None = None) -> Tensor:
        x = self.norm(g) if self.norm else g
        return ag.add(sdp_attention(self.wq(x), self.wk(x), self.wv(x),
                                    self.num_heads, capture), g)


class FusionBlock(Module):
    """One level of the encoder: MSCA info branch x sigmoid SA weight branch."""

    def __init__(self, d_model: int, num_heads: int, rng, dtype,
                 direction: str = "bottom_up", dual_branch: bool = True,
                 layer_norm: bool = False):
        super().__init__()
        self.msca = MscaBlock(d_model, num_heads, rng, dtype, direction, layer_norm)
        self.info_mlp = Mlp(d_model, d_model, d_model, rng, dtype)
        if dual_branch:
            self.sa = SaBlock(d_model, num_heads, rng, dtype, layer_norm)
            self.weight_mlp = Mlp(d_model, d_model, d_model, rng, dtype)
        else:
            self.sa = None
            self.weight_mlp = None
        self.dual_branch = dual_branch

    def fuse(self, info_out: Tensor, weight_out: Tensor, capture: dict | None = None) -> Tensor:
        """info MLP output gated by the sigmoid-bounded weight branch."""
        if info_out.shape != weight_out.shape:
            raise InputError(f"branch outputs must share shape: {info_out.shape} vs {weight_out.shape}")
        gate = ag.sigmoid(self.weight_mlp(weight_out))
        if capture is not None:
            capture["gate"] = gate.data.copy()
        return ag.mul(self.info_mlp(info_out), gate)

    def __call__(self, g_i: Tensor, g_next: Tensor, capture: dict | None = None) -> Tensor:
        info_cap = {} if capture is not None else None
        info = self.msca(g_i, g_next, info_cap)
        if capture is not None:
            capture["info_probs"] = info_cap["probs"]
        if not self.dual_branch:
            return self.info_mlp(info)
        return self.fuse(info, self.sa(g_i), capture)


class CrossScaleEncoder(Module):
    """Stack of four fusion blocks consuming the five pooled levels."""

    def __init__(self, d_model: int, num_heads: int, rng, dtype,
                 direction: str = "bottom_up", dual_branch: bool = True,
                 layer_norm: bool = False):
        super().__init__()
        self.blocks = ModuleList(
            FusionBlock(d_model, num_heads, rng, dtype, direction, dual_branch, layer_norm)
            for _ in range(NUM_FUSED))

    def __call__(self, levels: list, capture: list | None = None) -> list:
        if len(levels) != NUM_FUSED + 1:
            raise ConfigurationError(f"encoder expects {NUM_FUSED + 1} levels, got {len(levels)}")
        fused = []
        for i, block in enumerate(self.blocks):
            cap = {} if capture is not None else None
            fused.append(block(levels[i], levels[i + 1], cap))
            if capture is not None:
                capture.append(cap)
        return fused
