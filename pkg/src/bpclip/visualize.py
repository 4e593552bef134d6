"""Attention heatmap export: raw matrices plus rendered PNG overlays.

Info-branch maps are the attention probabilities averaged over heads and
queries (a distribution over key positions, summing to 1); weight-branch
maps are the mean sigmoid gate per position (values in (0,1)). Rendering
upsamples bilinearly to the input size and applies the viridis colormap.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib
import numpy as np
from PIL import Image

from . import archive, autograd as ag
from .errors import InputError
from .model import QualityModel

BRANCHES = ("info", "weight")
COLORMAP = "viridis"


def attention_maps(model: QualityModel, image, reference=None) -> dict:
    """All eight maps for one input: {(level, branch): (H5, W5) f32 array}."""
    capture = []
    with ag.no_grad():
        model(image, reference, capture=capture)
    h5, w5 = (s // 32 for s in model.config.backbone.input_size)
    maps = {}
    for i, cap in enumerate(capture, start=1):
        # (B, heads, Lq, Lk) -> distribution over key positions
        info = cap["info_probs"].mean(axis=(0, 1, 2)).astype(np.float32)
        maps[(i, "info")] = info.reshape(h5, w5)
        if "gate" in cap:
            # (B, L, D) -> mean gate value per position
            gate = cap["gate"].mean(axis=(0, 2)).astype(np.float32)
            maps[(i, "weight")] = gate.reshape(h5, w5)
    return maps


def render_heatmap(matrix: np.ndarray, out_size, path) -> None:
    """Bilinear upsample to (H, W) and write a viridis-colored PNG."""
    lo, hi = float(matrix.min()), float(matrix.max())
    normed = np.zeros_like(matrix) if hi == lo else (matrix - lo) / (hi - lo)
    h, w = out_size
    up = Image.fromarray((normed * 255).astype(np.uint8)).resize(
        (w, h), resample=Image.Resampling.BILINEAR)
    cmap = matplotlib.colormaps[COLORMAP]
    rgba = cmap(np.asarray(up, dtype=np.float32) / 255.0)
    Image.fromarray((rgba[..., :3] * 255).round().astype(np.uint8)).save(path)


def export_attention_map(level: int, branch: str, model: QualityModel,
                         image, reference=None, out_dir=".") -> tuple:
    """One (level, branch) map: returns (matrix, png_path)."""
    if branch not in BRANCHES:
        raise InputError(f"branch must be one of {BRANCHES}, got {branch!r}")
    if not 1 <= level <= 4:
        raise InputError(f"level must be in 1..4, got {level}")
    maps = attention_maps(model, image, reference)
    if (level, branch) not in maps:
        raise InputError(f"{branch} map unavailable for level {level} "
                         "(single-branch model has no weight maps)")
    matrix = maps[(level, branch)]
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    png = out_dir / f"attn_{branch}_level{level}.png"
    render_heatmap(matrix, model.config.backbone.input_size, png)
    return matrix, png


def export_all_maps(model: QualityModel, image, reference=None, out_dir=".") -> dict:
    """Write the 8 per-level/branch PNGs plus one raw-matrix archive."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    maps = attention_maps(model, image, reference)
    written = {}
    for (level, branch), matrix in sorted(maps.items()):
        png = out_dir / f"attn_{branch}_level{level}.png"
        render_heatmap(matrix, model.config.backbone.input_size, png)
        written[(level, branch)] = png
    archive.save_archive(
        {f"{branch}.level{level}": m for (level, branch), m in maps.items()},
        out_dir / "attention_maps.bpta")
    return written
