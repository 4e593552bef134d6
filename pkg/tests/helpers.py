"""Shared test utilities: scalar-loop reference ops and tiny fixtures."""

import json
from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage

from bpclip.backbone import BackboneConfig
from bpclip.clip_head import TextBank, default_inventory
from bpclip.model import ModelConfig


def loop_conv2d(x, w, b, stride=1, padding=0):
    """Direct quadruple-loop 2-D cross-correlation (oracle)."""
    bs, cin, h, wdt = x.shape
    cout, _, kh, kw = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    oh = (h + 2 * padding - kh) // stride + 1
    ow = (wdt + 2 * padding - kw) // stride + 1
    out = np.zeros((bs, cout, oh, ow), dtype=x.dtype)
    for bi in range(bs):
        for co in range(cout):
            for oi in range(oh):
                for oj in range(ow):
                    acc = 0.0
                    for ci in range(cin):
                        for ki in range(kh):
                            for kj in range(kw):
                                acc += xp[bi, ci, oi * stride + ki, oj * stride + kj] * w[co, ci, ki, kj]
                    out[bi, co, oi, oj] = acc + (b[co] if b is not None else 0.0)
    return out


def loop_attention(q, k, v):
    """Scalar-loop single-head scaled dot-product attention (oracle)."""
    bs, lq, d = q.shape
    lk = k.shape[1]
    out = np.zeros((bs, lq, d), dtype=np.float64)
    for bi in range(bs):
        for i in range(lq):
            scores = np.zeros(lk)
            for j in range(lk):
                s = 0.0
                for c in range(d):
                    s += q[bi, i, c] * k[bi, j, c]
                scores[j] = s / np.sqrt(d)
            e = np.exp(scores - scores.max())
            probs = e / e.sum()
            for c in range(d):
                out[bi, i, c] = sum(probs[j] * v[bi, j, c] for j in range(lk))
    return out


def unit_rows(rng, rows, dim):
    m = rng.normal(size=(rows, dim))
    return m / np.linalg.norm(m, axis=1, keepdims=True)


def make_bank(d_text=64, rng=None, dtype=np.float32) -> TextBank:
    rng = rng or np.random.default_rng(2024)
    inv = default_inventory()
    dims = tuple((d["name"], tuple(d["adjectives"])) for d in inv["dimensions"])
    adjs = tuple(a for _, aa in dims for a in aa)
    return TextBank(embeddings=unit_rows(rng, 40, d_text).astype(dtype),
                    adjectives=adjs, dimensions=dims,
                    template=inv["template"], model_id="test-bank").validate()


def smooth_field(rng, size):
    """Low-frequency random RGB image in [0.15, 0.85]."""
    coarse = rng.uniform(size=(3, size // 8, size // 8))
    up = ndimage.zoom(coarse, (1, 8, 8), order=1)
    lo, hi = up.min(), up.max()
    return (0.15 + 0.7 * (up - lo) / (hi - lo)).astype(np.float32)


def distort(image, level, kind, rng):
    """Blur or noise of increasing strength; level 0 is the identity."""
    if level == 0:
        return image.copy()
    if kind == "blur":
        return ndimage.gaussian_filter(image, sigma=(0, 0.9 * level, 0.9 * level)).astype(np.float32)
    noisy = image + rng.normal(0, 0.035 * level, size=image.shape)
    return np.clip(noisy, 0.0, 1.0).astype(np.float32)


def save_png(arr, path):
    Image.fromarray((np.clip(arr, 0, 1).transpose(1, 2, 0) * 255).round().astype(np.uint8)).save(path)


def make_synthetic_fr_set(root, n_refs=4, n_levels=4, size=64, seed=0):
    """Reference images plus blur/noise ladders with monotone MOS.

    Writes PNGs under `root` and returns the path of a JSON manifest whose
    raw MOS is (n_levels - level), i.e. strictly decreasing with distortion
    strength.
    """
    root = Path(root)
    (root / "ref").mkdir(parents=True, exist_ok=True)
    (root / "dist").mkdir(exist_ok=True)
    rng = np.random.default_rng(seed)
    entries = []
    for r in range(n_refs):
        ref = smooth_field(rng, size)
        ref_rel = f"ref/r{r}.png"
        save_png(ref, root / ref_rel)
        kind = "blur" if r % 2 == 0 else "noise"
        for level in range(n_levels):
            img = distort(ref, level, kind, rng)
            rel = f"dist/r{r}_l{level}.png"
            save_png(img, root / rel)
            entries.append({
                "id": f"r{r}l{level}", "image_path": rel, "reference_path": ref_rel,
                "mos": float(n_levels - level), "group_key": f"r{r}",
            })
    manifest = {
        "meta": {"mos_min": 1.0, "mos_max": float(n_levels),
                 "mos_polarity": "higher_better", "mode": "FR"},
        "entries": entries,
    }
    path = root / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2))
    return path


def tiny_config(mode="FR", input_size=(64, 64), dtype="f32", d_text=64, **kw) -> ModelConfig:
    defaults = dict(
        mode=mode,
        backbone=BackboneConfig(variant="tiny", stage_channels=(4, 8, 16, 32, 64),
                                input_size=input_size),
        d_model=32, num_heads=4, d_text=d_text, tau=10.0,
        regress_hidden=16, dtype=dtype,
        norm_mean=(0.0, 0.0, 0.0), norm_std=(1.0, 1.0, 1.0),
    )
    defaults.update(kw)
    return ModelConfig(**defaults)
