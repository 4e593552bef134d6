"""Dataset manifests, MOS normalization, splits, and patch augmentation.

Manifests come as JSON ({"meta": ..., "entries": [...]}) or CSV with columns
id,image_path,reference_path,mos,group_key plus a `<stem>.meta.json` sidecar.
Paths are stored relative and resolved against BPCLIP_DATA_ROOT. FR splits
partition reference groups, never individual entries, and FR augmentation
applies the identical crop window and flips to both images of a pair.
"""

from __future__ import annotations

import csv
import hashlib
import json
import os
import warnings
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import (DegenerateRangeError, InputError, ManifestError,
                     SplitError)

CSV_COLUMNS = ("id", "image_path", "reference_path", "mos", "group_key")
DATA_ROOT_ENV = "BPCLIP_DATA_ROOT"
DEFAULT_CROP = 384


@dataclass(frozen=True)
class ManifestEntry:
    id: str
    image_path: str
    mos: float
    reference_path: str | None = None
    group_key: str = ""


@dataclass(frozen=True)
class DatasetMeta:
    mos_min: float
    mos_max: float
    mos_polarity: str = "higher_better"
    mode: str = "FR"


@dataclass
class SampleManifest:
    entries: list
    meta: DatasetMeta
    normalized: bool = False

    def __len__(self):
        return len(self.entries)

    def group_keys(self):
        return sorted({e.group_key for e in self.entries})

    def validate(self, check_files: bool = False) -> "SampleManifest":
        if self.meta.mode not in ("FR", "NR"):
            raise ManifestError(f"mode must be FR or NR, got {self.meta.mode!r}")
        if self.meta.mos_polarity not in ("higher_better", "lower_better"):
            raise ManifestError(f"bad mos_polarity {self.meta.mos_polarity!r}")
        if not self.meta.mos_min < self.meta.mos_max:
            raise ManifestError(
                f"mos_min {self.meta.mos_min} must be < mos_max {self.meta.mos_max}")
        seen = set()
        for e in self.entries:
            if e.id in seen:
                raise ManifestError(f"duplicate id {e.id!r}")
            seen.add(e.id)
            if self.meta.mode == "FR":
                if not e.reference_path:
                    raise ManifestError(f"FR entry {e.id!r} lacks a reference_path")
                if not e.group_key:
                    raise ManifestError(f"FR entry {e.id!r} lacks a group_key")
            else:
                if e.reference_path:
                    raise ManifestError(f"NR entry {e.id!r} carries a reference_path")
            if check_files:
                for p in (e.image_path, e.reference_path):
                    if p and not resolve_path(p).exists():
                        raise ManifestError(f"entry {e.id!r}: missing file {p}")
        return self


_DEFAULT_ROOT = Path(".")


def set_default_root(path) -> None:
    """Fallback prefix when BPCLIP_DATA_ROOT is unset (e.g. the manifest dir)."""
    global _DEFAULT_ROOT
    _DEFAULT_ROOT = Path(path)


def data_root() -> Path:
    env = os.environ.get(DATA_ROOT_ENV)
    return Path(env) if env else _DEFAULT_ROOT


def resolve_path(rel) -> Path:
    p = Path(rel)
    return p if p.is_absolute() else data_root() / p


def _entry_from_record(rec: dict, source: str) -> ManifestEntry:
    for col in ("id", "image_path", "mos"):
        if rec.get(col) in (None, ""):
            raise ManifestError(f"{source}: missing column/value {col!r}")
    try:
        mos = float(rec["mos"])
    except ValueError as e:
        raise ManifestError(f"{source}: bad mos for id {rec['id']!r}: {e}") from e
    ref = rec.get("reference_path") or None
    group = rec.get("group_key") or (ref or "")
    return ManifestEntry(id=str(rec["id"]), image_path=str(rec["image_path"]),
                         mos=mos, reference_path=ref, group_key=group)


def _meta_from_dict(d: dict, source: str) -> DatasetMeta:
    try:
        return DatasetMeta(mos_min=float(d["mos_min"]), mos_max=float(d["mos_max"]),
                           mos_polarity=d.get("mos_polarity", "higher_better"),
                           mode=d.get("mode", "FR"))
    except KeyError as e:
        raise ManifestError(f"{source}: meta lacks {e}") from e


def load_manifest(path, check_files: bool = False) -> SampleManifest:
    """Load and validate a JSON or CSV(+meta sidecar) manifest."""
    path = Path(path)
    if not path.exists():
        raise ManifestError(f"no such manifest: {path}")
    if path.suffix.lower() == ".json":
        doc = json.loads(path.read_text(encoding="utf-8"))
        if "meta" not in doc or "entries" not in doc:
            raise ManifestError(f"{path}: JSON manifest needs 'meta' and 'entries'")
        meta = _meta_from_dict(doc["meta"], str(path))
        entries = [_entry_from_record(rec, str(path)) for rec in doc["entries"]]
    elif path.suffix.lower() == ".csv":
        side = path.with_suffix(".meta.json")
        if not side.exists():
            raise ManifestError(f"{path}: missing meta sidecar {side.name}")
        meta = _meta_from_dict(json.loads(side.read_text(encoding="utf-8")), str(side))
        with open(path, newline="", encoding="utf-8") as f:
            reader = csv.DictReader(f)
            missing = set(("id", "image_path", "mos")) - set(reader.fieldnames or ())
            if missing:
                raise ManifestError(f"{path}: missing columns {sorted(missing)}")
            entries = [_entry_from_record(rec, str(path)) for rec in reader]
    else:
        raise ManifestError(f"{path}: manifests are .json or .csv")
    set_default_root(path.parent)
    return SampleManifest(entries=entries, meta=meta).validate(check_files=check_files)


def save_manifest_json(manifest: SampleManifest, path) -> None:
    doc = {
        "meta": {
            "mos_min": manifest.meta.mos_min,
            "mos_max": manifest.meta.mos_max,
            "mos_polarity": manifest.meta.mos_polarity,
            "mode": manifest.meta.mode,
        },
        "entries": [
            {"id": e.id, "image_path": e.image_path,
             "reference_path": e.reference_path or "",
             "mos": e.mos, "group_key": e.group_key}
            for e in manifest.entries
        ],
    }
    Path(path).write_text(json.dumps(doc, indent=2), encoding="utf-8")


def normalize_mos(manifest: SampleManifest) -> SampleManifest:
    """Min-max normalize MOS to [0,1]; flip lower_better so higher is better."""
    lo, hi = manifest.meta.mos_min, manifest.meta.mos_max
    if not lo < hi:
        raise DegenerateRangeError(f"MOS range [{lo}, {hi}] has no spread")
    flip = manifest.meta.mos_polarity == "lower_better"
    entries = []
    for e in manifest.entries:
        v = (e.mos - lo) / (hi - lo)
        entries.append(replace(e, mos=1.0 - v if flip else v))
    meta = DatasetMeta(mos_min=0.0, mos_max=1.0, mos_polarity="higher_better",
                       mode=manifest.meta.mode)
    return SampleManifest(entries=entries, meta=meta, normalized=True)


@dataclass(frozen=True)
class SplitSpec:
    ratios: tuple = (6, 2, 2)
    seed: int = 0
    repeat_index: int = 0

    def __post_init__(self):
        if len(self.ratios) not in (2, 3) or any(r <= 0 for r in self.ratios):
            raise SplitError(f"ratios must be 2 or 3 positive numbers, got {self.ratios}")
        if not 0 <= self.repeat_index < 10:
            raise SplitError(f"repeat_index must be in [0, 10), got {self.repeat_index}")

    def fractions(self):
        total = float(sum(self.ratios))
        return tuple(r / total for r in self.ratios)


def _partition_counts(n: int, fractions) -> list:
    """Largest-remainder apportionment of n items over the fractions."""
    exact = [f * n for f in fractions]
    counts = [int(np.floor(x)) for x in exact]
    remainder = n - sum(counts)
    order = sorted(range(len(fractions)), key=lambda i: (-(exact[i] - counts[i]), i))
    for i in order[:remainder]:
        counts[i] += 1
    if any(c == 0 for c in counts):
        raise SplitError(f"{n} units cannot fill ratios {fractions}")
    return counts


def split_dataset(manifest: SampleManifest, spec: SplitSpec) -> dict:
    """Deterministic split; FR partitions reference groups, NR entries.

    Returns {"train", "val", "test"}; "val" is None for 2-way ratios.
    """
    rng = np.random.default_rng(np.random.SeedSequence([spec.seed, spec.repeat_index]))
    fractions = spec.fractions()
    if manifest.meta.mode == "FR":
        units = manifest.group_keys()
    else:
        units = sorted(e.id for e in manifest.entries)
    if len(units) < len(fractions):
        raise SplitError(f"{len(units)} units cannot fill {len(fractions)} splits")
    counts = _partition_counts(len(units), fractions)
    perm = [units[i] for i in rng.permutation(len(units))]
    buckets, start = [], 0
    for c in counts:
        buckets.append(set(perm[start:start + c]))
        start += c
    if manifest.meta.mode == "FR":
        def member(e, bucket):
            return e.group_key in bucket
    else:
        def member(e, bucket):
            return e.id in bucket

    def pick(bucket):
        return SampleManifest(
            entries=[e for e in manifest.entries if member(e, bucket)],
            meta=manifest.meta, normalized=manifest.normalized)

    if len(fractions) == 3:
        return {"train": pick(buckets[0]), "val": pick(buckets[1]), "test": pick(buckets[2])}
    return {"train": pick(buckets[0]), "val": None, "test": pick(buckets[1])}


# -- images ----------------------------------------------------------------------

LOSSLESS_SUFFIXES = {".png", ".bmp"}


def load_image(path) -> np.ndarray:
    """Decode to (3, H, W) float32 in [0,1]; JPEG accepted with a warning."""
    path = resolve_path(path)
    if not path.exists():
        raise InputError(f"no such image: {path}")
    if path.suffix.lower() not in LOSSLESS_SUFFIXES:
        warnings.warn(
            f"{path.name}: lossy/foreign format; decoder variance may perturb "
            "scores at the 1e-3 level", stacklevel=2)
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0
    return np.ascontiguousarray(arr.transpose(2, 0, 1))


def resize_shorter_side(image: np.ndarray, target: int = 448) -> np.ndarray:
    """Aspect-preserving bilinear resize so min(H, W) == target."""
    if target < 1:
        raise InputError(f"target must be >= 1, got {target}")
    if image.ndim != 3 or image.shape[0] != 3 or min(image.shape[1:]) == 0:
        raise InputError(f"expected non-degenerate (3, H, W) image, got {image.shape}")
    _, h, w = image.shape
    if min(h, w) == target:
        return image
    scale = target / min(h, w)
    # round half away from zero
    new_h = target if h <= w else int(np.floor(h * scale + 0.5))
    new_w = target if w <= h else int(np.floor(w * scale + 0.5))
    pil = Image.fromarray((np.clip(image, 0, 1).transpose(1, 2, 0) * 255.0).round().astype(np.uint8))
    out = pil.resize((new_w, new_h), resample=Image.Resampling.BILINEAR)
    return np.ascontiguousarray(np.asarray(out, dtype=np.float32).transpose(2, 0, 1) / 255.0)


@dataclass(frozen=True)
class AugmentMeta:
    top: int
    left: int
    hflip: bool
    vflip: bool


def sample_rng(seed: int, sample_id: str, epoch: int = 0) -> np.random.Generator:
    """Per-sample RNG stream, order-independent across loader workers."""
    digest = hashlib.sha256(sample_id.encode("utf-8")).digest()
    key = int.from_bytes(digest[:8], "little")
    return np.random.default_rng(np.random.SeedSequence([seed, epoch, key]))


def augment_patch(images, rng: np.random.Generator, train: bool,
                  crop: int = DEFAULT_CROP):
    """Crop (+ flips when training) every image in `images` identically.

    Training draws a random crop window and independent horizontal/vertical
    flips (p=0.5 each); evaluation center-crops with no flips. Returns
    (patches, AugmentMeta).
    """
    images = list(images)
    _, h, w = images[0].shape
    for im in images:
        if im.shape != images[0].shape:
            raise InputError(f"paired images must share shape: {im.shape} vs {images[0].shape}")
    if h < crop or w < crop:
        raise InputError(f"image ({h}x{w}) smaller than crop {crop}")
    if train:
        top = int(rng.integers(0, h - crop + 1))
        left = int(rng.integers(0, w - crop + 1))
        hflip = bool(rng.random() < 0.5)
        vflip = bool(rng.random() < 0.5)
    else:
        top, left = (h - crop) // 2, (w - crop) // 2
        hflip = vflip = False
    meta = AugmentMeta(top=top, left=left, hflip=hflip, vflip=vflip)
    out = []
    for im in images:
        patch = im[:, top:top + crop, left:left + crop]
        if hflip:
            patch = patch[:, :, ::-1]
        if vflip:
            patch = patch[:, ::-1, :]
        out.append(np.ascontiguousarray(patch))
    return out, meta
