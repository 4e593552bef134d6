"""Training loop: MSE loss, AdamW, cosine-annealed learning rate,
checkpointing, and SRCC/PLCC evaluation."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import archive, autograd as ag
from .autograd import Tensor
from .data import (SampleManifest, SplitSpec, augment_patch, load_image,
                   normalize_mos, resize_shorter_side, sample_rng,
                   split_dataset)
from .errors import ConfigurationError, InputError, TrainingDivergedError
from .metrics import MetricsReport, plcc, srcc
from .model import ModelConfig, QualityModel

DEFAULT_LR = {"FR": 1e-4, "NR": 3e-5}


@dataclass
class TrainConfig:
    mode: str = "FR"
    lr: float | None = None           # None -> mode default (FR 1e-4, NR 3e-5)
    weight_decay: float = 1e-5
    t_max: int = 50
    eta_min: float = 0.0
    epochs: int = 200
    batch_size: int = 16
    seed: int = 0
    crop: int = 384
    resize_shorter: int | None = None
    split_ratios: tuple | None = None  # None -> FR 6:2:2, NR 8:2
    repeat_index: int = 0
    freeze_norm: bool = True
    # ablation switches (override the model config when not None)
    dual_branch: bool | None = None
    msca_direction: str | None = None
    text_head: bool | None = None

    def __post_init__(self):
        if self.mode not in ("FR", "NR"):
            raise ConfigurationError(f"mode must be FR or NR, got {self.mode!r}")
        if self.lr is None:
            self.lr = DEFAULT_LR[self.mode]
        if self.lr <= 0:
            raise ConfigurationError("lr must be positive")
        if self.epochs < 1:
            raise ConfigurationError("epochs must be >= 1")
        if self.eta_min > self.lr:
            raise ConfigurationError("eta_min must not exceed the peak lr")
        if self.t_max < 1:
            raise ConfigurationError("t_max must be >= 1")

    def ratios(self) -> tuple:
        if self.split_ratios is not None:
            return tuple(self.split_ratios)
        return (6, 2, 2) if self.mode == "FR" else (8, 2)

    def apply_ablations(self, model_cfg: ModelConfig) -> ModelConfig:
        kw = {}
        if self.dual_branch is not None:
            kw["dual_branch"] = self.dual_branch
        if self.msca_direction is not None:
            kw["msca_direction"] = self.msca_direction
        if self.text_head is not None:
            kw["text_head"] = self.text_head
        if not kw:
            return model_cfg
        d = model_cfg.to_dict()
        d.update(kw)
        return ModelConfig.from_dict(d)


def cosine_lr(t: float, eta_max: float, eta_min: float, t_max: int) -> float:
    """eta(t) = eta_min + 0.5 (eta_max - eta_min) (1 + cos(pi t / T_max)).

    Evaluated for all t, so the rate descends over [0, T_max] and the
    cycle continues periodically across longer runs.
    """
    return eta_min + 0.5 * (eta_max - eta_min) * (1.0 + np.cos(np.pi * t / t_max))


def mse_loss(pred, target) -> Tensor:
    """Mean of squared differences over the batch."""
    pred = pred if isinstance(pred, Tensor) else Tensor(pred)
    target_arr = target.data if isinstance(target, Tensor) else np.asarray(target, dtype=pred.data.dtype)
    if pred.data.shape != target_arr.shape:
        raise InputError(f"pred/target length mismatch: {pred.data.shape} vs {target_arr.shape}")
    if pred.data.size == 0:
        raise InputError("empty vectors")
    diff = ag.sub(pred, Tensor(target_arr))
    return ag.mean(ag.mul(diff, diff))


class AdamW:
    """Decoupled weight decay Adam over (name, Tensor) pairs."""

    def __init__(self, named_params, lr: float, weight_decay: float = 1e-5,
                 betas=(0.9, 0.999), eps: float = 1e-8):
        self.named_params = list(named_params)
        self.lr = lr
        self.weight_decay = weight_decay
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.t = 0
        self._m = {n: np.zeros_like(p.data) for n, p in self.named_params}
        self._v = {n: np.zeros_like(p.data) for n, p in self.named_params}

    def step(self):
        self.t += 1
        b1c = 1.0 - self.beta1**self.t
        b2c = 1.0 - self.beta2**self.t
        for name, p in self.named_params:
            if not p.requires_grad or p.grad is None:
                continue
            g = p.grad
            m = self._m[name]
            v = self._v[name]
            m += (1.0 - self.beta1) * (g - m)
            v += (1.0 - self.beta2) * (g * g - v)
            update = (m / b1c) / (np.sqrt(v / b2c) + self.eps)
            p.data -= self.lr * (update + self.weight_decay * p.data)

    def zero_grad(self):
        for _, p in self.named_params:
            p.grad = None


@dataclass
class TrainResult:
    log: list = field(default_factory=list)
    best_checkpoint: Path | None = None
    last_checkpoint: Path | None = None
    best_val_srcc: float = float("-inf")
    steps: int = 0


def _prepare_sample(entry, mode: str, rng, train: bool, crop: int,
                    resize_shorter: int | None):
    images = [load_image(entry.image_path)]
    if mode == "FR":
        images.append(load_image(entry.reference_path))
    if resize_shorter:
        images = [resize_shorter_side(im, resize_shorter) for im in images]
    patches, meta = augment_patch(images, rng, train=train, crop=crop)
    return patches, meta


def _batched(entries, batch_size):
    for i in range(0, len(entries), batch_size):
        yield entries[i:i + batch_size]


def predict_scores(model: QualityModel, manifest: SampleManifest,
                   crop: int, batch_size: int = 8,
                   resize_shorter: int | None = None) -> np.ndarray:
    """Deterministic (center-crop, no flips) predictions for every entry."""
    scores = []
    rng = np.random.default_rng(0)  # unused in eval mode
    with ag.no_grad():
        for batch in _batched(manifest.entries, batch_size):
            imgs, refs = [], []
            for e in batch:
                patches, _ = _prepare_sample(e, model.config.mode, rng, False, crop, resize_shorter)
                imgs.append(patches[0])
                if model.config.mode == "FR":
                    refs.append(patches[1])
            image = np.stack(imgs)
            reference = np.stack(refs) if refs else None
            out = model(image, reference)
            scores.extend(out["score"].data.tolist())
    return np.asarray(scores, dtype=np.float64)


def evaluate(model: QualityModel, manifest: SampleManifest, crop: int | None = None,
             batch_size: int = 8, resize_shorter: int | None = None) -> MetricsReport:
    """SRCC/PLCC of deterministic predictions over a split."""
    crop = crop or model.config.backbone.input_size[0]
    preds = predict_scores(model, manifest, crop, batch_size, resize_shorter)
    gt = np.asarray([e.mos for e in manifest.entries], dtype=np.float64)
    return MetricsReport(srcc=srcc(preds, gt), plcc=plcc(preds, gt), count=len(gt))


def _rng_state(config: "TrainConfig", epoch: int) -> dict:
    # all RNG streams are counter-derived from (seed, epoch, sample id),
    # so (seed, epoch) is the complete resumable state
    return {"scheme": "counter-derived", "seed": config.seed, "epoch": epoch}


def save_checkpoint(model: QualityModel, path, extra: dict | None = None):
    """Tensor archive plus a JSON training-state sidecar."""
    path = Path(path)
    ps = model.parameter_set()
    archive.save_archive(ps.tensors, path)
    sidecar = {
        "format": 1,
        "model_config": model.config.to_dict(),
        "frozen": sorted(ps.frozen),
    }
    sidecar.update(extra or {})
    path.with_suffix(".json").write_text(json.dumps(sidecar, indent=2), encoding="utf-8")


def load_checkpoint(path, text_bank=None) -> QualityModel:
    path = Path(path)
    sidecar = json.loads(path.with_suffix(".json").read_text(encoding="utf-8"))
    config = ModelConfig.from_dict(sidecar["model_config"])
    model = QualityModel(config, text_bank)
    tensors = archive.load_archive(path)
    model.load_state_dict(tensors, strict=True)
    model.apply_frozen(sidecar.get("frozen", ()))
    return model


def train(config: TrainConfig, manifest: SampleManifest, model: QualityModel,
          out_dir, log_every: int = 1, splits: dict | None = None) -> TrainResult:
    """Full training run: normalize MOS, split, optimize, checkpoint.

    `splits` overrides the internal seeded split with pre-made
    {"train", "val", "test"} manifests (normalized MOS expected). The text
    bank and any frozen parameters stay byte-identical throughout; a
    non-finite loss aborts with the last good checkpoint retained.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if config.mode != model.config.mode:
        raise ConfigurationError(
            f"train mode {config.mode} != model mode {model.config.mode}")
    if config.mode != manifest.meta.mode:
        raise ConfigurationError(
            f"train mode {config.mode} != manifest mode {manifest.meta.mode}")
    if config.crop != model.config.backbone.input_size[0]:
        raise ConfigurationError(
            f"crop {config.crop} != model input size {model.config.backbone.input_size}")

    if splits is None:
        normalized = manifest if manifest.normalized else normalize_mos(manifest)
        splits = split_dataset(normalized, SplitSpec(ratios=config.ratios(),
                                                     seed=config.seed,
                                                     repeat_index=config.repeat_index))
    train_split = splits["train"]
    val_split = splits["val"] or splits["test"]

    if config.freeze_norm:
        model.freeze_norm_layers()
    frozen_before = {name: p.data.tobytes()
                     for name, p in model.named_parameters() if not p.requires_grad}
    buffers_before = {name: b.tobytes() for name, b in model.named_buffers()}
    bank_before = model.text_bank.embeddings.tobytes() if model.text_bank is not None else None

    optimizer = AdamW(model.trainable_parameters(), lr=config.lr,
                      weight_decay=config.weight_decay)
    result = TrainResult()
    log_path = out_dir / "train_log.jsonl"
    best_path = out_dir / "checkpoint_best.bpta"
    last_path = out_dir / "checkpoint_last.bpta"

    with open(log_path, "w", encoding="utf-8") as log_file:
        for epoch in range(config.epochs):
            lr = cosine_lr(epoch, config.lr, config.eta_min, config.t_max)
            optimizer.lr = lr
            shuffle_rng = np.random.default_rng(
                np.random.SeedSequence([config.seed, 1000 + epoch]))
            order = shuffle_rng.permutation(len(train_split.entries))
            entries = [train_split.entries[i] for i in order]
            epoch_losses = []
            for batch in _batched(entries, config.batch_size):
                imgs, refs, targets = [], [], []
                for e in batch:
                    rng = sample_rng(config.seed, e.id, epoch)
                    patches, _ = _prepare_sample(e, config.mode, rng, True,
                                                 config.crop, config.resize_shorter)
                    imgs.append(patches[0])
                    if config.mode == "FR":
                        refs.append(patches[1])
                    targets.append(e.mos)
                image = np.stack(imgs)
                reference = np.stack(refs) if refs else None
                out = model(image, reference)
                loss = mse_loss(out["score"], np.asarray(targets, dtype=model.config.np_dtype))
                loss_val = loss.item()
                if not np.isfinite(loss_val):
                    save_checkpoint(model, last_path, {"epoch": epoch, "aborted": True})
                    raise TrainingDivergedError(f"non-finite loss at epoch {epoch}")
                model.zero_grad()
                loss.backward()
                optimizer.step()
                result.steps += 1
                epoch_losses.append(loss_val)

            current = dict(model.named_parameters())
            for name, blob in frozen_before.items():
                if current[name].data.tobytes() != blob:
                    raise AssertionError(f"frozen parameter {name} was mutated")
            for name, b in model.named_buffers():
                if buffers_before[name] != b.tobytes():
                    raise AssertionError(f"buffer {name} was mutated")
            if bank_before is not None and model.text_bank.embeddings.tobytes() != bank_before:
                raise AssertionError("text bank was mutated during training")

            record = {"epoch": epoch, "loss": float(np.mean(epoch_losses)), "lr": lr}
            if (epoch + 1) % log_every == 0 or epoch == config.epochs - 1:
                report = evaluate(model, val_split, crop=config.crop,
                                  resize_shorter=config.resize_shorter)
                record["val_srcc"] = report.srcc
                record["val_plcc"] = report.plcc
                if report.srcc > result.best_val_srcc:
                    result.best_val_srcc = report.srcc
                    save_checkpoint(model, best_path,
                                    {"epoch": epoch, "step": result.steps,
                                     "scheduler": {"t": epoch},
                                     "rng_state": _rng_state(config, epoch),
                                     "val_srcc": report.srcc, "val_plcc": report.plcc})
                    result.best_checkpoint = best_path
            result.log.append(record)
            log_file.write(json.dumps(record) + "\n")

    save_checkpoint(model, last_path,
                    {"epoch": config.epochs - 1, "step": result.steps,
                     "scheduler": {"t": config.epochs - 1},
                     "rng_state": _rng_state(config, config.epochs - 1)})
    result.last_checkpoint = last_path
    return result
