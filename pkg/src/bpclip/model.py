"""Full quality model: backbone -> GLP -> cross-scale encoder -> score head."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .attention import CrossScaleEncoder
from .autograd import Tensor
from .backbone import (IMAGENET_MEAN, IMAGENET_STD, BackboneConfig,
                       build_backbone, check_image, normalize_image)
from .clip_head import ScoreHead, TextBank
from .errors import ConfigurationError, InputError
from .glp import GatedLocalPooling
from .nn import Module
from .params import ParameterSet, is_norm_entry

_DTYPES = {"f32": np.float32, "f64": np.float64}


@dataclass
class ModelConfig:
    mode: str = "FR"
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    d_model: int = 256
    num_heads: int = 4
    d_text: int = 512
    tau: float = 100.0
    learn_tau: bool = False
    regress_hidden: int = 64
    dual_branch: bool = True
    msca_direction: str = "bottom_up"
    text_head: bool = True
    layer_norm: bool = False
    norm_mean: tuple = IMAGENET_MEAN
    norm_std: tuple = IMAGENET_STD
    dtype: str = "f32"
    seed: int = 0

    def __post_init__(self):
        if self.mode not in ("FR", "NR"):
            raise ConfigurationError(f"mode must be FR or NR, got {self.mode!r}")
        if self.dtype not in _DTYPES:
            raise ConfigurationError(f"dtype must be f32 or f64, got {self.dtype!r}")
        if self.d_model % self.num_heads:
            raise ConfigurationError(f"d_model {self.d_model} not divisible by {self.num_heads} heads")
        if self.tau < 0:
            raise ConfigurationError("tau must be non-negative")
        self.norm_mean = tuple(float(v) for v in self.norm_mean)
        self.norm_std = tuple(float(v) for v in self.norm_std)

    @property
    def np_dtype(self):
        return _DTYPES[self.dtype]

    @property
    def seq_len(self) -> int:
        h, w = self.backbone.input_size
        return (h // 32) * (w // 32)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["backbone"] = {
            "variant": self.backbone.variant,
            "stage_channels": list(self.backbone.stage_channels),
            "input_size": list(self.backbone.input_size),
        }
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        bb = d.pop("backbone", {})
        cfg = cls(backbone=BackboneConfig(
            variant=bb.get("variant", "tiny"),
            stage_channels=tuple(bb.get("stage_channels", (8, 16, 32, 64, 128))),
            input_size=tuple(bb.get("input_size", (384, 384))),
        ), **d)
        return cfg


class QualityModel(Module):
    """End-to-end FR/NR quality scorer over a fixed input size."""

    def __init__(self, config: ModelConfig, text_bank: TextBank | None = None):
        super().__init__()
        self.config = config
        dtype = config.np_dtype
        rng = np.random.default_rng(config.seed)
        self.backbone = build_backbone(config.backbone, rng, dtype)
        self.glp = GatedLocalPooling(config.backbone.stage_channels, config.d_model,
                                     config.mode, self.config.seq_len, rng, dtype)
        self.fusion = CrossScaleEncoder(config.d_model, config.num_heads, rng, dtype,
                                        direction=config.msca_direction,
                                        dual_branch=config.dual_branch,
                                        layer_norm=config.layer_norm)
        self.head = ScoreHead(config.d_model, config.d_text, config.tau, rng, dtype,
                              text_head=config.text_head,
                              regress_hidden=config.regress_hidden,
                              learn_tau=config.learn_tau)
        self._bank = None
        self._bank_tensor = None
        if text_bank is not None:
            self.set_text_bank(text_bank)

    # -- text bank ------------------------------------------------------------

    def set_text_bank(self, bank: TextBank):
        bank.validate()
        if bank.d_text != self.config.d_text:
            raise ConfigurationError(
                f"bank width {bank.d_text} != configured d_text {self.config.d_text}")
        # the bank is immutable external data, never part of the ParameterSet
        object.__setattr__(self, "_bank", bank)
        object.__setattr__(self, "_bank_tensor",
                           Tensor(bank.embeddings.astype(self.config.np_dtype, copy=True)))

    @property
    def text_bank(self) -> TextBank | None:
        return self._bank

    # -- forward ----------------------------------------------------------------

    def _prep(self, image) -> Tensor:
        t = image if isinstance(image, Tensor) else Tensor(image)
        check_image(t)
        t = Tensor(t.data.astype(self.config.np_dtype, copy=False), requires_grad=False)
        return normalize_image(t, self.config.norm_mean, self.config.norm_std)

    def forward(self, image, reference=None, capture: list | None = None) -> dict:
        """Score a batch. Returns {"score", "similarities", "projected"}.

        FR mode requires `reference`; NR mode forbids it. `capture`, when a
        list, is filled with one dict per fusion block holding the info
        branch attention probabilities and the weight branch gate values.
        """
        if self.config.mode == "FR":
            if reference is None:
                raise InputError("FR model requires a reference image")
            pyramid = self.backbone(self._prep(image))
            ref_pyramid = self.backbone(self._prep(reference))
            pooled = self.glp(pyramid, ref_pyramid)
        else:
            if reference is not None:
                raise InputError("NR model does not accept a reference image")
            pooled = self.glp(self.backbone(self._prep(image)))
        fused = self.fusion(pooled, capture)
        projected = [self.head.project(g, i + 1) for i, g in enumerate(fused)]
        if self.head.text_head:
            if self._bank_tensor is None:
                raise ConfigurationError("text head enabled but no text bank loaded")
            sims = [self.head.similarity(x, self._bank_tensor) for x in projected]
            score = self.head.regress_score(sims)
            return {"score": score, "similarities": sims, "projected": projected}
        score = self.head.regress_score(projected)
        return {"score": score, "similarities": None, "projected": projected}

    def __call__(self, image, reference=None, capture: list | None = None) -> dict:
        return self.forward(image, reference, capture)

    # -- parameters ---------------------------------------------------------------

    def parameter_set(self) -> ParameterSet:
        frozen = {name for name, p in self.named_parameters() if not p.requires_grad}
        return ParameterSet(tensors=self.state_dict(), frozen=frozen)

    def load_parameter_set(self, ps: ParameterSet, strict: bool = True, cast: bool = False):
        self.load_state_dict(ps.tensors, strict=strict, cast=cast)
        self.apply_frozen(ps.frozen)

    def apply_frozen(self, names):
        names = set(names)
        for name, p in self.named_parameters():
            if name in names:
                p.requires_grad = False

    def freeze_norm_layers(self) -> list:
        """Training recipe: pin normalization statistics and affine params."""
        return self.freeze(is_norm_entry)

    def trainable_parameters(self):
        return [(n, p) for n, p in self.named_parameters() if p.requires_grad]
