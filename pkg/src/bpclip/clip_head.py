"""Text-space projection, adjective similarity, and score regression.

Fused features are mean-pooled over positions, projected into the text
embedding space, compared against a bank of 40 quality adjectives spanning
six dimensions, and the softmaxed similarities of all levels are
concatenated for the final regression.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from . import archive, autograd as ag
from .autograd import Tensor
from .errors import ConfigurationError, NumericDomainError, TextBankError
from .nn import Mlp, Module

BANK_ROWS = 40
BANK_DIMENSIONS = 6
EMBEDDING_TENSOR = "text.embeddings"
UNIT_NORM_TOL = 1e-5       # invariant on a validated bank
RENORMALIZE_TOL = 1e-3     # rows further from unit norm than this are rejected
NUM_LEVELS = 4


@dataclass
class TextBank:
    embeddings: np.ndarray  # (40, d_text), rows unit-norm
    adjectives: tuple
    dimensions: tuple       # ((name, (adjectives...)), ...) in file order
    template: str = ""
    model_id: str = ""

    @property
    def d_text(self) -> int:
        return self.embeddings.shape[1]

    def dimension_of(self, adjective: str) -> str:
        for name, adjs in self.dimensions:
            if adjective in adjs:
                return name
        raise KeyError(adjective)

    def validate(self) -> "TextBank":
        if self.embeddings.ndim != 2 or self.embeddings.shape[0] != BANK_ROWS:
            raise TextBankError(f"bank must have {BANK_ROWS} rows, got {self.embeddings.shape}")
        if len(self.dimensions) != BANK_DIMENSIONS:
            raise TextBankError(f"bank must have {BANK_DIMENSIONS} dimensions, got {len(self.dimensions)}")
        flat = [a for _, adjs in self.dimensions for a in adjs]
        if len(flat) != BANK_ROWS:
            raise TextBankError(f"dimensions list {len(flat)} adjectives, expected {BANK_ROWS}")
        if len(set(flat)) != len(flat):
            raise TextBankError("duplicate adjectives across dimensions")
        if tuple(flat) != tuple(self.adjectives):
            raise TextBankError("adjective order disagrees with dimension listing")
        norms = np.linalg.norm(self.embeddings, axis=1)
        if np.any(np.abs(norms - 1.0) > UNIT_NORM_TOL):
            raise TextBankError(f"rows not unit-norm (worst {np.abs(norms - 1.0).max():.2e})")
        return self


def sidecar_path(path) -> Path:
    return Path(path).with_suffix(".json")


def load_text_bank(path) -> TextBank:
    """Load and validate a bank archive plus its JSON sidecar.

    Rows within RENORMALIZE_TOL of unit norm are renormalized exactly;
    anything further off is rejected.
    """
    tensors = archive.load_archive(path)
    emb = archive.require_tensor(tensors, EMBEDDING_TENSOR, source=str(path))
    side = sidecar_path(path)
    if not side.exists():
        raise TextBankError(f"missing sidecar {side}")
    meta = json.loads(side.read_text(encoding="utf-8"))
    try:
        dimensions = tuple((d["name"], tuple(d["adjectives"])) for d in meta["dimensions"])
    except (KeyError, TypeError) as e:
        raise TextBankError(f"{side}: malformed dimensions: {e}") from e
    adjectives = tuple(a for _, adjs in dimensions for a in adjs)
    if emb.ndim != 2 or emb.shape[0] != BANK_ROWS:
        raise TextBankError(f"{path}: embeddings shaped {emb.shape}, expected ({BANK_ROWS}, d_text)")
    norms = np.linalg.norm(emb.astype(np.float64), axis=1)
    if np.any(norms == 0) or np.any(np.abs(norms - 1.0) > RENORMALIZE_TOL):
        bad = int(np.argmax(np.abs(norms - 1.0)))
        raise TextBankError(f"{path}: row {bad} norm {norms[bad]:.4f} not normalizable")
    emb = (emb.astype(np.float64) / norms[:, None]).astype(emb.dtype)
    bank = TextBank(embeddings=emb, adjectives=adjectives, dimensions=dimensions,
                    template=meta.get("template", ""), model_id=meta.get("model_id", ""))
    return bank.validate()


def save_text_bank(bank: TextBank, path) -> None:
    archive.save_archive({EMBEDDING_TENSOR: bank.embeddings}, path)
    meta = {
        "template": bank.template,
        "model_id": bank.model_id,
        "dimensions": [{"name": n, "adjectives": list(a)} for n, a in bank.dimensions],
    }
    sidecar_path(path).write_text(json.dumps(meta, indent=2), encoding="utf-8")


def default_inventory() -> dict:
    """The packaged 40-adjective / 6-dimension inventory (user-replaceable)."""
    text = resources.files("bpclip").joinpath("inventory/default_adjectives.json").read_text("utf-8")
    return json.loads(text)


def cosine_to_bank(x: Tensor, bank_embeddings: Tensor) -> Tensor:
    """Cosines between batch rows and all (unit-norm) bank rows: (B, 40)."""
    sq = ag.sum_(ag.mul(x, x), axis=-1, keepdims=True)
    if np.any(sq.data == 0.0):
        raise NumericDomainError("zero-norm feature vector has no direction")
    unit = ag.div(x, ag.sqrt(sq))
    return ag.matmul(unit, ag.transpose(bank_embeddings, (1, 0)))


def adjective_similarity(x: Tensor, bank: TextBank, tau: float) -> Tensor:
    """softmax(tau * cos(x, bank rows)): positive, sums to 1 per item."""
    emb = Tensor(bank.embeddings.astype(x.data.dtype, copy=False))
    return ag.softmax(ag.mul(cosine_to_bank(x, emb), float(tau)), axis=-1)


class ScoreHead(Module):
    """Per-level text-space projections plus the final regression MLP.

    With text_head=False (ablation) the projected features bypass the
    adjective similarities and feed the regression directly.
    """

    def __init__(self, d_model: int, d_text: int, tau: float, rng, dtype,
                 text_head: bool = True, regress_hidden: int = 64,
                 learn_tau: bool = False):
        super().__init__()
        for i in range(1, NUM_LEVELS + 1):
            setattr(self, f"proj{i}", Mlp(d_model, d_model, d_text, rng, dtype))
        regress_in = NUM_LEVELS * BANK_ROWS if text_head else NUM_LEVELS * d_text
        self.regress = Mlp(regress_in, regress_hidden, 1, rng, dtype)
        self.log_tau = Tensor(np.asarray([np.log(max(tau, 1e-12))], dtype=dtype),
                              requires_grad=learn_tau) if learn_tau else None
        self.tau = float(tau)
        self.text_head = text_head

    def project(self, g: Tensor, level: int) -> Tensor:
        """Mean over positions, then the level's projection MLP: (B, d_text)."""
        if g.ndim != 3:
            raise ConfigurationError(f"expected (B, L, D) features, got {g.shape}")
        return getattr(self, f"proj{level}")(ag.mean(g, axis=1))

    def similarity(self, x: Tensor, bank_embeddings: Tensor) -> Tensor:
        cos = cosine_to_bank(x, bank_embeddings)
        if self.log_tau is not None:
            return ag.softmax(ag.mul(cos, ag.exp(self.log_tau)), axis=-1)
        return ag.softmax(ag.mul(cos, self.tau), axis=-1)

    def regress_score(self, level_vectors: list) -> Tensor:
        """Concatenate the four per-level vectors and regress to one scalar."""
        if len(level_vectors) != NUM_LEVELS:
            raise ConfigurationError(f"expected {NUM_LEVELS} level vectors, got {len(level_vectors)}")
        stacked = ag.concat(level_vectors, axis=-1)
        return ag.reshape(self.regress(stacked), (stacked.shape[0],))
