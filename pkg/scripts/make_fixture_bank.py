#!/usr/bin/env python3
"""Generate the committed text-bank fixture with the deterministic encoder.

The encoder maps each prompt to a unit vector whose coordinates are derived
from SHA-256 in counter mode: coordinate k of prompt p is
u(sha256(p + "|" + k)) - 0.5, with u() reading the first 8 digest bytes as a
little-endian integer scaled to [0, 1). Rows are L2-normalized in f64 and
stored as f32. Any implementation following this recipe reproduces the
fixture bit-for-bit, which is what the embedding tool's regeneration check
relies on when no pretrained text encoder is reachable.

Usage: python scripts/make_fixture_bank.py [out_basename]
"""

import hashlib
import sys
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from bpclip.clip_head import TextBank, default_inventory, save_text_bank  # noqa: E402

MODEL_ID = "deterministic-sha256-v1"
D_TEXT = 512


def embed_prompt(prompt: str, d_text: int = D_TEXT) -> np.ndarray:
    coords = np.empty(d_text, dtype=np.float64)
    for k in range(d_text):
        digest = hashlib.sha256(f"{prompt}|{k}".encode("utf-8")).digest()
        coords[k] = int.from_bytes(digest[:8], "little") / 2.0**64 - 0.5
    return coords / np.linalg.norm(coords)


def main(out_base: str) -> None:
    inv = default_inventory()
    dims = tuple((d["name"], tuple(d["adjectives"])) for d in inv["dimensions"])
    adjectives = tuple(a for _, adjs in dims for a in adjs)
    template = inv["template"]
    rows = np.stack([embed_prompt(template.format(adjective=a)) for a in adjectives])
    bank = TextBank(embeddings=rows.astype(np.float32), adjectives=adjectives,
                    dimensions=dims, template=template, model_id=MODEL_ID)
    bank.validate()
    out = Path(out_base)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_text_bank(bank, out)
    print(f"wrote {out} and {out.with_suffix('.json')} "
          f"({rows.shape[0]} x {rows.shape[1]}, model_id={MODEL_ID})")


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else "tests/fixtures/textbank_fixture.bpta")
