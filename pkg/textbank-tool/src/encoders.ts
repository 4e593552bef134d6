/**
 * Text encoders producing unit-norm prompt embeddings.
 *
 * "clip" runs a pretrained CLIP text tower via @huggingface/transformers
 * (an optional peer dependency; absence or an unreachable model snapshot
 * surfaces as DownloadError). "deterministic" derives coordinates from
 * SHA-256 in counter mode -- coordinate k of prompt p is
 * u64le(sha256(p + "|" + k)[0..8]) / 2^64 - 0.5, L2-normalized in f64 and
 * stored as f32 -- and reproduces the committed fixture bank exactly, so
 * regeneration checks work offline.
 */

import { createHash } from 'node:crypto';

export class DownloadError extends Error {}

export interface Encoder {
  modelId: string;
  dText: number;
  embed(prompts: string[]): Promise<Float64Array[]>;
}

export const DETERMINISTIC_MODEL_ID = 'deterministic-sha256-v1';
export const DEFAULT_CLIP_MODEL = 'Xenova/clip-vit-base-patch32';

function l2normalize(row: Float64Array): Float64Array {
  let sq = 0;
  for (let i = 0; i < row.length; i++) sq += row[i] * row[i];
  const norm = Math.sqrt(sq);
  if (norm === 0) throw new Error('zero-norm embedding row');
  for (let i = 0; i < row.length; i++) row[i] /= norm;
  return row;
}

export function deterministicEncoder(dText = 512): Encoder {
  return {
    modelId: DETERMINISTIC_MODEL_ID,
    dText,
    async embed(prompts: string[]): Promise<Float64Array[]> {
      return prompts.map((prompt) => {
        const row = new Float64Array(dText);
        for (let k = 0; k < dText; k++) {
          const digest = createHash('sha256').update(`${prompt}|${k}`, 'utf-8').digest();
          const u = Number(digest.readBigUInt64LE(0)) / 2 ** 64;
          row[k] = u - 0.5;
        }
        return l2normalize(row);
      });
    },
  };
}

export async function clipEncoder(modelId = DEFAULT_CLIP_MODEL): Promise<Encoder> {
  // optional peer dependency; resolved at runtime only
  const moduleName = '@huggingface/transformers';
  let transformers: any;
  try {
    transformers = await import(moduleName);
  } catch {
    throw new DownloadError(
      'the "@huggingface/transformers" package is not installed; ' +
      'install it (plus a reachable model snapshot) or use --encoder deterministic');
  }
  let tokenizer: any;
  let model: any;
  try {
    tokenizer = await transformers.AutoTokenizer.from_pretrained(modelId);
    model = await transformers.CLIPTextModelWithProjection.from_pretrained(modelId);
  } catch (err) {
    throw new DownloadError(`could not fetch model ${modelId}: ${(err as Error).message}`);
  }
  return {
    modelId,
    dText: 0, // discovered from the first batch
    async embed(prompts: string[]): Promise<Float64Array[]> {
      const inputs = tokenizer(prompts, { padding: true, truncation: true });
      const { text_embeds } = await model(inputs);
      const [rows, cols] = text_embeds.dims as [number, number];
      const data = text_embeds.data as Float32Array;
      const out: Float64Array[] = [];
      for (let r = 0; r < rows; r++) {
        out.push(l2normalize(Float64Array.from(data.subarray(r * cols, (r + 1) * cols))));
      }
      return out;
    },
  };
}
