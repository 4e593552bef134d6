/** Bank assembly, file IO, and invariant verification. */

import { readFileSync, writeFileSync } from 'node:fs';

import { decodeArchive, encodeArchive, TensorEntry } from './bpta.js';
import { Encoder } from './encoders.js';
import { PromptSpec, REQUIRED_ADJECTIVES, REQUIRED_DIMENSIONS, adjectivesOf, promptsOf, validateSpec } from './spec.js';

export const EMBEDDING_TENSOR = 'text.embeddings';
export const UNIT_NORM_TOL = 1e-5;

export interface Bank {
  embeddings: Float32Array; // row-major (rows, dText)
  rows: number;
  dText: number;
  template: string;
  modelId: string;
  dimensions: { name: string; adjectives: string[] }[];
}

export function sidecarPath(bankPath: string): string {
  return bankPath.replace(/\.[^./\\]+$/, '') + '.json';
}

export async function embedPrompts(spec: PromptSpec, encoder: Encoder): Promise<Bank> {
  validateSpec(spec);
  const rows = await encoder.embed(promptsOf(spec));
  const dText = rows[0].length;
  const flat = new Float32Array(rows.length * dText);
  rows.forEach((row, r) => {
    for (let i = 0; i < dText; i++) flat[r * dText + i] = Math.fround(row[i]);
  });
  return {
    embeddings: flat,
    rows: rows.length,
    dText,
    template: spec.template,
    modelId: encoder.modelId,
    dimensions: spec.dimensions,
  };
}

export function writeBank(bank: Bank, path: string): void {
  const tensors = new Map<string, TensorEntry>([
    [EMBEDDING_TENSOR, { dtype: 'f32', shape: [bank.rows, bank.dText], data: bank.embeddings }],
  ]);
  writeFileSync(path, encodeArchive(tensors));
  const sidecar = {
    template: bank.template,
    model_id: bank.modelId,
    dimensions: bank.dimensions,
  };
  writeFileSync(sidecarPath(path), JSON.stringify(sidecar, null, 2));
}

export function readBank(path: string): Bank {
  const tensors = decodeArchive(readFileSync(path));
  const entry = tensors.get(EMBEDDING_TENSOR);
  if (!entry) {
    throw new Error(`${path}: missing tensor "${EMBEDDING_TENSOR}"`);
  }
  if (entry.shape.length !== 2) {
    throw new Error(`${path}: embeddings must be 2-D, got ${JSON.stringify(entry.shape)}`);
  }
  const meta = JSON.parse(readFileSync(sidecarPath(path), 'utf-8'));
  return {
    embeddings: Float32Array.from(entry.data),
    rows: entry.shape[0],
    dText: entry.shape[1],
    template: meta.template ?? '',
    modelId: meta.model_id ?? '',
    dimensions: meta.dimensions ?? [],
  };
}

export interface Finding {
  ok: boolean;
  message: string;
}

/** Re-check every bank invariant; all findings, failures included. */
export function verifyBank(bank: Bank): Finding[] {
  const findings: Finding[] = [];
  const check = (ok: boolean, message: string) => findings.push({ ok, message });

  check(bank.rows === REQUIRED_ADJECTIVES,
    `row count ${bank.rows} == ${REQUIRED_ADJECTIVES}`);
  check(bank.dimensions.length === REQUIRED_DIMENSIONS,
    `dimension count ${bank.dimensions.length} == ${REQUIRED_DIMENSIONS}`);

  const adjectives = bank.dimensions.flatMap((d) => d.adjectives);
  check(adjectives.length === bank.rows,
    `sidecar lists ${adjectives.length} adjectives for ${bank.rows} rows`);
  check(new Set(adjectives).size === adjectives.length, 'adjectives are unique');

  let worstRow = -1;
  let worstErr = 0;
  for (let r = 0; r < bank.rows; r++) {
    let sq = 0;
    for (let i = 0; i < bank.dText; i++) {
      const v = bank.embeddings[r * bank.dText + i];
      sq += v * v;
    }
    const err = Math.abs(Math.sqrt(sq) - 1);
    if (err > worstErr) {
      worstErr = err;
      worstRow = r;
    }
  }
  check(worstErr <= UNIT_NORM_TOL,
    `row norms within ${UNIT_NORM_TOL} of 1 (worst row ${worstRow}: ${worstErr.toExponential(2)})`);
  return findings;
}

export function dimensionTable(bank: Bank): string {
  return bank.dimensions
    .map((d) => `${d.name.padStart(16)}: ${d.adjectives.join(', ')}`)
    .join('\n');
}
