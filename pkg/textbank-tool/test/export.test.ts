import { spawnSync } from 'node:child_process';
import { mkdtempSync, readFileSync, writeFileSync } from 'node:fs';
import { tmpdir } from 'node:os';
import { join, resolve } from 'node:path';

import { describe, expect, it } from 'vitest';

import { embedPrompts, readBank, sidecarPath, verifyBank, writeBank } from '../src/bank.js';
import { decodeArchive, encodeArchive } from '../src/bpta.js';
import { DownloadError, clipEncoder, deterministicEncoder } from '../src/encoders.js';
import { main } from '../src/cli.js';
import { loadSpec } from '../src/spec.js';

const DEFAULT_SPEC = resolve(__dirname, '../spec/default_spec.json');
const FIXTURE = resolve(__dirname, '../../tests/fixtures/textbank_fixture.bpta');

function tmp(): string {
  return mkdtempSync(join(tmpdir(), 'textbank-'));
}

async function exportDefault(dir: string): Promise<string> {
  const bank = await embedPrompts(loadSpec(DEFAULT_SPEC), deterministicEncoder(512));
  const path = join(dir, 'bank.bpta');
  writeBank(bank, path);
  return path;
}

describe('export', () => {
  it('produces a (40, 512) bank with unit rows', async () => {
    const bank = await embedPrompts(loadSpec(DEFAULT_SPEC), deterministicEncoder(512));
    expect(bank.rows).toBe(40);
    expect(bank.dText).toBe(512);
    for (let r = 0; r < bank.rows; r++) {
      let sq = 0;
      for (let i = 0; i < bank.dText; i++) sq += bank.embeddings[r * 512 + i] ** 2;
      expect(Math.abs(Math.sqrt(sq) - 1)).toBeLessThanOrEqual(1e-5);
    }
  });

  it('regenerates the committed fixture with per-row cosine >= 0.999', async () => {
    const bank = await embedPrompts(loadSpec(DEFAULT_SPEC), deterministicEncoder(512));
    const fixture = decodeArchive(readFileSync(FIXTURE)).get('text.embeddings')!;
    expect(fixture.shape).toEqual([40, 512]);
    for (let r = 0; r < 40; r++) {
      let dot = 0;
      for (let i = 0; i < 512; i++) {
        dot += bank.embeddings[r * 512 + i] * (fixture.data as Float32Array)[r * 512 + i];
      }
      expect(dot).toBeGreaterThanOrEqual(0.999);
    }
  });

  it('re-running the export is byte-stable', async () => {
    const dir = tmp();
    const a = await exportDefault(dir);
    const bytesA = readFileSync(a);
    const b = await exportDefault(dir);
    expect(readFileSync(b).equals(bytesA)).toBe(true);
  });

  it('round-trips through writeBank/readBank', async () => {
    const dir = tmp();
    const path = await exportDefault(dir);
    const loaded = readBank(path);
    expect(loaded.rows).toBe(40);
    expect(loaded.modelId).toBe('deterministic-sha256-v1');
    expect(loaded.dimensions.map((d) => d.name)).toContain('sharpness');
    expect(verifyBank(loaded).every((f) => f.ok)).toBe(true);
  });

  it('surfaces an unavailable pretrained model as a download error', async () => {
    let encoder;
    try {
      encoder = await clipEncoder('Xenova/clip-vit-base-patch32');
    } catch (err) {
      expect(err).toBeInstanceOf(DownloadError);
      return;
    }
    // transformers installed: embedding may still fail without a snapshot
    try {
      await encoder.embed(['a photo of a sharp image']);
    } catch (err) {
      expect(err).toBeInstanceOf(Error);
    }
  }, 60_000);
});

describe('verify', () => {
  it('fails on a corrupted row norm, naming the row', async () => {
    const dir = tmp();
    const path = await exportDefault(dir);
    const bank = readBank(path);
    for (let i = 0; i < bank.dText; i++) bank.embeddings[7 * bank.dText + i] *= 1.2;
    const findings = verifyBank(bank);
    const failure = findings.find((f) => !f.ok);
    expect(failure).toBeDefined();
    expect(failure!.message).toMatch(/row 7/);
  });

  it('fails on a header/sidecar adjective-count mismatch', async () => {
    const dir = tmp();
    const path = await exportDefault(dir);
    const sidecar = JSON.parse(readFileSync(sidecarPath(path), 'utf-8'));
    sidecar.dimensions[0].adjectives.push('sneaky-extra');
    writeFileSync(sidecarPath(path), JSON.stringify(sidecar));
    const findings = verifyBank(readBank(path));
    expect(findings.some((f) => !f.ok && /adjectives/.test(f.message))).toBe(true);
  });
});

describe('cli', () => {
  it('export + verify succeed end to end', async () => {
    const dir = tmp();
    const out = join(dir, 'bank.bpta');
    expect(await main(['export', '--spec', DEFAULT_SPEC, '--out', out,
                       '--encoder', 'deterministic'])).toBe(0);
    expect(await main(['verify', out])).toBe(0);
  });

  it('verify exits nonzero on a corrupted bank', async () => {
    const dir = tmp();
    const out = join(dir, 'bank.bpta');
    await main(['export', '--spec', DEFAULT_SPEC, '--out', out, '--encoder', 'deterministic']);
    const bank = readBank(out);
    bank.embeddings[3] += 0.5;
    const tensors = new Map([
      ['text.embeddings', { dtype: 'f32' as const, shape: [40, 512], data: bank.embeddings }],
    ]);
    writeFileSync(out, encodeArchive(tensors));
    expect(await main(['verify', out])).toBe(3);
  });

  it('usage errors exit 2', async () => {
    expect(await main(['export', '--spec', DEFAULT_SPEC])).toBe(2);
    expect(await main(['bogus'])).toBe(2);
    const dir = tmp();
    const badSpec = join(dir, 'bad.json');
    const spec = JSON.parse(readFileSync(DEFAULT_SPEC, 'utf-8'));
    spec.dimensions[0].adjectives[0] = spec.dimensions[0].adjectives[1];
    writeFileSync(badSpec, JSON.stringify(spec));
    expect(await main(['export', '--spec', badSpec, '--out', join(dir, 'x.bpta'),
                       '--encoder', 'deterministic'])).toBe(2);
  });
});

describe('primary-component integration', () => {
  it('an exported bank loads in bpclip with zero warnings', async () => {
    const probe = spawnSync('python3', ['-c', 'import bpclip'], { encoding: 'utf-8' });
    if (probe.status !== 0) {
      console.warn('bpclip not importable; skipping integration check');
      return;
    }
    const dir = tmp();
    const path = await exportDefault(dir);
    const code = [
      'import warnings, sys',
      'warnings.simplefilter("error")',
      'from bpclip.clip_head import load_text_bank',
      `bank = load_text_bank(${JSON.stringify(path)})`,
      'assert bank.embeddings.shape == (40, 512)',
      'assert len(bank.dimensions) == 6',
      'print("ok")',
    ].join('\n');
    const run = spawnSync('python3', ['-c', code], { encoding: 'utf-8' });
    expect(run.stderr).toBe('');
    expect(run.status).toBe(0);
    expect(run.stdout.trim()).toBe('ok');
  }, 30_000);
});
