#!/usr/bin/env node
/**
 * textbank-tool -- export and verify adjective text banks.
 *
 *   textbank-tool export --spec spec.json --out bank.bpta
 *                        [--encoder clip|deterministic] [--model-id id] [--d-text N]
 *   textbank-tool verify bank.bpta
 *
 * Exit codes: 0 success, 2 usage/spec errors, 3 runtime failures
 * (including an unavailable model).
 */

import { dimensionTable, embedPrompts, readBank, verifyBank, writeBank } from './bank.js';
import { DownloadError, clipEncoder, deterministicEncoder, DEFAULT_CLIP_MODEL } from './encoders.js';
import { SpecError, loadSpec } from './spec.js';

function parseFlags(argv: string[]): Map<string, string> {
  const flags = new Map<string, string>();
  for (let i = 0; i < argv.length; i++) {
    const arg = argv[i];
    if (!arg.startsWith('--')) {
      throw new SpecError(`unexpected argument ${arg}`);
    }
    const eq = arg.indexOf('=');
    if (eq >= 0) {
      flags.set(arg.slice(2, eq), arg.slice(eq + 1));
    } else {
      const val = argv[i + 1];
      if (val === undefined || val.startsWith('--')) {
        throw new SpecError(`flag ${arg} needs a value`);
      }
      flags.set(arg.slice(2), val);
      i++;
    }
  }
  return flags;
}

async function cmdExport(argv: string[]): Promise<number> {
  const flags = parseFlags(argv);
  const specPath = flags.get('spec');
  const outPath = flags.get('out');
  if (!specPath || !outPath) {
    throw new SpecError('export needs --spec and --out');
  }
  const spec = loadSpec(specPath);
  const encoderName = flags.get('encoder') ?? 'clip';
  const encoder =
    encoderName === 'deterministic'
      ? deterministicEncoder(Number(flags.get('d-text') ?? 512))
      : await clipEncoder(flags.get('model-id') ?? spec.modelId ?? DEFAULT_CLIP_MODEL);
  const bank = await embedPrompts(spec, encoder);
  const failures = verifyBank(bank).filter((f) => !f.ok);
  if (failures.length > 0) {
    throw new Error(`freshly exported bank failed checks: ${failures.map((f) => f.message).join('; ')}`);
  }
  writeBank(bank, outPath);
  console.log(`wrote ${outPath} (${bank.rows} x ${bank.dText}, model ${bank.modelId})`);
  return 0;
}

function cmdVerify(argv: string[]): number {
  if (argv.length !== 1 || argv[0].startsWith('--')) {
    throw new SpecError('verify takes exactly one bank path');
  }
  const bank = readBank(argv[0]);
  const findings = verifyBank(bank);
  for (const f of findings) {
    console.log(`${f.ok ? 'PASS' : 'FAIL'}  ${f.message}`);
  }
  console.log(dimensionTable(bank));
  const failed = findings.filter((f) => !f.ok).length;
  if (failed > 0) {
    console.error(`${failed} check(s) failed`);
    return 3;
  }
  return 0;
}

export async function main(argv: string[]): Promise<number> {
  const [command, ...rest] = argv;
  try {
    if (command === 'export') return await cmdExport(rest);
    if (command === 'verify') return cmdVerify(rest);
    console.error('usage: textbank-tool <export|verify> ...');
    return 2;
  } catch (err) {
    if (err instanceof SpecError) {
      console.error(`error: ${err.message}`);
      return 2;
    }
    if (err instanceof DownloadError) {
      console.error(`download error: ${err.message}`);
      return 3;
    }
    console.error(`error: ${(err as Error).message}`);
    return 3;
  }
}

import { pathToFileURL } from 'node:url';

if (process.argv[1] && import.meta.url === pathToFileURL(process.argv[1]).href) {
  main(process.argv.slice(2)).then((code) => process.exit(code));
}
