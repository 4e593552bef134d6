/** Prompt spec: template + six dimensions totalling forty adjectives. */

import { readFileSync } from 'node:fs';

export const REQUIRED_ADJECTIVES = 40;
export const REQUIRED_DIMENSIONS = 6;

export interface Dimension {
  name: string;
  adjectives: string[];
}

export interface PromptSpec {
  template: string;
  dimensions: Dimension[];
  modelId?: string;
}

export class SpecError extends Error {}

export function validateSpec(spec: PromptSpec): PromptSpec {
  const slots = spec.template.split('{adjective}').length - 1;
  if (slots !== 1) {
    throw new SpecError(`template must contain the {adjective} slot exactly once, found ${slots}`);
  }
  if (spec.dimensions.length !== REQUIRED_DIMENSIONS) {
    throw new SpecError(`spec needs ${REQUIRED_DIMENSIONS} dimensions, got ${spec.dimensions.length}`);
  }
  const flat = spec.dimensions.flatMap((d) => d.adjectives);
  if (flat.length !== REQUIRED_ADJECTIVES) {
    throw new SpecError(`spec needs ${REQUIRED_ADJECTIVES} adjectives, got ${flat.length}`);
  }
  const seen = new Set<string>();
  for (const adj of flat) {
    if (seen.has(adj)) {
      throw new SpecError(`duplicate adjective: ${adj}`);
    }
    seen.add(adj);
  }
  for (const dim of spec.dimensions) {
    if (!dim.name || dim.adjectives.length === 0) {
      throw new SpecError('every dimension needs a name and at least one adjective');
    }
  }
  return spec;
}

export function loadSpec(path: string): PromptSpec {
  const doc = JSON.parse(readFileSync(path, 'utf-8'));
  if (!doc.template || !Array.isArray(doc.dimensions)) {
    throw new SpecError(`${path}: spec needs "template" and "dimensions"`);
  }
  return validateSpec({
    template: doc.template,
    dimensions: doc.dimensions,
    modelId: doc.model_id ?? doc.modelId,
  });
}

export function adjectivesOf(spec: PromptSpec): string[] {
  return spec.dimensions.flatMap((d) => d.adjectives);
}

export function promptsOf(spec: PromptSpec): string[] {
  return adjectivesOf(spec).map((a) => spec.template.replace('{adjective}', a));
}
