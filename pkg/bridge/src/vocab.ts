/**
 * Vocabulary file handling in the engine's format: UTF-8, one surface per
 * line, line number = token id, rows 0 and 1 reserved for <bos> and <unk>.
 */

import { createHash } from 'node:crypto';
import fs from 'node:fs';

export const BOS = '<bos>';
export const UNK = '<unk>';

export interface Vocabulary {
  surfaces: string[];
  fingerprint: string;
}

export function fingerprintOf(surfaces: string[]): string {
  const h = createHash('sha256');
  for (const s of surfaces) {
    h.update(Buffer.from(s, 'utf-8'));
    h.update(Buffer.from('\n'));
  }
  return h.digest('hex');
}

export function makeVocabulary(surfaces: string[]): Vocabulary {
  if (surfaces.length < 2 || surfaces[0] !== BOS || surfaces[1] !== UNK) {
    throw new Error(`vocabulary rows 0 and 1 must be ${BOS} and ${UNK}`);
  }
  if (new Set(surfaces).size !== surfaces.length) {
    throw new Error('vocabulary surfaces must be unique');
  }
  return { surfaces, fingerprint: fingerprintOf(surfaces) };
}

export function loadVocabulary(path: string): Vocabulary {
  const lines = fs.readFileSync(path, 'utf-8').split('\n');
  if (lines.length && lines[lines.length - 1] === '') lines.pop();
  return makeVocabulary(lines);
}

export function saveVocabulary(vocab: Vocabulary, path: string): void {
  fs.writeFileSync(path, vocab.surfaces.join('\n') + '\n', 'utf-8');
}

/**
 * Re-emit a raw id -> surface table in the engine format. Raw tables that
 * do not already reserve rows 0/1 get the specials prepended, shifting every
 * original id up by 2 (the offset table is returned for the caller to log).
 */
export function exportVocabulary(rawSurfaces: string[]): { vocab: Vocabulary; idOffset: number } {
  if (rawSurfaces[0] === BOS && rawSurfaces[1] === UNK) {
    return { vocab: makeVocabulary(rawSurfaces), idOffset: 0 };
  }
  const filtered = rawSurfaces.filter((s) => s !== BOS && s !== UNK);
  return { vocab: makeVocabulary([BOS, UNK, ...filtered]), idOffset: 2 };
}
