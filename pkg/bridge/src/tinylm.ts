/**
 * A tiny deterministic language model for exercising the bridge end to end.
 *
 * All arithmetic is chosen so that an independent implementation reproduces
 * the exact same IEEE-754 doubles: embeddings are integer signs from a
 * 32-bit hash, context-vector weights are powers of two (exact dyadics),
 * probabilities are ratios of small integers, and the only rounding steps
 * (sqrt, divide) are correctly rounded by the floating-point standard.
 */

import { hash32 } from './hash.js';
import type { Vocabulary } from './vocab.js';

const CONTEXT_WINDOW = 4;
const WEIGHT_SALT = 0x5a5a5a5a;

export interface Model {
  name: string;
  dim: number;
  vocab: Vocabulary;
  /** Unit-norm context vector for the prefix plus log probabilities over the vocabulary. */
  step(prefix: number[]): { contextVector: number[]; logprobs: number[] };
}

export class TinyLm implements Model {
  readonly name: string;
  readonly dim: number;
  readonly vocab: Vocabulary;
  private readonly seed: number;

  constructor(seed: number, dim: number, vocab: Vocabulary) {
    if (!Number.isInteger(seed) || seed < 0 || seed > 0xffffffff) {
      throw new Error('seed must be a uint32');
    }
    if (!Number.isInteger(dim) || dim < 1 || dim > 32) {
      throw new Error('dim must be an integer in 1..32');
    }
    this.seed = seed >>> 0;
    this.dim = dim;
    this.vocab = vocab;
    this.name = `tiny-lm(seed=${this.seed},dim=${dim})`;
  }

  embeddingSign(token: number, coord: number): number {
    return (hash32(this.seed, token, coord) & 1) === 1 ? 1.0 : -1.0;
  }

  contextVector(prefix: number[]): number[] {
    const v = new Array<number>(this.dim).fill(0);
    if (prefix.length === 0) {
      v[0] = 1.0;
      return v;
    }
    let weight = 1.0;
    const k = Math.min(prefix.length, CONTEXT_WINDOW);
    for (let i = 1; i <= k; i++) {
      weight *= 0.5; // dyadic weights keep the sum exact
      const tok = prefix[prefix.length - i];
      for (let j = 0; j < this.dim; j++) {
        v[j] += weight * this.embeddingSign(tok, j);
      }
    }
    let sq = 0.0;
    for (let j = 0; j < this.dim; j++) sq += v[j] * v[j];
    const norm = Math.sqrt(sq);
    for (let j = 0; j < this.dim; j++) v[j] /= norm;
    return v;
  }

  /** Integer token weights; the distribution is their exact ratio. */
  distributionWeights(prefix: number[]): number[] {
    const n = prefix.length;
    const last = n >= 1 ? prefix[n - 1] : 0xffff;
    const prev = n >= 2 ? prefix[n - 2] : 0xfffe;
    const key = (last * 65521 + prev) >>> 0;
    const size = this.vocab.surfaces.length;
    const weights = new Array<number>(size);
    for (let i = 0; i < size; i++) {
      weights[i] = 1 + (hash32((this.seed ^ WEIGHT_SALT) >>> 0, key, i) % 7);
    }
    return weights;
  }

  logprobs(prefix: number[]): number[] {
    const weights = this.distributionWeights(prefix);
    let total = 0;
    for (const w of weights) total += w;
    return weights.map((w) => Math.log(w / total));
  }

  step(prefix: number[]): { contextVector: number[]; logprobs: number[] } {
    for (const t of prefix) {
      if (!Number.isInteger(t) || t < 0 || t >= this.vocab.surfaces.length) {
        throw new Error(`token id ${t} out of range`);
      }
    }
    return { contextVector: this.contextVector(prefix), logprobs: this.logprobs(prefix) };
  }
}

/** Parse a model selector like `tiny:seed=7,dim=16`. */
export function createModel(selector: string, vocab: Vocabulary, layer: string): Model {
  const [kind, argStr] = splitOnce(selector, ':');
  if (kind !== 'tiny') {
    throw new Error(
      `unknown model selector ${JSON.stringify(kind)}; implement the Model interface to wrap other models`,
    );
  }
  if (layer !== 'last') {
    // the toy model has a single representation; real adapters may select layers
    throw new Error(`model "tiny" only provides layer "last", got ${JSON.stringify(layer)}`);
  }
  const args = new Map<string, string>();
  if (argStr) {
    for (const part of argStr.split(',')) {
      const [k, v] = splitOnce(part, '=');
      args.set(k, v);
    }
  }
  const seed = Number(args.get('seed') ?? '0');
  const dim = Number(args.get('dim') ?? '16');
  return new TinyLm(seed, dim, vocab);
}

function splitOnce(s: string, sep: string): [string, string] {
  const i = s.indexOf(sep);
  return i < 0 ? [s, ''] : [s.slice(0, i), s.slice(i + 1)];
}
