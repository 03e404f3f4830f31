/**
 * Frame handling for the newline-delimited JSON protocol.
 *
 * Handshake: {"op":"hello","protocol":1}
 *         -> {"op":"hello","d":<int>,"vocab_fingerprint":"<hex>","name":"<str>"}
 * Step:      {"op":"step","prefix":[<ids>]}
 *         -> {"op":"step","context_vector":[<d floats>],"logprobs":[<|V| floats>]}
 * Anything else -> {"op":"error","message":"..."} and the session continues.
 */

import type { Model } from './tinylm.js';

export const PROTOCOL_VERSION = 1;

export type Frame = Record<string, unknown>;

export function errorFrame(message: string): Frame {
  return { op: 'error', message };
}

export function handleLine(model: Model, line: string): Frame {
  let frame: unknown;
  try {
    frame = JSON.parse(line);
  } catch {
    return errorFrame('invalid JSON');
  }
  if (typeof frame !== 'object' || frame === null || Array.isArray(frame)) {
    return errorFrame('frame must be a JSON object');
  }
  return handleFrame(model, frame as Frame);
}

export function handleFrame(model: Model, frame: Frame): Frame {
  switch (frame.op) {
    case 'hello': {
      if (frame.protocol !== PROTOCOL_VERSION) {
        return errorFrame(`unsupported protocol version ${JSON.stringify(frame.protocol)}`);
      }
      return {
        op: 'hello',
        d: model.dim,
        vocab_fingerprint: model.vocab.fingerprint,
        name: model.name,
      };
    }
    case 'step': {
      const prefix = frame.prefix;
      if (!Array.isArray(prefix)) {
        return errorFrame('step frame requires a "prefix" array');
      }
      const size = model.vocab.surfaces.length;
      for (const t of prefix) {
        if (!Number.isInteger(t) || (t as number) < 0 || (t as number) >= size) {
          return errorFrame(`token id ${JSON.stringify(t)} out of range`);
        }
      }
      try {
        const { contextVector, logprobs } = model.step(prefix as number[]);
        return { op: 'step', context_vector: contextVector, logprobs };
      } catch (e) {
        return errorFrame(`model failure: ${(e as Error).message}`);
      }
    }
    default:
      return errorFrame(`unknown op ${JSON.stringify(frame.op)}`);
  }
}
