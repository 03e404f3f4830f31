/**
 * Deterministic 32-bit hashing shared with the engine-side test shim.
 *
 * Every operation is specified on uint32 values so independent
 * implementations produce identical bits: multiplications via Math.imul,
 * additions reduced mod 2^32, logical right shifts.
 */

export function mix32(x: number): number {
  x = (x ^ (x >>> 16)) >>> 0;
  x = Math.imul(x, 0x7feb352d) >>> 0;
  x = (x ^ (x >>> 15)) >>> 0;
  x = Math.imul(x, 0x846ca68b) >>> 0;
  x = (x ^ (x >>> 16)) >>> 0;
  return x;
}

/** hash32(seed, a, b): three chained mixes over mod-2^32 sums. */
export function hash32(seed: number, a: number, b: number): number {
  let x = mix32((seed + 0x9e3779b9) >>> 0);
  x = mix32((x + a) >>> 0);
  x = mix32((x + b) >>> 0);
  return x;
}
