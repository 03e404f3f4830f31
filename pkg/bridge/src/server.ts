/**
 * Serve loop: one request in flight per connection, replies written as
 * single JSON lines on stdout. Malformed requests produce error frames and
 * the session continues; an unexpected internal failure exits nonzero.
 */

import { createInterface } from 'node:readline';
import type { Model } from './tinylm.js';
import { handleLine } from './protocol.js';

export function serve(model: Model, input = process.stdin, output = process.stdout): Promise<void> {
  return new Promise((resolve, reject) => {
    const rl = createInterface({ input, terminal: false });
    rl.on('line', (line) => {
      if (line.trim() === '') return;
      try {
        output.write(JSON.stringify(handleLine(model, line)) + '\n');
      } catch (e) {
        output.write(JSON.stringify({ op: 'error', message: String(e) }) + '\n');
        rl.close();
        reject(e);
      }
    });
    rl.on('close', resolve);
  });
}
