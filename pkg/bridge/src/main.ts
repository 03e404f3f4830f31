/**
 * Bridge entry point.
 *
 *   main.js serve --model tiny:seed=7,dim=16 --vocab vocab.txt [--layer last]
 *   main.js export-vocab --raw surfaces.txt --out vocab.txt
 */

import process from 'node:process';
import fs from 'node:fs';
import { createModel } from './tinylm.js';
import { loadVocabulary, exportVocabulary, saveVocabulary } from './vocab.js';
import { serve } from './server.js';

function parseFlags(argv: string[]): Map<string, string> {
  const flags = new Map<string, string>();
  for (let i = 0; i < argv.length; i += 2) {
    const key = argv[i];
    if (!key.startsWith('--') || i + 1 >= argv.length) {
      throw new Error(`expected --flag value pairs, got ${JSON.stringify(argv)}`);
    }
    flags.set(key.slice(2), argv[i + 1]);
  }
  return flags;
}

function required(flags: Map<string, string>, name: string): string {
  const v = flags.get(name);
  if (v === undefined) throw new Error(`missing required flag --${name}`);
  return v;
}

async function main(): Promise<number> {
  const [command, ...rest] = process.argv.slice(2);
  try {
    if (command === 'serve') {
      const flags = parseFlags(rest);
      const vocab = loadVocabulary(required(flags, 'vocab'));
      const model = createModel(required(flags, 'model'), vocab, flags.get('layer') ?? 'last');
      await serve(model);
      return 0;
    }
    if (command === 'export-vocab') {
      const flags = parseFlags(rest);
      const raw = fs
        .readFileSync(required(flags, 'raw'), 'utf-8')
        .split('\n')
        .filter((s) => s.length > 0);
      const { vocab, idOffset } = exportVocabulary(raw);
      saveVocabulary(vocab, required(flags, 'out'));
      process.stdout.write(
        JSON.stringify({
          fingerprint: vocab.fingerprint,
          size: vocab.surfaces.length,
          id_offset: idOffset,
        }) + '\n',
      );
      return 0;
    }
    process.stderr.write(`unknown command ${JSON.stringify(command)}\n`);
    return 2;
  } catch (e) {
    process.stderr.write(`error: ${(e as Error).message}\n`);
    return 1;
  }
}

main().then((code) => process.exit(code));
