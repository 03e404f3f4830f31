#!/usr/bin/env python3
"""Regenerate the bridge's cross-language golden fixture from the test shim.

The bridge test suite asserts exact equality against these values, pinning
the two implementations of the deterministic toy model to identical bits.
"""

import json
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "tests"))

from cdlm import build_vocabulary  # noqa: E402
from tiny_shim import TinyShimLm  # noqa: E402

SURFACES = ["north", "south", "east", "west", "wind", "rain", "sun", "snow"]
SEED = 7
DIM = 16

PREFIXES = [
    [],
    [2],
    [3, 4],
    [2, 3, 4, 5],
    [9, 8, 7, 6, 5, 4, 3, 2],
    [0, 1, 2, 3, 4, 5, 6, 7, 8, 9],
]


def main() -> None:
    vocab = build_vocabulary(SURFACES)
    lm = TinyShimLm(SEED, DIM, vocab)
    cases = []
    for prefix in PREFIXES:
        cases.append({
            "prefix": prefix,
            "context_vector": list(lm.context_vector(prefix)),
            "weights": lm.distribution_weights(prefix),
        })
    out = {
        "seed": SEED,
        "dim": DIM,
        "surfaces": list(vocab.surfaces),
        "fingerprint": vocab.fingerprint,
        "cases": cases,
    }
    target = Path(__file__).resolve().parent.parent / "bridge" / "test" / "fixtures" / "tiny_golden.json"
    target.parent.mkdir(parents=True, exist_ok=True)
    target.write_text(json.dumps(out, indent=1) + "\n")
    print(f"wrote {target}")


if __name__ == "__main__":
    main()
