"""Closed vocabulary with reserved special tokens and a content fingerprint.

File format: UTF-8 text, one surface per line, line number = token id.
Lines 0 and 1 are reserved for ``<bos>`` and ``<unk>``. A line ``<eos>``
anywhere in the file marks the end-of-sequence token (optional).
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Iterable, Sequence

BOS_SURFACE = "<bos>"
UNK_SURFACE = "<unk>"
EOS_SURFACE = "<eos>"

BOS_ID = 0
UNK_ID = 1


class VocabularyError(ValueError):
    pass


def _fingerprint(surfaces: Sequence[str]) -> str:
    h = hashlib.sha256()
    for s in surfaces:
        h.update(s.encode("utf-8"))
        h.update(b"\n")
    return h.hexdigest()


@dataclass(frozen=True)
class Vocabulary:
    """Ordered token surfaces; index = token id."""

    surfaces: tuple[str, ...]
    fingerprint: str = field(init=False)

    def __post_init__(self):
        if len(self.surfaces) < 2:
            raise VocabularyError("vocabulary must contain the reserved <bos> and <unk> tokens")
        if self.surfaces[BOS_ID] != BOS_SURFACE or self.surfaces[UNK_ID] != UNK_SURFACE:
            raise VocabularyError(
                f"ids 0 and 1 are reserved for {BOS_SURFACE!r} and {UNK_SURFACE!r}"
            )
        if len(set(self.surfaces)) != len(self.surfaces):
            raise VocabularyError("token surfaces must be unique")
        if any(not s for s in self.surfaces):
            raise VocabularyError("token surfaces must be non-empty")
        object.__setattr__(self, "fingerprint", _fingerprint(self.surfaces))
        ids = {s: i for i, s in enumerate(self.surfaces)}
        object.__setattr__(self, "_ids", ids)

    def __len__(self) -> int:
        return len(self.surfaces)

    @property
    def eos_id(self) -> int | None:
        return self._ids.get(EOS_SURFACE)

    def id_of(self, surface: str) -> int:
        return self._ids.get(surface, UNK_ID)

    def surface_of(self, token_id: int) -> str:
        self.check_id(token_id)
        return self.surfaces[token_id]

    def check_id(self, token_id: int) -> None:
        if not 0 <= token_id < len(self.surfaces):
            raise VocabularyError(f"token id {token_id} out of range for vocabulary of size {len(self)}")

    def encode(self, text: str) -> list[int]:
        """Whitespace tokenization; unknown surfaces map to <unk>."""
        return [self.id_of(w) for w in text.split()]

    def decode(self, ids: Iterable[int]) -> str:
        return " ".join(self.surface_of(i) for i in ids)


def build_vocabulary(surfaces: Iterable[str]) -> Vocabulary:
    """Vocabulary from non-special surfaces, specials prepended in reserved slots."""
    seen: dict[str, None] = {}
    for s in surfaces:
        if s in (BOS_SURFACE, UNK_SURFACE):
            continue
        seen.setdefault(s)
    return Vocabulary((BOS_SURFACE, UNK_SURFACE, *seen))


def vocabulary_from_corpus(text: str) -> Vocabulary:
    return build_vocabulary(sorted(set(text.split())))


def load_vocabulary(path) -> Vocabulary:
    with open(path, encoding="utf-8") as f:
        lines = f.read().splitlines()
    return Vocabulary(tuple(lines))


def save_vocabulary(vocab: Vocabulary, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write("\n".join(vocab.surfaces))
        f.write("\n")
