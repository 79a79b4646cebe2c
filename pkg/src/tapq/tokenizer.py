"""Word-level vocabulary with reserved special tokens.

Specials occupy a contiguous id prefix: PAD=0, UNK=1, then the decode
and classification prefixes and ``mmax`` sentinel ids. PAD at id 0 keeps
mask construction cheap. Regular words follow, ordered by descending
frequency then lexicographically, so rebuilding on the same corpus gives
identical id assignments.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

from .corpus import SENTINEL_PREFIX, OcrDocument, is_special_form, sentinel_token
from .exceptions import CapacityError, ParseError, ValidationError

PAD_TOKEN = "<pad>"
UNK_TOKEN = "<unk>"
DEC_TOKEN = "<dec>"
CLS_TOKEN = "<cls>"

PAD_ID = 0
UNK_ID = 1
DEC_ID = 2
CLS_ID = 3
FIRST_EXTRA_ID = 4
_FIRST_EXTRA_ID = FIRST_EXTRA_ID


@dataclass(frozen=True)
class Vocabulary:
    """Immutable token <-> id mapping; safe to share across threads."""

    words: tuple[str, ...]
    mmax: int

    def __post_init__(self):
        if self.mmax < 1:
            raise ValidationError("vocabulary needs at least one sentinel id")
        if len(set(self.words)) != len(self.words):
            raise ValidationError("duplicate words in vocabulary")
        for w in self.words:
            if is_special_form(w):
                raise ValidationError(f"word {w!r} collides with special tokens")
        object.__setattr__(self, "_word_to_id", {
            w: self.n_special + i for i, w in enumerate(self.words)
        })

    @property
    def n_special(self) -> int:
        return _FIRST_EXTRA_ID + self.mmax

    @property
    def size(self) -> int:
        return self.n_special + len(self.words)

    def specials(self) -> dict[str, int]:
        table = {PAD_TOKEN: PAD_ID, UNK_TOKEN: UNK_ID, DEC_TOKEN: DEC_ID, CLS_TOKEN: CLS_ID}
        for i in range(self.mmax):
            table[sentinel_token(i)] = _FIRST_EXTRA_ID + i
        return table

    def extra_id(self, i: int) -> int:
        if not (0 <= i < self.mmax):
            raise CapacityError(f"sentinel index {i} outside reserved range 0..{self.mmax - 1}")
        return _FIRST_EXTRA_ID + i

    def is_sentinel_id(self, token_id: int) -> bool:
        return _FIRST_EXTRA_ID <= token_id < self.n_special

    def encode_word(self, word: str) -> int:
        if word.startswith(SENTINEL_PREFIX) and word.endswith(">"):
            digits = word[len(SENTINEL_PREFIX):-1]
            if digits.isdigit():
                return self.extra_id(int(digits))
            return UNK_ID
        if word == PAD_TOKEN:
            return PAD_ID
        if word == DEC_TOKEN:
            return DEC_ID
        if word == CLS_TOKEN:
            return CLS_ID
        return self._word_to_id.get(word, UNK_ID)

    def encode_words(self, words: Iterable[str]) -> list[int]:
        return [self.encode_word(w) for w in words]

    def decode_id(self, token_id: int) -> str:
        if token_id < 0 or token_id >= self.size:
            raise ValidationError(f"id {token_id} outside vocabulary of size {self.size}")
        if token_id == PAD_ID:
            return PAD_TOKEN
        if token_id == UNK_ID:
            return UNK_TOKEN
        if token_id == DEC_ID:
            return DEC_TOKEN
        if token_id == CLS_ID:
            return CLS_TOKEN
        if token_id < self.n_special:
            return sentinel_token(token_id - _FIRST_EXTRA_ID)
        return self.words[token_id - self.n_special]

    def encode_target(self, target: Sequence[tuple[int, str]]) -> list[int]:
        """Flatten (sentinel index, span text) pairs to an id sequence.

        Emits EXTRA_ID_i followed by the span's word ids, for every pair
        in order.
        """
        ids: list[int] = []
        for i, text in target:
            ids.append(self.extra_id(i))
            ids.extend(self.encode_word(w) for w in text.split())
        return ids

    def decode_target(self, ids: Sequence[int]) -> list[tuple[int, str]]:
        """Inverse of encode_target for in-vocabulary text."""
        pairs: list[tuple[int, str]] = []
        current: list[str] | None = None
        index = -1
        for token_id in ids:
            if self.is_sentinel_id(token_id):
                if current is not None:
                    pairs.append((index, " ".join(current)))
                index = token_id - _FIRST_EXTRA_ID
                current = []
            else:
                if current is None:
                    raise ValidationError("target ids must start with a sentinel")
                current.append(self.decode_id(token_id))
        if current is not None:
            pairs.append((index, " ".join(current)))
        return pairs

    def save(self, path: str | Path) -> None:
        payload = {"words": list(self.words), "specials": self.specials()}
        Path(path).write_text(json.dumps(payload), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "Vocabulary":
        try:
            payload = json.loads(Path(path).read_text(encoding="utf-8"))
            words = tuple(payload["words"])
            specials = payload["specials"]
        except (json.JSONDecodeError, KeyError) as exc:
            raise ParseError(f"malformed vocabulary file: {exc}") from exc
        mmax = sum(1 for name in specials if name.startswith("<extra_id_"))
        vocab = cls(words=words, mmax=mmax)
        if vocab.specials() != specials:
            raise ValidationError("special-token table does not match this format version")
        return vocab


def build_vocab(corpus: Iterable[OcrDocument], min_count: int = 1, mmax: int = 32) -> Vocabulary:
    """Collect corpus words with count >= min_count, deterministically ordered."""
    counts: Counter[str] = Counter()
    n_docs = 0
    for doc in corpus:
        n_docs += 1
        counts.update(doc.tokens)
    if n_docs == 0:
        raise ValidationError("cannot build a vocabulary from an empty corpus")
    kept = [w for w, c in counts.items() if c >= min_count]
    kept.sort(key=lambda w: (-counts[w], w))
    return Vocabulary(words=tuple(kept), mmax=mmax)
