"""Fixed 14-symbol character vocabulary for serialized coefficient rows.

The rows only ever contain digits, the decimal point, the minus sign, the
field separator, and the line terminator, so generative models work over this
closed alphabet rather than full byte space.
"""
from __future__ import annotations

import numpy as np

from .errors import CorpusError

CHARS = "0123456789.-,\n"

_BYTE_TABLE = np.full(256, -1, dtype=np.int64)
for _i, _c in enumerate(CHARS):
    _BYTE_TABLE[ord(_c)] = _i


class CharVocab:
    """Bidirectional char/index mapping over the fixed row alphabet."""

    def __init__(self) -> None:
        self.chars = CHARS
        self.size = len(CHARS)
        self.stoi = {c: i for i, c in enumerate(CHARS)}
        self.itos = CHARS

    def encode(self, text: str) -> np.ndarray:
        """Map text to an int64 index array; unknown characters are an error."""
        raw = np.frombuffer(text.encode("utf-8"), dtype=np.uint8)
        ids = _BYTE_TABLE[raw]
        if len(ids) != len(text) or (ids < 0).any():
            for pos, ch in enumerate(text):
                if ch not in self.stoi:
                    raise CorpusError(
                        f"character {ch!r} at position {pos} is outside the row alphabet"
                    )
        return ids

    def decode(self, ids) -> str:
        out = []
        for i in ids:
            i = int(i)
            if not 0 <= i < self.size:
                raise CorpusError(f"symbol id {i} is outside the row alphabet")
            out.append(self.itos[i])
        return "".join(out)


VOCAB = CharVocab()
NEWLINE_ID = VOCAB.stoi["\n"]
