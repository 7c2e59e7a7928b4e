"""
Character and BPE subword tokenizers for CTC targets.

Every word ends with the "|" marker, so word boundaries survive decoding.
Id 0 is the CTC blank and is never produced by encode; tokens start at 1.
BPE merges are learned per word, most frequent pair first, ties going to the
lexicographically smallest pair.

Saved as text:
    kind <char|subword>
    vocab <token> <token> ...      (ids 1, 2, ... in order)
    merge <left> <right>           (one per line, in learned order)
"""

import logging
from collections import Counter
from pathlib import Path
from typing import Dict, Iterable, List, Sequence, Tuple, Union

from core.errors import TokenizerError

logger = logging.getLogger("lab.finetune.tokenizer")

BLANK_ID = 0
WORD_END = "|"


class Tokenizer:
    def __init__(self, kind: str, tokens: Sequence[str], merges: Sequence[Tuple[str, str]] = ()):
        if kind not in ("char", "subword"):
            raise TokenizerError(f"unknown tokenizer kind {kind!r}")
        self.kind = kind
        self.tokens: List[str] = list(tokens)
        self.merges: List[Tuple[str, str]] = [tuple(m) for m in merges]
        self.token_to_id: Dict[str, int] = {tok: i + 1 for i, tok in enumerate(self.tokens)}
        self._ranks = {pair: rank for rank, pair in enumerate(self.merges)}
        self._cache: Dict[str, List[str]] = {}

    @property
    def vocab_size(self) -> int:
        """Tokens, blank excluded"""
        return len(self.tokens)

    @property
    def num_outputs(self) -> int:
        """CTC output classes: tokens plus blank"""
        return len(self.tokens) + 1

    def _split_word(self, word: str) -> List[str]:
        if word in self._cache:
            return self._cache[word]
        symbols = list(word) + [WORD_END]
        unknown = [s for s in symbols if s not in self.token_to_id]
        if unknown:
            raise TokenizerError(f"characters {sorted(set(unknown))} are not in the tokenizer alphabet")
        while len(symbols) > 1 and self._ranks:
            ranked = [(self._ranks.get(pair, len(self._ranks)), i)
                      for i, pair in enumerate(zip(symbols, symbols[1:]))]
            rank, i = min(ranked)
            if rank == len(self._ranks):
                break
            symbols = symbols[:i] + [symbols[i] + symbols[i + 1]] + symbols[i + 2:]
        self._cache[word] = symbols
        return symbols

    def encode_tokens(self, text: str) -> List[str]:
        pieces = []
        for word in text.split():
            pieces.extend(self._split_word(word))
        return pieces

    def encode(self, text: str) -> List[int]:
        return [self.token_to_id[piece] for piece in self.encode_tokens(text)]

    def decode(self, ids: Iterable[int]) -> str:
        pieces = [self.tokens[i - 1] for i in ids if i != BLANK_ID]
        return " ".join(w for w in "".join(pieces).split(WORD_END) if w)

    def to_text(self) -> str:
        lines = [f"kind {self.kind}", "vocab " + " ".join(self.tokens)]
        lines += [f"merge {left} {right}" for left, right in self.merges]
        return "\n".join(lines) + "\n"

    def save(self, path: Union[str, Path]):
        Path(path).write_text(self.to_text())

    @classmethod
    def load(cls, path: Union[str, Path]) -> "Tokenizer":
        return cls.from_text(Path(path).read_text(), source=str(path))

    @classmethod
    def from_text(cls, text: str, source: str = "tokenizer") -> "Tokenizer":
        kind, tokens, merges = None, None, []
        for line in text.splitlines():
            key, _, rest = line.partition(" ")
            if key == "kind":
                kind = rest.strip()
            elif key == "vocab":
                tokens = rest.split()
            elif key == "merge":
                left, right = rest.split()
                merges.append((left, right))
        if kind is None or tokens is None:
            raise TokenizerError(f"{source}: missing 'kind' or 'vocab' line")
        return cls(kind, tokens, merges)


def _alphabet(lines: Sequence[str]) -> List[str]:
    chars = sorted({c for line in lines for c in line if not c.isspace()})
    if WORD_END in chars:
        raise TokenizerError(f"corpus uses the reserved word marker {WORD_END!r}")
    return chars + [WORD_END]


def _corpus(lines: Iterable[str]) -> List[str]:
    lines = [" ".join(line.split()) for line in lines]
    lines = [line for line in lines if line]
    if not lines:
        raise TokenizerError("cannot train a tokenizer on an empty corpus")
    return lines


def train_char_tokenizer(lines: Iterable[str]) -> Tokenizer:
    return Tokenizer("char", _alphabet(_corpus(lines)))


def train_subword_tokenizer(lines: Iterable[str], vocab_size: int) -> Tokenizer:
    corpus = _corpus(lines)
    alphabet = _alphabet(corpus)
    if vocab_size < len(alphabet):
        raise TokenizerError(f"vocab_size {vocab_size} is smaller than the alphabet ({len(alphabet)} symbols)")

    words = Counter(tuple(word) + (WORD_END,) for line in corpus for word in line.split())
    tokens = list(alphabet)
    known = set(tokens)
    merges: List[Tuple[str, str]] = []
    while len(tokens) < vocab_size:
        pairs: Counter = Counter()
        for symbols, freq in words.items():
            for pair in zip(symbols, symbols[1:]):
                pairs[pair] += freq
        if not pairs:
            break
        best = min(pairs, key=lambda p: (-pairs[p], p))
        merges.append(best)
        merged = best[0] + best[1]
        if merged not in known:
            known.add(merged)
            tokens.append(merged)
        words = Counter({_merge(symbols, best, merged): freq for symbols, freq in words.items()})

    logger.info(f"✅ BPE tokenizer: {len(tokens)} tokens from {len(merges)} merges")
    return Tokenizer("subword", tokens, merges)


def _merge(symbols: Tuple[str, ...], pair: Tuple[str, str], merged: str) -> Tuple[str, ...]:
    out = []
    i = 0
    while i < len(symbols):
        if i + 1 < len(symbols) and (symbols[i], symbols[i + 1]) == pair:
            out.append(merged)
            i += 2
        else:
            out.append(symbols[i])
            i += 1
    return tuple(out)


def build_tokenizer(kind: str, lines: Iterable[str], vocab_size: int = 1000) -> Tokenizer:
    if kind == "char":
        return train_char_tokenizer(lines)
    if kind == "subword":
        return train_subword_tokenizer(lines, vocab_size)
    raise TokenizerError(f"unknown tokenizer kind {kind!r}")
