"""Word error rate."""

from typing import Iterable, List, Sequence, Tuple, Union

from editdistance import eval as levenshtein

from core.errors import EmptyReferenceError

Words = Union[str, Sequence[str]]


def _words(x: Words) -> List[str]:
    return x.split() if isinstance(x, str) else list(x)


def word_errors(hyp: Words, ref: Words) -> int:
    return levenshtein(_words(hyp), _words(ref))


def wer(hyp: Words, ref: Words) -> float:
    ref_words = _words(ref)
    if not ref_words:
        raise EmptyReferenceError()
    return word_errors(hyp, ref_words) / len(ref_words)


def corpus_wer(pairs: Iterable[Tuple[Words, Words]]) -> Tuple[float, int, int]:
    """(errors / reference words, errors, reference words) over (hyp, ref) pairs"""
    errors = words = 0
    for hyp, ref in pairs:
        ref_words = _words(ref)
        errors += word_errors(hyp, ref_words)
        words += len(ref_words)
    if words == 0:
        raise EmptyReferenceError()
    return errors / words, errors, words
