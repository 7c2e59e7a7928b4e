"""
CTC decoding without a language model.

beam=1 is the frame-argmax path collapsed. For beam > 1 a prefix beam search
proposes candidate labelings; those and the greedy labeling are rescored by
their exact CTC probability (sum over all alignments) and the best one wins,
so a wider beam never returns a less likely labeling than greedy.
"""

from collections import defaultdict
from typing import Dict, List, Sequence, Tuple

import numpy as np
import torch

from finetune.tokenizer import BLANK_ID

NEG_INF = -np.inf


def collapse(path: Sequence[int], blank: int = BLANK_ID) -> List[int]:
    """Merge repeats, then drop blanks"""
    out = []
    prev = None
    for token in path:
        if token != prev and token != blank:
            out.append(int(token))
        prev = token
    return out


def _log_probs(logits) -> np.ndarray:
    if isinstance(logits, torch.Tensor):
        return torch.log_softmax(logits.detach().double(), dim=-1).cpu().numpy()
    logits = np.asarray(logits, dtype=np.float64)
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def greedy_decode(logits) -> List[int]:
    return collapse(np.argmax(_log_probs(logits), axis=-1).tolist())


def sequence_log_prob(log_probs: np.ndarray, target: Sequence[int], blank: int = BLANK_ID) -> float:
    """log p(target | frames) by the CTC forward recursion; -inf if infeasible"""
    num_frames = len(log_probs)
    if not len(target):
        return float(log_probs[:, blank].sum())
    ext = [blank]
    for tok in target:
        ext += [int(tok), blank]
    states = len(ext)
    alpha = np.full(states, NEG_INF)
    alpha[0] = log_probs[0, blank]
    alpha[1] = log_probs[0, ext[1]]
    for t in range(1, num_frames):
        prev = alpha
        alpha = np.full(states, NEG_INF)
        for s in range(states):
            acc = prev[s]
            if s >= 1:
                acc = np.logaddexp(acc, prev[s - 1])
            if s >= 2 and ext[s] != blank and ext[s] != ext[s - 2]:
                acc = np.logaddexp(acc, prev[s - 2])
            alpha[s] = acc + log_probs[t, ext[s]]
    return float(np.logaddexp(alpha[-1], alpha[-2]))


def prefix_beam_search(log_probs: np.ndarray, beam: int, blank: int = BLANK_ID) -> List[Tuple[Tuple[int, ...], float]]:
    """Top `beam` prefixes with their merged (blank, non-blank) log scores"""
    beams: Dict[Tuple[int, ...], Tuple[float, float]] = {(): (0.0, NEG_INF)}
    num_classes = log_probs.shape[1]
    for t in range(len(log_probs)):
        frame = log_probs[t]
        nxt: Dict[Tuple[int, ...], List[float]] = defaultdict(lambda: [NEG_INF, NEG_INF])
        for prefix, (p_b, p_nb) in beams.items():
            total = np.logaddexp(p_b, p_nb)
            # blank extends without changing the prefix
            entry = nxt[prefix]
            entry[0] = np.logaddexp(entry[0], total + frame[blank])
            last = prefix[-1] if prefix else None
            for c in range(num_classes):
                if c == blank:
                    continue
                p = frame[c]
                if c == last:
                    # repeat collapses onto the same prefix unless a blank intervened
                    entry[1] = np.logaddexp(entry[1], p_nb + p)
                    ext = nxt[prefix + (c,)]
                    ext[1] = np.logaddexp(ext[1], p_b + p)
                else:
                    ext = nxt[prefix + (c,)]
                    ext[1] = np.logaddexp(ext[1], total + p)
        ranked = sorted(nxt.items(), key=lambda kv: (-np.logaddexp(*kv[1]), kv[0]))[:beam]
        beams = {prefix: (scores[0], scores[1]) for prefix, scores in ranked}
    return [(prefix, float(np.logaddexp(*scores))) for prefix, scores in beams.items()]


def viterbi_decode(logits, beam: int = 1) -> List[int]:
    if beam < 1:
        raise ValueError("beam must be >= 1")
    greedy = greedy_decode(logits)
    if beam == 1:
        return greedy
    log_probs = _log_probs(logits)
    candidates = {tuple(greedy)}
    candidates.update(prefix for prefix, _ in prefix_beam_search(log_probs, beam))
    scored = sorted((-sequence_log_prob(log_probs, c), c) for c in candidates)
    return list(scored[0][1])


def decode_batch(logits: torch.Tensor, lengths: Sequence[int], beam: int = 1) -> List[List[int]]:
    """Per-utterance decoding of a padded (B, T, V+1) batch"""
    return [viterbi_decode(logits[i, :int(n)], beam) for i, n in enumerate(lengths)]
