"""PUF quality metrics: reliability, uniformity, uniqueness.

Single-bit responses are packed into fixed-width words (128 bits by
default, matching the evaluation convention of comparing 128 consecutive
responses as one word) and the three standard percentage metrics are
computed over those words.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

log = logging.getLogger(__name__)

DEFAULT_WORD_WIDTH = 128


@dataclass(eq=False)
class ResponseSet:
    """Packed response words for one device: shape (n_words, width) bools."""

    words: np.ndarray
    dropped_bits: int = 0

    def __post_init__(self) -> None:
        self.words = np.asarray(self.words, dtype=bool)
        if self.words.ndim != 2 or self.words.shape[1] < 1:
            raise ValueError("words must be a 2-d array with width >= 1")

    @property
    def n_words(self) -> int:
        return self.words.shape[0]

    @property
    def width(self) -> int:
        return self.words.shape[1]


def pack(bits, width: int = DEFAULT_WORD_WIDTH) -> ResponseSet:
    """Pack consecutive single-bit responses into words, order preserving.

    A trailing remainder shorter than one word is dropped; the count is
    recorded on the result and logged.
    """
    arr = np.asarray(bits, dtype=np.uint8).ravel()
    if arr.size == 0:
        raise ValueError("no responses to pack")
    if width < 1:
        raise ValueError("word width must be >= 1")
    n_words = arr.size // width
    dropped = arr.size - n_words * width
    if dropped:
        log.warning("dropping %d trailing responses (not a full %d-bit word)", dropped, width)
    return ResponseSet(arr[: n_words * width].reshape(n_words, width).astype(bool), dropped)


def hamming_distance(a: np.ndarray, b: np.ndarray) -> int:
    a = np.asarray(a, dtype=bool)
    b = np.asarray(b, dtype=bool)
    if a.shape != b.shape:
        raise ValueError(f"word widths differ: {a.shape} vs {b.shape}")
    return int(np.count_nonzero(a != b))


def reliability(reference: np.ndarray, repeats: list[np.ndarray] | np.ndarray) -> float:
    """Percentage agreement of repeated measurements with a reference word:
    ``100 * (1 - mean_i HD(reference, repeat_i) / width)``."""
    reference = np.asarray(reference, dtype=bool)
    repeats = [np.asarray(r, dtype=bool) for r in repeats]
    if not repeats:
        raise ValueError("need at least one repeat measurement")
    width = reference.size
    distances = [hamming_distance(reference, r) for r in repeats]
    return 100.0 * (1.0 - float(np.mean(distances)) / width)


def uniformity(word: np.ndarray) -> float:
    """Hamming weight of the word as a percentage of its width."""
    word = np.asarray(word, dtype=bool)
    if word.size < 1:
        raise ValueError("empty word")
    return 100.0 * float(np.count_nonzero(word)) / word.size


def uniformity_each(response_set: ResponseSet) -> np.ndarray:
    return 100.0 * response_set.words.mean(axis=1)


def uniqueness(words: np.ndarray) -> float:
    """Mean pairwise normalized Hamming distance across devices (one word
    per device), as a percentage: ``100 * 2/(N(N-1)) * sum_{i<j} HD/width``."""
    words = np.asarray(words, dtype=bool)
    if words.ndim != 2 or words.shape[0] < 2:
        raise ValueError("uniqueness needs words from at least two devices")
    n, width = words.shape
    total = 0.0
    for i in range(n - 1):
        total += (words[i + 1 :] != words[i]).sum(axis=1).sum() / width
    return 100.0 * 2.0 / (n * (n - 1)) * total


def word_hamming_distances(a: ResponseSet, b: ResponseSet) -> np.ndarray:
    """Per-word-index Hamming distances between two devices' responses to
    the same challenge sequence."""
    if a.width != b.width:
        raise ValueError(f"word widths differ: {a.width} vs {b.width}")
    if a.n_words != b.n_words:
        raise ValueError(f"word counts differ: {a.n_words} vs {b.n_words}")
    return (a.words != b.words).sum(axis=1)


def hamming_weight_histogram(values: np.ndarray, width: int) -> np.ndarray:
    """Counts per weight/distance bin 0..width (for histogram exports)."""
    values = np.asarray(values, dtype=np.int64)
    if np.any(values < 0) or np.any(values > width):
        raise ValueError("values outside [0, width]")
    return np.bincount(values, minlength=width + 1)
