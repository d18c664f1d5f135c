"""Shadow masks from (shadow, generated shadow-free) pairs and the mask replay queue."""
from __future__ import annotations

from collections import deque
from typing import Iterable

import numpy as np


def difference_gray(shadow: np.ndarray, shadowfree: np.ndarray) -> np.ndarray:
    """Channel-mean of ``shadowfree - shadow`` mapped from [0, 2] onto 8-bit gray."""
    shadow = np.asarray(shadow, dtype=np.float64)
    shadowfree = np.asarray(shadowfree, dtype=np.float64)
    if shadow.shape != shadowfree.shape:
        raise ValueError(f"image shapes differ: {shadow.shape} vs {shadowfree.shape}")
    diff = (shadowfree - shadow).mean(axis=-1)
    diff = np.clip(diff, 0.0, 2.0)
    return np.floor(diff * 127.5 + 0.5).astype(np.uint8)


def histogram(gray: np.ndarray) -> np.ndarray:
    return np.bincount(np.asarray(gray, dtype=np.uint8).ravel(), minlength=256)


def otsu_threshold(hist: Iterable[int]) -> int:
    """Threshold t maximizing between-class variance for classes ``<= t`` and ``> t``.

    Comparison is exact (integer arithmetic): with n0, s0 the count and
    intensity sum of the lower class, the between-class variance is
    proportional to ``(N*s0 - S*n0)**2 / (n0*n1)``. Ties go to the smallest t.
    A histogram with a single occupied bin returns that bin.
    """
    counts = [int(c) for c in hist]
    if len(counts) != 256:
        raise ValueError(f"expected 256 bins, got {len(counts)}")
    if any(c < 0 for c in counts):
        raise ValueError("histogram counts must be non-negative")
    total = sum(counts)
    if total == 0:
        raise ValueError("empty histogram")
    occupied = [i for i, c in enumerate(counts) if c]
    if len(occupied) == 1:
        return occupied[0]

    grand = sum(i * c for i, c in enumerate(counts))
    best_t, best_num, best_den = 0, -1, 1
    n0 = s0 = 0
    for t in range(256):
        n0 += counts[t]
        s0 += t * counts[t]
        n1 = total - n0
        if n0 == 0 or n1 == 0:
            num, den = 0, 1
        else:
            num, den = (total * s0 - grand * n0) ** 2, n0 * n1
        if num * best_den > best_num * den:
            best_t, best_num, best_den = t, num, den
    return best_t


def make_mask(shadow: np.ndarray, shadowfree: np.ndarray) -> np.ndarray:
    """Binary mask: 1 where the gray difference exceeds its Otsu threshold."""
    gray = difference_gray(shadow, shadowfree)
    t = otsu_threshold(histogram(gray))
    return (gray > t).astype(np.uint8)


def zero_mask(h: int, w: int) -> np.ndarray:
    if h <= 0 or w <= 0:
        raise ValueError(f"mask dimensions must be positive, got {h}x{w}")
    return np.zeros((h, w), dtype=np.uint8)


def queue_capacity(n_shadow: int) -> int:
    """A quarter of the shadow training set, at least one."""
    return max(1, n_shadow // 4)


class QueueEmpty(LookupError):
    pass


class MaskQueue:
    """Bounded FIFO of masks; pushing past capacity evicts the oldest."""

    def __init__(self, capacity: int, entries: Iterable[np.ndarray] = ()):
        if capacity < 1:
            raise ValueError("capacity must be at least 1")
        self.capacity = capacity
        self._entries: deque[np.ndarray] = deque(maxlen=capacity)
        for m in entries:
            self.push(m)

    def __len__(self) -> int:
        return len(self._entries)

    def __iter__(self):
        return iter(self._entries)

    def push(self, mask: np.ndarray) -> None:
        self._entries.append(np.array(mask, dtype=np.uint8, copy=True))

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        if not self._entries:
            raise QueueEmpty("mask queue is empty")
        return self._entries[int(rng.integers(len(self._entries)))]

    def to_state(self) -> dict:
        return {"capacity": self.capacity, "entries": [rle_encode(m) for m in self._entries]}

    @classmethod
    def from_state(cls, state: dict) -> "MaskQueue":
        return cls(state["capacity"], (rle_decode(e) for e in state["entries"]))


def rle_encode(mask: np.ndarray) -> dict:
    """Run lengths over the row-major flattening, starting with a run of zeros."""
    flat = np.asarray(mask, dtype=np.uint8).ravel()
    change = np.flatnonzero(np.diff(flat)) + 1
    bounds = np.concatenate(([0], change, [flat.size]))
    runs = np.diff(bounds).tolist()
    if flat.size and flat[0] == 1:
        runs = [0] + runs
    return {"shape": list(mask.shape), "runs": runs}


def rle_decode(enc: dict) -> np.ndarray:
    values = np.arange(len(enc["runs"])) % 2
    flat = np.repeat(values.astype(np.uint8), enc["runs"])
    return flat.reshape(enc["shape"])
