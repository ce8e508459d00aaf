"""Set-partition enumeration via restricted growth strings."""

from __future__ import annotations

from functools import lru_cache
from typing import Callable, Iterator, Sequence


def restricted_growth_strings(n: int) -> Iterator[tuple[int, ...]]:
    """All restricted growth strings of length ``n`` in lexicographic order.

    ``a[0] = 0`` and ``a[i] <= 1 + max(a[:i])``; each string labels the block
    of every position, so there is one string per set partition.
    """
    if n == 0:
        yield ()
        return
    a = [0] * n
    m = [0] * n  # m[i] = max(a[:i+1])
    while True:
        yield tuple(a)
        i = n - 1
        while i > 0 and a[i] > m[i - 1]:
            i -= 1
        if i == 0:
            return
        a[i] += 1
        m[i] = max(m[i - 1], a[i])
        for j in range(i + 1, n):
            a[j] = 0
            m[j] = m[i]


def partitions(items: Sequence, can_grow: Callable[[list], bool] | None = None,
               ) -> Iterator[list[list]]:
    """Yield set partitions of ``items`` as lists of blocks, in RGS order.

    ``can_grow(block)`` is asked before a block receives another element; it
    must be monotone (a rejected block stays rejected when enlarged) so whole
    subtrees can be skipped.
    """
    items = list(items)
    n = len(items)
    blocks: list[list] = []

    def rec(pos):
        if pos == n:
            yield [b[:] for b in blocks]
            return
        x = items[pos]
        for b in blocks:
            b.append(x)
            if can_grow is None or can_grow(b):
                yield from rec(pos + 1)
            b.pop()
        blocks.append([x])
        yield from rec(pos + 1)
        blocks.pop()

    yield from rec(0)


@lru_cache(maxsize=64)
def admissible_split_patterns(n: int, K: int) -> tuple[tuple[tuple[int, ...], ...], ...]:
    """Index patterns for every split of an n-set into >= 2 blocks of size 1 or > K.

    Ordered by number of blocks, then lexicographically on the block tuples
    (blocks listed by smallest index).
    """
    out = []
    for blocks in partitions(range(n)):
        if len(blocks) < 2:
            continue
        if all(len(b) == 1 or len(b) > K for b in blocks):
            out.append(tuple(tuple(b) for b in blocks))
    out.sort(key=lambda p: (len(p), p))
    return tuple(out)


def admissible_splits(S: Sequence[int], K: int) -> Iterator[tuple[tuple[int, ...], ...]]:
    """Admissible splits of the sorted coalition ``S`` in deterministic order."""
    S = tuple(S)
    for pattern in admissible_split_patterns(len(S), K):
        yield tuple(tuple(S[j] for j in block) for block in pattern)
