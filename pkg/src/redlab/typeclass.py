"""Type-class enumeration of ``A^n``.

Every length function in this package depends on a sequence only through its
sufficient statistics: symbol counts (memoryless) or initial symbol plus
transition counts (Markov).  A :class:`TypeTable` lists the distinct statistic
vectors together with the log of how many sequences share each one.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from itertools import combinations

import numpy as np
from scipy.special import gammaln

from .family import Kind, ParamFamily, all_sequences, sufficient_stats

#: Largest number of classes enumerated exactly.
DEFAULT_BUDGET = 10**6


class BudgetExceeded(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class TypeTable:
    family: ParamFamily
    n: int
    stats: np.ndarray  # (T, stat_dim) int64
    log_mult: np.ndarray  # (T,) natural log of class sizes
    sequences: np.ndarray | None = None  # (T, n) when every class is a single sequence

    @property
    def size(self) -> int:
        return int(self.stats.shape[0])

    @property
    def is_naive(self) -> bool:
        return self.sequences is not None

    def log_prob(self, log_params: np.ndarray) -> np.ndarray:
        """Natural-log probability of one member of each class.

        ``log_params`` is ``(D,)`` or ``(B, D)``; the result is ``(T,)`` or ``(T, B)``.
        Zero-probability parameters give ``-inf`` without ``0 * inf`` artefacts.
        """
        L = np.asarray(log_params, dtype=float)
        single = L.ndim == 1
        L2 = np.atleast_2d(L)
        finite = np.where(np.isfinite(L2), L2, 0.0)
        out = self.stats @ finite.T
        impossible = (self.stats > 0).astype(float) @ (~np.isfinite(L2)).astype(float).T
        out = np.where(impossible > 0, -np.inf, out)
        return out[:, 0] if single else out


def count_memoryless_types(k: int, n: int) -> int:
    return math.comb(n + k - 1, k - 1)


def _compositions(n: int, k: int) -> np.ndarray:
    """All ``k``-part weak compositions of ``n`` (stars and bars), shape ``(C, k)``."""
    if k == 1:
        return np.array([[n]], dtype=np.int64)
    bars = np.array(list(combinations(range(n + k - 1), k - 1)), dtype=np.int64)
    if bars.size == 0:
        bars = bars.reshape(0, k - 1)
    padded = np.concatenate(
        [np.full((bars.shape[0], 1), -1, dtype=np.int64), bars, np.full((bars.shape[0], 1), n + k - 1, dtype=np.int64)],
        axis=1,
    )
    return np.diff(padded, axis=1) - 1


def _memoryless_table(family: ParamFamily, n: int) -> TypeTable:
    counts = _compositions(n, family.k)
    log_mult = gammaln(n + 1) - gammaln(counts + 1).sum(axis=1)
    return TypeTable(family, n, counts, log_mult)


@lru_cache(maxsize=32)
def _markov_classes(k: int, n: int, budget: int) -> tuple[tuple[tuple[int, ...], int], ...]:
    # state: (first, last, transition counts) -> number of sequences
    states: dict[tuple[int, int, tuple[int, ...]], int] = {(s, s, (0,) * (k * k)): 1 for s in range(k)}
    for _ in range(n - 1):
        nxt: dict[tuple[int, int, tuple[int, ...]], int] = {}
        for (first, last, counts), mult in states.items():
            for j in range(k):
                c = list(counts)
                c[last * k + j] += 1
                key = (first, j, tuple(c))
                nxt[key] = nxt.get(key, 0) + mult
        if len(nxt) > budget:
            raise BudgetExceeded(f"markov1:{k} with n={n} has more than {budget} transition classes")
        states = nxt
    # the last symbol is determined by (first, counts), so dropping it loses nothing
    merged: dict[tuple[int, ...], int] = {}
    for (first, _last, counts), mult in states.items():
        key = (first,) + counts
        merged[key] = merged.get(key, 0) + mult
    return tuple(sorted(merged.items()))


def _markov_table(family: ParamFamily, n: int, budget: int) -> TypeTable:
    k = family.k
    classes = _markov_classes(k, n, budget)
    stats = np.zeros((len(classes), k + k * k), dtype=np.int64)
    log_mult = np.empty(len(classes))
    for row, (key, mult) in enumerate(classes):
        stats[row, key[0]] = 1
        stats[row, k:] = key[1:]
        log_mult[row] = math.log(mult)
    return TypeTable(family, n, stats, log_mult)


def type_table(family: ParamFamily, n: int, budget: int = DEFAULT_BUDGET) -> TypeTable:
    """Exact type-class table; raises :class:`BudgetExceeded` beyond ``budget`` classes."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if family.kind is Kind.MEMORYLESS:
        if count_memoryless_types(family.k, n) > budget:
            raise BudgetExceeded(f"{family} with n={n} has more than {budget} type classes")
        return _memoryless_table(family, n)
    return _markov_table(family, n, budget)


def sequence_table(family: ParamFamily, n: int, budget: int = DEFAULT_BUDGET) -> TypeTable:
    """Every sequence as its own class (the naive enumeration)."""
    if family.k**n > budget:
        raise BudgetExceeded(f"{family.k}^{n} sequences exceed the budget {budget}")
    X = all_sequences(family.k, n)
    return TypeTable(family, n, sufficient_stats(family, X), np.zeros(X.shape[0]), X)
