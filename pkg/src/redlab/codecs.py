"""Length functions: ideal, two-stage, conditional two-stage and Jeffreys mixture.

Every model offers two evaluation paths that share no arithmetic beyond the
estimate grid and the tie-breaking rule:

* ``lengths(X)`` works symbol by symbol on explicit sequences;
* ``type_lengths(table)`` works on sufficient statistics of type classes.

Lengths are Shannon-ideal (non-integer) bits.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
from dataclasses import dataclass, field
from itertools import product
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import stats
from scipy.special import gammaln

from .family import (
    LN2,
    FamilyError,
    Kind,
    ParamFamily,
    ParamVector,
    SequenceSample,
    _check_same_family,
    seq_log_prob_batch,
    stationary_distribution,
)
from .typeclass import DEFAULT_BUDGET, BudgetExceeded, TypeTable, sequence_table, type_table

MAX_GRID_BITS = 24
CACHE_FORMAT_VERSION = 1


# -- estimate grid -------------------------------------------------------------


def _bits_per_dimension(m: int, d: int) -> list[int]:
    base, extra = divmod(m, d)
    return [base + (j < extra) for j in range(d)]


def _stick_quantiles(bits: int, remaining: int) -> np.ndarray:
    """Jeffreys quantile midpoints for one stick-breaking fraction.

    The fraction taken from a stick with ``remaining`` further symbols is
    Beta(1/2, remaining/2) under the Dirichlet(1/2) prior.
    """
    count = 2**bits
    u = (2 * np.arange(1, count + 1) - 1) / (2.0 * count)
    if remaining == 1:
        # arcsine law, closed form
        return np.sin(np.pi * u / 2) ** 2
    return stats.beta.ppf(u, 0.5, remaining / 2.0)


def _sticks_to_probs(fracs: np.ndarray) -> np.ndarray:
    """Reverse stick breaking: the first fraction is the probability of the last symbol."""
    k = fracs.shape[-1] + 1
    probs = np.empty(fracs.shape[:-1] + (k,))
    rest = np.ones(fracs.shape[:-1])
    for r in range(k - 1):
        probs[..., k - 1 - r] = rest * fracs[..., r]
        rest = rest * (1.0 - fracs[..., r])
    probs[..., 0] = rest
    return probs


@dataclass(frozen=True, eq=False)
class EstimateGrid:
    """The ``2^m`` estimate points; a point's position is its first-stage codeword."""

    family: ParamFamily
    m: int
    points: np.ndarray  # (2^m,) + family.param_shape

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.shape[0] != 2**self.m or pts.shape[1:] != self.family.param_shape:
            raise FamilyError(f"grid with m={self.m} needs {2**self.m} points of shape {self.family.param_shape}")
        if np.any(pts <= 0) or np.any(np.abs(pts.sum(axis=-1) - 1.0) > 1e-12):
            raise FamilyError("grid points must be interior probability vectors")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    def __len__(self) -> int:
        return self.points.shape[0]

    def point(self, index: int) -> ParamVector:
        return ParamVector(self.family, self.points[index])

    def __iter__(self):
        return (self.point(i) for i in range(len(self)))

    def log_params(self) -> np.ndarray:
        """Per-point natural-log parameters aligned with sufficient statistics, ``(G, D)``."""
        logs = np.log(self.points)
        if self.family.kind is Kind.MEMORYLESS:
            return logs
        pi = stationary_distribution(self.points)
        return np.concatenate([np.log(pi), logs.reshape(len(self), -1)], axis=1)

    @property
    def fingerprint(self) -> str:
        return hashlib.sha256(self.points.tobytes()).hexdigest()[:16]

    def to_dict(self) -> dict:
        return {
            "format_version": CACHE_FORMAT_VERSION,
            "family": self.family.to_dict(),
            "m": self.m,
            "points": self.points.reshape(len(self), -1).tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "EstimateGrid":
        fam = ParamFamily(Kind(data["family"]["kind"]), data["family"]["k"])
        pts = np.asarray(data["points"], dtype=float).reshape((-1,) + fam.param_shape)
        return cls(fam, int(data["m"]), pts)


def build_grid(family: ParamFamily, m: int) -> EstimateGrid:
    """Jeffreys-quantile lattice with ``2^m`` points.

    Each free coordinate is a stick-breaking fraction (per row, for Markov
    families).  Coordinate ``j`` receives ``floor(m/d)`` bits, plus one for the
    first ``m mod d`` coordinates, and is placed at the midpoints of equal
    Jeffreys-probability intervals.  Points are enumerated with the last
    coordinate varying fastest.  For a binary memoryless family the coordinate
    is ``P(1)``.
    """
    if m < 0:
        raise ValueError("m must be >= 0")
    if m > MAX_GRID_BITS:
        raise ValueError(f"m={m} exceeds the supported maximum {MAX_GRID_BITS}")
    k = family.k
    bits = _bits_per_dimension(m, family.d)
    axes = [_stick_quantiles(b, k - 1 - (j % (k - 1))) for j, b in enumerate(bits)]
    fracs = np.array(list(product(*axes)), dtype=float).reshape(2**m, family.d)
    if family.kind is Kind.MEMORYLESS:
        pts = _sticks_to_probs(fracs)
    else:
        pts = _sticks_to_probs(fracs.reshape(2**m, k, k - 1))
    return EstimateGrid(family, m, pts)


def single_point_grid(theta: ParamVector) -> EstimateGrid:
    """Degenerate ``m = 0`` grid holding one point."""
    return EstimateGrid(theta.family, 0, theta.probs[None])


# -- ML estimate ---------------------------------------------------------------


def select_estimate(loglik: np.ndarray) -> np.ndarray:
    """Row-wise argmax over grid points with ties going to the lowest index.

    Values within a relative ``1e-10`` of the maximum count as ties, so
    likelihoods equal in exact arithmetic are not split by rounding.
    """
    loglik = np.atleast_2d(loglik)
    best = loglik.max(axis=1, keepdims=True)
    tol = 1e-10 * (1.0 + np.abs(best))
    return np.argmax(loglik >= best - tol, axis=1)


def _grid_loglik_symbols(grid: EstimateGrid, X: np.ndarray) -> np.ndarray:
    """``(N, G)`` log2-likelihoods of sequences under every grid point, symbol by symbol."""
    X = np.atleast_2d(X)
    return np.stack([seq_log_prob_batch(p, X) for p in grid], axis=1)


def _grid_loglik_types(grid: EstimateGrid, table: TypeTable) -> np.ndarray:
    return table.log_prob(grid.log_params()) / LN2


def ml_estimate(x: SequenceSample, grid: EstimateGrid) -> tuple[int, ParamVector]:
    """Grid point of maximum likelihood for ``x`` (lowest index on ties)."""
    if x.family != grid.family:
        raise FamilyError("sequence and grid families differ")
    idx = int(select_estimate(_grid_loglik_symbols(grid, x.symbols))[0])
    return idx, grid.point(idx)


# -- partition -----------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Partition:
    """Cells ``S_m(gamma)`` and their self-masses ``A_m(gamma)``.

    ``assign[t]`` is the grid index owning class ``t`` of ``table``; ``mass``
    holds ``A_m`` per grid point (0 for points whose cell is empty).
    """

    grid: EstimateGrid
    n: int
    mass: np.ndarray
    mode: str
    table: TypeTable | None = field(default=None, repr=False)
    assign: np.ndarray | None = field(default=None, repr=False)

    def cells(self) -> dict[int, np.ndarray]:
        if self.assign is None:
            raise ValueError("partition was loaded without membership data")
        return {g: np.flatnonzero(self.assign == g) for g in np.unique(self.assign)}

    def log2_mass(self, index: np.ndarray) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return np.log2(self.mass[index])

    def to_dict(self) -> dict:
        return {
            "format_version": CACHE_FORMAT_VERSION,
            "family": self.grid.family.to_dict(),
            "n": self.n,
            "m": self.grid.m,
            "grid_fingerprint": self.grid.fingerprint,
            "mode": self.mode,
            "mass": self.mass.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict, grid: EstimateGrid) -> "Partition":
        if data.get("format_version") != CACHE_FORMAT_VERSION:
            raise ValueError("unsupported partition cache format")
        if data["grid_fingerprint"] != grid.fingerprint:
            raise ValueError("partition cache does not belong to this grid")
        return cls(grid, int(data["n"]), np.asarray(data["mass"], dtype=float), data["mode"])


def partition(grid: EstimateGrid, n: int, mode: str = "types", budget: int = DEFAULT_BUDGET) -> Partition:
    """Exact partition of ``A^n`` into ML cells.

    ``mode="types"`` aggregates type classes with their multiplicities;
    ``mode="naive"`` visits every sequence individually.  Raises
    :class:`BudgetExceeded` when the instance is too large for exact
    enumeration (see :func:`redlab.eval.partition_monte_carlo`).
    """
    if mode == "types":
        table = type_table(grid.family, n, budget)
        ll = _grid_loglik_types(grid, table)
        log_mult = table.log_mult
    elif mode == "naive":
        table = sequence_table(grid.family, n, budget)
        ll = _grid_loglik_symbols(grid, table.sequences)
        log_mult = np.zeros(table.size)
    else:
        raise ValueError(f"unknown partition mode {mode!r}")
    assign = select_estimate(ll)
    own = ll[np.arange(ll.shape[0]), assign]
    weights = np.exp(log_mult + own * LN2)
    mass = np.bincount(assign, weights=weights, minlength=len(grid))
    return Partition(grid, n, mass, mode, table, assign)


def _cache_dir() -> Path | None:
    root = os.environ.get("REDLAB_CACHE_DIR")
    return Path(root) if root else None


def cached_partition(grid: EstimateGrid, n: int, budget: int = DEFAULT_BUDGET) -> Partition:
    """:func:`partition` backed by a JSON cache under ``$REDLAB_CACHE_DIR`` when set.

    Cached partitions carry only the masses, which is all a length function needs.
    """
    root = _cache_dir()
    if root is None:
        return partition(grid, n, budget=budget)
    path = root / f"partition-{grid.family.kind.value}-{grid.family.k}-n{n}-m{grid.m}-{grid.fingerprint}.json"
    if path.exists():
        try:
            return Partition.from_dict(json.loads(path.read_text()), grid)
        except (ValueError, KeyError):
            pass
    part = partition(grid, n, budget=budget)
    root.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(part.to_dict()))
    return part


# -- length models -------------------------------------------------------------


class LengthModel:
    """Base for code-length functions over ``A^n`` (bits)."""

    kind: str = "abstract"
    family: ParamFamily

    def lengths(self, X: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def type_lengths(self, table: TypeTable) -> np.ndarray:
        raise NotImplementedError

    def length(self, x: SequenceSample) -> float:
        if x.family != self.family:
            raise FamilyError("sequence family does not match the model")
        return float(self.lengths(x.symbols[None, :])[0])

    def describe(self) -> dict:
        return {"kind": self.kind, "family": str(self.family)}


class IdealCode(LengthModel):
    """Shannon code matched to a known parameter."""

    kind = "ideal"

    def __init__(self, theta: ParamVector):
        self.theta = theta
        self.family = theta.family

    def lengths(self, X):
        return -seq_log_prob_batch(self.theta, X)

    def type_lengths(self, table):
        return -table.log_prob(self.theta.log_params) / LN2

    def describe(self):
        return super().describe() | {"theta": self.theta.probs.ravel().tolist()}


class TwoStageCode(LengthModel):
    """``m`` bits naming the ML grid point, then the Shannon code of that point."""

    kind = "two_stage"

    def __init__(self, grid: EstimateGrid):
        self.grid = grid
        self.family = grid.family

    @property
    def m(self) -> int:
        return self.grid.m

    def lengths(self, X):
        ll = _grid_loglik_symbols(self.grid, X)
        idx = select_estimate(ll)
        return self.m - ll[np.arange(ll.shape[0]), idx]

    def type_lengths(self, table):
        ll = _grid_loglik_types(self.grid, table)
        idx = select_estimate(ll)
        return self.m - ll[np.arange(ll.shape[0]), idx]

    def estimate(self, X: np.ndarray) -> np.ndarray:
        return select_estimate(_grid_loglik_symbols(self.grid, X))

    def describe(self):
        return super().describe() | {"m": self.m}


class CondTwoStageCode(TwoStageCode):
    """Two-stage code whose second stage is normalised to the ML cell."""

    kind = "cond_two_stage"

    def __init__(self, grid: EstimateGrid, n: int, part: Partition | None = None):
        super().__init__(grid)
        self.n = n
        if part is not None and (part.n != n or part.grid is not grid and part.grid.fingerprint != grid.fingerprint):
            raise ValueError("partition was built for a different grid or length")
        self._partition = part

    @property
    def partition(self) -> Partition:
        if self._partition is None:
            self._partition = cached_partition(self.grid, self.n)
        return self._partition

    def with_partition(self, part: Partition) -> "CondTwoStageCode":
        return CondTwoStageCode(self.grid, self.n, part)

    def _check_n(self, n: int) -> None:
        if n != self.n:
            raise ValueError(f"conditional code built for n={self.n}, got sequences of length {n}")

    def lengths(self, X):
        X = np.atleast_2d(X)
        self._check_n(X.shape[1])
        ll = _grid_loglik_symbols(self.grid, X)
        idx = select_estimate(ll)
        return self.m + self.partition.log2_mass(idx) - ll[np.arange(ll.shape[0]), idx]

    def type_lengths(self, table):
        self._check_n(table.n)
        ll = _grid_loglik_types(self.grid, table)
        idx = select_estimate(ll)
        return self.m + self.partition.log2_mass(idx) - ll[np.arange(ll.shape[0]), idx]


class MixtureCode(LengthModel):
    """Jeffreys-mixture code via sequential add-1/2 prediction.

    Markov families code the first symbol uniformly and then run one add-1/2
    predictor per previous symbol.
    """

    kind = "mixture"

    def __init__(self, family: ParamFamily):
        self.family = family

    def lengths(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=np.int64))
        N, n = X.shape
        k = self.family.k
        rows = np.arange(N)
        bits = np.zeros(N)
        if self.family.kind is Kind.MEMORYLESS:
            counts = np.zeros((N, k))
            for t in range(n):
                s = X[:, t]
                bits -= np.log2((counts[rows, s] + 0.5) / (t + k / 2.0))
                counts[rows, s] += 1
            return bits
        counts = np.zeros((N, k, k))
        bits += math.log2(k)
        for t in range(1, n):
            prev, s = X[:, t - 1], X[:, t]
            seen = counts[rows, prev].sum(axis=1)
            bits -= np.log2((counts[rows, prev, s] + 0.5) / (seen + k / 2.0))
            counts[rows, prev, s] += 1
        return bits

    def type_lengths(self, table):
        k = self.family.k

        def kt_log(c):
            # ln of the Dirichlet(1/2) marginal likelihood of a count vector
            return (
                gammaln(k / 2.0) - k * gammaln(0.5) + gammaln(c + 0.5).sum(axis=-1) - gammaln(c.sum(axis=-1) + k / 2.0)
            )

        if self.family.kind is Kind.MEMORYLESS:
            return -kt_log(table.stats.astype(float)) / LN2
        trans = table.stats[:, k:].reshape(-1, k, k).astype(float)
        return math.log2(k) - kt_log(trans).sum(axis=1) / LN2


def model_for(
    kind: str,
    family: ParamFamily,
    n: int | None = None,
    m: int | None = None,
    theta: ParamVector | None = None,
) -> LengthModel:
    """Construct a length model by name: ``ideal``, ``two_stage``, ``cond_two_stage``, ``mixture``."""
    if kind == "ideal":
        if theta is None:
            raise ValueError("ideal model needs theta")
        return IdealCode(theta)
    if kind == "mixture":
        return MixtureCode(family)
    if m is None:
        raise ValueError(f"{kind} model needs m")
    grid = build_grid(family, m)
    if kind == "two_stage":
        return TwoStageCode(grid)
    if kind == "cond_two_stage":
        if n is None:
            raise ValueError("conditional two-stage model needs n")
        return CondTwoStageCode(grid, n)
    raise ValueError(f"unknown model kind {kind!r}")


def two_stage_length(x: SequenceSample, grid: EstimateGrid) -> float:
    """``m + log2 1/mu_gamma(x)``."""
    return TwoStageCode(grid).length(x)


def cond_two_stage_length(x: SequenceSample, grid: EstimateGrid, part: Partition) -> float:
    """``m + log2(A_m(gamma) / mu_gamma(x))``."""
    return CondTwoStageCode(grid, x.n, part).length(x)


def mixture_length(x: SequenceSample) -> float:
    return MixtureCode(x.family).length(x)


def ideal_length(x: SequenceSample, theta: ParamVector) -> float:
    _check_same_family(theta, x)
    return IdealCode(theta).length(x)


def optimal_m(
    family: ParamFamily,
    n: int,
    criterion: str = "minimax",
    kind: str = "cond_two_stage",
    theta: ParamVector | None = None,
    m_range: Sequence[int] | None = None,
    theta_spacing: float = 0.01,
) -> tuple[int, float]:
    """Grid resolution minimising maximum (or at-``theta``) expected redundancy.

    ``criterion`` is ``"minimax"`` (max over the interior evaluation grid of
    :func:`redlab.eval.interior_theta_grid`) or ``"expected"`` (at ``theta``).
    Returns ``(m*, achieved bits)``; ties go to the smaller ``m``.
    """
    from .eval import interior_theta_grid, redundancy_profile

    if m_range is None:
        m_range = range(1, 13)
    m_values = [m for m in m_range if 1 <= m <= 20]
    if not m_values:
        raise ValueError("no feasible m in range")
    if criterion == "minimax":
        thetas = interior_theta_grid(family, spacing=theta_spacing)
    elif criterion == "expected":
        if theta is None:
            raise ValueError("criterion 'expected' needs theta")
        thetas = theta.probs[None]
    else:
        raise ValueError(f"unknown criterion {criterion!r}")
    best_m, best_val = None, math.inf
    failures = []
    for m in m_values:
        try:
            model = model_for(kind, family, n=n, m=m)
            value = float(redundancy_profile(thetas, model, n).max())
        except BudgetExceeded as exc:
            failures.append(str(exc))
            continue
        if value < best_val - 1e-12:
            best_m, best_val = m, value
    if best_m is None:
        raise BudgetExceeded("every m in range is infeasible: " + "; ".join(failures))
    return best_m, best_val
