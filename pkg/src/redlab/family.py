"""Parametric source families: memoryless and first-order Markov sources.

A memoryless family over ``k`` symbols has ``d = k - 1`` free parameters; a
first-order Markov family has ``d = k (k - 1)``.  Markov sequences start from
the stationary distribution of the transition matrix, so that the block
entropy grows linearly after the first symbol.

All log-probabilities returned here are base 2.  Fisher information is the
per-symbol limit matrix in natural units.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property
from typing import Sequence

import numpy as np
from scipy import stats
from scipy.special import entr, gammaln
from scipy.stats import qmc

LN2 = math.log(2.0)

#: Interior threshold for operations needing a nonsingular Fisher matrix.
INTERIOR_ETA = 1e-9


class FamilyError(ValueError):
    pass


class SingularFisherError(FamilyError):
    """Raised when Fisher information is requested at a boundary point."""


class IntractableError(RuntimeError):
    """A numerical quantity cannot be obtained within its work budget."""


class SamplingError(RuntimeError):
    def __init__(self, message: str, acceptance_rate: float, proposals: int):
        super().__init__(f"{message} (acceptance rate {acceptance_rate:.3g} over {proposals} proposals)")
        self.acceptance_rate = acceptance_rate
        self.proposals = proposals


class Kind(str, Enum):
    MEMORYLESS = "memoryless"
    MARKOV1 = "markov1"


@dataclass(frozen=True)
class ParamFamily:
    kind: Kind
    k: int

    def __post_init__(self):
        object.__setattr__(self, "kind", Kind(self.kind))
        if int(self.k) != self.k or self.k < 2:
            raise FamilyError(f"alphabet size must be an integer >= 2, got {self.k!r}")
        object.__setattr__(self, "k", int(self.k))

    @property
    def d(self) -> int:
        if self.kind is Kind.MEMORYLESS:
            return self.k - 1
        return self.k * (self.k - 1)

    @property
    def param_shape(self) -> tuple[int, ...]:
        return (self.k,) if self.kind is Kind.MEMORYLESS else (self.k, self.k)

    @property
    def stat_dim(self) -> int:
        """Length of the sufficient-statistic vector of a sequence."""
        return self.k if self.kind is Kind.MEMORYLESS else self.k + self.k * self.k

    @classmethod
    def parse(cls, spec: str) -> "ParamFamily":
        """Parse ``"memoryless:3"`` or ``"markov1:2"``."""
        try:
            kind, k = spec.split(":")
            return cls(Kind(kind.strip().lower()), int(k))
        except (ValueError, KeyError) as exc:
            raise FamilyError(f"bad family spec {spec!r}; expected 'memoryless:K' or 'markov1:K'") from exc

    def __str__(self) -> str:
        return f"{self.kind.value}:{self.k}"

    def to_dict(self) -> dict:
        return {"kind": self.kind.value, "k": self.k}


def memoryless(k: int) -> ParamFamily:
    return ParamFamily(Kind.MEMORYLESS, k)


def markov1(k: int) -> ParamFamily:
    return ParamFamily(Kind.MARKOV1, k)


def stationary_distribution(P: np.ndarray) -> np.ndarray:
    """Stationary row vector of a row-stochastic matrix (batched over leading axes)."""
    P = np.asarray(P, dtype=float)
    k = P.shape[-1]
    A = np.swapaxes(P, -1, -2) - np.eye(k)
    A[..., -1, :] = 1.0
    b = np.zeros(P.shape[:-1])
    b[..., -1] = 1.0
    try:
        pi = np.linalg.solve(A, b[..., None])[..., 0]
    except np.linalg.LinAlgError:
        if P.ndim != 2:
            raise
        # reducible chain: any solution in the least-squares sense
        pi = np.linalg.lstsq(A, b, rcond=None)[0]
    pi = np.clip(pi, 0.0, None)
    return pi / pi.sum(axis=-1, keepdims=True)


def _log(x: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return np.log(x)


@dataclass(frozen=True, eq=False)
class ParamVector:
    """A parameter point: a probability vector or a row-stochastic matrix."""

    family: ParamFamily
    probs: np.ndarray

    def __post_init__(self):
        p = np.array(self.probs, dtype=float)
        if p.shape != self.family.param_shape:
            raise FamilyError(f"{self.family} expects probs of shape {self.family.param_shape}, got {p.shape}")
        if np.any(p < 0) or np.any(p > 1) or not np.all(np.isfinite(p)):
            raise FamilyError("probabilities must lie in [0, 1]")
        if np.any(np.abs(p.sum(axis=-1) - 1.0) > 1e-12):
            raise FamilyError("probabilities must sum to 1 (per row)")
        p.setflags(write=False)
        object.__setattr__(self, "probs", p)

    @classmethod
    def bernoulli(cls, p1: float) -> "ParamVector":
        """Binary memoryless source with ``P(symbol 1) = p1``."""
        return cls(memoryless(2), [1.0 - p1, p1])

    @classmethod
    def from_dict(cls, data: dict) -> "ParamVector":
        fam = ParamFamily(Kind(data["kind"]), int(data["k"]))
        probs = np.asarray(data["probs"], dtype=float).reshape(fam.param_shape)
        return cls(fam, probs)

    def to_dict(self) -> dict:
        return {**self.family.to_dict(), "probs": self.probs.ravel().tolist()}

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "ParamVector":
        return cls.from_dict(json.loads(text))

    @cached_property
    def stationary(self) -> np.ndarray:
        if self.family.kind is Kind.MEMORYLESS:
            return self.probs
        pi = stationary_distribution(self.probs)
        pi.setflags(write=False)
        return pi

    def is_interior(self, eta: float = INTERIOR_ETA) -> bool:
        return bool(np.all(self.probs >= eta))

    @cached_property
    def log_params(self) -> np.ndarray:
        """Natural-log parameters aligned with :func:`sufficient_stats`."""
        if self.family.kind is Kind.MEMORYLESS:
            return _log(self.probs)
        return np.concatenate([_log(self.stationary), _log(self.probs).ravel()])

    def __repr__(self) -> str:
        return f"ParamVector({self.family}, {np.array2string(self.probs, precision=4)})"


@dataclass(frozen=True, eq=False)
class SequenceSample:
    family: ParamFamily
    symbols: np.ndarray = field(repr=False)

    def __post_init__(self):
        s = np.asarray(self.symbols)
        if s.ndim != 1 or s.size < 1:
            raise FamilyError("a sequence must be a non-empty 1-D array")
        if not np.issubdtype(s.dtype, np.integer):
            if not np.all(s == np.round(s)):
                raise FamilyError("symbols must be integers")
        s = s.astype(np.int64)
        if s.min() < 0 or s.max() >= self.family.k:
            raise FamilyError(f"symbols must lie in [0, {self.family.k})")
        s.setflags(write=False)
        object.__setattr__(self, "symbols", s)

    @classmethod
    def from_string(cls, family: ParamFamily, text: str) -> "SequenceSample":
        return cls(family, np.array([int(c) for c in text]))

    @property
    def n(self) -> int:
        return int(self.symbols.size)

    def __len__(self) -> int:
        return self.n

    def __str__(self) -> str:
        if self.family.k <= 10:
            return "".join(map(str, self.symbols))
        return " ".join(map(str, self.symbols))


def _check_same_family(theta: ParamVector, x: SequenceSample) -> None:
    if theta.family != x.family:
        raise FamilyError(f"sequence family {x.family} does not match parameter family {theta.family}")


def sufficient_stats(family: ParamFamily, X: np.ndarray) -> np.ndarray:
    """Count statistics of a batch of sequences, shape ``(N, stat_dim)``.

    Memoryless: symbol counts.  Markov: one-hot initial symbol followed by the
    row-major transition counts.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.int64))
    N, n = X.shape
    k = family.k
    rows = np.arange(N)[:, None]
    if family.kind is Kind.MEMORYLESS:
        out = np.zeros((N, k), dtype=np.int64)
        np.add.at(out, (np.broadcast_to(rows, X.shape), X), 1)
        return out
    out = np.zeros((N, k + k * k), dtype=np.int64)
    out[np.arange(N), X[:, 0]] = 1
    if n > 1:
        trans = k + X[:, :-1] * k + X[:, 1:]
        np.add.at(out, (np.broadcast_to(rows, trans.shape), trans), 1)
    return out


def seq_log_prob_batch(theta: ParamVector, X: np.ndarray) -> np.ndarray:
    """``log2 mu_theta(x)`` for every row of ``X``, multiplying symbol by symbol."""
    X = np.atleast_2d(np.asarray(X, dtype=np.int64))
    with np.errstate(divide="ignore"):
        if theta.family.kind is Kind.MEMORYLESS:
            return np.log2(theta.probs)[X].sum(axis=1)
        logP = np.log2(theta.probs)
        out = np.log2(theta.stationary)[X[:, 0]]
        if X.shape[1] > 1:
            out = out + logP[X[:, :-1], X[:, 1:]].sum(axis=1)
        return out


def seq_log_prob(theta: ParamVector, x: SequenceSample) -> float:
    """Base-2 log-probability of ``x`` under ``theta``; ``-inf`` if impossible."""
    _check_same_family(theta, x)
    return float(seq_log_prob_batch(theta, x.symbols[None, :])[0])


def _entropy_bits(p: np.ndarray) -> np.ndarray:
    return entr(p).sum(axis=-1) / LN2


def entropy_n(theta: ParamVector, n: int) -> float:
    """Block entropy ``H_n(theta)`` in bits."""
    if n < 1:
        raise FamilyError("n must be >= 1")
    if theta.family.kind is Kind.MEMORYLESS:
        return float(n * _entropy_bits(theta.probs))
    pi = theta.stationary
    rate = float(pi @ _entropy_bits(theta.probs))
    return float(_entropy_bits(pi)) + (n - 1) * rate


def _multinomial_fisher(row: np.ndarray) -> np.ndarray:
    # free coordinates are the first k-1 entries; the last one is 1 - sum
    return np.diag(1.0 / row[:-1]) + 1.0 / row[-1]


def fisher_info(theta: ParamVector, eta: float = INTERIOR_ETA) -> np.ndarray:
    """Per-symbol Fisher information matrix (nats), ``d x d``.

    For a Markov source this is block diagonal: row ``i`` contributes its
    multinomial information weighted by the stationary probability of ``i``.
    """
    if not theta.is_interior(eta):
        raise SingularFisherError(f"Fisher information is singular at boundary point {theta!r}")
    if theta.family.kind is Kind.MEMORYLESS:
        return _multinomial_fisher(theta.probs)
    k = theta.family.k
    out = np.zeros((theta.family.d, theta.family.d))
    for i in range(k):
        s = slice(i * (k - 1), (i + 1) * (k - 1))
        out[s, s] = theta.stationary[i] * _multinomial_fisher(theta.probs[i])
    return out


def log_sqrt_det_fisher(family: ParamFamily, probs: np.ndarray) -> np.ndarray:
    """``ln |I(theta)|^{1/2}`` for a batch of parameter arrays (closed form)."""
    probs = np.asarray(probs, dtype=float)
    if family.kind is Kind.MEMORYLESS:
        return -0.5 * np.log(probs).sum(axis=-1)
    pi = stationary_distribution(probs)
    k = family.k
    return 0.5 * (k - 1) * np.log(pi).sum(axis=-1) - 0.5 * np.log(probs).sum(axis=(-1, -2))


# -- Jeffreys prior -----------------------------------------------------------


def _log_dirichlet_half_norm(k: int) -> float:
    """``ln`` of the integral of ``prod p_j^{-1/2}`` over the (k-1)-simplex."""
    return k * gammaln(0.5) - gammaln(k / 2.0)


def _markov_log_weight(k: int, P: np.ndarray) -> np.ndarray:
    """``ln prod_i pi_i^{(k-1)/2}``: Jeffreys density over the Dirichlet(1/2) row product."""
    pi = stationary_distribution(P)
    with np.errstate(divide="ignore"):
        return 0.5 * (k - 1) * np.log(pi).sum(axis=-1)


@dataclass(frozen=True)
class JeffreysIntegral:
    """Value of the Jeffreys normaliser, with its Monte Carlo standard error."""

    value: float
    se: float = 0.0
    method: str = "closed-form"
    samples: int = 0
    seed: int | None = None

    @property
    def log2_value(self) -> float:
        return math.log2(self.value)

    @property
    def rel_se(self) -> float:
        return self.se / self.value

    def to_dict(self) -> dict:
        return {
            "value": float(self.value),
            "log2_value": self.log2_value,
            "se": float(self.se),
            "method": self.method,
            "samples": self.samples,
            "seed": self.seed,
        }


def _stratified_dirichlet_rows(k: int, rows: int, size: int, rng: np.random.Generator) -> np.ndarray:
    """Latin-hypercube stratified Dirichlet(1/2) rows, shape ``(size, rows, k)``."""
    sampler = qmc.LatinHypercube(d=rows * k, seed=rng)
    u = sampler.random(size)
    g = stats.gamma.ppf(u, 0.5).reshape(size, rows, k)
    # ppf can round to exactly 0 for tiny u
    g = np.maximum(g, np.finfo(float).tiny)
    return g / g.sum(axis=-1, keepdims=True)


def jeffreys_integral(
    family: ParamFamily,
    *,
    rel_se: float = 0.005,
    seed: int = 0,
    batch: int = 20_000,
    replicates: int = 8,
    work_budget: float = 2e9,
) -> JeffreysIntegral:
    """``int |I(theta)|^{1/2} d theta`` over the parameter space.

    Memoryless families use the Dirichlet closed form ``pi^{k/2} / Gamma(k/2)``.
    Markov families factor as ``Z^k * E[prod_i pi_i^{(k-1)/2}]`` with rows drawn
    from Dirichlet(1/2); the expectation is estimated from independent
    Latin-hypercube replicates until the relative standard error falls below
    ``rel_se``.  Raises :class:`IntractableError` when the projected work
    (samples times ``k^3``) exceeds ``work_budget``.
    """
    k = family.k
    if family.kind is Kind.MEMORYLESS:
        return JeffreysIntegral(float(np.exp(_log_dirichlet_half_norm(k))))

    log_norm = k * _log_dirichlet_half_norm(k)
    rng = np.random.default_rng(seed)
    unit_cost = float(k) ** 3
    if batch * unit_cost > work_budget:
        raise IntractableError(
            f"Jeffreys integral for {family} (d={family.d}) exceeds the work budget; "
            "use a main-term-only bound with an external constant"
        )
    means: list[float] = []
    shift = None
    total = 0
    while True:
        for _ in range(replicates):
            P = _stratified_dirichlet_rows(k, k, batch, rng)
            lw = _markov_log_weight(k, P)
            if shift is None:
                shift = float(lw.max())
            means.append(float(np.exp(lw - shift).mean()))
            total += batch
        arr = np.array(means)
        est = arr.mean()
        se = arr.std(ddof=1) / math.sqrt(arr.size)
        if est > 0 and se / est <= rel_se:
            break
        if total * unit_cost > work_budget:
            raise IntractableError(
                f"Jeffreys integral for {family}: relative SE {se / max(est, 1e-300):.3g} "
                f"after {total} samples exceeds target {rel_se}"
            )
    scale = math.exp(log_norm + shift)
    return JeffreysIntegral(est * scale, se * scale, "monte-carlo (LHS replicates)", total, seed)


def markov_log2_jeffreys_bracket(k: int, samples: int = 64, seed: int = 0) -> tuple[float, float]:
    """Lower and upper bounds on ``log2 int |I|^{1/2}`` for a Markov family of any size.

    Upper: the stationary product is at most ``k^{-k}`` (AM-GM).  Lower:
    Jensen's inequality, ``log E[w] >= E[log w]``, estimated from ``samples``
    random Dirichlet(1/2) matrices.  For large ``k`` the bracket is narrow
    relative to the integral itself, which is what large-alphabet bounds need.
    """
    log_norm = k * _log_dirichlet_half_norm(k)
    upper = log_norm + 0.5 * (k - 1) * k * math.log(1.0 / k)
    rng = np.random.default_rng(seed)
    lw = np.array([_markov_log_weight(k, rng.dirichlet(np.full(k, 0.5), size=k)) for _ in range(samples)])
    lower = log_norm + float(lw.mean())
    return lower / LN2, upper / LN2


def sample_jeffreys_probs(
    family: ParamFamily,
    size: int,
    seed: int | np.random.SeedSequence,
    max_proposals: int = 10_000_000,
) -> np.ndarray:
    """Draw ``size`` parameter arrays from the Jeffreys prior.

    Memoryless: exact Dirichlet(1/2).  Markov: rejection from independent
    Dirichlet(1/2) rows, accepting with probability ``prod pi_i^{(k-1)/2}``
    divided by its maximum ``k^{-k(k-1)/2}``.
    """
    rng = np.random.default_rng(seed)
    k = family.k
    if family.kind is Kind.MEMORYLESS:
        return rng.dirichlet(np.full(k, 0.5), size=size)
    log_max = 0.5 * (k - 1) * k * math.log(1.0 / k)
    accepted: list[np.ndarray] = []
    n_acc = 0
    proposals = 0
    chunk = max(64, 2 * size)
    while n_acc < size:
        if proposals >= max_proposals:
            raise SamplingError("Jeffreys rejection sampler exhausted its budget", n_acc / max(proposals, 1), proposals)
        P = rng.dirichlet(np.full(k, 0.5), size=(chunk, k))
        lw = _markov_log_weight(k, P)
        keep = np.log(rng.random(chunk)) < lw - log_max
        accepted.append(P[keep])
        n_acc += int(keep.sum())
        proposals += chunk
    return np.concatenate(accepted)[:size]


def sample_jeffreys(family: ParamFamily, seed: int | np.random.SeedSequence) -> ParamVector:
    """One Jeffreys-distributed parameter point; deterministic given ``seed``."""
    return ParamVector(family, _renormalise(sample_jeffreys_probs(family, 1, seed)[0]))


def _renormalise(p: np.ndarray) -> np.ndarray:
    return p / p.sum(axis=-1, keepdims=True)


def param_vectors(family: ParamFamily, probs: np.ndarray) -> list[ParamVector]:
    return [ParamVector(family, _renormalise(p)) for p in probs]


def all_sequences(k: int, n: int) -> np.ndarray:
    """Every sequence of length ``n`` over ``k`` symbols, lexicographic, shape ``(k^n, n)``."""
    idx = np.arange(k**n, dtype=np.int64)
    powers = k ** np.arange(n - 1, -1, -1, dtype=np.int64)
    return (idx[:, None] // powers) % k


def sample_sequences(theta: ParamVector, n: int, size: int, rng: np.random.Generator) -> np.ndarray:
    """Draw ``size`` sequences of length ``n`` from ``theta``."""
    k = theta.family.k
    if theta.family.kind is Kind.MEMORYLESS:
        return rng.choice(k, size=(size, n), p=theta.probs)
    cum = np.cumsum(theta.probs, axis=1)
    X = np.empty((size, n), dtype=np.int64)
    X[:, 0] = rng.choice(k, size=size, p=theta.stationary)
    for t in range(1, n):
        u = rng.random(size)
        X[:, t] = np.minimum((u[:, None] > cum[X[:, t - 1]]).sum(axis=1), k - 1)
    return X


def kl_divergence_bits(p: Sequence[float], q: Sequence[float]) -> float:
    """``D(p || q)`` in bits for probability vectors."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    mask = p > 0
    return float(np.sum(p[mask] * np.log2(p[mask] / q[mask])))
