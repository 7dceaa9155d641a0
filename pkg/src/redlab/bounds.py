"""Closed-form redundancy bounds, in bits.

The probability bounds are turned into ``(P0, R0)`` curves by solving the
failure-mass equation for the exponent ``eps`` and reporting
``R0 = (1 - eps) (d/2) log2 n``.  Where ``eps`` would fall below 0 the point is
clamped to the ``eps = 0`` value and flagged ``saturated``; where it exceeds 1
the bound says nothing and the point is reported as ``R0 = 0``, flagged
``vacuous``.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Sequence

import numpy as np
from scipy.special import gammaln

from .family import LN2, JeffreysIntegral, ParamFamily, jeffreys_integral

LOG2E = 1.0 / LN2


class CurveKind(str, Enum):
    THM1 = "thm1"
    THM2 = "thm2"
    MINIMAX = "minimax"
    MINIMAX_TWO_STAGE = "minimax2p"
    MAIN_TERM = "main-term"


class Flag(str, Enum):
    OK = "ok"
    SATURATED = "saturated"
    VACUOUS = "vacuous"
    APPROXIMATE = "approximate"


@dataclass(frozen=True)
class BoundCurve:
    family: str
    n: int
    kind: CurveKind
    p0: np.ndarray
    r0: np.ndarray
    flags: tuple[Flag, ...]
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        p0 = np.asarray(self.p0, dtype=float)
        if p0.size and (np.any(np.diff(p0) <= 0) or p0[0] <= 0 or p0[-1] >= 1):
            raise ValueError("P0 grid must be strictly increasing inside (0, 1)")
        object.__setattr__(self, "p0", p0)
        object.__setattr__(self, "r0", np.asarray(self.r0, dtype=float))

    def points(self) -> list[tuple[float, float, str]]:
        return [(float(p), float(r), f.value) for p, r, f in zip(self.p0, self.r0, self.flags)]

    def at(self, p0: float) -> float:
        """R0 at a P0 that lies on the grid."""
        i = int(np.argmin(np.abs(self.p0 - p0)))
        if abs(self.p0[i] - p0) > 1e-12:
            raise KeyError(f"P0={p0} is not on this curve's grid")
        return float(self.r0[i])

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["p0", "r0", "flag"])
        for p, r, f in self.points():
            w.writerow([repr(p), repr(r), f])
        return buf.getvalue()

    def to_dict(self) -> dict:
        return {
            "family": self.family,
            "n": self.n,
            "kind": self.kind.value,
            "points": [{"p0": p, "r0": r, "flag": f} for p, r, f in self.points()],
            "provenance": self.provenance,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


# -- scalar bounds -------------------------------------------------------------


def unit_ball_volume(d: int) -> float:
    """Volume of the unit ball in ``d`` dimensions, ``Gamma(1/2)^d / Gamma(d/2 + 1)``."""
    if d < 1:
        raise ValueError("d must be >= 1")
    return math.exp(d * gammaln(0.5) - gammaln(d / 2 + 1))


def log_unit_ball_volume(d: int) -> float:
    if d < 1:
        raise ValueError("d must be >= 1")
    return float(d * gammaln(0.5) - gammaln(d / 2 + 1))


def two_stage_penalty(d: int) -> float:
    """Extra minimax redundancy of two-stage codes, ``log Gamma(d/2+1) - (d/2) log(d/(2e))``."""
    if d < 1:
        raise ValueError("d must be >= 1")
    return float((gammaln(d / 2 + 1) - (d / 2) * (math.log(d / 2) - 1.0)) * LOG2E)


def two_stage_penalty_asymptotic(d: int) -> float:
    """Large-``d`` form ``(1/2) log2(pi d)``."""
    if d < 1:
        raise ValueError("d must be >= 1")
    return 0.5 * math.log2(math.pi * d)


def _resolve_integral(family: ParamFamily, integral: JeffreysIntegral | None, seed: int) -> JeffreysIntegral:
    return integral if integral is not None else jeffreys_integral(family, seed=seed)


def minimax_redundancy(
    family: ParamFamily, n: int, integral: JeffreysIntegral | None = None, seed: int = 0
) -> float:
    """Asymptotic average minimax redundancy ``(d/2) log2(n / 2 pi) + log2 int |I|^{1/2}``.

    The ``O(1/n)`` remainder is dropped.  Raises ``IntractableError`` (from
    :func:`jeffreys_integral`) when the integral cannot be computed; callers
    should then fall back to :func:`main_term_only`.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    J = _resolve_integral(family, integral, seed)
    return 0.5 * family.d * math.log2(n / (2 * math.pi)) + J.log2_value


def minimax_two_stage(
    family: ParamFamily, n: int, integral: JeffreysIntegral | None = None, seed: int = 0
) -> float:
    return minimax_redundancy(family, n, integral, seed) + two_stage_penalty(family.d)


# -- probability curves --------------------------------------------------------


def _check_p0(p0_grid: Iterable[float]) -> np.ndarray:
    p0 = np.asarray(list(p0_grid), dtype=float)
    if p0.size == 0:
        raise ValueError("empty P0 grid")
    if np.any(p0 <= 0) or np.any(p0 >= 1):
        raise ValueError("every P0 must lie strictly inside (0, 1)")
    return p0


def _eps_from_failure(log_c: float, d: int, n: int, p0: np.ndarray) -> np.ndarray:
    """Solve ``exp(log_c) * n^{-eps d/2} = 1 - P0`` for ``eps``."""
    return (2.0 / (d * math.log(n))) * (log_c - np.log1p(-p0))


def _curve_from_eps(eps: np.ndarray, d: int, n: int) -> tuple[np.ndarray, tuple[Flag, ...]]:
    flags = tuple(Flag.SATURATED if e < 0 else Flag.VACUOUS if e > 1 else Flag.OK for e in eps)
    r0 = (1.0 - np.clip(eps, 0.0, 1.0)) * 0.5 * d * math.log2(n)
    return r0, flags


def thm1_log_failure_constant(d: int, log_integral_nats: float) -> float:
    """``ln`` of the conditional two-stage failure mass at ``eps = 0``: ``(2 pi)^{d/2} / J``."""
    return 0.5 * d * math.log(2 * math.pi) - log_integral_nats


def thm2_log_failure_constant(d: int, log_integral_nats: float) -> float:
    """``ln`` of the two-stage failure mass at ``eps = 0``: ``C_d (d/e)^{d/2} / J``."""
    return log_unit_ball_volume(d) + 0.5 * d * (math.log(d) - 1.0) - log_integral_nats


def thm1_failure_mass(family: ParamFamily, n: int, eps: float, integral: JeffreysIntegral | None = None) -> float:
    """Upper bound on ``P[R_n / ((d/2) log n) < 1 - eps]`` for conditional two-stage codes."""
    J = _resolve_integral(family, integral, 0)
    return math.exp(thm1_log_failure_constant(family.d, math.log(J.value)) - 0.5 * family.d * eps * math.log(n))


def thm2_failure_mass(family: ParamFamily, n: int, eps: float, integral: JeffreysIntegral | None = None) -> float:
    J = _resolve_integral(family, integral, 0)
    return math.exp(thm2_log_failure_constant(family.d, math.log(J.value)) - 0.5 * family.d * eps * math.log(n))


def _provenance(family: ParamFamily, J: JeffreysIntegral) -> dict:
    return {"family": str(family), "d": family.d, "integral": J.to_dict()}


def thm1_curve(
    family: ParamFamily,
    n: int,
    p0_grid: Sequence[float],
    integral: JeffreysIntegral | None = None,
    seed: int = 0,
) -> BoundCurve:
    """Lower-bound curve for conditional two-stage codes.

    A point ``(P0, R0)`` means at least a fraction ``P0`` of Jeffreys-drawn
    sources have expected redundancy at least ``R0``.
    """
    if n < 2:
        raise ValueError("n must be >= 2")
    p0 = _check_p0(p0_grid)
    J = _resolve_integral(family, integral, seed)
    eps = _eps_from_failure(thm1_log_failure_constant(family.d, math.log(J.value)), family.d, n, p0)
    r0, flags = _curve_from_eps(eps, family.d, n)
    return BoundCurve(str(family), n, CurveKind.THM1, p0, r0, flags, _provenance(family, J))


def thm2_curve(
    family: ParamFamily,
    n: int,
    p0_grid: Sequence[float],
    integral: JeffreysIntegral | None = None,
    seed: int = 0,
) -> BoundCurve:
    """Lower-bound curve for plain two-stage codes (uses the unit-ball volume)."""
    if n < 2:
        raise ValueError("n must be >= 2")
    p0 = _check_p0(p0_grid)
    J = _resolve_integral(family, integral, seed)
    eps = _eps_from_failure(thm2_log_failure_constant(family.d, math.log(J.value)), family.d, n, p0)
    r0, flags = _curve_from_eps(eps, family.d, n)
    prov = _provenance(family, J) | {"unit_ball_volume_log": log_unit_ball_volume(family.d)}
    return BoundCurve(str(family), n, CurveKind.THM2, p0, r0, flags, prov)


def minimax_line(
    family: ParamFamily,
    n: int,
    p0_grid: Sequence[float],
    two_stage: bool = False,
    integral: JeffreysIntegral | None = None,
    seed: int = 0,
) -> BoundCurve:
    p0 = _check_p0(p0_grid)
    J = _resolve_integral(family, integral, seed)
    value = minimax_two_stage(family, n, J) if two_stage else minimax_redundancy(family, n, J)
    kind = CurveKind.MINIMAX_TWO_STAGE if two_stage else CurveKind.MINIMAX
    return BoundCurve(str(family), n, kind, p0, np.full(p0.shape, value), (Flag.OK,) * p0.size, _provenance(family, J))


def main_term(d: int, n: int) -> float:
    """Dominant redundancy term ``(d/2) log2 n``."""
    return 0.5 * d * math.log2(n)


def main_term_only(
    d: int,
    n: int,
    p0_grid: Sequence[float],
    log2_integral: float | None = None,
    family: str | None = None,
) -> BoundCurve:
    """Conditional two-stage curve without an exact Jeffreys constant.

    ``log2_integral`` may carry an externally obtained estimate of
    ``log2 int |I|^{1/2}``; when omitted the constant is taken as 1.  Every point
    is flagged ``approximate`` unless clipping overrides it.
    """
    if d < 1 or n < 1:
        raise ValueError("d and n must be >= 1")
    p0 = _check_p0(p0_grid)
    if n == 1:
        r0 = np.zeros(p0.shape)
        return BoundCurve(family or f"d={d}", n, CurveKind.MAIN_TERM, p0, r0, (Flag.VACUOUS,) * p0.size)
    lj = 0.0 if log2_integral is None else log2_integral
    eps = _eps_from_failure(thm1_log_failure_constant(d, lj * LN2), d, n, p0)
    r0, flags = _curve_from_eps(eps, d, n)
    flags = tuple(Flag.APPROXIMATE if f is Flag.OK else f for f in flags)
    prov = {
        "d": d,
        "log2_integral": log2_integral,
        "integral_source": "omitted (taken as 1)" if log2_integral is None else "caller-supplied",
        "main_term_bits": main_term(d, n),
        "two_stage_penalty_bits": two_stage_penalty(d),
    }
    return BoundCurve(family or f"d={d}", n, CurveKind.MAIN_TERM, p0, r0, flags, prov)


def main_term_at(d: int, n: int, eps: float) -> float:
    """``(1 - eps) (d/2) log2 n``."""
    return (1.0 - eps) * main_term(d, n)


def default_p0_grid(step: float = 0.01) -> np.ndarray:
    count = int(round(1.0 / step))
    return np.round(np.arange(1, count) * step, 10)
