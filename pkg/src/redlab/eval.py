"""Expected-redundancy measurement, empirical curves and figure bundles."""

from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from itertools import product
from pathlib import Path
from typing import Sequence

import numpy as np

from . import bounds
from .codecs import (
    CondTwoStageCode,
    EstimateGrid,
    LengthModel,
    Partition,
    build_grid,
    model_for,
    optimal_m,
    partition,
    select_estimate,
)
from .family import (
    LN2,
    IntractableError,
    Kind,
    ParamFamily,
    ParamVector,
    all_sequences,
    jeffreys_integral,
    markov1,
    markov_log2_jeffreys_bracket,
    memoryless,
    sample_jeffreys,
    sample_sequences,
    seq_log_prob_batch,
)
from .typeclass import DEFAULT_BUDGET, BudgetExceeded, type_table

WILSON_Z = 1.959963984540054


@dataclass(frozen=True)
class RedundancyEstimate:
    value: float
    mode: str  # "exact", "naive" or "monte-carlo"
    se: float = 0.0
    samples: int = 0
    seed: int | None = None

    def __post_init__(self):
        if self.mode in ("exact", "naive") and self.se != 0.0:
            raise ValueError("exact estimates carry no standard error")
        if self.mode == "monte-carlo" and not self.se > 0.0:
            raise ValueError("Monte Carlo estimates must report a positive standard error")


def _check_model(theta_family: ParamFamily, model: LengthModel) -> None:
    if model.family != theta_family:
        raise ValueError(f"model family {model.family} differs from source family {theta_family}")


def _expectation(log_w: np.ndarray, lengths: np.ndarray, log2_mu: np.ndarray) -> np.ndarray:
    """``sum_t exp(log_w) (l_t + log2 mu_t)`` over axis 0, skipping impossible classes."""
    w = np.exp(log_w)
    with np.errstate(invalid="ignore"):
        terms = np.where(w > 0, w * (lengths + log2_mu), 0.0)
    return terms.sum(axis=0)


def redundancy_profile(
    thetas: np.ndarray, model: LengthModel, n: int, budget: int = DEFAULT_BUDGET
) -> np.ndarray:
    """Exact expected redundancy of ``model`` at each of a batch of parameter arrays."""
    family = model.family
    thetas = np.asarray(thetas, dtype=float).reshape((-1,) + family.param_shape)
    table = type_table(family, n, budget)
    lengths = model.type_lengths(table)
    logs = [ParamVector(family, p).log_params for p in thetas]
    log_mu = table.log_prob(np.stack(logs))  # (T, B) natural log
    return _expectation(table.log_mult[:, None] + log_mu, lengths[:, None], log_mu / LN2)


def _naive_model(model: LengthModel, n: int) -> LengthModel:
    if isinstance(model, CondTwoStageCode):
        return model.with_partition(partition(model.grid, n, mode="naive"))
    return model


def expected_redundancy(
    theta: ParamVector,
    model: LengthModel,
    n: int,
    mode: str = "auto",
    samples: int = 10_000,
    seed: int = 0,
    budget: int = DEFAULT_BUDGET,
) -> RedundancyEstimate:
    """``E l(X^n) - H_n(theta)`` in bits.

    ``mode``: ``"exact"`` (type classes), ``"naive"`` (every sequence, symbol
    by symbol, with an independently built partition for conditional codes),
    ``"monte-carlo"``, or ``"auto"`` (exact within ``budget`` classes, else
    Monte Carlo).
    """
    _check_model(theta.family, model)
    if mode == "auto":
        try:
            return expected_redundancy(theta, model, n, "exact", budget=budget)
        except BudgetExceeded:
            mode = "monte-carlo"
    if mode == "exact":
        return RedundancyEstimate(float(redundancy_profile(theta.probs, model, n, budget)[0]), "exact")
    if mode == "naive":
        if theta.family.k**n > budget:
            raise BudgetExceeded(f"{theta.family.k}^{n} sequences exceed the budget")
        X = all_sequences(theta.family.k, n)
        lengths = _naive_model(model, n).lengths(X)
        log2_mu = seq_log_prob_batch(theta, X)
        return RedundancyEstimate(float(_expectation(log2_mu * LN2, lengths, log2_mu)), "naive")
    if mode == "monte-carlo":
        rng = np.random.default_rng(seed)
        X = sample_sequences(theta, n, samples, rng)
        if isinstance(model, CondTwoStageCode) and model._partition is None:
            try:
                model.partition
            except BudgetExceeded:
                model = model.with_partition(partition_monte_carlo(model.grid, n, seed=seed))
        v = model.lengths(X) + seq_log_prob_batch(theta, X)
        se = float(v.std(ddof=1) / math.sqrt(samples))
        return RedundancyEstimate(float(v.mean()), "monte-carlo", max(se, np.finfo(float).tiny), samples, seed)
    raise ValueError(f"unknown mode {mode!r}")


def partition_monte_carlo(grid: EstimateGrid, n: int, samples: int = 2000, seed: int = 0) -> Partition:
    """Estimate ``A_m(gamma)`` as the fraction of draws from ``gamma`` whose ML point is ``gamma``."""
    rng = np.random.default_rng(seed)
    mass = np.empty(len(grid))
    for g, point in enumerate(grid):
        X = sample_sequences(point, n, samples, rng)
        ll = np.stack([seq_log_prob_batch(p, X) for p in grid], axis=1)
        mass[g] = max(np.mean(select_estimate(ll) == g), 1.0 / samples)
    return Partition(grid, n, mass, "monte-carlo")


# -- theta grids and sampling --------------------------------------------------


def _simplex_lattice(k: int, spacing: float, margin: float) -> np.ndarray:
    steps = int(round(1.0 / spacing))
    lo = int(round(margin / spacing))
    pts = [c + (steps - sum(c),) for c in product(range(lo, steps + 1), repeat=k - 1) if steps - sum(c) >= lo]
    return np.array(pts, dtype=float) / steps


def interior_theta_grid(
    family: ParamFamily, spacing: float = 0.01, margin: float | None = None, max_points: int = 10**6
) -> np.ndarray:
    """Lattice of parameter arrays at ``spacing`` with every entry at least ``margin``.

    ``margin`` defaults to ``spacing``; for a Bernoulli family at 0.01 this is the
    99 points 0.01..0.99.  Markov lattices are products of row lattices and
    grow fast, so more than ``max_points`` arrays raise :class:`ValueError`.
    """
    margin = spacing if margin is None else margin
    rows = _simplex_lattice(family.k, spacing, margin)
    if family.kind is Kind.MEMORYLESS:
        return rows
    if rows.shape[0] ** family.k > max_points:
        raise ValueError(
            f"{family} theta lattice at spacing {spacing} has {rows.shape[0]}^{family.k} points; use a coarser spacing"
        )
    idx = np.array(list(product(range(rows.shape[0]), repeat=family.k)))
    return rows[idx]


def jeffreys_thetas(family: ParamFamily, count: int, seed: int) -> np.ndarray:
    """``count`` Jeffreys draws; draw ``j`` uses child ``j`` of ``SeedSequence(seed)``."""
    children = np.random.SeedSequence(seed).spawn(count)
    return np.stack([sample_jeffreys(family, c).probs for c in children])


def wilson_interval(successes: int, trials: int, z: float = WILSON_Z) -> tuple[float, float]:
    if trials <= 0:
        raise ValueError("trials must be positive")
    p = successes / trials
    denom = 1 + z * z / trials
    centre = (p + z * z / (2 * trials)) / denom
    half = z * math.sqrt(p * (1 - p) / trials + z * z / (4 * trials * trials)) / denom
    lo = 0.0 if successes == 0 else max(0.0, centre - half)
    hi = 1.0 if successes == trials else min(1.0, centre + half)
    return lo, hi


@dataclass
class EmpiricalCurve:
    family: str
    n: int
    model: str
    theta_samples: int
    seed: int
    m: int | None
    r0: np.ndarray
    fraction: np.ndarray
    ci_low: np.ndarray
    ci_high: np.ndarray
    redundancies: np.ndarray = field(repr=False)

    @property
    def ci_halfwidth(self) -> np.ndarray:
        return 0.5 * (self.ci_high - self.ci_low)

    def points(self) -> list[tuple[float, float, float]]:
        return [(float(r), float(f), float(h)) for r, f, h in zip(self.r0, self.fraction, self.ci_halfwidth)]

    def fraction_at(self, r0: float) -> tuple[float, float, float]:
        """``(fraction, ci_low, ci_high)`` for exceedance ``R >= r0``."""
        hits = int(np.sum(self.redundancies >= r0))
        lo, hi = wilson_interval(hits, self.redundancies.size)
        return hits / self.redundancies.size, lo, hi


def empirical_curve(
    family: ParamFamily,
    n: int,
    kind: str,
    theta_samples: int,
    seed: int,
    r0_grid: Sequence[float],
    m: int | None = None,
    threads: int = 1,
) -> EmpiricalCurve:
    """Fraction of Jeffreys-drawn sources whose expected redundancy is at least each ``R0``.

    Two-stage kinds use one ``m`` for all sources, chosen by the minimax
    criterion unless given.
    """
    if theta_samples < 100:
        raise ValueError("theta_samples must be >= 100")
    if kind in ("two_stage", "cond_two_stage") and m is None:
        m, _ = optimal_m(family, n, "minimax", kind)
    model = model_for(kind, family, n=n, m=m)
    if isinstance(model, CondTwoStageCode):
        model.partition  # build once, before workers share the model
    thetas = jeffreys_thetas(family, theta_samples, seed)
    chunks = np.array_split(np.arange(theta_samples), max(1, threads))
    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        parts = list(pool.map(lambda idx: redundancy_profile(thetas[idx], model, n), chunks))
    red = np.concatenate(parts)
    r0 = np.asarray(r0_grid, dtype=float)
    hits = (red[None, :] >= r0[:, None]).sum(axis=1)
    ci = np.array([wilson_interval(int(h), theta_samples) for h in hits])
    return EmpiricalCurve(str(family), n, kind, theta_samples, seed, m, r0, hits / theta_samples, ci[:, 0], ci[:, 1], red)


def minimax_saturation(family: ParamFamily, n: int, spacing: float = 0.01) -> tuple[float, float]:
    """``(max over interior grid of mixture redundancy, asymptotic minimax)``."""
    model = model_for("mixture", family)
    worst = float(redundancy_profile(interior_theta_grid(family, spacing), model, n).max())
    return worst, bounds.minimax_redundancy(family, n)


# -- figures -------------------------------------------------------------------

KB = 1024
MB = 1024 * 1024

FIGURES = {
    "fig1": (memoryless(3), (8, 32, 128, 512)),
    "fig2": (markov1(2), (12, 50, 202, 811)),
    "fig3": (memoryless(2), (8, 64, 512, 4096)),
    "fig4": (markov1(256), (256 * KB, 2 * MB, 16 * MB, 128 * MB)),
}

EMPIRICAL_N = {"fig1": (8,), "fig2": (12,), "fig3": (8, 16)}


def _size_label(n: int) -> str:
    if n >= MB and n % MB == 0:
        return f"{n // MB}MB"
    if n >= KB and n % KB == 0:
        return f"{n // KB}kB"
    return str(n)


@dataclass
class FigureBundle:
    figure: str
    curves: dict[str, bounds.BoundCurve]
    empirical: dict[str, EmpiricalCurve]
    meta: dict

    def rows(self) -> list[tuple[str, int, float, float, str]]:
        out = []
        for name, c in self.curves.items():
            out += [(name, c.n, float(p), float(r), "") for p, r in zip(c.p0, c.r0)]
        for name, e in self.empirical.items():
            out += [(name, e.n, float(r), float(f), repr(float(h))) for r, f, h in zip(e.r0, e.fraction, e.ci_halfwidth)]
        return out

    def write(self, out_dir: str | Path) -> Path:
        """Write ``meta.json`` plus one CSV per series (``series,n,p0_or_r0,value,ci``)."""
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "meta.json").write_text(json.dumps(self.meta, indent=2, sort_keys=True))
        for name in list(self.curves) + list(self.empirical):
            safe = "".join(ch if ch.isalnum() or ch in "-_." else "_" for ch in name)
            with open(out / f"{safe}.csv", "w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["series", "n", "p0_or_r0", "value", "ci"])
                for row in self.rows():
                    if row[0] == name:
                        w.writerow([row[0], row[1], repr(row[2]), repr(row[3]), row[4]])
        return out


def large_alphabet_log2_integral(k: int = 256, samples: int = 64, seed: int = 0) -> tuple[float, float, float]:
    """Midpoint and bracket of ``log2 int |I|^{1/2}`` for ``markov1:k``."""
    lo, hi = markov_log2_jeffreys_bracket(k, samples, seed)
    return 0.5 * (lo + hi), lo, hi


def large_alphabet_overhead(n: int, k: int = 256, entropy_rate: float = 1.0, seed: int = 0) -> float:
    """Minimax redundancy of ``markov1:k`` as a fraction of ``n * entropy_rate`` bits."""
    mid, _, _ = large_alphabet_log2_integral(k, seed=seed)
    d = k * (k - 1)
    redundancy = 0.5 * d * math.log2(n / (2 * math.pi)) + mid
    return redundancy / (n * entropy_rate)


def reproduce_figure(
    fig_id: str,
    p0_grid: Sequence[float] | None = None,
    empirical: bool = False,
    theta_samples: int = 1000,
    seed: int = 0,
    threads: int = 1,
) -> FigureBundle:
    """Theoretical curves (and optional reduced-``n`` empirical overlays) for one figure."""
    fig_id = fig_id.lower()
    if fig_id not in FIGURES:
        raise ValueError(f"unknown figure {fig_id!r}; choose from {sorted(FIGURES)}")
    family, ns = FIGURES[fig_id]
    p0 = bounds.default_p0_grid() if p0_grid is None else np.asarray(p0_grid, dtype=float)
    curves: dict[str, bounds.BoundCurve] = {}
    meta: dict = {"figure": fig_id, "family": str(family), "d": family.d, "n": list(ns), "seed": seed}

    if fig_id == "fig4":
        mid, lo, hi = large_alphabet_log2_integral(family.k, seed=seed)
        meta |= {
            "approximate": True,
            "log2_integral": {"estimate": mid, "lower": lo, "upper": hi, "method": "AM-GM / Jensen bracket"},
            "two_stage_penalty_bits": bounds.two_stage_penalty(family.d),
        }
        for n in ns:
            label = _size_label(n)
            curves[f"n={label} (c2p)"] = bounds.main_term_only(family.d, n, p0, mid, str(family))
            minimax = 0.5 * family.d * math.log2(n / (2 * math.pi)) + mid
            curves[f"n={label} (Minimax)"] = bounds.BoundCurve(
                str(family), n, bounds.CurveKind.MINIMAX, p0, np.full(p0.shape, minimax),
                (bounds.Flag.APPROXIMATE,) * p0.size, {"log2_integral": mid},
            )
        return FigureBundle(fig_id, curves, {}, meta)

    J = jeffreys_integral(family, seed=seed)
    meta["integral"] = J.to_dict()
    for n in ns:
        if fig_id == "fig3":
            curves[f"n={n} (Two-stage)"] = bounds.thm2_curve(family, n, p0, J)
            curves[f"n={n} (Cond. two-stage)"] = bounds.thm1_curve(family, n, p0, J)
            curves[f"n={n} (Minimax two-stage)"] = bounds.minimax_line(family, n, p0, True, J)
            curves[f"n={n} (Minimax)"] = bounds.minimax_line(family, n, p0, False, J)
        else:
            curves[f"n={n} (c2p)"] = bounds.thm1_curve(family, n, p0, J)
            curves[f"n={n} (Minimax)"] = bounds.minimax_line(family, n, p0, False, J)

    emp: dict[str, EmpiricalCurve] = {}
    if empirical:
        for n in EMPIRICAL_N[fig_id]:
            r0 = np.round(np.linspace(0, 0.5 * family.d * math.log2(n) + 2, 41), 6)
            kinds = ("cond_two_stage", "two_stage") if fig_id == "fig3" else ("cond_two_stage",)
            for kind in kinds:
                e = empirical_curve(family, n, kind, theta_samples, seed, r0, threads=threads)
                emp[f"n={n} empirical {kind} (m={e.m})"] = e
        meta["empirical"] = {"theta_samples": theta_samples, "n": list(EMPIRICAL_N[fig_id])}
    return FigureBundle(fig_id, curves, emp, meta)
