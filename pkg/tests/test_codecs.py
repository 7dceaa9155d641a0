import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import comb

from redlab.bounds import minimax_redundancy
from redlab.codecs import (
    CondTwoStageCode,
    EstimateGrid,
    IdealCode,
    MixtureCode,
    Partition,
    TwoStageCode,
    build_grid,
    cached_partition,
    cond_two_stage_length,
    ideal_length,
    ml_estimate,
    mixture_length,
    model_for,
    optimal_m,
    partition,
    select_estimate,
    single_point_grid,
    two_stage_length,
)
from redlab.family import (
    FamilyError,
    ParamVector,
    SequenceSample,
    all_sequences,
    markov1,
    memoryless,
    seq_log_prob_batch,
)
from redlab.typeclass import BudgetExceeded, type_table

B = memoryless(2)
T = memoryless(3)
LO, HI = math.sin(math.pi / 8) ** 2, math.sin(3 * math.pi / 8) ** 2


def seq(s, family=B):
    return SequenceSample.from_string(family, s)


def kraft(model, family, n):
    X = all_sequences(family.k, n)
    return float(np.sum(2.0 ** -model.lengths(X)))


# -- grid ----------------------------------------------------------------------


def test_binary_grid_m1():
    g = build_grid(B, 1)
    np.testing.assert_allclose(g.points[:, 1], [LO, HI], atol=1e-12)
    assert g.points[0, 1] == pytest.approx(0.1464, abs=1e-4)


def test_binary_grid_symmetric():
    for m in (2, 3, 5):
        p = build_grid(B, m).points[:, 1]
        np.testing.assert_allclose(p + p[::-1], 1.0, atol=1e-12)
        assert np.all(np.diff(p) > 0)


@pytest.mark.parametrize("family", [B, T, memoryless(4), markov1(2), markov1(3)])
@pytest.mark.parametrize("m", [0, 1, 3, 6])
def test_grid_cardinality_and_interior(family, m):
    g = build_grid(family, m)
    assert len(g) == 2**m
    assert g.points.shape == (2**m,) + family.param_shape
    assert np.all(g.points > 0)
    assert len({tuple(p.ravel()) for p in g.points}) == 2**m


def test_grid_bit_split_ternary():
    # d=2, m=3: first coordinate gets 2 bits, the second 1; last coordinate varies fastest
    g = build_grid(T, 3)
    p2 = g.points[:, 2]
    assert len(np.unique(np.round(p2, 12))) == 4
    np.testing.assert_allclose(p2[0], p2[1])


def test_grid_cells_match_jeffreys_mass():
    # each binary grid point sits at the median of its equal-prior-mass cell
    from scipy import stats

    p = build_grid(B, 4).points[:, 1]
    u = stats.beta.cdf(p, 0.5, 0.5)
    np.testing.assert_allclose(u, (2 * np.arange(1, 17) - 1) / 32, atol=1e-12)


def test_grid_errors():
    with pytest.raises(ValueError):
        build_grid(B, 25)
    with pytest.raises(ValueError):
        build_grid(B, -1)
    with pytest.raises(FamilyError):
        EstimateGrid(B, 1, np.array([[0.0, 1.0], [0.5, 0.5]]))


def test_grid_roundtrip_dict():
    g = build_grid(markov1(2), 3)
    g2 = EstimateGrid.from_dict(json.loads(json.dumps(g.to_dict())))
    np.testing.assert_array_equal(g.points, g2.points)
    assert g.fingerprint == g2.fingerprint


# -- ML estimate ---------------------------------------------------------------


def test_ml_estimate_examples():
    g = build_grid(B, 1)
    idx, gamma = ml_estimate(seq("00000000"), g)
    assert idx == 0 and gamma.probs[1] == pytest.approx(0.1464, abs=1e-4)
    idx, gamma = ml_estimate(seq("11111111"), g)
    assert idx == 1 and gamma.probs[1] == pytest.approx(0.8536, abs=1e-4)
    # exact tie goes to the lowest index
    assert ml_estimate(seq("01010101"), g)[0] == 0


def test_select_estimate_tolerance():
    ll = np.array([[-3.0, -3.0 + 1e-13, -5.0], [-4.0, -2.0, -2.0]])
    np.testing.assert_array_equal(select_estimate(ll), [0, 1])


def test_ml_estimate_family_mismatch():
    with pytest.raises(FamilyError):
        ml_estimate(seq("012", T), build_grid(B, 1))


# -- lengths -------------------------------------------------------------------


def test_two_stage_example():
    g = build_grid(B, 1)
    assert two_stage_length(seq("00000000"), g) == pytest.approx(1 + 8 * math.log2(1 / HI), abs=1e-12)
    assert two_stage_length(seq("00000000"), g) == pytest.approx(2.827, abs=1e-3)


def test_cond_two_stage_example():
    g = build_grid(B, 1)
    part = partition(g, 8)
    x = seq("00000000")
    expected = 1 + math.log2(part.mass[0]) + 8 * math.log2(1 / HI)
    assert cond_two_stage_length(x, g, part) == pytest.approx(expected, abs=1e-12)
    assert cond_two_stage_length(x, g, part) < two_stage_length(x, g)


def test_mixture_examples():
    assert mixture_length(seq("1")) == pytest.approx(1.0)
    assert mixture_length(seq("11")) == pytest.approx(math.log2(8 / 3))
    assert mixture_length(seq("11")) == pytest.approx(1.415, abs=1e-3)
    # Markov: first symbol log2 k, then one add-1/2 predictor per state
    assert mixture_length(seq("01", markov1(2))) == pytest.approx(2.0)
    assert mixture_length(seq("011", markov1(2))) == pytest.approx(3.0)


@pytest.mark.parametrize("family", [B, T, markov1(2)])
def test_mixture_sequential_matches_closed_form(family):
    n = 6
    table = type_table(family, n)
    X = all_sequences(family.k, n)
    from redlab.family import sufficient_stats

    stats = sufficient_stats(family, X)
    seq_len = MixtureCode(family).lengths(X)
    closed = MixtureCode(family).type_lengths(table)
    lookup = {tuple(s): v for s, v in zip(table.stats, closed)}
    np.testing.assert_allclose(seq_len, [lookup[tuple(s)] for s in stats], atol=1e-9)


def test_ideal_length_matches_log_prob():
    theta = ParamVector(T, np.array([0.2, 0.3, 0.5]))
    x = seq("0122", T)
    assert ideal_length(x, theta) == pytest.approx(-math.log2(0.2 * 0.3 * 0.25))


def test_m0_degenerate():
    theta = ParamVector.bernoulli(0.3)
    g = single_point_grid(theta)
    part = partition(g, 6)
    assert part.mass[0] == pytest.approx(1.0, abs=1e-12)
    X = all_sequences(2, 6)
    np.testing.assert_allclose(CondTwoStageCode(g, 6, part).lengths(X), -seq_log_prob_batch(theta, X), atol=1e-12)
    assert len(build_grid(B, 0)) == 1


# -- Kraft ---------------------------------------------------------------------


@pytest.mark.parametrize("m", [1, 2, 3])
def test_kraft_binary_n8(m):
    g = build_grid(B, m)
    part = partition(g, 8)
    assert kraft(CondTwoStageCode(g, 8, part), B, 8) == pytest.approx(1.0, abs=1e-9)
    two = kraft(TwoStageCode(g), B, 8)
    assert two < 1
    assert two == pytest.approx(part.mass.mean(), abs=1e-12)


@pytest.mark.parametrize("family,n", [(B, 10), (T, 6), (markov1(2), 9), (markov1(3), 5)])
def test_kraft_complete_codes(family, n):
    theta = ParamVector(family, np.full(family.param_shape, 1.0 / family.k))
    assert kraft(MixtureCode(family), family, n) == pytest.approx(1.0, abs=1e-9)
    assert kraft(IdealCode(theta), family, n) == pytest.approx(1.0, abs=1e-9)
    assert kraft(model_for("cond_two_stage", family, n=n, m=3), family, n) == pytest.approx(1.0, abs=1e-9)


# -- partition -----------------------------------------------------------------


def test_partition_by_hand_n2():
    g = build_grid(B, 1)
    part = partition(g, 2, mode="naive")
    # 00 and the tied 01, 10 go to index 0; 11 to index 1
    np.testing.assert_array_equal(part.assign, [0, 0, 0, 1])
    assert part.mass[0] == pytest.approx(HI**2 + 2 * HI * LO, abs=1e-12)
    assert part.mass[1] == pytest.approx(HI**2, abs=1e-12)
    cells = part.cells()
    np.testing.assert_array_equal(cells[0], [0, 1, 2])


@pytest.mark.parametrize("n", [3, 5, 7, 9, 15])
def test_partition_symmetric_at_odd_n(n):
    part = partition(build_grid(B, 1), n)
    assert part.mass[0] == pytest.approx(part.mass[1], abs=1e-12)


@pytest.mark.parametrize("n", [2, 4, 8, 16])
def test_partition_even_n_tie_mass(n):
    # the only asymmetry is the tied central type class, all given to index 0
    part = partition(build_grid(B, 1), n)
    tie = comb(n, n // 2, exact=True) * (HI * LO) ** (n // 2)
    assert part.mass[0] - part.mass[1] == pytest.approx(tie, abs=1e-12)


@pytest.mark.parametrize("family,n,m", [(B, 10, 2), (T, 6, 3), (markov1(2), 8, 2), (markov1(3), 4, 2)])
def test_partition_types_equals_naive(family, n, m):
    g = build_grid(family, m)
    a = partition(g, n, mode="types")
    b = partition(g, n, mode="naive")
    np.testing.assert_allclose(a.mass, b.mass, atol=1e-12)
    assert np.all(a.mass <= 1 + 1e-12)


@pytest.mark.parametrize("j", [0, 1, 2, 3])
def test_cells_partition_sequence_space(j):
    g = build_grid(B, 2)
    part = partition(g, 7, mode="naive")
    X = all_sequences(2, 7)
    mu = 2.0 ** seq_log_prob_batch(g.point(j), X)
    total = sum(mu[cell].sum() for cell in part.cells().values())
    assert total == pytest.approx(1.0, abs=1e-12)
    assert sum(len(c) for c in part.cells().values()) == 2**7


def test_partition_budget():
    with pytest.raises(BudgetExceeded):
        partition(build_grid(B, 1), 30, mode="naive")
    with pytest.raises(ValueError):
        partition(build_grid(B, 1), 4, mode="bogus")


@given(st.lists(st.integers(0, 2), min_size=1, max_size=7), st.integers(1, 4))
@settings(max_examples=80, deadline=None)
def test_sequence_lies_in_its_own_cell(symbols, m):
    g = build_grid(T, m)
    n = len(symbols)
    part = partition(g, n, mode="naive")
    x = SequenceSample(T, np.array(symbols))
    idx = ml_estimate(x, g)[0]
    row = int(np.ravel_multi_index(tuple(symbols), (3,) * n))
    assert part.assign[row] == idx


def test_partition_cache_roundtrip(tmp_path, monkeypatch):
    monkeypatch.setenv("REDLAB_CACHE_DIR", str(tmp_path))
    g = build_grid(T, 3)
    first = cached_partition(g, 7)
    files = list(tmp_path.glob("partition-*.json"))
    assert len(files) == 1
    data = json.loads(files[0].read_text())
    assert data["format_version"] == 1 and data["n"] == 7 and data["m"] == 3
    again = cached_partition(g, 7)
    assert again.table is None
    np.testing.assert_allclose(again.mass, first.mass, rtol=1e-15)
    with pytest.raises(ValueError):
        Partition.from_dict(data, build_grid(T, 2))


def test_cond_two_stage_checks_n():
    model = CondTwoStageCode(build_grid(B, 1), 8)
    with pytest.raises(ValueError):
        model.lengths(all_sequences(2, 7))


# -- dominance and redundancy formulas ------------------------------------------


@pytest.mark.parametrize("family,n,m", [(B, 12, 1), (B, 12, 3), (T, 7, 2), (markov1(2), 9, 2)])
def test_pointwise_dominance(family, n, m):
    g = build_grid(family, m)
    X = all_sequences(family.k, n)
    two = TwoStageCode(g).lengths(X)
    cond = CondTwoStageCode(g, n).lengths(X)
    assert np.all(cond <= two + 1e-12)
    part = partition(g, n)
    full = np.isclose(part.mass, 1.0, atol=1e-12)
    idx = TwoStageCode(g).estimate(X)
    eq = np.isclose(cond, two, atol=1e-12)
    np.testing.assert_array_equal(eq, full[idx])


@pytest.mark.parametrize("theta_p", [0.1, 0.37, 0.5, 0.9])
def test_redundancy_formulas_two_paths(theta_p):
    """Symbol-level enumeration versus the type-class closed form."""
    from redlab.eval import redundancy_profile

    theta = ParamVector.bernoulli(theta_p)
    n, m = 10, 2
    g = build_grid(B, m)
    X = all_sequences(2, n)
    logp = seq_log_prob_batch(theta, X)
    w = 2.0**logp
    H = -np.sum(w * logp)
    idx = select_estimate(np.stack([seq_log_prob_batch(p, X) for p in g], axis=1))
    own = np.array([seq_log_prob_batch(g.point(i), X[r : r + 1])[0] for r, i in enumerate(idx)])
    A = np.bincount(idx, weights=2.0**own, minlength=len(g))
    two_direct = m + np.sum(w * -own) - H
    cond_direct = m + np.sum(w * (np.log2(A[idx]) - own)) - H
    thetas = theta.probs[None]
    assert redundancy_profile(thetas, TwoStageCode(g), n)[0] == pytest.approx(two_direct, abs=1e-9)
    assert redundancy_profile(thetas, CondTwoStageCode(g, n), n)[0] == pytest.approx(cond_direct, abs=1e-9)
    assert cond_direct >= -1e-12 and two_direct >= cond_direct


# -- optimal m -----------------------------------------------------------------


def test_optimal_m_binary_n8():
    m, val = optimal_m(B, 8, m_range=range(1, 6))
    assert m == 2
    assert val >= minimax_redundancy(B, 8)
    assert val == pytest.approx(2.113, abs=2e-3)


def test_optimal_m_is_argmin():
    from redlab.eval import interior_theta_grid, redundancy_profile

    thetas = interior_theta_grid(B)
    m, val = optimal_m(B, 16, m_range=range(1, 6))
    for other in range(1, 6):
        v = redundancy_profile(thetas, model_for("cond_two_stage", B, n=16, m=other), 16).max()
        assert val <= v + 1e-12


def test_optimal_m_grows_with_n():
    ms = [optimal_m(B, n, m_range=range(1, 9))[0] for n in (8, 64, 512)]
    assert ms[0] <= ms[1] <= ms[2] and ms[0] < ms[2]


def test_optimal_m_expected_and_errors():
    theta = ParamVector.bernoulli(0.5)
    m, val = optimal_m(B, 8, criterion="expected", kind="two_stage", theta=theta, m_range=range(1, 5))
    assert 1 <= m <= 4 and val > 0
    with pytest.raises(ValueError):
        optimal_m(B, 8, criterion="expected")
    with pytest.raises(ValueError):
        optimal_m(B, 8, m_range=[0, 25])
    with pytest.raises(BudgetExceeded):
        optimal_m(T, 2000, m_range=[1, 2])
    with pytest.raises(ValueError):
        optimal_m(markov1(3), 8, m_range=[1])
    m, _ = optimal_m(markov1(2), 6, m_range=[1, 2], theta_spacing=0.1)
    assert m in (1, 2)


def test_model_for_errors():
    with pytest.raises(ValueError):
        model_for("ideal", B)
    with pytest.raises(ValueError):
        model_for("two_stage", B)
    with pytest.raises(ValueError):
        model_for("nope", B, m=1)
