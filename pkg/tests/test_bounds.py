import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from redlab import bounds
from redlab.bounds import (
    CurveKind,
    Flag,
    main_term_only,
    minimax_line,
    minimax_redundancy,
    minimax_two_stage,
    thm1_curve,
    thm1_failure_mass,
    thm2_curve,
    thm2_failure_mass,
    two_stage_penalty,
    two_stage_penalty_asymptotic,
    unit_ball_volume,
)
from redlab.family import JeffreysIntegral, markov1, memoryless

P0_GRID = bounds.default_p0_grid()


def test_unit_ball_volume_low_dimensions():
    assert unit_ball_volume(1) == pytest.approx(2.0)
    assert unit_ball_volume(2) == pytest.approx(math.pi)
    assert unit_ball_volume(3) == pytest.approx(4 * math.pi / 3)
    assert unit_ball_volume(3) == pytest.approx(4.18879, abs=1e-5)


def test_unit_ball_volume_recurrence_and_peak():
    # V_d = (2 pi / d) V_{d-2}
    for d in range(3, 30):
        assert unit_ball_volume(d) == pytest.approx(2 * math.pi / d * unit_ball_volume(d - 2), rel=1e-12)
    vols = [unit_ball_volume(d) for d in range(1, 20)]
    assert int(np.argmax(vols)) + 1 == 5
    assert all(np.diff(vols[:5]) > 0) and all(np.diff(vols[4:]) < 0)


@pytest.mark.parametrize("bad", [0, -3])
def test_bad_dimension(bad):
    with pytest.raises(ValueError):
        unit_ball_volume(bad)
    with pytest.raises(ValueError):
        two_stage_penalty(bad)


def test_two_stage_penalty_values():
    assert two_stage_penalty(1) == pytest.approx(0.5 * math.log2(math.pi * math.e / 2), rel=1e-12)
    assert two_stage_penalty(1) == pytest.approx(1.047, abs=1e-3)
    assert two_stage_penalty(2) == pytest.approx(math.log2(math.e), rel=1e-12)
    assert two_stage_penalty(65280) == pytest.approx(8.8, abs=0.05)


def test_two_stage_penalty_asymptotics():
    assert abs(two_stage_penalty(10**6) - two_stage_penalty_asymptotic(10**6)) <= 0.01
    gaps = [abs(two_stage_penalty(d) - two_stage_penalty_asymptotic(d)) for d in (10, 100, 1000, 10**4, 10**5)]
    assert all(np.diff(gaps) < 0)


@given(st.integers(1, 10**7))
@settings(max_examples=60, deadline=None)
def test_two_stage_penalty_positive(d):
    assert two_stage_penalty(d) > 0


def test_minimax_examples():
    f = memoryless(2)
    assert minimax_redundancy(f, 8) == pytest.approx(1.826, abs=1e-3)
    assert minimax_redundancy(f, 1) == pytest.approx(0.5 * math.log2(1 / (2 * math.pi)) + math.log2(math.pi))
    assert minimax_redundancy(f, 1) == pytest.approx(0.326, abs=1e-3)
    assert minimax_two_stage(f, 8) == pytest.approx(2.86, abs=0.05)
    assert minimax_redundancy(markov1(2), 12, JeffreysIntegral(3.6639)) == pytest.approx(2.794, abs=0.05)


@pytest.mark.parametrize("n", [1, 8, 100, 4096])
def test_minimax_two_stage_additivity(n):
    assert minimax_two_stage(memoryless(2), n) - minimax_redundancy(memoryless(2), n) == pytest.approx(two_stage_penalty(1))
    assert minimax_two_stage(memoryless(3), n) - minimax_redundancy(memoryless(3), n) == pytest.approx(math.log2(math.e))


@pytest.mark.parametrize(
    "n,p0,expected", [(32, 0.4, 4.26), (128, 0.4, 6.26), (32, 0.6, 3.67), (128, 0.6, 5.68)]
)
def test_thm1_ternary_reference_points(n, p0, expected):
    assert thm1_curve(memoryless(3), n, [p0]).r0[0] == pytest.approx(expected, abs=0.01)


def test_thm1_epsilon_zero_endpoint():
    c = thm1_curve(memoryless(3), 32, [1e-9])
    assert c.r0[0] == pytest.approx(5.0, abs=1e-6)


def test_thm1_solution_satisfies_the_failure_mass():
    # independent check: plug eps back into the failure mass
    f = memoryless(3)
    for n in (8, 32, 512):
        for p0 in (0.1, 0.37, 0.8):
            r0 = thm1_curve(f, n, [p0]).r0[0]
            eps = 1 - r0 / (0.5 * f.d * math.log2(n))
            assert 1 - thm1_failure_mass(f, n, eps) == pytest.approx(p0, abs=1e-12)


def test_ternary_failure_mass_is_n_to_minus_eps():
    f = memoryless(3)
    for n in (8, 32, 128, 512):
        for eps in (0.0, 0.1, 0.5, 1.0):
            assert thm1_failure_mass(f, n, eps) == pytest.approx(n**-eps, abs=1e-12)


def test_fact1_recovery_monotone():
    f = memoryless(3)
    for eps in (0.05, 0.3):
        mass = [thm1_failure_mass(f, 2**e, eps) for e in range(3, 21)]
        assert all(np.diff(mass) < 0)
        assert mass[-1] < mass[0]


def test_thm2_example_and_vacuous():
    f = memoryless(2)
    # eps = 0 at n=8: P0 = 1 - (2/pi) e^{-1/2}
    p0 = 1 - (2 / math.pi) * math.exp(-0.5)
    assert p0 == pytest.approx(0.614, abs=1e-3)
    assert 1 - thm2_failure_mass(f, 8, 0.0) == pytest.approx(p0)
    c = thm2_curve(f, 8, [p0 - 1e-9])
    assert c.r0[0] == pytest.approx(1.5, abs=1e-6)
    # the eps=1 point gives R0 = 0
    p_eps1 = 1 - thm2_failure_mass(f, 64, 1.0)
    c = thm2_curve(f, 64, [p_eps1 + 1e-9, 0.999])
    assert c.r0[0] == pytest.approx(0.0, abs=1e-6)
    assert c.r0[1] == 0.0 and c.flags[1] is Flag.VACUOUS


@pytest.mark.parametrize("family", [memoryless(2), memoryless(3), memoryless(5)])
@pytest.mark.parametrize("n", [8, 64, 512, 4096])
def test_thm2_lies_g_above_thm1(family, n):
    """Two-stage curves sit exactly g(d) bits above conditional ones where neither is clipped."""
    c1 = thm1_curve(family, n, P0_GRID)
    c2 = thm2_curve(family, n, P0_GRID)
    both = np.array([a is Flag.OK and b is Flag.OK for a, b in zip(c1.flags, c2.flags)])
    assert both.any()
    np.testing.assert_allclose(c2.r0[both] - c1.r0[both], two_stage_penalty(family.d), atol=1e-9)
    assert np.all(c2.r0 >= c1.r0 - 1e-12)


@pytest.mark.parametrize("curve_fn", [thm1_curve, thm2_curve])
@pytest.mark.parametrize("family", [memoryless(2), memoryless(3)])
def test_curve_monotonicity(curve_fn, family):
    prev = None
    for n in (8, 32, 128, 512, 4096):
        c = curve_fn(family, n, P0_GRID)
        assert np.all(np.diff(c.r0) <= 1e-12)
        ok = np.array([f is Flag.OK for f in c.flags])
        assert np.all(np.diff(c.r0[ok]) < 0)
        if prev is not None:
            assert np.all(c.r0 >= prev.r0 - 1e-12)
        prev = c


def test_unclipped_thm1_equals_minimax_plus_log_tail():
    f = memoryless(2)
    c = thm1_curve(f, 512, P0_GRID)
    ok = np.array([fl is Flag.OK for fl in c.flags])
    np.testing.assert_allclose(c.r0[ok], minimax_redundancy(f, 512) + np.log2(1 - c.p0[ok]), atol=1e-9)


def test_saturated_points_flagged():
    # Bernoulli: (2 pi)^{1/2} / pi < 1, so small P0 needs eps < 0
    c = thm1_curve(memoryless(2), 64, [0.01, 0.99])
    assert c.flags[0] is Flag.SATURATED
    assert c.r0[0] == pytest.approx(0.5 * math.log2(64))


@pytest.mark.parametrize("bad", [[0.0], [1.0], [-0.1], [0.3, 1.2]])
def test_bad_p0(bad):
    with pytest.raises(ValueError):
        thm1_curve(memoryless(2), 8, bad)


def test_minimax_lines_constant():
    c = minimax_line(memoryless(2), 8, P0_GRID)
    assert c.kind is CurveKind.MINIMAX
    assert np.ptp(c.r0) == 0
    c2 = minimax_line(memoryless(2), 8, P0_GRID, two_stage=True)
    np.testing.assert_allclose(c2.r0 - c.r0, two_stage_penalty(1))


def test_main_term_only_examples():
    assert bounds.main_term(65280, 262144) == pytest.approx(587_520)
    assert bounds.main_term(65280, 262144) >= 100_000
    assert bounds.main_term_at(2, 32, 0.0) == pytest.approx(5.0)
    assert bounds.main_term_at(1, 4096, 0.5) == pytest.approx(3.0)
    c = main_term_only(65280, 262144, [0.5])
    assert c.flags[0] is Flag.APPROXIMATE
    assert c.provenance["integral_source"].startswith("omitted")


def test_main_term_only_with_constant_matches_thm1():
    f = memoryless(3)
    a = main_term_only(f.d, 128, P0_GRID, log2_integral=math.log2(2 * math.pi))
    b = thm1_curve(f, 128, P0_GRID)
    np.testing.assert_allclose(a.r0, b.r0, atol=1e-12)


def test_curve_serialisation():
    c = thm1_curve(memoryless(3), 32, [0.4, 0.6])
    lines = c.to_csv().strip().splitlines()
    assert lines[0] == "p0,r0,flag"
    p, r, flag = lines[1].split(",")
    assert float(p) == 0.4 and float(r) == pytest.approx(4.263, abs=1e-3) and flag == "ok"
    data = c.to_dict()
    assert data["kind"] == "thm1" and data["provenance"]["integral"]["method"] == "closed-form"
    assert c.at(0.6) == pytest.approx(3.678, abs=1e-3)
