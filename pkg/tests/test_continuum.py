import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import trapezoid

from queuetoll.continuum import (
    ContinuumSpec,
    TruncatedExponential,
    Uniform,
    continuum_cost,
    continuum_pigouvian_prices,
    distribution_from_dict,
    envelope_violation,
    indifference_residual,
    make_allocation,
    monte_carlo_cost,
    ordering_violations,
    solve_continuum_equilibrium,
    solve_continuum_optimum,
    threshold_flows,
)
from queuetoll.costs import MM1MeanDelay
from queuetoll.model import InfeasibleError
from reference import continuum_suite


def cspec(lam, dist, mus):
    return ContinuumSpec(lam, dist, tuple(MM1MeanDelay(m) for m in mus))


def two_queue_grid(lam, hi, mus, step=1e-4):
    """Brute-force optimum over one threshold for Uniform(0, hi), both queue orders."""
    t = np.arange(0.0, hi + step / 2, step)
    best = (math.inf, None, None)
    for top, bottom in ((0, 1), (1, 0)):
        g_top = lam * (hi - t) / hi
        g_bot = lam * t / hi
        with np.errstate(divide="ignore", invalid="ignore"):
            d_top = np.where(g_top < mus[top], 1.0 / (mus[top] - g_top), np.inf)
            d_bot = np.where(g_bot < mus[bottom], 1.0 / (mus[bottom] - g_bot), np.inf)
        U = lam * (d_top * (hi**2 - t**2) / (2 * hi) + d_bot * t**2 / (2 * hi))
        k = int(np.argmin(U))
        if U[k] < best[0]:
            best = (float(U[k]), float(t[k]), top)
    return best


def test_distribution_basics():
    u = Uniform(0.0, 10.0)
    assert u.cdf(4.0) == pytest.approx(0.4)
    assert u.partial_moment(5.0, 10.0) == pytest.approx(3.75)
    assert u.mean() == pytest.approx(5.0)
    e = TruncatedExponential(1.0, 5.0)
    assert e.cdf(5.0) == pytest.approx(1.0)
    assert float(e.quantile(e.cdf(1.3))) == pytest.approx(1.3)
    x = np.linspace(0, 5, 200001)
    dens = np.exp(-x) / (1 - math.exp(-5))
    assert e.partial_moment(1.0, 3.0) == pytest.approx(
        trapezoid(np.where((x >= 1) & (x <= 3), x * dens, 0), x), rel=1e-4
    )
    assert distribution_from_dict(e.to_dict()) == e
    with pytest.raises(ValueError):
        Uniform(2.0, 1.0)
    with pytest.raises(ValueError):
        TruncatedExponential(1.0, math.inf)


def test_flows_single_and_two_queues():
    one = cspec(1.0, Uniform(0, 10), [2.0])
    np.testing.assert_allclose(threshold_flows(one, make_allocation(one, [0], [0.0])), [1.0])
    two = cspec(1.0, Uniform(0, 10), [2.0, 2.0])
    np.testing.assert_allclose(make_allocation(two, [0, 1], [4.0, 0.0]).flows, [0.6, 0.4])


def test_flows_truncated_exponential():
    s = cspec(2.0, TruncatedExponential(1.0, 5.0), [3.0, 3.0])
    alloc = make_allocation(s, [0, 1], [1.0, 0.0])
    expected = 2 * (math.exp(-1) - math.exp(-5)) / (1 - math.exp(-5))
    assert alloc.flows[0] == pytest.approx(expected, rel=1e-13)


def test_allocation_validation():
    s = cspec(1.0, Uniform(0, 10), [2.0, 2.0])
    with pytest.raises(ValueError, match="decreasing"):
        make_allocation(s, [0, 1], [0.0, 4.0])
    with pytest.raises(ValueError, match="distinct"):
        make_allocation(s, [0, 0], [4.0, 0.0])
    with pytest.raises(ValueError):
        make_allocation(s, [0, 1], [4.0])


def test_spec_validation():
    with pytest.raises(InfeasibleError, match="exceeds capacity"):
        cspec(3.0, Uniform(0, 1), [1.0, 1.0])
    with pytest.raises(ValueError):
        cspec(0.0, Uniform(0, 1), [1.0])


def test_cost_examples():
    one = cspec(1.0, Uniform(0, 2), [2.0])
    assert continuum_cost(one, make_allocation(one, [0], [0.0])) == pytest.approx(1.0)
    two = cspec(1.0, Uniform(0, 2), [2.0, 2.0])
    assert continuum_cost(two, make_allocation(two, [0, 1], [1.0, 0.0])) == pytest.approx(2 / 3)


def test_cost_infinite_when_overloaded():
    s = cspec(1.5, Uniform(0, 1), [1.0, 1.0])
    assert continuum_cost(s, make_allocation(s, [0, 1], [0.1, 0.0])) == math.inf


@pytest.mark.parametrize(
    "dist,mus,order,th",
    [
        (Uniform(0, 10), [2.0, 1.2], [0, 1], [3.0, 0.0]),
        (TruncatedExponential(0.7, 4.0), [1.5, 1.0, 0.8], [2, 0, 1], [2.0, 0.8, 0.0]),
        (Uniform(1, 3), [1.0, 1.0], [1, 0], [2.2, 0.0]),
    ],
)
def test_cost_agrees_with_monte_carlo(dist, mus, order, th):
    s = cspec(1.2, dist, mus)
    alloc = make_allocation(s, order, th)
    est, se = monte_carlo_cost(s, alloc, 10**6, seed=11)
    assert abs(est - continuum_cost(s, alloc)) <= 3 * se


def test_optimum_against_grid():
    s = cspec(1.0, Uniform(0, 10), [2.0, 1.2])
    opt = solve_continuum_optimum(s)
    U, t, top = two_queue_grid(1.0, 10.0, [2.0, 1.2])
    assert opt.allocation.used_queue_order[0] == top
    assert opt.allocation.thresholds[0] == pytest.approx(t, abs=1e-3)
    assert opt.cost <= U + 1e-9
    assert not ordering_violations(s, opt.allocation)


def test_identical_queues_optimum_is_asymmetric():
    # the high-sensitivity block gets the lighter queue, so the split is off the median
    s = cspec(1.0, Uniform(0, 10), [2.0, 2.0])
    opt = solve_continuum_optimum(s)
    U, t, _ = two_queue_grid(1.0, 10.0, [2.0, 2.0])
    assert opt.allocation.thresholds[0] == pytest.approx(t, abs=1e-3)
    assert opt.allocation.thresholds[0] > 5.0 + 0.1
    half = make_allocation(s, [0, 1], [5.0, 0.0])
    assert opt.cost < continuum_cost(s, half)


def test_optimum_drops_useless_queue():
    s = cspec(0.3, Uniform(1, 2), [5.0, 0.1])
    opt = solve_continuum_optimum(s)
    assert opt.allocation.used_queue_order == (0,)
    assert opt.allocation.flows[1] == 0.0


def test_optimum_rejects_too_many_queues():
    s = cspec(1.0, Uniform(0, 1), [1.0] * 7)
    with pytest.raises(ValueError, match="limited"):
        solve_continuum_optimum(s)


def test_equilibrium_near_equal_prices_is_symmetric():
    s = cspec(1.0, Uniform(0, 10), [2.0, 2.0])
    eq = solve_continuum_equilibrium(s, [1e-6, 0.0])
    assert eq.used_queue_order == (0, 1)
    assert eq.thresholds[0] == pytest.approx(5.0, abs=1e-3)


def test_equilibrium_against_grid():
    s = cspec(1.0, Uniform(0, 10), [2.0, 1.2])
    eq = solve_continuum_equilibrium(s, [0.5, 0.0])
    t = np.arange(0.0, 10.0, 1e-5)
    gap = 0.5 - t * (1 / (1.2 - t / 10) - 1 / (2.0 - (10 - t) / 10))
    t_grid = t[np.argmin(np.abs(gap))]
    assert eq.thresholds[0] == pytest.approx(t_grid, abs=1e-4)
    assert indifference_residual(s, [0.5, 0.0], eq) <= 1e-8
    assert envelope_violation(s, [0.5, 0.0], eq) <= 1e-8


def test_equilibrium_price_too_high_empties_queue():
    s = cspec(0.5, Uniform(0, 1), [2.0, 2.0])
    eq = solve_continuum_equilibrium(s, [100.0, 0.0])
    assert eq.used_queue_order == (1,)
    np.testing.assert_allclose(eq.flows, [0.0, 0.5])


def test_equilibrium_price_validation():
    s = cspec(1.0, Uniform(0, 10), [2.0, 2.0])
    with pytest.raises(ValueError, match="equal"):
        solve_continuum_equilibrium(s, [0.5, 0.5])
    with pytest.raises(ValueError):
        solve_continuum_equilibrium(s, [0.5])


def test_pigouvian_examples():
    one = cspec(1.0, Uniform(0, 2), [2.0])
    assert continuum_pigouvian_prices(one, make_allocation(one, [0], [0.0])).by_queue[0] == pytest.approx(1.0)
    two = cspec(1.0, Uniform(0, 10), [2.0, 2.0])
    pp = continuum_pigouvian_prices(two, make_allocation(two, [0, 1], [5.0, 0.0]), strict=False)
    np.testing.assert_allclose(pp.by_queue, [(4 / 9) * 3.75, (4 / 9) * 1.25])


def test_pigouvian_matches_discretized_discrete_formula():
    # slicing F into many thin classes reproduces the per-class externality sum
    s = cspec(1.3, Uniform(0.5, 3.0), [2.0, 1.0])
    alloc = make_allocation(s, [0, 1], [1.7, 0.0])
    edges = np.linspace(0.5, 3.0, 20001)
    mids = 0.5 * (edges[1:] + edges[:-1])
    rate = 1.3 * np.diff(edges) / 2.5
    expected = []
    for j, lo, hi in alloc.intervals:
        mask = (mids >= lo) & (mids < hi)
        g = alloc.flows[j]
        expected.append(np.sum(mids[mask] * rate[mask]) / (s.queues[j].capacity - g) ** 2)
    pp = continuum_pigouvian_prices(s, alloc, strict=False)
    np.testing.assert_allclose(pp.by_queue, expected, rtol=1e-6)


@pytest.mark.parametrize("k", range(10))
def test_round_trip_suite(k):
    s = continuum_suite()[k]
    opt = solve_continuum_optimum(s)
    assert not ordering_violations(s, opt.allocation)
    pp = continuum_pigouvian_prices(s, opt.allocation)
    prices = pp.by_queue.copy()
    # unused queues: any price that keeps them empty; push it above the used ones
    for j in pp.unused:
        prices[j] = prices.max() + 1.0 + j
    eq = solve_continuum_equilibrium(s, prices)
    assert eq.used_queue_order == opt.allocation.used_queue_order
    np.testing.assert_allclose(eq.thresholds, opt.allocation.thresholds, atol=1e-4)
    assert indifference_residual(s, prices, eq) <= 1e-8


@settings(max_examples=40, deadline=None)
@given(
    lo=st.floats(0.0, 2.0),
    width=st.floats(0.1, 5.0),
    cuts=st.lists(st.floats(0.01, 0.99), min_size=1, max_size=3, unique=True),
    lam=st.floats(0.1, 2.0),
)
def test_mass_conservation(lo, width, cuts, lam):
    dist = Uniform(lo, lo + width)
    s = cspec(lam, dist, [lam + 1.0] * (len(cuts) + 1))
    th = sorted((lo + c * width for c in cuts), reverse=True) + [lo]
    if any(b >= a for a, b in zip(th, th[1:])):
        return
    alloc = make_allocation(s, range(len(th)), th)
    assert abs(alloc.flows.sum() - lam) <= 1e-12 * max(1.0, lam)
