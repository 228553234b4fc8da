import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import minimize_scalar

from kacfront.action import (action, classify_slabs, cost_density, measure_cubic_constant,
                             truncate_field)
from kacfront.dynamics import ForcingField, Trajectory, evolve_unforced
from kacfront.errors import DomainError
from kacfront.grid import Grid1D
from kacfront.statics import droplet, free_energy


def legendre_oracle(b, u, w):
    """H as half the Legendre transform of the two-rate jump generator."""
    s = b - u - w
    A, B = (1 - u) * (1 - w) / 2, (1 + u) * (1 + w) / 2
    r = minimize_scalar(lambda p: -(p * s - A * np.expm1(p) - B * np.expm1(-p)),
                        bounds=(-60, 60), method="bounded", options={"xatol": 1e-13})
    return -0.5 * r.fun


unit = st.floats(-0.98, 0.98)


@settings(max_examples=200, deadline=None)
@given(st.floats(-30, 30), unit, unit)
def test_density_matches_legendre_oracle(b, u, w):
    assert cost_density(b, u, w) == pytest.approx(legendre_oracle(b, u, w), rel=1e-7, abs=1e-12)


@settings(max_examples=200, deadline=None)
@given(st.floats(-1e3, 1e3), unit, unit)
def test_density_nonnegative_and_convex(b, u, w):
    h = 1e-3 * (1 + abs(b))
    H = cost_density(np.array([b - h, b, b + h]), u, w)
    assert H[1] >= 0
    assert H[0] + H[2] - 2 * H[1] >= -1e-12 * (1 + H[1])


def test_density_zero_at_zero_force():
    u, w = np.meshgrid(np.linspace(-0.95, 0.95, 21), np.linspace(-0.95, 0.95, 21))
    assert np.max(np.abs(cost_density(np.zeros_like(u), u, w))) <= 1e-15


@settings(max_examples=100, deadline=None)
@given(unit, unit)
def test_series_branch_is_continuous(u, w):
    cut = 1e-3 * (1 + u * w)
    inside = cost_density(cut * (1 - 1e-9), u, w)
    outside = cost_density(cut * (1 + 1e-9), u, w)
    assert inside == pytest.approx(outside, rel=1e-6)


def test_small_force_quadratic_limit():
    for u, w in [(0.0, 0.0), (0.8, -0.8), (-0.5, 0.3)]:
        b = 1e-5
        assert cost_density(b, u, w) / b ** 2 == pytest.approx(1 / (4 * (1 + u * w)), rel=1e-4)


def test_large_force_ratio_slowly_approaches_half():
    r = [cost_density(b, 0.3, -0.2) / (b * np.log(b + 1)) for b in (1e3, 1e6, 1e12)]
    assert r[0] < r[1] < r[2] < 0.5
    assert r[2] > 0.49


def test_domain_error():
    with pytest.raises(DomainError):
        cost_density(0.1, 1.0, -1.0)


def test_cubic_constant_bound():
    u, w = np.meshgrid(np.linspace(-0.9, 0.9, 11), np.linspace(-0.9, 0.9, 11))
    C = measure_cubic_constant(u, w, 0.1)
    b = np.linspace(-0.1, 0.1, 41)[:, None]
    err = np.abs(cost_density(b, u.ravel(), w.ravel()) - b ** 2 / (4 * (1 + u.ravel() * w.ravel())))
    assert np.all(err <= C * (1 + 1e-9) * np.abs(b) ** 3 + 1e-15)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(0, 1), min_size=1, max_size=30), st.floats(0.01, 1))
def test_good_slab_rule(costs, delta):
    good = classify_slabs(costs, delta)
    for j, c in enumerate(costs):
        expect = c < delta and (j == 0 or costs[j - 1] < delta)
        assert good[j] == expect


def test_truncation():
    g = Grid1D(2.0, 41)
    vals = np.zeros((3, g.n_points))
    vals[1, 20] = 2.0
    b1, mass = truncate_field(ForcingField(g, vals, 1.0), 1.0)
    assert np.all(b1.values == 0)
    # trapezoid in x (weight h) and in t (weight 1 on the interior slice)
    assert mass == pytest.approx(2.0 * g.h)


def test_free_flow_costs_nothing(inst):
    g = inst.grid
    tr = evolve_unforced(droplet(inst, 1.5, 0.0, g), 20.0, 0.05, inst.params, g)
    assert action(tr, inst.params).total < 1e-6


def test_reversed_relaxation_costs_beta_delta_F(inst):
    # H(b) - H(-b') = beta f-weighted rate, so reversing a free relaxation costs beta dF
    g = inst.grid
    tr = evolve_unforced(droplet(inst, 1.5, 0.0, g), 20.0, 0.05, inst.params, g)
    rev = Trajectory(g, tr.values[::-1].copy(), tr.dt)
    rep = action(rev, inst.params)
    dF = free_energy(rev.values[-1], inst.params, g) - free_energy(rev.values[0], inst.params, g)
    assert rep.total == pytest.approx(inst.params.beta * dF, rel=1e-3)


def test_moving_instanton_cost(inst):
    g, v, dt = inst.grid, 0.05, 0.5
    tr = Trajectory(g, np.array([inst.m(g.x - v * t) for t in np.arange(0, 100.01, dt)]), dt)
    rep = action(tr, inst.params, slab_length=50.0, delta=0.1)
    assert rep.total == pytest.approx(0.25 * inst.norm_mprime_nu_sq * v ** 2 * 100, rel=5e-3)
    assert rep.quadratic_cost == pytest.approx(0.25 * inst.norm_mprime_nu_sq * v ** 2 * 100, rel=1e-3)
    assert len(rep.slab_costs) == 2 and rep.bad_count == 0
    assert rep.cost_between(0, 100) == pytest.approx(rep.total)


def test_segments_concatenate(inst):
    g, v = inst.grid, 0.05
    a = Trajectory(g, np.array([inst.m(g.x - v * t) for t in np.arange(0, 10.01, 0.5)]), 0.5)
    b = Trajectory(g, np.array([inst.m(g.x - v * t) for t in np.arange(10, 20.01, 0.25)]), 0.25, 10.0)
    whole = Trajectory(g, np.array([inst.m(g.x - v * t) for t in np.arange(0, 20.01, 0.5)]), 0.5)
    # spline translation noise limits agreement to ~1e-4 relative
    assert action([a, b], inst.params).total == pytest.approx(action(whole, inst.params).total, rel=1e-3)


def test_chunked_rates_match_single_pass(inst):
    from kacfront.action import _segment_rates
    g = inst.grid
    tr = evolve_unforced(0.6 * inst.profile, 3.0, 0.05, inst.params, g)
    tr = Trajectory(g, tr.values[::-1].copy(), tr.dt)
    assert np.allclose(_segment_rates(tr, inst.params, chunk=7),
                       _segment_rates(tr, inst.params, chunk=10_000), rtol=1e-13, atol=1e-16)
