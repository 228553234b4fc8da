import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import quad
from scipy.optimize import brentq, fsolve

from kacfront.errors import DomainError
from kacfront.grid import Grid1D, kernel_function
from kacfront.statics import (ModelParams, calibrate_ell_star, compute_instanton, droplet,
                              energy_gradient, free_energy, mean_field_magnetization,
                              multi_instanton, translate_instanton)

# Values below were produced by independent oracles (fsolve, quad + brentq) or,
# where no closed form exists, frozen from a converged run at h = 0.05.
M_BETA_15 = 0.85855963664011
F_BAR = 0.1068558
NORM_MPRIME = 2.79358
ELL_STAR = 0.84315


@pytest.mark.parametrize("beta", [1.05, 1.5, 2.0, 3.0, 10.0])
def test_mean_field_magnetization_matches_fsolve(beta):
    oracle = fsolve(lambda m: m - np.tanh(beta * m), 0.9, xtol=1e-15)[0]
    assert mean_field_magnetization(beta) == pytest.approx(oracle, abs=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.floats(1.01, 15.0))
def test_magnetization_is_a_positive_fixed_point(beta):
    m = mean_field_magnetization(beta)
    assert 0 < m < 1
    assert abs(m - np.tanh(beta * m)) < 1e-13


def test_subcritical_beta_rejected():
    with pytest.raises(DomainError):
        ModelParams(1.0)
    with pytest.raises(DomainError):
        mean_field_magnetization(0.5)


def test_instanton_frozen_values(inst):
    assert inst.m_beta == pytest.approx(M_BETA_15, abs=1e-13)
    assert inst.F_bar == pytest.approx(F_BAR, abs=1e-6)
    assert inst.norm_mprime_nu_sq == pytest.approx(NORM_MPRIME, abs=1e-4)
    assert inst.residual < 1e-12


def test_decay_rate_matches_linearised_tail(inst):
    # the tail solves 1 = beta (1 - m_beta^2) int J(r) cosh(alpha r) dr
    b, mb = inst.params.beta, inst.m_beta
    f = lambda a: b * (1 - mb ** 2) * quad(lambda r: kernel_function(r) * np.cosh(a * r), -1, 1)[0] - 1
    alpha = brentq(f, 0.5, 20)
    assert inst.decay_alpha == pytest.approx(alpha, rel=2e-3)


def test_instanton_shape(inst):
    m = inst.profile
    assert np.max(np.abs(m + m[::-1])) < 1e-12
    assert np.all(np.diff(m) >= 0)
    core = np.abs(inst.grid.x) < 5
    assert np.all(np.diff(m[core]) > 0)
    assert m[0] == pytest.approx(-inst.m_beta, abs=1e-10)
    assert inst.mprime.max() == pytest.approx(inst.mprime[inst.grid.n_points // 2])


def test_instanton_needs_room():
    with pytest.raises(DomainError):
        compute_instanton(ModelParams(1.5), Grid1D.from_spacing(5.0, 0.1))


def test_translation_and_spline(inst):
    g = inst.grid
    m = translate_instanton(inst, 1.0)
    assert m[g.index_of(1.0)] == pytest.approx(0.0, abs=1e-12)
    assert np.allclose(inst.m(g.x), inst.profile, atol=1e-14)


def test_multi_instanton_alternates(inst):
    g = inst.grid
    m = multi_instanton(inst, [-8.0, 0.0, 8.0], g)
    assert m[0] == pytest.approx(-inst.m_beta, abs=1e-10)
    assert m[g.index_of(-4.0)] == pytest.approx(inst.m_beta, abs=1e-6)
    assert m[g.index_of(4.0)] == pytest.approx(-inst.m_beta, abs=1e-6)
    with pytest.raises(DomainError):
        multi_instanton(inst, [0.0, 1.0], g)


@pytest.mark.parametrize("gap,ratio", [(0.5, 1.4692), (2.0, 1.9972), (3.0, 1.99996)])
def test_droplet_energy(inst, gap, ratio):
    g = inst.grid
    e = free_energy(droplet(inst, gap, 0.0, g), inst.params, g) / inst.F_bar
    assert e == pytest.approx(ratio, abs=2e-4)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000))
def test_gradient_matches_finite_differences(seed):
    from kacfront.acceptance import instanton
    inst = instanton()
    g, p = inst.grid, inst.params
    rng = np.random.default_rng(seed)
    m = np.clip(inst.profile + 0.2 * rng.standard_normal(g.n_points), -0.95, 0.95)
    v = 1e-6 * rng.standard_normal(g.n_points)
    fd = (free_energy(m + v, p, g) - free_energy(m - v, p, g)) / 2
    assert fd == pytest.approx(g.integrate(energy_gradient(m, p, g) * v), rel=1e-5, abs=1e-15)


def test_free_energy_vectorised_and_zero_at_pure_phase(inst):
    g, p = inst.grid, inst.params
    both = np.vstack([inst.profile, np.full(g.n_points, inst.m_beta)])
    F = free_energy(both, p, g)
    assert F.shape == (2,)
    assert F[1] == pytest.approx(0.0, abs=1e-14)


def test_free_energy_warns_at_clamp(inst):
    g, p = inst.grid, inst.params
    with warnings.catch_warnings(record=True) as rec:
        warnings.simplefilter("always")
        free_energy(np.ones(g.n_points), p, g)
    assert any("clamp" in str(r.message) for r in rec)


def test_ell_star(inst):
    assert calibrate_ell_star(inst) == pytest.approx(ELL_STAR, abs=1e-4)
