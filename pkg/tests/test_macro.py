import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from kacfront.action import action
from kacfront.analysis import AnalysisParams
from kacfront.errors import DomainError
from kacfront.grid import Grid1D
from kacfront.macro import (MacroProblem, ParticleSchedule, build_moving_instanton,
                            build_nucleation_path, build_upper_bound_strategy,
                            inter_interval_jump, jump_size, macro_cost, mobility,
                            nucleation_gap, optimal_nucleation_count, simulate_particles)
from kacfront.statics import multi_instanton

MU = 1.43185


def problem(R, T, F=1.0, mu=1.0, eps=0.05):
    return MacroProblem(R, T, F, mu, eps)


def test_mobility(inst):
    assert mobility(inst) == pytest.approx(MU, abs=1e-4)


def test_w_n_hand_values():
    pb = problem(3.0, 1.0)  # V = 3, V^2 T / mu = 9
    assert macro_cost(pb, 0) == pytest.approx(9.0)
    assert macro_cost(pb, 1) == pytest.approx(2 + 3 * 1.0)
    assert macro_cost(pb, 2) == pytest.approx(4 + 5 * (3 / 5) ** 2)
    assert optimal_nucleation_count(pb) == (1, pytest.approx(5.0))
    with pytest.raises(DomainError):
        macro_cost(pb, -1)


def test_ties_pick_fewest_nucleations():
    # w_0 = w_1 exactly when V^2 T/mu = 3 (F = 1): 3 = 2 + 1
    pb = problem(np.sqrt(3.0), 1.0)
    assert optimal_nucleation_count(pb)[0] == 0


@settings(max_examples=100, deadline=None)
@given(st.floats(0.01, 50), st.floats(0.01, 50))
def test_minimizer_monotone_in_speed(v1, v2):
    a, b = sorted((v1, v2))
    na = optimal_nucleation_count(problem(a, 1.0))[0]
    nb = optimal_nucleation_count(problem(b, 1.0))[0]
    assert na <= nb


@settings(max_examples=100, deadline=None)
@given(st.floats(0.01, 30), st.floats(0.1, 10))
def test_minimum_beats_every_n(V, T):
    pb = problem(V * T, T)
    n, w = optimal_nucleation_count(pb)
    assert all(w <= macro_cost(pb, k) + 1e-12 for k in range(60))


def test_from_ratio(inst):
    pb = MacroProblem.from_ratio(5.0, 20.0, inst)
    assert pb.ratio == pytest.approx(5.0)
    assert pb.P == pytest.approx(1.05 * optimal_nucleation_count(pb)[1])


def test_nucleation_gap(inst):
    assert nucleation_gap(inst, 0.05) == pytest.approx(1.05)


def test_nucleation_path(inst):
    g = Grid1D.from_spacing(15.0, inst.grid.h)
    path = build_nucleation_path(inst, 0.05, g)
    first, last = path.segments[0].values[0], path.segments[-1].values[-1]
    assert np.all(first == inst.m_beta)
    assert np.max(np.abs(last - multi_instanton(inst, [-0.525, 0.525], g, min_gap=0) * -1)) < 1e-12
    for s in path.segments:
        assert np.max(np.abs(s.values - s.values[:, ::-1])) <= 1e-12
    rep = action(path.segments, inst.params)
    assert rep.total == pytest.approx(inst.params.beta * rep.free_energy_change, rel=1e-3)
    assert path.droplet_energy / inst.F_bar == pytest.approx(1.8920, abs=1e-3)  # gap 1.05


def test_moving_instanton_endpoints(inst):
    pb = MacroProblem(1.0, 1.0, inst.F_bar, mobility(inst), 0.05)
    tr = build_moving_instanton(pb, inst, inst.grid, dt=1.0)
    g = inst.grid
    assert np.allclose(tr.values[0], inst.m(g.x + 10))
    assert np.allclose(tr.values[-1], inst.m(g.x - 10))
    with pytest.raises(DomainError):
        build_moving_instanton(MacroProblem(2.0, 1.0, inst.F_bar, 1.0), inst, g)


@pytest.fixture(scope="module")
def small_strategy(inst):
    pb = MacroProblem.from_ratio(5.0, 2.0, inst)
    st_ = build_upper_bound_strategy(pb, 1, inst)
    rep = action(st_.segments, inst.params, 50.0, AnalysisParams().delta)
    return pb, st_, rep


def test_strategy_endpoints_and_schedule(inst, small_strategy):
    pb, st_, rep = small_strategy
    g = st_.grid
    assert st_.horizon == pytest.approx(pb.horizon)
    assert np.array_equal(st_.final_profile(), inst.m(g.x - 0.5 * pb.displacement))
    assert np.allclose(st_.segments[0].values[0], inst.m(g.x + 0.5 * pb.displacement), atol=1e-12)
    assert st_.schedule.check_rules() == []
    assert len(st_.schedule.nucleations) == 1 and st_.schedule.n_particles == 3
    # births and annihilations cover the two gaps without any front motion
    covered = st_.info["ell"] + st_.info["release_gap"]
    assert st_.schedule.displacement() + covered == pytest.approx(pb.displacement, rel=1e-9)


def test_strategy_cost_budget(inst, small_strategy):
    pb, st_, rep = small_strategy
    F = inst.F_bar
    # one nucleation costs about beta F(droplet); translation costs at least the bare bound
    assert rep.total > 2 * F
    assert rep.total < macro_cost(pb, 1) + 1.5 * F
    assert rep.bad_count >= 1


def test_particle_bounds(inst, small_strategy):
    pb, st_, rep = small_strategy
    bound = simulate_particles(pb, st_.schedule, inst)
    assert bound.lower_bound <= rep.total
    assert bound.nucleations == 1
    assert bound.feasible


def test_single_particle_bare_bound_is_w0(inst):
    pb = MacroProblem(1.0, 1.0, inst.F_bar, mobility(inst), 0.05)
    s = ParticleSchedule.single(0.0, -10.0, pb.horizon, 10.0)
    assert simulate_particles(pb, s, inst).bare_bound == pytest.approx(macro_cost(pb, 0))


def test_schedule_round_trip(tmp_path, small_strategy):
    _, st_, _ = small_strategy
    p = tmp_path / "sched.csv"
    st_.schedule.save(p)
    assert open(p).readline().strip() == "time,kind,index,position"
    back = ParticleSchedule.load(p)
    assert back.tracks == st_.schedule.tracks
    assert back.nucleations == st_.schedule.nucleations
    assert back.collisions == st_.schedule.collisions


def test_schedule_rules_catch_bad_pairs():
    s = ParticleSchedule.single(0, 0, 1, 1)
    s.nucleations.append((0.5, 3, 4, 0.0))
    s.collisions.append((0.9, 1, 3))
    assert len(s.check_rules(n_star=0)) == 3


def test_jump_erases_close_pairs(inst):
    p = AnalysisParams(epsilon=0.05)
    r = [-30.0, -2.0, 2.0, 30.0, 50.0]
    res = inter_interval_jump(r, 0.0, p, inst)
    assert res.S_eps == 0.0
    assert res.erased == [(2, 3)]
    assert res.r_plus.tolist() == [-30.0, 30.0, 50.0]


def test_jump_shift_direction(inst):
    p = AnalysisParams(epsilon=0.05, S=1.0)
    res = inter_interval_jump([-20.0, 20.0], 1e-3, p, inst)
    assert res.r_hat[0] > -20 and res.r_hat[1] < 20


@settings(max_examples=50, deadline=None)
@given(st.floats(1e-8, 0.2), st.floats(1e-8, 0.2))
def test_jump_shrinks_with_epsilon(e1, e2):
    a, b = sorted((e1, e2))
    if b / a < 1.01:
        return
    pa, pb = AnalysisParams(epsilon=a), AnalysisParams(epsilon=b)
    Sa = jump_size(pa.delta, pa, 1.5, kappa_c=0.0)
    Sb = jump_size(pb.delta, pb, 1.5, kappa_c=0.0)
    assert Sa < Sb
