"""Acceptance suite: one function per criterion, each returning a CriterionResult."""
import time
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.optimize import brentq

from .action import action, cost_density, quadratic_error_audit, truncate_field
from .analysis import (AnalysisParams, find_centers, first_order_center, lipschitz_bound,
                       spectral_gap, spectral_gap_dense)
from .dynamics import ForcingField, Trajectory, evolve_forced, evolve_unforced, force_of
from .errors import ConvergenceError
from .grid import Grid1D
from .macro import (MacroProblem, audit_bad_intervals, build_moving_instanton,
                    build_nucleation_path, build_upper_bound_strategy, macro_cost,
                    optimal_nucleation_count, simulate_particles)
from .statics import (ModelParams, compute_instanton, free_energy, mean_field_magnetization,
                      translate_instanton)
from .dynamics import solve_coupled_system


@dataclass
class CriterionResult:
    number: int
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0
    budget: float = np.inf

    def line(self):
        tag = "PASS" if self.passed else "FAIL"
        return f"[{tag}] {self.number:2d} {self.name}: {self.detail} ({self.seconds:.1f} s / {self.budget:g} s)"


@lru_cache(maxsize=4)
def instanton(beta=1.5):
    return compute_instanton(ModelParams(beta))


def _uw_grid(n=21):
    u = np.linspace(-0.95, 0.95, n)
    U, W = np.meshgrid(u, u)
    return U.ravel(), W.ravel()


def _smooth_random(rng, x, n_modes=6, scale=1.0):
    """Random sum of Gaussian bumps, normalised to unit sup norm."""
    out = np.zeros_like(x)
    for _ in range(n_modes):
        c = rng.uniform(x[0], x[-1])
        w = rng.uniform(0.5, 3.0)
        out += rng.standard_normal() * np.exp(-((x - c) / w) ** 2)
    return scale * out / max(np.max(np.abs(out)), 1e-300)


def crit_h_sanity():
    U, W = _uw_grid()
    h0 = np.max(np.abs(cost_density(np.zeros_like(U), U, W)))
    rng = np.random.default_rng(1)
    n = 100_000
    u = rng.uniform(-0.99, 0.99, n)
    w = rng.uniform(-0.99, 0.99, n)
    b = rng.standard_normal(n) * 10.0 ** rng.uniform(-4, 2, n)
    H = cost_density(b, u, w)
    step = 1e-3 * (1 + np.abs(b))
    second = cost_density(b + step, u, w) + cost_density(b - step, u, w) - 2 * H
    ok = h0 <= 1e-12 and H.min() >= 0 and second.min() >= -1e-12 * (1 + H.max())
    return ok, f"max|H(0)|={h0:.2e}, min H={H.min():.2e}, min second difference={second.min():.2e}"


def crit_h_asymptotics():
    U, W = _uw_grid()
    worst_small = 0.0
    for b in (1e-4, -1e-4):
        H = cost_density(np.full_like(U, b), U, W)
        ref = 1.0 / (4 * (1 + U * W))
        worst_small = max(worst_small, np.max(np.abs(H / b ** 2 - ref) / ref))
    lo, hi = np.inf, -np.inf
    for b in (1e6, -1e6):
        r = cost_density(np.full_like(U, b), U, W) / (abs(b) * np.log(abs(b) + 1))
        lo, hi = min(lo, r.min()), max(hi, r.max())
    ok = worst_small <= 1e-3 and lo >= 0.49 and hi <= 0.51
    return ok, f"small-b rel err={worst_small:.2e}, large-b ratio in [{lo:.4f}, {hi:.4f}]"


def crit_instanton():
    inst = instanton()
    x = inst.grid.x
    anti = np.max(np.abs(inst.profile + inst.profile[::-1]))
    oracle = brentq(lambda m: m - np.tanh(2.0 * m), 0.5, 1.0, xtol=1e-15, rtol=1e-15)
    diff = abs(mean_field_magnetization(2.0) - oracle)
    ok = inst.residual <= 1e-8 and anti <= 1e-10 and inst.fit_residual <= 0.05 and diff <= 1e-10
    return ok, (f"residual={inst.residual:.1e}, antisymmetry={anti:.1e}, "
                f"tail fit={inst.fit_residual:.1e} (alpha={inst.decay_alpha:.4f}), "
                f"m_beta(2) diff={diff:.1e}; grid {x.size} nodes")


def crit_lyapunov(runs=20, horizon=100.0, dt=0.05):
    inst = instanton()
    g, p = inst.grid, inst.params
    rng = np.random.default_rng(4)
    worst = -np.inf
    for _ in range(runs):
        m0 = 0.9 * np.tanh(2 * _smooth_random(rng, g.x, 8))
        tr = evolve_unforced(m0, horizon, dt, p, g, store_every=1)
        F = free_energy(tr.values, p, g)
        worst = max(worst, float(np.max(np.diff(F))))
    return worst <= 1e-6, f"max per-step increase of F over {runs} runs = {worst:.2e}"


def crit_moving_instanton(eps=0.05, V=1.0, T=1.0):
    inst = instanton()
    pb = MacroProblem(R=V * T, T=T, F_bar=inst.F_bar, mu=4 / inst.norm_mprime_nu_sq, epsilon=eps)
    tr = build_moving_instanton(pb, inst, inst.grid, dt=0.5)
    rep = action(tr, inst.params)
    ref = 0.25 * inst.norm_mprime_nu_sq * V ** 2 * T
    rel = abs(rep.total / ref - 1)
    return rel <= 0.05, f"I={rep.total:.6f}, quarter|m'|^2 V^2 T={ref:.6f}, rel diff={rel:.2e}"


def crit_reversibility(runs=50, horizon=10.0, dt=0.05):
    inst = instanton()
    g, p = inst.grid, inst.params
    rng = np.random.default_rng(6)
    slack = []
    nt = int(round(horizon / dt))
    t = dt * np.arange(nt + 1)
    for _ in range(runs):
        m0 = 0.9 * np.tanh(2 * _smooth_random(rng, g.x, 6))
        amp = 10.0 ** rng.uniform(-2, 0)
        shape = _smooth_random(rng, g.x, 4, amp)
        freq = rng.uniform(0.1, 1.0)
        b = ForcingField(g, np.cos(freq * t)[:, None] * shape[None, :], dt)
        tr = evolve_forced(m0, b, p, g)
        slack.append(action(tr, p).reversibility_slack)
    slack = np.array(slack)
    worst = float(slack.min())
    return worst >= -1e-6, (f"min slack={worst:.3e}, violated on {int(np.sum(slack < -1e-6))}/{runs} "
                            "trajectories")


def crit_spectral_gap():
    inst = instanton()
    sg = spectral_gap(inst)
    coarse = compute_instanton(inst.params, Grid1D.from_spacing(10.0, 0.2))
    dense, _ = spectral_gap_dense(coarse)
    rel = abs(sg.omega - dense) / dense
    ok = sg.zero_mode_residual <= 1e-5 and sg.omega > 0 and rel <= 0.02
    return ok, (f"|Lm'|/|m'|={sg.zero_mode_residual:.2e}, omega={sg.omega:.6f}, "
                f"dense oracle (101 nodes)={dense:.6f}, rel diff={rel:.2e}")


def crit_centers():
    inst = instanton()
    g = inst.grid
    rng = np.random.default_rng(8)
    errs = []
    for xi in rng.uniform(-5, 5, 20):
        m = translate_instanton(inst, xi)
        errs.append(abs(find_centers(m, g, inst).centers[0] - xi))
    worst_center = max(errs)
    C = lipschitz_bound(inst)
    ratios = []
    for _ in range(100):
        xi = rng.uniform(-3, 3)
        v = _smooth_random(rng, g.x - xi, 3) * 10.0 ** rng.uniform(-4, -2)
        v *= np.exp(-((g.x - xi) / 4) ** 2)
        m = translate_instanton(inst, xi) + v
        d = abs(find_centers(m, g, inst).centers[0] - xi)
        ratios.append(d / g.integrate(np.abs(v)))
    fitted = max(ratios)
    lip_ok = fitted <= 1.1 * C
    xi = 0.3
    shape = np.exp(-((g.x - xi - 0.7) / 1.5) ** 2)
    amps = np.logspace(-4, -1.5, 8)
    fo_err, norms = [], []
    for a in amps:
        m = translate_instanton(inst, xi) + a * shape
        exact = find_centers(m, g, inst).centers[0]
        fo_err.append(abs(exact - first_order_center(m, g, inst, xi)))
        norms.append(a * np.sqrt(g.integrate(shape ** 2)))
    slope = np.polyfit(np.log(norms), np.log(fo_err), 1)[0]
    ok = worst_center <= 1e-6 and lip_ok and abs(slope - 2) <= 0.2
    return ok, (f"max center err={worst_center:.1e}, Lipschitz ratio max={fitted:.4f} "
                f"vs constant {C:.4f}, first-order slope={slope:.3f}")


def crit_nucleation(eps=0.05):
    inst = instanton()
    F = inst.F_bar
    path = build_nucleation_path(inst, eps, Grid1D.from_spacing(15.0, inst.grid.h))
    rep = action(path.segments, inst.params)
    sym = max(float(np.max(np.abs(s.values - s.values[:, ::-1]))) for s in path.segments)
    beta_dF = inst.params.beta * rep.free_energy_change
    ok = rep.total <= 2.1 * F and sym <= 1e-8
    return ok, (f"I/F={rep.total / F:.4f} (budget 2.1), beta dF/F={beta_dF / F:.4f}, "
                f"(beta/2) dF/F={0.5 * beta_dF / F:.4f}, gap={path.gap:.3f}, symmetry={sym:.1e}")


@lru_cache(maxsize=16)
def _strategy(ratio, n, T=20.0, eps=0.05):
    inst = instanton()
    pb = MacroProblem.from_ratio(ratio, T, inst, eps)
    st = build_upper_bound_strategy(pb, n, inst)
    params = AnalysisParams(epsilon=eps)
    rep = action(st.segments, inst.params, params.S, params.delta)
    return pb, st, rep


def crit_sandwich(ratios=(0.5, 5.0, 20.0), T=20.0):
    inst = instanton()
    F = inst.F_bar
    parts, ok, minimizers = [], True, []
    for ratio in ratios:
        pb = MacroProblem.from_ratio(ratio, T, inst)
        n_opt, w = optimal_nucleation_count(pb)
        minimizers.append(n_opt)
        best = None
        for n in range(0, n_opt + 1):
            _, st, rep = _strategy(ratio, n, T)
            if best is None or rep.total < best[1].total:
                best = (st, rep)
        st, rep = best
        bound = simulate_particles(pb, st.schedule, inst)
        within = rep.total <= 1.1 * w
        below = bound.lower_bound <= rep.total
        ok &= within and below
        parts.append(f"ratio {ratio:g}: n*={n_opt}, best n={st.n}, I/inf w={rep.total / w:.3f}, "
                     f"lower/F={bound.lower_bound / F:.3f}, bare/F={bound.bare_bound / F:.3f}")
    onset = minimizers[0] == 0 and max(minimizers) >= 1
    ok &= onset
    return ok, "; ".join(parts) + f"; minimizers {minimizers}"


def crit_bad_intervals(ratio=5.0, T=20.0):
    inst = instanton()
    pb, st, rep = _strategy(ratio, 1, T)
    params = AnalysisParams(epsilon=pb.epsilon)
    aud = audit_bad_intervals(st, rep, inst, params)
    frac = aud.total_displacement / pb.displacement
    return frac < 0.05, (f"{rep.bad_count} bad slabs in {len(aud.components)} component(s), "
                         f"displacement={aud.total_displacement:.4f} = {100 * frac:.2f}% of "
                         f"eps^-1 R={pb.displacement:.2f}")


def crit_picard(Delta=0.1, horizon=50.0, dt=0.05):
    inst = instanton()
    g, p = inst.grid, inst.params
    rng = np.random.default_rng(12)
    nt = int(round(horizon / dt))
    t = dt * np.arange(nt + 1)
    drive = -0.01 * inst.dm(g.x)[None, :] * np.ones((nt + 1, 1))
    noise = np.sin(0.3 * t)[:, None] * _smooth_random(rng, g.x, 4, 0.06)[None, :]
    b = ForcingField(g, drive + noise, dt)
    phi = evolve_forced(inst.profile, b, p, g)
    b1, mass = truncate_field(force_of(phi, p), Delta)
    sol = solve_coupled_system(phi, inst, b1, max_iter=20, stride=10)
    r = [x for x in sol.ratios if np.isfinite(x)]
    ok = sol.sweeps <= 20 and (not r or max(r) < 1)
    return ok, (f"converged in {sol.sweeps} sweeps, center gaps {[f'{x:.1e}' for x in sol.gaps]}, "
                f"max ratio={max(r) if r else float('nan'):.2e}, truncated mass={mass:.2e}")


CRITERIA = [
    (1, "H sanity", crit_h_sanity, 1.0),
    (2, "H asymptotics", crit_h_asymptotics, 1.0),
    (3, "instanton", crit_instanton, 10.0),
    (4, "Lyapunov", crit_lyapunov, 60.0),
    (5, "moving-instanton cost", crit_moving_instanton, 120.0),
    (6, "reversibility bound", crit_reversibility, 300.0),
    (7, "spectral gap", crit_spectral_gap, 30.0),
    (8, "centers", crit_centers, 60.0),
    (9, "nucleation path", crit_nucleation, 300.0),
    (10, "macroscopic sandwich", crit_sandwich, 900.0),
    (11, "bad-interval audit", crit_bad_intervals, 120.0),
    (12, "Picard contraction", crit_picard, 120.0),
]


def run_criterion(number):
    num, name, fun, budget = next(c for c in CRITERIA if c[0] == number)
    t0 = time.perf_counter()
    try:
        ok, detail = fun()
    except ConvergenceError as exc:
        ok, detail = False, f"convergence error: {exc}"
    secs = time.perf_counter() - t0
    if secs > budget:
        ok, detail = False, detail + f"; over runtime budget"
    return CriterionResult(num, name, bool(ok), detail, secs, budget)


LAST_RUN = []  # results of the most recent full run_all, for report hooks


def run_all(numbers=None, echo=print):
    instanton()  # shared setup outside the per-criterion clocks
    out = []
    for num, *_ in CRITERIA:
        if numbers is None or num in numbers:
            r = run_criterion(num)
            if echo:
                echo(r.line())
            out.append(r)
    if numbers is None:
        LAST_RUN[:] = out
    return out
