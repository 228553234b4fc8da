"""Macroscopic layer: mobility, w_n, strategy builders and the particle model."""
import csv
from dataclasses import dataclass, field

import numpy as np

from .action import action, classify_slabs
from .analysis import find_centers, sigma_of
from .dynamics import ForcingField, Trajectory, _rk4_step, evolve_forced, evolve_unforced
from .errors import ConvergenceError, DomainError
from .grid import Grid1D, nu_weights
from .statics import droplet, free_energy, multi_instanton


def mobility(inst):
    """mu = 4/||m_bar'||^2_nu, so that V^2 T/mu is the moving-instanton cost."""
    return 4.0 / inst.norm_mprime_nu_sq


@dataclass
class MacroProblem:
    R: float
    T: float
    F_bar: float
    mu: float
    epsilon: float = 0.05
    P: float = None

    def __post_init__(self):
        if not (self.R > 0 and self.T > 0 and self.mu > 0):
            raise DomainError("R, T and mu must be positive")
        if self.P is None:
            self.P = 1.05 * optimal_nucleation_count(self)[1]

    @property
    def V(self):
        return self.R / self.T

    @property
    def ratio(self):
        """V^2 T / (mu F(m_bar))."""
        return self.V ** 2 * self.T / (self.mu * self.F_bar)

    @property
    def displacement(self):
        """Mesoscopic displacement eps^-1 R."""
        return self.R / self.epsilon

    @property
    def horizon(self):
        """Mesoscopic time eps^-2 T."""
        return self.T / self.epsilon ** 2

    @classmethod
    def from_ratio(cls, ratio, T, inst, epsilon=0.05):
        mu = mobility(inst)
        V = np.sqrt(ratio * mu * inst.F_bar / T)
        return cls(V * T, T, inst.F_bar, mu, epsilon)


def macro_cost(problem, n):
    """w_n = 2 n F + (2n+1) (1/mu) (V/(2n+1))^2 T."""
    if n < 0 or int(n) != n:
        raise DomainError("n must be a nonnegative integer")
    V, T = problem.V, problem.T
    return 2 * n * problem.F_bar + (2 * n + 1) * (V / (2 * n + 1)) ** 2 * T / problem.mu


def optimal_nucleation_count(problem, n_max=None):
    """Exhaustive minimisation of w_n; the smallest n wins ties."""
    if n_max is None:
        cont = 0.5 * (np.sqrt(problem.V ** 2 * problem.T / (problem.mu * problem.F_bar)) - 1)
        n_max = max(10, int(np.ceil(2 * cont)) + 2)
    w = [macro_cost(problem, n) for n in range(n_max + 1)]
    n = int(np.argmin(w))
    return n, w[n]


def nucleation_gap(inst, epsilon, h=None):
    """l_eps with exp(-alpha l_eps) = eps^{3/2}, rounded to the mesh."""
    h = inst.grid.h if h is None else h
    l = 1.5 * abs(np.log(epsilon)) / inst.decay_alpha
    return max(h, round(l / h) * h)


def strategy_grid(problem, h=0.05, margin=15.0, cell=4.0):
    """Neumann grid holding the front from -D/2 to D/2, L a multiple of `cell`."""
    L = cell * np.ceil((0.5 * problem.displacement + margin) / cell)
    return Grid1D.from_spacing(L, h)


def build_moving_instanton(problem, inst, grid=None, dt=0.1, start=None):
    """phi(x,t) = m_bar(x - start - eps V t) on [0, eps^-2 T]."""
    grid = grid or strategy_grid(problem, inst.grid.h)
    D = problem.displacement
    start = -0.5 * D if start is None else start
    if start <= -grid.L + 5 or start + D >= grid.L - 5:
        raise DomainError("displacement does not fit in the grid")
    n = int(round(problem.horizon / dt))
    t = dt * np.arange(n + 1)
    xi = start + D * t / t[-1]
    vals = np.array([inst.m(grid.x - c) for c in xi])
    return Trajectory(grid, vals, problem.horizon / n)


@dataclass
class NucleationPath:
    segments: list
    gap: float
    droplet_energy: float
    relax_time: float

    @property
    def duration(self):
        return sum(s.t_end - s.t0 for s in self.segments)



def _symmetrize(v):
    return 0.5 * (v + v[..., ::-1])


def build_nucleation_path(inst, epsilon=0.05, grid=None, dt=0.05, tol=1e-12,
                          splice_time=1.0, t_max=2000.0, gap=None):
    """Path from the constant m_beta to the two-front droplet of gap l_eps.

    It is the time reversal of the free relaxation of the droplet, prefixed
    by a short linear splice from the exact constant m_beta. Every slice is
    symmetrised about x = 0.
    """
    grid = grid or inst.grid
    gap = nucleation_gap(inst, epsilon, grid.h) if gap is None else gap
    d = droplet(inst, gap, 0.0, grid)
    d = _symmetrize(d)
    m, out, t = d.copy(), [d], 0.0
    while np.max(np.abs(m - inst.m_beta)) > tol:
        m = _symmetrize(_rk4_step(m, dt, inst.params, grid))
        out.append(m)
        t += dt
        if t > t_max:
            raise ConvergenceError("droplet relaxation did not reach m_beta")
    rev = np.array(out[::-1])
    ns = max(1, int(round(splice_time / dt)))
    mb = np.full(grid.n_points, inst.m_beta)
    s = np.linspace(0, 1, ns + 1)[:, None]
    splice = (1 - s) * mb + s * rev[0]
    seg1 = Trajectory(grid, splice, dt, 0.0)
    seg2 = Trajectory(grid, rev, dt, seg1.t_end)
    Fd = float(free_energy(d, inst.params, grid))
    return NucleationPath([seg1, seg2], gap, Fd, t)


# ---------------------------------------------------------------- multi-front strategy

@dataclass
class Strategy:
    segments: list
    problem: MacroProblem
    n: int
    grid: Grid1D
    schedule: "ParticleSchedule" = None
    info: dict = field(default_factory=dict)

    @property
    def horizon(self):
        return self.segments[-1].t_end

    def final_profile(self):
        return self.segments[-1].values[-1]

    def profile_at(self, t):
        for s in self.segments:
            if s.t0 - 1e-9 <= t <= s.t_end + 1e-9:
                k = int(round((t - s.t0) / s.dt))
                return s.values[min(max(k, 0), s.M)]
        raise DomainError(f"time {t} outside the strategy")


def _embed(local, big, center_idx):
    """Index window of `big` that receives the local slice centered at center_idx."""
    n = local.shape[-1]
    half = n // 2
    lo, hi = center_idx - half, center_idx + half + 1
    if lo < 0 or hi > big.shape[-1]:
        raise DomainError("nucleation window leaves the grid")
    return lo, hi


def build_upper_bound_strategy(problem, n, inst, grid=None, dt_fast=0.05, dt_slow=2.0,
                               birth_gap=2.0, release_gap=None, local_L=15.0, tail_tol=1e-12):
    """Piecewise-constructed trajectory with n nucleations and 2n+1 moving fronts.

    Phase A nucleates n droplets (time-reversed relaxation) while front 1
    moves; phase B translates all fronts at constant speed; phase C releases
    the approaching pairs to the free flow while the last front keeps moving;
    a final linear splice lands exactly on m_bar at the target.

    Droplets are born at `birth_gap` rather than at l_eps: below a gap of
    about 2 the pair attraction exceeds the translation speed and holding
    the fronts apart costs more than the extra droplet energy.
    """
    if n == 0:
        traj = build_moving_instanton(problem, inst, grid, dt=dt_slow)
        sched = ParticleSchedule.single(0.0, -0.5 * problem.displacement,
                                        problem.horizon, 0.5 * problem.displacement)
        return Strategy([traj], problem, 0, traj.grid, sched)
    grid = grid or strategy_grid(problem, inst.grid.h)
    h = grid.h
    eps = problem.epsilon
    D, H = problem.displacement, problem.horizon
    lgrid = Grid1D.from_spacing(local_L, h)
    npth = build_nucleation_path(inst, eps, lgrid, dt_fast, tol=tail_tol,
                                 gap=None if birth_gap is None else round(birth_gap / h) * h)
    ell = npth.gap
    g_r = ell if release_gap is None else release_gap
    # free collapse time of the released pairs
    rel = droplet(inst, g_r, 0.0, lgrid)
    m, tc = -rel, 0.0
    while np.max(np.abs(m + inst.m_beta)) > tail_tol:
        m = _rk4_step(m, dt_fast, inst.params, lgrid)
        tc += dt_fast
        if tc > 3000:
            raise ConvergenceError("released pair does not collapse")
    tau_A = npth.duration
    tau_C = dt_fast * np.ceil((tc + 5.0) / dt_fast)
    tau_E = 1.0
    tau_B = H - tau_A - tau_C - tau_E
    nB = int(np.floor(tau_B / dt_slow))
    if nB < 2:
        raise DomainError("horizon too short for the nucleation strategy")
    tau_B = nB * dt_slow
    tau_E = H - tau_A - tau_B - tau_C
    x_s = -0.5 * D
    v = (D - n * (ell + g_r)) / (tau_A + (2 * n + 1) * tau_B + tau_C)
    if v <= 0:
        raise DomainError("geometry infeasible: droplets do not fit")
    # nucleation sites on mesh nodes
    p = []
    p1 = x_s + v * (tau_A + tau_B) + g_r + 0.5 * ell + v * tau_B
    for i in range(n):
        p.append(p1 + i * (ell + 2 * v * tau_B + g_r))
    p = np.round((np.array(p) + grid.L) / h) * h - grid.L
    # per-front speeds that close the geometry exactly
    end_B = tau_A + tau_B
    v1 = (p[0] - 0.5 * ell - v * tau_B - g_r - x_s) / end_B
    v_last = (x_s + D - (p[-1] + 0.5 * ell)) / (tau_B + tau_C)
    if x_s <= -grid.L + 5 or x_s + D >= grid.L - 5:
        raise DomainError("strategy does not fit in the grid")
    x = grid.x
    segs = []
    # phase A
    pathA = np.concatenate([npth.segments[0].values, npth.segments[1].values[1:]])
    nA = pathA.shape[0] - 1
    tA = dt_fast * np.arange(nA + 1)
    A = np.empty((nA + 1, grid.n_points))
    idx = [grid.index_of(pi) for pi in p]
    for k in range(nA + 1):
        row = inst.m(x - (x_s + v1 * tA[k]))
        for c in idx:
            lo, hi = _embed(pathA[k], row, c)
            row[lo:hi] += pathA[k] - inst.m_beta
        A[k] = row
    segs.append(Trajectory(grid, A, dt_fast, 0.0))
    # phase B
    tB = dt_slow * np.arange(nB + 1)
    B = np.empty((nB + 1, grid.n_points))
    for k in range(nB + 1):
        c = [x_s + v1 * (tau_A + tB[k])]
        for pi in p[:-1]:
            c += [pi - 0.5 * ell - v * tB[k], pi + 0.5 * ell + v * tB[k]]
        c += [p[-1] - 0.5 * ell - v * tB[k], p[-1] + 0.5 * ell + v_last * tB[k]]
        B[k] = multi_instanton(inst, c, grid, min_gap=0)
    segs.append(Trajectory(grid, B, dt_slow, tau_A))
    # phase C: forced only at the last front
    nC = int(round(tau_C / dt_fast))
    tC = dt_fast * np.arange(nC + 1)
    xi_last = p[-1] + 0.5 * ell + v_last * (tau_B + tC)
    bC = np.array([-v_last * inst.dm(x - c) for c in xi_last])
    C = evolve_forced(B[-1], ForcingField(grid, bC, dt_fast, end_B), inst.params, grid)
    segs.append(C)
    # phase E: linear splice onto the exact target
    nE = max(1, int(round(tau_E / dt_fast)))
    target = inst.m(x - (x_s + D))
    s = np.linspace(0, 1, nE + 1)[:, None]
    E = (1 - s) * C.values[-1] + s * target
    segs.append(Trajectory(grid, E, tau_E / nE, C.t_end))
    sched = ParticleSchedule.from_strategy(x_s, v1, v, v_last, p, ell, tau_A, tau_B,
                                           tau_C, H, n)
    info = dict(v=v, v1=v1, v_last=v_last, ell=ell, release_gap=g_r, tau_A=tau_A,
                tau_B=tau_B, tau_C=tau_C, tau_E=tau_E, sites=p, droplet_energy=npth.droplet_energy)
    return Strategy(segs, problem, n, grid, sched, info)


# ---------------------------------------------------------------- particle model

@dataclass
class ParticleSchedule:
    """Piecewise-linear particle tracks r_i(t); index i is 1-based, sigma_i = +1 for odd i."""

    tracks: dict = field(default_factory=dict)
    nucleations: list = field(default_factory=list)
    collisions: list = field(default_factory=list)

    def add_point(self, i, t, r):
        self.tracks.setdefault(i, []).append((float(t), float(r)))

    @classmethod
    def single(cls, t0, r0, t1, r1):
        s = cls()
        s.add_point(1, t0, r0)
        s.add_point(1, t1, r1)
        return s

    @classmethod
    def from_strategy(cls, x_s, v1, v, v_last, p, ell, tau_A, tau_B, tau_C, H, n):
        s = cls()
        end_B = tau_A + tau_B
        s.add_point(1, 0.0, x_s)
        s.add_point(1, end_B, x_s + v1 * end_B)
        for i, pi in enumerate(p):
            a, b = 2 * i + 2, 2 * i + 3
            s.nucleations.append((tau_A, a, b, float(pi)))
            s.add_point(a, tau_A, pi - 0.5 * ell)
            s.add_point(a, end_B, pi - 0.5 * ell - v * tau_B)
            s.add_point(b, tau_A, pi + 0.5 * ell)
            if i < n - 1:
                s.add_point(b, end_B, pi + 0.5 * ell + v * tau_B)
            else:
                s.add_point(b, end_B, pi + 0.5 * ell + v_last * tau_B)
                s.add_point(b, H, x_s + (pi + 0.5 * ell - x_s) + v_last * (tau_B + tau_C))
        for i in range(n):
            s.collisions.append((end_B, 2 * i + 1, 2 * i + 2))
        return s

    @property
    def n_particles(self):
        return len(self.tracks)

    def lifetimes(self):
        return {i: tr[-1][0] - tr[0][0] for i, tr in self.tracks.items()}

    def displacement(self):
        """sum_i int |v_i| dt for piecewise-linear tracks."""
        return sum(np.sum(np.abs(np.diff([r for _, r in tr]))) for tr in self.tracks.values())

    def kinetic(self):
        """sum_i int v_i^2 dt."""
        tot = 0.0
        for tr in self.tracks.values():
            t = np.array([a for a, _ in tr])
            r = np.array([b for _, b in tr])
            dt = np.diff(t)
            ok = dt > 0
            tot += np.sum(np.diff(r)[ok] ** 2 / dt[ok])
        return tot

    def check_rules(self, n_star=None):
        """Parity alternation, pair births at consecutive indices, count <= n_star."""
        msgs = []
        if n_star is not None and self.n_particles > n_star:
            msgs.append(f"{self.n_particles} particles exceed n* = {n_star}")
        for _, a, b, _ in self.nucleations:
            if b != a + 1 or a % 2:
                msgs.append(f"nucleation pair ({a},{b}) is not (even, odd)")
        for _, a, b in self.collisions:
            if b != a + 1:
                msgs.append(f"collision pair ({a},{b}) not adjacent")
        return msgs

    def save(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["time", "kind", "index", "position"])
            for i, tr in sorted(self.tracks.items()):
                for t, r in tr:
                    w.writerow([f"{t:.17g}", "move", i, f"{r:.17g}"])
            for t, a, b, c in self.nucleations:
                w.writerow([f"{t:.17g}", "nucleation", a, f"{c:.17g}"])
            for t, a, b in self.collisions:
                w.writerow([f"{t:.17g}", "collision", a, ""])

    @classmethod
    def load(cls, path):
        s = cls()
        with open(path) as fh:
            for row in csv.DictReader(fh):
                kind = row["kind"].strip()
                t = float(row["time"])
                i = int(row["index"])
                if kind in ("move", "start"):
                    s.add_point(i, t, float(row["position"]))
                elif kind == "nucleation":
                    s.nucleations.append((t, i, i + 1, float(row["position"])))
                elif kind == "collision":
                    s.collisions.append((t, i, i + 1))
                else:
                    raise DomainError(f"unknown event kind {kind!r}")
        for tr in s.tracks.values():
            tr.sort()
        return s


@dataclass
class ParticleBound:
    displacement: float
    required: float
    correction: float
    feasible: bool
    kinetic_cost: float
    bare_bound: float
    lower_bound: float
    nucleations: int
    total_lifetime: float


def simulate_particles(problem, schedule, inst, kappa=0.0, gamma=None, c=1.0, n_star=None,
                       jumps=0.0):
    """Displacement constraint and lower bound for a particle schedule (mesoscopic units).

    The bare bound is D^2/(mu sum T_i) + 2 q F(m_bar) (Cauchy-Schwarz on the
    velocities). The literal bound subtracts the correction budget from D and
    the error terms from the cost, with every unspecified constant set to c.
    """
    eps = problem.epsilon
    sep = abs(np.log(eps)) ** 2
    mu, F = problem.mu, problem.F_bar
    n_star = n_star or int(np.floor(1 + 2 * problem.P / F))
    q = len(schedule.nucleations)
    life = sum(schedule.lifetimes().values())
    disp = schedule.displacement()
    r_max = np.exp(-inst.decay_alpha * sep / 2)
    kin = schedule.kinetic()
    force_budget = kin * inst.norm_mprime_nu_sq + r_max * problem.horizon
    corr = c * n_star * force_budget + c * jumps + sep + 4 * n_star * sep
    D = problem.displacement
    D_eff = max(0.0, D - corr)
    bare = D ** 2 / (mu * life) + 2 * q * F
    gamma = 0.01 * F if gamma is None else gamma
    kap = kappa / (1 - kappa) * problem.P if kappa < 1 else np.inf
    lower = D_eff ** 2 / (mu * life) + 2 * q * F - kap - c * r_max * problem.horizon - gamma
    return ParticleBound(disp, D, corr, disp >= D_eff - 1e-9, kin / mu, bare, lower, q, life)


# ---------------------------------------------------------------- bad intervals and jumps

@dataclass
class BadIntervalAudit:
    components: list
    total_displacement: float
    bound_scale: float
    fitted_c: float


def _bad_components(good):
    comps, j = [], 0
    while j < len(good):
        if good[j]:
            j += 1
            continue
        k = j
        while k < len(good) and not good[k]:
            k += 1
        comps.append((j, k))
        j = k
    return comps


def audit_bad_intervals(strategy, report, inst, params, dt=0.05):
    """Center displacement and free-flow mismatch over each bad component.

    For a component [t_a, t_b) the centers present at t_a are matched by parity
    to the nearest centers at t_b; the unforced flow m0 from phi(t_a) gives the
    mismatch ||phi(t_b) - m0(t_b)||^2.
    """
    edges = report.slab_edges
    grid = strategy.grid
    comps = []
    total = 0.0
    ratios = []
    Delta = params.Delta
    for j, k in _bad_components(report.good):
        ta, tb = edges[j], edges[k]
        pa, pb = strategy.profile_at(ta), strategy.profile_at(tb)
        ca = find_centers(pa, grid, inst, params=params).centers
        cb = find_centers(pb, grid, inst, params=params).centers
        sa, sb = sigma_of(len(ca)), sigma_of(len(cb))
        disp = 0.0
        for c, s in zip(ca, sa):
            same = cb[sb == s]
            disp += float(np.min(np.abs(same - c))) if same.size else np.inf
        m0 = evolve_unforced(pa, tb - ta, dt, inst.params, grid,
                             store_every=int(round((tb - ta) / dt))).values[-1]
        mis = float(grid.integrate((pb - m0) ** 2))
        dj = float(np.sum(report.slab_costs[j:k]))
        scale = np.exp((2 + inst.params.beta) * params.S) * dj / Delta
        comps.append(dict(t_start=ta, t_end=tb, cost=dj, displacement=disp,
                          mismatch=mis, scale=scale))
        if scale > 0:
            ratios.append(mis / scale)
        total += disp
    fitted = max(ratios) if ratios else 0.0
    return BadIntervalAudit(comps, total, params.separation, fitted)


@dataclass
class JumpResult:
    S_eps: float
    r_hat: np.ndarray
    erased: list
    r_plus: np.ndarray
    profile: np.ndarray = None


def jump_size(delta_j, params, beta, kappa_c=0.0, c_lin=1.0, c_exp=1.0):
    """S_eps^j = c_lin delta_j/Delta + c_exp e^{(2+beta) S} delta_j / (1 - kappa_c)."""
    if delta_j == 0:
        return 0.0
    if kappa_c >= 1:
        return np.inf
    return (c_lin * delta_j / params.Delta
            + c_exp * np.exp((2 + beta) * params.S) * delta_j / (1 - kappa_c))


def inter_interval_jump(r, delta_j, params, inst, phi=None, grid=None, kappa_c=0.0,
                        c_lin=1.0, c_exp=1.0):
    """Shift r_i by sigma_i S_eps^j, erase pairs closer than |log eps|^2, re-initialise by min."""
    r = np.asarray(r, dtype=float)
    S = jump_size(delta_j, params, inst.params.beta, kappa_c, c_lin, c_exp)
    sig = sigma_of(len(r))
    r_hat = r + sig * S
    keep = list(range(len(r)))
    erased = []
    i = 0
    while i + 1 < len(keep):
        a, b = keep[i], keep[i + 1]
        if r_hat[b] - r_hat[a] <= params.separation:
            erased.append((a + 1, b + 1))
            del keep[i:i + 2]
            i = max(i - 1, 0)
        else:
            i += 1
    r_plus = r_hat[keep]
    prof = None
    if phi is not None and len(r_plus):
        grid = grid or inst.grid
        prof = np.minimum(phi, multi_instanton(inst, r_plus, grid, min_gap=0))
    return JumpResult(S, r_hat, erased, r_plus, prof)
