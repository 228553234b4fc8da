"""The cost density H(b, u, w), the action functional and slab bookkeeping."""
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize_scalar

from .dynamics import ForcingField, Trajectory, force_of
from .errors import AuditFailure, DomainError
from .grid import apply_kernel, clamp, nu_weights
from .statics import clipped_gradient, energy_gradient, free_energy

SERIES_CUTOFF = 1e-3


def cost_density(b, u, w):
    """H(b,u,w) = 1/2 [s log((s + r)/((1-u)(1-w))) - r + 1 + uw], s = b - u - w.

    r = sqrt(s^2 + (1-u^2)(1-w^2)). The logarithm is evaluated in the form
    that avoids cancellation for either sign of s, and for |b| small compared
    with 1 + uw a fourth-order Taylor expansion in b replaces the closed form.
    """
    b, u, w = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (b, u, w)))
    r0 = 1.0 + u * w
    if np.any(r0 <= 0):
        raise DomainError("cost density needs 1 + uw > 0")
    s = b - u - w
    D = (1.0 - u * u) * (1.0 - w * w)
    r = np.sqrt(s * s + D)
    with np.errstate(divide="ignore", invalid="ignore"):
        lg = np.where(s < 0,
                      np.log((1 + u) * (1 + w)) - np.log(r - s),
                      np.log(s + r) - np.log((1 - u) * (1 - w)))
        H = 0.5 * (s * lg - r + r0)
    small = np.abs(b) < SERIES_CUTOFF * r0
    if np.any(small):
        bs, s0, r0s, Ds = b[small], -(u + w)[small], r0[small], D[small]
        H = np.array(H, dtype=float)
        H[small] = 0.5 * (bs ** 2 / (2 * r0s) - s0 * bs ** 3 / (6 * r0s ** 3)
                          + (2 * s0 ** 2 - Ds) * bs ** 4 / (24 * r0s ** 5))
    return H[()] if H.ndim == 0 else H


def density_fields(traj, params):
    """Return (b, u, w, H) on the trajectory mesh."""
    b = force_of(traj, params).values
    u = traj.values
    w = -np.tanh(params.beta * apply_kernel(traj.grid, u))
    return b, u, w, cost_density(b, u, w)


def _time_trapezoid(rate, dt):
    c = np.zeros_like(rate)
    c[1:] = np.cumsum(0.5 * dt * (rate[1:] + rate[:-1]))
    return c


@dataclass
class CostReport:
    total: float
    slab_edges: np.ndarray
    slab_costs: np.ndarray
    good: np.ndarray
    delta: float
    times: np.ndarray = field(repr=False)
    rate: np.ndarray = field(repr=False)
    cumulative: np.ndarray = field(repr=False)
    free_energy_change: float = np.nan
    gradient_term: float = np.nan
    beta: float = np.nan
    quadratic_cost: float = np.nan

    @property
    def bad_count(self):
        return int(np.sum(~self.good))

    @property
    def reversibility_rhs(self):
        return 0.5 * self.beta * self.free_energy_change + self.gradient_term

    @property
    def reversibility_slack(self):
        """I - [(beta/2) dF + int ||1 ^ |f|||^2 dt]; negative means violated."""
        return self.total - self.reversibility_rhs

    def cost_between(self, t0, t1):
        return float(np.interp(t1, self.times, self.cumulative)
                     - np.interp(t0, self.times, self.cumulative))


def classify_slabs(slab_costs, delta):
    """Good iff the slab and its predecessor both cost < delta (slab 0 has none)."""
    c = np.asarray(slab_costs, dtype=float)
    below = c < delta
    good = below.copy()
    good[1:] &= below[:-1]
    return good


def _segments(traj):
    return [traj] if isinstance(traj, Trajectory) else list(traj)


def _segment_rates(seg, params, chunk=256):
    """Spatial integrals of H, min(1,|f|)^2 and the quadratic cost, per time slice.

    Long segments are processed in overlapping chunks so that the time
    derivative matches the one computed on the whole segment.
    """
    g = seg.grid
    n = seg.M + 1
    out = np.empty((3, n))
    for a in range(0, n, chunk):
        b_ = min(n, a + chunk)
        lo, hi = max(0, a - 1), min(n, b_ + 1)
        if hi - lo < 3:
            lo = max(0, hi - 3)
        sub = Trajectory(g, seg.values[lo:hi], seg.dt, seg.t0 + lo * seg.dt)
        b, u, w, H = density_fields(sub, params)
        f = energy_gradient(u, params, g)
        k = slice(a - lo, b_ - lo)
        out[0, a:b_] = g.integrate(H[k])
        out[1, a:b_] = g.integrate(clipped_gradient(f[k]) ** 2)
        out[2, a:b_] = g.integrate(b[k] ** 2 / (4 * (1 + u[k] * w[k])))
    return out


def action(traj, params, slab_length=50.0, delta=None, t_origin=None):
    """Space-time trapezoid integral of H along a trajectory or a list of segments.

    Segments are concatenated in time; each is integrated on its own mesh, so
    different segments may use different time steps.
    """
    segs = _segments(traj)
    times, rates, grads, quads = [], [], [], []
    for seg in segs:
        r, gr, q = _segment_rates(seg, params)
        times.append(seg.times)
        rates.append(r)
        grads.append(gr)
        quads.append(q)
    cum, gt, qt, off = [], 0.0, 0.0, 0.0
    for t, r, gr, q in zip(times, rates, grads, quads):
        dt = t[1] - t[0]
        c = _time_trapezoid(r, dt) + off
        cum.append(c)
        off = c[-1]
        gt += _time_trapezoid(gr, dt)[-1]
        qt += _time_trapezoid(q, dt)[-1]
    T = np.concatenate(times)
    C = np.concatenate(cum)
    R = np.concatenate(rates)
    total = float(C[-1])
    t0 = T[0] if t_origin is None else t_origin
    n_slabs = max(1, int(np.ceil((T[-1] - t0) / slab_length - 1e-9)))
    edges = t0 + slab_length * np.arange(n_slabs + 1)
    edges[-1] = T[-1]
    ce = np.interp(edges, T, C)
    ce[0], ce[-1] = 0.0 if t0 <= T[0] else ce[0], total
    slab_costs = np.diff(ce)
    dF = float(free_energy(segs[-1].values[-1], params, segs[-1].grid)
               - free_energy(segs[0].values[0], params, segs[0].grid))
    d = np.inf if delta is None else delta
    return CostReport(total, edges, slab_costs, classify_slabs(slab_costs, d), d, T, R, C,
                      dF, float(gt), params.beta, float(qt))


def truncate_field(b, Delta):
    """b1 = b 1{|b| <= Delta} and the truncated mass int int_{|b|>Delta} |b|."""
    if not Delta > 0:
        raise DomainError("Delta must be positive")
    keep = np.abs(b.values) <= Delta
    b1 = ForcingField(b.grid, np.where(keep, b.values, 0.0), b.dt, b.t0)
    spill = b.grid.integrate(np.where(keep, 0.0, np.abs(b.values)))
    mass = float(_time_trapezoid(spill, b.dt)[-1]) if b.M > 0 else 0.0
    return b1, mass


def weight_alpha(centers_path, grid, inst):
    """alpha = sqrt((1 - mbar_xi(t)^2)/8) and c_* = max 1/alpha."""
    from .statics import multi_instanton
    C = np.atleast_2d(centers_path.centers)
    ref = np.array([multi_instanton(inst, c, grid, min_gap=0) for c in C])
    alpha = np.sqrt((1.0 - clamp(ref) ** 2) / 8.0)
    return alpha, float(np.max(1.0 / alpha))


@dataclass
class QuadraticAudit:
    C: float
    c_star: float
    Delta: float
    kappa: float
    lhs_errc0: float
    rhs_errc0: float
    lhs_errc: float
    rhs_errc: float
    H_small: float

    @property
    def holds(self):
        return (self.kappa < 1 and self.lhs_errc0 <= self.rhs_errc0 + 1e-14
                and self.lhs_errc <= self.rhs_errc + 1e-14)

    @property
    def error_ratio(self):
        return self.lhs_errc / self.H_small if self.H_small > 0 else 0.0


def measure_cubic_constant(u, w, Delta, n_b=40, max_points=40000, seed=0):
    """Smallest C with |H - b^2/(4(1+uw))| <= C|b|^3 over sampled (u,w) and |b| <= Delta."""
    u, w = np.ravel(u), np.ravel(w)
    if u.size > max_points:
        idx = np.random.default_rng(seed).choice(u.size, max_points, replace=False)
        idx = np.union1d(idx, [np.argmax(u + w), np.argmin(u + w), np.argmin(1 + u * w)])
        u, w = u[idx], w[idx]
    bs = Delta * np.concatenate([-np.geomspace(1e-2, 1, n_b // 2), np.geomspace(1e-2, 1, n_b // 2)])
    B, U = np.meshgrid(bs, u, indexing="ij")
    W = np.broadcast_to(w, U.shape)
    ratio = np.abs(cost_density(B, U, W) - B * B / (4 * (1 + U * W))) / np.abs(B) ** 3
    best = float(np.max(ratio))
    # refine between sample points on the worst columns
    for j in np.argsort(np.max(ratio, axis=0))[-5:]:
        uj, wj = u[j], w[j]
        f = lambda b: -abs(cost_density(b, uj, wj) - b * b / (4 * (1 + uj * wj))) / abs(b) ** 3
        for lo, hi in ((-Delta, -1e-2 * Delta), (1e-2 * Delta, Delta)):
            r = minimize_scalar(f, bounds=(lo, hi), method="bounded", options={"xatol": 1e-10})
            best = max(best, -r.fun, -f(lo), -f(hi))
    return best


def quadratic_error_audit(traj, Delta, inst, centers_path=None, raise_on_fail=False):
    """Check the two integrated quadratic-approximation bounds on {|b| <= Delta}."""
    from .analysis import track_centers
    params = inst.params
    b, u, w, H = density_fields(traj, params)
    g, dt = traj.grid, traj.dt
    small = np.abs(b) <= Delta
    b1 = np.where(small, b, 0.0)
    if centers_path is None:
        centers_path = track_centers(traj, inst)
    alpha, c_star = weight_alpha(centers_path, g, inst)
    C = measure_cubic_constant(u[small], w[small], Delta) if np.any(small) else 0.0
    kappa = c_star ** 2 * C * Delta
    integ = lambda f: float(_time_trapezoid(g.integrate(f), dt)[-1])
    Hs = integ(np.where(small, H, 0.0))
    lhs0 = integ((alpha * b1) ** 2)
    lhs1 = integ(np.where(small, np.abs(H - b1 * b1 / (4 * (1 + u * w))), 0.0))
    fac = 1.0 / (1.0 - kappa) if kappa < 1 else np.inf
    rep = QuadraticAudit(C, c_star, Delta, kappa, lhs0, fac * Hs, lhs1, kappa * fac * Hs, Hs)
    if raise_on_fail and not rep.holds:
        raise AuditFailure(f"quadratic error bounds violated: {rep}", worst=rep)
    return rep
