"""Contours, centers, distance to the multi-instanton manifold and the spectral gap."""
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq, minimize

from .errors import CenterNotFoundError, ConvergenceError, DomainError
from .grid import apply_kernel, clamp, nu_weights
from .statics import free_energy, multi_instanton

CENTER_WINDOW = 12.0  # q(y) is below 1e-20 beyond this distance


@dataclass
class AnalysisParams:
    zeta: float = None
    ell_minus: float = 1.0
    ell_plus: float = 4.0
    epsilon: float = 0.05
    kappa: float = 2.0
    lam: float = 1.0
    S: float = 50.0
    alpha_star: float = 0.01
    P: float = None
    ell_star: float = None
    tau: float = None
    theta: float = 0.05
    c1: float = 0.01
    c2: float = 1.0

    def __post_init__(self):
        if not self.lam < self.kappa:
            raise DomainError("need lambda < kappa")
        r = self.ell_plus / self.ell_minus
        if abs(r - round(r)) > 1e-9:
            raise DomainError("ell_plus must be an integer multiple of ell_minus")
        if self.ell_plus < 1.0 / self.ell_minus - 1e-12:
            raise DomainError("need ell_plus >= 1/ell_minus")
        if not 0 < self.epsilon < 1:
            raise DomainError("epsilon must lie in (0, 1)")

    @property
    def log_eps(self):
        return abs(np.log(self.epsilon))

    @property
    def delta(self):
        return self.log_eps ** (-self.kappa)

    @property
    def Delta(self):
        return self.log_eps ** (-self.lam)

    @property
    def separation(self):
        """|log eps|^2."""
        return self.log_eps ** 2

    def zeta_for(self, inst):
        return 0.2 * inst.m_beta if self.zeta is None else self.zeta

    def n_star(self, F_bar, P=None):
        P = self.P if P is None else P
        return int(np.floor(1 + 2 * P / F_bar))


# ---------------------------------------------------------------- contours

def block_average(m, grid, ell):
    """Cell means over [n ell, (n+1) ell) covering [-L, L); returns (left edges, means)."""
    h = grid.h
    k = ell / h
    if abs(k - round(k)) > 1e-9 or round(k) < 1:
        raise DomainError("ell must be a positive multiple of h")
    k = int(round(k))
    nc = (grid.n_points - 1) / k
    if abs(grid.L / ell - round(grid.L / ell)) > 1e-9:
        raise DomainError("L must be a multiple of ell so that cells align with 0")
    nc = int(round(nc))
    m = np.asarray(m, dtype=float)
    inner = m[:-1].reshape(nc, k)
    right = m[k::k]
    # trapezoid rule inside each cell, exact for piecewise linear data
    means = (inner.sum(axis=1) - 0.5 * inner[:, 0] + 0.5 * right) / k
    edges = -grid.L + ell * np.arange(nc)
    return edges, means


def phase_indicator(m, grid, m_beta, zeta, ell):
    edges, avg = block_average(m, grid, ell)
    eta = np.zeros(avg.shape, dtype=int)
    eta[np.abs(avg - m_beta) <= zeta] = 1
    eta[np.abs(avg + m_beta) <= zeta] = -1
    return edges, eta


@dataclass
class Contour:
    x_minus: float
    x_plus: float
    kind: str
    weight: float

    @property
    def length(self):
        return self.x_plus - self.x_minus

    @property
    def mixed(self):
        return self.kind.startswith("mixed")


@dataclass
class ContourDecomposition:
    contours: list
    zeta: float
    ell_minus: float
    ell_plus: float

    @property
    def mixed(self):
        return [c for c in self.contours if c.mixed]

    def __len__(self):
        return len(self.contours)

    def bounds(self, P, F_bar, alpha, c1, c2):
        """Contour-count and length bounds implied by the Peierls estimate."""
        z2 = self.zeta ** 2
        n_max = (P + F_bar) / (c1 * self.ell_minus * z2)
        mix_max = (P + F_bar) / (F_bar - c2 * np.exp(-alpha * self.ell_plus))
        len_max = self.ell_plus / (c1 * self.ell_minus) / z2 * (P + F_bar)
        total_len = sum(c.length for c in self.contours)
        return {"total_length": total_len, "length_bound": len_max,
                "count": len(self.contours), "N_max": n_max,
                "mixed": len(self.mixed), "N_max_mix": mix_max,
                "ok": total_len <= len_max and len(self.contours) <= n_max
                and len(self.mixed) <= mix_max}


def extract_contours(m, grid, inst, params=None):
    params = params or AnalysisParams()
    zeta = params.zeta_for(inst)
    lm, lp = params.ell_minus, params.ell_plus
    _, eta = phase_indicator(m, grid, inst.m_beta, zeta, lm)
    r = int(round(lp / lm))
    big_edges, _ = block_average(m, grid, lp)
    nb = len(big_edges)
    sub = eta.reshape(nb, r)
    allp = np.all(sub == 1, axis=1)
    allm = np.all(sub == -1, axis=1)
    theta = np.zeros(nb, dtype=int)
    for c in range(nb):
        nb_idx = range(max(c - 1, 0), min(c + 2, nb))
        if all(allp[j] for j in nb_idx):
            theta[c] = 1
        elif all(allm[j] for j in nb_idx):
            theta[c] = -1
    contours = []
    c = 0
    wlin = params.c1 * zeta ** 2 * lm / lp
    while c < nb:
        if theta[c] != 0:
            c += 1
            continue
        start = c
        while c < nb and theta[c] == 0:
            c += 1
        x0, x1 = big_edges[start], big_edges[start] + lp * (c - start)
        e0 = sub[start, 0]
        e1 = sub[c, 0] if c < nb else sub[-1, -1]
        if e0 == e1 == 1:
            kind = "plus"
        elif e0 == e1 == -1:
            kind = "minus"
        elif e1 > e0:
            kind = "mixed(-,+)"
        elif e1 < e0:
            kind = "mixed(+,-)"
        else:
            kind = "mixed"
        wt = wlin * (x1 - x0)
        if kind.startswith("mixed"):
            wt = max(wt, inst.F_bar - params.c2 * np.exp(-inst.decay_alpha * lp))
        contours.append(Contour(float(x0), float(x1), kind, float(wt)))
    return ContourDecomposition(contours, zeta, lm, lp)


# ---------------------------------------------------------------- centers

@dataclass
class CenterSet:
    centers: np.ndarray
    sigma: np.ndarray
    residuals: np.ndarray
    contours: list = field(default_factory=list)

    def __len__(self):
        return len(self.centers)


def sigma_of(k):
    return np.where(np.arange(k) % 2 == 0, 1, -1)


def orthogonality(m, grid, inst, xi, sigma=1, mask=None):
    """g(xi) = (mask m_bar'_xi, m - sigma m_bar_xi) in L^2(d nu_xi)."""
    x = grid.x
    lo = np.searchsorted(x, xi - CENTER_WINDOW)
    hi = np.searchsorted(x, xi + CENTER_WINDOW, side="right")
    y = x[lo:hi] - xi
    w = grid.weights[lo:hi]
    if mask is not None:
        w = w * mask[lo:hi]
    q = inst.q(y)
    val = m[lo:hi] if sigma == 0 else m[lo:hi] - sigma * inst.m(y)
    return float(np.sum(w * q * val))


def _first_root(fun, a, b, h, xtol=1e-12):
    pts = np.arange(a, b + 0.5 * h, h)
    vals = np.array([fun(p) for p in pts])
    s = np.sign(vals)
    idx = np.nonzero(s[:-1] * s[1:] <= 0)[0]
    if idx.size == 0:
        return None
    i = idx[0]
    if vals[i] == 0:
        return pts[i]
    return brentq(fun, pts[i], pts[i + 1], xtol=xtol, rtol=1e-15)


def find_centers(m, grid, inst, contours=None, params=None):
    """One center per mixed contour: leftmost root of (m, m_bar'_xi)_{nu_xi}."""
    m = np.asarray(m, dtype=float)
    if contours is None:
        contours = extract_contours(m, grid, inst, params)
    mixed = contours.mixed if hasattr(contours, "mixed") else contours
    if not mixed:
        raise CenterNotFoundError("profile has no mixed contour")
    cs, res = [], []
    for c in mixed:
        g = lambda xi: orthogonality(m, grid, inst, xi, sigma=0)
        xi = _first_root(g, c.x_minus, min(c.x_plus, grid.L), grid.h)
        if xi is None:
            raise CenterNotFoundError(f"no sign change in contour [{c.x_minus}, {c.x_plus})")
        cs.append(xi)
        res.append(abs(g(xi)))
    cs = np.array(cs)
    return CenterSet(cs, sigma_of(len(cs)), np.array(res), list(mixed))


def first_order_center(m, grid, inst, xi):
    """xi - N with N = (m - m_bar_xi, m_bar'_xi)_nu / ||m_bar'||^2_nu."""
    v = np.asarray(m) - inst.m(grid.x - xi)
    g = orthogonality(v, grid, inst, xi, sigma=0)
    return xi - g / inst.norm_mprime_nu_sq


def lipschitz_bound(inst):
    """sup |m_bar'/(1 - m_bar^2)| / ||m_bar'||^2_nu, the analytic L^1 constant."""
    return float(np.max(np.abs(inst.q(inst.grid.x)))) / inst.norm_mprime_nu_sq


def distance_to_manifold(m, grid, inst, centers=None, params=None):
    """||m - m_bar_xi||_{L^2(d nu_xi)} at the centers of m."""
    if centers is None:
        centers = find_centers(m, grid, inst, params=params).centers
    ref = multi_instanton(inst, centers, grid, min_gap=0)
    d2 = grid.integrate((np.asarray(m) - ref) ** 2 * nu_weights(ref))
    return float(np.sqrt(d2))


def generic_distance(m, grid, inst, contours, start=None):
    """inf over xi in the product of mixed contour boxes of ||m - m_bar_xi||_{nu_xi}."""
    boxes = [(c.x_minus, c.x_plus) for c in contours.mixed]
    if start is None:
        start = [0.5 * (a + b) for a, b in boxes]
    m = np.asarray(m)

    def obj(xi):
        if np.any(np.diff(xi) <= 0):
            return 1e6
        ref = multi_instanton(inst, xi, grid, min_gap=0)
        return grid.integrate((m - ref) ** 2 * nu_weights(ref))
    r = minimize(obj, np.asarray(start, dtype=float), method="L-BFGS-B", bounds=boxes,
                 options={"ftol": 1e-15, "gtol": 1e-12})
    return float(np.sqrt(max(r.fun, 0.0))), r.x


# ---------------------------------------------------------------- spectral gap

def linear_operator(inst, grid=None):
    grid = grid or inst.grid
    fac = (1 - inst.profile ** 2) * inst.params.beta
    return lambda v: -v + fac * apply_kernel(grid, v)


def _power(op, ip, v, tol, max_iter, project=None):
    lam = None
    for it in range(1, max_iter + 1):
        if project:
            v = project(v)
        v = v / np.sqrt(ip(v, v))
        Av = op(v)
        lam = ip(v, Av)
        resid = np.sqrt(ip(Av - lam * v, Av - lam * v))
        if resid <= tol:
            return lam, v, resid, it
        v = Av
    raise ConvergenceError(f"power iteration residual {resid:.3e}", residual=resid,
                           iterations=max_iter)


@dataclass
class SpectralGap:
    omega: float
    zero_mode_residual: float
    zero_mode: np.ndarray = field(repr=False)
    eigvec: np.ndarray = field(repr=False)
    iterations: int = 0
    residual: float = 0.0


def spectral_gap(inst, shift=1.5, tol=1e-9, max_iter=20000, seed=0):
    """-(largest Rayleigh quotient of L on the nu-complement of the zero mode)."""
    g = inst.grid
    w = g.weights * nu_weights(inst.profile)
    ip = lambda a, b: float(np.sum(w * a * b))
    L = linear_operator(inst)
    op = lambda v: L(v) + shift * v
    mp = inst.mprime
    zres = np.sqrt(ip(L(mp), L(mp)) / ip(mp, mp))
    lam0, e0, _, _ = _power(op, ip, mp.copy(), 1e-13, max_iter)
    proj = lambda v: v - ip(v, e0) * e0
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(g.n_points)
    lam, v, res, it = _power(op, ip, v, tol, max_iter, proj)
    return SpectralGap(-(lam - shift), float(zres), e0, v, it, res)


def spectral_gap_dense(inst):
    """Dense oracle: eigenvalues of W^{1/2} L W^{-1/2}, W the nu-trapezoid weights."""
    g = inst.grid
    N = g.n_points
    L = linear_operator(inst)
    A = np.column_stack([L(e) for e in np.eye(N)])
    w = g.weights * nu_weights(inst.profile)
    s = np.sqrt(w)
    B = s[:, None] * A / s[None, :]
    B = 0.5 * (B + B.T)
    ev = np.sort(np.linalg.eigvalsh(B))[::-1]
    return float(-ev[1]), ev


def rayleigh_quotient(inst, v):
    g = inst.grid
    w = g.weights * nu_weights(inst.profile)
    Lv = linear_operator(inst)(v)
    return float(np.sum(w * v * Lv) / np.sum(w * v * v))


# ---------------------------------------------------------------- center paths

@dataclass
class CentersPath:
    times: np.ndarray
    centers: np.ndarray
    sigma: np.ndarray
    mask: np.ndarray = None
    Ac_measure: float = 0.0
    Ac_bound: float = 0.0
    u_norm2: np.ndarray = None
    lost_at: float = None


def _root_near(fun, guess, h, span=3.0):
    for width in (0.5, 1.5, span):
        a, b = guess - width, guess + width
        fa, fb = fun(a), fun(b)
        if fa * fb <= 0:
            return brentq(fun, a, b, xtol=1e-12, rtol=1e-15)
    return None


def approximate_centers(m_traj, b1, inst, alpha_star=0.01, stride=1, guess=None,
                        params=None, with_u=True):
    """Approximate centers from the masked orthogonality condition on each slice.

    The set A = {x : int b1^2 dt <= alpha_star} uses the full time span of b1.
    """
    grid = m_traj.grid
    M = m_traj.M
    if b1 is None:
        mask = np.ones(grid.n_points)
        Ac, bound = 0.0, 0.0
    else:
        tot = np.trapezoid(b1.values ** 2, dx=b1.dt, axis=0) if b1.M > 0 else np.zeros(grid.n_points)
        mask = (tot <= alpha_star).astype(float)
        Ac = float(grid.integrate(1 - mask))
    if guess is None:
        guess = find_centers(m_traj.values[0], grid, inst, params=params).centers
    k = len(guess)
    sig = sigma_of(k)
    idx = list(range(0, M + 1, stride))
    if idx[-1] != M:
        idx.append(M)
    C = np.full((len(idx), k), np.nan)
    prev = np.asarray(guess, dtype=float)
    lost = None
    for row, t in enumerate(idx):
        m = m_traj.values[t]
        for i in range(k):
            fun = lambda xi: orthogonality(m, grid, inst, xi, sig[i], mask)
            r = _root_near(fun, prev[i], grid.h)
            if r is None:
                lost = m_traj.times[t]
                break
            C[row, i] = r
        if lost is not None:
            break
        prev = C[row]
    full = np.empty((M + 1, k))
    for i in range(k):
        full[:, i] = np.interp(np.arange(M + 1), idx, C[:, i])
    if lost is not None:
        full[m_traj.times >= lost] = np.nan
    path = CentersPath(m_traj.times, full, sig, mask, Ac, 0.0, None, lost)
    if b1 is not None and lost is None:
        from .action import weight_alpha
        alpha, _ = weight_alpha(path, grid, inst)
        ref = np.array([multi_instanton(inst, c, grid, min_gap=0) for c in full])
        rate = grid.integrate((alpha * b1.values) ** 2 * nu_weights(ref))
        path.Ac_bound = float(8.0 / alpha_star * np.trapezoid(rate, dx=b1.dt))
    if with_u and lost is None:
        ref = np.array([multi_instanton(inst, c, grid, min_gap=0) for c in full])
        path.u_norm2 = grid.integrate((m_traj.values - ref) ** 2 * nu_weights(ref))
    return path


def track_centers(traj, inst, stride=1, params=None):
    """Exact centers along a trajectory (no mask)."""
    return approximate_centers(traj, None, inst, stride=stride, params=params)


def decay_excess(path, omega, t_ref=None):
    """||u(t)||^2 - e^{-omega (t - t_ref)} ||u(t_ref)||^2 along a path."""
    t = path.times
    i0 = 0 if t_ref is None else int(np.searchsorted(t, t_ref))
    u2 = path.u_norm2
    return t[i0:], u2[i0:] - np.exp(-omega * (t[i0:] - t[i0])) * u2[i0]


def U_squared(path, b1, inst, params):
    """U_j^2 = int ||alpha b1||^2_nu dt + S R_max with R_max = exp(-alpha |log eps|^2 / 2)."""
    from .action import weight_alpha
    grid = b1.grid
    alpha, _ = weight_alpha(path, grid, inst)
    ref = np.array([multi_instanton(inst, c, grid, min_gap=0) for c in path.centers])
    rate = grid.integrate((alpha * b1.values) ** 2 * nu_weights(ref))
    r_max = np.exp(-inst.decay_alpha * params.separation / 2)
    return float(np.trapezoid(rate, dx=b1.dt) + params.S * r_max)


@dataclass
class FrontVelocities:
    times: np.ndarray
    v0: np.ndarray
    v: np.ndarray
    r: np.ndarray
    order_ok: bool
    worst_order: float


def front_velocities(path, b1, alpha, inst, c=0.0, U2=0.0, u0_norm2=0.0):
    """v0_i = sigma_i |(alpha b1, m_bar'_{xi_i})_nu| / ||m_bar'||^2_nu and r_i = xi_i(t0) + int v_i.

    The order check is sigma_i (r_i - xi_i) >= 0, i.e. r <= xi in the partial
    order of multi-instantons.
    """
    grid = b1.grid
    x = grid.x
    C = path.centers
    sig = path.sigma
    nrm = inst.norm_mprime_nu_sq
    v0 = np.zeros_like(C)
    for k in range(C.shape[0]):
        ref = multi_instanton(inst, C[k], grid, min_gap=0)
        wgt = grid.weights * nu_weights(ref) * alpha[k] * b1.values[k]
        for i in range(C.shape[1]):
            v0[k, i] = sig[i] * abs(np.sum(wgt * inst.dm(x - C[k, i]))) / nrm
    v = v0 + sig[None, :] * c * (U2 + u0_norm2)
    r = C[0][None, :] + np.vstack([np.zeros(C.shape[1]),
                                    np.cumsum(0.5 * b1.dt * (v[1:] + v[:-1]), axis=0)])
    gap = sig[None, :] * (r - C)
    worst = float(np.min(gap))
    return FrontVelocities(path.times, v0, v, r, worst >= -1e-9, worst)


# ---------------------------------------------------------------- initialization

def _erase_odd(c, limit):
    """Drop pairs (xi_j, xi_{j+1}), j odd in 1-based numbering, with gap <= limit."""
    c = list(c)
    changed = True
    while changed:
        changed = False
        for i in range(0, len(c) - 1, 2):
            if c[i + 1] - c[i] <= limit:
                del c[i:i + 2]
                changed = True
                break
    return c


@dataclass
class InitResult:
    profile: np.ndarray
    t_offset: float
    case: int
    centers_in: np.ndarray
    centers_ref: np.ndarray


def initialize_profile(m, grid, inst, params, centers=None):
    """Regularise a profile so that its centers are at least |log eps|^2 apart.

    Case 1 leaves m unchanged; Case 2 erases close odd pairs, pushes even
    pairs to gap 2|log eps|^2 about their midpoint and takes min(m, m_bar_xi3);
    Case 3 additionally relaxes for time tau under the unforced flow.
    """
    from .dynamics import evolve_unforced
    m = np.asarray(m, dtype=float)
    if centers is None:
        centers = find_centers(m, grid, inst, params=params).centers
    c = np.sort(np.asarray(centers, dtype=float))
    sep2 = 2 * params.separation
    if len(c) < 2 or np.all(np.diff(c) > sep2):
        return InitResult(m.copy(), 0.0, 1, c, c)
    ell_star = params.ell_star
    if ell_star is None:
        from .statics import calibrate_ell_star
        ell_star = calibrate_ell_star(inst)
    c1 = _erase_odd(c, sep2)
    c2 = list(c1)
    for i in range(1, len(c2) - 1, 2):
        gap = c2[i + 1] - c2[i]
        if 2 * ell_star <= gap <= sep2:
            mid = 0.5 * (c2[i] + c2[i + 1])
            c2[i], c2[i + 1] = mid - params.separation, mid + params.separation
    if np.any(np.diff(c2) <= 0):
        raise DomainError("push-apart made centers cross; profile too crowded")
    c3 = np.array(_erase_odd(c2, sep2))
    if c3.size == 0:
        raise DomainError("every center was erased; no reference multi-instanton")
    ref = multi_instanton(inst, c3, grid, min_gap=0)
    mt = np.minimum(m, ref)
    even_gaps = np.diff(c3)[1::2]
    if np.all(even_gaps >= sep2 - 1e-12):
        return InitResult(mt, 0.0, 2, c, c3)
    tau = params.tau
    if tau is None:
        tau = calibrate_tau(inst, ell_star, params.theta)
    tau = float(np.ceil(tau / 0.02) * 0.02)
    out = evolve_unforced(mt, tau, 0.02, inst.params, grid, store_every=int(round(tau / 0.02)))
    return InitResult(out.values[-1], tau, 3, c, c3)


def calibrate_tau(inst, ell_star, theta, dt=0.05, t_max=5000.0):
    """Time for the droplet of half-gap ell_star to relax within theta of m_beta."""
    from .dynamics import _rk4_step
    from .statics import droplet
    g = inst.grid
    m = droplet(inst, 2 * ell_star, 0.0, g)
    t = 0.0
    while t < t_max:
        m = _rk4_step(m, dt, inst.params, g)
        t += dt
        if np.max(np.abs(m - inst.m_beta)) <= theta:
            return t
    raise ConvergenceError("droplet did not collapse")


# ---------------------------------------------------------------- away from the manifold

def gradient_energy(m, grid, params):
    """int (1 ^ |f(m)|)^2 dx."""
    from .statics import clipped_gradient, energy_gradient
    return float(grid.integrate(clipped_gradient(energy_gradient(m, params, grid)) ** 2))
