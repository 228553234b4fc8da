"""Stationary objects: m_beta, the instanton, multi-instantons and the free energy."""
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.optimize import bisect, brentq
from scipy.special import xlogy

from .errors import ConvergenceError, DomainError
from .grid import (CLAMP, Grid1D, _pad, apply_kernel, apply_kernel_derivative,
                   clamp, nu_weights)


@dataclass(frozen=True)
class ModelParams:
    beta: float = 1.5

    def __post_init__(self):
        if not self.beta > 1.0:
            raise DomainError("beta must exceed 1 (supercritical regime)")


def mean_field_magnetization(beta):
    """Positive root of m = tanh(beta m)."""
    if not beta > 1.0:
        raise DomainError("beta must exceed 1")
    g = lambda m: m - np.tanh(beta * m)
    lo = 1e-300
    # g < 0 just above 0 and g(1) > 0
    return bisect(g, lo, 1.0, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500)


def entropy(m):
    m = clamp(np.asarray(m, dtype=float))
    a, b = 0.5 * (1 - m), 0.5 * (1 + m)
    return -xlogy(a, a) - xlogy(b, b)


def phi_tilde(m, beta):
    m = np.asarray(m, dtype=float)
    return -0.5 * m * m - entropy(m) / beta


def phi_beta(m, beta):
    """Mean-field excess free energy density, zero at +-m_beta."""
    return phi_tilde(m, beta) - phi_tilde(mean_field_magnetization(beta), beta)


def free_energy(m, params, grid):
    """Trapezoid free energy; works along the last axis of m.

    The pair term (1/4) sum_i w_i sum_k J_k h (m_i - m_{i+k})^2 uses the same
    boundary extension as the convolution, which makes energy_gradient the
    exact gradient of this sum in Neumann mode.
    """
    m = np.asarray(m, dtype=float)
    if np.any(np.abs(m) >= 1.0 - CLAMP):
        warnings.warn("free_energy evaluated at the clamp boundary", RuntimeWarning)
    m = clamp(m)
    k = grid.kernel
    p = _pad(m, k.K, grid.boundary_mode)
    n = grid.n_points
    pair = np.zeros_like(m)
    for j, t in enumerate(k.weights):
        pair += t * (m - p[..., j:j + n]) ** 2
    return grid.integrate(phi_beta(m, params.beta) + 0.25 * pair)


def energy_gradient(m, params, grid):
    """f(m) = -J*m + arctanh(m)/beta."""
    m = clamp(np.asarray(m, dtype=float))
    return -apply_kernel(grid, m) + np.arctanh(m) / params.beta


def clipped_gradient(f):
    """The field 1 ^ |f|."""
    return np.minimum(1.0, np.abs(f))


@dataclass
class InstantonData:
    grid: Grid1D
    params: ModelParams
    profile: np.ndarray
    mprime: np.ndarray
    m_beta: float
    decay_alpha: float
    decay_a: float
    norm_mprime_nu_sq: float
    residual: float
    sweeps: int
    fit_residual: float
    fit_window: tuple
    F_bar: float = field(default=np.nan)

    def __post_init__(self):
        x = self.grid.x
        self._m = CubicSpline(x, self.profile)
        self._mp = CubicSpline(x, self.mprime)
        q = self.mprime * nu_weights(self.profile)
        self._q = CubicSpline(x, q)

    def _eval(self, spl, y, outside):
        y = np.asarray(y, dtype=float)
        inside = np.abs(y) <= self.grid.L
        out = np.where(y > 0, outside, -outside if outside else 0.0).astype(float)
        if np.any(inside):
            out = np.array(out, dtype=float)
            out[inside] = spl(y[inside])
        return out

    def m(self, y):
        """m(y) with +-m_beta beyond the stored support."""
        return self._eval(self._m, y, self.m_beta)

    def dm(self, y):
        return self._eval(self._mp, y, 0.0)

    def q(self, y):
        """m'(y)/(1 - m(y)^2), the kernel of the orthogonality function."""
        return self._eval(self._q, y, 0.0)


def _fit_tail(x, mp, window=None):
    if window is None:
        peak = mp[len(x) // 2]
        sel = (x > 0) & (mp > 1e-9 * peak) & (mp < 1e-3 * peak)
    else:
        sel = (x >= window[0]) & (x <= window[1]) & (mp > 0)
    if sel.sum() < 5:
        raise DomainError("tail window holds too few resolvable points")
    c = np.polyfit(x[sel], np.log(mp[sel]), 1)
    alpha, a = -c[0], np.exp(c[1])
    resid = float(np.max(np.abs(np.exp(alpha * x[sel]) * mp[sel] / a - 1.0)))
    return alpha, a, resid, (float(x[sel][0]), float(x[sel][-1]))


def compute_instanton(params=None, grid=None, damping=0.5, tol=1e-13,
                      max_sweeps=20000, tail_window=None):
    """Damped, antisymmetrised fixed-point iteration m <- (1-l)m + l tanh(beta J*m).

    tail_window=None selects the window where m' lies between 1e-9 and 1e-3
    of its peak; an explicit (x0, x1) is honoured as given.
    """
    params = params or ModelParams()
    grid = grid or Grid1D()
    if grid.L < 10:
        raise DomainError("instanton needs L >= 10")
    beta = params.beta
    mb = mean_field_magnetization(beta)
    x = grid.x
    m = mb * np.sign(x)
    res = np.inf
    for sweep in range(1, max_sweeps + 1):
        t = np.tanh(beta * apply_kernel(grid, m))
        res = float(np.max(np.abs(m - t)))
        if res <= tol:
            break
        m = (1 - damping) * m + damping * t
        m = 0.5 * (m - m[::-1])
    else:
        raise ConvergenceError(f"instanton iteration stalled at residual {res:.3e}",
                               residual=res, iterations=max_sweeps)
    mp = (1 - m * m) * beta * apply_kernel_derivative(grid, m)
    norm = float(grid.integrate(mp * mp * nu_weights(m)))
    alpha, a, fres, win = _fit_tail(x, mp, tail_window)
    inst = InstantonData(grid, params, m, mp, mb, alpha, a, norm, res, sweep, fres, win)
    inst.F_bar = float(free_energy(m, params, grid))
    return inst


def translate_instanton(inst, xi, grid=None, derivative=False):
    """m_bar(x - xi) on `grid` (default: the instanton grid)."""
    grid = grid or inst.grid
    if abs(xi) >= grid.L - 5:
        raise DomainError(f"center {xi} too close to the boundary")
    y = grid.x - xi
    return inst.dm(y) if derivative else inst.m(y)


def multi_instanton(inst, centers, grid=None, min_gap=4.0, derivative=False):
    """Glued profile: odd (1-based) centers rising, even ones falling, cut at midpoints."""
    grid = grid or inst.grid
    c = np.atleast_1d(np.asarray(centers, dtype=float))
    if c.size == 0:
        raise DomainError("need at least one center")
    if np.any(np.diff(c) <= 0):
        raise DomainError("centers must be strictly increasing")
    if min_gap and np.any(np.diff(c) < min_gap):
        raise DomainError(f"centers closer than {min_gap}")
    if c[0] <= -grid.L + 5 - 1e-12 or c[-1] >= grid.L - 5 + 1e-12:
        raise DomainError("centers too close to the boundary")
    x = grid.x
    piece = np.searchsorted(0.5 * (c[1:] + c[:-1]), x)
    sign = np.where(piece % 2 == 0, 1.0, -1.0)
    y = x - c[piece]
    return sign * (inst.dm(y) if derivative else inst.m(y))


def droplet(inst, gap, center=0.0, grid=None):
    """Minus droplet in the plus phase with fronts at center -+ gap/2."""
    return -multi_instanton(inst, [center - gap / 2, center + gap / 2], grid, min_gap=0)


def calibrate_ell_star(inst, gamma=None, grid=None):
    """Smallest half-gap l with |F(droplet of gap 2l) - 2F(m_bar)| <= gamma."""
    grid = grid or inst.grid
    gamma = 0.01 * inst.F_bar if gamma is None else gamma
    dev = lambda l: abs(free_energy(droplet(inst, 2 * l, 0.0, grid), inst.params, grid)
                        - 2 * inst.F_bar) - gamma
    lo, hi = 0.05, 5.0
    if dev(lo) < 0:
        return lo
    return brentq(dev, lo, hi, xtol=1e-10)
