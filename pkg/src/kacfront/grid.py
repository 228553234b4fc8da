"""Uniform 1-D grid, the interaction kernel and discrete convolutions.

The kernel is J(r) = (35/32)(1 - r^2)^3 on |r| <= 1, sampled at the grid
spacing and renormalised so that the discrete mass sum(J_k h) is exactly one.
Convolutions are direct windowed sums (O(N K)), applied along the last axis
so that a whole trajectory can be convolved in one call.
"""
import csv
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import DimensionError, DomainError

CLAMP = 1e-12
BOUNDARY_MODES = ("truncated_line", "neumann")


def kernel_function(r):
    """Default kernel, unnormalised on the grid but with unit continuum mass."""
    r = np.asarray(r, dtype=float)
    return np.where(np.abs(r) <= 1.0, 35.0 / 32.0 * (1.0 - r * r) ** 3, 0.0)


def kernel_derivative(r):
    r = np.asarray(r, dtype=float)
    return np.where(np.abs(r) <= 1.0, -35.0 / 32.0 * 6.0 * r * (1.0 - r * r) ** 2, 0.0)


class Kernel:
    """Kernel samples at offsets k*h, k = -K..K, normalised to discrete mass 1."""

    def __init__(self, h, func=kernel_function, dfunc=kernel_derivative, radius=1.0):
        if h <= 0:
            raise DomainError("kernel spacing must be positive")
        self.h = float(h)
        self.radius = float(radius)
        self.K = int(np.floor(radius / h + 1e-9))
        if self.K < 1:
            raise DomainError("grid spacing larger than the kernel range")
        self.offsets = np.arange(-self.K, self.K + 1) * self.h
        raw = func(self.offsets)
        self.norm = raw.sum() * self.h
        self.values = raw / self.norm
        self.weights = self.values * self.h
        self.dvalues = dfunc(self.offsets) / self.norm if dfunc is not None else None

    def __call__(self, r):
        """Closed-form J(r) with the same normalisation as the samples."""
        return kernel_function(r) / self.norm

    @property
    def mass(self):
        return float(self.weights.sum())


@dataclass(frozen=True)
class Grid1D:
    """Symmetric uniform grid on [-L, L] with an odd number of nodes."""

    L: float = 20.0
    n_points: int = 801
    boundary_mode: str = "neumann"

    def __post_init__(self):
        if self.n_points < 3 or self.n_points % 2 == 0:
            raise DomainError("n_points must be an odd integer >= 3")
        if self.L <= 0:
            raise DomainError("half length must be positive")
        if self.boundary_mode not in BOUNDARY_MODES:
            raise DomainError(f"unknown boundary mode {self.boundary_mode!r}")

    @classmethod
    def from_spacing(cls, L=20.0, h=0.05, boundary_mode="neumann"):
        n = int(round(2 * L / h))
        if abs(n * h - 2 * L) > 1e-9 * max(1.0, L):
            raise DomainError("2L must be an integer multiple of h")
        if n % 2:
            raise DomainError("2L/h must be even so that 0 is a node")
        return cls(float(L), n + 1, boundary_mode)

    @property
    def h(self):
        return 2.0 * self.L / (self.n_points - 1)

    @cached_property
    def x(self):
        return np.linspace(-self.L, self.L, self.n_points)

    @cached_property
    def weights(self):
        """Trapezoid weights."""
        w = np.full(self.n_points, self.h)
        w[0] = w[-1] = 0.5 * self.h
        return w

    @cached_property
    def kernel(self):
        k = Kernel(self.h)
        if k.K * self.h > self.L:
            raise DomainError("kernel support exceeds the grid half-length")
        return k

    def with_mode(self, mode):
        return Grid1D(self.L, self.n_points, mode)

    def index_of(self, x0):
        """Index of the node nearest to x0."""
        return int(np.clip(round((x0 + self.L) / self.h), 0, self.n_points - 1))

    def integrate(self, f):
        """Trapezoid integral along the last axis."""
        return np.asarray(f) @ self.weights


def _pad(m, K, mode):
    widths = [(0, 0)] * (m.ndim - 1) + [(K, K)]
    return np.pad(m, widths, mode="edge" if mode == "truncated_line" else "reflect")


def _windowed(m, taps, K, mode):
    m = np.asarray(m, dtype=float)
    p = _pad(m, K, mode)
    if m.ndim == 1:
        return np.convolve(p, taps, mode="valid")
    n = m.shape[-1]
    out = np.zeros_like(m)
    # reversed taps turn the sliding sum into sum_k t_k m(x - kh)
    for k, t in enumerate(taps[::-1]):
        if t != 0.0:
            out += t * p[..., k:k + n]
    return out


def _check(grid, m):
    if np.shape(m)[-1] != grid.n_points:
        raise DimensionError(f"profile length {np.shape(m)[-1]} != grid size {grid.n_points}")


def convolve(grid, m, kernel=None, mode="truncated_line"):
    """Trapezoid J*m; truncated_line extends m by its boundary values."""
    _check(grid, m)
    k = grid.kernel if kernel is None else kernel
    return _windowed(m, k.weights, k.K, mode)


def convolve_neumann(grid, m, kernel=None):
    """Convolution with the doubly reflected kernel J(x,y) + J(x,R_L y) + J(x,R_{-L} y)."""
    _check(grid, m)
    k = grid.kernel if kernel is None else kernel
    return _windowed(m, k.weights, k.K, "neumann")


def apply_kernel(grid, m, mode=None):
    """J*m using the grid's own boundary mode."""
    _check(grid, m)
    k = grid.kernel
    return _windowed(m, k.weights, k.K, mode or grid.boundary_mode)


def apply_kernel_derivative(grid, m, mode=None):
    """(J' * m)(x), i.e. the x-derivative of J*m for the sampled profile."""
    _check(grid, m)
    k = grid.kernel
    return _windowed(m, k.dvalues * k.h, k.K, mode or grid.boundary_mode)


def clamp(m):
    return np.clip(m, -1.0 + CLAMP, 1.0 - CLAMP)


def nu_weights(m_ref):
    """Per-node density 1/(1 - m_ref^2) of the measure d(nu)."""
    m_ref = clamp(np.asarray(m_ref, dtype=float))
    return 1.0 / (1.0 - m_ref * m_ref)


def inner_product_nu(grid, f, g, w):
    """Trapezoid sum of f g w h."""
    f, g, w = (np.asarray(a, dtype=float) for a in (f, g, w))
    if not (f.shape[-1] == g.shape[-1] == w.shape[-1] == grid.n_points):
        raise DimensionError("inner product arguments do not match the grid")
    return grid.integrate(f * g * w)


@dataclass
class Profile:
    """Magnetisation values on a grid, clamped strictly inside (-1, 1)."""

    grid: Grid1D
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        _check(self.grid, self.values)
        self.clamped = bool(np.any(np.abs(self.values) > 1.0 - CLAMP))
        self.values = clamp(self.values)

    def __array__(self, dtype=None, copy=None):
        return self.values if dtype is None else self.values.astype(dtype)

    def save(self, path):
        save_profile(path, self.grid.x, self.values)

    @classmethod
    def load(cls, path, boundary_mode="neumann"):
        x, m = load_profile(path)
        return cls(grid_from_nodes(x, boundary_mode), m)


def save_profile(path, x, m):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "m"])
        for a, b in zip(x, m):
            w.writerow([f"{a:.17g}", f"{b:.17g}"])


def load_profile(path):
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return data[:, 0], data[:, 1]


def grid_from_nodes(x, boundary_mode="neumann"):
    x = np.asarray(x, dtype=float)
    L = float(x[-1])
    if abs(x[0] + L) > 1e-9 * max(1.0, L):
        raise DomainError("node set is not symmetric about 0")
    g = Grid1D(L, len(x), boundary_mode)
    if np.max(np.abs(g.x - x)) > 1e-9 * max(1.0, L):
        raise DomainError("nodes are not uniformly spaced")
    return g
