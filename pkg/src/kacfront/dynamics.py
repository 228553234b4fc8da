"""Time integration of the nonlocal equation, force extraction and the coupled system."""
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import ConvergenceError, DimensionError, DomainError, IntegrationError
from .grid import Grid1D, apply_kernel, clamp, grid_from_nodes, load_profile, save_profile
from .statics import ModelParams


@dataclass
class SpaceTimeField:
    """Values on a uniform time mesh t0 + k dt, k = 0..M, times the space grid."""

    grid: Grid1D
    values: np.ndarray
    dt: float
    t0: float = 0.0

    def __post_init__(self):
        self.values = np.atleast_2d(np.asarray(self.values, dtype=float))
        if self.values.shape[1] != self.grid.n_points:
            raise DimensionError("field width does not match the grid")
        if not self.dt > 0:
            raise DomainError("dt must be positive")

    @property
    def M(self):
        return self.values.shape[0] - 1

    @property
    def times(self):
        return self.t0 + self.dt * np.arange(self.M + 1)

    @property
    def t_end(self):
        return self.t0 + self.dt * self.M

    def __len__(self):
        return self.values.shape[0]

    def __getitem__(self, k):
        return self.values[k]

    def save(self, directory, stride=1):
        os.makedirs(directory, exist_ok=True)
        idx = np.arange(0, self.M + 1, stride)
        if idx[-1] != self.M:
            raise DomainError("stride must divide the number of steps")
        with open(os.path.join(directory, "manifest.txt"), "w") as fh:
            fh.write(f"kind = {type(self).__name__}\n")
            fh.write(f"dt = {self.dt * stride:.17g}\nt0 = {self.t0:.17g}\n")
            fh.write(f"M = {len(idx) - 1}\nL = {self.grid.L:.17g}\n")
            fh.write(f"n_points = {self.grid.n_points}\nboundary_mode = {self.grid.boundary_mode}\n")
        for j, k in enumerate(idx):
            save_profile(os.path.join(directory, f"slice_{j:06d}.csv"), self.grid.x, self.values[k])

    @classmethod
    def load(cls, directory):
        meta = {}
        with open(os.path.join(directory, "manifest.txt")) as fh:
            for line in fh:
                if "=" in line:
                    k, v = line.split("=", 1)
                    meta[k.strip()] = v.strip()
        M = int(meta["M"])
        rows, x = [], None
        for j in range(M + 1):
            x, m = load_profile(os.path.join(directory, f"slice_{j:06d}.csv"))
            rows.append(m)
        grid = grid_from_nodes(x, meta.get("boundary_mode", "neumann"))
        return cls(grid, np.array(rows), float(meta["dt"]), float(meta.get("t0", 0.0)))


class Trajectory(SpaceTimeField):
    """Time-indexed profiles phi(x, t_k)."""


class ForcingField(SpaceTimeField):
    """External field b(x, t_k) on a trajectory mesh."""


def drift(m, params, grid):
    return -m + np.tanh(params.beta * apply_kernel(grid, m))


def _rk4_step(m, dt, params, grid, b0=None, bh=None, b1=None):
    def f(u, b):
        r = drift(u, params, grid)
        return r if b is None else r + b
    k1 = f(m, b0)
    k2 = f(clamp(m + 0.5 * dt * k1), bh)
    k3 = f(clamp(m + 0.5 * dt * k2), bh)
    k4 = f(clamp(m + dt * k3), b1)
    out = clamp(m + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4))
    if not np.all(np.isfinite(out)):
        raise IntegrationError("non-finite values in time integration")
    return out


def evolve_unforced(m0, horizon, dt=0.02, params=None, grid=None, store_every=1):
    """RK4 for dm/dt = -m + tanh(beta J*m), storing every `store_every` steps."""
    params = params or ModelParams()
    grid = grid or Grid1D()
    if not 0 < dt <= 0.1:
        raise DomainError("dt must lie in (0, 0.1]")
    n = int(round(horizon / dt))
    if n % store_every:
        raise DomainError("store_every must divide the number of steps")
    m = clamp(np.asarray(m0, dtype=float).copy())
    out = [m]
    for k in range(1, n + 1):
        m = _rk4_step(m, dt, params, grid)
        if k % store_every == 0:
            out.append(m)
    return Trajectory(grid, np.array(out), dt * store_every)


def evolve_forced(m0, b, params=None, grid=None, hold="linear"):
    """RK4 for dm/dt = -m + tanh(beta J*m) + b on the mesh of b.

    hold="linear" interpolates b in time inside a step (stage values b_k,
    (b_k + b_{k+1})/2, b_{k+1}); hold="constant" freezes b_k over the step.
    """
    params = params or ModelParams()
    grid = grid or b.grid
    if hold not in ("linear", "constant"):
        raise DomainError("hold must be 'linear' or 'constant'")
    bv = b.values
    m = clamp(np.asarray(m0, dtype=float).copy())
    out = np.empty_like(bv)
    out[0] = m
    for k in range(b.M):
        if hold == "linear":
            b0, b1 = bv[k], bv[k + 1]
            m = _rk4_step(m, b.dt, params, grid, b0, 0.5 * (b0 + b1), b1)
        else:
            m = _rk4_step(m, b.dt, params, grid, bv[k], bv[k], bv[k])
        out[k + 1] = m
    return Trajectory(grid, out, b.dt, b.t0)


def time_derivative(traj):
    """Centered differences inside, second-order one-sided at the ends."""
    if traj.M < 2:
        if traj.M == 1:
            d = (traj.values[1] - traj.values[0]) / traj.dt
            return np.array([d, d])
        raise DomainError("need at least two time slices")
    return np.gradient(traj.values, traj.dt, axis=0, edge_order=2)


def force_of(traj, params=None):
    """b(phi) = phi_t + phi - tanh(beta J*phi)."""
    params = params or ModelParams()
    phi = traj.values
    b = time_derivative(traj) + phi - np.tanh(params.beta * apply_kernel(traj.grid, phi))
    return ForcingField(traj.grid, b, traj.dt, traj.t0)


@dataclass
class CoupledSolution:
    phi1: Trajectory
    m: Trajectory
    centers_path: object
    gaps: list = field(default_factory=list)
    ratios: list = field(default_factory=list)

    @property
    def sweeps(self):
        return len(self.gaps)

    @property
    def contraction(self):
        r = [x for x in self.ratios if np.isfinite(x)]
        return max(r) if r else 0.0


def solve_coupled_system(phi, inst, b1, m_in=None, alpha_star=0.01, tol=1e-8,
                         max_iter=100, hold="linear", stride=1):
    """Picard iteration for the auxiliary pair (phi1, m) on one good slab.

    Sweep k solves b(phi1^k) = alpha_k b1 from phi(0) and b(m^k) = alpha_k b1
    from m_in, where alpha_k is built from the approximate centers of m^{k-1}
    (sweep 0 uses alpha = 1). Stops when the sup over time of the center
    change is <= tol.
    """
    from .action import weight_alpha
    from .analysis import approximate_centers

    params = inst.params
    m0 = phi.values[0] if m_in is None else np.asarray(m_in, dtype=float)
    m_k = evolve_forced(m0, b1, params, phi.grid, hold)
    path = approximate_centers(m_k, b1, inst, alpha_star=alpha_star, stride=stride)
    sol = CoupledSolution(None, m_k, path)
    for k in range(1, max_iter + 1):
        alpha, _ = weight_alpha(path, phi.grid, inst)
        force = ForcingField(phi.grid, alpha * b1.values, b1.dt, b1.t0)
        m_k = evolve_forced(m0, force, params, phi.grid, hold)
        phi1 = evolve_forced(phi.values[0], force, params, phi.grid, hold)
        new = approximate_centers(m_k, b1, inst, alpha_star=alpha_star, stride=stride,
                                  guess=path.centers[0])
        if new.centers.shape != path.centers.shape:
            raise ConvergenceError("number of centers changed between sweeps")
        gap = float(np.max(np.abs(new.centers - path.centers)))
        sol.ratios.append(gap / sol.gaps[-1] if sol.gaps and sol.gaps[-1] > 0 else np.nan)
        sol.gaps.append(gap)
        sol.phi1, sol.m, sol.centers_path = phi1, m_k, new
        path = new
        if gap <= tol:
            return sol
        if len(sol.ratios) > 1 and sol.ratios[-1] >= 1.0:
            raise ConvergenceError(f"Picard contraction factor {sol.ratios[-1]:.3g} >= 1",
                                   residual=gap, iterations=k)
    raise ConvergenceError("Picard iteration did not converge", residual=gap, iterations=max_iter)
