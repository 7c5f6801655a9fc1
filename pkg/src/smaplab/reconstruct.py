"""Inverse of the gauge map: recover u from (q, s, alpha).

Write exp(-alpha R) v(s r) = z1 j + z2 J^h j + (1 + gamma) h.  The tension of
this profile, expressed in the basis, is

    (L0 z) j + (gamma h)_r + (2m/r) h3 gamma h + (m/r) xi3 xi,

with xi = z1 j + z2 J^h j + gamma h.  Taking j and J^h j components turns the
reconstruction into a fixed point for z around the explicit inverse of L0
with the orthogonality <z, h1> = 0 built in.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.interpolate import CubicSpline

from .gauge import build_frame_profile
from .radial import RadialGrid, NoAdmissibleSolution, solve_l0
from .sphere import (
    EquivariantMap,
    _grid_header,
    grid_from_header,
    laplacian_profile,
    normalize,
    parse_header,
    rotate,
)
from .modulation import basis_at

log = logging.getLogger(__name__)

MAX_ITER = 100
STOP_TOL = 1e-10
GROWTH_LIMIT = 5


class ReconstructionError(ArithmeticError):
    pass


@dataclass(frozen=True, eq=False)
class GaugedState:
    grid: RadialGrid
    q: np.ndarray
    s: float = 1.0
    alpha: float = 0.0

    def __post_init__(self):
        if not self.s > 0:
            raise ReconstructionError(f"scale must be positive, got {self.s}")
        if self.q.shape != (self.grid.n,):
            raise ReconstructionError("q does not match the grid")
        if not np.all(np.isfinite(self.q)):
            raise ReconstructionError("non-finite q")

    @property
    def norm(self) -> float:
        return self.grid.l2e(self.q)


@dataclass
class ReconstructionLog:
    iterations: int = 0
    updates: list = field(default_factory=list)

    @property
    def contraction(self) -> list:
        u = self.updates
        return [u[k + 1] / u[k] for k in range(len(u) - 1) if u[k] > 0]

    @property
    def factor(self) -> float:
        """Worst observed ratio of successive updates, ignoring the round-off floor."""
        u = self.updates
        ratios = [u[k + 1] / u[k] for k in range(len(u) - 1) if u[k] > 1e3 * STOP_TOL]
        return max(ratios) if ratios else 0.0


def _sample_complex(grid: RadialGrid, f: np.ndarray, radii: np.ndarray) -> np.ndarray:
    """f at arbitrary radii by cubic interpolation in the grid coordinate; zero outside."""
    key = np.log(radii) if grid.spacing == "log" else radii
    spline = CubicSpline(grid.x, f, axis=0)
    out = spline(key)
    out[(radii < grid.r_min) | (radii > grid.r_max)] = 0.0
    return out


def _sample_decaying(grid: RadialGrid, f: np.ndarray, radii: np.ndarray, m: int) -> np.ndarray:
    """Like _sample_complex but continued by r^{+-m} beyond the grid, the
    decay of displacements along the kernel of L0."""
    inside = (radii >= grid.r_min) & (radii <= grid.r_max)
    out = np.zeros(radii.shape, dtype=complex)
    key = np.log(radii[inside]) if grid.spacing == "log" else radii[inside]
    out[inside] = CubicSpline(grid.x, f, axis=0)(key)
    lo = radii < grid.r_min
    hi = radii > grid.r_max
    out[lo] = f[0] * (radii[lo] / grid.r_min) ** m
    out[hi] = f[-1] * (grid.r_max / radii[hi]) ** m
    return out


def assemble(grid: RadialGrid, m: int, z: np.ndarray):
    """Unit profile h + z1 j + z2 J^h j + gamma h together with gamma and xi."""
    j, Jj, h = basis_at(grid.r, m)
    gamma = np.sqrt(np.clip(1.0 - np.abs(z) ** 2, 0.0, None)) - 1.0
    xi = z.real[:, None] * j + z.imag[:, None] * Jj + gamma[:, None] * h
    return h + xi, gamma, xi


def _source(grid: RadialGrid, m: int, z: np.ndarray, qs: np.ndarray, s: float, alpha: float):
    """Right-hand side g of L0 z = g for the current iterate."""
    r = grid.r
    j, Jj, h = basis_at(r, m)
    w, gamma, xi = assemble(grid, m, z)
    e_inf = rotate(np.array([1.0, 0.0, 0.0]), -alpha)
    fr = build_frame_profile(grid, w, e_inf=e_inf)
    W = s * (qs.real[:, None] * fr.e_hat + qs.imag[:, None] * fr.f_hat)
    h3 = h[:, 2]
    G = (
        W
        - grid.deriv(gamma[:, None] * h)
        - ((2.0 * m / r) * h3 * gamma)[:, None] * h
        - ((m / r) * xi[:, 2])[:, None] * xi
    )
    return np.sum(G * j, axis=1) + 1j * np.sum(G * Jj, axis=1)


def reconstruct_z(state: GaugedState, m: int, z0: np.ndarray | None = None, tol: float = STOP_TOL, max_iter: int = MAX_ITER):
    """Fixed point for z on the state's grid; returns (z, log)."""
    grid = state.grid
    qs = state.q if state.s == 1.0 else _sample_complex(grid, state.q, state.s * grid.r)
    z = np.zeros(grid.n, dtype=complex) if z0 is None else np.asarray(z0, dtype=complex)
    rec = ReconstructionLog()
    growth = 0
    for k in range(max_iter):
        try:
            g = _source(grid, m, z, qs, state.s, state.alpha)
            z_new = solve_l0(grid, g, m)
        except NoAdmissibleSolution as exc:
            raise ReconstructionError(f"q too large for reconstruction chart ({exc})") from exc
        if np.max(np.abs(z_new)) >= 1.0:
            raise ReconstructionError("q too large for reconstruction chart (|z| reached 1)")
        scale = max(grid.h1e_dot(z_new, m), 1.0)
        upd = grid.h1e_dot(z_new - z, m) / scale
        if rec.updates and upd > rec.updates[-1]:
            growth += 1
            if growth >= GROWTH_LIMIT:
                raise ReconstructionError(
                    f"q too large for reconstruction chart (update grew {growth} times, last {upd:.2e})"
                )
        else:
            growth = 0
        rec.updates.append(upd)
        z = z_new
        rec.iterations = k + 1
        if upd <= tol:
            break
    log.debug("reconstruction: %d iterations, contraction %.3g", rec.iterations, rec.factor)
    return z, rec


def map_from_z(grid: RadialGrid, m: int, z: np.ndarray, s: float, alpha: float, out_grid: RadialGrid | None = None) -> EquivariantMap:
    """u with profile exp(alpha R) w(r/s), w = h + xi."""
    out_grid = out_grid or grid
    rr = out_grid.r / s
    j, Jj, h = basis_at(rr, m)
    if s == 1.0 and out_grid is grid:
        zz = z
    else:
        zz = _sample_decaying(grid, z, rr, m)
    gamma = np.sqrt(np.clip(1.0 - np.abs(zz) ** 2, 0.0, None)) - 1.0
    w = h + zz.real[:, None] * j + zz.imag[:, None] * Jj + gamma[:, None] * h
    return EquivariantMap(m, rotate(normalize(w), alpha), out_grid)


def reconstruct(state: GaugedState, m: int, grid: RadialGrid | None = None, return_log: bool = False, z0=None):
    z, rec = reconstruct_z(state, m, z0=z0)
    u = map_from_z(state.grid, m, z, state.s, state.alpha, grid)
    return (u, rec) if return_log else u


def h2_distance(u1: EquivariantMap, u2: EquivariantMap) -> float:
    d = u1.v - u2.v
    return float(np.sqrt(2.0 * np.pi) * u1.grid.l2e(laplacian_profile(u1.grid, d, u1.m)))


def reconstruction_modulus(state: GaugedState, perturbation: GaugedState, m: int) -> float:
    """Dot-H^2 change of u over the size of the perturbation in H^1_e x R x R.

    ``perturbation`` carries an additive change of q and alpha and a
    multiplicative change of s (so that its own s stays positive).
    """
    grid = state.grid
    dq = perturbation.q
    size = grid.h1e(dq, 1) + state.s * abs(perturbation.s - 1.0) + abs(perturbation.alpha)
    if size == 0.0:
        return 0.0
    u0 = reconstruct(state, m)
    moved = GaugedState(grid, state.q + dq, state.s * perturbation.s, state.alpha + perturbation.alpha)
    u1 = reconstruct(moved, m)
    return h2_distance(u1, u0) / size


# -- files -------------------------------------------------------------------


def save_state(path, state: GaugedState, m: int) -> None:
    header = f"gauged m={m} s={state.s:.17g} alpha={state.alpha:.17g} " + _grid_header(state.grid)
    cols = np.column_stack([state.grid.r, state.q.real, state.q.imag])
    np.savetxt(Path(path), cols, fmt="%.17g", header=header, comments="# ")


def load_state(path) -> tuple[GaugedState, int]:
    path = Path(path)
    with path.open() as fh:
        meta = parse_header(fh.readline())
    for key in ("m", "s", "alpha"):
        if key not in meta:
            raise ReconstructionError(f"{path}: header lacks {key}")
    grid = grid_from_header(meta)
    data = np.loadtxt(path, ndmin=2)
    if data.shape != (grid.n, 3) or not np.allclose(data[:, 0], grid.r, rtol=1e-13, atol=0):
        raise ReconstructionError(f"{path}: nodes do not match header grid")
    st = GaugedState(grid, data[:, 1] + 1j * data[:, 2], float(meta["s"]), float(meta["alpha"]))
    return st, int(meta["m"])
