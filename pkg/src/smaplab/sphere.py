"""Equivariant profiles v: (0, inf) -> S^2, the harmonic family, energies and
Sobolev diagnostics.

A map u = exp(m theta R) v(r) is stored by its profile only; all 2-D norms are
evaluated through their exact radial reductions.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np
from scipy.interpolate import CubicSpline

from .radial import RadialGrid, build_grid, h_profile

K_HAT = np.array([0.0, 0.0, 1.0])
R_MAT = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 0.0]])

UNIT_TOL = 1e-12
INNER_TOL = 0.05
OUTER_TOL = 1e-3


class MapError(ValueError):
    pass


def rotation(alpha: float) -> np.ndarray:
    """exp(alpha R): rotation by alpha about the third axis."""
    c, s = np.cos(alpha), np.sin(alpha)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def rotate(v: np.ndarray, alpha: float) -> np.ndarray:
    return v @ rotation(alpha).T


def normalize(v: np.ndarray) -> np.ndarray:
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def cross_R(v: np.ndarray) -> np.ndarray:
    """J^v R v = v x Rv, which equals k - v3 v."""
    return np.cross(v, v @ R_MAT.T)


@dataclass(frozen=True)
class HarmonicParams:
    s: float = 1.0
    alpha: float = 0.0

    def __post_init__(self):
        if not self.s > 0:
            raise MapError(f"scale must be positive, got {self.s}")


@dataclass(frozen=True, eq=False)
class EquivariantMap:
    m: int
    v: np.ndarray
    grid: RadialGrid

    def __post_init__(self):
        if self.m < 1:
            raise MapError("equivariance index must be a positive integer")
        if self.v.shape != (self.grid.n, 3):
            raise MapError(f"profile shape {self.v.shape} does not match grid")
        if not np.all(np.isfinite(self.v)):
            raise MapError("non-finite profile values")
        dev = np.abs(np.linalg.norm(self.v, axis=1) - 1.0).max()
        if dev > UNIT_TOL * 10:
            raise MapError(f"profile leaves the unit sphere (max deviation {dev:.2e})")

    def check_boundary(self, inner_tol: float = INNER_TOL, outer_tol: float = OUTER_TOL):
        d0 = np.linalg.norm(self.v[0] + K_HAT)
        d1 = np.linalg.norm(self.v[-1] - K_HAT)
        if d0 > inner_tol or d1 > outer_tol:
            raise MapError(
                f"profile not in Sigma_m: |v(r_1)+k|={d0:.2e}, |v(r_n)-k|={d1:.2e}"
            )
        return self

    @cached_property
    def vr(self) -> np.ndarray:
        return self.grid.deriv(self.v)

    @cached_property
    def _spline(self) -> CubicSpline:
        return CubicSpline(self.grid.x, self.v, axis=0)

    def sample(self, radii: np.ndarray) -> np.ndarray:
        """Profile at arbitrary radii.

        Outside the grid the transverse part is continued by the harmonic
        decay r^{+-m} and the result is put back on the sphere.
        """
        radii = np.asarray(radii, dtype=float)
        g = self.grid
        inside = (radii >= g.r_min) & (radii <= g.r_max)
        out = np.empty(radii.shape + (3,))
        key = np.log(radii[inside]) if g.spacing == "log" else radii[inside]
        out[inside] = self._spline(key)
        lo = radii < g.r_min
        hi = radii > g.r_max
        for mask, node, ratio, sgn in (
            (lo, self.v[0], radii / g.r_min, -1.0),
            (hi, self.v[-1], g.r_max / np.where(hi, radii, 1.0), 1.0),
        ):
            if np.any(mask):
                perp = node[:2][None, :] * (ratio[mask] ** self.m)[:, None]
                out[mask, :2] = perp
                out[mask, 2] = sgn * np.sqrt(np.clip(1.0 - np.sum(perp**2, axis=1), 0.0, None))
        return normalize(out)

    def rotated(self, beta: float) -> "EquivariantMap":
        return EquivariantMap(self.m, rotate(self.v, beta), self.grid)

    def rescaled(self, lam: float) -> "EquivariantMap":
        """Profile of u(./lam) on the same grid."""
        return EquivariantMap(self.m, self.sample(self.grid.r / lam), self.grid)


def harmonic_profile(r: np.ndarray, m: int, s: float = 1.0, alpha: float = 0.0) -> np.ndarray:
    h1, h3 = h_profile(r, m, s)
    h = np.stack([h1, np.zeros_like(h1), h3], axis=-1)
    return rotate(h, alpha) if alpha else h


def harmonic_map(m: int, params: HarmonicParams = HarmonicParams(), grid: RadialGrid | None = None) -> EquivariantMap:
    grid = grid or build_grid()
    return EquivariantMap(m, harmonic_profile(grid.r, m, params.s, params.alpha), grid)


def frame_basis(r: np.ndarray, m: int):
    """Orthonormal basis (j, J^h j, h) at the unscaled harmonic profile."""
    h1, h3 = h_profile(r, m)
    zero = np.zeros_like(h1)
    j = np.stack([zero, zero + 1.0, zero], axis=-1)
    Jj = np.stack([-h3, zero, h1], axis=-1)
    h = np.stack([h1, zero, h3], axis=-1)
    return j, Jj, h


def log_bump(r: np.ndarray, center: float = 1.0, width: float = 0.5) -> np.ndarray:
    """Smooth bump in log r, numerically compactly supported on the default grid."""
    return np.exp(-0.5 * (np.log(r / center) / width) ** 2)


def perturbed_profile(r: np.ndarray, m: int, z) -> np.ndarray:
    """normalize(h + z1 j + z2 J^h j) at radii r for a complex displacement z."""
    j, Jj, h = frame_basis(r, m)
    zv = z(r) if callable(z) else np.asarray(z)
    return normalize(h + zv.real[:, None] * j + zv.imag[:, None] * Jj)


def perturbed_map(
    m: int,
    z,
    grid: RadialGrid,
    params: HarmonicParams = HarmonicParams(),
) -> EquivariantMap:
    """Profile exp(alpha R) w(r/s) with w = normalize(h + z1 j + z2 J^h j).

    ``z`` is either a callable r -> complex (evaluated exactly at r/s) or an
    array on the grid, which then requires s = 1.
    """
    if not callable(z) and params.s != 1.0:
        raise MapError("sampled displacements need s = 1; pass a callable")
    rr = grid.r / params.s
    w = perturbed_profile(rr, m, z)
    return EquivariantMap(m, rotate(w, params.alpha), grid)


# -- energies ---------------------------------------------------------------


def _h1_density(grid: RadialGrid, w: np.ndarray, m: int, wr: np.ndarray | None = None) -> np.ndarray:
    wr = grid.deriv(w) if wr is None else wr
    return np.sum(wr**2, axis=1) + m**2 * (w[:, 0] ** 2 + w[:, 1] ** 2) / grid.r**2


def energy(u: EquivariantMap, tails: bool = True) -> float:
    """pi int (|v_r|^2 + m^2 (v1^2+v2^2)/r^2) r dr.

    With ``tails`` the contribution of the harmonic continuation r^{+-m} of
    the boundary data beyond the grid, pi m |v_perp|^2 at each end, is added.
    """
    e = np.pi * u.grid.integrate(_h1_density(u.grid, u.v, u.m, u.vr))
    if tails:
        perp2 = np.sum(u.v[[0, -1], :2] ** 2)
        e += np.pi * u.m * perp2
    return float(e)


def tension_field(u: EquivariantMap) -> np.ndarray:
    """W = v_r - (m/r) J^v R v."""
    return u.vr - (u.m / u.grid.r)[:, None] * cross_R(u.v)


def bogomolny_split(u: EquivariantMap) -> tuple[float, float]:
    W = tension_field(u)
    tension = float(np.pi * u.grid.integrate(np.sum(W**2, axis=1)))
    return tension, 4.0 * np.pi * u.m


# -- Sobolev diagnostics ----------------------------------------------------


def _same(u1: EquivariantMap, u2: EquivariantMap):
    if u1.m != u2.m:
        raise MapError(f"equivariance mismatch: {u1.m} vs {u2.m}")
    if not u1.grid.same_as(u2.grid):
        raise MapError("maps live on different grids")


def h1_seminorm(grid: RadialGrid, w: np.ndarray, m: int) -> float:
    """Dot-H^1 seminorm of the 2-D field exp(m theta R) w(r)."""
    return float(np.sqrt(2.0 * np.pi * grid.integrate(_h1_density(grid, w, m))))


def dist_h1(u1: EquivariantMap, u2: EquivariantMap) -> float:
    _same(u1, u2)
    return h1_seminorm(u1.grid, u1.v - u2.v, u1.m)


def laplacian_profile(grid: RadialGrid, v: np.ndarray, m: int) -> np.ndarray:
    """Radial part of the 2-D Laplacian: (H_m v1, H_m v2, H_0 v3)."""
    lap = grid.apply_hk(v, 0)
    lap[:, :2] -= m**2 * v[:, :2] / grid.r[:, None] ** 2
    return lap


def sobolev_norms(u: EquivariantMap) -> tuple[float, float, float]:
    g = u.grid
    lap = laplacian_profile(g, u.v, u.m)
    h1 = h1_seminorm(g, u.v, u.m)
    h2 = float(np.sqrt(2.0 * np.pi) * g.l2e(lap))
    # |grad Lap u|^2 reduces exactly to the H^1 density of the radial Laplacian
    h3 = h1_seminorm(g, lap, u.m)
    return h1, h2, h3


def stationarity_residual(u: EquivariantMap) -> float:
    """|| v x (v_rr + v_r/r + (m^2/r^2) R^2 v) ||_{L^2_e}."""
    lap = laplacian_profile(u.grid, u.v, u.m)
    return u.grid.l2e(np.cross(u.v, lap))


# -- profile files ----------------------------------------------------------


def _grid_header(grid: RadialGrid) -> str:
    md = grid.metadata()
    return " ".join(f"{k}={md[k]!r}" if isinstance(md[k], str) else f"{k}={md[k]:.17g}" for k in md)


def parse_header(line: str) -> dict:
    out = {}
    for tok in line.lstrip("#").split()[1:]:
        k, _, val = tok.partition("=")
        out[k] = val.strip("'\"")
    return out


def grid_from_header(meta: dict) -> RadialGrid:
    return build_grid(
        float(meta["r_min"]), float(meta["r_max"]), int(float(meta["n"])), meta["spacing"], int(float(meta.get("order", 6)))
    )


def save_profile(path, u: EquivariantMap) -> None:
    header = f"profile m={u.m} " + _grid_header(u.grid)
    data = np.column_stack([u.grid.r, u.v])
    np.savetxt(path, data, fmt="%.17g", header=header, comments="# ")


def load_profile(path) -> EquivariantMap:
    path = Path(path)
    with path.open() as fh:
        meta = parse_header(fh.readline())
    if "m" not in meta:
        raise MapError(f"{path}: missing profile header")
    grid = grid_from_header(meta)
    data = np.loadtxt(path, ndmin=2)
    if data.shape != (grid.n, 4) or not np.allclose(data[:, 0], grid.r, rtol=1e-13, atol=0):
        raise MapError(f"{path}: nodes do not match header grid")
    return EquivariantMap(int(meta["m"]), np.ascontiguousarray(data[:, 1:]), grid)
