"""Coulomb frame along the profile and the gauge fields q, nu, W, p, N(q)."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numba as nb
import numpy as np

from .radial import RadialGrid, resolution_factor
from .sphere import EquivariantMap, K_HAT, cross_R, laplacian_profile, tension_field

CHART_TOL = 1e-3
N_FORM_RTOL = 1e-6
N_FORM_ATOL = 1e-12


class GaugeError(ArithmeticError):
    pass


@dataclass(frozen=True, eq=False)
class GaugeFrame:
    e_hat: np.ndarray
    f_hat: np.ndarray


@dataclass(frozen=True, eq=False)
class GaugeData:
    grid: RadialGrid
    m: int
    q: np.ndarray
    nu: np.ndarray
    W: np.ndarray
    conn: np.ndarray
    v3: np.ndarray
    p: np.ndarray | None = None


@nb.njit(cache=True)
def _transport(v, vx, vmid, vxmid, e_end, dx):
    """RK4 for de/dx = -(e . v_x) v from the outer node inward.

    Each step is re-projected onto the tangent plane and renormalised.
    """
    n = v.shape[0]
    e = np.empty((n, 3))
    e[n - 1] = e_end
    h = -dx
    for i in range(n - 2, -1, -1):
        y = e[i + 1]
        k1 = -(y[0] * vx[i + 1, 0] + y[1] * vx[i + 1, 1] + y[2] * vx[i + 1, 2]) * v[i + 1]
        y2 = y + 0.5 * h * k1
        k2 = -(y2[0] * vxmid[i, 0] + y2[1] * vxmid[i, 1] + y2[2] * vxmid[i, 2]) * vmid[i]
        y3 = y + 0.5 * h * k2
        k3 = -(y3[0] * vxmid[i, 0] + y3[1] * vxmid[i, 1] + y3[2] * vxmid[i, 2]) * vmid[i]
        y4 = y + h * k3
        k4 = -(y4[0] * vx[i, 0] + y4[1] * vx[i, 1] + y4[2] * vx[i, 2]) * v[i]
        y = y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        dot = y[0] * v[i, 0] + y[1] * v[i, 1] + y[2] * v[i, 2]
        y = y - dot * v[i]
        e[i] = y / np.sqrt(y[0] ** 2 + y[1] ** 2 + y[2] ** 2)
    return e


def _midpoints(grid: RadialGrid, v: np.ndarray):
    """Fourth-order cell-midpoint values of v and dv/dx."""
    dx = grid.dx
    vm = np.empty((grid.n - 1, 3))
    vxm = np.empty((grid.n - 1, 3))
    vm[1:-1] = (-v[:-3] + 9.0 * v[1:-2] + 9.0 * v[2:-1] - v[3:]) / 16.0
    vxm[1:-1] = (v[:-3] - 27.0 * v[1:-2] + 27.0 * v[2:-1] - v[3:]) / (24.0 * dx)
    vm[0] = (5.0 * v[0] + 15.0 * v[1] - 5.0 * v[2] + v[3]) / 16.0
    vm[-1] = (5.0 * v[-1] + 15.0 * v[-2] - 5.0 * v[-3] + v[-4]) / 16.0
    vxm[0] = (-23.0 * v[0] + 21.0 * v[1] + 3.0 * v[2] - v[3]) / (24.0 * dx)
    vxm[-1] = (23.0 * v[-1] - 21.0 * v[-2] - 3.0 * v[-3] + v[-4]) / (24.0 * dx)
    vm /= np.linalg.norm(vm, axis=1, keepdims=True)
    vxm -= np.sum(vxm * vm, axis=1, keepdims=True) * vm
    return vm, vxm


def _geodesic_transport(e: np.ndarray, vend: np.ndarray) -> np.ndarray:
    """Parallel transport of e from the nearest pole to vend along the geodesic."""
    pole = np.array([0.0, 0.0, 1.0 if vend[2] >= 0 else -1.0])
    e = e - np.dot(e, pole) * pole
    axis = np.cross(pole, vend)
    sin_t = np.linalg.norm(axis)
    if sin_t < 1e-300:
        return e - np.dot(e, vend) * vend
    axis /= sin_t
    cos_t = np.dot(pole, vend)
    return e * cos_t + np.cross(axis, e) * sin_t + axis * np.dot(axis, e) * (1.0 - cos_t)


def build_frame_profile(
    grid: RadialGrid, v: np.ndarray, e_inf: np.ndarray = np.array([1.0, 0.0, 0.0]), vx: np.ndarray | None = None
) -> GaugeFrame:
    """Parallel frame along a profile with e_hat -> e_inf at infinity.

    The outer value is e_inf carried from the pole to v(r_n) along the
    connecting geodesic, which is exact when the tail stays on one great
    circle (every harmonic map does).
    """
    vx = grid.D1x @ v if vx is None else vx
    vend = v[-1]
    e_end = _geodesic_transport(e_inf, vend)
    norm = np.linalg.norm(e_end)
    if norm < 0.5:
        raise GaugeError("outer boundary not in gauge chart")
    vm, vxm = _midpoints(grid, v)
    e = _transport(
        np.ascontiguousarray(v), np.ascontiguousarray(vx), vm, vxm, e_end / norm, grid.dx
    )
    return GaugeFrame(e, np.cross(v, e))


def build_frame(u: EquivariantMap, chart_tol: float = CHART_TOL) -> GaugeFrame:
    dev = np.linalg.norm(u.v[-1] - K_HAT)
    if dev > chart_tol:
        raise GaugeError(f"outer boundary not in gauge chart (|v(r_n)-k|={dev:.2e})")
    return build_frame_profile(u.grid, u.v, vx=u.vr * u.grid.jac[:, None])


def frame_residual(u: EquivariantMap, frame: GaugeFrame) -> float:
    """|| d_r e + (e . v_r) v ||_{L^2_e}."""
    er = u.grid.deriv(frame.e_hat)
    res = er + np.sum(frame.e_hat * u.vr, axis=1)[:, None] * u.v
    return u.grid.l2e(res)


def complex_coords(a: np.ndarray, frame: GaugeFrame) -> np.ndarray:
    """a . (e + i J e) for tangent vectors a."""
    return np.sum(a * frame.e_hat, axis=1) + 1j * np.sum(a * frame.f_hat, axis=1)


def nonlocal_n_direct(grid: RadialGrid, q, nu, v3, m: int) -> np.ndarray:
    """Re int_r^inf (conj q + (m/r) conj nu)(q_r + (1 - m v3) q / r) dr."""
    r = grid.r
    integrand = np.real((np.conj(q) + (m / r) * np.conj(nu)) * (grid.deriv(q) + (1.0 - m * v3) * q / r))
    return grid.tail(integrand)


def nonlocal_n_potential(grid: RadialGrid, q, nu, v3, m: int) -> np.ndarray:
    """-V + int_r^inf (2/r') V dr' with V = |q|^2/2 + Re((m/r) conj(nu) q)."""
    r = grid.r
    V = 0.5 * np.abs(q) ** 2 + np.real((m / r) * np.conj(nu) * q)
    return -V + grid.tail(2.0 * V / r)


def form_tolerance(grid: RadialGrid) -> float:
    return N_FORM_RTOL * resolution_factor(grid)


def nonlocal_n(
    grid: RadialGrid, q, nu, v3, m: int, rtol: float | None = None, atol: float = N_FORM_ATOL
) -> np.ndarray:
    """N(q) in the potential form, cross-checked against the direct integral."""
    rtol = form_tolerance(grid) if rtol is None else rtol
    a = nonlocal_n_potential(grid, q, nu, v3, m)
    b = nonlocal_n_direct(grid, q, nu, v3, m)
    scale = max(grid.l2e(a), grid.l2e(b))
    if grid.l2e(a - b) > max(rtol * scale, atol):
        raise GaugeError(
            "integration-by-parts identity violated: "
            f"relative discrepancy {grid.l2e(a - b) / max(scale, atol):.2e}"
        )
    return a


def gauge_data(u: EquivariantMap, frame: GaugeFrame | None = None, with_p: bool = False, check_n: bool = True) -> GaugeData:
    frame = frame or build_frame(u)
    W = tension_field(u)
    q = complex_coords(W, frame)
    nu = complex_coords(cross_R(u.v), frame)
    v3 = u.v[:, 2]
    if check_n:
        conn = nonlocal_n(u.grid, q, nu, v3, u.m)
    else:
        conn = nonlocal_n_potential(u.grid, q, nu, v3, u.m)
    p = None
    if with_p:
        vt = np.cross(u.v, laplacian_profile(u.grid, u.v, u.m))
        p = complex_coords(vt, frame)
    return GaugeData(u.grid, u.m, q, nu, W, conn, v3, p)


def p_from_q(gd: GaugeData) -> np.ndarray:
    """p = i (q_r + q/r - (m/r) v3 q)."""
    r = gd.grid.r
    return 1j * (gd.grid.deriv(gd.q) + gd.q / r - (gd.m / r) * gd.v3 * gd.q)


def connection_from_p(gd: GaugeData, p: np.ndarray) -> np.ndarray:
    """Temporal connection from its radial derivative Im[conj(p)(q + (m/r) nu)]."""
    r = gd.grid.r
    a_r = np.imag(np.conj(p) * (gd.q + (gd.m / r) * gd.nu))
    return -gd.grid.tail(a_r)


def save_gauge(path, gd: GaugeData) -> None:
    from .sphere import _grid_header

    header = f"gauge m={gd.m} " + _grid_header(gd.grid)
    cols = np.column_stack([gd.grid.r, gd.q.real, gd.q.imag, gd.nu.real, gd.nu.imag, gd.conn])
    np.savetxt(Path(path), cols, fmt="%.17g", header=header, comments="# ")
