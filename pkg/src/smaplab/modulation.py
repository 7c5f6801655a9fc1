"""Decomposition about a scaled and rotated harmonic profile, the orthogonality
map F and its Newton solve, and the closest point on the harmonic family.

All quantities that depend on (s, alpha) are evaluated on the grid of u with
the harmonic profile taken analytically at r/s.  This uses the dilation
invariance of the dot-H^1_e pairing and avoids resampling the data.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize_scalar

from .radial import RadialGrid, h_profile, resolution_factor
from .sphere import EquivariantMap, energy, rotate

ADMISSION_DELTA = 0.3
NEWTON_TOL = 1e-10
NEWTON_MAXIT = 50
FD_STEP = 1e-6
ROUTE_TOL = 1e-8


class ModulationError(ArithmeticError):
    pass


@dataclass(frozen=True)
class ModulationState:
    s: float = 1.0
    alpha: float = 0.0

    def __post_init__(self):
        if not (np.isfinite(self.s) and self.s > 0):
            raise ModulationError(f"scale must be positive, got {self.s}")

    def wrapped(self) -> float:
        return float(np.mod(self.alpha, 2.0 * np.pi))


@dataclass(frozen=True, eq=False)
class Decomposition:
    grid: RadialGrid
    m: int
    z: np.ndarray
    gamma: np.ndarray
    xi: np.ndarray


def wrap_angle(a: float) -> float:
    """Representative of a in (-pi, pi]."""
    return float(-np.mod(-a + np.pi, 2.0 * np.pi) + np.pi)


def deficit(u: EquivariantMap) -> float:
    """delta = sqrt(E(u) - 4 pi m), clipped at zero."""
    return float(np.sqrt(max(energy(u) - 4.0 * np.pi * u.m, 0.0)))


def basis_at(r: np.ndarray, m: int, s: float = 1.0):
    """(j, J^h j, h) evaluated at r/s."""
    h1, h3 = h_profile(r, m, s)
    zero = np.zeros_like(h1)
    return (
        np.stack([zero, zero + 1.0, zero], axis=-1),
        np.stack([-h3, zero, h1], axis=-1),
        np.stack([h1, zero, h3], axis=-1),
    )


def _coords(w: np.ndarray, r: np.ndarray, m: int, s: float):
    j, Jj, h = basis_at(r, m, s)
    return np.sum(w * j, axis=1), np.sum(w * Jj, axis=1), np.sum(w * h, axis=1)


def decompose(u: EquivariantMap, state: ModulationState) -> Decomposition:
    """z, gamma with exp(-alpha R) v(s r) = z1 j + z2 J^h j + (1 + gamma) h."""
    r = u.grid.r
    vs = u.v if state.s == 1.0 else u.sample(state.s * r)
    w = rotate(vs, -state.alpha)
    z1, z2, c = _coords(w, r, u.m, 1.0)
    j, Jj, h = basis_at(r, u.m)
    gamma = c - 1.0
    xi = z1[:, None] * j + z2[:, None] * Jj + gamma[:, None] * h
    return Decomposition(u.grid, u.m, z1 + 1j * z2, gamma, xi)


def h1_norm2(grid: RadialGrid, m: int) -> float:
    """||h1||^2 in dot-H^1_e on the grid."""
    h1, _ = h_profile(grid.r, m)
    return float(np.real(grid.inner_h1e(h1, h1, m)))


def _scaled_coords(u: EquivariantMap, s: float, alpha: float):
    """z(r/s) as a function on u's grid: exp(-alpha R) v(r) against the basis at r/s."""
    w = rotate(u.v, -alpha)
    z1, z2, _ = _coords(w, u.grid.r, u.m, s)
    return z1, z2


def f_map_routes(u: EquivariantMap, state: ModulationState):
    """F by the H^1_e pairing and by the N0 h1 integral; both as length-2 arrays."""
    g, m, s = u.grid, u.m, state.s
    r = g.r
    h1s, _ = h_profile(r, m, s)
    z1, z2 = _scaled_coords(u, s, state.alpha)
    a = np.array([np.real(g.inner_h1e(h1s, z, m)) for z in (z1, z2)])
    kernel = 2.0 * m**2 * h1s**3 / r**2
    b = np.array([g.integrate(z * kernel) for z in (z1, z2)])
    return a, b


def f_map(u: EquivariantMap, state: ModulationState, check: bool = True, tol: float | None = None) -> np.ndarray:
    a, b = f_map_routes(u, state)
    tol = ROUTE_TOL * resolution_factor(u.grid) if tol is None else tol
    if check:
        scale = h1_norm2(u.grid, u.m)
        if np.max(np.abs(a - b)) > tol * scale:
            raise ModulationError(
                f"discretization error: F routes disagree by {np.max(np.abs(a - b)):.2e}"
            )
    return b


def f_jacobian(u: EquivariantMap, state: ModulationState, step: float = FD_STEP) -> np.ndarray:
    """Central differences of F; columns are d/ds and d/dalpha."""
    s, al = state.s, state.alpha
    ds = step * s
    cols = [
        (f_map(u, ModulationState(s + ds, al), check=False) - f_map(u, ModulationState(s - ds, al), check=False)) / (2 * ds),
        (f_map(u, ModulationState(s, al + step), check=False) - f_map(u, ModulationState(s, al - step), check=False)) / (2 * step),
    ]
    return np.column_stack(cols)


@dataclass
class SolveReport:
    state: ModulationState
    residual: float
    iterations: int
    history: list = field(default_factory=list)
    proximity: float | None = None


def solve_scaling_pair(
    u: EquivariantMap,
    init: ModulationState | None = None,
    tol: float = NEWTON_TOL,
    maxit: int = NEWTON_MAXIT,
    admission: float | None = ADMISSION_DELTA,
    report: bool = False,
):
    """Newton iteration for F(u, s, alpha) = 0 with a finite-difference Jacobian."""
    delta = deficit(u)
    if admission is not None and delta > admission:
        raise ModulationError(f"energy deficit {delta:.3g} exceeds admission threshold {admission}")
    star = None
    if init is None:
        star, _ = closest_harmonic(u)
        init = star
    s, al = init.s, init.alpha
    hist = []
    F = f_map(u, ModulationState(s, al), check=False)
    res = float(np.max(np.abs(F)))
    hist.append(res)
    it = 0
    while res > tol:
        if it >= maxit:
            raise ModulationError(f"Newton did not converge in {maxit} iterations (|F|={res:.3e})")
        Jm = f_jacobian(u, ModulationState(s, al))
        ds, dal = np.linalg.solve(Jm, -F)
        s, al = s + ds, al + dal
        if not s > 0:
            raise ModulationError("scale drifted to a non-positive value")
        F = f_map(u, ModulationState(s, al), check=False)
        res = float(np.max(np.abs(F)))
        hist.append(res)
        it += 1
    state = ModulationState(float(s), float(al))
    f_map(u, state)
    if not report:
        return state
    prox = None
    if delta > 0:
        star = star or closest_harmonic(u)[0]
        prox = (abs(state.s / star.s - 1.0) + abs(wrap_angle(state.alpha - star.alpha))) / delta
    return SolveReport(state, res, it, hist, prox)


# -- closest harmonic map ----------------------------------------------------


def _harmonic_pieces(u: EquivariantMap, s: float):
    """Dot-H^1 pairings of v with Q_s: (P1, P2, P3) so <u, e^{aR}Q_s> = cos a P1 + sin a P2 + P3."""
    g, m = u.grid, u.m
    r = g.r
    h1, h3 = h_profile(r, m, s)
    # r d/dr h(r/s) = m h1 J^h j at r/s
    a_r = -(m / r) * h1 * h3
    c_r = (m / r) * h1 * h1
    vr = u.vr
    w = m**2 / r**2
    P1 = g.integrate(vr[:, 0] * a_r + w * u.v[:, 0] * h1)
    P2 = g.integrate(vr[:, 1] * a_r + w * u.v[:, 1] * h1)
    P3 = g.integrate(vr[:, 2] * c_r)
    return 2.0 * np.pi * np.array([P1, P2, P3])


def _best_alpha(P) -> tuple[float, float]:
    amp = float(np.hypot(P[0], P[1]))
    return float(np.arctan2(P[1], P[0])), amp + float(P[2])


def harmonic_distance(u: EquivariantMap, state: ModulationState) -> float:
    from .sphere import harmonic_profile, h1_seminorm

    Q = harmonic_profile(u.grid.r, u.m, state.s, state.alpha)
    return h1_seminorm(u.grid, u.v - Q, u.m)


def closest_harmonic(u: EquivariantMap, n_scan: int = 81, flat_tol: float = 0.5):
    """(s*, alpha*) minimising ||u - exp(alpha R) Q(./s)||_{dot H^1} and the distance.

    For fixed s the optimal angle is explicit, so only log s is searched:
    a coarse scan then bounded Brent refinement.
    """
    g, m = u.grid, u.m
    qnorm2 = 8.0 * np.pi * m
    lo, hi = np.log(g.r_min) + 3.0, np.log(g.r_max) - 3.0
    ls = np.linspace(lo, hi, n_scan)
    vals = np.array([_best_alpha(_harmonic_pieces(u, np.exp(t)))[1] for t in ls])
    k = int(np.argmax(vals))
    if vals[k] < flat_tol * qnorm2:
        raise ModulationError("outside tubular neighborhood: no harmonic map correlates with u")
    a = ls[max(k - 1, 0)]
    b = ls[min(k + 1, n_scan - 1)]
    opt = minimize_scalar(
        lambda t: -_best_alpha(_harmonic_pieces(u, np.exp(t)))[1],
        bounds=(a, b),
        method="bounded",
        options={"xatol": 1e-11},
    )
    s_star = float(np.exp(opt.x))
    al_star, _ = _best_alpha(_harmonic_pieces(u, s_star))
    state = ModulationState(s_star, al_star)
    return state, harmonic_distance(u, state)
