"""Radial grids on the half-line, quadrature for the measure r dr, and the
radial operators used by the equivariant reduction.

Every grid is uniform in a computational coordinate ``x``: ``x = log r`` for
log spacing and ``x = r`` for uniform spacing.  Derivatives are finite
differences in ``x`` mapped back through the Jacobian ``dr/dx``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy import sparse

LOG = "log"
UNIFORM = "uniform"

DEFAULT_R_MIN = 1e-4
DEFAULT_R_MAX = 1e4
DEFAULT_N = 4096


class GridError(ValueError):
    pass


# finite-difference stencils in a uniform coordinate (coefficients, offsets),
# interior rows first then the one-sided boundary rows
_D1 = {
    2: {
        "interior": (np.array([-1.0, 0.0, 1.0]) / 2.0, np.arange(-1, 2)),
        "edge": [np.array([-3.0, 4.0, -1.0]) / 2.0],
    },
    4: {
        "interior": (np.array([1.0, -8.0, 0.0, 8.0, -1.0]) / 12.0, np.arange(-2, 3)),
        "edge": [
            np.array([-25.0, 48.0, -36.0, 16.0, -3.0]) / 12.0,
            np.array([-3.0, -10.0, 18.0, -6.0, 1.0]) / 12.0,
        ],
    },
}
_D2 = {
    2: {
        "interior": (np.array([1.0, -2.0, 1.0]), np.arange(-1, 2)),
        "edge": [np.array([2.0, -5.0, 4.0, -1.0])],
    },
    4: {
        "interior": (np.array([-1.0, 16.0, -30.0, 16.0, -1.0]) / 12.0, np.arange(-2, 3)),
        "edge": [
            np.array([45.0, -154.0, 214.0, -156.0, 61.0, -10.0]) / 12.0,
            np.array([10.0, -15.0, -4.0, 14.0, -6.0, 1.0]) / 12.0,
        ],
    },
}


def _one_sided(row: int, npts: int, deriv: int) -> np.ndarray:
    """Weights on nodes 0..npts-1 for the deriv-th derivative at node ``row``."""
    k = np.arange(npts) - row
    A = np.vander(k, npts, increasing=True).T.astype(float)
    rhs = np.zeros(npts)
    rhs[deriv] = float(np.prod(np.arange(1, deriv + 1)))
    return np.linalg.solve(A, rhs)


_D1[6] = {
    "interior": (np.array([-1.0, 9.0, -45.0, 0.0, 45.0, -9.0, 1.0]) / 60.0, np.arange(-3, 4)),
    "edge": [_one_sided(i, 7, 1) for i in range(3)],
}
_D2[6] = {
    "interior": (np.array([2.0, -27.0, 270.0, -490.0, 270.0, -27.0, 2.0]) / 180.0, np.arange(-3, 4)),
    "edge": [_one_sided(i, 8, 2) for i in range(3)],
}


def _stencil_matrix(n: int, table: dict, odd: bool) -> sparse.csr_matrix:
    coef, offs = table["interior"]
    half = len(table["edge"])
    rows, cols, vals = [], [], []
    for c, o in zip(coef, offs):
        if c == 0.0:
            continue
        idx = np.arange(half, n - half)
        rows.append(idx)
        cols.append(idx + o)
        vals.append(np.full(idx.size, c))
    sign = -1.0 if odd else 1.0
    for i, edge in enumerate(table["edge"]):
        k = np.arange(edge.size)
        rows += [np.full(edge.size, i), np.full(edge.size, n - 1 - i)]
        # every one-sided row is anchored at the boundary node
        cols += [k, n - 1 - k]
        vals += [edge, sign * edge]
    return sparse.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)
    )


def central_matrix(n: int, order: int, second: bool) -> sparse.csr_matrix:
    """Interior central stencil with homogeneous Dirichlet data beyond both ends.

    Symmetric for the second derivative, which is what makes Crank-Nicolson
    norm-preserving in the weighted inner product.
    """
    table = (_D2 if second else _D1)[order]
    coef, offs = table["interior"]
    return sparse.diags(
        [np.full(n - abs(o), c) for c, o in zip(coef, offs)], list(offs), shape=(n, n), format="csr"
    )


@dataclass(frozen=True, eq=False)
class RadialGrid:
    """Nodes r_1 < ... < r_n on (0, inf) with weights for ``int f(r) r dr``."""

    nodes: np.ndarray
    weights: np.ndarray
    spacing: str
    dx: float
    order: int = 6
    x: np.ndarray = field(repr=False, default=None)

    @property
    def r(self) -> np.ndarray:
        return self.nodes

    @property
    def n(self) -> int:
        return self.nodes.size

    @property
    def r_min(self) -> float:
        return float(self.nodes[0])

    @property
    def r_max(self) -> float:
        return float(self.nodes[-1])

    @cached_property
    def jac(self) -> np.ndarray:
        # dr/dx; d^2r/dx^2 equals jac for log spacing and vanishes for uniform
        return self.nodes.copy() if self.spacing == LOG else np.ones(self.n)

    @cached_property
    def jac2(self) -> np.ndarray:
        return self.nodes.copy() if self.spacing == LOG else np.zeros(self.n)

    @cached_property
    def D1x(self) -> sparse.csr_matrix:
        return _stencil_matrix(self.n, _D1[self.order], odd=True) / self.dx

    @cached_property
    def D2x(self) -> sparse.csr_matrix:
        return _stencil_matrix(self.n, _D2[self.order], odd=False) / self.dx**2

    @cached_property
    def Dr(self) -> sparse.csr_matrix:
        return sparse.diags(1.0 / self.jac) @ self.D1x

    def metadata(self) -> dict:
        return {
            "r_min": self.r_min,
            "r_max": self.r_max,
            "n": self.n,
            "spacing": self.spacing,
            "order": self.order,
        }

    def same_as(self, other: "RadialGrid") -> bool:
        return self is other or (
            self.n == other.n
            and self.spacing == other.spacing
            and np.array_equal(self.nodes, other.nodes)
        )

    # -- calculus on raw arrays (leading axis = nodes) --------------------

    def _bcast(self, a: np.ndarray, f: np.ndarray) -> np.ndarray:
        return a.reshape((-1,) + (1,) * (f.ndim - 1))

    def integrate(self, f: np.ndarray):
        _check_finite(f)
        return np.tensordot(self.weights, f, axes=(0, 0))

    def deriv(self, f: np.ndarray) -> np.ndarray:
        return self._bcast(1.0 / self.jac, f) * (self.D1x @ f)

    def deriv2(self, f: np.ndarray) -> np.ndarray:
        fx = self.D1x @ f
        fxx = self.D2x @ f
        J = self._bcast(self.jac, f)
        return (fxx - self._bcast(self.jac2 / self.jac, f) * fx) / J**2

    def tail(self, f: np.ndarray) -> np.ndarray:
        """g(r_i) = int_{r_i}^{r_n} f dr, fourth-order cumulative quadrature."""
        g = f * self._bcast(self.jac, f)
        n = self.n
        pieces = np.empty((n - 1,) + f.shape[1:], dtype=np.result_type(f, float))
        # cubic-interpolant integral over each cell
        pieces[1:-1] = (-g[:-3] + 13.0 * g[1:-2] + 13.0 * g[2:-1] - g[3:]) / 24.0
        pieces[0] = (9.0 * g[0] + 19.0 * g[1] - 5.0 * g[2] + g[3]) / 24.0
        pieces[-1] = (g[-4] - 5.0 * g[-3] + 19.0 * g[-2] + 9.0 * g[-1]) / 24.0
        out = np.zeros_like(pieces, shape=(n,) + f.shape[1:])
        out[:-1] = np.cumsum(pieces[::-1], axis=0)[::-1] * self.dx
        return out

    def l2e(self, f: np.ndarray) -> float:
        a2 = np.abs(f) ** 2
        if a2.ndim > 1:
            a2 = a2.sum(axis=1)
        return float(np.sqrt(self.integrate(a2)))

    def lpe(self, f: np.ndarray, p: float) -> float:
        a = np.abs(f) if f.ndim == 1 else np.linalg.norm(f, axis=1)
        return float(np.real(self.integrate(a**p)) ** (1.0 / p))

    def inner_h1e(self, f: np.ndarray, g: np.ndarray, m: int):
        fr, gr = self.deriv(f), self.deriv(g)
        integrand = fr * np.conj(gr) + (m**2 / self.nodes**2) * f * np.conj(g)
        return self.integrate(integrand)

    def h1e_dot(self, f: np.ndarray, m: int) -> float:
        return float(np.sqrt(max(np.real(self.inner_h1e(f, f, m)), 0.0)))

    def h1e(self, f: np.ndarray, m: int) -> float:
        return float(np.hypot(self.h1e_dot(f, m), self.l2e(f)))

    def apply_hk(self, f: np.ndarray, k: int) -> np.ndarray:
        r = self._bcast(self.nodes, f)
        return self.deriv2(f) + self.deriv(f) / r - (k**2) * f / r**2

    def hk_matrix(self, k: int, dirichlet: bool = False) -> sparse.csr_matrix:
        """Sparse H_k; with ``dirichlet`` the symmetric central stencil is used."""
        if dirichlet:
            D1 = central_matrix(self.n, self.order, False) / self.dx
            D2 = central_matrix(self.n, self.order, True) / self.dx**2
        else:
            D1, D2 = self.D1x, self.D2x
        J = self.jac
        r = self.nodes
        return (
            sparse.diags(1.0 / J**2) @ D2
            + sparse.diags((J / r - self.jac2 / J) / J**2) @ D1
            - sparse.diags(k**2 / r**2)
        ).tocsr()


@dataclass(frozen=True, eq=False)
class RadialField:
    grid: RadialGrid
    values: np.ndarray

    def __post_init__(self):
        if self.values.shape[0] != self.grid.n:
            raise GridError("field length does not match grid")
        _check_finite(self.values)


def _check_finite(f):
    if not np.all(np.isfinite(f)):
        raise GridError("non-finite values in radial field")


# log spacing of the default grid: 4096 nodes on [1e-4, 1e4]
REF_DX = float(np.log(1e8) / 4095)


def resolution_factor(grid: RadialGrid) -> float:
    """(dx / REF_DX)^order on grids coarser than the default, 1 otherwise.

    Runtime consistency guards multiply their tolerances by this so that
    they flag bugs rather than truncation on coarse refinement rungs.
    """
    return max(1.0, (grid.dx / REF_DX) ** grid.order)


def build_grid(
    r_min: float = DEFAULT_R_MIN,
    r_max: float = DEFAULT_R_MAX,
    n: int = DEFAULT_N,
    spacing: str = LOG,
    order: int = 6,
) -> RadialGrid:
    if not (r_min > 0 and r_max > 0):
        raise GridError("radii must be positive")
    if r_min >= r_max:
        raise GridError(f"r_min={r_min} must be below r_max={r_max}")
    if n < 16:
        raise GridError(f"need at least 16 nodes, got {n}")
    if order not in _D1:
        raise GridError(f"unsupported difference order {order}")
    if spacing == LOG:
        x = np.linspace(np.log(r_min), np.log(r_max), n)
        nodes = np.exp(x)
        nodes[0], nodes[-1] = r_min, r_max
        jac = nodes
    elif spacing == UNIFORM:
        x = np.linspace(r_min, r_max, n)
        nodes = x.copy()
        jac = np.ones(n)
    else:
        raise GridError(f"unknown spacing {spacing!r}")
    dx = float(x[1] - x[0])
    w = dx * nodes * jac
    w[0] *= 0.5
    w[-1] *= 0.5
    return RadialGrid(nodes=nodes, weights=w, spacing=spacing, dx=dx, order=order, x=x)


# -- module-level operations ---------------------------------------------------


def integrate_rdr(f: RadialField):
    return f.grid.integrate(f.values)


def deriv_r(f: RadialField) -> RadialField:
    return RadialField(f.grid, f.grid.deriv(f.values))


def tail_integral(f: RadialField) -> RadialField:
    return RadialField(f.grid, f.grid.tail(f.values))


def inner_h1e(f: RadialField, g: RadialField, m: int):
    if not f.grid.same_as(g.grid):
        raise GridError("fields live on different grids")
    return f.grid.inner_h1e(f.values, g.values, m)


def apply_hk(f: RadialField, k: int) -> RadialField:
    return RadialField(f.grid, f.grid.apply_hk(f.values, k))


def apply_n0(f: RadialField, m: int) -> RadialField:
    return RadialField(f.grid, -f.grid.apply_hk(f.values, m))


# -- harmonic profile and the operator L0 = d/dr + (m/r) h3 ------------------


def h_profile(r: np.ndarray, m: int, s: float = 1.0):
    """(h1, h3) of the degree-m harmonic profile evaluated at r/s."""
    y = m * np.log(np.asarray(r) / s)
    return 1.0 / np.cosh(y), np.tanh(y)


def n0_h1(r: np.ndarray, m: int) -> np.ndarray:
    """Closed form of N0 h1 = -H_m h1 = 2 m^2 h1^3 / r^2."""
    h1, _ = h_profile(r, m)
    return 2.0 * m**2 * h1**3 / r**2


def apply_l0(grid: RadialGrid, f: np.ndarray, m: int) -> np.ndarray:
    _, h3 = h_profile(grid.r, m)
    return grid.deriv(f) + (m / grid.r) * h3 * f


class NoAdmissibleSolution(ArithmeticError):
    pass


def solve_l0(grid: RadialGrid, g: np.ndarray, m: int, tail_atol: float = 1e-6) -> np.ndarray:
    """Solve L0 z = g with <z, h1>_{H1e} = 0.

    z = h1 (c - int_r^inf g/h1); the kernel of L0 is span{h1} and c removes it.
    A source tail c h1/r only adds c h1 log(r_n/r), so it is rejected when |c| > tail_atol.
    """
    g = np.asarray(g)
    _check_finite(g)
    r = grid.r
    h1, _ = h_profile(r, m)
    ratio = g / h1
    scale = np.abs(ratio * grid.jac)
    if scale.max() > 0 and scale[-1] > 1e-2 * scale.max() and abs(ratio[-1]) * r[-1] > tail_atol:
        raise NoAdmissibleSolution("no admissible solution: source does not decay at the outer boundary")
    phi = grid.tail(ratio)
    part = -h1 * phi
    c = grid.inner_h1e(part, h1, m) / grid.inner_h1e(h1, h1, m)
    return part - c * h1
