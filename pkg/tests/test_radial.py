import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from smaplab.radial import (
    _D1,
    _D2,
    _stencil_matrix,
    GridError,
    NoAdmissibleSolution,
    RadialField,
    apply_l0,
    apply_n0,
    build_grid,
    central_matrix,
    deriv_r,
    h_profile,
    integrate_rdr,
    n0_h1,
    solve_l0,
)

FAST = settings(max_examples=25, deadline=None)


def test_grid_layout(grid):
    assert grid.n == 4096
    assert grid.r_min == pytest.approx(1e-4) and grid.r_max == pytest.approx(1e4)
    assert np.all(np.diff(grid.r) > 0)
    assert grid.order == 6


@pytest.mark.parametrize("kw", [dict(r_min=0.0), dict(r_min=2.0, r_max=1.0), dict(n=3), dict(spacing="cheb"), dict(order=5)])
def test_grid_rejects_bad_parameters(kw):
    with pytest.raises(GridError):
        build_grid(**kw)


@pytest.mark.parametrize("order", [2, 4, 6])
def test_stencils_are_exact_on_polynomials(order):
    n, h = 40, 0.1
    x = np.arange(n, dtype=float) * h
    D1 = _stencil_matrix(n, _D1[order], True) / h
    D2 = _stencil_matrix(n, _D2[order], False) / h**2
    for p in range(order + 1):
        f = x**p
        d1 = p * x ** (p - 1) if p >= 1 else 0 * x
        d2 = p * (p - 1) * x ** (p - 2) if p >= 2 else 0 * x
        assert np.allclose(D1 @ f, d1, atol=1e-7 * max(1.0, np.max(np.abs(d1))))
        assert np.allclose(D2 @ f, d2, atol=1e-6 * max(1.0, np.max(np.abs(d2))))


def test_dirichlet_second_difference_is_symmetric():
    for order in (2, 4, 6):
        D2 = central_matrix(50, order, True)
        assert abs(D2 - D2.T).max() == 0.0


@pytest.mark.parametrize("order,expected", [(2, 2), (4, 4), (6, 6)])
def test_derivative_convergence_order(order, expected):
    errs = []
    for n in (256, 512):
        g = build_grid(r_min=1e-2, r_max=1e2, n=n, order=order)
        f = np.exp(-(np.log(g.r) ** 2))
        exact = -2 * np.log(g.r) / g.r * f
        errs.append(np.max(np.abs(g.deriv(f) - exact)))
    assert np.log2(errs[0] / errs[1]) > expected - 0.3


def test_integrate_gaussian(grid):
    # the grid omits only the disc r < r_min, whose contribution is r_min^2 / 2
    assert grid.integrate(np.exp(-grid.r**2)) == pytest.approx(0.5 - grid.r_min**2 / 2, rel=1e-12)


def test_harmonic_profile_identities(grid):
    for m in (1, 2, 3):
        h1, h3 = h_profile(grid.r, m)
        assert np.allclose(h1**2 + h3**2, 1.0)
        # r h1_r = -m h1 h3
        assert np.allclose(grid.r * grid.deriv(h1), -m * h1 * h3, atol=1e-9)
        # m = 1 loses O(r_min^2) to the truncated disc and tail
        assert grid.h1e_dot(h1, m) ** 2 == pytest.approx(8 * m / 3, rel=1e-7)


def test_n0_h1_closed_form(grid):
    mask = (grid.r > 1e-3) & (grid.r < 1e3)
    for m in (1, 2, 3):
        h1, _ = h_profile(grid.r, m)
        numeric = apply_n0(RadialField(grid, h1), m).values
        exact = n0_h1(grid.r, m)
        assert np.max(np.abs(numeric - exact)[mask]) < 1e-7 * np.max(np.abs(exact))


def test_l0_annihilates_h1(grid):
    for m in (1, 2, 3):
        h1, _ = h_profile(grid.r, m)
        res = apply_l0(grid, h1, m)
        mask = (grid.r > 1e-3) & (grid.r < 1e3)
        assert np.max(np.abs(res[mask] * grid.r[mask] ** 2)) < 1e-8


def test_solve_l0_inverts_apply_l0(grid):
    m = 2
    h1, _ = h_profile(grid.r, m)
    f = np.exp(-np.log(grid.r / 1.3) ** 2) * grid.r**2 / (1 + grid.r**4)
    f = f - grid.inner_h1e(f, h1, m) / grid.h1e_dot(h1, m) ** 2 * h1
    g = apply_l0(grid, f, m)
    back = solve_l0(grid, g, m)
    assert grid.h1e(back - f, m) / grid.h1e(f, m) < 1e-6


def test_solve_l0_rejects_non_decaying_source(grid):
    m = 2
    h1, _ = h_profile(grid.r, m)
    with pytest.raises(NoAdmissibleSolution):
        solve_l0(grid, h1 / grid.r, m)


def test_field_wrappers_match_methods(small_grid):
    f = RadialField(small_grid, np.exp(-small_grid.r))
    assert integrate_rdr(f) == pytest.approx(small_grid.integrate(f.values))
    assert np.allclose(deriv_r(f).values, small_grid.deriv(f.values))


def test_nonfinite_input_rejected(small_grid):
    f = np.ones(small_grid.n)
    f[10] = np.nan
    with pytest.raises(GridError):
        small_grid.integrate(f)


@FAST
@given(a=st.floats(-3, 3), b=st.floats(-3, 3), c=st.floats(0.3, 3.0), w=st.floats(0.3, 1.0))
def test_integration_is_linear_and_tail_consistent(small_grid, a, b, c, w):
    g = small_grid
    f1 = np.exp(-np.log(g.r / c) ** 2 / w)
    f2 = g.r**2 * np.exp(-g.r)
    assert g.integrate(a * f1 + b * f2) == pytest.approx(a * g.integrate(f1) + b * g.integrate(f2), abs=1e-10)
    # tail(f)(r) = int_r^{r_n} f dr', so tail(f r) at the first node is the full integral
    assert g.tail(f1 * g.r)[0] == pytest.approx(g.integrate(f1), rel=1e-8)


@FAST
@given(c=st.floats(0.2, 5.0), w=st.floats(0.3, 1.2), k=st.integers(1, 4))
def test_hk_is_symmetric(small_grid, c, w, k):
    g = small_grid
    f = np.exp(-np.log(g.r / c) ** 2 / w)
    h = np.exp(-np.log(g.r * c) ** 2 / w)
    lhs = g.integrate(g.apply_hk(f, k) * h)
    rhs = g.integrate(f * g.apply_hk(h, k))
    assert lhs == pytest.approx(rhs, rel=1e-6, abs=1e-10)
