import numpy as np
import pytest

import fpk
from fpk.coeffs import CoefficientField, apply_L_batch, build_field
from fpk.grids import GridSpec
from fpk.lyapunov import (
    LV,
    LV_batch,
    LyapunovFn,
    check_H2,
    check_conservative_sprin,
    check_dim2,
    check_invariant_sprin,
    check_lyapunov,
    g_half_log_outer,
    g_log_outer,
    g_quad,
    v_log1p,
)

from conftest import fd_gradient, fd_hessian


GRID = GridSpec(n0=1, r_max=100.0, seed=0)


def test_lv_trace_term_at_origin(ou_field):
    # at y = 0 only the trace term survives: LV(0) = c * d for A(0) = c I
    assert LV(ou_field, [0.0, 0.0]) == pytest.approx(4.0, abs=1e-15)


def test_lv_ou_closed_form(ou_field):
    # trace(2I) = 2d: LV = 2d/(1+r^2) - 4 r^2/(1+r^2)^2 - 2 r^2/(1+r^2)
    for r in (0.5, 1.0, 2.0, 7.0):
        y = np.array([r, 0.0])
        w = 1.0 + r * r
        want = 4.0 / w - 4.0 * r * r / (w * w) - 2.0 * r * r / w
        assert LV(ou_field, y) == pytest.approx(want, rel=1e-14)
    assert LV(ou_field, [1.0, 0.0]) == pytest.approx(0.0, abs=1e-15)


def test_lv_two_routes_agree(ou_field, bm_field, dim2_field, cubic_field):
    rng = np.random.default_rng(21)
    v = v_log1p()
    for field in (ou_field, bm_field, dim2_field, cubic_field):
        pts = rng.uniform(-3, 3, size=(100, 2))
        formula = LV_batch(field, pts)
        generic = apply_L_batch(field, v, pts)
        assert np.max(np.abs(formula - generic)) <= 1e-12 * max(1.0, np.max(np.abs(formula)))


def test_lv_matches_finite_differences(dim2_field):
    rng = np.random.default_rng(3)
    v = v_log1p()
    for _ in range(100):
        y = rng.uniform(-2, 2, size=2)
        a = dim2_field.A(y)
        g = dim2_field.G(y)
        h = 1e-4
        hess = fd_hessian(lambda p: v.value(p), y, h)
        grad = fd_gradient(lambda p: v.value(p), y, h)
        want = 0.5 * np.trace(a @ hess) + g @ grad
        assert LV(dim2_field, y) == pytest.approx(want, rel=1e-6, abs=1e-8)


@pytest.mark.parametrize("fn", [v_log1p(), g_log_outer(2), g_half_log_outer(2), g_quad()])
def test_lyapunov_fn_derivatives_match_fd(fn):
    rng = np.random.default_rng(17)
    h = 1e-5
    checked = 0
    while checked < 100:
        y = rng.uniform(-4, 4, size=2)
        r = np.linalg.norm(y)
        if fn.nondiff_radius is not None and abs(r - fn.nondiff_radius) < 0.05:
            continue  # derivative formulas hold away from the corner sphere
        grad = fn.gradient(y)
        want = fd_gradient(lambda p: float(fn.value(p)), y, h)
        assert np.allclose(grad, want, rtol=1e-6, atol=1e-6)
        hess = fn.hessian(y)
        want_h = fd_hessian(lambda p: float(fn.value(p)), y, 1e-4)
        assert np.allclose(hess, want_h, rtol=1e-5, atol=1e-5)
        checked += 1


@pytest.mark.parametrize("fn", [v_log1p(), g_log_outer(3), g_half_log_outer(3), g_quad()])
def test_lyapunov_fns_are_coercive(fn):
    radii = np.array([10.0, 100.0, 1e4, 1e8])
    vals = fn.value(np.stack([radii, np.zeros_like(radii)], axis=1))
    assert np.all(np.diff(vals) > 0)
    assert vals[-1] > fn.value(np.zeros(2))


def test_lyapunov_fn_closed_forms():
    y = np.array([3.0, 4.0])  # r = 5
    assert v_log1p().value(y) == pytest.approx(np.log(26.0), rel=1e-15)
    assert g_log_outer(2).value(y) == pytest.approx(np.log(25.0) + 2.0, rel=1e-15)
    assert g_log_outer(7).value(y) == pytest.approx(np.log(49.0) + 2.0, rel=1e-15)
    assert g_half_log_outer(2).value(y) == pytest.approx(0.5 * np.log(25.0) + 1.0, rel=1e-15)
    assert g_quad().value(y) == pytest.approx(12.5, rel=1e-15)
    with pytest.raises(ValueError):
        LyapunovFn("nope")


def test_h2_bm_minimal_k(bm_field):
    rep = check_H2(bm_field, GRID)
    assert rep.passed and not rep.divergent
    assert rep.feasible_constant == pytest.approx(1.0, rel=1e-12)


def test_h2_ou_passes(ou_field):
    rep = check_H2(ou_field, GRID)
    assert rep.passed and not rep.divergent
    assert rep.feasible_constant == pytest.approx(2.0, rel=1e-12)


def test_h2_cubic_divergence_flag(cubic_field):
    # drift term <G, x> = x1^4 + x2^4 outgrows the log-quadratic envelope
    rep = check_H2(cubic_field, GridSpec(n0=1, r_max=10.0, seed=0))
    assert rep.divergent and not rep.passed
    shells = rep.shell_radii
    consts = rep.shell_constants
    for r in (2.0, 4.0, 6.0, 8.0, 10.0):
        k = int(np.argmin(np.abs(shells - r)))
        # per-shell minimal K tracks r^4 directions against r^2 log growth
        assert consts[k] >= 0.4 * shells[k] ** 4 / (1.0 + shells[k] ** 2 * np.log1p(shells[k] ** 2))
    assert np.all(np.diff(consts[-3:]) > 0)


def test_cons33_closed_form_margins(ou_field):
    rep = check_conservative_sprin(ou_field, 1.0, GRID)
    assert rep.passed
    r = rep.sample_radii
    want = r * r * (np.log(r) + 1.0) + r * r  # LHS = -r^2 for the ou field
    assert np.max(np.abs(rep.sample_margins - want)) <= 1e-9


def test_cons33_bm_constant_lhs(bm_field):
    rep = check_conservative_sprin(bm_field, 1.0, GRID)
    assert rep.passed
    r = rep.sample_radii
    want = r * r * (np.log(r) + 1.0) - 0.0  # LHS = -1 + d/2 = 0 for d = 2
    assert np.max(np.abs(rep.sample_margins - want)) <= 1e-9


def test_cons33_cubic_fails_divergent(cubic_field):
    rep = check_conservative_sprin(cubic_field, 1.0, GRID)
    assert not rep.passed
    assert rep.divergent
    assert rep.margin_min < 0


def test_inv36_ou_closed_form(ou_field):
    rep = check_invariant_sprin(ou_field, 1, 0.5, GridSpec(n0=3, r_max=100.0))
    assert rep.passed
    assert np.max(np.abs(rep.sample_margins - 0.5 * rep.sample_radii**2)) <= 1e-9


def test_inv37_ou_closed_form(ou_field):
    rep = check_invariant_sprin(ou_field, 2, 1.0, GridSpec(n0=2, r_max=100.0))
    assert rep.passed
    assert np.max(np.abs(rep.sample_margins - (rep.sample_radii**2 - 3.0))) <= 1e-9


def test_invariant_checks_fail_on_bm(bm_field):
    assert not check_invariant_sprin(bm_field, 1, 1.0, GRID).passed
    assert not check_invariant_sprin(bm_field, 2, 1.0, GRID).passed


def test_lyap_quad_invariant_ou(ou_field, bm_field):
    # Lg = d - r^2 for g = ||x||^2/2 on the ou field
    rep = check_lyapunov(ou_field, g_quad(), "invariant", 1.0, GridSpec(n0=2, r_max=100.0))
    assert rep.passed
    assert np.max(np.abs(rep.sample_margins - (rep.sample_radii**2 - 3.0))) <= 1e-9
    # on bm, Lg = d/2 > -M everywhere
    rep = check_lyapunov(bm_field, g_quad(), "invariant", 1.0, GRID)
    assert not rep.passed
    assert np.max(np.abs(rep.sample_margins - (-2.0))) <= 1e-12


def test_lyap_log_outer_conservative_ou(ou_field):
    # Lg = (2d-4)/r^2 - 2 = -2 at d = 2
    rep = check_lyapunov(ou_field, g_log_outer(1), "conservative", 1.0, GRID)
    assert rep.passed
    want = np.log(rep.sample_radii**2) + 4.0
    assert np.max(np.abs(rep.sample_margins - want)) <= 1e-9


def test_dim2_demo_invariant(dim2_field):
    # LHS = |x2^2 - x1^2|/2 - r^2 <= -r^2/2, so M = 1/4 has margin >= r^2/4
    rep = check_dim2(dim2_field, "invariant", 0.25, GridSpec(n0=4, r_max=100.0))
    assert rep.passed
    assert np.all(rep.sample_margins >= 0.25 * rep.sample_radii**2 - 1e-9)


def test_dim2_constant_conservative(ou_field):
    rep = check_dim2(ou_field, "conservative", 1.0, GRID)
    assert rep.passed
    # A = 2I: LHS = -r^2 < 0 < RHS
    want = rep.sample_radii**2 * (np.log(rep.sample_radii) + 1.0) + rep.sample_radii**2
    assert np.max(np.abs(rep.sample_margins - want)) <= 1e-9


def test_dim2_quartic_offdiagonal_fails():
    field = build_field({
        "dim": 2,
        "A": {"a11": "1 + normsq^4", "a21": "normsq^2", "a22": "1"},
        "G": ["0", "0"],
    })
    rep = check_dim2(field, "conservative", 1.0, GridSpec(n0=1, r_max=50.0))
    assert not rep.passed


def test_dim2_requires_d2():
    field = build_field({"dim": 3, "catalog": "ou"})
    with pytest.raises(ValueError, match="d == 2"):
        check_dim2(field, "invariant", 1.0, GRID)


def test_implication_chain_dim2_demo(dim2_field):
    # the coefficient-gap LHS dominates the drift-form LHS pointwise, so a
    # passing dim2 margin forces a passing drift-form margin at the same (M, N0)
    grid = GridSpec(n0=4, r_max=100.0, seed=5)
    rep_dim2 = check_dim2(dim2_field, "conservative", 1.0, grid)
    rep_cons = check_conservative_sprin(dim2_field, 1.0, grid)
    assert rep_dim2.passed
    assert rep_cons.passed
    assert np.all(rep_cons.sample_margins >= rep_dim2.sample_margins - 1e-9)


def test_margins_affine_in_m(ou_field):
    grid = GridSpec(n0=2, r_max=50.0)
    small = check_invariant_sprin(ou_field, 2, 1.0, grid)
    # enlarging M never turns invariant-mode FAIL into PASS... and for
    # conservative-mode, enlarging M never turns PASS into FAIL
    cons_small = check_conservative_sprin(ou_field, 0.5, grid)
    cons_big = check_conservative_sprin(ou_field, 5.0, grid)
    assert cons_small.passed and cons_big.passed
    assert np.all(cons_big.sample_margins >= cons_small.sample_margins)
    assert small.passed


def test_prop_gap_bound_on_every_sample(dim2_field):
    from fpk.chol import spectral_gap_2d_batch

    pts, _, _, _ = GridSpec(n0=1, r_max=20.0).annulus(2)
    gap, bound = spectral_gap_2d_batch(dim2_field.A(pts))
    assert np.all(gap <= bound + 1e-12)


def test_nondiff_sphere_resampling():
    grid = GridSpec(n0=2, r_max=10.0)
    g = g_log_outer(2)
    # a shell radius colliding with the corner sphere would be nudged; the
    # standard shells start at N0 * (1 + 1/8), so none collide
    field = build_field({"dim": 2, "catalog": "ou"})
    rep = check_lyapunov(field, g, "conservative", 1.0, grid)
    assert rep.n_resampled == 0
    assert np.all(np.abs(rep.sample_radii - 2.0) > 1e-6)
