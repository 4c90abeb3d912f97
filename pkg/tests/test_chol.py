import numpy as np
import pytest

import fpk
from fpk.chol import (
    NotPositiveDefinite,
    cholesky_batch,
    cholesky_field,
    cholesky_point,
    regularity_probe,
    spectral_gap_2d,
    sym_eigs,
    sym_eigs_batch,
)
from fpk.coeffs import CoefficientField, build_field

from conftest import random_spd


def naive_cholesky(a: np.ndarray) -> np.ndarray:
    """Independent rowwise reference implementation."""
    d = a.shape[0]
    low = np.zeros((d, d))
    for i in range(d):
        for j in range(i + 1):
            s = sum(low[i][k] * low[j][k] for k in range(j))
            if i == j:
                low[i][j] = (a[i][i] - s) ** 0.5
            else:
                low[i][j] = (a[i][j] - s) / low[j][j]
    return low


def test_identity_factors_to_identity():
    assert np.array_equal(cholesky_point(np.eye(3)).mat, np.eye(3))


def test_hand_case():
    sig = cholesky_point(np.array([[4.0, 2.0], [2.0, 5.0]]))
    assert np.allclose(sig.mat, [[2.0, 0.0], [1.0, 2.0]], atol=1e-15, rtol=0)


def test_indefinite_fails_at_column_two():
    with pytest.raises(NotPositiveDefinite) as err:
        cholesky_point(np.array([[1.0, 2.0], [2.0, 1.0]]))
    assert err.value.column == 2
    assert err.value.pivot < 0


def test_asymmetric_input_rejected():
    with pytest.raises(ValueError, match="symmetric"):
        cholesky_point(np.array([[1.0, 0.5], [0.0, 1.0]]))


def test_reconstruction_and_uniqueness_on_random_spd():
    rng = np.random.default_rng(2024)
    for d in range(2, 9):
        for _ in range(100):
            a = random_spd(rng, d)
            sig = cholesky_point(a)
            assert sig.reconstruction_error(a) <= 1e-12
            # strictly lower triangular with positive diagonal
            assert np.array_equal(np.triu(sig.mat, k=1), np.zeros((d, d)))
            assert np.all(np.diag(sig.mat) > 0)
            # unique factor: independent rowwise path agrees entrywise
            ref = naive_cholesky(a)
            scale = max(np.max(np.abs(ref)), 1.0)
            assert np.max(np.abs(sig.mat - ref)) <= 1e-13 * scale
            # and so does the library reference
            assert np.allclose(sig.mat, np.linalg.cholesky(a), rtol=0, atol=1e-12)


def test_batch_matches_pointwise():
    # same pivot order; summation order may differ by at most round-off
    rng = np.random.default_rng(77)
    mats = np.stack([random_spd(rng, 4) for _ in range(50)])
    batch = cholesky_batch(mats)
    for k in range(50):
        assert np.allclose(batch[k], cholesky_point(mats[k]).mat, rtol=1e-14, atol=1e-14)


def test_batch_failure_carries_point():
    good = np.eye(2)
    bad = np.array([[1.0, 2.0], [2.0, 1.0]])
    points = np.array([[0.0, 0.0], [3.0, 4.0]])
    with pytest.raises(NotPositiveDefinite) as err:
        cholesky_batch(np.stack([good, bad]), points=points)
    assert err.value.column == 2
    assert np.array_equal(err.value.point, [3.0, 4.0])


def test_monotone_failure_minor_is_degenerate():
    # when column j fails, the leading j x j minor has an eigenvalue <= tol
    rng = np.random.default_rng(5)
    for _ in range(20):
        d = 5
        a = random_spd(rng, d)
        v = rng.standard_normal(3)
        a[:3, :3] = np.outer(v, v)  # rank-1 leading block fails by column <= 3
        try:
            cholesky_point(a)
        except NotPositiveDefinite as err:
            j = err.column
            minor_eigs = sym_eigs(a[:j, :j])
            assert minor_eigs[0] <= 1e-12 * max(np.max(np.diag(a)), 1.0)
        else:
            pytest.fail("expected a pivot failure")


def test_sigma_field_ou(ou_field):
    sigma = cholesky_field(ou_field)
    fac = sigma(np.array([13.0, -7.0]))
    assert np.allclose(fac.mat, np.sqrt(2.0) * np.eye(2), rtol=0, atol=1e-15)


def test_sigma_field_dim2_demo(dim2_field):
    fac = cholesky_field(dim2_field)(np.array([1.0, 0.0]))
    assert np.allclose(fac.mat, np.diag([1.0, np.sqrt(2.0)]), rtol=0, atol=1e-15)


def test_sigma_field_random_spd_reconstruction():
    # A(x) = I + B(x) B(x)^T with a smoothly varying random B
    rng = np.random.default_rng(99)
    coef = rng.standard_normal((3, 3, 3))

    def a_fn(p):
        n = p.shape[0]
        b = np.sin(np.einsum("ijk,nk->nij", coef, p))
        return np.broadcast_to(np.eye(3), (n, 3, 3)) + np.einsum("nij,nkj->nik", b, b)

    field = CoefficientField(d=3, a_fn=a_fn, g_fn=lambda p: -p, source="test")
    pts = rng.uniform(-2, 2, size=(100, 3))
    sig = cholesky_field(field).batch(pts)
    a = field.A(pts)
    err = np.linalg.norm(np.einsum("nij,nkj->nik", sig, sig) - a, axis=(1, 2))
    assert np.all(err <= 1e-12 * np.linalg.norm(a, axis=(1, 2)))


def test_sigma_field_failure_attaches_point():
    field = build_field({
        "dim": 2,
        "A": {"a11": "x1^2", "a21": "0", "a22": "1"},
        "G": ["0", "0"],
    })
    with pytest.raises(NotPositiveDefinite) as err:
        cholesky_field(field)(np.array([0.0, 5.0]))
    assert np.array_equal(err.value.point, [0.0, 5.0])


def test_sym_eigs_examples():
    assert np.allclose(sym_eigs(np.diag([3.0, 1.0, 2.0])), [1.0, 2.0, 3.0], atol=1e-13)
    got = sym_eigs(np.array([[3.0, 1.0], [1.0, 1.0]]))
    assert got == pytest.approx([2.0 - np.sqrt(2.0), 2.0 + np.sqrt(2.0)], rel=1e-14)


def test_sym_eigs_trace_det_oracle():
    rng = np.random.default_rng(12)
    for d in (2, 3, 5, 8):
        for _ in range(50):
            m = rng.standard_normal((d, d))
            a = 0.5 * (m + m.T)
            eigs = sym_eigs(a)
            assert np.all(np.diff(eigs) >= -1e-12)
            assert np.sum(eigs) == pytest.approx(np.trace(a), rel=1e-10, abs=1e-10)
            assert np.prod(eigs) == pytest.approx(np.linalg.det(a), rel=1e-10, abs=1e-10)
            # and against the library solver
            assert np.allclose(eigs, np.linalg.eigvalsh(a), rtol=1e-10, atol=1e-10)


def test_sym_eigs_jacobi_path_matches_2x2_closed_form():
    rng = np.random.default_rng(4)
    from fpk.chol import _jacobi_batch

    mats = []
    for _ in range(20):
        m = rng.standard_normal((2, 2))
        mats.append(0.5 * (m + m.T))
    mats = np.stack(mats)
    closed = sym_eigs_batch(mats)
    jacobi = _jacobi_batch(mats)
    assert np.allclose(closed, jacobi, rtol=1e-12, atol=1e-12)


def test_spectral_gap_examples():
    gap, bound = spectral_gap_2d(np.array([[2.0, 0.0], [0.0, 2.0]]))
    assert gap == 0.0 and bound == 0.0
    gap, bound = spectral_gap_2d(np.array([[3.0, 1.0], [1.0, 1.0]]))
    assert gap == pytest.approx(2.0 * np.sqrt(2.0), rel=1e-15)
    assert bound == 4.0


def test_spectral_gap_equals_eig_gap_and_respects_bound():
    rng = np.random.default_rng(8)
    for _ in range(1000):
        m = 3.0 * rng.standard_normal((2, 2))
        a = 0.5 * (m + m.T)
        gap, bound = spectral_gap_2d(a)
        eigs = sym_eigs(a)
        assert gap == pytest.approx(eigs[1] - eigs[0], rel=1e-12, abs=1e-12)
        assert gap <= bound + 1e-15


def test_probe_constant_field(ou_field):
    probe = regularity_probe(cholesky_field(ou_field), [0.0, 0.0], 1.0, n_points=16)
    assert np.array_equal(probe.max_quotient, np.zeros((2, 2)))
    assert probe.max_modulus == 0.0
    assert not probe.suspicious


def test_probe_dim2_demo_derivative(dim2_field):
    # sigma_22(x) = sqrt(1 + x1^2); d sigma_22 / d x1 at (1, 0) is 1/sqrt(2)
    sigma = cholesky_field(dim2_field)
    h = 1e-4
    plus = sigma(np.array([1.0 + h, 0.0])).entry(2, 2)
    minus = sigma(np.array([1.0 - h, 0.0])).entry(2, 2)
    assert (plus - minus) / (2 * h) == pytest.approx(1.0 / np.sqrt(2.0), abs=1e-4)
    probe = regularity_probe(sigma, [1.0, 0.0], 0.5, n_points=64, seed=2)
    assert probe.max_quotient[1, 1] >= (1.0 / np.sqrt(2.0)) * 0.5
    assert not probe.suspicious


def test_probe_flags_kink_shrinking_with_epsilon():
    # A = diag(|x1| + eps, 1): sigma_11 = sqrt(|x1| + eps) has a kink at 0
    quotients = []
    for eps in (1e-2, 1e-4):
        field = build_field({
            "dim": 2,
            "A": {"a11": f"abs(x1) + {eps}", "a21": "0", "a22": "1"},
            "G": ["0", "0"],
        })
        probe = regularity_probe(
            cholesky_field(field), [0.0, 0.0], 0.05, h=1e-6, n_points=256, seed=3
        )
        assert np.isfinite(probe.max_quotient).all()
        quotients.append(probe.max_quotient[0, 0])
    # the difference quotient near the kink grows as eps shrinks
    assert quotients[1] > 5.0 * quotients[0]
