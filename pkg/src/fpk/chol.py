"""Columnwise Cholesky factorization of the diffusion matrix field.

The factorization runs column by column: for column j the diagonal entry
sigma_jj = sqrt(a_jj - sum_{k<j} sigma_jk^2) comes first, then the entries
below it, sigma_ij = (a_ij - sum_{k<j} sigma_jk sigma_ik) / sigma_jj for
i = j+1..d.  Each entry is an algebraic expression in previously computed
columns, which is exactly what makes the factor inherit the continuity of
the input entries; the code preserves that evaluation order rather than
using a rowwise or blocked variant.

Also here: a self-contained cyclic Jacobi eigensolver for the small
symmetric matrices this package deals in (d <= ~16), the closed-form 2x2
eigenvalue gap sqrt((a11-a22)^2 + 4 a12^2) with its coefficient bound
|a11-a22| + 2|a12|, and a finite-difference regularity probe for factor
fields.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .coeffs import CoefficientField
from .grids import ball_points

SYMMETRY_RTOL = 1e-12
PD_SCALE_TOL = 1e-12  # pivot tolerance, scaled by the largest diagonal entry
JACOBI_TOL = 1e-13  # off-diagonal Frobenius target, relative to ||A||_F
JACOBI_MAX_SWEEPS = 40


class NotPositiveDefinite(ArithmeticError):
    """Pivot j of the factorization was not strictly positive.

    Signals that A(x) fails strict ellipticity at the evaluated point: the
    leading j x j minor is numerically singular or indefinite.
    """

    def __init__(self, column: int, pivot: float, point=None):
        self.column = column
        self.pivot = pivot
        self.point = None if point is None else np.asarray(point, dtype=float)
        msg = f"pivot {pivot:.6g} <= tolerance at column {column}"
        if point is not None:
            msg += f" (point {np.asarray(point).tolist()})"
        super().__init__(msg)


class JacobiConvergenceError(ArithmeticError):
    pass


@dataclass(frozen=True)
class SigmaFactor:
    """Lower-triangular factor value at one point: sigma sigma^T = A."""

    d: int
    mat: np.ndarray  # (d, d), strictly zero above the diagonal

    def entry(self, i: int, j: int) -> float:
        """sigma_ij with 1-based indices."""
        return float(self.mat[i - 1, j - 1])

    def reconstruction_error(self, a: np.ndarray) -> float:
        """Relative Frobenius error of sigma sigma^T against ``a``."""
        a = np.asarray(a, dtype=float)
        num = np.linalg.norm(self.mat @ self.mat.T - a)
        den = np.linalg.norm(a)
        return float(num / den) if den > 0 else float(num)


@dataclass(frozen=True)
class RegularityProbe:
    """Finite-difference evidence for the smoothness of a factor field."""

    center: tuple
    radius: float
    h: float
    n_points: int
    max_quotient: np.ndarray  # (d, d) per-entry max |d sigma_ij / d x_axis|
    max_modulus: float  # max |sigma(x+h e) - sigma(x-h e)| over probe pairs
    suspicious: bool  # some quotient exceeded the 1/h blow-up heuristic

    def to_dict(self) -> dict:
        return {
            "center": list(self.center),
            "radius": self.radius,
            "h": self.h,
            "n_points": self.n_points,
            "max_quotient": self.max_quotient.tolist(),
            "max_modulus": self.max_modulus,
            "suspicious": self.suspicious,
        }


def _check_symmetric(a: np.ndarray):
    scale = np.max(np.abs(a))
    if scale == 0:
        return
    if np.max(np.abs(a - a.swapaxes(-1, -2))) > SYMMETRY_RTOL * scale:
        raise ValueError("input matrix is not symmetric")


def cholesky_point(aval: np.ndarray) -> SigmaFactor:
    """Factor one symmetric positive-definite matrix, columnwise.

    Raises NotPositiveDefinite(j) when the pivot at column j drops below
    PD_SCALE_TOL times the largest diagonal entry.
    """
    a = np.asarray(aval, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError("expected a square matrix")
    _check_symmetric(a)
    d = a.shape[0]
    tol = PD_SCALE_TOL * max(float(np.max(np.diagonal(a))), 0.0)
    sig = np.zeros((d, d))

    # column 1
    pivot = a[0, 0]
    if pivot <= tol:
        raise NotPositiveDefinite(1, float(pivot))
    sig[0, 0] = np.sqrt(pivot)
    for i in range(1, d):
        sig[i, 0] = a[i, 0] / sig[0, 0]

    # columns 2..d: diagonal entry first, then the entries below it
    for j in range(1, d):
        pivot = a[j, j] - np.dot(sig[j, :j], sig[j, :j])
        if pivot <= tol:
            raise NotPositiveDefinite(j + 1, float(pivot))
        sig[j, j] = np.sqrt(pivot)
        for i in range(j + 1, d):
            sig[i, j] = (a[i, j] - np.dot(sig[j, :j], sig[i, :j])) / sig[j, j]
    return SigmaFactor(d=d, mat=sig)


def cholesky_batch(avals: np.ndarray, points: np.ndarray | None = None) -> np.ndarray:
    """Columnwise factorization of a batch (n, d, d) -> (n, d, d).

    Same pivot order and failure rule as cholesky_point, vectorized over the
    batch; on failure the offending point (when given) rides on the error.
    """
    a = np.asarray(avals, dtype=float)
    n, d, _ = a.shape
    tol = PD_SCALE_TOL * np.maximum(
        np.max(np.diagonal(a, axis1=1, axis2=2), axis=1), 0.0
    )
    sig = np.zeros_like(a)
    for j in range(d):
        pivot = a[:, j, j] - np.einsum("nk,nk->n", sig[:, j, :j], sig[:, j, :j])
        bad = pivot <= tol
        if np.any(bad):
            k = int(np.argmax(bad))
            raise NotPositiveDefinite(
                j + 1, float(pivot[k]), point=None if points is None else points[k]
            )
        sig[:, j, j] = np.sqrt(pivot)
        if j + 1 < d:
            sig[:, j + 1 :, j] = (
                a[:, j + 1 :, j]
                - np.einsum("nk,nik->ni", sig[:, j, :j], sig[:, j + 1 :, :j])
            ) / sig[:, j, j][:, None]
    return sig


class SigmaField:
    """Pointwise factor field: sigma(x) with sigma(x) sigma(x)^T = A(x)."""

    def __init__(self, field: CoefficientField):
        self.field = field
        self.d = field.d
        self._const: np.ndarray | None = None
        if field.constant_a:
            a0 = field.A(np.zeros(field.d))
            self._const = cholesky_point(a0).mat

    def __call__(self, x) -> SigmaFactor:
        x = np.asarray(x, dtype=float)
        if self._const is not None:
            return SigmaFactor(d=self.d, mat=self._const.copy())
        try:
            return cholesky_point(self.field.A(x))
        except NotPositiveDefinite as err:
            raise NotPositiveDefinite(err.column, err.pivot, point=x) from None

    def batch(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=float)
        n = points.shape[0]
        if self._const is not None:
            return np.broadcast_to(self._const, (n, self.d, self.d))
        return cholesky_batch(self.field.A(points), points=points)


def cholesky_field(field: CoefficientField) -> SigmaField:
    """Wrap a coefficient field as a pure sigma evaluator."""
    return SigmaField(field)


def _eigs_2x2(a: np.ndarray) -> np.ndarray:
    mean = 0.5 * (a[..., 0, 0] + a[..., 1, 1])
    half_gap = np.sqrt(
        (0.5 * (a[..., 0, 0] - a[..., 1, 1])) ** 2 + a[..., 0, 1] ** 2
    )
    return np.stack([mean - half_gap, mean + half_gap], axis=-1)


def _jacobi_batch(avals: np.ndarray) -> np.ndarray:
    a = np.array(avals, dtype=float)
    n, d, _ = a.shape
    fro = np.sqrt(np.sum(a * a, axis=(1, 2)))
    target = JACOBI_TOL * np.maximum(fro, np.finfo(float).tiny)
    for _ in range(JACOBI_MAX_SWEEPS):
        iu = np.triu_indices(d, k=1)
        off = np.sqrt(2.0 * np.sum(a[:, iu[0], iu[1]] ** 2, axis=1))
        if np.all(off <= target):
            return np.sort(np.diagonal(a, axis1=1, axis2=2), axis=1)
        for p in range(d - 1):
            for q in range(p + 1, d):
                apq = a[:, p, q]
                active = np.abs(apq) > 0.0
                tau = np.zeros(n)
                np.divide(
                    a[:, q, q] - a[:, p, p], 2.0 * apq, out=tau, where=active
                )
                t = np.where(
                    active,
                    np.sign(tau) / (np.abs(tau) + np.sqrt(1.0 + tau * tau)),
                    0.0,
                )
                t = np.where(active & (tau == 0.0), 1.0, t)
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = t * c
                rp = a[:, p, :].copy()
                rq = a[:, q, :].copy()
                a[:, p, :] = c[:, None] * rp - s[:, None] * rq
                a[:, q, :] = s[:, None] * rp + c[:, None] * rq
                cp = a[:, :, p].copy()
                cq = a[:, :, q].copy()
                a[:, :, p] = c[:, None] * cp - s[:, None] * cq
                a[:, :, q] = s[:, None] * cp + c[:, None] * cq
                a[:, p, q] = np.where(active, 0.0, a[:, p, q])
                a[:, q, p] = a[:, p, q]
    raise JacobiConvergenceError(
        f"Jacobi sweep cap {JACOBI_MAX_SWEEPS} reached; pathological input"
    )


def sym_eigs(aval: np.ndarray) -> np.ndarray:
    """Ascending eigenvalues of one small symmetric matrix.

    Closed form for d = 2, cyclic Jacobi rotations otherwise.
    """
    a = np.asarray(aval, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError("expected a square matrix")
    _check_symmetric(a)
    if a.shape[0] == 1:
        return a[0].copy()
    if a.shape[0] == 2:
        return _eigs_2x2(a)
    return _jacobi_batch(a[None])[0]


def sym_eigs_batch(avals: np.ndarray) -> np.ndarray:
    """Ascending eigenvalues of a batch (n, d, d) -> (n, d)."""
    a = np.asarray(avals, dtype=float)
    if a.shape[-1] == 2:
        return _eigs_2x2(a)
    return _jacobi_batch(a)


def spectral_gap_2d(aval: np.ndarray) -> tuple[float, float]:
    """Eigenvalue gap of a symmetric 2x2 and its coefficient bound.

    Returns (sqrt((a11-a22)^2 + 4 a12^2), |a11-a22| + 2|a12|); the first
    never exceeds the second.
    """
    a = np.asarray(aval, dtype=float)
    if a.shape != (2, 2):
        raise ValueError("expected a 2x2 matrix")
    if not np.all(np.isfinite(a)):
        raise ValueError("non-finite input")
    diff = a[0, 0] - a[1, 1]
    gap = float(np.sqrt(diff * diff + 4.0 * a[0, 1] ** 2))
    bound = float(abs(diff) + 2.0 * abs(a[0, 1]))
    return gap, bound


def spectral_gap_2d_batch(avals: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(avals, dtype=float)
    diff = a[:, 0, 0] - a[:, 1, 1]
    gap = np.sqrt(diff * diff + 4.0 * a[:, 0, 1] ** 2)
    bound = np.abs(diff) + 2.0 * np.abs(a[:, 0, 1])
    return gap, bound


def regularity_probe(
    sigma_field: SigmaField,
    center,
    radius: float,
    h: float | None = None,
    n_points: int = 64,
    seed: int = 0,
) -> RegularityProbe:
    """Central finite differences of every factor entry inside a ball.

    ``h`` defaults to 1e-4 * (1 + ||x||) per probe point.  A difference
    quotient above 1/h is flagged as suspicious (likely blow-up of a weak
    derivative).  Factorization failure inside the ball propagates.
    """
    center = np.asarray(center, dtype=float)
    d = sigma_field.d
    pts = ball_points(center, radius, n_points, seed=seed)
    steps = (
        np.full(n_points, h) if h is not None
        else 1e-4 * (1.0 + np.linalg.norm(pts, axis=1))
    )
    if np.any(steps <= 0) or np.any(steps >= radius):
        raise ValueError("step h must be positive and small relative to the ball")

    # one batched evaluation for all 2*d shifted copies of the probe set
    shifted = np.empty((2 * d * n_points, d))
    for axis in range(d):
        plus = pts.copy()
        plus[:, axis] += steps
        minus = pts.copy()
        minus[:, axis] -= steps
        shifted[2 * axis * n_points : (2 * axis + 1) * n_points] = plus
        shifted[(2 * axis + 1) * n_points : (2 * axis + 2) * n_points] = minus
    sig = sigma_field.batch(shifted)

    max_quot = np.zeros((d, d))
    max_mod = 0.0
    suspicious = False
    for axis in range(d):
        sp = sig[2 * axis * n_points : (2 * axis + 1) * n_points]
        sm = sig[(2 * axis + 1) * n_points : (2 * axis + 2) * n_points]
        delta = np.abs(sp - sm)
        quot = delta / (2.0 * steps)[:, None, None]
        max_quot = np.maximum(max_quot, quot.max(axis=0))
        max_mod = max(max_mod, float(delta.max()))
        if np.any(quot > (1.0 / steps)[:, None, None]):
            suspicious = True
    return RegularityProbe(
        center=tuple(center),
        radius=float(radius),
        h=float(steps[0]) if h is not None else float(np.median(steps)),
        n_points=n_points,
        max_quotient=max_quot,
        max_modulus=max_mod,
        suspicious=suspicious,
    )
