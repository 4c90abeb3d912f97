"""Smooth bump test functions and empirical-measure statistics.

Dead paths follow the sub-probability convention throughout: they
contribute zero to integrals while staying in the denominator, so a lossy
ensemble shows up as integral-of-one strictly below 1 rather than being
silently renormalized.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .sde import EmpiricalMeasure


@dataclass(frozen=True)
class TestFunction:
    """Bump phi(y) = exp(-1 / (1 - ||y-c||^2 / r^2)) inside B_r(c), 0 outside.

    Smooth with all derivatives vanishing at the support boundary; the peak
    value is phi(c) = 1/e.  Gradient and Hessian are closed-form.
    """

    center: tuple
    radius: float
    kind: str = "bump"

    def __post_init__(self):
        object.__setattr__(self, "center", tuple(float(v) for v in self.center))
        if self.radius <= 0:
            raise ValueError("radius must be positive")
        if self.kind != "bump":
            raise ValueError(f"unknown test function kind {self.kind!r}")

    @property
    def d(self) -> int:
        return len(self.center)

    def _u(self, y: np.ndarray):
        y = np.asarray(y, dtype=float)
        squeeze = y.ndim == 1
        if squeeze:
            y = y[None, :]
        z = y - np.asarray(self.center)
        u = np.einsum("ni,ni->n", z, z) / (self.radius * self.radius)
        return z, u, squeeze

    def value(self, y) -> np.ndarray | float:
        z, u, squeeze = self._u(y)
        out = np.zeros(u.shape)
        inside = u < 1.0
        out[inside] = np.exp(-1.0 / (1.0 - u[inside]))
        return float(out[0]) if squeeze else out

    def gradient(self, y) -> np.ndarray:
        z, u, squeeze = self._u(y)
        n, d = z.shape
        out = np.zeros((n, d))
        inside = u < 1.0
        w = 1.0 - u[inside]
        phi = np.exp(-1.0 / w)
        # phi underflows to exact 0 long before 1/w^2 can overflow
        dphi = np.where(phi > 0.0, -phi / (w * w), 0.0)
        out[inside] = dphi[:, None] * (2.0 / self.radius**2) * z[inside]
        return out[0] if squeeze else out

    def hessian(self, y) -> np.ndarray:
        z, u, squeeze = self._u(y)
        n, d = z.shape
        out = np.zeros((n, d, d))
        inside = u < 1.0
        w = 1.0 - u[inside]
        phi = np.exp(-1.0 / w)
        d1 = np.where(phi > 0.0, -phi / (w * w), 0.0)
        d2 = np.where(phi > 0.0, phi * (2.0 * u[inside] - 1.0) / (w**4), 0.0)
        r2 = self.radius * self.radius
        zi = z[inside]
        eye = np.eye(d)
        out[inside] = (2.0 / r2) * d1[:, None, None] * eye + (4.0 / (r2 * r2)) * (
            d2[:, None, None] * zi[:, :, None] * zi[:, None, :]
        )
        return out[0] if squeeze else out

    def label(self) -> str:
        c = ",".join(f"{v:g}" for v in self.center)
        return f"bump(c=({c}), r={self.radius:g})"


@dataclass(frozen=True)
class MomentSummary:
    mean: np.ndarray
    cov: np.ndarray
    stderr: np.ndarray
    n_alive: int
    alive_fraction: float

    def to_dict(self) -> dict:
        return {
            "mean": self.mean.tolist(),
            "cov": self.cov.tolist(),
            "stderr": self.stderr.tolist(),
            "n_alive": self.n_alive,
            "alive_fraction": self.alive_fraction,
        }


def _as_values(m: EmpiricalMeasure, f) -> np.ndarray:
    fn = f.value if hasattr(f, "value") else f
    vals = np.asarray(fn(m.positions), dtype=float) if m.n_alive else np.zeros(0)
    if not np.all(np.isfinite(vals)):
        raise ArithmeticError("test function is not finite on alive positions")
    return vals


def integrate(m: EmpiricalMeasure, f) -> tuple[float, float]:
    """Sub-probability integral of f against the snapshot, with stderr.

    Dead paths contribute 0 but stay in the denominator, so integrate(1)
    equals the alive fraction.  The stderr is the standard error of that
    zero-padded mean.
    """
    if m.n_alive == 0:
        raise ArithmeticError("no alive paths to integrate over")
    vals = _as_values(m, f)
    total = float(vals.sum())
    est = total / m.n_paths
    # zero-padded variance: dead paths enter as exact zeros
    sq = float((vals * vals).sum()) / m.n_paths
    var = max(sq - est * est, 0.0)
    stderr = float(np.sqrt(var / m.n_paths))
    return est, stderr


def moments(m: EmpiricalMeasure) -> MomentSummary:
    """Alive-sample mean and unbiased covariance, with the alive fraction."""
    if m.n_alive < 2:
        raise ArithmeticError("need at least two alive paths for moments")
    mean = m.positions.mean(axis=0)
    centered = m.positions - mean
    cov = centered.T @ centered / (m.n_alive - 1)
    stderr = np.sqrt(np.diag(cov) / m.n_alive)
    return MomentSummary(
        mean=mean,
        cov=cov,
        stderr=stderr,
        n_alive=m.n_alive,
        alive_fraction=m.alive_fraction,
    )


def ks_distance(m1: EmpiricalMeasure, m2: EmpiricalMeasure, axis: int) -> float:
    """Two-sample Kolmogorov-Smirnov statistic on one coordinate.

    Computed on alive positions of both snapshots (the KS statistic
    compares normalized empirical CDFs).
    """
    if m1.n_alive == 0 or m2.n_alive == 0:
        raise ArithmeticError("both measures need alive paths")
    a = np.sort(m1.positions[:, axis])
    b = np.sort(m2.positions[:, axis])
    both = np.concatenate([a, b])
    cdf_a = np.searchsorted(a, both, side="right") / a.size
    cdf_b = np.searchsorted(b, both, side="right") / b.size
    return float(np.max(np.abs(cdf_a - cdf_b)))


def default_bank(d: int, scale: float = 1.0) -> list[TestFunction]:
    """Deterministic bump bank: centers at 0 and +-scale*e_i, radii scale
    and 2*scale; 4d + 2 functions in all.
    """
    if scale <= 0:
        raise ValueError("scale must be positive")
    bank = []
    origin = (0.0,) * d
    for radius in (scale, 2.0 * scale):
        bank.append(TestFunction(center=origin, radius=radius))
        for i in range(d):
            for sign in (+1.0, -1.0):
                center = tuple(
                    sign * scale if j == i else 0.0 for j in range(d)
                )
                bank.append(TestFunction(center=center, radius=radius))
    return bank
