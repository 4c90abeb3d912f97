"""Deterministic low-discrepancy sampling for condition checks.

All geometry here is seedable and reproducible: a (seed, count) pair always
yields the same points.  Halton sequences drive both the ball sampling used
by the ellipticity check and the per-shell direction sets used by the growth
condition checkers; directions are produced by a Box-Muller map applied to
Halton columns, so no stateful RNG is involved.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

_PRIMES = (
    2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53, 59, 61, 67, 71,
)


def halton(n: int, dim: int, start: int = 1) -> np.ndarray:
    """First ``n`` Halton points in (0,1)^dim beginning at index ``start``."""
    if dim > len(_PRIMES):
        raise ValueError(f"halton supports dim <= {len(_PRIMES)}")
    idx = np.arange(start, start + n, dtype=np.int64)
    out = np.empty((n, dim))
    for j in range(dim):
        b = _PRIMES[j]
        x = np.zeros(n)
        f = 1.0
        i = idx.copy()
        while np.any(i > 0):
            f /= b
            x += f * (i % b)
            i //= b
        out[:, j] = x
    return out


def _uniform_to_normal(u: np.ndarray) -> np.ndarray:
    """Box-Muller on column pairs; u has an even number of columns in (0,1)."""
    n, m = u.shape
    u1 = np.clip(u[:, 0::2], 1e-16, 1.0 - 1e-16)
    u2 = u[:, 1::2]
    r = np.sqrt(-2.0 * np.log(u1))
    z = np.empty((n, m))
    z[:, 0::2] = r * np.cos(2.0 * np.pi * u2)
    z[:, 1::2] = r * np.sin(2.0 * np.pi * u2)
    return z


def sphere_directions(n: int, d: int, seed: int = 0) -> np.ndarray:
    """n quasi-random unit vectors in R^d."""
    cols = d + (d % 2)
    u = halton(n, cols, start=1 + (seed % (1 << 30)) * n)
    z = _uniform_to_normal(u)[:, :d]
    norms = np.linalg.norm(z, axis=1, keepdims=True)
    norms[norms == 0] = 1.0
    return z / norms


def ball_points(center, radius: float, n: int, seed: int = 0) -> np.ndarray:
    """n quasi-random points inside the open ball, center first."""
    center = np.asarray(center, dtype=float)
    d = center.shape[0]
    if n < 1:
        raise ValueError("need n >= 1")
    pts = np.empty((n, d))
    pts[0] = center
    if n > 1:
        m = n - 1
        cols = d + (d % 2) + 1
        u = halton(m, cols, start=1 + (seed % (1 << 30)) * m)
        dirs = _uniform_to_normal(u[:, :-1])[:, :d]
        norms = np.linalg.norm(dirs, axis=1, keepdims=True)
        norms[norms == 0] = 1.0
        dirs /= norms
        radii = radius * u[:, -1] ** (1.0 / d)
        pts[1:] = center + radii[:, None] * dirs
    return pts


@dataclass(frozen=True)
class GridSpec:
    """Radial shells-times-directions sampling of an annulus N0 < ||x|| <= r_max.

    Shell radii are N0*(1 + k/shell_div) for k = 1.., capped at r_max; each
    shell carries dirs_per_dim*d quasi-random directions.  Radii that land
    within a relative 1e-6 of a declared non-differentiability sphere are
    nudged outward (the count is reported by the checkers).
    """

    n0: int = 1
    r_max: float = 1000.0
    shell_div: int = 8
    dirs_per_dim: int = 64
    seed: int = 0

    def __post_init__(self):
        if self.n0 < 1:
            raise ValueError("N0 must be a positive integer")
        if self.r_max <= self.n0:
            raise ValueError("r_max must exceed N0")

    def shell_radii(self) -> np.ndarray:
        k_max = int(math.floor(self.shell_div * (self.r_max / self.n0 - 1.0) + 1e-9))
        k_max = max(k_max, 1)
        k = np.arange(1, k_max + 1, dtype=float)
        return self.n0 * (1.0 + k / self.shell_div)

    def annulus(self, d: int, nondiff_radius: float | None = None):
        """Sample points outside B_N0.

        Returns (points, radii, shell_index, n_resampled).
        """
        radii = self.shell_radii()
        n_resampled = 0
        if nondiff_radius is not None and nondiff_radius > 0:
            close = np.abs(radii - nondiff_radius) <= 1e-6 * nondiff_radius
            n_resampled = int(close.sum())
            radii = np.where(close, radii * (1.0 + 2e-6), radii)
        return self._assemble(d, radii) + (n_resampled,)

    def inner(self, d: int):
        """Sample points covering the closed ball B_N0 (origin included)."""
        k = np.arange(1, self.shell_div + 1, dtype=float)
        radii = self.n0 * k / self.shell_div
        pts, r, shell = self._assemble(d, radii)
        pts = np.vstack([np.zeros((1, d)), pts])
        r = np.concatenate([[0.0], r])
        shell = np.concatenate([[-1], shell])
        return pts, r, shell

    def _assemble(self, d: int, radii: np.ndarray):
        n_dir = self.dirs_per_dim * d
        r_out = np.repeat(radii, n_dir)
        shell = np.repeat(np.arange(radii.size), n_dir)
        # one Halton stream for all shells: consecutive slices give each
        # shell its own direction set
        dirs = sphere_directions(radii.size * n_dir, d, seed=self.seed)
        return r_out[:, None] * dirs, r_out, shell
