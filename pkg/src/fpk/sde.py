"""Euler-Maruyama ensembles with addressable, thread-count-independent noise.

The scheme is X_{n+1} = X_n + G(X_n) dt + sigma(X_n) dW_n.  Gaussian
increments are generated counter-based: the normals consumed by path p at
step n are a pure function of (seed, n, p) -- concretely, row p mod B of a
Philox stream keyed by (seed, n, p // B) with a fixed block size B.  As a
consequence, changing the path count or the worker count never reshuffles
anybody's noise, runs are bitwise reproducible, and refinement levels can
share one underlying Brownian path per particle.

Paths whose state would leave the ball of radius ``r_explode`` (or turn
non-finite) are marked dead and frozen at their last in-bounds position;
dead paths keep consuming their noise slots but never move again.
Statistics treat them as lost mass (sub-probability convention).
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field as dc_field

import numpy as np

from .coeffs import CoefficientField

NOISE_BLOCK = 8192  # paths per noise stream; part of the reproducibility contract


def _threads() -> int:
    env = os.environ.get("FPK_THREADS", "")
    if env.strip():
        return max(1, int(env))
    return os.cpu_count() or 1


def _block_normals(seed: int, step: int, block: int, rows: int, d: int) -> np.ndarray:
    bg = np.random.Philox(
        key=np.array([seed & 0xFFFFFFFFFFFFFFFF, step], dtype=np.uint64),
        counter=np.array([0, 0, block, 0], dtype=np.uint64),
    )
    return np.random.Generator(bg).standard_normal((rows, d))


@dataclass(frozen=True)
class SimConfig:
    """One ensemble run: delta mass at x0 evolved to horizon T.

    dt is adjusted down so that T/dt is an integer number of steps; the
    requested value is kept in dt_requested.  Snapshot times are snapped to
    the step grid.
    """

    x0: tuple
    t_horizon: float
    dt: float
    n_paths: int
    seed: int = 0
    snapshot_times: tuple = ()
    r_explode: float = 1e6
    dt_requested: float = None
    n_steps: int = None

    def __post_init__(self):
        x0 = tuple(float(v) for v in self.x0)
        object.__setattr__(self, "x0", x0)
        if len(x0) < 1:
            raise ValueError("x0 must be a nonempty point")
        if not (self.t_horizon > 0):
            raise ValueError("horizon T must be positive")
        if not (0 < self.dt <= self.t_horizon):
            raise ValueError("need 0 < dt <= T")
        if self.n_paths < 1:
            raise ValueError("need n_paths >= 1")
        if self.r_explode <= 0:
            raise ValueError("r_explode must be positive")
        requested = float(self.dt)
        n_steps = max(1, math.ceil(round(self.t_horizon / requested, 12)))
        object.__setattr__(self, "dt_requested", requested)
        object.__setattr__(self, "n_steps", n_steps)
        object.__setattr__(self, "dt", self.t_horizon / n_steps)
        snaps = tuple(float(t) for t in self.snapshot_times)
        if not snaps:
            snaps = tuple(np.linspace(0.0, self.t_horizon, 21))
        if any(t < 0 or t > self.t_horizon + 1e-12 for t in snaps):
            raise ValueError("snapshot times must lie in [0, T]")
        if list(snaps) != sorted(snaps):
            raise ValueError("snapshot times must be sorted")
        steps = sorted({int(round(t / self.dt)) for t in snaps})
        object.__setattr__(self, "snapshot_times", tuple(s * self.dt for s in steps))
        object.__setattr__(self, "_snapshot_steps", tuple(steps))

    @property
    def d(self) -> int:
        return len(self.x0)

    def snapshot_steps(self) -> tuple:
        return self._snapshot_steps

    def to_dict(self) -> dict:
        return {
            "x0": list(self.x0),
            "T": self.t_horizon,
            "dt": self.dt,
            "dt_requested": self.dt_requested,
            "n_steps": self.n_steps,
            "n_paths": self.n_paths,
            "seed": self.seed,
            "snapshot_times": list(self.snapshot_times),
            "r_explode": self.r_explode,
        }


@dataclass(frozen=True)
class EmpiricalMeasure:
    """Particle snapshot at one time: alive positions plus lost mass."""

    t: float
    positions: np.ndarray  # (n_alive, d)
    n_dead: int
    n_paths: int

    @property
    def n_alive(self) -> int:
        return self.positions.shape[0]

    @property
    def alive_fraction(self) -> float:
        return self.n_alive / self.n_paths


@dataclass(frozen=True)
class PathEnsemble:
    """Per-path states at the snapshot grid of one simulation."""

    config: SimConfig
    times: np.ndarray  # (m,)
    positions: np.ndarray  # (m, n_paths, d)
    alive: np.ndarray  # (m, n_paths) bool

    def measure(self, k: int) -> EmpiricalMeasure:
        mask = self.alive[k]
        return EmpiricalMeasure(
            t=float(self.times[k]),
            positions=self.positions[k][mask].copy(),
            n_dead=int((~mask).sum()),
            n_paths=self.config.n_paths,
        )

    def measures(self) -> list[EmpiricalMeasure]:
        return [self.measure(k) for k in range(len(self.times))]

    def node_index(self, t: float) -> int:
        k = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[k] - t) > 1e-9 * max(1.0, self.config.t_horizon):
            raise ValueError(f"time {t} is not on the snapshot grid")
        return k


def _sigma_batch(sigma, points: np.ndarray) -> np.ndarray:
    if hasattr(sigma, "batch"):
        return sigma.batch(points)
    return sigma(points)


def _run_block(field, sigma, cfg: SimConfig, block: int, snap_steps: set,
               out_pos: np.ndarray, out_alive: np.ndarray):
    lo = block * NOISE_BLOCK
    hi = min(lo + NOISE_BLOCK, cfg.n_paths)
    rows = hi - lo
    d = cfg.d
    x = np.tile(np.asarray(cfg.x0), (rows, 1))
    alive = np.ones(rows, dtype=bool)
    snap_i = 0
    if 0 in snap_steps:
        out_pos[0, lo:hi] = x
        out_alive[0, lo:hi] = alive
        snap_i = 1
    r2_cap = cfg.r_explode * cfg.r_explode
    for n in range(cfg.n_steps):
        dw = math.sqrt(cfg.dt) * _block_normals(cfg.seed, n, block, rows, d)
        if alive.all():
            drift = field.G(x)
            sig = _sigma_batch(sigma, x)
            prop = x + drift * cfg.dt + np.einsum("nij,nj->ni", sig, dw)
            ok = np.isfinite(prop).all(axis=1) & (np.einsum("ni,ni->n", prop, prop) <= r2_cap)
            if ok.all():
                x = prop
            else:
                x[ok] = prop[ok]
                alive = ok
        elif alive.any():
            idx = np.flatnonzero(alive)
            xa = x[idx]
            drift = field.G(xa)
            sig = _sigma_batch(sigma, xa)
            prop = xa + drift * cfg.dt + np.einsum("nij,nj->ni", sig, dw[idx])
            ok = np.isfinite(prop).all(axis=1) & (np.einsum("ni,ni->n", prop, prop) <= r2_cap)
            x[idx[ok]] = prop[ok]
            alive[idx[~ok]] = False
        if (n + 1) in snap_steps:
            out_pos[snap_i, lo:hi] = x
            out_alive[snap_i, lo:hi] = alive
            snap_i += 1


def simulate_paths(field: CoefficientField, sigma, cfg: SimConfig) -> PathEnsemble:
    """Run the ensemble and keep per-path states at the snapshot grid.

    ``sigma`` is a chol.SigmaField (or any callable mapping an (n, d) point
    batch to (n, d, d) dispersion matrices).  Identical (field, cfg) gives
    bitwise identical output for any FPK_THREADS setting.
    """
    if len(cfg.x0) != field.d:
        raise ValueError(f"x0 has dimension {len(cfg.x0)}, field has {field.d}")
    steps = cfg.snapshot_steps()
    snap_set = set(steps)
    m = len(steps)
    n, d = cfg.n_paths, cfg.d
    out_pos = np.empty((m, n, d))
    out_alive = np.empty((m, n), dtype=bool)
    n_blocks = (n + NOISE_BLOCK - 1) // NOISE_BLOCK
    workers = min(_threads(), n_blocks)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(
                pool.map(
                    lambda b: _run_block(field, sigma, cfg, b, snap_set, out_pos, out_alive),
                    range(n_blocks),
                )
            )
    else:
        for b in range(n_blocks):
            _run_block(field, sigma, cfg, b, snap_set, out_pos, out_alive)
    times = np.array([s * cfg.dt for s in steps])
    return PathEnsemble(config=cfg, times=times, positions=out_pos, alive=out_alive)


def euler_maruyama(field: CoefficientField, sigma, cfg: SimConfig) -> list[EmpiricalMeasure]:
    """Ensemble marginals at the snapshot times (one measure per snapshot)."""
    return simulate_paths(field, sigma, cfg).measures()


def mass_in_ball(m: EmpiricalMeasure, radius: float) -> float:
    """Fraction of the original ensemble alive and inside B_radius(0)."""
    if radius <= 0:
        raise ValueError("radius must be positive")
    if m.n_alive == 0:
        return 0.0
    inside = np.einsum("ni,ni->n", m.positions, m.positions) <= radius * radius
    return float(inside.sum() / m.n_paths)


@dataclass(frozen=True)
class RefinementLevel:
    level: int
    dt: float
    strong_error: float | None  # E || X_T(level) - X_T(level+1) ||
    dead_fraction: float

    def to_dict(self) -> dict:
        return {
            "level": self.level,
            "dt": self.dt,
            "strong_error": self.strong_error,
            "dead_fraction": self.dead_fraction,
        }


def _run_level(field, sigma, cfg: SimConfig, n_fine: int, stride: int):
    """One refinement level driven by the shared fine increments.

    Coefficients are frozen at the coarse boundaries (every ``stride`` fine
    steps) while the fine increments are applied one by one, so every level
    performs the same additions on the shared noise; for constant
    coefficients all levels then produce bitwise identical endpoints.
    """
    d = cfg.d
    n = cfg.n_paths
    dt_f = cfg.t_horizon / n_fine
    x = np.tile(np.asarray(cfg.x0), (n, 1))
    alive = np.ones(n, dtype=bool)
    drift = np.empty_like(x)
    sig = np.empty((n, d, d))
    r2_cap = cfg.r_explode * cfg.r_explode
    n_blocks = (n + NOISE_BLOCK - 1) // NOISE_BLOCK
    for k in range(n_fine):
        if k % stride == 0:
            start = x.copy()
            drift = field.G(x)
            sig = _sigma_batch(sigma, x)
        dw = np.empty((n, d))
        for b in range(n_blocks):
            lo = b * NOISE_BLOCK
            hi = min(lo + NOISE_BLOCK, n)
            dw[lo:hi] = _block_normals(cfg.seed, k, b, hi - lo, d)
        dw *= math.sqrt(dt_f)
        prop = x + drift * dt_f + np.einsum("nij,nj->ni", sig, dw)
        prop[~alive] = x[~alive]
        if (k + 1) % stride == 0:
            ok = np.isfinite(prop).all(axis=1) & (
                np.einsum("ni,ni->n", prop, prop) <= r2_cap
            )
            newly_dead = alive & ~ok
            prop[newly_dead] = start[newly_dead]
            alive &= ok | ~alive
        x = prop
    return x, alive


def refine_shared_noise(
    field: CoefficientField, sigma, cfg: SimConfig, n_levels: int
) -> list[RefinementLevel]:
    """Strong-error table across dyadic step refinements on shared noise.

    Level l uses step cfg.dt / 2^l; every level consumes the same underlying
    per-path Brownian increments (coarse increments are sums of adjacent
    fine ones), and the table reports E||X_T(l) - X_T(l+1)|| together with
    the dead-path fraction per level.
    """
    if n_levels < 2:
        raise ValueError("need at least two refinement levels")
    n_fine = cfg.n_steps * 2 ** (n_levels - 1)
    endpoints = []
    alive_masks = []
    for lev in range(n_levels):
        stride = 2 ** (n_levels - 1 - lev)
        x_t, alive = _run_level(field, sigma, cfg, n_fine, stride)
        endpoints.append(x_t)
        alive_masks.append(alive)
    table = []
    for lev in range(n_levels):
        err = None
        if lev + 1 < n_levels:
            both = alive_masks[lev] & alive_masks[lev + 1]
            if both.any():
                diff = endpoints[lev][both] - endpoints[lev + 1][both]
                err = float(np.mean(np.linalg.norm(diff, axis=1)))
        table.append(
            RefinementLevel(
                level=lev,
                dt=cfg.dt / 2**lev,
                strong_error=err,
                dead_fraction=float(1.0 - alive_masks[lev].mean()),
            )
        )
    return table
