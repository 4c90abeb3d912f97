"""Growth-condition checkers: coercive test functions with closed-form
derivatives, and sampled-grid verdicts for every inequality the package
knows how to certify.

"Almost everywhere" inequalities are not decidable numerically, so each
checker evaluates its left- and right-hand sides on an annulus grid of
radial shells times quasi-random directions (see grids.GridSpec) and
reports per-sample margins RHS - LHS.  Existential conditions ("there is a
constant K such that ...") are turned into reportable numbers by computing
the extremal feasible constant over the grid, and a divergence flag watches
whether the per-shell constant keeps growing toward the outer boundary,
which is the sampled signature of an inequality that no constant can save.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field

import numpy as np

from .chol import spectral_gap_2d_batch, sym_eigs_batch
from .coeffs import CoefficientField, apply_L_batch
from .grids import GridSpec

MARGIN_TOLERANCE = 1e-9
# log-log slope of the per-shell feasible constant (outer three shells)
# above which the condition is flagged divergent
GROWTH_FLAG_FACTOR = 0.5

LYAPUNOV_TAGS = ("V_log1p", "g_log_outer", "g_half_log_outer", "g_quad")


class LyapunovFn:
    """Coercive function with closed-form value / gradient / Hessian.

    Tags:
      V_log1p          ln(1 + ||y||^2)                  (everywhere smooth)
      g_log_outer      ln(||x||^2 v N0^2) + 2           (smooth off ||x|| = N0)
      g_half_log_outer ln(||x||^2 v N0^2)/2 + 1         (smooth off ||x|| = N0)
      g_quad           ||x||^2 / 2                      (everywhere smooth)

    The outer-log variants are constant inside B_N0; their derivative
    formulas are valid away from the sphere ||x|| = N0.
    """

    def __init__(self, tag: str, n0: int = 1):
        if tag not in LYAPUNOV_TAGS:
            raise ValueError(f"unknown tag {tag!r}")
        if n0 < 1:
            raise ValueError("N0 must be a positive integer")
        self.tag = tag
        self.n0 = int(n0)

    @property
    def nondiff_radius(self) -> float | None:
        return float(self.n0) if self.tag in ("g_log_outer", "g_half_log_outer") else None

    def _split(self, y: np.ndarray):
        y = np.asarray(y, dtype=float)
        squeeze = y.ndim == 1
        if squeeze:
            y = y[None, :]
        return y, np.sum(y * y, axis=1), squeeze

    def value(self, y) -> np.ndarray:
        y, r2, squeeze = self._split(y)
        if self.tag == "V_log1p":
            out = np.log1p(r2)
        elif self.tag == "g_log_outer":
            out = np.log(np.maximum(r2, float(self.n0) ** 2)) + 2.0
        elif self.tag == "g_half_log_outer":
            out = 0.5 * np.log(np.maximum(r2, float(self.n0) ** 2)) + 1.0
        else:
            out = 0.5 * r2
        return out[0] if squeeze else out

    def gradient(self, y) -> np.ndarray:
        y, r2, squeeze = self._split(y)
        if self.tag == "V_log1p":
            out = 2.0 * y / (1.0 + r2)[:, None]
        elif self.tag == "g_log_outer":
            out = np.where((r2 > self.n0**2)[:, None], 2.0 * y / np.maximum(r2, 1e-300)[:, None], 0.0)
        elif self.tag == "g_half_log_outer":
            out = np.where((r2 > self.n0**2)[:, None], y / np.maximum(r2, 1e-300)[:, None], 0.0)
        else:
            out = y.copy()
        return out[0] if squeeze else out

    def hessian(self, y) -> np.ndarray:
        y, r2, squeeze = self._split(y)
        n, d = y.shape
        eye = np.eye(d)
        yy = y[:, :, None] * y[:, None, :]
        if self.tag == "V_log1p":
            w = 1.0 + r2
            out = 2.0 * eye / w[:, None, None] - 4.0 * yy / (w * w)[:, None, None]
        elif self.tag in ("g_log_outer", "g_half_log_outer"):
            scale = 1.0 if self.tag == "g_log_outer" else 0.5
            r2c = np.maximum(r2, 1e-300)
            outer = 2.0 * scale * eye / r2c[:, None, None] - 4.0 * scale * yy / (r2c * r2c)[:, None, None]
            out = np.where((r2 > self.n0**2)[:, None, None], outer, 0.0)
        else:
            out = np.broadcast_to(eye, (n, d, d)).copy()
        return out[0] if squeeze else out


def v_log1p() -> LyapunovFn:
    return LyapunovFn("V_log1p")


def g_log_outer(n0: int) -> LyapunovFn:
    return LyapunovFn("g_log_outer", n0)


def g_half_log_outer(n0: int) -> LyapunovFn:
    return LyapunovFn("g_half_log_outer", n0)


def g_quad() -> LyapunovFn:
    return LyapunovFn("g_quad")


def LV(field: CoefficientField, y) -> float:
    """L applied to V(y) = ln(1 + ||y||^2), by the closed formula.

    LV = trace A/(1+r^2) - 2 <A y, y>/(1+r^2)^2 + 2 <G, y>/(1+r^2); this is
    an independent code path from apply_L on the V_log1p handle and the two
    must agree to 1e-12.
    """
    y = np.asarray(y, dtype=float)
    return float(LV_batch(field, y[None, :])[0])


def LV_batch(field: CoefficientField, points: np.ndarray) -> np.ndarray:
    points = np.asarray(points, dtype=float)
    a = field.A(points)
    g = field.G(points)
    r2 = np.sum(points * points, axis=1)
    w = 1.0 + r2
    tr = np.trace(a, axis1=1, axis2=2)
    ayy = np.einsum("nij,nj,ni->n", a, points, points)
    gy = np.einsum("ni,ni->n", g, points)
    return tr / w - 2.0 * ayy / (w * w) + 2.0 * gy / w


@dataclass
class ConditionReport:
    """Margins and verdict of one growth condition on one sampled grid.

    margin >= 0 means the inequality holds at that sample; the verdict is
    PASS iff every margin clears -margin_tolerance and, for existential
    conditions, the divergence flag stayed off.  ``feasible_constant`` is
    the minimal K/M that works on the grid for conditions that cap growth
    from above, and the maximal workable M for the "drift at least this
    negative" conditions (feasible_kind records which reading applies).
    """

    condition: str
    passed: bool
    n0: int
    r_max: float
    seed: int
    n_samples: int
    constant: float | None  # the constant margins were computed with
    feasible_constant: float | None
    feasible_kind: str | None  # "min" or "max"
    margin_min: float
    margin_tolerance: float
    divergent: bool
    shell_radii: np.ndarray = dc_field(repr=False, default=None)
    shell_constants: np.ndarray | None = dc_field(repr=False, default=None)
    sample_radii: np.ndarray = dc_field(repr=False, default=None)
    sample_margins: np.ndarray = dc_field(repr=False, default=None)
    worst_points: list = dc_field(default_factory=list)
    n_resampled: int = 0
    extras: dict = dc_field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "condition": self.condition,
            "passed": self.passed,
            "N0": self.n0,
            "r_max": self.r_max,
            "seed": self.seed,
            "n_samples": self.n_samples,
            "constant": self.constant,
            "feasible_constant": self.feasible_constant,
            "feasible_kind": self.feasible_kind,
            "margin_min": self.margin_min,
            "margin_tolerance": self.margin_tolerance,
            "divergent": self.divergent,
            "n_resampled": self.n_resampled,
            "worst_points": [
                {"point": list(p), "margin": m} for p, m in self.worst_points
            ],
            "extras": self.extras,
        }


def _worst(points: np.ndarray, margins: np.ndarray, k: int = 10) -> list:
    order = np.argsort(margins, kind="stable")[:k]
    return [(points[i].tolist(), float(margins[i])) for i in order]


def _shell_max(values: np.ndarray, shell: np.ndarray, n_shells: int) -> np.ndarray:
    out = np.full(n_shells, -np.inf)
    np.maximum.at(out, shell, values)
    return out


def _divergent(shell_radii: np.ndarray, shell_consts: np.ndarray) -> bool:
    """Monotone growth of the per-shell feasible constant toward the edge.

    Compares the outer three shells on a log-log scale: flagged when the
    constants are positive, strictly increasing, and their log-log slope
    exceeds GROWTH_FLAG_FACTOR.  A condition that some constant genuinely
    saves settles to a flat (or falling) shell profile instead.
    """
    if shell_consts.size < 3:
        return False
    k1, k2, k3 = shell_consts[-3:]
    r1, _, r3 = shell_radii[-3:]
    if not (k1 > 0 and k2 > k1 and k3 > k2):
        return False
    slope = math.log(k3 / k1) / math.log(r3 / r1)
    return slope > GROWTH_FLAG_FACTOR


def _report(
    condition: str,
    grid: GridSpec,
    points: np.ndarray,
    radii: np.ndarray,
    margins: np.ndarray,
    constant: float | None,
    feasible_constant: float | None,
    feasible_kind: str | None,
    shell_constants: np.ndarray | None,
    shell_radii: np.ndarray,
    margin_tolerance: float,
    n_resampled: int = 0,
    extras: dict | None = None,
    existential: bool = False,
) -> ConditionReport:
    if not np.all(np.isfinite(margins)):
        raise ArithmeticError(f"non-finite margin in condition {condition}")
    divergent = (
        _divergent(shell_radii, shell_constants)
        if shell_constants is not None
        else False
    )
    margins_ok = bool(np.min(margins) >= -margin_tolerance)
    passed = (margins_ok and not divergent) if existential else margins_ok
    return ConditionReport(
        condition=condition,
        passed=passed,
        n0=grid.n0,
        r_max=grid.r_max,
        seed=grid.seed,
        n_samples=int(margins.size),
        constant=constant,
        feasible_constant=feasible_constant,
        feasible_kind=feasible_kind,
        margin_min=float(np.min(margins)),
        margin_tolerance=margin_tolerance,
        divergent=divergent,
        shell_radii=shell_radii,
        shell_constants=shell_constants,
        sample_radii=radii,
        sample_margins=margins,
        worst_points=_worst(points, margins),
        n_resampled=n_resampled,
        extras=extras or {},
    )


def _operator_norms(field: CoefficientField, points: np.ndarray) -> np.ndarray:
    # A is symmetric, so the operator norm is the largest |eigenvalue|
    eigs = sym_eigs_batch(field.A(points))
    return np.max(np.abs(eigs), axis=1)


def check_H2(
    field: CoefficientField,
    grid: GridSpec,
    margin_tolerance: float = MARGIN_TOLERANCE,
) -> ConditionReport:
    """Joint growth cap on ||A(x)|| (all x) and <G(x), x> (outside B_N0).

    Both sides are compared against K*(1 + ||x||^2 ln(1 + ||x||^2)) with one
    shared K; the report carries the minimal feasible K on the grid and
    margins computed at that K.  Divergence of the per-shell minimal K marks
    the condition as unsatisfiable regardless of K.
    """
    d = field.d
    pts_in, r_in, _ = grid.inner(d)
    pts_out, r_out, shell = grid.annulus(d)[:3]
    shell_radii = grid.shell_radii()

    pts_a = np.vstack([pts_in, pts_out])
    r_a = np.concatenate([r_in, r_out])
    lhs_a = _operator_norms(field, pts_a)
    env_a = 1.0 + r_a**2 * np.log1p(r_a**2)

    lhs_g = np.einsum("ni,ni->n", field.G(pts_out), pts_out)
    env_g = 1.0 + r_out**2 * np.log1p(r_out**2)

    ratio_a = lhs_a / env_a
    ratio_g = lhs_g / env_g
    k_min = float(max(np.max(ratio_a), np.max(ratio_g)))

    # per-shell minimal K on the annulus (the trend detector input)
    shell_ratio = np.maximum(
        _shell_max(ratio_a[len(r_in):], shell, shell_radii.size),
        _shell_max(ratio_g, shell, shell_radii.size),
    )

    margins = np.concatenate([k_min * env_a - lhs_a, k_min * env_g - lhs_g])
    points = np.vstack([pts_a, pts_out])
    radii = np.concatenate([r_a, r_out])
    return _report(
        "h2", grid, points, radii, margins,
        constant=k_min,
        feasible_constant=k_min,
        feasible_kind="min",
        shell_constants=shell_ratio,
        shell_radii=shell_radii,
        margin_tolerance=margin_tolerance,
        extras={"k_diffusion": float(np.max(ratio_a)), "k_drift": float(np.max(ratio_g))},
        existential=True,
    )


def _sprin_lhs(field: CoefficientField, points: np.ndarray, r2: np.ndarray) -> np.ndarray:
    a = field.A(points)
    g = field.G(points)
    axx = np.einsum("nij,nj,ni->n", a, points, points)
    tr = np.trace(a, axis1=1, axis2=2)
    gx = np.einsum("ni,ni->n", g, points)
    return -axx / r2 + 0.5 * tr + gx


def check_conservative_sprin(
    field: CoefficientField,
    m_const: float,
    grid: GridSpec,
    margin_tolerance: float = MARGIN_TOLERANCE,
) -> ConditionReport:
    """No-explosion drift condition:
    -<Ax,x>/||x||^2 + trace(A)/2 + <G,x> <= M ||x||^2 (ln||x|| + 1) outside B_N0.
    """
    if m_const <= 0:
        raise ValueError("M must be positive")
    d = field.d
    pts, r, shell, n_res = grid.annulus(d)
    r2 = r * r
    lhs = _sprin_lhs(field, pts, r2)
    env = r2 * (np.log(r) + 1.0)
    margins = m_const * env - lhs
    ratio = lhs / env
    shell_radii = grid.shell_radii()
    return _report(
        "cons33", grid, pts, r, margins,
        constant=m_const,
        feasible_constant=float(np.max(ratio)),
        feasible_kind="min",
        shell_constants=_shell_max(ratio, shell, shell_radii.size),
        shell_radii=shell_radii,
        margin_tolerance=margin_tolerance,
        n_resampled=n_res,
    )


def check_invariant_sprin(
    field: CoefficientField,
    variant: int,
    m_const: float,
    grid: GridSpec,
    margin_tolerance: float = MARGIN_TOLERANCE,
) -> ConditionReport:
    """Finite-invariant-measure drift conditions outside B_N0.

    variant 1:  -<Ax,x>/||x||^2 + trace(A)/2 + <G,x> <= -M ||x||^2
    variant 2:  trace(A)/2 + <G,x> <= -M
    """
    if variant not in (1, 2):
        raise ValueError("variant must be 1 or 2")
    if m_const <= 0:
        raise ValueError("M must be positive")
    d = field.d
    pts, r, shell, n_res = grid.annulus(d)
    r2 = r * r
    shell_radii = grid.shell_radii()
    if variant == 1:
        lhs = _sprin_lhs(field, pts, r2)
        margins = -m_const * r2 - lhs
        # feasible M's are (0, -max(lhs/r2)]; report the largest workable one
        feas = float(-np.max(lhs / r2))
        shell_consts = _shell_max(lhs / r2, shell, shell_radii.size)
    else:
        a = field.A(pts)
        lhs = 0.5 * np.trace(a, axis1=1, axis2=2) + np.einsum(
            "ni,ni->n", field.G(pts), pts
        )
        margins = -m_const - lhs
        feas = float(-np.max(lhs))
        shell_consts = _shell_max(lhs, shell, shell_radii.size)
    return _report(
        f"inv3{5 + variant}", grid, pts, r, margins,
        constant=m_const,
        feasible_constant=feas,
        feasible_kind="max",
        shell_constants=shell_consts,
        shell_radii=shell_radii,
        margin_tolerance=margin_tolerance,
        n_resampled=n_res,
    )


def check_lyapunov(
    field: CoefficientField,
    g: LyapunovFn,
    mode: str,
    m_const: float,
    grid: GridSpec,
    margin_tolerance: float = MARGIN_TOLERANCE,
) -> ConditionReport:
    """Lg <= M g (mode "conservative") or Lg <= -M (mode "invariant"),
    outside B_N0, with Lg evaluated through apply_L on g's closed forms.
    """
    if mode not in ("conservative", "invariant"):
        raise ValueError("mode must be 'conservative' or 'invariant'")
    if m_const <= 0:
        raise ValueError("M must be positive")
    d = field.d
    pts, r, shell, n_res = grid.annulus(d, nondiff_radius=g.nondiff_radius)
    lg = apply_L_batch(field, g, pts)
    shell_radii = grid.shell_radii()
    if mode == "conservative":
        gval = g.value(pts)
        if np.any(gval <= 0):
            raise ArithmeticError("Lyapunov comparison needs g > 0 on the grid")
        margins = m_const * gval - lg
        ratio = lg / gval
        feas = float(np.max(ratio))
        kind = "min"
        shell_consts = _shell_max(ratio, shell, shell_radii.size)
    else:
        margins = -m_const - lg
        feas = float(-np.max(lg))
        kind = "max"
        shell_consts = _shell_max(lg, shell, shell_radii.size)
    return _report(
        f"lyap-{g.tag}-{mode}", grid, pts, r, margins,
        constant=m_const,
        feasible_constant=feas,
        feasible_kind=kind,
        shell_constants=shell_consts,
        shell_radii=shell_radii,
        margin_tolerance=margin_tolerance,
        n_resampled=n_res,
    )


def check_dim2(
    field: CoefficientField,
    mode: str,
    m_const: float,
    grid: GridSpec,
    margin_tolerance: float = MARGIN_TOLERANCE,
) -> ConditionReport:
    """d = 2 coefficient-gap conditions.

    LHS = |a11 - a22|/2 + |a12| + <G, x>; RHS is M ||x||^2 (ln||x|| + 1)
    in mode "conservative" and -M ||x||^2 in mode "invariant".  The report
    also carries half the exact eigenvalue gap next to the coefficient
    bound used in the LHS, for diagnostic comparison.
    """
    if field.d != 2:
        raise ValueError("dim-2 check requires a field with d == 2")
    if mode not in ("conservative", "invariant"):
        raise ValueError("mode must be 'conservative' or 'invariant'")
    if m_const <= 0:
        raise ValueError("M must be positive")
    pts, r, shell, n_res = grid.annulus(2)
    r2 = r * r
    a = field.A(pts)
    gap, bound = spectral_gap_2d_batch(a)
    gx = np.einsum("ni,ni->n", field.G(pts), pts)
    lhs = 0.5 * bound + gx
    shell_radii = grid.shell_radii()
    if mode == "conservative":
        env = r2 * (np.log(r) + 1.0)
        margins = m_const * env - lhs
        ratio = lhs / env
        feas = float(np.max(ratio))
        kind = "min"
        shell_consts = _shell_max(ratio, shell, shell_radii.size)
    else:
        margins = -m_const * r2 - lhs
        feas = float(-np.max(lhs / r2))
        kind = "max"
        shell_consts = _shell_max(lhs / r2, shell, shell_radii.size)
    return _report(
        f"dim2-{mode}", grid, pts, r, margins,
        constant=m_const,
        feasible_constant=feas,
        feasible_kind=kind,
        shell_constants=shell_consts,
        shell_radii=shell_radii,
        margin_tolerance=margin_tolerance,
        n_resampled=n_res,
        extras={
            "max_half_gap": float(np.max(0.5 * gap)),
            "max_half_bound": float(np.max(0.5 * bound)),
        },
    )
