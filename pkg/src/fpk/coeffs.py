"""Coefficient fields (A, G), the operator L, and the ellipticity check.

A field packages the diffusion matrix A(x) (symmetric d x d) and the drift
G(x) (d-vector) behind pure vectorized evaluators.  Fields come from a small
built-in catalog or from user expressions in the DSL; in the expression case
only the lower-triangular entries a_ij (i >= j) are supplied and the rest is
mirrored, so A(x) is symmetric by construction at every point.

Regularity beyond pointwise values (Sobolev membership of the entries) is
taken on declaration: the ``claimed`` tag set records what the field is
supposed to satisfy, and the checkers in :mod:`fpk.lyapunov` probe those
claims numerically.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import dsl
from .grids import ball_points

CATALOG_NAMES = ("bm", "ou", "dim2_demo", "cubic_blowup")

PD_TOLERANCE = 1e-10  # smallest admissible sampled eigenvalue of A


class FieldError(ValueError):
    """Bad field configuration (missing entry, dimension mismatch, ...)."""


@dataclass(frozen=True)
class CoefficientField:
    """Dimension plus pure evaluators for A and G.

    ``a_fn(points)`` maps an (n, d) batch to (n, d, d) symmetric matrices and
    ``g_fn(points)`` to (n, d) drift vectors.  ``claimed`` carries declared
    hypothesis tags from {"H1", "H2", "conservative", "invariant"}.  ``p``
    is the declared integrability exponent of the drift; it is metadata only.
    """

    d: int
    a_fn: object
    g_fn: object
    source: str
    claimed: frozenset = frozenset()
    constant_a: bool = False
    exprs: dict | None = None
    p: float | None = None

    def A(self, x) -> np.ndarray:
        """A(x); accepts a point (d,) or a batch (n, d)."""
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            out = self.a_fn(x[None, :])[0]
        else:
            out = self.a_fn(x)
        if not np.all(np.isfinite(out)):
            raise FieldError(f"non-finite diffusion entry on field {self.source!r}")
        return out

    def G(self, x) -> np.ndarray:
        """G(x); accepts a point (d,) or a batch (n, d)."""
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            out = self.g_fn(x[None, :])[0]
        else:
            out = self.g_fn(x)
        if not np.all(np.isfinite(out)):
            raise FieldError(f"non-finite drift entry on field {self.source!r}")
        return out


@dataclass(frozen=True)
class EllipticityEstimate:
    """Sampled two-sided ellipticity bounds on one ball."""

    center: tuple
    radius: float
    lambda_min: float
    lambda_max: float
    n_samples: int
    passed: bool
    pd_tolerance: float
    worst_points: tuple = ()

    def to_dict(self) -> dict:
        return {
            "center": list(self.center),
            "radius": self.radius,
            "lambda_min": self.lambda_min,
            "lambda_max": self.lambda_max,
            "n_samples": self.n_samples,
            "passed": self.passed,
            "pd_tolerance": self.pd_tolerance,
            "worst_points": [list(p) for p in self.worst_points],
        }


def _catalog_field(name: str, d: int) -> CoefficientField:
    if name == "bm":
        eye = np.eye(d)
        return CoefficientField(
            d=d,
            a_fn=lambda p: np.broadcast_to(eye, (p.shape[0], d, d)).copy(),
            g_fn=lambda p: np.zeros_like(p),
            source="catalog:bm",
            claimed=frozenset({"H1", "H2", "conservative"}),
            constant_a=True,
        )
    if name == "ou":
        two_eye = 2.0 * np.eye(d)
        return CoefficientField(
            d=d,
            a_fn=lambda p: np.broadcast_to(two_eye, (p.shape[0], d, d)).copy(),
            g_fn=lambda p: -p,
            source="catalog:ou",
            claimed=frozenset({"H1", "H2", "conservative", "invariant"}),
            constant_a=True,
        )
    if name == "dim2_demo":
        if d != 2:
            raise FieldError("catalog entry 'dim2_demo' requires dim == 2")

        def a_fn(p):
            out = np.zeros((p.shape[0], 2, 2))
            out[:, 0, 0] = 1.0 + p[:, 1] ** 2
            out[:, 1, 1] = 1.0 + p[:, 0] ** 2
            return out

        return CoefficientField(
            d=2,
            a_fn=a_fn,
            g_fn=lambda p: -p,
            source="catalog:dim2_demo",
            claimed=frozenset({"H1", "H2", "conservative", "invariant"}),
        )
    if name == "cubic_blowup":
        return CoefficientField(
            d=d,
            a_fn=lambda p: np.broadcast_to(np.eye(d), (p.shape[0], d, d)).copy(),
            g_fn=lambda p: p**3,
            source="catalog:cubic_blowup",
            claimed=frozenset({"H1"}),
            constant_a=True,
        )
    raise FieldError(f"unknown catalog entry {name!r} (have {', '.join(CATALOG_NAMES)})")


def _expression_field(cfg: dict, d: int) -> CoefficientField:
    a_cfg = cfg["A"]
    g_cfg = cfg["G"]
    if not isinstance(a_cfg, dict):
        raise FieldError("'A' must map entry names a11, a21, ... to expressions")
    if not isinstance(g_cfg, list) or len(g_cfg) != d:
        raise FieldError(f"'G' must be a list of {d} expressions")

    lower: dict[tuple[int, int], dsl.Expr] = {}
    seen = set()
    for key, src in a_cfg.items():
        if len(key) != 3 or key[0] != "a" or not key[1:].isdigit():
            raise FieldError(f"bad diffusion entry name {key!r} (expected e.g. 'a21')")
        i, j = int(key[1]), int(key[2])
        if not (1 <= j <= i <= d):
            raise FieldError(
                f"entry {key!r} out of range: need 1 <= j <= i <= {d} (lower triangle only)"
            )
        lower[(i - 1, j - 1)] = dsl.parse_expr(src, d)
        seen.add((i, j))
    for i in range(1, d + 1):
        for j in range(1, i + 1):
            if (i, j) not in seen:
                raise FieldError(f"missing diffusion entry a{i}{j}")
    g_exprs = [dsl.parse_expr(src, d) for src in g_cfg]

    def a_fn(p):
        n = p.shape[0]
        out = np.zeros((n, d, d))
        for (i, j), e in lower.items():
            v = dsl.eval_expr(e, p)
            out[:, i, j] = v
            if i != j:
                out[:, j, i] = v
        return out

    def g_fn(p):
        out = np.empty((p.shape[0], d))
        for i, e in enumerate(g_exprs):
            out[:, i] = dsl.eval_expr(e, p)
        return out

    exprs = {f"a{i+1}{j+1}": dsl.pretty(e) for (i, j), e in lower.items()}
    exprs.update({f"g{i+1}": dsl.pretty(e) for i, e in enumerate(g_exprs)})
    constant = all(isinstance(e, dsl.Num) for e in lower.values())
    return CoefficientField(
        d=d,
        a_fn=a_fn,
        g_fn=g_fn,
        source="expressions",
        claimed=frozenset(cfg.get("claimed", ())),
        constant_a=constant,
        exprs=exprs,
    )


def build_field(cfg: dict) -> CoefficientField:
    """Build a field from a config dict (see the JSON schema in the README)."""
    if "dim" not in cfg:
        raise FieldError("field config needs 'dim'")
    d = cfg["dim"]
    if not isinstance(d, int) or isinstance(d, bool) or d < 2:
        raise FieldError("dimension must be an integer >= 2")
    if "catalog" in cfg:
        params = cfg.get("params", {})
        if params:
            raise FieldError(f"catalog entries take no params, got {sorted(params)}")
        fld = _catalog_field(cfg["catalog"], d)
    elif "A" in cfg and "G" in cfg:
        fld = _expression_field(cfg, d)
    else:
        raise FieldError("field config needs either 'catalog' or both 'A' and 'G'")
    if "p" in cfg:
        fld = CoefficientField(
            d=fld.d, a_fn=fld.a_fn, g_fn=fld.g_fn, source=fld.source,
            claimed=fld.claimed, constant_a=fld.constant_a, exprs=fld.exprs,
            p=float(cfg["p"]),
        )
    return fld


def apply_L(field: CoefficientField, f, x) -> float:
    """Lf(x) = 1/2 trace(A(x) Hess f(x)) + <G(x), grad f(x)>.

    ``f`` must expose value/gradient/hessian handles that accept point
    batches (see measure.TestFunction and lyapunov.LyapunovFn).
    """
    x = np.asarray(x, dtype=float)
    return float(apply_L_batch(field, f, x[None, :])[0])


def apply_L_batch(field: CoefficientField, f, points: np.ndarray) -> np.ndarray:
    points = np.asarray(points, dtype=float)
    a = field.A(points)
    g = field.G(points)
    hess = f.hessian(points)
    grad = f.gradient(points)
    return 0.5 * np.einsum("nij,nji->n", a, hess) + np.einsum("ni,ni->n", g, grad)


def check_ellipticity(
    field: CoefficientField,
    center,
    radius: float,
    n_samples: int = 512,
    rng_seed: int = 0,
    pd_tolerance: float = PD_TOLERANCE,
) -> EllipticityEstimate:
    """Sampled lower/upper ellipticity constants of A on one ball.

    Failure (smallest sampled eigenvalue <= pd_tolerance) is reported in the
    estimate, not raised; a non-finite A entry does raise.
    """
    from .chol import sym_eigs_batch

    if n_samples < 1:
        raise ValueError("need n_samples >= 1")
    if radius <= 0:
        raise ValueError("need radius > 0")
    pts = ball_points(center, radius, n_samples, seed=rng_seed)
    eigs = sym_eigs_batch(field.A(pts))
    low = eigs[:, 0]
    high = eigs[:, -1]
    order = np.argsort(low, kind="stable")[:5]
    lam = float(low.min())
    return EllipticityEstimate(
        center=tuple(np.asarray(center, dtype=float)),
        radius=float(radius),
        lambda_min=lam,
        lambda_max=float(high.max()),
        n_samples=n_samples,
        passed=bool(lam > pd_tolerance),
        pd_tolerance=pd_tolerance,
        worst_points=tuple(tuple(pts[i]) for i in order),
    )
