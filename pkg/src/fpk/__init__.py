"""Factor, check, simulate, verify: numerical companionship for second-order
diffusion generators L f = trace(A grad^2 f)/2 + <G, grad f>.

The library factors the diffusion matrix field pointwise into a lower
triangular sigma with sigma sigma^T = A, checks the growth and drift
conditions that certify no-explosion and existence of a finite limiting
law, simulates the associated SDE ensemble, and tests the defining weak
identity, cross-run uniqueness, conservativeness, and long-run convergence
on the simulated marginals.
"""

from .chol import (
    NotPositiveDefinite,
    SigmaFactor,
    cholesky_field,
    cholesky_point,
    spectral_gap_2d,
    sym_eigs,
)
from .coeffs import CoefficientField, apply_L, build_field, check_ellipticity
from .dsl import eval_expr, parse_expr
from .fpcheck import (
    ergodic_check,
    fp_residual,
    martingale_residual,
    uniqueness_compare,
)
from .grids import GridSpec
from .lyapunov import (
    LV,
    LyapunovFn,
    check_H2,
    check_conservative_sprin,
    check_dim2,
    check_invariant_sprin,
    check_lyapunov,
)
from .measure import TestFunction, default_bank, integrate, ks_distance, moments
from .sde import (
    EmpiricalMeasure,
    SimConfig,
    euler_maruyama,
    mass_in_ball,
    refine_shared_noise,
    simulate_paths,
)

__version__ = "0.1.0"

__all__ = [
    "CoefficientField",
    "EmpiricalMeasure",
    "GridSpec",
    "LV",
    "LyapunovFn",
    "NotPositiveDefinite",
    "SigmaFactor",
    "SimConfig",
    "TestFunction",
    "apply_L",
    "build_field",
    "check_H2",
    "check_conservative_sprin",
    "check_dim2",
    "check_ellipticity",
    "check_invariant_sprin",
    "check_lyapunov",
    "cholesky_field",
    "cholesky_point",
    "default_bank",
    "ergodic_check",
    "euler_maruyama",
    "eval_expr",
    "fp_residual",
    "integrate",
    "ks_distance",
    "martingale_residual",
    "mass_in_ball",
    "moments",
    "parse_expr",
    "refine_shared_noise",
    "simulate_paths",
    "spectral_gap_2d",
    "sym_eigs",
    "uniqueness_compare",
]
