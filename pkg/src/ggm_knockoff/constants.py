"""Numerical tolerances shared by the library and its tests."""

from dataclasses import dataclass


@dataclass(frozen=True)
class Tolerances:
    # Cholesky pivot floor, relative to the largest diagonal entry.
    cholesky_pivot: float = 1e-12
    # Jacobi stops once the off-diagonal Frobenius norm drops below this
    # fraction of the input's Frobenius norm.
    jacobi_offdiag: float = 1e-12
    jacobi_max_sweeps: int = 100
    # Coordinate descent: max absolute coefficient change per sweep.
    lasso_tol: float = 1e-8
    lasso_max_sweeps: int = 10_000
    lasso_kkt: float = 1e-6
    # Numerical zero used when reading edge sets off Omega / Sigma.
    marginal_zero: float = 1e-12
    block_zero: float = 1e-10
    clr_row_sum: float = 1e-10


TOL = Tolerances()

# Asymptotic Kolmogorov constant at alpha = 0.001, sqrt(-ln(alpha / 2) / 2).
KS_C_ALPHA_001 = 1.95

WILCOXON_EXACT_MAX_N = 12
WILCOXON_MIN_PAIRS = 6
