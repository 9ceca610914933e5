"""Choosing the regularization weight.

Two entry points: a closed-form rule that balances the noise level per
sensor against the penalty,

    alpha^(1/2 + d/8) = sigma n^(-1/2) / ||f||_L2,

and a self-consistent iteration that replaces the unknown sigma ||f||
quantities with the data-fit residual and reconstruction norm of the
current iterate, solving one penalized problem per pass until the
weight stabilizes.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from wavesource import tikhonov
from wavesource.errors import DegenerateDataError, NumericalError
from wavesource.forward import ForwardOperatorSample

ALPHA_FLOOR = 1e-16
ALPHA_CEIL = 1.0
DEFAULT_TOL = 1e-3


def rule_alpha(sigma_est: float, n: int, d: int, f_norm_est: float) -> float:
    """Closed-form balancing rule for the regularization weight."""
    if sigma_est <= 0 or f_norm_est <= 0:
        raise ValueError("sigma and source norm estimates must be positive")
    if n < 1 or d not in (1, 2):
        raise ValueError("need n >= 1 sensors and dimension 1 or 2")
    exponent = 1.0 / (0.5 + d / 8.0)
    return float((sigma_est / (np.sqrt(n) * f_norm_est)) ** exponent)


def initial_alpha(n: int, d: int) -> float:
    """Dimension-scaled starting weight n^(-4/(d+4)) for the iteration."""
    return float(n ** (-4.0 / (d + 4.0)))


@dataclass
class SelectionTrace:
    """Per-iteration record of the self-consistent iteration."""

    alphas: list = field(default_factory=list)
    residuals: list = field(default_factory=list)
    f_norms: list = field(default_factory=list)
    stop_reason: str = ""

    @property
    def iterations(self) -> int:
        return len(self.alphas)

    @property
    def converged(self) -> bool:
        return self.stop_reason == "converged"

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["iter", "alpha", "residual_n", "f_norm"])
            for i, (a, r, fn) in enumerate(zip(self.alphas, self.residuals, self.f_norms)):
                writer.writerow([i, repr(a), repr(r), repr(fn)])


def update_alpha(residual: float, f_norm: float, n: int, d: int) -> float:
    """One step of the self-consistent map: the balancing rule with
    (sigma, ||f||) replaced by the current residual and iterate norm."""
    exponent = 1.0 / (0.5 + d / 8.0)
    return float((residual / (np.sqrt(n) * f_norm)) ** exponent)


def self_consistent(gram: ForwardOperatorSample, M, m, d: int,
                    max_iters: int = 50, tol: float = DEFAULT_TOL):
    """Iterate the data-driven update until the weight stabilizes.

    Starting from ``initial_alpha``, each pass solves the penalized
    problem at the current weight and maps (residual, iterate norm)
    through the balancing rule. Iteration stops when the relative
    change of the weight drops to ``tol`` (reason "converged") or after
    ``max_iters`` passes (reason "max-iters"). Returns the
    reconstruction at the last solved weight together with the trace.

    Raises
    ------
    DegenerateDataError
        If an iterate is numerically zero, which happens for near-zero
        data or an absurdly large weight; the update is undefined then.
    NumericalError
        If the updated weight escapes [1e-16, 1], signalling that the
        iteration is diverging rather than balancing.
    """
    values = tikhonov._data_values(m)
    n = values.size
    trace = SelectionTrace()
    alpha = initial_alpha(n, d)
    result = None
    for _ in range(max_iters):
        result = tikhonov.solve(gram, M, values, alpha)
        trace.alphas.append(alpha)
        trace.residuals.append(result.residual)
        trace.f_norms.append(result.source_norm)
        if result.source_norm < 1e-14:
            raise DegenerateDataError(
                "reconstruction collapsed to zero; the data do not support "
                "the self-consistent update (zero data or excessive weight)"
            )
        alpha_next = update_alpha(result.residual, result.source_norm, n, d)
        if not (ALPHA_FLOOR <= alpha_next <= ALPHA_CEIL):
            trace.stop_reason = "diverged"
            raise NumericalError(
                f"self-consistent update left [{ALPHA_FLOOR:g}, {ALPHA_CEIL:g}] "
                f"at iteration {trace.iterations} (alpha={alpha_next:.3e}); "
                f"trace so far: {trace.alphas}"
            )
        if abs(alpha - alpha_next) / alpha_next <= tol:
            trace.stop_reason = "converged"
            return result, trace
        alpha = alpha_next
    trace.stop_reason = "max-iters"
    return result, trace
