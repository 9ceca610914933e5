"""L2-penalized least-squares reconstruction from sensor data.

The reconstruction minimizes over the FE space

    J(f) = ||A f - m||_n^2 + alpha ||f||_L2^2,

whose normal equations are (alpha M + Ghat) c = ahat with the
normalized products Ghat = (1/n) A^T A and ahat = (1/n) A^T m supplied
by the forward Gram assembly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as la
import scipy.sparse.linalg as spla

from wavesource.errors import NumericalError
from wavesource.forward import ForwardOperatorSample
from wavesource.measure import MeasurementSet, empirical_norm

DIRECT_SIZE_LIMIT = 5000


def _data_values(m) -> np.ndarray:
    if isinstance(m, MeasurementSet):
        return m.values
    return np.asarray(m, dtype=float)


@dataclass
class ReconstructionResult:
    """Reconstruction with the diagnostics the selection rules need."""

    coefficients: np.ndarray
    alpha: float
    residual: float
    source_norm: float
    diagnostics: dict = field(default_factory=dict)


def solve(gram: ForwardOperatorSample, M, m, alpha: float,
          method: str | None = None) -> ReconstructionResult:
    """Solve the penalized normal equations.

    Parameters
    ----------
    gram : assembled forward operator sample.
    M : sparse mass matrix on the same dofs.
    m : MeasurementSet or plain value array.
    alpha : regularization weight, strictly positive (alpha = 0 would
        leave a possibly singular system).
    method : "direct" or "cg"; default picks the dense Cholesky path
        up to 5000 dofs and preconditioned CG beyond.

    Raises
    ------
    NumericalError
        If the factorization fails or CG does not reach its tolerance.
    """
    if alpha <= 0:
        raise ValueError("alpha must be strictly positive")
    values = _data_values(m)
    if values.size != gram.n:
        raise ValueError("data length does not match the sensor count")
    n_dofs = gram.n_dofs
    if method is None:
        method = "direct" if n_dofs <= DIRECT_SIZE_LIMIT else "cg"

    rhs = gram.rhs(values)
    diagnostics = {"method": method}
    if method == "direct":
        system = alpha * M.toarray() + gram.gram
        try:
            cho = la.cho_factor(system, lower=True)
        except la.LinAlgError as exc:
            raise NumericalError(f"normal-equation factorization failed: {exc}") from exc
        c = la.cho_solve(cho, rhs)
        d = np.abs(np.diag(cho[0]))
        diagnostics["condition_estimate"] = float((d.max() / d.min()) ** 2)
    elif method == "cg":
        M_csc = M.tocsc()
        op = spla.LinearOperator(
            (n_dofs, n_dofs), matvec=lambda v: alpha * (M_csc @ v) + gram.gram @ v
        )
        mass_lu = spla.splu(M_csc)
        precond = spla.LinearOperator((n_dofs, n_dofs), matvec=lambda v: mass_lu.solve(v) / alpha)
        iters = 0

        def count(_):
            nonlocal iters
            iters += 1

        c, info = spla.cg(op, rhs, rtol=1e-10, atol=0.0, maxiter=10 * n_dofs,
                          M=precond, callback=count)
        diagnostics["iterations"] = iters
        if info != 0:
            raise NumericalError(
                f"preconditioned CG did not converge (info={info}, iterations={iters})"
            )
    else:
        raise ValueError(f"unknown method {method!r}")

    residual = empirical_norm(gram.sensor_values(c) - values)
    source_norm = float(np.sqrt(max(c @ (M @ c), 0.0)))
    return ReconstructionResult(c, float(alpha), residual, source_norm, diagnostics)


def objective(gram: ForwardOperatorSample, M, m, f, alpha: float) -> float:
    """J(f) = ||A f - m||_n^2 + alpha ||f||_L2^2 for any coefficients f."""
    values = _data_values(m)
    f = np.asarray(f, dtype=float)
    mis = empirical_norm(gram.sensor_values(f) - values)
    return mis**2 + alpha * float(f @ (M @ f))


def normal_equation_residual(gram: ForwardOperatorSample, M, m, result: ReconstructionResult) -> float:
    """Relative residual of (alpha M + Ghat) c = ahat; a solver sanity check."""
    values = _data_values(m)
    rhs = gram.rhs(values)
    lhs = result.alpha * (M @ result.coefficients) + gram.gram @ result.coefficients
    denom = np.linalg.norm(rhs)
    if denom == 0.0:
        return float(np.linalg.norm(lhs))
    return float(np.linalg.norm(lhs - rhs) / denom)
