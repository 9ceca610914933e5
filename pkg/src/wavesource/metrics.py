"""Error norms on the FE space and the L2 projection of exact sources.

The dual norm used for reconstruction errors is the discrete H^-1 norm

    ||e||_-1 = sup_{v in V_h} (e, v) / |v|_1 = sqrt((M e)^T K^{-1} (M e)),

computed by one stiffness solve. On interpolated Laplacian
eigenfunctions it reproduces mu^{-1/2} times the L2 norm, which the
tests pin down.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.sparse.linalg import splu

from wavesource.mesh import FEMatrices


def l2_norm(M, coefficients) -> float:
    """sqrt(c^T M c): the L2 norm of the FE function with coefficients c."""
    c = np.asarray(coefficients, dtype=float)
    return float(np.sqrt(max(c @ (M @ c), 0.0)))


def h_minus1_norm(M, K, coefficients) -> float:
    """Discrete H^-1 norm of the FE function with coefficients c.

    Solves K w = M c and returns sqrt((M c)^T w); K is the Dirichlet
    stiffness matrix, so this is the dual norm of H^1_0 restricted to
    the FE space.
    """
    c = np.asarray(coefficients, dtype=float)
    b = M @ c
    w = splu(K.tocsc()).solve(b)
    return float(np.sqrt(max(b @ w, 0.0)))


def _gauss_panel(a: float, b: float, order: int = 4):
    nodes, weights = np.polynomial.legendre.leggauss(order)
    mid, half = 0.5 * (a + b), 0.5 * (b - a)
    return mid + half * nodes, half * weights


def _graded_panels(a: float, b: float, toward_left: bool, levels: int = 20):
    """Split [a, b] into geometrically graded panels accumulating at one
    endpoint, to integrate fractional-power singularities accurately."""
    frac = 0.5 ** np.arange(levels, 0, -1)
    cuts = np.concatenate([[0.0], frac, [1.0]])
    if not toward_left:
        cuts = 1.0 - cuts[::-1]
    return a + (b - a) * cuts


def load_vector(matrices: FEMatrices, fn) -> np.ndarray:
    """Interior load vector b_j = (f, phi_j) by per-element quadrature.

    In 1d the elements touching the domain boundary are subdivided
    geometrically toward it, and every element uses composite
    tenth-order Gauss panels.  Sources with fractional-power endpoint
    behavior have derivatives that grow toward the boundary, so even
    nearby elements need the extra panels to reach near machine
    accuracy.
    """
    mesh = matrices.mesh
    b = np.zeros(mesh.vertices.shape[0])
    if mesh.dim == 1:
        xs = mesh.vertices[:, 0]
        for el in mesh.elements:
            a, c = xs[el[0]], xs[el[1]]
            touches_left = a <= 0.0 + 1e-15
            touches_right = c >= 1.0 - 1e-15
            if touches_left or touches_right:
                cuts = _graded_panels(a, c, toward_left=touches_left)
            else:
                cuts = np.linspace(a, c, 5)
            for lo, hi in zip(cuts[:-1], cuts[1:]):
                x, w = _gauss_panel(lo, hi, order=10)
                fv = np.asarray(fn(x), dtype=float)
                lam0 = (c - x) / (c - a)
                b[el[0]] += np.sum(w * fv * lam0)
                b[el[1]] += np.sum(w * fv * (1.0 - lam0))
    else:
        # degree-4 rule on the reference triangle (barycentric points)
        bary = np.array(
            [
                [0.816847572980459, 0.091576213509771, 0.091576213509771],
                [0.091576213509771, 0.816847572980459, 0.091576213509771],
                [0.091576213509771, 0.091576213509771, 0.816847572980459],
                [0.108103018168070, 0.445948490915965, 0.445948490915965],
                [0.445948490915965, 0.108103018168070, 0.445948490915965],
                [0.445948490915965, 0.445948490915965, 0.108103018168070],
            ]
        )
        wts = np.array([0.109951743655322] * 3 + [0.223381589678011] * 3)
        pts = mesh.vertices[mesh.elements]
        p0, p1, p2 = pts[:, 0], pts[:, 1], pts[:, 2]
        area = 0.5 * np.abs(
            (p1[:, 0] - p0[:, 0]) * (p2[:, 1] - p0[:, 1])
            - (p1[:, 1] - p0[:, 1]) * (p2[:, 0] - p0[:, 0])
        )
        for q in range(bary.shape[0]):
            xq = bary[q, 0] * p0 + bary[q, 1] * p1 + bary[q, 2] * p2
            fv = np.asarray(fn(xq[:, 0], xq[:, 1]), dtype=float)
            for loc in range(3):
                np.add.at(b, mesh.elements[:, loc], wts[q] * area * fv * bary[q, loc])
    return b[mesh.interior]


def project_l2(matrices: FEMatrices, fn) -> np.ndarray:
    """Coefficients of the L2 projection of a callable onto the FE space."""
    b = load_vector(matrices, fn)
    return splu(matrices.M.tocsc()).solve(b)


@dataclass
class ErrorReport:
    """Both reconstruction error norms plus the identifying metadata."""

    empirical_error: float
    h_minus1_error: float
    l2_error: Optional[float] = None
    h: Optional[float] = None
    tau: Optional[float] = None
    n: Optional[int] = None
    sigma: Optional[float] = None
    alpha: Optional[float] = None
    seed: Optional[int] = None
    extra: dict = field(default_factory=dict)
