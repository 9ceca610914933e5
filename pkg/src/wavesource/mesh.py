"""Uniform P1 finite element meshes on the unit interval and unit square.

The square is triangulated by splitting each grid cell along the
(0,0)-(1,1) diagonal, so every element is a congruent right triangle.
Homogeneous Dirichlet conditions are imposed by restricting all
assembled operators to the interior vertices; boundary vertices never
appear as degrees of freedom.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp


@dataclass(frozen=True)
class Mesh:
    """Simplicial mesh of (0,1) or (0,1)^2 with interior dof numbering.

    Attributes
    ----------
    dim : int
        Spatial dimension, 1 or 2.
    vertices : ndarray, shape (n_vertices, dim)
        Vertex coordinates.
    elements : ndarray, shape (n_elements, dim + 1)
        Vertex indices of each element.
    h : float
        Largest element diameter.
    num_cells : int
        Grid cells per side.
    interior : ndarray
        Vertex indices of the interior (free) vertices, in dof order.
    dof_of_vertex : ndarray
        Map vertex index -> dof index; -1 marks boundary vertices.
    """

    dim: int
    vertices: np.ndarray
    elements: np.ndarray
    h: float
    num_cells: int
    interior: np.ndarray
    dof_of_vertex: np.ndarray

    @property
    def n_dofs(self) -> int:
        return self.interior.size

    def interior_points(self) -> np.ndarray:
        """Coordinates of the interior vertices in dof order."""
        return self.vertices[self.interior]


@dataclass(frozen=True)
class FEMatrices:
    """Mass and stiffness matrices restricted to the interior dofs."""

    M: sp.csr_matrix
    K: sp.csr_matrix
    mesh: Mesh


def build_interval_mesh(num_cells: int) -> Mesh:
    """Uniform mesh of (0,1) with ``num_cells`` cells of width 1/num_cells.

    Parameters
    ----------
    num_cells : int
        Number of cells; at least 2 so that an interior vertex exists.

    Returns
    -------
    Mesh
        Mesh with ``num_cells - 1`` interior dofs ordered left to right.
    """
    if num_cells < 2:
        raise ValueError("need at least 2 cells per side")
    h = 1.0 / num_cells
    vertices = (np.arange(num_cells + 1) * h)[:, None]
    elements = np.column_stack([np.arange(num_cells), np.arange(1, num_cells + 1)])
    interior = np.arange(1, num_cells)
    dof_of_vertex = np.full(num_cells + 1, -1, dtype=int)
    dof_of_vertex[interior] = np.arange(num_cells - 1)
    return Mesh(1, vertices, elements, h, num_cells, interior, dof_of_vertex)


def build_square_mesh(cells_per_side: int) -> Mesh:
    """Structured triangulation of (0,1)^2.

    Vertices sit on a uniform (cells_per_side + 1)^2 grid; vertex
    (i, j) has coordinates (i, j)/cells_per_side and index
    i*(cells_per_side + 1) + j. Each grid cell is split into the two
    triangles sharing the cell diagonal of positive slope. Interior
    dofs are ordered lexicographically by (i, j).
    """
    if cells_per_side < 2:
        raise ValueError("need at least 2 cells per side")
    nc = cells_per_side
    h_cell = 1.0 / nc
    ii, jj = np.meshgrid(np.arange(nc + 1), np.arange(nc + 1), indexing="ij")
    vertices = np.column_stack([ii.ravel() * h_cell, jj.ravel() * h_cell])

    def vid(i, j):
        return i * (nc + 1) + j

    ci, cj = np.meshgrid(np.arange(nc), np.arange(nc), indexing="ij")
    ci, cj = ci.ravel(), cj.ravel()
    v00, v10 = vid(ci, cj), vid(ci + 1, cj)
    v01, v11 = vid(ci, cj + 1), vid(ci + 1, cj + 1)
    lower = np.column_stack([v00, v10, v11])
    upper = np.column_stack([v00, v11, v01])
    elements = np.vstack([lower, upper])

    inner = (ii > 0) & (ii < nc) & (jj > 0) & (jj < nc)
    interior = np.flatnonzero(inner.ravel())
    dof_of_vertex = np.full((nc + 1) ** 2, -1, dtype=int)
    dof_of_vertex[interior] = np.arange(interior.size)
    h = np.sqrt(2.0) * h_cell
    return Mesh(2, vertices, elements, h, nc, interior, dof_of_vertex)


def element_diameters(mesh: Mesh) -> np.ndarray:
    """Diameter of every element; used for quasi-uniformity checks."""
    pts = mesh.vertices[mesh.elements]
    if mesh.dim == 1:
        return np.abs(pts[:, 1, 0] - pts[:, 0, 0])
    d01 = np.linalg.norm(pts[:, 0] - pts[:, 1], axis=1)
    d12 = np.linalg.norm(pts[:, 1] - pts[:, 2], axis=1)
    d20 = np.linalg.norm(pts[:, 2] - pts[:, 0], axis=1)
    return np.max(np.column_stack([d01, d12, d20]), axis=1)


def assemble(mesh: Mesh) -> FEMatrices:
    """Assemble P1 mass and stiffness matrices on the interior dofs.

    Element contributions use the exact closed-form integrals of linear
    basis functions, so no quadrature error enters the operators.

    Returns
    -------
    FEMatrices
        Sparse CSR matrices M (mass) and K (stiffness), both symmetric
        positive definite on the interior dofs.
    """
    if mesh.dim == 1:
        M_loc, K_loc = _interval_element_matrices(mesh)
    else:
        M_loc, K_loc = _triangle_element_matrices(mesh)

    n_loc = mesh.elements.shape[1]
    rows = np.repeat(mesh.elements, n_loc, axis=1).ravel()
    cols = np.tile(mesh.elements, (1, n_loc)).ravel()
    nv = mesh.vertices.shape[0]
    M_full = sp.coo_matrix((M_loc.ravel(), (rows, cols)), shape=(nv, nv)).tocsr()
    K_full = sp.coo_matrix((K_loc.ravel(), (rows, cols)), shape=(nv, nv)).tocsr()
    idx = np.ix_(mesh.interior, mesh.interior)
    return FEMatrices(M_full[idx].tocsr(), K_full[idx].tocsr(), mesh)


def _interval_element_matrices(mesh: Mesh):
    L = np.diff(mesh.vertices[mesh.elements, 0], axis=1).ravel()
    M_loc = L[:, None, None] / 6.0 * np.array([[2.0, 1.0], [1.0, 2.0]])
    K_loc = (1.0 / L)[:, None, None] * np.array([[1.0, -1.0], [-1.0, 1.0]])
    return M_loc, K_loc


def _triangle_element_matrices(mesh: Mesh):
    pts = mesh.vertices[mesh.elements]
    # Edge vectors opposite each vertex give the barycentric gradients.
    e0 = pts[:, 2] - pts[:, 1]
    e1 = pts[:, 0] - pts[:, 2]
    e2 = pts[:, 1] - pts[:, 0]
    area = 0.5 * np.abs(e2[:, 0] * (-e1[:, 1]) - e2[:, 1] * (-e1[:, 0]))
    grads = np.stack(
        [np.column_stack([-e[:, 1], e[:, 0]]) for e in (e0, e1, e2)], axis=1
    ) / (2.0 * area)[:, None, None]
    K_loc = np.einsum("eid,ejd,e->eij", grads, grads, area)
    M_ref = (np.ones((3, 3)) + np.eye(3)) / 12.0
    M_loc = area[:, None, None] * M_ref
    return M_loc, K_loc


def nodal_coefficients(mesh: Mesh, fn) -> np.ndarray:
    """Interpolate a callable source onto the interior vertices.

    ``fn`` takes coordinate arrays (one per dimension) and must be
    vectorized. Boundary values are dropped; sources are assumed to
    be used inside a homogeneous Dirichlet problem.
    """
    pts = mesh.interior_points()
    if mesh.dim == 1:
        return np.asarray(fn(pts[:, 0]), dtype=float)
    return np.asarray(fn(pts[:, 0], pts[:, 1]), dtype=float)


def as_coefficients(mesh: Mesh, f) -> np.ndarray:
    """Normalize a source given as coefficients or as a callable."""
    if callable(f):
        return nodal_coefficients(mesh, f)
    c = np.asarray(f, dtype=float)
    if c.shape != (mesh.n_dofs,):
        raise ValueError(
            f"coefficient vector has shape {c.shape}, expected ({mesh.n_dofs},)"
        )
    return c
