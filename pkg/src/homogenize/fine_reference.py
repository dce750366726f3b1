"""Resolved fine-scale reference solve on the unit square.

Solves ``-div( a(x / epsilon) grad u ) = f`` on (0, 1)^2 with
homogeneous Dirichlet data, using the same Q1 elements, Gauss rule, and
coefficient-sampling conventions as the periodic cell machinery, on a
grid fine enough to resolve the oscillation: ``resolution_factor`` cells
per oscillation period in each direction.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sparse

from .periodic_fem import (
    GAUSS_POINTS,
    GAUSS_WEIGHTS,
    LOCAL_NODES,
    NoConvergence,  # noqa: F401  (re-exported: raised by solve_fine)
    default_max_iterations,
    pcg,
    shape_gradients,
    shape_values,
)

__all__ = [
    "ResolutionTooCoarse",
    "DirichletGrid",
    "FineSolution",
    "oscillatory_coefficients",
    "solve_fine",
    "energy_identity_gap",
]

_SHAPE_AT_GAUSS = shape_values(GAUSS_POINTS)
_GRAD_AT_GAUSS = shape_gradients(GAUSS_POINTS)
_GRAD_AT_CENTER = shape_gradients(np.array([[0.5, 0.5]]))[0]


class ResolutionTooCoarse(Exception):
    """Fine grid would not resolve the oscillation period adequately."""


class DirichletGrid:
    """Uniform Q1 grid on the unit square with boundary nodes eliminated.

    Node ``(ix, iy)`` with ``0 <= ix, iy <= resolution`` has global index
    ``ix * (resolution + 1) + iy``; cells follow the same local node
    ordering as the periodic grid.
    """

    def __init__(self, resolution):
        resolution = int(resolution)
        if resolution < 2:
            raise ValueError(f"resolution must be at least 2, got {resolution}")
        self.resolution = resolution
        self.h = 1.0 / resolution

        npn = resolution + 1
        ex, ey = np.meshgrid(np.arange(resolution), np.arange(resolution), indexing="ij")
        ex, ey = ex.ravel(), ey.ravel()
        corners = np.empty((resolution * resolution, 4), dtype=np.int64)
        for loc, (dx, dy) in enumerate(LOCAL_NODES):
            corners[:, loc] = (ex + dx) * npn + (ey + dy)
        self.element_dofs = corners
        self.element_centers = np.column_stack([(ex + 0.5) * self.h, (ey + 0.5) * self.h])

        ix, iy = np.meshgrid(np.arange(npn), np.arange(npn), indexing="ij")
        self.interior_mask = (
            (ix > 0) & (ix < resolution) & (iy > 0) & (iy < resolution)
        ).ravel()

    @property
    def num_nodes(self):
        return (self.resolution + 1) ** 2

    @property
    def num_elements(self):
        return self.resolution**2

    def node_coords(self):
        npn = self.resolution + 1
        ix, iy = np.meshgrid(np.arange(npn), np.arange(npn), indexing="ij")
        return np.column_stack([ix.ravel() * self.h, iy.ravel() * self.h])

    def quadrature_points(self):
        offsets = (GAUSS_POINTS - 0.5) * self.h
        return self.element_centers[:, None, :] + offsets[None, :, :]


class FineSolution:
    """Nodal solution of a resolved fine-scale solve.

    Attributes
    ----------
    grid : DirichletGrid
    values : ndarray, shape (num_nodes,)
        Nodal values including (zero) boundary nodes.
    epsilon : float
    resolution : int
        Cells per side (``resolution_factor / epsilon``).
    field : CoefficientField
        The oscillating coefficient that was resolved.
    iterations : int
        Conjugate-gradient iterations spent.
    """

    def __init__(self, grid, values, epsilon, field, iterations):
        self.grid = grid
        self.values = values
        self.epsilon = epsilon
        self.resolution = grid.resolution
        self.field = field
        self.iterations = iterations

    def value_grid(self):
        """Nodal values as an (resolution+1, resolution+1) array."""
        npn = self.resolution + 1
        return self.values.reshape(npn, npn)

    def values_at_quadrature(self):
        """Values at every cell's Gauss points, shape (nelem, 4)."""
        return np.einsum("qp,ep->eq", _SHAPE_AT_GAUSS, self.values[self.grid.element_dofs])

    def gradients_at_quadrature(self):
        """Gradients at every cell's Gauss points, shape (nelem, 4, 2)."""
        return np.einsum(
            "qpi,ep->eqi", _GRAD_AT_GAUSS / self.grid.h, self.values[self.grid.element_dofs]
        )

    def gradients_at_centers(self):
        """Gradients at cell midpoints, shape (nelem, 2)."""
        return np.einsum(
            "pi,ep->ei", _GRAD_AT_CENTER / self.grid.h, self.values[self.grid.element_dofs]
        )


def oscillatory_coefficients(grid, field, epsilon):
    """Sample ``a(x / epsilon)`` at the quadrature points of a fine grid.

    Follows the cell-grid convention: smooth fields at Gauss points,
    piecewise-constant fields once per cell at its midpoint.

    Returns
    -------
    ndarray, shape (num_elements, 4, dim, dim)
    """
    if field.smooth:
        return field.sample(grid.quadrature_points() / epsilon)
    values = field.sample(grid.element_centers / epsilon)
    return np.broadcast_to(values[:, None], (grid.num_elements, 4, 2, 2))


def _period_count(epsilon):
    """Number of oscillation periods across the unit interval, validated."""
    if epsilon <= 0.0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    periods = 1.0 / epsilon
    k = round(periods)
    if k < 1 or abs(periods - k) > 1e-9 * periods:
        raise ValueError(
            f"epsilon must be the reciprocal of a positive integer, got {epsilon}"
        )
    return k


def solve_fine(field, epsilon, forcing, resolution_factor=8, rtol=1e-10, maxiter=None):
    """Solve the oscillatory Dirichlet problem on a resolved grid.

    Parameters
    ----------
    field : CoefficientField
        Periodic coefficient, evaluated at ``x / epsilon``.
    epsilon : float
        Oscillation period; must be ``1 / k`` for an integer ``k``.
    forcing : callable
        Maps an ``(m, 2)`` array of points to ``(m,)`` load values.
    resolution_factor : int
        Fine cells per oscillation period; at least 8 so the smallest
        scale is genuinely resolved.
    rtol : float
        Relative residual tolerance for conjugate gradient.

    Returns
    -------
    FineSolution

    Raises
    ------
    ResolutionTooCoarse
        If ``resolution_factor < 8``.
    NoConvergence
        Propagated from the iterative solver.
    """
    resolution_factor = int(resolution_factor)
    if resolution_factor < 8:
        raise ResolutionTooCoarse(
            f"resolution_factor must be at least 8, got {resolution_factor}"
        )
    k = _period_count(epsilon)
    grid = DirichletGrid(resolution_factor * k)

    coefficients = oscillatory_coefficients(grid, field, epsilon)
    ke = np.einsum(
        "q,qpi,eqij,qrj->epr",
        GAUSS_WEIGHTS,
        _GRAD_AT_GAUSS,
        coefficients,
        _GRAD_AT_GAUSS,
        optimize=True,
    )

    # Renumber interior nodes; boundary values are zero so elimination
    # needs no lifting term.
    interior = grid.interior_mask
    dof_of_node = np.full(grid.num_nodes, -1, dtype=np.int64)
    dof_of_node[interior] = np.arange(interior.sum())
    edofs = dof_of_node[grid.element_dofs]

    rows = np.repeat(edofs, 4, axis=1).ravel()
    cols = np.tile(edofs, (1, 4)).ravel()
    keep = (rows >= 0) & (cols >= 0)
    n = int(interior.sum())
    matrix = sparse.coo_matrix(
        (ke.ravel()[keep], (rows[keep], cols[keep])), shape=(n, n)
    ).tocsr()
    matrix = (matrix + matrix.T) * 0.5

    load_values = np.asarray(
        forcing(grid.quadrature_points().reshape(-1, 2)), dtype=float
    ).reshape(grid.num_elements, 4)
    fe = grid.h**2 * np.einsum("q,eq,qp->ep", GAUSS_WEIGHTS, load_values, _SHAPE_AT_GAUSS)
    rhs = np.zeros(n)
    flat_dofs = edofs.ravel()
    inside = flat_dofs >= 0
    np.add.at(rhs, flat_dofs[inside], fe.ravel()[inside])

    if maxiter is None:
        maxiter = default_max_iterations(n)
    x, iterations = pcg(matrix, rhs, rtol=rtol, maxiter=maxiter)

    values = np.zeros(grid.num_nodes)
    values[interior] = x
    return FineSolution(grid, values, epsilon, field, iterations)


def energy_identity_gap(solution, forcing):
    """Relative gap between the energy and load functionals.

    For the discrete solution, ``integral grad(u) . a grad(u)`` equals
    ``integral f u`` up to the solver residual; both sides are evaluated
    with the assembly quadrature.  Returns ``|lhs - rhs| / max(|lhs|, |rhs|)``.
    """
    grid = solution.grid
    coefficients = oscillatory_coefficients(grid, solution.field, solution.epsilon)
    grads = solution.gradients_at_quadrature()
    energy = grid.h**2 * np.einsum(
        "q,eqi,eqij,eqj->", GAUSS_WEIGHTS, grads, coefficients, grads, optimize=True
    )
    load_values = np.asarray(
        forcing(grid.quadrature_points().reshape(-1, 2)), dtype=float
    ).reshape(grid.num_elements, 4)
    load = grid.h**2 * np.einsum(
        "q,eq,eq->", GAUSS_WEIGHTS, load_values, solution.values_at_quadrature()
    )
    scale = max(abs(energy), abs(load))
    return 0.0 if scale == 0.0 else abs(energy - load) / scale
