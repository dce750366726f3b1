"""Bilinear finite elements on a uniform periodic grid over the unit cell.

The unit cell [0, 1]^2 is split into ``N x N`` square cells with bilinear
(Q1) shape functions.  Opposite faces are identified, so the unknowns are
the ``N^2`` node values with indices taken modulo ``N`` in each direction.

All integrals use the 2x2 tensor Gauss rule, which integrates products of
bilinear shape gradients exactly.  Piecewise-constant coefficients are
sampled once per cell at its midpoint (see ``coefficient_at_quadrature``),
so each cell contributes a single material value and quadrature never
averages across an interface.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sparse

__all__ = [
    "GAUSS_POINTS",
    "GAUSS_WEIGHTS",
    "shape_values",
    "shape_gradients",
    "CellGrid",
    "build_grid",
    "PeriodicField",
    "SparseSystem",
    "IncompatibleRhs",
    "NoConvergence",
    "coefficient_at_quadrature",
    "assemble_stiffness",
    "assemble_from_quadrature",
    "assemble_linear_functional",
    "pcg",
    "solve_mean_zero",
]

# Relative size of the allowed mean component of a right-hand side; above
# this the singular (pure Neumann-like) system has no solution.
COMPATIBILITY_TOL = 1e-8

_G = 0.5 / np.sqrt(3.0)

#: 2x2 tensor Gauss points on the reference cell [0, 1]^2.
GAUSS_POINTS = np.array(
    [
        [0.5 - _G, 0.5 - _G],
        [0.5 + _G, 0.5 - _G],
        [0.5 - _G, 0.5 + _G],
        [0.5 + _G, 0.5 + _G],
    ]
)

#: Matching weights; the rule has total mass 1 on the reference cell.
GAUSS_WEIGHTS = np.full(4, 0.25)

#: Local node offsets within a cell, fixing the local dof ordering.
LOCAL_NODES = np.array([[0, 0], [1, 0], [0, 1], [1, 1]])


def shape_values(points):
    """Q1 shape functions on the reference cell.

    Parameters
    ----------
    points : ndarray, shape (m, 2)
        Reference coordinates in [0, 1]^2.

    Returns
    -------
    ndarray, shape (m, 4)
        Values of the four nodal shape functions (``LOCAL_NODES`` order).
    """
    xi, eta = points[:, 0], points[:, 1]
    return np.stack(
        [(1 - xi) * (1 - eta), xi * (1 - eta), (1 - xi) * eta, xi * eta], axis=1
    )


def shape_gradients(points):
    """Reference-cell gradients of the Q1 shape functions, shape (m, 4, 2)."""
    xi, eta = points[:, 0], points[:, 1]
    grad = np.empty((points.shape[0], 4, 2))
    grad[:, 0, 0] = -(1 - eta)
    grad[:, 1, 0] = 1 - eta
    grad[:, 2, 0] = -eta
    grad[:, 3, 0] = eta
    grad[:, 0, 1] = -(1 - xi)
    grad[:, 1, 1] = -xi
    grad[:, 2, 1] = 1 - xi
    grad[:, 3, 1] = xi
    return grad


_SHAPE_AT_GAUSS = shape_values(GAUSS_POINTS)
_GRAD_AT_GAUSS = shape_gradients(GAUSS_POINTS)
# Shape gradients at the cell midpoint, used for derived cell-centred values.
_GRAD_AT_CENTER = shape_gradients(np.array([[0.5, 0.5]]))[0]


class CellGrid:
    """Uniform periodic Q1 grid on the unit cell.

    Node ``(ix, iy)`` (indices modulo ``cells_per_side``) carries unknown
    ``(ix % N) * N + (iy % N)``; nodes on opposite faces are the same
    unknown.  Cell ``(ex, ey)`` covers
    ``[ex*h, (ex+1)*h] x [ey*h, (ey+1)*h]`` with ``h = 1/N``.
    """

    def __init__(self, dim, cells_per_side):
        self.dim = dim
        self.cells_per_side = cells_per_side
        self.h = 1.0 / cells_per_side

        n = cells_per_side
        ex, ey = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
        ex, ey = ex.ravel(), ey.ravel()
        corners = np.empty((n * n, 4), dtype=np.int64)
        for loc, (dx, dy) in enumerate(LOCAL_NODES):
            corners[:, loc] = self.node_index(ex + dx, ey + dy)
        self.element_dofs = corners
        self.element_centers = np.column_stack([(ex + 0.5) * self.h, (ey + 0.5) * self.h])

    @property
    def num_unknowns(self):
        return self.cells_per_side**self.dim

    @property
    def num_elements(self):
        return self.cells_per_side**self.dim

    def node_index(self, ix, iy):
        """Unknown index of node ``(ix, iy)``, wrapping periodically."""
        n = self.cells_per_side
        return (np.asarray(ix) % n) * n + (np.asarray(iy) % n)

    def node_coords(self):
        """Coordinates of all unknowns, shape (num_unknowns, 2)."""
        n = self.cells_per_side
        ix, iy = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
        return np.column_stack([ix.ravel() * self.h, iy.ravel() * self.h])

    def quadrature_points(self):
        """Physical Gauss points of every cell, shape (num_elements, 4, 2)."""
        offsets = (GAUSS_POINTS - 0.5) * self.h
        return self.element_centers[:, None, :] + offsets[None, :, :]

    def __repr__(self):
        return f"CellGrid(dim={self.dim}, cells_per_side={self.cells_per_side})"


def build_grid(n, cells_per_side):
    """Construct the periodic cell grid.

    Parameters
    ----------
    n : int
        Spatial dimension; only ``n == 2`` is implemented.
    cells_per_side : int
        Number of grid cells along each axis, at least 2.
    """
    if n != 2:
        raise NotImplementedError(f"only dimension 2 is implemented, got n={n}")
    cells_per_side = int(cells_per_side)
    if cells_per_side < 2:
        raise ValueError(f"cells_per_side must be at least 2, got {cells_per_side}")
    return CellGrid(n, cells_per_side)


class PeriodicField:
    """Scalar Q1 field on a periodic cell grid.

    Stores one value per unknown; evaluation wraps points into the unit
    cell, so the field extends 1-periodically to all of R^2.
    """

    def __init__(self, grid, values):
        values = np.asarray(values, dtype=float)
        if values.shape != (grid.num_unknowns,):
            raise ValueError(
                f"expected {grid.num_unknowns} values, got shape {values.shape}"
            )
        self.grid = grid
        self.values = values

    def mean(self):
        """Integral of the field over the unit cell.

        Every periodic Q1 basis function has integral ``h^2``, so the
        integral is ``h^2`` times the sum of nodal values.
        """
        return self.grid.h**2 * self.values.sum()

    def _locate(self, y):
        y = np.asarray(y, dtype=float)
        scaled = (y - np.floor(y)) / self.grid.h
        cell = np.floor(scaled).astype(np.int64)
        # Guard the open upper edge: wrapped coordinates satisfy y < 1 but
        # floating division can land exactly on cells_per_side.
        cell = np.minimum(cell, self.grid.cells_per_side - 1)
        local = scaled - cell
        return cell, local

    def interpolate(self, y):
        """Evaluate the field at points ``y`` of shape (..., 2)."""
        return self.interpolate_with_gradient(y)[0]

    def interpolate_with_gradient(self, y):
        """Evaluate field values and gradients at points ``y``.

        Returns
        -------
        values : ndarray, shape (...,)
        gradients : ndarray, shape (..., 2)
        """
        cell, local = self._locate(y)
        n = self.grid.cells_per_side
        ix, iy = cell[..., 0], cell[..., 1]
        v = self.values
        v00 = v[self.grid.node_index(ix, iy)]
        v10 = v[self.grid.node_index(ix + 1, iy)]
        v01 = v[self.grid.node_index(ix, iy + 1)]
        v11 = v[self.grid.node_index(ix + 1, iy + 1)]
        xi, eta = local[..., 0], local[..., 1]
        values = (
            (1 - xi) * (1 - eta) * v00
            + xi * (1 - eta) * v10
            + (1 - xi) * eta * v01
            + xi * eta * v11
        )
        gradients = np.empty(values.shape + (2,))
        gradients[..., 0] = ((1 - eta) * (v10 - v00) + eta * (v11 - v01)) / self.grid.h
        gradients[..., 1] = ((1 - xi) * (v01 - v00) + xi * (v11 - v10)) / self.grid.h
        return values, gradients

    def values_at_quadrature(self):
        """Field values at every cell's Gauss points, shape (nelem, 4)."""
        return np.einsum("qp,ep->eq", _SHAPE_AT_GAUSS, self.values[self.grid.element_dofs])

    def gradients_at_quadrature(self):
        """Field gradients at every cell's Gauss points, shape (nelem, 4, 2)."""
        return np.einsum(
            "qpi,ep->eqi", _GRAD_AT_GAUSS / self.grid.h, self.values[self.grid.element_dofs]
        )

    def gradients_at_centers(self):
        """Field gradients at cell midpoints, shape (nelem, 2)."""
        return np.einsum(
            "pi,ep->ei", _GRAD_AT_CENTER / self.grid.h, self.values[self.grid.element_dofs]
        )

    def recovered_gradient(self, y):
        """Superconvergent gradient estimate at points ``y``.

        Cell-midpoint gradients are averaged to the nodes and the result
        is interpolated bilinearly.  On smooth data this recovers one
        order over the raw interpolant gradient; on data with kinks
        (piecewise-constant coefficients) it smears the jump and
        ``interpolate_with_gradient`` should be used instead.

        Returns
        -------
        ndarray, shape (..., 2)
        """
        if not hasattr(self, "_recovered"):
            n = self.grid.cells_per_side
            center = self.gradients_at_centers().reshape(n, n, 2)
            nodal = 0.25 * (
                center
                + np.roll(center, 1, axis=0)
                + np.roll(center, 1, axis=1)
                + np.roll(np.roll(center, 1, axis=0), 1, axis=1)
            )
            self._recovered = tuple(
                PeriodicField(self.grid, nodal[:, :, i].ravel()) for i in range(2)
            )
        return np.stack([f.interpolate(y) for f in self._recovered], axis=-1)

    def sup_norms(self):
        """Sup norms of the field and its gradient.

        The field is sampled at all nodes plus all cell midpoints; the
        gradient at all cell midpoints.

        Returns
        -------
        (value_sup, gradient_sup) : tuple of float
            ``gradient_sup`` is the largest Euclidean norm of the
            sampled gradients.
        """
        midpoint_vals = self.values[self.grid.element_dofs].mean(axis=1)
        value_sup = max(np.abs(self.values).max(), np.abs(midpoint_vals).max())
        grad_sup = np.linalg.norm(self.gradients_at_centers(), axis=1).max()
        return value_sup, grad_sup


class IncompatibleRhs(Exception):
    """Right-hand side has a mean component the singular system cannot match."""


class NoConvergence(Exception):
    """Iterative solver failed to reach the requested tolerance."""


class SparseSystem:
    """Singular periodic system ``K x = b`` with constant nullspace.

    The stiffness matrix of the periodic cell problem annihilates
    constants, so solutions are sought in the mean-zero subspace.
    """

    def __init__(self, matrix, rhs, grid):
        self.matrix = matrix
        self.rhs = np.asarray(rhs, dtype=float)
        self.grid = grid

    @property
    def nullspace(self):
        """Unit-norm constant vector spanning the kernel."""
        n = self.matrix.shape[0]
        return np.full(n, 1.0 / np.sqrt(n))


def coefficient_at_quadrature(grid, field):
    """Coefficient matrices at every cell's Gauss points.

    Smooth fields are evaluated at the mapped Gauss points themselves.
    Non-smooth (piecewise-constant) fields are evaluated once per cell at
    its midpoint and repeated across the cell's quadrature points, so a
    cell never mixes material values.

    Returns
    -------
    ndarray, shape (num_elements, 4, dim, dim)
    """
    if field.smooth:
        return field.sample(grid.quadrature_points())
    values = field.sample(grid.element_centers)
    nelem = values.shape[0]
    return np.broadcast_to(values[:, None], (nelem, 4, grid.dim, grid.dim))


def assemble_stiffness(grid, field, coefficients=None):
    """Assemble the periodic stiffness matrix for ``-div(a grad u)``.

    Parameters
    ----------
    grid : CellGrid
    field : CoefficientField
    coefficients : ndarray, optional
        Precomputed ``coefficient_at_quadrature(grid, field)`` output,
        to share sampling across several assemblies.

    Returns
    -------
    scipy.sparse.csr_matrix, shape (num_unknowns, num_unknowns)
        Symmetric positive semi-definite; constants span the kernel.
    """
    if coefficients is None:
        coefficients = coefficient_at_quadrature(grid, field)
    # The h from each physical gradient cancels against the h^2 cell area.
    ke = np.einsum(
        "q,qpi,eqij,qrj->epr",
        GAUSS_WEIGHTS,
        _GRAD_AT_GAUSS,
        coefficients,
        _GRAD_AT_GAUSS,
        optimize=True,
    )
    dofs = grid.element_dofs
    rows = np.repeat(dofs, 4, axis=1).ravel()
    cols = np.tile(dofs, (1, 4)).ravel()
    n = grid.num_unknowns
    matrix = sparse.coo_matrix((ke.ravel(), (rows, cols)), shape=(n, n)).tocsr()
    # Exact symmetry, independent of duplicate-summation order.
    return (matrix + matrix.T) * 0.5


def assemble_from_quadrature(grid, volume=None, gradient=None):
    """Assemble a load vector from per-quadrature-point densities.

    Entry ``p`` receives ``sum_q w_q h^2 (volume * phi_p + gradient . grad phi_p)``
    accumulated over all cells.

    Parameters
    ----------
    volume : ndarray (num_elements, 4), optional
        Density paired with shape values.
    gradient : ndarray (num_elements, 4, 2), optional
        Density paired with physical shape gradients.
    """
    area = grid.h**2
    contrib = 0.0
    if volume is not None:
        contrib = contrib + area * np.einsum(
            "q,eq,qp->ep", GAUSS_WEIGHTS, volume, _SHAPE_AT_GAUSS
        )
    if gradient is not None:
        contrib = contrib + area * np.einsum(
            "q,eqi,qpi->ep", GAUSS_WEIGHTS, gradient, _GRAD_AT_GAUSS / grid.h
        )
    if np.isscalar(contrib):
        raise ValueError("at least one of volume or gradient densities is required")
    out = np.zeros(grid.num_unknowns)
    np.add.at(out, grid.element_dofs, contrib)
    return out


def assemble_linear_functional(grid, integrand):
    """Assemble a load vector from a pointwise integrand callback.

    Parameters
    ----------
    integrand : callable
        Called once with all quadrature points stacked as an ``(m, 2)``
        array, ordered cell-major then Gauss-point-minor (the reshape of
        ``grid.quadrature_points()``).  Must return a pair ``(g, h)``
        where ``g`` has shape ``(m,)`` (volume density, paired with shape
        values) and ``h`` has shape ``(m, 2)`` (paired with shape
        gradients); either may be None.
    """
    points = grid.quadrature_points()
    nelem = points.shape[0]
    g, h = integrand(points.reshape(-1, grid.dim))
    volume = None if g is None else np.asarray(g, dtype=float).reshape(nelem, 4)
    grad = None if h is None else np.asarray(h, dtype=float).reshape(nelem, 4, grid.dim)
    return assemble_from_quadrature(grid, volume=volume, gradient=grad)


def pcg(matrix, rhs, rtol, maxiter, project=None):
    """Jacobi-preconditioned conjugate gradient.

    Parameters
    ----------
    matrix : sparse matrix
        Symmetric positive (semi-)definite.
    rhs : ndarray
    rtol : float
        Stop when ``||r||_2 <= rtol * ||rhs||_2``.
    maxiter : int
    project : callable, optional
        Projection applied to the right-hand side and to every
        preconditioned residual; keeps all iterates inside an invariant
        subspace (e.g. mean-zero vectors for singular periodic systems).

    Returns
    -------
    (x, iterations)

    Raises
    ------
    NoConvergence
        If the tolerance is not met within ``maxiter`` iterations.
    """
    diag = matrix.diagonal()
    if np.any(diag <= 0.0):
        raise ValueError("matrix diagonal must be positive for Jacobi preconditioning")
    b = rhs if project is None else project(rhs)
    bnorm = np.linalg.norm(b)
    x = np.zeros_like(b)
    if bnorm == 0.0:
        return x, 0
    r = b.copy()
    z = r / diag
    if project is not None:
        z = project(z)
    p = z.copy()
    rz = r @ z
    for iteration in range(1, maxiter + 1):
        ap = matrix @ p
        alpha = rz / (p @ ap)
        x += alpha * p
        r -= alpha * ap
        if np.linalg.norm(r) <= rtol * bnorm:
            return x, iteration
        z = r / diag
        if project is not None:
            z = project(z)
        rz_next = r @ z
        p = z + (rz_next / rz) * p
        rz = rz_next
    raise NoConvergence(
        f"pcg: {maxiter} iterations, relative residual "
        f"{np.linalg.norm(r) / bnorm:.3e} > rtol {rtol:.3e}"
    )


def default_max_iterations(n):
    """Iteration cap used for all solves: ``50 sqrt(n) + 1000``."""
    return int(50.0 * np.sqrt(n)) + 1000


def solve_mean_zero(system, rtol=1e-10, maxiter=None):
    """Solve a singular periodic system in the mean-zero subspace.

    Parameters
    ----------
    system : SparseSystem
    rtol : float
        Relative residual tolerance for conjugate gradient.
    maxiter : int, optional
        Defaults to ``50 sqrt(n) + 1000``.

    Returns
    -------
    PeriodicField
        Mean-zero solution.

    Raises
    ------
    IncompatibleRhs
        If the right-hand side's mean component exceeds
        ``1e-8 * ||rhs||_2`` (the system only resolves mean-zero data).
    NoConvergence
        Propagated from the iterative solver.
    """
    rhs = system.rhs
    rhs_norm = np.linalg.norm(rhs)
    if rhs_norm == 0.0:
        return PeriodicField(system.grid, np.zeros_like(rhs))
    if abs(rhs.sum()) > COMPATIBILITY_TOL * rhs_norm:
        raise IncompatibleRhs(
            f"rhs mean component {rhs.sum():.3e} exceeds "
            f"{COMPATIBILITY_TOL:.1e} * ||rhs|| = {COMPATIBILITY_TOL * rhs_norm:.3e}"
        )
    if maxiter is None:
        maxiter = default_max_iterations(rhs.size)

    def project(v):
        return v - v.mean()

    x, _ = pcg(system.matrix, rhs, rtol=rtol, maxiter=maxiter, project=project)
    # Pin the mean-zero representative exactly.
    x -= x.mean()
    return PeriodicField(system.grid, x)
