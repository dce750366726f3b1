"""Cell problems on the unit cell: correctors and the effective tensor.

First-order correctors ``N_m`` solve, in the periodic mean-zero space,

    integral  grad(phi) . a (e_m + grad N_m)  =  0   for all phi,

the effective (homogenized) tensor is

    a0_ij = integral  a_ij + a_il  dN_j/dy_l,

and second-order correctors ``M_kl`` solve

    integral grad(phi) . a grad M_kl
        = integral (a_kl + a_km dN_l/dy_m - a0_kl) phi
          - integral a_ik N_l dphi/dy_i.

The constant-mode compatibility of each right-hand side holds exactly at
the discrete level because ``a0`` is computed with the same quadrature
as the assembly; the reported residuals are pure roundoff.
"""

from __future__ import annotations

import numpy as np

from .periodic_fem import (
    GAUSS_WEIGHTS,
    SparseSystem,
    assemble_from_quadrature,
    assemble_stiffness,
    coefficient_at_quadrature,
    solve_mean_zero,
)

__all__ = [
    "solve_first_correctors",
    "homogenized_tensor",
    "energy_form_tensor",
    "second_corrector_rhs",
    "solve_second_correctors",
    "CorrectorSet",
    "compute_correctors",
]

# Cell systems are small, so solve them well below the tolerances of the
# identities checked downstream (effective-tensor symmetry, closed forms).
CELL_RTOL = 1e-12

# Entries of an exactly-compatible rhs scale like h * ||a||; anything this
# far below that is pure assembly roundoff (constant coefficients cancel
# exactly in real arithmetic) and stands for the zero functional.  Without
# the guard the mean/norm compatibility ratio of roundoff noise is O(1).
_NOISE_FLOOR = 1e-12


def _denoise_rhs(rhs, grid, field):
    if np.abs(rhs).max() <= _NOISE_FLOOR * field.upper_bound * grid.h:
        return np.zeros_like(rhs), True
    return rhs, False


def _corrector_gradients(correctors):
    """Stack Gauss-point gradients: out[e, q, m, i] = dN_m/dy_i."""
    return np.stack([n.gradients_at_quadrature() for n in correctors], axis=2).transpose(
        0, 1, 3, 2
    )


def solve_first_correctors(grid, field, rtol=CELL_RTOL, coefficients=None, matrix=None):
    """Solve the first cell problem for each coordinate direction.

    Returns
    -------
    list of PeriodicField
        ``[N_1, N_2]``, mean-zero periodic correctors.
    """
    if coefficients is None:
        coefficients = coefficient_at_quadrature(grid, field)
    if matrix is None:
        matrix = assemble_stiffness(grid, field, coefficients)
    out = []
    for m in range(grid.dim):
        rhs = assemble_from_quadrature(grid, gradient=-coefficients[:, :, :, m])
        rhs, _ = _denoise_rhs(rhs, grid, field)
        out.append(solve_mean_zero(SparseSystem(matrix, rhs, grid), rtol=rtol))
    return out


def homogenized_tensor(grid, field, correctors, coefficients=None):
    """Effective tensor ``a0_ij = integral (a_ij + a_il dN_j/dy_l)``.

    Returns
    -------
    ndarray, shape (dim, dim)
    """
    if coefficients is None:
        coefficients = coefficient_at_quadrature(grid, field)
    grads = _corrector_gradients(correctors)  # (e, q, m, i)
    area = grid.h**2
    plain = area * np.einsum("q,eqij->ij", GAUSS_WEIGHTS, coefficients)
    coupling = area * np.einsum(
        "q,eqil,eqjl->ij", GAUSS_WEIGHTS, coefficients, grads, optimize=True
    )
    return plain + coupling


def energy_form_tensor(grid, field, correctors, coefficients=None):
    """Energy form ``integral (e_i + grad N_i) . a (e_j + grad N_j)``.

    Equals ``homogenized_tensor`` up to the cell-solver residual; the gap
    between the two is a direct measure of how well the discrete cell
    problems were solved.
    """
    if coefficients is None:
        coefficients = coefficient_at_quadrature(grid, field)
    grads = _corrector_gradients(correctors)  # (e, q, m, i)
    corrected = grads + np.eye(grid.dim)  # e_m + grad N_m
    return grid.h**2 * np.einsum(
        "q,eqil,eqlm,eqjm->ij",
        GAUSS_WEIGHTS,
        corrected,
        coefficients,
        corrected,
        optimize=True,
    )


def second_corrector_rhs(grid, field, correctors, a0, k, l, coefficients=None):
    """Right-hand side of the ``M_kl`` cell problem and its compatibility.

    Returns
    -------
    rhs : ndarray
    residual : float
        ``|sum(rhs)| / ||rhs||_2``; must be at roundoff level for the
        singular system to be solvable.
    """
    if coefficients is None:
        coefficients = coefficient_at_quadrature(grid, field)
    grad_nl = correctors[l].gradients_at_quadrature()  # (e, q, i)
    vals_nl = correctors[l].values_at_quadrature()  # (e, q)
    volume = (
        coefficients[:, :, k, l]
        + np.einsum("eqm,eqm->eq", coefficients[:, :, k, :], grad_nl)
        - a0[k, l]
    )
    gradient = -coefficients[:, :, :, k] * vals_nl[:, :, None]
    rhs = assemble_from_quadrature(grid, volume=volume, gradient=gradient)
    rhs, noise_only = _denoise_rhs(rhs, grid, field)
    norm = np.linalg.norm(rhs)
    residual = 0.0 if noise_only or norm == 0.0 else abs(rhs.sum()) / norm
    return rhs, residual


def solve_second_correctors(
    grid, field, correctors, a0, rtol=CELL_RTOL, coefficients=None, matrix=None
):
    """Solve the second cell problem for every index pair.

    Returns
    -------
    solutions : dict
        ``{(k, l): PeriodicField}`` with 0-based indices.
    residuals : dict
        ``{(k, l): float}`` compatibility residuals of the right-hand
        sides (see ``second_corrector_rhs``).
    """
    if coefficients is None:
        coefficients = coefficient_at_quadrature(grid, field)
    if matrix is None:
        matrix = assemble_stiffness(grid, field, coefficients)
    solutions = {}
    residuals = {}
    for k in range(grid.dim):
        for l in range(grid.dim):
            rhs, residual = second_corrector_rhs(
                grid, field, correctors, a0, k, l, coefficients
            )
            solutions[(k, l)] = solve_mean_zero(SparseSystem(matrix, rhs, grid), rtol=rtol)
            residuals[(k, l)] = residual
    return solutions, residuals


class CorrectorSet:
    """All cell-problem output for one coefficient field.

    Attributes
    ----------
    grid : CellGrid
    field : CoefficientField
    N : list of PeriodicField
        First-order correctors, one per direction.
    M : dict of PeriodicField
        Second-order correctors keyed by 0-based ``(k, l)``.
    a0 : ndarray, shape (dim, dim)
        Effective tensor.
    compatibility : dict of float
        Relative compatibility residual of each ``M_kl`` right-hand side.
    """

    def __init__(self, grid, field, N, M, a0, compatibility):
        self.grid = grid
        self.field = field
        self.N = N
        self.M = M
        self.a0 = a0
        self.compatibility = compatibility

    def sup_norms(self):
        """Sup norms of every corrector and corrector gradient.

        Returns a flat dict like ``{"N_1": ..., "grad_N_1": ...,
        "M_12": ..., "grad_M_12": ...}`` with 1-based labels; values and
        gradients are sampled at nodes plus cell midpoints.
        """
        out = {}
        for m, n_field in enumerate(self.N):
            vsup, gsup = n_field.sup_norms()
            out[f"N_{m + 1}"] = vsup
            out[f"grad_N_{m + 1}"] = gsup
        for (k, l), m_field in sorted(self.M.items()):
            vsup, gsup = m_field.sup_norms()
            out[f"M_{k + 1}{l + 1}"] = vsup
            out[f"grad_M_{k + 1}{l + 1}"] = gsup
        return out


def compute_correctors(grid, field, rtol=CELL_RTOL):
    """Run the full cell-problem pipeline for one field.

    Assembles the stiffness once, solves both corrector families, and
    computes the effective tensor with the same quadrature data.
    """
    coefficients = coefficient_at_quadrature(grid, field)
    matrix = assemble_stiffness(grid, field, coefficients)
    first = solve_first_correctors(
        grid, field, rtol=rtol, coefficients=coefficients, matrix=matrix
    )
    a0 = homogenized_tensor(grid, field, first, coefficients)
    second, residuals = solve_second_correctors(
        grid, field, first, a0, rtol=rtol, coefficients=coefficients, matrix=matrix
    )
    return CorrectorSet(grid, field, first, second, a0, residuals)
