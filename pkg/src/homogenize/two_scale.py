"""Two-scale expansion, manufactured macro solution, and error reports.

The expansion of order 0, 1, or 2 built from cell correctors is

    u2(x) = u0(x) + eps N_m(x/eps) d_m u0(x) + eps^2 M_kl(x/eps) d_kl u0(x)

(truncated per order), and its exact gradient

    d_i u2 = d_i u0 + dN_m/dy_i d_m u0 + eps N_m d_im u0
           + eps dM_kl/dy_i d_kl u0 + eps^2 M_kl d_ikl u0.

Error reports compare an expansion against a resolved fine-scale solve
in global L2 / H1 / max norms plus interior gradient and flux max norms,
and ``fit_rate`` turns a sweep of reports into a log-log slope.
"""

from __future__ import annotations

import enum

import numpy as np

__all__ = [
    "ExpansionOrder",
    "MacroSolution",
    "manufactured_macro",
    "evaluate_expansion",
    "ErrorReport",
    "error_report",
    "fit_rate",
    "MismatchedInputs",
    "InsufficientData",
    "DegenerateData",
    "INTERIOR_BOX",
    "ERROR_COLUMNS",
]

#: Interior subdomain for max-norm gradient/flux errors (away from the
#: Dirichlet boundary layer).
INTERIOR_BOX = ((0.25, 0.75), (0.25, 0.75))

#: Error-norm labels in reporting order.
ERROR_COLUMNS = (
    "L2_global",
    "H1_global",
    "Linf_global",
    "W1inf_interior",
    "flux_Linf_interior",
)


class MismatchedInputs(Exception):
    """Fine solve and correctors describe different problems."""


class InsufficientData(Exception):
    """Too few sweep points to fit a rate."""


class DegenerateData(Exception):
    """Errors are not strictly positive, so log-log fitting is undefined."""


class ExpansionOrder(enum.IntEnum):
    """Truncation order of the two-scale expansion."""

    ZEROTH = 0
    FIRST = 1
    SECOND = 2


class MacroSolution:
    """Manufactured macro solution ``u0 = sin(pi x_1) sin(pi x_2)``.

    Carries the effective tensor ``a0`` and exposes the matching load
    ``f = -a0_ij d_ij u0`` so the homogenized problem is solved exactly
    by ``u0`` (which vanishes on the unit-square boundary).
    """

    def __init__(self, a0):
        a0 = np.asarray(a0, dtype=float)
        if a0.shape != (2, 2):
            raise ValueError(f"a0 must be 2x2, got shape {a0.shape}")
        if abs(a0[0, 1] - a0[1, 0]) > 1e-8 * np.abs(a0).max():
            raise ValueError("a0 must be symmetric")
        if np.linalg.eigvalsh(a0)[0] <= 0.0:
            raise ValueError("a0 must be positive definite")
        self.a0 = a0

    @staticmethod
    def partial(orders, x):
        """Mixed partial ``d^n1_1 d^n2_2 u0`` via the sine shift rule."""
        n1, n2 = orders
        x = np.asarray(x, dtype=float)
        pi = np.pi
        return (
            pi ** (n1 + n2)
            * np.sin(pi * x[..., 0] + n1 * pi / 2.0)
            * np.sin(pi * x[..., 1] + n2 * pi / 2.0)
        )

    def value(self, x):
        return self.partial((0, 0), x)

    def gradient(self, x):
        """Shape (..., 2)."""
        return np.stack([self.partial((1, 0), x), self.partial((0, 1), x)], axis=-1)

    def hessian(self, x):
        """Shape (..., 2, 2), symmetric."""
        d11 = self.partial((2, 0), x)
        d12 = self.partial((1, 1), x)
        d22 = self.partial((0, 2), x)
        h = np.empty(d11.shape + (2, 2))
        h[..., 0, 0] = d11
        h[..., 0, 1] = d12
        h[..., 1, 0] = d12
        h[..., 1, 1] = d22
        return h

    def third_derivatives(self, x):
        """Shape (..., 2, 2, 2), symmetric in all indices."""
        x = np.asarray(x, dtype=float)
        out = np.empty(x.shape[:-1] + (2, 2, 2))
        for i in range(2):
            for k in range(2):
                for l in range(2):
                    n1 = (i == 0) + (k == 0) + (l == 0)
                    out[..., i, k, l] = self.partial((n1, 3 - n1), x)
        return out

    def forcing(self, x):
        """Load ``f = -a0_ij d_ij u0`` for the homogenized problem."""
        return -np.einsum("ij,...ij->...", self.a0, self.hessian(x))


def manufactured_macro(a0):
    """Macro solution/forcing pair for a given effective tensor."""
    return MacroSolution(a0)


def evaluate_expansion(order, correctors, macro, epsilon, points):
    """Evaluate the two-scale expansion and its exact gradient.

    Parameters
    ----------
    order : ExpansionOrder
    correctors : CorrectorSet
    macro : MacroSolution
    epsilon : float
    points : ndarray, shape (..., 2)

    Returns
    -------
    values : ndarray, shape (...,)
    gradients : ndarray, shape (..., 2)
    """
    order = ExpansionOrder(order)
    points = np.asarray(points, dtype=float)
    fast = points / epsilon

    # Corrector gradients: raw interpolant gradients are exact within the
    # material cells of piecewise-constant fields, while for smooth fields
    # the recovered (nodal-averaged) gradient gains an order of accuracy.
    def corrector_at(pf):
        if correctors.field.smooth:
            return pf.interpolate(fast), pf.recovered_gradient(fast)
        return pf.interpolate_with_gradient(fast)

    values = macro.value(points)
    gradients = macro.gradient(points)

    if order >= ExpansionOrder.FIRST:
        grad_u0 = gradients.copy()
        hess = macro.hessian(points)
        for m in range(2):
            n_vals, n_grads = corrector_at(correctors.N[m])
            values = values + epsilon * n_vals * grad_u0[..., m]
            gradients = gradients + (
                n_grads * grad_u0[..., m, None] + epsilon * n_vals[..., None] * hess[..., :, m]
            )

    if order >= ExpansionOrder.SECOND:
        third = macro.third_derivatives(points)
        for (k, l), m_field in correctors.M.items():
            m_vals, m_grads = corrector_at(m_field)
            values = values + epsilon**2 * m_vals * hess[..., k, l]
            gradients = gradients + (
                epsilon * m_grads * hess[..., k, l, None]
                + epsilon**2 * m_vals[..., None] * third[..., :, k, l]
            )

    return values, gradients


class ErrorReport:
    """Error norms of one expansion against one fine solve.

    Attributes mirror ``ERROR_COLUMNS``; ``norms`` returns them as a
    dict keyed by column name.
    """

    def __init__(self, field_name, order, epsilon, l2, h1, linf, w1inf, flux):
        self.field_name = field_name
        self.order = ExpansionOrder(order)
        self.epsilon = epsilon
        self.L2_global = l2
        self.H1_global = h1
        self.Linf_global = linf
        self.W1inf_interior = w1inf
        self.flux_Linf_interior = flux

    @property
    def norms(self):
        return {name: getattr(self, name) for name in ERROR_COLUMNS}

    def __repr__(self):
        inner = ", ".join(f"{k}={v:.3e}" for k, v in self.norms.items())
        return (
            f"ErrorReport({self.field_name}, order={int(self.order)}, "
            f"eps={self.epsilon:g}, {inner})"
        )


def _interior_mask(points):
    (x0, x1), (y0, y1) = INTERIOR_BOX
    return (
        (points[:, 0] >= x0)
        & (points[:, 0] <= x1)
        & (points[:, 1] >= y0)
        & (points[:, 1] <= y1)
    )


def error_report(fine, order, correctors, macro, epsilon):
    """Compare an expansion against a resolved fine solve.

    Global L2/H1 norms use the fine grid's Gauss rule, the global max
    norm uses all fine nodes, and the interior gradient/flux max norms
    use cell midpoints inside ``INTERIOR_BOX`` (fluxes multiply the
    gradient error by ``a(x/eps)`` at those midpoints).

    Raises
    ------
    MismatchedInputs
        If the fine solve was run for a different ``epsilon`` or a
        different coefficient field than the correctors.
    """
    if abs(fine.epsilon - epsilon) > 1e-12 * abs(epsilon):
        raise MismatchedInputs(
            f"fine solve has epsilon={fine.epsilon!r}, report requested {epsilon!r}"
        )
    if fine.field.name != correctors.field.name:
        raise MismatchedInputs(
            f"fine solve used field {fine.field.name!r}, "
            f"correctors belong to {correctors.field.name!r}"
        )
    grid = fine.grid
    area = grid.h**2
    from .periodic_fem import GAUSS_WEIGHTS  # local import avoids a cycle

    # Global max norm over all fine nodes (boundary included, where the
    # expansion's corrector terms do not vanish).
    node_diff = evaluate_expansion(order, correctors, macro, epsilon, grid.node_coords())[0]
    node_diff -= fine.values
    linf = np.abs(node_diff).max()

    # Global L2/H1 via the assembly quadrature.
    qpts = grid.quadrature_points()
    exp_vals, exp_grads = evaluate_expansion(
        order, correctors, macro, epsilon, qpts.reshape(-1, 2)
    )
    val_diff = exp_vals.reshape(grid.num_elements, 4) - fine.values_at_quadrature()
    grad_diff = exp_grads.reshape(grid.num_elements, 4, 2) - fine.gradients_at_quadrature()
    l2_sq = area * np.einsum("q,eq->", GAUSS_WEIGHTS, val_diff**2)
    h1_sq = l2_sq + area * np.einsum("q,eqi->", GAUSS_WEIGHTS, grad_diff**2)

    # Interior gradient/flux max norms at cell midpoints.
    centers = grid.element_centers
    mask = _interior_mask(centers)
    _, exp_cgrads = evaluate_expansion(order, correctors, macro, epsilon, centers[mask])
    cgrad_diff = exp_cgrads - fine.gradients_at_centers()[mask]
    w1inf = np.linalg.norm(cgrad_diff, axis=1).max()
    coeff = fine.field.sample(centers[mask] / epsilon)
    flux_diff = np.einsum("eij,ej->ei", coeff, cgrad_diff)
    flux = np.linalg.norm(flux_diff, axis=1).max()

    return ErrorReport(
        fine.field.name,
        order,
        epsilon,
        float(np.sqrt(l2_sq)),
        float(np.sqrt(h1_sq)),
        float(linf),
        float(w1inf),
        float(flux),
    )


def fit_rate(pairs):
    """Least-squares slope of log(error) against log(epsilon).

    Parameters
    ----------
    pairs : iterable of (epsilon, error)

    Returns
    -------
    float
        Fitted rate ``p`` in ``error ~ C eps^p``.

    Raises
    ------
    InsufficientData
        Fewer than 3 pairs.
    DegenerateData
        Nonpositive epsilons or errors.
    """
    pairs = list(pairs)
    if len(pairs) < 3:
        raise InsufficientData(f"need at least 3 sweep points, got {len(pairs)}")
    eps = np.array([p[0] for p in pairs], dtype=float)
    err = np.array([p[1] for p in pairs], dtype=float)
    if np.any(eps <= 0.0) or np.any(err <= 0.0):
        raise DegenerateData("epsilons and errors must be strictly positive for log-log fits")
    return float(np.polyfit(np.log(eps), np.log(err), 1)[0])
