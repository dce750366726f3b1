"""Periodic coefficient fields on the unit cell.

Every field is a symmetric, uniformly elliptic matrix-valued map
``a(y)`` that is 1-periodic in each coordinate of ``y``.  Fields come in
two flavours that downstream quadrature treats differently:

* ``smooth=True``  -- ``a`` varies continuously and may be sampled at
  arbitrary quadrature points;
* ``smooth=False`` -- ``a`` is piecewise constant with interfaces, and is
  sampled once per grid cell (at the cell midpoint) so that no quadrature
  rule ever averages across a material jump.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "CoefficientField",
    "ConstantField",
    "LaminateField",
    "SmoothField",
    "InclusionField",
    "preset_names",
    "make_preset",
    "field_from_config",
]


def _wrap_unit(y):
    """Map points into the unit cell [0, 1)^d, preserving periodicity."""
    y = np.asarray(y, dtype=float)
    return y - np.floor(y)


class CoefficientField:
    """Base class for 1-periodic symmetric matrix coefficients.

    Parameters
    ----------
    name : str
        Identifier used in reports and CSV output.
    dim : int
        Spatial dimension of the unit cell.
    lower_bound, upper_bound : float
        Uniform ellipticity constants: every eigenvalue of ``a(y)`` lies
        in ``[lower_bound, upper_bound]`` for all ``y``.
    smooth : bool
        Whether quadrature may sample the field at arbitrary points
        (True) or must sample once per cell at midpoints (False).
    """

    def __init__(self, name, dim, lower_bound, upper_bound, smooth):
        if not (0.0 < lower_bound <= upper_bound):
            raise ValueError(
                f"ellipticity bounds must satisfy 0 < lambda <= Lambda, "
                f"got ({lower_bound}, {upper_bound})"
            )
        self.name = str(name)
        self.dim = int(dim)
        self.lower_bound = float(lower_bound)
        self.upper_bound = float(upper_bound)
        self.smooth = bool(smooth)

    def sample(self, y):
        """Evaluate ``a`` at points ``y``.

        Parameters
        ----------
        y : array_like, shape (..., dim)
            Evaluation points; any real coordinates (wrapped into the
            periodic cell internally).

        Returns
        -------
        ndarray, shape (..., dim, dim)
            Symmetric coefficient matrices.
        """
        y = _wrap_unit(y)
        if y.shape[-1] != self.dim:
            raise ValueError(f"expected points with {self.dim} coordinates, got shape {y.shape}")
        return self._matrix(y)

    def _matrix(self, y):
        raise NotImplementedError

    def __repr__(self):
        return f"{type(self).__name__}(name={self.name!r})"


class ConstantField(CoefficientField):
    """Constant coefficient ``a(y) = A`` for a fixed SPD matrix ``A``."""

    def __init__(self, matrix, name="constant"):
        matrix = np.asarray(matrix, dtype=float)
        if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
            raise ValueError("matrix must be square")
        scale = np.abs(matrix).max()
        if scale == 0.0 or np.abs(matrix - matrix.T).max() > 1e-12 * scale:
            raise ValueError("matrix must be symmetric")
        matrix = 0.5 * (matrix + matrix.T)
        eigs = np.linalg.eigvalsh(matrix)
        if eigs[0] <= 0.0:
            raise ValueError(f"matrix must be positive definite, eigenvalues {eigs}")
        super().__init__(name, matrix.shape[0], eigs[0], eigs[-1], smooth=True)
        self.matrix = matrix

    def _matrix(self, y):
        out = np.empty(y.shape[:-1] + (self.dim, self.dim))
        out[...] = self.matrix
        return out


class LaminateField(CoefficientField):
    """Two-phase layered medium ``a(y) = c(y_1) I``.

    ``c`` takes the value ``alpha`` on the slab ``0 <= y_1 < split`` and
    ``beta`` on ``split <= y_1 < 1``.  Interfaces are the planes
    ``y_1 = 0`` and ``y_1 = split``.
    """

    def __init__(self, alpha=1.0, beta=4.0, split=0.5, name=None):
        if alpha <= 0.0 or beta <= 0.0:
            raise ValueError("layer values must be positive")
        if not 0.0 < split < 1.0:
            raise ValueError("split must lie strictly inside (0, 1)")
        if name is None:
            name = f"laminate_{alpha:g}_{beta:g}"
        lo, hi = min(alpha, beta), max(alpha, beta)
        super().__init__(name, 2, lo, hi, smooth=False)
        self.alpha = float(alpha)
        self.beta = float(beta)
        self.split = float(split)

    def scalar(self, y1):
        """Layer value ``c(y_1)`` for wrapped or unwrapped coordinates."""
        y1 = np.asarray(y1, dtype=float)
        y1 = y1 - np.floor(y1)
        return np.where(y1 < self.split, self.alpha, self.beta)

    def _matrix(self, y):
        c = self.scalar(y[..., 0])
        return c[..., None, None] * np.eye(self.dim)


class SmoothField(CoefficientField):
    """Smooth isotropic coefficient ``a(y) = c(y) I``.

    ``c(y) = base + amplitude * sin(2 pi y_1) * sin(2 pi y_2)`` with
    ``base > |amplitude|`` so ellipticity holds everywhere.
    """

    def __init__(self, base=2.0, amplitude=1.0, name="smooth"):
        if base - abs(amplitude) <= 0.0:
            raise ValueError("base must exceed |amplitude| for ellipticity")
        super().__init__(name, 2, base - abs(amplitude), base + abs(amplitude), smooth=True)
        self.base = float(base)
        self.amplitude = float(amplitude)

    def scalar(self, y):
        y = np.asarray(y, dtype=float)
        return self.base + self.amplitude * np.sin(2.0 * np.pi * y[..., 0]) * np.sin(
            2.0 * np.pi * y[..., 1]
        )

    def _matrix(self, y):
        return self.scalar(y)[..., None, None] * np.eye(self.dim)


class InclusionField(CoefficientField):
    """Disk inclusion in a unit matrix phase: ``a(y) = c(y) I``.

    ``c = inside`` on the closed disk of given radius centred at
    (0.5, 0.5), and ``c = outside`` elsewhere in the cell.
    """

    def __init__(self, radius=0.25, inside=10.0, outside=1.0, name=None):
        if not 0.0 < radius < 0.5:
            raise ValueError("radius must lie in (0, 0.5) so the disk stays inside the cell")
        if inside <= 0.0 or outside <= 0.0:
            raise ValueError("phase values must be positive")
        if name is None:
            name = f"inclusion_r{radius:g}_c{inside:g}"
        lo, hi = min(inside, outside), max(inside, outside)
        super().__init__(name, 2, lo, hi, smooth=False)
        self.radius = float(radius)
        self.inside = float(inside)
        self.outside = float(outside)

    def scalar(self, y):
        y = _wrap_unit(y)
        r2 = (y[..., 0] - 0.5) ** 2 + (y[..., 1] - 0.5) ** 2
        return np.where(r2 <= self.radius**2, self.inside, self.outside)

    def _matrix(self, y):
        return self.scalar(y)[..., None, None] * np.eye(self.dim)


def _preset_builders():
    return {
        "identity": lambda: ConstantField(np.eye(2), name="identity"),
        "anisotropic": lambda: ConstantField(
            [[2.0, 0.5], [0.5, 1.0]], name="anisotropic"
        ),
        "laminate_1_4": lambda: LaminateField(1.0, 4.0, name="laminate_1_4"),
        "smooth": lambda: SmoothField(),
        "inclusion_r025_c10": lambda: InclusionField(
            0.25, 10.0, 1.0, name="inclusion_r025_c10"
        ),
    }


def preset_names():
    """Names of the built-in coefficient fields, in catalogue order."""
    return list(_preset_builders())


def make_preset(name):
    """Instantiate a built-in field by name.

    Raises
    ------
    KeyError
        If ``name`` is not a known preset.
    """
    builders = _preset_builders()
    if name not in builders:
        known = ", ".join(builders)
        raise KeyError(f"unknown preset {name!r}; available: {known}")
    return builders[name]()


_FIELD_KINDS = {
    "constant": ConstantField,
    "laminate": LaminateField,
    "smooth": SmoothField,
    "inclusion": InclusionField,
}


def field_from_config(entry):
    """Build a field from a config entry.

    ``entry`` is either a preset name (string) or a mapping with either
    a ``"preset"`` key or a ``"kind"`` key plus constructor keyword
    arguments, e.g. ``{"kind": "laminate", "alpha": 1, "beta": 4}``.
    """
    if isinstance(entry, str):
        return make_preset(entry)
    if not isinstance(entry, dict):
        raise TypeError(f"field entry must be a string or mapping, got {type(entry).__name__}")
    entry = dict(entry)
    if "preset" in entry:
        name = entry.pop("preset")
        if entry:
            raise ValueError(f"preset entry {name!r} does not accept extra keys {sorted(entry)}")
        return make_preset(name)
    kind = entry.pop("kind", None)
    if kind not in _FIELD_KINDS:
        known = ", ".join(_FIELD_KINDS)
        raise ValueError(f"field kind must be one of {known}, got {kind!r}")
    return _FIELD_KINDS[kind](**entry)
