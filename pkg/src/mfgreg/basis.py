"""B-spline basis systems on compact intervals.

A basis system bundles a clamped B-spline family with the two Gram matrices
the regression solvers need: the L2 Gram ``G`` with entries ∫ b_i(t) b_k(t) dt
and the curvature Gram ``B''`` with entries ∫ b_i''(t) b_k''(t) dt.  Both are
assembled by Gauss-Legendre quadrature per knot span, which is exact for the
piecewise-polynomial integrands involved.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import BSpline

from .errors import ConfigurationError, DomainError, NumericalError

__all__ = ["BasisSystem", "make_bspline_basis", "eval_basis", "project_curve"]


@dataclass(frozen=True)
class BasisSystem:
    """Clamped B-spline basis with precomputed Gram matrices.

    Attributes
    ----------
    domain : (float, float)
        Closed interval [a, b] the functions live on.
    order : int
        Polynomial order (degree + 1); 4 means cubic splines.
    num_functions : int
        Number m of basis functions; must satisfy m >= order.
    knots : ndarray
        Full clamped knot vector of length m + order.
    gram : ndarray, shape (m, m)
        L2 inner products of the basis functions (symmetric positive definite).
    curvature_gram : ndarray, shape (m, m)
        L2 inner products of second derivatives (symmetric PSD, zero for
        order < 3).
    """

    domain: tuple[float, float]
    order: int
    num_functions: int
    knots: np.ndarray = field(repr=False)
    gram: np.ndarray = field(repr=False)
    curvature_gram: np.ndarray = field(repr=False)

    @property
    def degree(self) -> int:
        return self.order - 1


def _clamped_uniform_knots(a: float, b: float, order: int, m: int) -> np.ndarray:
    interior = np.linspace(a, b, m - order + 2)[1:-1]
    return np.concatenate([np.full(order, a), interior, np.full(order, b)])


def _basis_splines(knots: np.ndarray, degree: int, m: int, nu: int = 0):
    """Vector-valued spline whose value at t is the row of all m basis values."""
    spline = BSpline(knots, np.eye(m), degree, extrapolate=False)
    return spline.derivative(nu) if nu > 0 else spline


def _gauss_legendre_gram(knots: np.ndarray, degree: int, m: int, nu: int) -> np.ndarray:
    """Assemble ∫ b_i^(nu) b_k^(nu) dt span by span with a rule exact for the
    polynomial product (degree 2*(degree-nu) needs <= degree+1 nodes)."""
    spline = _basis_splines(knots, degree, m, nu)
    nodes, weights = np.polynomial.legendre.leggauss(degree + 1)
    spans = np.unique(knots)
    out = np.zeros((m, m))
    for lo, hi in zip(spans[:-1], spans[1:]):
        half = 0.5 * (hi - lo)
        t = half * nodes + 0.5 * (hi + lo)
        vals = spline(t)  # (q, m)
        out += (vals * (half * weights)[:, None]).T @ vals
    return 0.5 * (out + out.T)


def make_bspline_basis(domain: tuple[float, float], order: int, num_functions: int) -> BasisSystem:
    """Build a clamped uniform B-spline basis with its Gram matrices.

    Raises
    ------
    ConfigurationError
        If ``num_functions < order``, ``order < 1``, or the domain is
        degenerate.
    """
    a, b = float(domain[0]), float(domain[1])
    if not np.isfinite([a, b]).all() or not b > a:
        raise ConfigurationError(f"degenerate domain [{a}, {b}]")
    if order < 1:
        raise ConfigurationError(f"order must be >= 1, got {order}")
    if num_functions < order:
        raise ConfigurationError(
            f"num_functions ({num_functions}) must be >= order ({order})"
        )
    knots = _clamped_uniform_knots(a, b, order, num_functions)
    gram = _gauss_legendre_gram(knots, order - 1, num_functions, nu=0)
    if order < 3:
        curvature = np.zeros((num_functions, num_functions))
    else:
        curvature = _gauss_legendre_gram(knots, order - 1, num_functions, nu=2)
    return BasisSystem(
        domain=(a, b),
        order=order,
        num_functions=num_functions,
        knots=knots,
        gram=gram,
        curvature_gram=curvature,
    )


def eval_basis(basis: BasisSystem, t: np.ndarray) -> np.ndarray:
    """Evaluate all basis functions on a grid; row i holds the m values at t[i]."""
    t = np.atleast_1d(np.asarray(t, dtype=float))
    a, b = basis.domain
    if t.size and (t.min() < a or t.max() > b):
        raise DomainError(
            f"evaluation points outside domain [{a}, {b}]: "
            f"range [{t.min()}, {t.max()}]"
        )
    vals = _basis_splines(basis.knots, basis.degree, basis.num_functions)(t)
    return np.nan_to_num(vals, copy=False)


def eval_basis_second_derivative(basis: BasisSystem, t: np.ndarray) -> np.ndarray:
    """Second-derivative analogue of :func:`eval_basis` (zero for order < 3)."""
    t = np.atleast_1d(np.asarray(t, dtype=float))
    if basis.order < 3:
        return np.zeros((t.size, basis.num_functions))
    a, b = basis.domain
    if t.size and (t.min() < a or t.max() > b):
        raise DomainError(f"evaluation points outside domain [{a}, {b}]")
    vals = _basis_splines(basis.knots, basis.degree, basis.num_functions, nu=2)(t)
    return np.nan_to_num(vals, copy=False)


def project_curve(
    basis: BasisSystem,
    t: np.ndarray,
    values: np.ndarray,
    label: str | None = None,
) -> np.ndarray:
    """Least-squares coordinates of observed curve values in the basis.

    ``t`` must be strictly increasing, lie inside the domain, and provide at
    least ``num_functions`` points; otherwise the design may be rank
    deficient.
    """
    t = np.asarray(t, dtype=float)
    values = np.asarray(values, dtype=float)
    name = f" for predictor {label!r}" if label else ""
    if t.ndim != 1 or t.shape != values.shape:
        raise ConfigurationError(f"t and values must be equal-length 1-d arrays{name}")
    if t.size < basis.num_functions:
        raise ConfigurationError(
            f"need at least {basis.num_functions} observation points{name}, got {t.size}"
        )
    if np.any(np.diff(t) <= 0):
        raise ConfigurationError(f"observation grid must be strictly increasing{name}")
    design = eval_basis(basis, t)
    coef, _, rank, _ = np.linalg.lstsq(design, values, rcond=None)
    if rank < basis.num_functions:
        raise NumericalError(
            f"rank-deficient projection design{name}: rank {rank} < {basis.num_functions}"
        )
    return coef
