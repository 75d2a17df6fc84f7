"""Block proximal operators shared by both solvers.

``soft_threshold`` solves argmin_x 1/2||x - y||^2 + lam*||x|| and
``elastic_soft_threshold`` the variant with an extra (b/2)||x||^2 term.
Norms are plain Euclidean; callers supply coordinates in an orthonormal
system.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigurationError

__all__ = ["soft_threshold", "elastic_soft_threshold"]


def soft_threshold(y: np.ndarray, lam: float) -> np.ndarray:
    """Block soft threshold: 0 if ||y|| <= lam, else (1 - lam/||y||) y."""
    if lam < 0:
        raise ConfigurationError(f"threshold must be nonnegative, got {lam}")
    y = np.asarray(y, dtype=float)
    norm = np.linalg.norm(y)
    if norm <= lam:
        return np.zeros_like(y)
    return (1.0 - lam / norm) * y


def elastic_soft_threshold(y: np.ndarray, a: float, b: float) -> np.ndarray:
    """argmin_x 1/2||x - y||^2 + a||x|| + (b/2)||x||^2, i.e. S_a(y)/(1 + b)."""
    if a < 0 or b < 0:
        raise ConfigurationError(f"penalty constants must be nonnegative, got a={a}, b={b}")
    return soft_threshold(y, a) / (1.0 + b)
