"""Functional data in coordinate form.

A dataset holds n samples of p functional predictors as one stacked
coordinate matrix (pm x n, one column per sample) plus the scalar responses.
Centering removes sample means from both; the Karhunen-Loeve
orthogonalization changes each predictor's basis to empirical eigenfunctions
so that Hilbert inner products become plain dot products, which is the
coordinate system the ADMM solver operates in.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
import scipy.linalg

from .basis import BasisSystem, eval_basis
from .errors import ConfigurationError, NumericalError

__all__ = [
    "FunctionalDataset",
    "OrthoTransform",
    "center",
    "empirical_covariances",
    "orthogonalize",
    "curvature_gram_ortho",
]

#: relative eigenvalue floor used when factorizing Gram matrices
GRAM_EIG_FLOOR = 1e-12


@dataclass(frozen=True)
class FunctionalDataset:
    """n samples of p functional predictors in stacked coordinates.

    ``coords`` is (p*m, n): column i stacks the basis coordinates of sample
    i's p curves.  ``orthonormal`` marks coordinates expressed in a KL
    eigenbasis, where the Gram matrix is the identity.
    """

    coords: np.ndarray = field(repr=False)
    response: np.ndarray = field(repr=False)
    bases: tuple[BasisSystem, ...]
    centered: bool = False
    orthonormal: bool = False
    response_mean: float = 0.0
    mean_coords: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        coords = np.asarray(self.coords, dtype=float)
        response = np.asarray(self.response, dtype=float)
        object.__setattr__(self, "coords", coords)
        object.__setattr__(self, "response", response)
        if coords.ndim != 2:
            raise ConfigurationError("coords must be a 2-d (p*m, n) array")
        if response.ndim != 1 or response.size != coords.shape[1]:
            raise ConfigurationError("response length must match number of samples")
        if not self.bases:
            raise ConfigurationError("at least one basis system is required")
        m = self.bases[0].num_functions
        if any(b.num_functions != m for b in self.bases):
            raise ConfigurationError("all predictors must share one basis size m")
        if coords.shape[0] != len(self.bases) * m:
            raise ConfigurationError(
                f"coords has {coords.shape[0]} rows, expected p*m = {len(self.bases) * m}"
            )
        if not np.isfinite(coords).all() or not np.isfinite(response).all():
            raise ConfigurationError("coords and response must be finite")

    @property
    def p(self) -> int:
        return len(self.bases)

    @property
    def m(self) -> int:
        return self.bases[0].num_functions

    @property
    def n(self) -> int:
        return self.coords.shape[1]

    @property
    def size(self) -> int:
        """Total coordinate dimension M = p*m."""
        return self.coords.shape[0]

    def block(self, j: int) -> slice:
        """Row slice of predictor j's coordinates."""
        return slice(j * self.m, (j + 1) * self.m)

    def gram_blocks(self) -> list[np.ndarray]:
        """Per-predictor Gram matrices in the current coordinate system."""
        if self.orthonormal:
            return [np.eye(self.m) for _ in range(self.p)]
        return [b.gram for b in self.bases]

    def take(self, indices: np.ndarray) -> "FunctionalDataset":
        """Sub-dataset of the given sample indices (loses centering state)."""
        return FunctionalDataset(
            coords=self.coords[:, indices],
            response=self.response[indices],
            bases=self.bases,
            orthonormal=self.orthonormal,
        )

    @staticmethod
    def from_grid_curves(
        values: list[np.ndarray],
        grids: list[np.ndarray],
        response: np.ndarray,
        bases: list[BasisSystem] | BasisSystem,
    ) -> "FunctionalDataset":
        """Project per-predictor curve panels onto their bases.

        ``values[j]`` is (n, T_j): sample i's curve for predictor j observed
        on the common grid ``grids[j]``.  A single basis may be shared by all
        predictors.
        """
        p = len(values)
        if isinstance(bases, BasisSystem):
            bases = [bases] * p
        if len(bases) != p or len(grids) != p:
            raise ConfigurationError("values, grids, and bases must align per predictor")
        n = values[0].shape[0]
        m = bases[0].num_functions
        coords = np.empty((p * m, n))
        for j, (panel, grid, basis) in enumerate(zip(values, grids, bases)):
            if panel.shape[0] != n:
                raise ConfigurationError("all predictors must have the same sample count")
            # one shared design per predictor: solve all samples at once
            design = eval_basis(basis, np.asarray(grid, dtype=float))
            sol, _, rank, _ = np.linalg.lstsq(design, panel.T, rcond=None)
            if rank < m:
                raise NumericalError(
                    f"rank-deficient projection design for predictor {j + 1!r}"
                )
            coords[j * m : (j + 1) * m] = sol
        return FunctionalDataset(coords=coords, response=np.asarray(response, float),
                                 bases=tuple(bases))


@dataclass(frozen=True)
class OrthoTransform:
    """Per-predictor KL change of basis.

    ``phi[j]`` has the eigenfunction coordinates (in the original basis) as
    columns; ``eigenvalues[j]`` holds the nonincreasing eigenvalues of
    (G^j)^{1/2} X~^j (X~^j)^T (G^j)^{1/2}.
    """

    phi: tuple[np.ndarray, ...]
    eigenvalues: np.ndarray = field(repr=False)

    @property
    def p(self) -> int:
        return len(self.phi)

    @property
    def m(self) -> int:
        return self.phi[0].shape[0]

    def to_original(self, coef: np.ndarray) -> np.ndarray:
        """Map stacked coordinates from the eigenbasis back to the original basis."""
        out = np.empty_like(coef)
        m = self.m
        for j, phi in enumerate(self.phi):
            out[j * m : (j + 1) * m] = phi @ coef[j * m : (j + 1) * m]
        return out

    def to_ortho(self, coef: np.ndarray, bases: tuple[BasisSystem, ...]) -> np.ndarray:
        """Map stacked original-basis coordinates into the eigenbasis."""
        out = np.empty_like(coef)
        m = self.m
        for j, (phi, basis) in enumerate(zip(self.phi, bases)):
            out[j * m : (j + 1) * m] = phi.T @ basis.gram @ coef[j * m : (j + 1) * m]
        return out


def center(dataset: FunctionalDataset) -> FunctionalDataset:
    """Remove per-row coordinate means and the response mean."""
    if dataset.n < 2:
        raise ConfigurationError("centering requires at least 2 samples")
    mean_coords = dataset.coords.mean(axis=1)
    response_mean = float(dataset.response.mean())
    return replace(
        dataset,
        coords=dataset.coords - mean_coords[:, None],
        response=dataset.response - response_mean,
        centered=True,
        response_mean=response_mean,
        mean_coords=mean_coords,
    )


def _require_centered(dataset: FunctionalDataset):
    if not dataset.centered:
        raise ConfigurationError("operation requires a centered dataset")


def empirical_covariances(dataset: FunctionalDataset):
    """Coordinate representations of the empirical second moments.

    Returns ``(gamma_xx, gamma_xy, sigma_yy)`` with
    gamma_xx = n^-1 X~ X~^T G (the operator representation of the covariance),
    gamma_xy = n^-1 G X~ Y, and sigma_yy = n^-1 ||Y~||^2.
    """
    _require_centered(dataset)
    xt, y, n = dataset.coords, dataset.response, dataset.n
    gram = _block_diag(dataset.gram_blocks())
    gamma_xx = (xt @ xt.T) @ gram / n
    gamma_xy = gram @ (xt @ y) / n
    sigma_yy = float(y @ y) / n
    return gamma_xx, gamma_xy, sigma_yy


def _block_diag(blocks: list[np.ndarray]) -> np.ndarray:
    return scipy.linalg.block_diag(*blocks)


def _sym_eig_clamped(mat: np.ndarray, floor: float = GRAM_EIG_FLOOR):
    w, v = np.linalg.eigh(0.5 * (mat + mat.T))
    top = w[-1]
    if top <= 0:
        raise NumericalError("matrix is not positive definite")
    return np.maximum(w, floor * top), v


def gram_sqrt_factors(gram: np.ndarray):
    """(G^{1/2}, G^{-1/2}) via symmetric eigendecomposition with clamping."""
    w, v = _sym_eig_clamped(gram)
    root = np.sqrt(w)
    return (v * root) @ v.T, (v / root) @ v.T


def _fix_signs(vectors: np.ndarray) -> np.ndarray:
    """Make the first nonzero component of each column positive (determinism)."""
    out = vectors.copy()
    for k in range(out.shape[1]):
        col = out[:, k]
        nz = np.nonzero(np.abs(col) > 1e-12 * np.abs(col).max())[0]
        if nz.size and col[nz[0]] < 0:
            out[:, k] = -col
    return out


def orthogonalize(dataset: FunctionalDataset):
    """Karhunen-Loeve orthogonalization of each predictor's empirical covariance.

    Returns ``(transform, new_dataset)`` where the new coordinates satisfy
    <f, g> = [f]^T [g].  Trailing near-zero eigenvalues (rank-deficient
    samples) are kept, not truncated.
    """
    _require_centered(dataset)
    if dataset.orthonormal:
        raise ConfigurationError("dataset is already orthonormalized")
    m, p = dataset.m, dataset.p
    phis = []
    eigenvalues = np.empty((p, m))
    new_coords = np.empty_like(dataset.coords)
    for j in range(p):
        blk = dataset.block(j)
        xj = dataset.coords[blk]
        g_half, g_invhalf = gram_sqrt_factors(dataset.bases[j].gram)
        second_moment = g_half @ (xj @ xj.T) @ g_half
        w, v = np.linalg.eigh(0.5 * (second_moment + second_moment.T))
        order = np.argsort(w)[::-1]
        w, v = w[order], _fix_signs(v[:, order])
        eigenvalues[j] = np.maximum(w, 0.0)
        phis.append(g_invhalf @ v)
        # [X^j]_C = Phi^T G^j [X^j]_B = V^T G^{1/2} [X^j]_B
        new_coords[blk] = v.T @ (g_half @ xj)
    transform = OrthoTransform(phi=tuple(phis), eigenvalues=eigenvalues)
    new_mean = None
    if dataset.mean_coords is not None:
        new_mean = transform.to_ortho(dataset.mean_coords, dataset.bases)
    new_dataset = replace(dataset, coords=new_coords, orthonormal=True,
                          mean_coords=new_mean)
    return transform, new_dataset


def curvature_gram_ortho(
    transform: OrthoTransform, basis: BasisSystem, j: int
) -> np.ndarray:
    """Curvature Gram of predictor j's eigenbasis: Phi^T B'' Phi.

    Equals the inner products <phi_i'', phi_k''> since the columns of Phi are
    the eigenfunction coordinates in the original basis.
    """
    phi = transform.phi[j]
    out = phi.T @ basis.curvature_gram @ phi
    return 0.5 * (out + out.T)
