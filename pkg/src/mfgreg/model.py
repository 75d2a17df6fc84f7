"""Fit configuration, fit results, the penalized objective, and prediction.

The user-facing objective, at the scale all public penalty parameters refer
to, is

    (1/2n) sum_i (Y_i - <X_i, beta>)^2  +  (lam_der/2n) [beta]^T B'' [beta]
      + lam*(1-alpha) * sum_j ||beta^j||   +  alpha*lam * sum_j ||beta^j||^2

with Hilbert block norms ||beta^j|| = sqrt([beta^j]^T G^j [beta^j]).  Both
solvers minimize this same function; the groupwise-majorization solver works
on an n-rescaled copy internally.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .dataset import FunctionalDataset, OrthoTransform, center
from .errors import ConfigurationError, NumericalError
from .basis import BasisSystem, eval_basis

__all__ = [
    "FitConfig",
    "FitResult",
    "fit",
    "predict",
    "block_norms",
    "penalized_objective",
]

PENALTIES = ("lasso", "elastic-net", "ridge", "ols")
SOLVERS = ("admm", "gmd")


@dataclass
class FitConfig:
    """Solver choice and penalty parameters for a single fit.

    ``lam``, ``alpha``, ``lam_der`` are at the user (per-observation) scale.
    ``penalty_metric`` selects the groupwise solver's working metric: the
    default "hilbert" thresholds true Hilbert block norms; "euclidean" is the
    plain-coordinate variant kept for comparison.
    """

    solver: str = "gmd"
    penalty: str = "lasso"
    lam: float = 0.0
    alpha: float = 0.0
    lam_der: float = 0.0
    rho: float = 1.0
    max_iter: int = 1000
    penalty_metric: str = "hilbert"

    def __post_init__(self):
        if self.solver not in SOLVERS:
            raise ConfigurationError(f"unknown solver {self.solver!r}")
        if self.penalty not in PENALTIES:
            raise ConfigurationError(f"unknown penalty {self.penalty!r}")
        if self.lam < 0 or self.lam_der < 0:
            raise ConfigurationError("lam and lam_der must be nonnegative")
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigurationError("alpha must lie in [0, 1]")
        if self.penalty == "lasso":
            self.alpha = 0.0
        elif self.penalty == "ridge":
            self.alpha = 1.0
        elif self.penalty == "ols":
            self.lam = 0.0
            self.lam_der = 0.0


@dataclass
class FitResult:
    """Estimated coefficients plus everything needed to predict.

    ``coef`` stacks the per-predictor coordinate blocks; ``coord_system`` is
    "bspline" for the original basis (what gets persisted) or "kl" for a
    solver-internal eigenbasis.  Inactive blocks of sparse fits are exactly
    zero.
    """

    coef: np.ndarray = field(repr=False)
    active_set: tuple[int, ...]
    intercept: float
    mean_coords: np.ndarray = field(repr=False)
    bases: tuple[BasisSystem, ...]
    lam: float
    alpha: float
    lam_der: float
    solver: str
    penalty: str = "lasso"
    converged: bool = True
    iterations: int = 0
    objective: float = np.nan
    coord_system: str = "bspline"
    performs_selection: bool = True

    @property
    def m(self) -> int:
        return self.bases[0].num_functions

    def coef_block(self, j: int) -> np.ndarray:
        return self.coef[j * self.m : (j + 1) * self.m]

    def curve(self, j: int, t: np.ndarray) -> np.ndarray:
        """Evaluate the estimated coefficient function beta_j on a grid."""
        if self.coord_system != "bspline":
            raise ConfigurationError("curve evaluation needs original-basis coordinates")
        return eval_basis(self.bases[j], t) @ self.coef_block(j)


def block_norms(coef: np.ndarray, bases: tuple[BasisSystem, ...],
                orthonormal: bool = False) -> np.ndarray:
    """Hilbert norms ||beta^j|| of each coordinate block."""
    m = bases[0].num_functions
    out = np.empty(len(bases))
    for j, basis in enumerate(bases):
        blk = coef[j * m : (j + 1) * m]
        out[j] = np.linalg.norm(blk) if orthonormal else np.sqrt(blk @ basis.gram @ blk)
    return out


def active_blocks(coef: np.ndarray, m: int) -> tuple[int, ...]:
    """Indices of blocks that are not identically zero."""
    p = coef.size // m
    return tuple(j for j in range(p) if np.any(coef[j * m : (j + 1) * m] != 0.0))


def penalized_objective(
    coef: np.ndarray,
    dataset: FunctionalDataset,
    lam: float,
    alpha: float,
    lam_der: float,
) -> float:
    """User-scale objective at original-basis (or orthonormal) coordinates.

    ``dataset`` must be centered and in the same coordinate system as
    ``coef``.
    """
    if not dataset.centered:
        raise ConfigurationError("objective needs a centered dataset")
    xt, y, n = dataset.coords, dataset.response, dataset.n
    if dataset.orthonormal:
        fitted = xt.T @ coef
    else:
        gcoef = _apply_gram_blocks(coef, dataset.bases)
        fitted = xt.T @ gcoef
    loss = 0.5 * np.sum((y - fitted) ** 2) / n
    curv = 0.0
    if lam_der > 0:
        curv = 0.5 * lam_der * _curvature_quadratic(coef, dataset) / n
    norms = block_norms(coef, dataset.bases, dataset.orthonormal)
    return float(loss + curv + lam * (1 - alpha) * norms.sum()
                 + alpha * lam * np.sum(norms**2))


def _apply_gram_blocks(coef: np.ndarray, bases) -> np.ndarray:
    m = bases[0].num_functions
    out = np.empty_like(coef)
    for j, basis in enumerate(bases):
        blk = slice(j * m, (j + 1) * m)
        out[blk] = basis.gram @ coef[blk]
    return out


def _curvature_quadratic(coef: np.ndarray, dataset: FunctionalDataset) -> float:
    m = dataset.m
    total = 0.0
    for j, basis in enumerate(dataset.bases):
        blk = coef[j * m : (j + 1) * m]
        if dataset.orthonormal:
            raise ConfigurationError(
                "curvature quadratic in orthonormal coordinates needs the KL "
                "curvature Gram; evaluate in the original basis instead"
            )
        total += blk @ basis.curvature_gram @ blk
    return total


def predict(result: FitResult, dataset: FunctionalDataset) -> np.ndarray:
    """Predicted responses: intercept + sum_j <x^j - xbar^j, beta^j>."""
    if result.coord_system != "bspline":
        raise ConfigurationError("prediction needs original-basis coordinates")
    if dataset.orthonormal:
        raise ConfigurationError("prediction expects original-basis data coordinates")
    centered = dataset.coords - result.mean_coords[:, None]
    gcoef = _apply_gram_blocks(result.coef, result.bases)
    return result.intercept + centered.T @ gcoef


def _ols_result(ds: FunctionalDataset, cfg: FitConfig) -> FitResult:
    from .gmd import GmdWorkspace

    ws = GmdWorkspace(ds, metric="hilbert")
    theta, _, rank, _ = np.linalg.lstsq(ws.design, ds.response, rcond=None)
    if rank < ds.size:
        warnings.warn(
            f"design rank {rank} < {ds.size}; using minimum-norm pseudo-inverse solution"
        )
    coef = ws.theta_to_beta(theta)
    return _assemble(ds, coef, cfg, converged=True, iterations=0,
                     performs_selection=False)


def _ridge_result(ds: FunctionalDataset, cfg: FitConfig) -> FitResult:
    from .gmd import GmdWorkspace

    ws = GmdWorkspace(ds, metric="hilbert")
    problem = ws.problem(cfg.lam_der)
    theta = problem.solve_quadratic(2.0 * cfg.lam * ds.n)
    coef = ws.theta_to_beta(theta)
    return _assemble(ds, coef, cfg, converged=True, iterations=0,
                     performs_selection=False)


def _assemble(ds, coef, cfg, converged, iterations, performs_selection=True):
    obj = penalized_objective(coef, ds, cfg.lam, cfg.alpha, cfg.lam_der)
    return FitResult(
        coef=coef,
        active_set=active_blocks(coef, ds.m),
        intercept=ds.response_mean,
        mean_coords=ds.mean_coords,
        bases=ds.bases,
        lam=cfg.lam,
        alpha=cfg.alpha,
        lam_der=cfg.lam_der,
        solver=cfg.solver,
        penalty=cfg.penalty,
        converged=converged,
        iterations=iterations,
        objective=obj,
        performs_selection=performs_selection,
    )


def fit(dataset: FunctionalDataset, cfg: FitConfig) -> FitResult:
    """Fit the model on a (raw or centered) dataset in original coordinates.

    Sparse penalties dispatch to the configured solver; "ols" and "ridge" use
    direct solves.
    """
    if dataset.orthonormal:
        raise ConfigurationError("fit expects original-basis data; pass the raw dataset")
    ds = dataset if dataset.centered else center(dataset)
    if cfg.penalty == "ols":
        return _ols_result(ds, cfg)
    if cfg.penalty == "ridge" and cfg.solver == "gmd":
        return _ridge_result(ds, cfg)

    if cfg.solver == "admm":
        from .admm import AdmmConfig, admm_fit, solver_inputs

        data_ortho, g2, transform = solver_inputs(ds)
        acfg = AdmmConfig(lam=cfg.lam, alpha=cfg.alpha, lam_der=cfg.lam_der,
                          rho=cfg.rho, max_iter=cfg.max_iter)
        result = admm_fit(data_ortho, g2, acfg, transform=transform)
        result.penalty = cfg.penalty
        return result

    from .gmd import GmdWorkspace, gmd_solve_at

    ws = GmdWorkspace(ds, metric=cfg.penalty_metric)
    problem = ws.problem(cfg.lam_der)
    sol = gmd_solve_at(problem, cfg.lam * ds.n, cfg.alpha)
    return _assemble(ds, sol.coef, cfg, converged=sol.converged,
                     iterations=sol.iterations)
