"""Cross-validation over the (lambda, alpha, lam_der) net, plus baselines.

The lambda grid is solver-specific, as each solver defines its own anchor:
the groupwise solver starts at the smallest lambda with an all-zero solution
(max_j ||U^j(0)|| / (1-alpha)), while the ADMM grid brackets the block norms
of a ridge pilot estimate.  Fold-out mean squared prediction error drives the
selection; ties break toward larger lambda (sparser models).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .dataset import FunctionalDataset, center
from .errors import ConfigurationError, NumericalError
from .model import FitConfig, FitResult, fit, predict
from . import admm as admm_mod
from . import gmd as gmd_mod

__all__ = [
    "CvPlan",
    "CvCell",
    "CvResult",
    "make_folds",
    "lambda_grid_admm",
    "cross_validate",
    "baselines",
]

#: default curvature-penalty grid: no smoothing up to heavy smoothing
DEFAULT_LAM_DER_GRID = (0.0,) + tuple(np.geomspace(1e-8, 1.0, 6))


@dataclass
class CvPlan:
    """K-fold cross-validation plan over the regularization net."""

    k: int = 5
    alpha_grid: Sequence[float] = (0.0,)
    lam_der_grid: Sequence[float] = DEFAULT_LAM_DER_GRID
    lam_grid_size: int = 100
    lam_min_ratio: float = 0.01
    seed: int = 0
    one_se_rule: bool = False

    def __post_init__(self):
        if self.k < 2:
            raise ConfigurationError("cross-validation needs k >= 2 folds")
        if any(not 0.0 <= a < 1.0 for a in self.alpha_grid):
            raise ConfigurationError("alpha grid values must lie in [0, 1)")
        if any(l < 0 for l in self.lam_der_grid):
            raise ConfigurationError("lam_der grid values must be nonnegative")


@dataclass
class CvCell:
    """CV error curve for one (alpha, lam_der) net point (user-scale lambdas)."""

    alpha: float
    lam_der: float
    lambdas: np.ndarray = field(repr=False)
    mean_mse: np.ndarray = field(repr=False)
    se_mse: np.ndarray = field(repr=False)


@dataclass
class CvResult:
    """Winning net point, its refit on the full data, and the error surface."""

    lam: float
    alpha: float
    lam_der: float
    fit: FitResult
    cells: list[CvCell]
    solver: str


def make_folds(n: int, k: int, seed: int = 0) -> list[np.ndarray]:
    """Deterministic validation-index partition with fold sizes within 1."""
    if n < k:
        raise ConfigurationError(f"cannot split {n} samples into {k} folds")
    perm = np.random.default_rng(seed).permutation(n)
    return [np.sort(perm[i::k]) for i in range(k)]


def lambda_grid_admm(
    dataset: FunctionalDataset,
    rho: float = 1.0,
    lam_der: float = 0.0,
    size: int = 100,
) -> np.ndarray:
    """Decreasing log-spaced grid bracketing the ridge-pilot block norms.

    The pilot is the first ADMM beta update from a zero start,
    (X~ X~^T + n*rho*I + lam_der*G'')^{-1} X~ Y, and the grid spans
    [0.9 * min_j ||pilot^j||, 1.1 * max_j ||pilot^j||].
    """
    ds = dataset if dataset.centered else center(dataset)
    if ds.orthonormal:
        raise ConfigurationError("pass original-basis data; orthogonalization is internal")
    data_o, g2, _ = admm_mod.solver_inputs(ds)
    factor = admm_mod.admm_factorize(data_o, g2, rho, lam_der)
    pilot = factor.solve(factor.xty)
    norms = np.linalg.norm(pilot.reshape(ds.p, ds.m), axis=1)
    top = norms.max()
    if top <= 0:
        raise NumericalError("degenerate data: all ridge block norms are zero")
    lo = 0.9 * max(norms.min(), 1e-12 * top)
    return np.geomspace(1.1 * top, lo, size)


def _fold_datasets(dataset: FunctionalDataset, folds: list[np.ndarray]):
    n = dataset.n
    out = []
    for val_idx in folds:
        train_idx = np.setdiff1d(np.arange(n), val_idx)
        out.append((dataset.take(train_idx), dataset.take(val_idx)))
    return out


def _apply_gram_rows(coefs: np.ndarray, dataset: FunctionalDataset) -> np.ndarray:
    """Right-multiply each row's blocks by the block-diagonal Gram."""
    out = np.empty_like(coefs)
    m = dataset.m
    for j, basis in enumerate(dataset.bases):
        blk = slice(j * m, (j + 1) * m)
        out[:, blk] = coefs[:, blk] @ basis.gram
    return out


def _path_mse(coefs: np.ndarray, train_c: FunctionalDataset,
              val: FunctionalDataset) -> np.ndarray:
    """Validation MSE of each path coefficient row (original-basis coords)."""
    centered_val = val.coords - train_c.mean_coords[:, None]
    preds = train_c.response_mean + _apply_gram_rows(coefs, val) @ centered_val
    return np.mean((preds - val.response[None, :]) ** 2, axis=1)


def _gmd_surface(dataset, plan, folds, metric):
    full_c = center(dataset)
    ws_full = gmd_mod.GmdWorkspace(full_c, metric=metric)
    anchor = ws_full.problem(0.0)
    grids = {}
    for alpha in plan.alpha_grid:
        lam1 = gmd_mod.lambda_max(anchor, alpha) / full_c.n
        grids[alpha] = np.geomspace(lam1, plan.lam_min_ratio * lam1,
                                    plan.lam_grid_size)

    sq_err = {(a, ld): [] for a in plan.alpha_grid for ld in plan.lam_der_grid}
    for train, val in _fold_datasets(dataset, folds):
        if np.ptp(train.response) == 0.0:
            warnings.warn("skipping fold with zero-variance response")
            continue
        train_c = center(train)
        ws = gmd_mod.GmdWorkspace(train_c, metric=metric)
        for lam_der in plan.lam_der_grid:
            problem = ws.problem(lam_der)
            for alpha in plan.alpha_grid:
                path = gmd_mod.gmd_path(problem, alpha,
                                        lambdas=grids[alpha] * train_c.n)
                sq_err[(alpha, lam_der)].append(_path_mse(path.coefs, train_c, val))
    return grids, sq_err


def _admm_surface(dataset, plan, folds, rho):
    grids = {}
    base = {ld: lambda_grid_admm(dataset, rho=rho, lam_der=ld,
                                 size=plan.lam_grid_size)
            for ld in plan.lam_der_grid}
    for alpha in plan.alpha_grid:
        for lam_der in plan.lam_der_grid:
            grids[(alpha, lam_der)] = base[lam_der] / (1.0 - alpha)

    sq_err = {(a, ld): [] for a in plan.alpha_grid for ld in plan.lam_der_grid}
    for train, val in _fold_datasets(dataset, folds):
        if np.ptp(train.response) == 0.0:
            warnings.warn("skipping fold with zero-variance response")
            continue
        train_c = center(train)
        data_o, g2, transform = admm_mod.solver_inputs(train_c)
        for lam_der in plan.lam_der_grid:
            for alpha in plan.alpha_grid:
                results = admm_mod.admm_path(data_o, g2, grids[(alpha, lam_der)],
                                             alpha=alpha, lam_der=lam_der, rho=rho,
                                             transform=transform)
                coefs = np.stack([r.coef for r in results])
                sq_err[(alpha, lam_der)].append(_path_mse(coefs, train_c, val))
    return grids, sq_err


def cross_validate(
    dataset: FunctionalDataset,
    plan: CvPlan,
    solver: str = "gmd",
    fold_indices: list[np.ndarray] | None = None,
    penalty_metric: str = "hilbert",
    rho: float = 1.0,
) -> CvResult:
    """Select (lambda, alpha, lam_der) by fold-out MSE and refit on all data."""
    if solver not in ("admm", "gmd"):
        raise ConfigurationError(f"unknown solver {solver!r}")
    if dataset.n < 2 * plan.k:
        raise ConfigurationError("need at least 2 samples per fold")
    folds = fold_indices if fold_indices is not None else make_folds(
        dataset.n, plan.k, plan.seed
    )

    if solver == "gmd":
        grids, sq_err = _gmd_surface(dataset, plan, folds, penalty_metric)
        grid_of = lambda a, ld: grids[a]
    else:
        grids, sq_err = _admm_surface(dataset, plan, folds, rho)
        grid_of = lambda a, ld: grids[(a, ld)]

    cells = []
    best = None
    for alpha in plan.alpha_grid:
        for lam_der in plan.lam_der_grid:
            errs = sq_err[(alpha, lam_der)]
            if not errs:
                raise NumericalError("no usable folds (all skipped)")
            arr = np.stack(errs)
            mean = arr.mean(axis=0)
            se = arr.std(axis=0, ddof=1) / np.sqrt(arr.shape[0]) if arr.shape[0] > 1 \
                else np.zeros_like(mean)
            lambdas = grid_of(alpha, lam_der)
            cells.append(CvCell(alpha=alpha, lam_der=lam_der, lambdas=lambdas,
                                mean_mse=mean, se_mse=se))
            idx = int(np.argmin(mean))  # grids decrease: first min = largest lambda
            if plan.one_se_rule:
                cutoff = mean[idx] + se[idx]
                idx = int(np.nonzero(mean <= cutoff)[0][0])
            if best is None or mean[idx] < best[0]:
                best = (mean[idx], float(lambdas[idx]), alpha, lam_der)

    _, lam, alpha, lam_der = best
    penalty = "lasso" if alpha == 0.0 else "elastic-net"
    cfg = FitConfig(solver=solver, penalty=penalty, lam=lam, alpha=alpha,
                    lam_der=lam_der, rho=rho, penalty_metric=penalty_metric)
    refit = fit(dataset, cfg)
    return CvResult(lam=lam, alpha=alpha, lam_der=lam_der, fit=refit,
                    cells=cells, solver=solver)


def _ridge_cv(dataset: FunctionalDataset, k: int, seed: int,
              grid_size: int = 50) -> FitResult:
    """CV-tuned pure quadratic penalty via per-fold eigendecomposition paths."""
    full_c = center(dataset)
    ws = gmd_mod.GmdWorkspace(full_c)
    top = float(np.linalg.eigvalsh(ws._quad_base)[-1])
    if top <= 0:
        raise NumericalError("degenerate data: zero design")
    # internal ridge coefficients 2*n*lam, shared across folds at user scale
    lam_grid = np.geomspace(10.0 * top, 1e-8 * top, grid_size) / (2.0 * full_c.n)

    folds = make_folds(dataset.n, k, seed)
    errs = []
    for train, val in _fold_datasets(dataset, folds):
        train_c = center(train)
        ws_f = gmd_mod.GmdWorkspace(train_c)
        d, q = np.linalg.eigh(ws_f._quad_base)
        qc = q.T @ ws_f.c_vec
        thetas = (qc[None, :] / (d[None, :] + 2.0 * train_c.n * lam_grid[:, None])) @ q.T
        coefs = np.stack([ws_f.theta_to_beta(row) for row in thetas])
        errs.append(_path_mse(coefs, train_c, val))
    mean = np.stack(errs).mean(axis=0)
    lam = float(lam_grid[int(np.argmin(mean))])
    return fit(dataset, FitConfig(solver="gmd", penalty="ridge", lam=lam))


def _oracle_fit(dataset: FunctionalDataset, active: Sequence[int]) -> FitResult:
    """Least squares restricted to the given predictors, zeros elsewhere."""
    active = tuple(sorted(set(int(j) for j in active)))
    if not active:
        raise ConfigurationError("oracle active set must not be empty")
    if any(j < 0 or j >= dataset.p for j in active):
        raise ConfigurationError("oracle active set out of range")
    m = dataset.m
    rows = np.concatenate([np.arange(j * m, (j + 1) * m) for j in active])
    sub = FunctionalDataset(
        coords=dataset.coords[rows],
        response=dataset.response,
        bases=tuple(dataset.bases[j] for j in active),
    )
    sub_fit = fit(sub, FitConfig(penalty="ols"))
    coef = np.zeros(dataset.size)
    coef[rows] = sub_fit.coef
    mean_coords = center(dataset).mean_coords
    return FitResult(
        coef=coef,
        active_set=active,
        intercept=sub_fit.intercept,
        mean_coords=mean_coords,
        bases=dataset.bases,
        lam=0.0,
        alpha=0.0,
        lam_der=0.0,
        solver="direct",
        penalty="ols",
        converged=sub_fit.converged,
        iterations=0,
        objective=sub_fit.objective,
        performs_selection=False,
    )


def baselines(
    dataset: FunctionalDataset,
    oracle_active: Sequence[int] | None = None,
    cv_folds: int = 5,
    seed: int = 0,
) -> dict[str, FitResult]:
    """Reference estimators: unpenalized OLS, CV-tuned ridge, and (when the
    true active set is supplied) the oracle least squares."""
    out = {
        "ols": fit(dataset, FitConfig(penalty="ols")),
        "ridge": _ridge_cv(dataset, k=cv_folds, seed=seed),
    }
    if oracle_active is not None:
        out["oracle"] = _oracle_fit(dataset, oracle_active)
    return out
