"""Groupwise-majorization-descent solver with strong-rule screening.

Works in the original (non-orthogonalized) basis on the n-rescaled objective

    1/2 ||Y - X~^T G [beta]||^2 + (lam_der/2) [beta]^T B'' [beta]
      + lam*(1-alpha) sum_j ||beta^j|| + alpha*lam sum_j ||beta^j||^2 .

The loss is exactly quadratic with Hessian H = G X~ X~^T G + lam_der B'', so
H satisfies the quadratic-majorization condition with equality; each block
update relaxes H^j to gamma_j = (1 + 1e-6) * maxeig(H^j) and minimizes the
block surrogate in closed form via the block soft threshold.

The penalty's Hilbert block norms sqrt([b^j]^T G^j [b^j]) are not Euclidean
in B-spline coordinates, while the closed-form update thresholds Euclidean
norms.  The default "hilbert" metric therefore works on the transformed
variable theta^j = R^j beta^j with G^j = (R^j)^T R^j (Cholesky), under which
the penalty is Euclidean and the update is exact.  The "euclidean" metric
keeps the untransformed update for comparison; it minimizes the same loss
with plain-coordinate block norms in the penalty.

All lambdas in this module live on the n-rescaled (sum-of-squares) scale;
divide by n to compare with the per-observation scale used elsewhere.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .dataset import FunctionalDataset
from .errors import ConfigurationError, NumericalError

__all__ = [
    "GmdProblem",
    "GmdSolution",
    "GmdWorkspace",
    "LambdaPath",
    "build_gmd_problem",
    "lambda_max",
    "gmd_gradient",
    "gmd_block_update",
    "gmd_solve_at",
    "gmd_path",
]

MAJORIZER_SLACK = 1e-6


class GmdWorkspace:
    """Per-dataset precomputation shared by problems with different lam_der."""

    def __init__(self, dataset: FunctionalDataset, metric: str = "hilbert"):
        if not dataset.centered:
            raise ConfigurationError("GMD needs a centered dataset")
        if metric not in ("hilbert", "euclidean"):
            raise ConfigurationError(f"unknown penalty metric {metric!r}")
        self.dataset = dataset
        self.metric = metric
        self.m, self.p, self.n = dataset.m, dataset.p, dataset.n
        self.size = dataset.size

        grams = dataset.gram_blocks()
        m = self.m
        gx = np.empty_like(dataset.coords)  # G X~, stacked blocks
        for j in range(self.p):
            blk = dataset.block(j)
            gx[blk] = grams[j] @ dataset.coords[blk]
        self._gx = gx
        self._curv_blocks = [b.curvature_gram for b in dataset.bases]
        if dataset.orthonormal:
            self._curv_blocks = None  # no curvature Gram in KL coordinates

        if metric == "hilbert":
            self._chol = []
            for g in grams:
                try:
                    lower = np.linalg.cholesky(g)
                except np.linalg.LinAlgError as exc:
                    raise NumericalError("Gram matrix is not positive definite") from exc
                self._chol.append(lower.T)  # upper R with R^T R = G
        else:
            self._chol = None

        # design in the working metric: X~^T G R^{-1} (or X~^T G)
        design = gx.T.copy()
        if self._chol is not None:
            for j in range(self.p):
                blk = dataset.block(j)
                design[:, blk] = scipy.linalg.solve_triangular(
                    self._chol[j].T, design[:, blk].T, lower=True
                ).T
        self.design = design
        self._quad_base = design.T @ design
        self.c_vec = design.T @ dataset.response
        self.y_sq = float(dataset.response @ dataset.response)

    def beta_to_theta(self, beta: np.ndarray) -> np.ndarray:
        if self._chol is None:
            return beta.copy()
        out = np.empty_like(beta)
        for j in range(self.p):
            blk = self.dataset.block(j)
            out[blk] = self._chol[j] @ beta[blk]
        return out

    def theta_to_beta(self, theta: np.ndarray) -> np.ndarray:
        if self._chol is None:
            return theta.copy()
        out = np.empty_like(theta)
        for j in range(self.p):
            blk = self.dataset.block(j)
            out[blk] = scipy.linalg.solve_triangular(self._chol[j], theta[blk], lower=False)
        return out

    def _curv_theta_block(self, j: int) -> np.ndarray:
        curv = self._curv_blocks[j]
        if self._chol is None:
            return curv
        r = self._chol[j]
        half = scipy.linalg.solve_triangular(r.T, curv, lower=True)
        return scipy.linalg.solve_triangular(r.T, half.T, lower=True).T

    def problem(self, lam_der: float = 0.0) -> "GmdProblem":
        if lam_der < 0:
            raise ConfigurationError("lam_der must be nonnegative")
        a_mat = self._quad_base.copy()
        if lam_der > 0:
            if self._curv_blocks is None:
                raise ConfigurationError(
                    "lam_der > 0 requires original-basis data with curvature Grams"
                )
            for j in range(self.p):
                blk = self.dataset.block(j)
                a_mat[blk, blk.start : blk.stop] += lam_der * self._curv_theta_block(j)
        gamma = np.empty(self.p)
        for j in range(self.p):
            blk = self.dataset.block(j)
            top = np.linalg.eigvalsh(a_mat[blk, blk.start : blk.stop])[-1]
            gamma[j] = (1.0 + MAJORIZER_SLACK) * max(top, 0.0)
        return GmdProblem(workspace=self, lam_der=lam_der, a_mat=a_mat,
                          gamma_j=gamma)


@dataclass
class GmdProblem:
    """One loss instance: fixed data, curvature weight, and majorizer constants."""

    workspace: GmdWorkspace = field(repr=False)
    lam_der: float = 0.0
    a_mat: np.ndarray = field(default=None, repr=False)  # working-metric Hessian
    gamma_j: np.ndarray = field(default=None, repr=False)

    @property
    def n(self) -> int:
        return self.workspace.n

    @property
    def p(self) -> int:
        return self.workspace.p

    @property
    def m(self) -> int:
        return self.workspace.m

    @property
    def size(self) -> int:
        return self.workspace.size

    @property
    def c_vec(self) -> np.ndarray:
        return self.workspace.c_vec

    @property
    def h_majorizer(self) -> np.ndarray:
        """Original-basis H = G X~ X~^T G + lam_der B'' (the QM matrix)."""
        gx = self.workspace._gx
        h = gx @ gx.T
        if self.lam_der > 0:
            for j in range(self.p):
                blk = self.workspace.dataset.block(j)
                h[blk, blk.start : blk.stop] += self.lam_der * self.workspace._curv_blocks[j]
        return h

    def block(self, j: int) -> slice:
        return self.workspace.dataset.block(j)

    def loss(self, beta: np.ndarray) -> float:
        """L(beta) = 1/2||Y - X~^T G beta||^2 + (lam_der/2) beta^T B'' beta."""
        ws = self.workspace
        resid = ws.dataset.response - ws._gx.T @ beta
        out = 0.5 * float(resid @ resid)
        if self.lam_der > 0:
            for j in range(self.p):
                blk = self.block(j)
                out += 0.5 * self.lam_der * beta[blk] @ ws._curv_blocks[j] @ beta[blk]
        return out

    def objective(self, beta: np.ndarray, lam: float, alpha: float) -> float:
        """Loss plus the group penalty in the working metric."""
        theta = self.workspace.beta_to_theta(beta)
        norms = _block_norms(theta, self.m)
        return self.loss(beta) + lam * (1 - alpha) * norms.sum() + alpha * lam * float(
            np.sum(norms**2)
        )

    def solve_quadratic(self, ridge_coeff: float) -> np.ndarray:
        """Direct minimizer of the loss plus (ridge_coeff/2)||theta||^2."""
        if ridge_coeff > 0:
            mat = self.a_mat + ridge_coeff * np.eye(self.size)
            return scipy.linalg.cho_solve(scipy.linalg.cho_factor(mat), self.c_vec)
        theta, *_ = np.linalg.lstsq(self.a_mat, self.c_vec, rcond=None)
        return theta


def build_gmd_problem(
    dataset: FunctionalDataset, lam_der: float = 0.0, metric: str = "hilbert"
) -> GmdProblem:
    """Convenience constructor: workspace plus problem in one call."""
    return GmdWorkspace(dataset, metric=metric).problem(lam_der)


@dataclass
class GmdSolution:
    coef: np.ndarray = field(repr=False)  # original-basis coordinates
    active_set: tuple[int, ...] = ()
    iterations: int = 0
    converged: bool = True
    kkt_ok: bool = True


@dataclass
class LambdaPath:
    """Solutions along a decreasing lambda grid (internal n-rescaled scale)."""

    lambdas: np.ndarray
    n: int
    coefs: np.ndarray = field(repr=False)  # (K, M)
    active_sets: list = field(default_factory=list)
    iterations: np.ndarray = None
    converged: np.ndarray = None
    kkt_ok: np.ndarray = None

    @property
    def lambdas_user(self) -> np.ndarray:
        """Grid on the per-observation scale shared with the ADMM solver."""
        return self.lambdas / self.n


def _block_norms(vec: np.ndarray, m: int) -> np.ndarray:
    return np.linalg.norm(vec.reshape(-1, m), axis=1)


def gmd_gradient(problem: GmdProblem, beta: np.ndarray) -> np.ndarray:
    """Gradient of the loss in original coordinates:
    G X~ (X~^T G beta - Y) + lam_der B'' beta."""
    ws = problem.workspace
    grad = ws._gx @ (ws._gx.T @ beta - ws.dataset.response)
    if problem.lam_der > 0:
        for j in range(problem.p):
            blk = problem.block(j)
            grad[blk] += problem.lam_der * (ws._curv_blocks[j] @ beta[blk])
    return grad


def lambda_max(problem: GmdProblem, alpha: float) -> float:
    """Smallest lambda (internal scale) whose solution is identically zero."""
    if not 0.0 <= alpha < 1.0:
        raise ConfigurationError("alpha must lie in [0, 1) for the lambda grid")
    unorms = _block_norms(problem.c_vec, problem.m)
    return float(unorms.max() / (1.0 - alpha))


def _update_block(z: np.ndarray, thresh: float, denom: float) -> np.ndarray:
    znorm = np.linalg.norm(z)
    if znorm <= thresh:
        return np.zeros_like(z)
    return ((1.0 - thresh / znorm) / denom) * z


def gmd_block_update(
    problem: GmdProblem, beta: np.ndarray, j: int, lam: float, alpha: float
) -> np.ndarray:
    """Exact minimizer of block j's quadratic surrogate, in original coordinates."""
    ws = problem.workspace
    theta = ws.beta_to_theta(beta)
    blk = problem.block(j)
    u = problem.c_vec - problem.a_mat @ theta  # -grad in the working metric
    gam = problem.gamma_j[j]
    z = u[blk] + gam * theta[blk]
    denom = 2.0 * alpha * lam + gam
    if denom <= 0.0:
        if np.linalg.norm(z) <= lam * (1.0 - alpha):
            theta_new = np.zeros(problem.m)
        else:
            raise NumericalError(
                f"degenerate predictor {j}: zero majorizer with nonzero gradient"
            )
    else:
        theta_new = _update_block(z, lam * (1.0 - alpha), denom)
    full = theta.copy()
    full[blk] = theta_new
    return ws.theta_to_beta(full)[blk]


def _descent_sweeps_numpy(a_mat, c, gam, y_sq, theta, v, working, m, lam, alpha,
                          tol_coef, tol_obj, max_sweeps):
    thresh = lam * (1.0 - alpha)
    obj_prev = np.inf
    for sweep in range(1, max_sweeps + 1):
        max_delta = 0.0
        scale = 1.0
        for j in working:
            blk = slice(j * m, (j + 1) * m)
            g = gam[j]
            denom = 2.0 * alpha * lam + g
            if denom <= 0.0:
                continue  # zero-variance block: stays where it is (checked by KKT scan)
            z = c[blk] - v[blk] + g * theta[blk]
            new = _update_block(z, thresh, denom)
            delta = new - theta[blk]
            dmax = np.abs(delta).max(initial=0.0)
            if dmax > 0.0:
                v += delta @ a_mat[blk]  # symmetric A: rows give columns
                theta[blk] = new
                max_delta = max(max_delta, dmax)
            scale = max(scale, np.abs(new).max(initial=0.0))
        if max_delta <= tol_coef * scale:
            return sweep
        norms = _block_norms(theta, m)
        obj = (0.5 * theta @ v - c @ theta + 0.5 * y_sq
               + thresh * norms.sum() + alpha * lam * np.sum(norms**2))
        if abs(obj_prev - obj) <= tol_obj * max(1.0, abs(obj)):
            return sweep
        obj_prev = obj
    return max_sweeps


try:  # compiled kernel for the hot loop; the numpy path is the reference
    import numba

    @numba.njit(cache=True)
    def _descent_sweeps_jit(a_mat, c, gam, y_sq, theta, v, working, m, lam,
                            alpha, tol_coef, tol_obj, max_sweeps):  # pragma: no cover
        size = theta.size
        thresh = lam * (1.0 - alpha)
        obj_prev = np.inf
        z = np.empty(m)
        sweep = 0
        for sweep in range(1, max_sweeps + 1):
            max_delta = 0.0
            scale = 1.0
            for idx in range(working.size):
                j = working[idx]
                s0 = j * m
                g = gam[j]
                denom = 2.0 * alpha * lam + g
                if denom <= 0.0:
                    continue
                znorm = 0.0
                for i in range(m):
                    zi = c[s0 + i] - v[s0 + i] + g * theta[s0 + i]
                    z[i] = zi
                    znorm += zi * zi
                znorm = np.sqrt(znorm)
                coeff = 0.0 if znorm <= thresh else (1.0 - thresh / znorm) / denom
                changed = False
                for i in range(m):
                    new_i = coeff * z[i]
                    d = new_i - theta[s0 + i]
                    if d != 0.0:
                        changed = True
                        ad = np.abs(d)
                        if ad > max_delta:
                            max_delta = ad
                        row = a_mat[s0 + i]
                        for r in range(size):
                            v[r] += row[r] * d
                        theta[s0 + i] = new_i
                    an = np.abs(new_i)
                    if an > scale:
                        scale = an
            if scale < 1.0:
                scale = 1.0
            if max_delta <= tol_coef * scale:
                return sweep
            obj = 0.5 * y_sq
            for r in range(size):
                obj += 0.5 * theta[r] * v[r] - c[r] * theta[r]
            for j in range(theta.size // m):
                bn = 0.0
                for i in range(m):
                    bn += theta[j * m + i] ** 2
                bn = np.sqrt(bn)
                obj += thresh * bn + alpha * lam * bn * bn
            if np.abs(obj_prev - obj) <= tol_obj * max(1.0, np.abs(obj)):
                return sweep
            obj_prev = obj
        return sweep

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    _HAVE_NUMBA = False


def _cyclic_descent(problem, theta, v, working, lam, alpha, tol_coef, tol_obj,
                    max_sweeps):
    """Cyclic closed-form block updates on the working set until convergence.

    ``v`` is maintained as a_mat @ theta and updated incrementally; both it
    and ``theta`` are modified in place.  Returns the sweep count.
    """
    args = (problem.a_mat, problem.c_vec, problem.gamma_j,
            problem.workspace.y_sq, theta, v,
            np.asarray(sorted(working), dtype=np.int64), problem.m,
            float(lam), float(alpha), tol_coef, tol_obj, max_sweeps)
    if _HAVE_NUMBA:
        return _descent_sweeps_jit(*args)
    return _descent_sweeps_numpy(*args)


def gmd_solve_at(
    problem: GmdProblem,
    lam: float,
    alpha: float,
    warm_beta: np.ndarray | None = None,
    lam_prev: float | None = None,
    screen: bool = True,
    tol_coef: float = 1e-7,
    tol_obj: float = 1e-9,
    max_outer: int = 100,
    max_sweeps: int = 2000,
) -> GmdSolution:
    """Solve at one lambda (internal scale) with screening and KKT repair.

    With ``screen`` and a previous grid value, blocks enter the working set by
    the sequential strong rule ||U^j|| > (2*lam - lam_prev)*(1-alpha); after
    convergence a KKT scan over the excluded blocks adds any violator and the
    loop repeats.  Every returned exclusion is KKT-certified.
    """
    if lam < 0:
        raise ConfigurationError("lam must be nonnegative")
    if not 0.0 <= alpha <= 1.0:
        raise ConfigurationError("alpha must lie in [0, 1]")
    ws = problem.workspace
    if alpha == 1.0 or lam == 0.0:
        theta = problem.solve_quadratic(2.0 * alpha * lam)
        coef = ws.theta_to_beta(theta)
        return GmdSolution(coef=coef, active_set=_nonzero_blocks(theta, problem.m),
                           iterations=0, converged=True, kkt_ok=True)

    theta = (np.zeros(problem.size) if warm_beta is None
             else ws.beta_to_theta(warm_beta))
    v = problem.a_mat @ theta if theta.any() else np.zeros(problem.size)
    thresh = lam * (1.0 - alpha)

    if screen and lam_prev is not None and lam_prev >= lam:
        unorms = _block_norms(problem.c_vec - v, problem.m)
        bound = (2.0 * lam - lam_prev) * (1.0 - alpha)
        working = {j for j in range(problem.p) if unorms[j] > bound}
        working |= set(_nonzero_blocks(theta, problem.m))
    else:
        working = set(range(problem.p))

    viol_tol = 1e-9 * max(1.0, thresh)
    total_sweeps = 0
    converged = False
    inner_ok = True
    for _ in range(max_outer):
        sweeps = _cyclic_descent(problem, theta, v, sorted(working), lam,
                                 alpha, tol_coef, tol_obj, max_sweeps)
        total_sweeps += sweeps
        inner_ok = inner_ok and sweeps < max_sweeps
        v = problem.a_mat @ theta  # refresh drift before certifying
        unorms = _block_norms(problem.c_vec - v, problem.m)
        violators = {j for j in range(problem.p)
                     if j not in working and unorms[j] > thresh + viol_tol}
        if not violators:
            converged = True
            break
        working |= violators

    zero = _block_norms(theta, problem.m) == 0.0
    kkt_ok = bool(np.all(unorms[zero] <= thresh + 1e-6 * max(1.0, thresh)))
    coef = ws.theta_to_beta(theta)
    return GmdSolution(coef=coef, active_set=_nonzero_blocks(theta, problem.m),
                       iterations=total_sweeps, converged=converged and inner_ok,
                       kkt_ok=kkt_ok)


def _nonzero_blocks(vec: np.ndarray, m: int) -> tuple[int, ...]:
    return tuple(np.nonzero(_block_norms(vec, m) > 0.0)[0])


def gmd_path(
    problem: GmdProblem,
    alpha: float,
    num_lambdas: int = 100,
    lam_min_ratio: float = 0.01,
    lambdas: np.ndarray | None = None,
    screen: bool = True,
    **solve_kwargs,
) -> LambdaPath:
    """Warm-started solutions down a geometric lambda grid.

    The default grid starts at lambda_max (zero model by construction) and
    decays geometrically to ``lam_min_ratio`` times it.  A custom decreasing
    grid may be supplied; screening for its first point uses lambda_max as
    the previous grid value.
    """
    lam1 = lambda_max(problem, alpha)
    if lambdas is None:
        if lam1 <= 0:
            raise NumericalError("all gradient blocks vanish at zero; nothing to fit")
        lambdas = np.geomspace(lam1, lam_min_ratio * lam1, num_lambdas)
    else:
        lambdas = np.asarray(lambdas, dtype=float)
        if np.any(np.diff(lambdas) >= 0):
            raise ConfigurationError("lambda grid must be strictly decreasing")
    coefs = np.empty((lambdas.size, problem.size))
    active_sets = []
    iterations = np.zeros(lambdas.size, dtype=int)
    converged = np.zeros(lambdas.size, dtype=bool)
    kkt_ok = np.zeros(lambdas.size, dtype=bool)
    beta = None
    lam_prev = max(lam1, lambdas[0])
    for k, lam in enumerate(lambdas):
        sol = gmd_solve_at(problem, float(lam), alpha, warm_beta=beta,
                           lam_prev=lam_prev, screen=screen, **solve_kwargs)
        beta = sol.coef
        lam_prev = float(lam)
        coefs[k] = sol.coef
        active_sets.append(sol.active_set)
        iterations[k] = sol.iterations
        converged[k] = sol.converged
        kkt_ok[k] = sol.kkt_ok
    return LambdaPath(lambdas=lambdas, n=problem.n, coefs=coefs,
                      active_sets=active_sets, iterations=iterations,
                      converged=converged, kkt_ok=kkt_ok)
