# Source-sample importance weights: KMM, KLIEP, ULSIF, RULSIF and a logistic domain discriminator
# contributors: smlee

# History
# 2025-02-10 | v1.0 - first commit

# Module import
from dataclasses import dataclass, field
from typing import Any, Dict, Optional, Tuple, Union
import numpy as np
import pandas as pd
from scipy import linalg
from scipy.spatial.distance import cdist, pdist
from scipy.special import expit
import logging
logger = logging.getLogger('delayadapt')
from delayadapt.conf import log
from delayadapt.conf.errors import (AllZeroWeights, ConfigValidationError, DimensionMismatch, EmptyDomain,
                                    NonConvergence, NonFiniteKernel, SingularSystem)

MEDIAN_SUBSAMPLE = 1000
KLIEP_STEPS = (1e3, 1e2, 1e1, 1.0, 1e-1, 1e-2, 1e-3)
IWC_CLIP = 50.0

# Types
@dataclass(frozen=True)
class KernelSpec:
    """Gaussian RBF kernel with centers drawn from the target sample

    Args:
        bandwidth: sigma, or "median" for the median pairwise distance
        n_centers: maximum number of target points used as centers
        seed: draws the centers and the median subsample
        standardize: scale features with the pooled mean and std first
    """
    bandwidth:Union[float, str] = "median"
    n_centers:int = 100
    seed:int = 0
    standardize:bool = True

    def __post_init__(self):
        if isinstance(self.bandwidth, str):
            if self.bandwidth != "median":
                raise ConfigValidationError("density.bandwidth", "must be a positive number or 'median'")
        elif not self.bandwidth > 0:
            raise ConfigValidationError("density.bandwidth", "must be positive")
        if self.n_centers < 1:
            raise ConfigValidationError("density.n_centers", "must be at least 1")


@dataclass
class WeightEstimate:
    weights:np.ndarray
    diagnostics:Dict[str, Any] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.weights)


# Kernel helpers
def _check_domains(Xs:np.ndarray, Xt:np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    Xs = np.asarray(Xs, dtype=float)
    Xt = np.asarray(Xt, dtype=float)
    if Xs.ndim == 1:
        Xs = Xs.reshape(-1, 1)
    if Xt.ndim == 1:
        Xt = Xt.reshape(-1, 1)
    if Xs.shape[1] != Xt.shape[1]:
        raise DimensionMismatch(f"source has {Xs.shape[1]} features, target has {Xt.shape[1]}")
    if Xs.shape[0] == 0 or Xt.shape[0] == 0:
        raise EmptyDomain(f"need samples on both sides, got n_source={Xs.shape[0]} n_target={Xt.shape[0]}")
    return Xs, Xt


def standardize(Xs:np.ndarray, Xt:np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Center and scale both samples with the pooled mean and std; constant columns keep scale 1
    """
    pooled = np.vstack([Xs, Xt])
    mean = pooled.mean(axis=0)
    std = pooled.std(axis=0)
    std[std == 0] = 1.0
    return (Xs - mean) / std, (Xt - mean) / std


def median_bandwidth(Z:np.ndarray, seed:int=0) -> float:
    """Median pairwise distance over at most MEDIAN_SUBSAMPLE points
    """
    if Z.shape[0] > MEDIAN_SUBSAMPLE:
        rng = np.random.default_rng(seed)
        Z = Z[np.sort(rng.choice(Z.shape[0], size=MEDIAN_SUBSAMPLE, replace=False))]
    distances = pdist(Z)
    distances = distances[distances > 0]
    if distances.size == 0:
        logger.debug("median bandwidth: all points coincide, using sigma=1")
        return 1.0
    return float(np.median(distances))


def gaussian_kernel(A:np.ndarray, B:np.ndarray, sigma:float) -> np.ndarray:
    """k(a, b) = exp(-|a-b|^2 / (2 sigma^2))
    """
    if not (np.isfinite(sigma) and sigma > 0):
        raise NonFiniteKernel(f"bandwidth must be positive and finite, got {sigma}")
    K = np.exp(-cdist(A, B, "sqeuclidean") / (2.0 * sigma * sigma))
    if not np.all(np.isfinite(K)):
        raise NonFiniteKernel(f"kernel matrix is not finite at sigma={sigma}")
    return K


def _prepare(Xs:np.ndarray, Xt:np.ndarray, kernel:KernelSpec) -> Tuple[np.ndarray, np.ndarray, float]:
    Xs, Xt = _check_domains(Xs, Xt)
    if kernel.standardize:
        Xs, Xt = standardize(Xs, Xt)
    if kernel.bandwidth == "median":
        sigma = median_bandwidth(np.vstack([Xs, Xt]), kernel.seed)
    else:
        sigma = float(kernel.bandwidth)
    return Xs, Xt, sigma


def _centers(Zt:np.ndarray, kernel:KernelSpec) -> np.ndarray:
    n = Zt.shape[0]
    if n <= kernel.n_centers:
        return Zt
    rng = np.random.default_rng(kernel.seed)
    return Zt[np.sort(rng.choice(n, size=kernel.n_centers, replace=False))]


def _not_converged(message:str, estimate:WeightEstimate, strict:bool):
    if strict:
        raise NonConvergence(message, estimate)
    logger.warning(message)


# KMM
def _project_box_slab(v:np.ndarray, B:float, lo:float, hi:float) -> np.ndarray:
    """Euclidean projection onto {0 <= b <= B, lo <= sum(b) <= hi}
    """
    b = np.clip(v, 0.0, B)
    total = b.sum()
    if lo <= total <= hi:
        return b
    if B * v.size <= lo:
        return np.full_like(v, B)
    target = lo if total < lo else hi
    # sum(clip(v - tau, 0, B)) is non-increasing in tau
    t_lo, t_hi = float(v.min()) - B, float(v.max())
    for _ in range(200):
        tau = (t_lo + t_hi) / 2.0
        if tau in (t_lo, t_hi):
            break
        if np.clip(v - tau, 0.0, B).sum() > target:
            t_lo = tau
        else:
            t_hi = tau
    b = np.clip(v - (t_lo + t_hi) / 2.0, 0.0, B)
    return b


@log(set_logger=logger)
def kmm_weights(Xs:np.ndarray,
                Xt:np.ndarray,
                kernel:KernelSpec=KernelSpec(),
                B:float=1000.0,
                eps:Optional[float]=None,
                *,
                tol:float=1e-6,
                max_iter:int=5000,
                strict:bool=False) -> WeightEstimate:
    """Kernel mean matching by projected gradient

    minimizes |mean_i b_i k(x_i, .) - mean_j k(x'_j, .)|^2 over 0 <= b <= B, |sum b - n1| <= n1*eps

    Args:
        Xs: source features
        Xt: target features
        kernel: KernelSpec; centers are not used
        B: weight cap
        eps: sum slack, default B / sqrt(n1)
        strict: raise NonConvergence at the iteration cap instead of returning the last iterate
    """
    if not B > 0:
        raise ConfigValidationError("density.kmm_B", "must be positive")
    Zs, Zt, sigma = _prepare(Xs, Xt, kernel)
    n1, n2 = Zs.shape[0], Zt.shape[0]
    if eps is None:
        eps = B / np.sqrt(n1)
    K = gaussian_kernel(Zs, Zs, sigma)
    s = gaussian_kernel(Zs, Zt, sigma).sum(axis=1)
    const = float(gaussian_kernel(Zt, Zt, sigma).sum()) / (n2 * n2)
    lo, hi = max(0.0, n1 * (1.0 - eps)), n1 * (1.0 + eps)

    def objective(b):
        return float(b @ K @ b) / (n1 * n1) - 2.0 * float(b @ s) / (n1 * n2) + const

    def gradient(b):
        return 2.0 * (K @ b) / (n1 * n1) - 2.0 * s / (n1 * n2)

    L = 2.0 * float(linalg.eigvalsh(K, subset_by_index=[n1 - 1, n1 - 1])[0]) / (n1 * n1)
    b = _project_box_slab(np.ones(n1), B, lo, hi)
    start = objective(b)
    converged = False
    iteration = 0
    for iteration in range(1, max_iter + 1):
        b_next = _project_box_slab(b - gradient(b) / L, B, lo, hi)
        step = L * float(np.linalg.norm(b - b_next))
        b = b_next
        if step < tol:
            converged = True
            break
    total = b.sum()
    diagnostics = {"objective": objective(b),
                   "objective_uniform": start,
                   "iterations": iteration,
                   "converged": converged,
                   "sigma": sigma,
                   "box_residual": float(max(0.0, -b.min(), b.max() - B)),
                   "sum_residual": float(max(0.0, lo - total, total - hi))}
    estimate = WeightEstimate(weights=b, diagnostics=diagnostics)
    if not converged:
        _not_converged(f"kmm: gradient map norm above {tol} after {max_iter} iterations", estimate, strict)
    return estimate


# KLIEP
@log(set_logger=logger)
def kliep_weights(Xs:np.ndarray,
                  Xt:np.ndarray,
                  kernel:KernelSpec=KernelSpec(),
                  *,
                  tol:float=1e-8,
                  max_iter:int=100) -> WeightEstimate:
    """KLIEP: w(x) = sum_l a_l k(x, c_l), maximizing the target log-likelihood

    Args:
        Xs: source features
        Xt: target features
        kernel: KernelSpec
        tol: minimum improvement of the mean target log-weight per step
        max_iter: steps per step size
    """
    Zs, Zt, sigma = _prepare(Xs, Xt, kernel)
    C = _centers(Zt, kernel)
    Kt = gaussian_kernel(Zt, C, sigma)
    Ks = gaussian_kernel(Zs, C, sigma)
    if np.any(Kt.sum(axis=1) == 0):
        raise AllZeroWeights(f"a target point has zero kernel mass at sigma={sigma:.4g}")
    bvec = Ks.mean(axis=0)
    bb = float(bvec @ bvec)
    if bb == 0:
        raise AllZeroWeights(f"source points have zero kernel mass at sigma={sigma:.4g}")

    a = np.ones(C.shape[0])
    a = a / float(bvec @ a)
    score = float(np.mean(np.log(Kt @ a)))
    iterations = 0
    for step in KLIEP_STEPS:
        for _ in range(max_iter):
            a_next = a + step * (Kt.T @ (1.0 / (Kt @ a)))
            a_next = a_next + (1.0 - float(bvec @ a_next)) * bvec / bb
            a_next = np.maximum(0.0, a_next)
            mass = float(bvec @ a_next)
            if mass <= 0:
                break
            a_next = a_next / mass
            fitted = Kt @ a_next
            if np.any(fitted <= 0):
                break
            score_next = float(np.mean(np.log(fitted)))
            iterations += 1
            if score_next - score < tol:
                break
            a, score = a_next, score_next
    weights = Ks @ a
    diagnostics = {"objective": score,
                   "iterations": iterations,
                   "sigma": sigma,
                   "n_centers": int(C.shape[0]),
                   "mean_weight_residual": abs(float(weights.mean()) - 1.0)}
    return WeightEstimate(weights=weights, diagnostics=diagnostics)


# least-squares fitting
def _lsif_solve(Ks:np.ndarray,
                Kt:np.ndarray,
                lam:float,
                alpha_rel:float) -> Tuple[np.ndarray, float]:
    """Solve (H + lam I) a = h; H mixes target and source second moments by alpha_rel
    """
    H = Ks.T @ Ks / Ks.shape[0]
    if alpha_rel > 0:
        H = alpha_rel * (Kt.T @ Kt / Kt.shape[0]) + (1.0 - alpha_rel) * H
    h = Kt.mean(axis=0)
    A = H + lam * np.eye(H.shape[0])
    try:
        a = linalg.solve(A, h, assume_a="sym")
    except (linalg.LinAlgError, ValueError) as e:
        raise SingularSystem(f"least-squares system is singular at lambda={lam}: {e}")
    residual = float(np.max(np.abs(A @ a - h)))
    if not np.isfinite(residual) or residual >= 1e-8:
        raise SingularSystem(f"least-squares residual {residual:.3g} at lambda={lam}; increase lambda")
    return a, residual


def _lsif(Xs, Xt, kernel, lam, alpha_rel) -> WeightEstimate:
    if not lam > 0:
        raise ConfigValidationError("density.lambda", "must be positive")
    Zs, Zt, sigma = _prepare(Xs, Xt, kernel)
    C = _centers(Zt, kernel)
    Ks = gaussian_kernel(Zs, C, sigma)
    Kt = gaussian_kernel(Zt, C, sigma)
    a, residual = _lsif_solve(Ks, Kt, lam, alpha_rel)
    raw = Ks @ a
    clipped = int(np.sum(raw < 0))
    if clipped:
        logger.debug(f"lsif: clipped {clipped} negative weights to 0")
    return WeightEstimate(weights=np.maximum(0.0, raw),
                          diagnostics={"residual": residual, "sigma": sigma,
                                       "n_centers": int(C.shape[0]), "clipped": clipped})


@log(set_logger=logger)
def ulsif_weights(Xs:np.ndarray,
                  Xt:np.ndarray,
                  kernel:KernelSpec=KernelSpec(),
                  lam:float=1e-3) -> WeightEstimate:
    return _lsif(Xs, Xt, kernel, lam, 0.0)


@log(set_logger=logger)
def rulsif_weights(Xs:np.ndarray,
                   Xt:np.ndarray,
                   kernel:KernelSpec=KernelSpec(),
                   lam:float=1e-3,
                   alpha_rel:float=0.1) -> WeightEstimate:
    """Relative ratio p_t / (alpha_rel p_t + (1 - alpha_rel) p_s); bounded by 1/alpha_rel
    """
    if not 0.0 <= alpha_rel < 1.0:
        raise ConfigValidationError("density.alpha_rel", "must be in [0, 1)")
    return _lsif(Xs, Xt, kernel, lam, alpha_rel)


# discriminative weights
@log(set_logger=logger)
def iwc_weights(Xs:np.ndarray,
                Xt:np.ndarray,
                reg:float=1e-3,
                *,
                max_epochs:int=2000,
                tol:float=1e-8,
                strict:bool=False) -> WeightEstimate:
    """Odds of a logistic source-vs-target discriminator, (n1/n2) p/(1-p) clipped to [0, 50]

    Args:
        Xs: source features (label 0)
        Xt: target features (label 1)
        reg: L2 strength on the coefficients; the intercept is not penalized
        max_epochs: full-batch gradient steps
        tol: stop when the loss changes by less than this
        strict: raise NonConvergence at the epoch cap instead of returning the last iterate
    """
    Xs, Xt = _check_domains(Xs, Xt)
    n1, n2 = Xs.shape[0], Xt.shape[0]
    if n1 < 2 or n2 < 2:
        raise EmptyDomain(f"discriminator needs at least 2 samples per side, got {n1} and {n2}")
    Zs, Zt = standardize(Xs, Xt)
    Z = np.column_stack([np.ones(n1 + n2), np.vstack([Zs, Zt])])
    labels = np.concatenate([np.zeros(n1), np.ones(n2)])
    penalty = np.full(Z.shape[1], reg)
    penalty[0] = 0.0
    n = Z.shape[0]

    def loss(theta):
        z = Z @ theta
        return float(np.mean(np.logaddexp(0.0, z) - labels * z)) + 0.5 * float(np.sum(penalty * theta * theta))

    lipschitz = 0.25 * float(linalg.eigvalsh(Z.T @ Z / n)[-1]) + reg
    theta = np.zeros(Z.shape[1])
    current = loss(theta)
    converged = False
    epoch = 0
    for epoch in range(1, max_epochs + 1):
        grad = Z.T @ (expit(Z @ theta) - labels) / n + penalty * theta
        theta = theta - grad / lipschitz
        updated = loss(theta)
        change = abs(current - updated)
        current = updated
        if change < tol:
            converged = True
            break
    # p/(1-p) = exp(logit)
    logit = Zs @ theta[1:] + theta[0]
    weights = np.clip((n1 / n2) * np.exp(np.minimum(logit, 700.0)), 0.0, IWC_CLIP)
    estimate = WeightEstimate(weights=weights,
                              diagnostics={"objective": current, "iterations": epoch,
                                           "converged": converged,
                                           "clipped": int(np.sum(weights >= IWC_CLIP))})
    if not converged:
        _not_converged(f"iwc: discriminator did not converge in {max_epochs} epochs", estimate, strict)
    return estimate


def write_weights_csv(weights:np.ndarray, path:str):
    """CSV `row_index,weight` for inspection
    """
    frame = pd.DataFrame({"row_index": np.arange(len(weights)), "weight": np.asarray(weights, dtype=float)})
    frame.to_csv(path, index=False, float_format="%.6f", lineterminator="\n")
