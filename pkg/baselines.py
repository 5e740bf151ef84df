"""
Reference solvers used to check and compare the bilinear methods

ialm_rpca solves the convex program min ||L||_* + lam ||S||_1 s.t. Y = L + S
with the inexact augmented Lagrange multiplier method and serves as the
ground-truth oracle on small matrices. nmf_mu is conventional NMF by
Lee-Seung multiplicative updates.
"""

import logging
import math
import time
from dataclasses import asdict, dataclass, field
from typing import List, Optional

import numpy as np

from errors import DomainError, ParameterError
from matrix_core import fro_norm, svd_small
import settings

logger = logging.getLogger(__name__)

# Keeps multiplicative-update denominators away from zero
MU_EPS = 1e-12


@dataclass
class IalmConfig:
    """IALM settings; defaults come from settings.DEFAULT_IALM_CONFIG"""
    lam: Optional[float] = settings.DEFAULT_IALM_CONFIG["lam"]
    mu0: Optional[float] = settings.DEFAULT_IALM_CONFIG["mu0"]
    rho: float = settings.DEFAULT_IALM_CONFIG["rho"]
    tol: float = settings.DEFAULT_IALM_CONFIG["tol"]
    max_iters: int = settings.DEFAULT_IALM_CONFIG["max_iters"]
    mu_max_factor: float = settings.DEFAULT_IALM_CONFIG["mu_max_factor"]

    def __post_init__(self):
        if self.lam is not None and not self.lam > 0:
            raise ParameterError(f"lambda must be positive, got {self.lam}")
        if self.mu0 is not None and not self.mu0 > 0:
            raise ParameterError(f"mu0 must be positive, got {self.mu0}")
        if not self.rho > 1:
            raise ParameterError(f"rho must be > 1, got {self.rho}")
        if not self.tol > 0:
            raise ParameterError(f"tol must be positive, got {self.tol}")
        if self.max_iters < 1:
            raise ParameterError(f"max_iters must be >= 1, got {self.max_iters}")

    @classmethod
    def from_dict(cls, overrides: Optional[dict] = None) -> 'IalmConfig':
        known = {k: v for k, v in (overrides or {}).items() if k in settings.DEFAULT_IALM_CONFIG and v is not None}
        return cls(**{**settings.DEFAULT_IALM_CONFIG, **known})

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class IalmResult:
    L: np.ndarray
    S: np.ndarray
    iters: int
    converged: bool
    feasibility_gap: float     # ||Y - L - S||_F / ||Y||_F of the returned iterate


@dataclass
class NmfMuResult:
    W: np.ndarray
    H: np.ndarray
    objective_history: List[float] = field(default_factory=list)


def soft_threshold(M: np.ndarray, tau: float) -> np.ndarray:
    """Entrywise shrinkage sign(x) max(|x| - tau, 0)"""
    if tau < 0:
        raise ParameterError(f"threshold must be >= 0, got {tau}")
    return np.sign(M) * np.maximum(np.abs(M) - tau, 0)


def svt(M: np.ndarray, tau: float, cap: Optional[int] = None) -> np.ndarray:
    """Singular value thresholding U diag(max(s - tau, 0)) V^T"""
    if tau < 0:
        raise ParameterError(f"threshold must be >= 0, got {tau}")
    result = svd_small(M, cap=cap)
    shrunk = np.maximum(result.singular_values - tau, 0)
    return (result.U * shrunk) @ result.V.T


def ialm_rpca(Y: np.ndarray, cfg: Optional[IalmConfig] = None) -> IalmResult:
    """
    Exact RPCA by the inexact augmented Lagrange multiplier method

    Stops once ||Y - L - S||_F / ||Y||_F <= tol. When max_iters is reached
    first, the iterate with the smallest gap is returned with
    converged=False. Y must fit the svd_small cap.
    """
    cfg = cfg or IalmConfig()
    D = np.asarray(Y, dtype=np.float64)
    n, m = D.shape

    norm_fro = fro_norm(D)
    if norm_fro == 0.0:
        return IalmResult(L=np.zeros_like(D), S=np.zeros_like(D), iters=1, converged=True, feasibility_gap=0.0)

    lam = cfg.lam if cfg.lam is not None else 1.0 / math.sqrt(max(n, m))
    norm_two = float(svd_small(D).singular_values[0])
    norm_inf = float(np.max(np.abs(D))) / lam

    dual = D / max(norm_two, norm_inf)
    mu = cfg.mu0 if cfg.mu0 is not None else 1.25 / norm_two
    mu_max = mu * cfg.mu_max_factor

    L = np.zeros_like(D)
    S = np.zeros_like(D)
    best = IalmResult(L=L, S=S, iters=0, converged=False, feasibility_gap=math.inf)

    start = time.perf_counter()
    for it in range(1, cfg.max_iters + 1):
        L = svt(D - S + dual / mu, 1.0 / mu)
        S = soft_threshold(D - L + dual / mu, lam / mu)

        Z = D - L - S
        dual += mu * Z
        mu = min(mu * cfg.rho, mu_max)

        gap = fro_norm(Z) / norm_fro
        if gap < best.feasibility_gap:
            best = IalmResult(L=L, S=S, iters=it, converged=False, feasibility_gap=gap)
        if gap <= cfg.tol:
            best.converged = True
            logger.info(f"IALM converged in {it} iterations ({time.perf_counter() - start:.2f}s), gap {gap:.3g}")
            return best

    logger.warning(f"IALM stopped after {cfg.max_iters} iterations without reaching tol {cfg.tol:g}; "
                   f"best gap {best.feasibility_gap:.3g} at iteration {best.iters}")
    return best


def nmf_objective(Y: np.ndarray, W: np.ndarray, H: np.ndarray) -> float:
    return fro_norm(Y - W @ H) ** 2


def nmf_mu(Y: np.ndarray, r: int, iters: int = 200, seed: int = 0) -> NmfMuResult:
    """
    Conventional NMF Y ~ W H by Lee-Seung multiplicative updates

    Runs in 64-bit. W and H start from seeded uniform values scaled to the
    mean of Y; with iters = 0 that initialization is returned. The squared
    Frobenius objective before each update and after the last one is kept in
    objective_history and is non-increasing.
    """
    D = np.asarray(Y, dtype=np.float64)
    if D.ndim != 2:
        raise ParameterError(f"nmf_mu expects a 2-D matrix, got {D.ndim} dimension(s)")
    n, m = D.shape
    if not 1 <= r <= min(n, m):
        raise ParameterError(f"rank must be between 1 and min(n, m) = {min(n, m)}, got {r}")
    if iters < 0:
        raise ParameterError(f"iters must be >= 0, got {iters}")
    if (D < 0).any():
        row, col = np.argwhere(D.T < 0)[0][::-1]
        raise DomainError(f"Input must be non-negative: entry ({row}, {col}) is {D[row, col]:.6g}")

    rng = np.random.default_rng(seed)
    mean = float(D.mean())
    scale = math.sqrt(mean / r) if mean > 0 else 1.0
    W = scale * rng.random((n, r))
    H = scale * rng.random((r, m))

    history = [nmf_objective(D, W, H)]
    for _ in range(iters):
        H *= (W.T @ D) / (W.T @ W @ H + MU_EPS)
        W *= (D @ H.T) / (W @ (H @ H.T) + MU_EPS)
        history.append(nmf_objective(D, W, H))

    logger.info(f"Multiplicative NMF rank {r}: {iters} iterations, objective {history[-1]:.6g}")
    return NmfMuResult(W=W, H=H, objective_history=history)
