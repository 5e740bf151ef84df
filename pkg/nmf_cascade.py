"""
Projective NMF and the cascaded BEAR pipeline

nmf_train fits L = W W^T Y with W >= 0 by minimizing the squared Frobenius
residual. cascade_train chains two bilinear networks: the first one splits
Y into low-rank background and sparse activity S, the second one runs
projective NMF on ReLU(S). Both are trained jointly on the loss
||S||_1 + mu ||R||_F^2, and the second network's factor W2 together with
W2^T ReLU(S) gives the spatial and temporal footprints.
"""

import logging
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np

from bear_solver import (BearModel, TrainConfig, bilinear_grad, check_conform, init_weights, optimize, residual,
                         train)
from bmat_store import BatchSource
from errors import DimensionError, DomainError, ParameterError
from matrix_core import fro_norm, l1_norm
import settings

logger = logging.getLogger(__name__)


@dataclass
class NmfModel:
    """Non-negative factor W; the projective reconstruction of Y is W (W^T Y)"""
    W: np.ndarray

    @property
    def r(self) -> int:
        return self.W.shape[1]


@dataclass
class CascadeModel:
    W1: np.ndarray
    W2: np.ndarray
    mu: float = settings.DEFAULT_CASCADE_MU

    @property
    def r1(self) -> int:
        return self.W1.shape[1]

    @property
    def r2(self) -> int:
        return self.W2.shape[1]

    @property
    def background(self) -> BearModel:
        """The first network alone, usable wherever a BearModel is expected"""
        return BearModel(W=self.W1)


@dataclass
class Footprints:
    spatial: np.ndarray     # n x r2, columns are per-component pixel weights
    temporal: np.ndarray    # r2 x m, rows are per-component activity traces


def project_nonneg(W: np.ndarray, out: Optional[np.ndarray] = None) -> np.ndarray:
    """Entrywise max(w, 0); pass out=W to clamp in place."""
    return np.maximum(W, 0, out=out)


def _clamp_in_place(W: np.ndarray):
    project_nonneg(W, out=W)


def relu(X: np.ndarray) -> np.ndarray:
    return np.maximum(X, 0)


def validate_nonnegative(src: BatchSource):
    """Streaming check that Y >= 0; raises DomainError naming the first negative (row, col)."""
    for columns, Yb in src.sequential():
        negative = Yb < 0
        if negative.any():
            # column-major order: first offending column, then first row in it
            col_local, row = np.argwhere(negative.T)[0]
            raise DomainError(f"Input must be non-negative: entry ({row}, {columns[col_local]}) "
                              f"is {Yb[row, col_local]:.6g}")


def _check_rank(name: str, r: int, n: int, m: int):
    if not 1 <= r <= min(n, m):
        raise ParameterError(f"{name} must be between 1 and min(n, m) = {min(n, m)}, got {r}")


# ── Projective NMF ─────────────────────────────────────────────────────────

def frobenius_grad(W: np.ndarray, Yb: np.ndarray) -> Tuple[float, np.ndarray]:
    """||Yb - W W^T Yb||_F^2 and its gradient with respect to W"""
    R = residual(W, Yb)
    return fro_norm(R) ** 2, -bilinear_grad(W, Yb, 2.0 * R)


def _frobenius_objective(params: List[np.ndarray], Yb: np.ndarray) -> Tuple[float, List[np.ndarray]]:
    loss, grad = frobenius_grad(params[0], Yb)
    return loss, [grad]


def nmf_train(src: BatchSource, r: int, cfg: Optional[TrainConfig] = None) -> Tuple[NmfModel, List[float]]:
    """
    Projective NMF: minimize ||Y - W W^T Y||_F^2 subject to W >= 0

    W starts at |N(0, 1/n)| and is clamped at zero after every Adam step.
    Raises DomainError if Y has a negative entry.
    """
    cfg = cfg or TrainConfig()
    n, m = src.shape
    _check_rank("rank", r, n, m)
    validate_nonnegative(src)

    W = np.abs(init_weights(n, r, cfg.seed, cfg.np_dtype))
    logger.info(f"Training projective NMF: {n} x {m}, rank {r}, lr {cfg.learning_rate}, {cfg.epochs} epochs")
    history = optimize(src, [W], _frobenius_objective, cfg, project=[_clamp_in_place], label=f"NMF r={r}")
    return NmfModel(W=W), history


def nmf_coefficients(model: NmfModel, src: BatchSource) -> np.ndarray:
    """H = W^T Y (r x m) in one streaming pass, so that Y ~ W H"""
    H = np.zeros((model.r, src.cols), dtype=np.float32, order='F')
    for columns, Yb in src.sequential():
        H[:, columns] = model.W.T @ Yb.astype(model.W.dtype, copy=False)
    return H


# ── Cascaded BEAR ──────────────────────────────────────────────────────────

def _cascade_terms(W1: np.ndarray, W2: np.ndarray, Yb: np.ndarray, mu: float):
    check_conform(W1, Yb)
    check_conform(W2, Yb)

    S = residual(W1, Yb)
    G1 = np.sign(S)
    loss = l1_norm(S)
    if mu == 0:
        return loss, -bilinear_grad(W1, Yb, G1), np.zeros_like(W2)

    P = relu(S)
    R = residual(W2, P)
    loss += mu * fro_norm(R) ** 2

    # d||R||^2/dP = 2 (R - W2 W2^T R), passed back through ReLU where S > 0
    dP = 2.0 * residual(W2, R)
    H = G1 + mu * np.where(S > 0, dP, 0)
    gW1 = -bilinear_grad(W1, Yb, H)
    gW2 = -mu * bilinear_grad(W2, P, 2.0 * R)
    return loss, gW1, gW2


def cascade_loss(W1: np.ndarray, W2: np.ndarray, Yb: np.ndarray, mu: float) -> float:
    """||S||_1 + mu ||ReLU(S) - W2 W2^T ReLU(S)||_F^2 with S = Yb - W1 W1^T Yb"""
    S = residual(W1, Yb)
    loss = l1_norm(S)
    if mu != 0:
        loss += mu * fro_norm(residual(W2, relu(S))) ** 2
    return loss


def cascade_grads(W1: np.ndarray, W2: np.ndarray, Yb: np.ndarray, mu: float) -> Tuple[np.ndarray, np.ndarray]:
    """Analytic gradients of cascade_loss with respect to W1 and W2"""
    _, gW1, gW2 = _cascade_terms(W1, W2, Yb, mu)
    return gW1, gW2


def cascade_train(src: BatchSource, r1: int, r2: int, mu: float = settings.DEFAULT_CASCADE_MU,
                  cfg: Optional[TrainConfig] = None, sequential: bool = False) -> Tuple[CascadeModel, List[float]]:
    """
    Jointly train W1 (RPCA) and W2 >= 0 (NMF on ReLU of the sparse part)

    W1 uses exactly the initialization and batch order of train(), so with
    mu = 0 it follows the same trajectory and W2 keeps its initial value.
    With sequential=True the first network is trained alone and projective
    NMF then runs on ReLU(Y - W1 W1^T Y); the returned history is the
    concatenation of both stages.
    """
    cfg = cfg or TrainConfig()
    n, m = src.shape
    _check_rank("rank1", r1, n, m)
    _check_rank("rank2", r2, n, m)
    if not mu >= 0:
        raise ParameterError(f"mu must be >= 0, got {mu}")

    if sequential:
        logger.info(f"Sequential cascade: BEAR rank {r1}, then projective NMF rank {r2}")
        background, history = train(src, r1, cfg)
        W1 = background.W
        activity = src.map(lambda Yb: relu(residual(W1, Yb.astype(W1.dtype, copy=False))))
        nmf, nmf_history = nmf_train(activity, r2, cfg)
        return CascadeModel(W1=W1, W2=nmf.W, mu=mu), history + nmf_history

    W1 = init_weights(n, r1, cfg.seed, cfg.np_dtype)
    W2 = np.abs(init_weights(n, r2, [cfg.seed, 2], cfg.np_dtype))

    def objective(params: List[np.ndarray], Yb: np.ndarray) -> Tuple[float, List[np.ndarray]]:
        loss, gW1, gW2 = _cascade_terms(params[0], params[1], Yb, mu)
        return loss, [gW1, gW2]

    logger.info(f"Training cascaded BEAR: {n} x {m}, ranks {r1}/{r2}, mu {mu}, lr {cfg.learning_rate}, "
                f"{cfg.epochs} epochs, batch {cfg.batch_size}")
    history = optimize(src, [W1, W2], objective, cfg, project=[None, _clamp_in_place],
                       label=f"Cascade r1={r1} r2={r2}")
    return CascadeModel(W1=W1, W2=W2, mu=mu), history


def extract_footprints(model: CascadeModel, src: BatchSource, normalize: bool = False) -> Footprints:
    """
    Spatial footprints W2 and temporal traces W2^T ReLU(Y - W1 W1^T Y)

    With normalize set, spatial columns get unit l2 norm and the scale moves
    into the temporal rows, leaving spatial @ temporal unchanged.
    """
    if model.W1.shape[0] != src.rows:
        raise DimensionError(f"Model has {model.W1.shape[0]} rows, data has {src.rows}")

    spatial = np.array(model.W2, dtype=np.float32, order='F', copy=True)
    temporal = np.zeros((model.r2, src.cols), dtype=np.float32, order='F')
    for columns, Yb in src.sequential():
        P = relu(residual(model.W1, Yb.astype(model.W1.dtype, copy=False)))
        temporal[:, columns] = model.W2.T @ P

    if normalize:
        norms = np.linalg.norm(spatial.astype(np.float64), axis=0)
        scale = np.where(norms > 0, norms, 1.0)
        spatial = np.asfortranarray(spatial / scale, dtype=np.float32)
        temporal = np.asfortranarray(temporal * scale[:, None], dtype=np.float32)

    logger.info(f"Extracted {model.r2} footprints over {src.cols} frames")
    return Footprints(spatial=spatial, temporal=temporal)
