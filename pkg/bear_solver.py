"""
Bilinear low-rank + sparse decomposition (BEAR)

The low-rank part is parameterized as L = W W^T Y with W of shape n x r, and W
is trained by Adam on mini-batches of columns to minimize ||S||_1 where
S = Y - L. Forward and backward passes are two thin matrix products each, so
one epoch costs O(n m r) and never forms the n x n matrix W W^T.
"""

import math
import time
import logging
from dataclasses import asdict, dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np

from bmat_store import BatchSource, MatrixSink, read_bmat, write_bmat
from errors import DimensionError, NumericalError, ParameterError
from matrix_core import l1_norm
import settings

logger = logging.getLogger(__name__)

SUPPORTED_DTYPES = {"float32": np.float32, "float64": np.float64}


@dataclass
class TrainConfig:
    """Optimizer hyperparameters; defaults come from settings.DEFAULT_TRAIN_CONFIG"""
    learning_rate: float = settings.DEFAULT_TRAIN_CONFIG["learning_rate"]
    epochs: int = settings.DEFAULT_TRAIN_CONFIG["epochs"]
    batch_size: int = settings.DEFAULT_TRAIN_CONFIG["batch_size"]
    seed: int = settings.DEFAULT_TRAIN_CONFIG["seed"]
    adam_beta1: float = settings.DEFAULT_TRAIN_CONFIG["adam_beta1"]
    adam_beta2: float = settings.DEFAULT_TRAIN_CONFIG["adam_beta2"]
    adam_eps: float = settings.DEFAULT_TRAIN_CONFIG["adam_eps"]
    early_stop_rel_tol: Optional[float] = settings.DEFAULT_TRAIN_CONFIG["early_stop_rel_tol"]
    shuffle: bool = settings.DEFAULT_TRAIN_CONFIG["shuffle"]
    threads: int = settings.DEFAULT_TRAIN_CONFIG["threads"]
    dtype: str = settings.DEFAULT_TRAIN_CONFIG["dtype"]
    divergence_factor: float = settings.DEFAULT_TRAIN_CONFIG["divergence_factor"]

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ParameterError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.epochs < 0:
            raise ParameterError(f"epochs must be >= 0, got {self.epochs}")
        if self.batch_size < 1:
            raise ParameterError(f"batch_size must be >= 1, got {self.batch_size}")
        if not (0 < self.adam_beta1 < 1 and 0 < self.adam_beta2 < 1):
            raise ParameterError(f"Adam betas must lie in (0, 1), got {self.adam_beta1}, {self.adam_beta2}")
        if not self.adam_eps > 0:
            raise ParameterError(f"adam_eps must be positive, got {self.adam_eps}")
        if self.early_stop_rel_tol is not None and self.early_stop_rel_tol < 0:
            raise ParameterError(f"early_stop_rel_tol must be >= 0, got {self.early_stop_rel_tol}")
        if self.seed < 0:
            raise ParameterError(f"seed must be >= 0, got {self.seed}")
        if self.threads < 1:
            raise ParameterError(f"threads must be >= 1, got {self.threads}")
        if self.dtype not in SUPPORTED_DTYPES:
            raise ParameterError(f"dtype must be one of {sorted(SUPPORTED_DTYPES)}, got {self.dtype}")

    @classmethod
    def from_dict(cls, overrides: Optional[dict] = None) -> 'TrainConfig':
        """Merge overrides (None values ignored) over the defaults"""
        known = {k: v for k, v in (overrides or {}).items() if k in settings.DEFAULT_TRAIN_CONFIG and v is not None}
        return cls(**{**settings.DEFAULT_TRAIN_CONFIG, **known})

    def to_dict(self) -> dict:
        return asdict(self)

    @property
    def np_dtype(self):
        return SUPPORTED_DTYPES[self.dtype]


@dataclass
class AdamState:
    """First/second moment accumulators and step counter for one parameter"""
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros_like(cls, W: np.ndarray) -> 'AdamState':
        return cls(m=np.zeros_like(W), v=np.zeros_like(W), t=0)


@dataclass
class BearModel:
    """Trained factor W; the low-rank part of any Y is W (W^T Y)"""
    W: np.ndarray

    @property
    def r(self) -> int:
        return self.W.shape[1]

    @property
    def n(self) -> int:
        return self.W.shape[0]

    def save(self, path):
        write_bmat(self.W, path)

    @classmethod
    def load(cls, path) -> 'BearModel':
        return cls(W=read_bmat(path))


@dataclass
class Decomposition:
    """L and S = Y - L, each an in-memory matrix or the path of a BMAT file"""
    L: Union[np.ndarray, str]
    S: Union[np.ndarray, str]


@dataclass
class GreedyResult:
    model: BearModel
    chosen_rank: int
    objective_trace: List[Tuple[int, float]]
    exhausted: bool = False
    loss_histories: List[List[float]] = field(default_factory=list)


def default_lambda(n: int, m: int) -> float:
    """Standard principal component pursuit weighting 1/sqrt(max(n, m))"""
    return 1.0 / math.sqrt(max(n, m))


def init_weights(n: int, r: int, seed, dtype=np.float32) -> np.ndarray:
    """Seeded i.i.d. N(0, 1/n) entries"""
    rng = np.random.default_rng(seed)
    return np.asfortranarray(rng.standard_normal((n, r)) / math.sqrt(n), dtype=dtype)


def estimate_working_bytes(n: int, batch_size: int, r: int, itemsize: int = 4) -> int:
    """Rough peak heap use of one training step: batch temporaries plus W and its Adam moments."""
    return 6 * n * batch_size * itemsize + 6 * n * r * itemsize


# ── Forward / loss / gradient ──────────────────────────────────────────────

def check_conform(W: np.ndarray, Yb: np.ndarray):
    if W.ndim != 2 or Yb.ndim != 2 or W.shape[0] != Yb.shape[0]:
        raise DimensionError(f"W of shape {W.shape} does not conform with batch of shape {Yb.shape}")


def forward(W: np.ndarray, Yb: np.ndarray) -> np.ndarray:
    """Low-rank part W (W^T Yb), two thin products."""
    check_conform(W, Yb)
    return W @ (W.T @ Yb)


def residual(W: np.ndarray, Yb: np.ndarray) -> np.ndarray:
    return Yb - forward(W, Yb)


def bilinear_grad(W: np.ndarray, Yb: np.ndarray, G: np.ndarray) -> np.ndarray:
    """
    Gradient of <G, W W^T Yb> with respect to W, i.e. G (Yb^T W) + Yb (G^T W)

    Every loss of the form f(Yb - W W^T Yb) has gradient -bilinear_grad(W, Yb, df/dS).
    """
    return G @ (Yb.T @ W) + Yb @ (G.T @ W)


def l1_loss(W: np.ndarray, Yb: np.ndarray) -> float:
    return l1_norm(residual(W, Yb))


def grad_w(W: np.ndarray, Yb: np.ndarray) -> np.ndarray:
    """Subgradient of ||Yb - W W^T Yb||_1 with sign(0) = 0"""
    S = residual(W, Yb)
    return -bilinear_grad(W, Yb, np.sign(S))


def adam_step(state: AdamState, W: np.ndarray, grad: np.ndarray, cfg: TrainConfig) -> Tuple[AdamState, np.ndarray]:
    """One bias-corrected Adam update, applied in place to W and the state"""
    if state.m.shape != W.shape or grad.shape != W.shape:
        raise DimensionError(f"Adam shapes differ: W {W.shape}, grad {grad.shape}, moments {state.m.shape}")

    state.t += 1
    bc1 = 1.0 - cfg.adam_beta1 ** state.t
    bc2 = 1.0 - cfg.adam_beta2 ** state.t

    state.m *= cfg.adam_beta1
    state.m += (1.0 - cfg.adam_beta1) * grad
    state.v *= cfg.adam_beta2
    state.v += (1.0 - cfg.adam_beta2) * (grad * grad)

    m_hat = state.m / bc1
    v_hat = state.v / bc2
    W -= cfg.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.adam_eps)
    return state, W


# ── Training loop ──────────────────────────────────────────────────────────

BatchObjective = Callable[[List[np.ndarray], np.ndarray], Tuple[float, List[np.ndarray]]]
Projection = Callable[[np.ndarray], None]


def optimize(src: BatchSource, params: List[np.ndarray], batch_objective: BatchObjective, cfg: TrainConfig,
             project: Optional[Sequence[Optional[Projection]]] = None, label: str = "BEAR") -> List[float]:
    """
    Run Adam over the source for cfg.epochs epochs, updating params in place

    batch_objective(params, Yb) returns (batch loss, gradients). project[i], when
    given, is applied in place to params[i] after every step. Returns the mean
    per-entry loss of each epoch.
    """
    n, m = src.shape
    project = project or [None] * len(params)
    states = [AdamState.zeros_like(p) for p in params]
    source = src.configure(batch_size=cfg.batch_size, seed=cfg.seed, shuffle=cfg.shuffle)

    history: List[float] = []
    log_every = max(1, cfg.epochs // 10)

    with settings.thread_limit(cfg.threads):
        for epoch in range(cfg.epochs):
            epoch_start = time.perf_counter()
            total = 0.0

            for _, Yb in source.iter_epoch(epoch):
                Yb = Yb.astype(cfg.np_dtype, copy=False)
                loss, grads = batch_objective(params, Yb)
                total += loss
                for p, g, state, projection in zip(params, grads, states, project):
                    adam_step(state, p, g, cfg)
                    if projection is not None:
                        projection(p)

            epoch_loss = total / (n * m)
            if not math.isfinite(epoch_loss):
                raise NumericalError(f"{label}: loss became non-finite in epoch {epoch + 1}")
            if history and epoch_loss > cfg.divergence_factor * history[0]:
                raise NumericalError(
                    f"{label}: diverged in epoch {epoch + 1} (loss {epoch_loss:.6g} > "
                    f"{cfg.divergence_factor:g} x initial {history[0]:.6g})"
                )
            history.append(epoch_loss)

            if (epoch + 1) % log_every == 0 or epoch + 1 == cfg.epochs:
                logger.info(f"{label} epoch {epoch + 1}/{cfg.epochs} - mean loss {epoch_loss:.6g} "
                            f"({time.perf_counter() - epoch_start:.2f}s)")

            if cfg.early_stop_rel_tol is not None and len(history) > 1:
                previous = history[-2]
                change = abs(previous - epoch_loss) / previous if previous > 0 else 0.0
                if change < cfg.early_stop_rel_tol:
                    logger.info(f"{label}: early stop after epoch {epoch + 1} (relative change {change:.3g})")
                    break

    return history


def _l1_objective(params: List[np.ndarray], Yb: np.ndarray) -> Tuple[float, List[np.ndarray]]:
    W = params[0]
    S = residual(W, Yb)
    return l1_norm(S), [-bilinear_grad(W, Yb, np.sign(S))]


def train(src: BatchSource, r: int, cfg: Optional[TrainConfig] = None,
          W0: Optional[np.ndarray] = None) -> Tuple[BearModel, List[float]]:
    """
    Train W on every batch of the source, minimizing ||S||_1

    Returns the model and the per-epoch mean loss. Raises ParameterError
    when r is outside 1..min(n, m) and NumericalError on divergence.
    """
    cfg = cfg or TrainConfig()
    n, m = src.shape
    if not 1 <= r <= min(n, m):
        raise ParameterError(f"rank must be between 1 and min(n, m) = {min(n, m)}, got {r}")

    if W0 is None:
        W = init_weights(n, r, cfg.seed, cfg.np_dtype)
    else:
        if W0.shape != (n, r):
            raise DimensionError(f"Initial W has shape {W0.shape}, expected {(n, r)}")
        W = np.array(W0, dtype=cfg.np_dtype, order='F', copy=True)

    logger.info(f"Training BEAR: {n} x {m}, rank {r}, lr {cfg.learning_rate}, {cfg.epochs} epochs, "
                f"batch {cfg.batch_size}")
    history = optimize(src, [W], _l1_objective, cfg, label=f"BEAR r={r}")
    return BearModel(W=W), history


# ── Inference ──────────────────────────────────────────────────────────────

def infer_stream(model: BearModel, src: BatchSource, l_sink=None, s_sink=None,
                 s_dtype=np.float64, batch_size: Optional[int] = None) -> Decomposition:
    """
    Single inference-only pass: per batch, L = W W^T Y (32-bit) and S = Y - L

    S is computed and stored in s_dtype; with the default 64-bit S the split
    L + S reproduces Y bitwise. Memory stays bounded by the batch size.
    """
    if model.n != src.rows:
        raise DimensionError(f"Model has {model.n} rows, data has {src.rows}")

    l_sink = l_sink or MatrixSink(src.rows, src.cols, np.float32)
    s_sink = s_sink or MatrixSink(src.rows, src.cols, s_dtype)

    start = time.perf_counter()
    for columns, Yb in src.sequential(batch_size):
        Lb = forward(model.W, Yb.astype(model.W.dtype, copy=False)).astype(np.float32)
        Sb = Yb.astype(s_dtype) - Lb.astype(s_dtype)
        l_sink.write(columns, Lb)
        s_sink.write(columns, Sb)

    logger.info(f"Inference over {src.cols} columns finished in {time.perf_counter() - start:.2f}s")
    return Decomposition(L=l_sink.close(), S=s_sink.close())


# ── Greedy rank estimation ─────────────────────────────────────────────────

def full_l1_residual(model: BearModel, src: BatchSource) -> float:
    """||Y - W W^T Y||_1 over all columns in one streaming pass"""
    total = 0.0
    for _, Yb in src.sequential():
        total += l1_norm(residual(model.W, Yb.astype(model.W.dtype, copy=False)))
    return total


def greedy_objective(model: BearModel, src: BatchSource, lam: float) -> float:
    """Target rank plus lambda times the full-data ||S||_1"""
    if lam == 0:
        return float(model.r)
    return model.r + lam * full_l1_residual(model, src)


def default_rank_schedule(max_rank: int, start: int = 1, step: int = 1) -> List[int]:
    return list(range(start, max_rank + 1, step))


def greedy_train(src: BatchSource, lam: Optional[float] = None, cfg: Optional[TrainConfig] = None,
                 rank_schedule: Optional[Sequence[int]] = None, warm_start: bool = False) -> GreedyResult:
    """
    Increase the target rank until r + lambda ||S||_1 strictly increases

    A fresh model is trained per rank (unless warm_start keeps the previous
    columns); the model of the rank before the increase is returned. If the
    schedule runs out first, the last model is returned with exhausted=True.
    """
    cfg = cfg or TrainConfig()
    n, m = src.shape
    lam = default_lambda(n, m) if lam is None else lam
    if lam < 0:
        raise ParameterError(f"lambda must be >= 0, got {lam}")

    schedule = list(rank_schedule) if rank_schedule is not None else default_rank_schedule(min(n, m))
    if not schedule:
        raise ParameterError("rank schedule is empty")
    if any(b <= a for a, b in zip(schedule, schedule[1:])):
        raise ParameterError(f"rank schedule must be strictly increasing, got {schedule}")

    logger.info(f"Greedy BEAR: lambda {lam:.6g}, schedule {schedule[0]}..{schedule[-1]}")

    trace: List[Tuple[int, float]] = []
    histories: List[List[float]] = []
    previous: Optional[BearModel] = None
    previous_objective: Optional[float] = None

    for r in schedule:
        W0 = None
        if warm_start and previous is not None:
            fresh = init_weights(n, r - previous.r, [cfg.seed, r], cfg.np_dtype)
            W0 = np.asfortranarray(np.hstack([previous.W, fresh]))

        model, history = train(src, r, cfg, W0=W0)
        objective = greedy_objective(model, src, lam)
        trace.append((r, objective))
        histories.append(history)
        logger.info(f"Greedy BEAR rank {r}: objective {objective:.6g}")

        if previous_objective is not None and objective > previous_objective:
            logger.info(f"Objective increased at rank {r}; choosing rank {previous.r}")
            return GreedyResult(previous, previous.r, trace, exhausted=False, loss_histories=histories)

        previous, previous_objective = model, objective

    logger.warning(f"Rank schedule exhausted without an objective increase; returning rank {previous.r}")
    return GreedyResult(previous, previous.r, trace, exhausted=True, loss_histories=histories)
