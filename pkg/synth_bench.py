"""
Synthetic data generators and the phase-diagram benchmark

gen_low_rank / gen_sparse build the standard RPCA test matrices: L = X Z^T with
N(0, 1/n) factors and a sparse part taking +-0.1 with probability rho/2 each.
gen_video builds a non-negative blob video with known footprints for
scoring the cascade. phase_diagram sweeps (rank, sparsity) cells with
Greedy BEAR and writes one CSV row per cell.
"""

import math
import time
import logging
from collections import Counter
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from joblib import Parallel, delayed
from scipy import signal

from baselines import IalmConfig, ialm_rpca
from bear_solver import TrainConfig, default_lambda, greedy_train, infer_stream
from bmat_store import open_batch_source, write_metrics_csv
from errors import BearError, ParameterError
from matrix_core import MATRIX_DTYPE, relative_error
import settings

logger = logging.getLogger(__name__)

PHASE_COLUMNS = ["n", "r", "rho", "lambda", "trials", "rel_err_mean", "time_mean_seconds", "chosen_rank_mode"]
ORACLE_COLUMNS = ["oracle_rel_err_mean", "bear_vs_oracle_mean"]

SPARSE_MAGNITUDE = 0.1


# ── RPCA generators ────────────────────────────────────────────────────────

def gen_low_rank(n: int, r: int, seed) -> np.ndarray:
    """L = X Z^T with X, Z n x r and i.i.d. N(0, 1/n) entries"""
    if not 1 <= r <= n:
        raise ParameterError(f"rank must be between 1 and n = {n}, got {r}")
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, r)) / math.sqrt(n)
    Z = rng.standard_normal((n, r)) / math.sqrt(n)
    return np.asfortranarray(X @ Z.T, dtype=MATRIX_DTYPE)


def gen_sparse(n: int, rho: float, seed) -> np.ndarray:
    """Entries +0.1 and -0.1 with probability rho/2 each, 0 otherwise"""
    if not 0 <= rho <= 1:
        raise ParameterError(f"rho must lie in [0, 1], got {rho}")
    u = np.random.default_rng(seed).random((n, n))
    S = np.where(u < rho / 2, SPARSE_MAGNITUDE, np.where(u < rho, -SPARSE_MAGNITUDE, 0.0))
    return np.asfortranarray(S, dtype=MATRIX_DTYPE)


def gen_composite(n: int, r: int, rho: float, seed) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(Y, L, S) with Y = L + S; L and S use independent child streams of seed"""
    low_rank_seed, sparse_seed = np.random.SeedSequence(seed).spawn(2)
    L = gen_low_rank(n, r, low_rank_seed)
    S = gen_sparse(n, rho, sparse_seed)
    return np.asfortranarray(L + S), L, S


# ── Blob video ─────────────────────────────────────────────────────────────

@dataclass
class BlobVideoTruth:
    background: np.ndarray          # n x m, rank 1, >= 0
    spatial_truth: np.ndarray       # n x k blob profiles, disjoint supports
    activation_truth: np.ndarray    # k x m sparse traces, >= 0
    side: int

    @property
    def supports(self) -> np.ndarray:
        return self.spatial_truth > 0

    def video(self) -> np.ndarray:
        return np.asfortranarray(self.background + self.spatial_truth @ self.activation_truth, dtype=MATRIX_DTYPE)


def _blob_profiles(side: int, k: int, rng: np.random.Generator) -> np.ndarray:
    per_row = math.ceil(math.sqrt(k)) if k else 1
    cell = side // per_row
    if k and cell < 5:
        raise ParameterError(f"Cannot pack {k} blobs into a {side} x {side} grid (lattice cell of {cell} px)")

    yy, xx = np.mgrid[0:side, 0:side]
    sigma = cell / 6.0
    radius = cell / 2.0 - 0.5
    spatial = np.zeros((side * side, k))
    for j, slot in enumerate(rng.permutation(per_row * per_row)[:k]):
        cy = (slot // per_row) * cell + (cell - 1) / 2.0
        cx = (slot % per_row) * cell + (cell - 1) / 2.0
        d2 = (yy - cy) ** 2 + (xx - cx) ** 2
        profile = np.where(d2 <= radius ** 2, np.exp(-d2 / (2 * sigma ** 2)), 0.0)
        spatial[:, j] = profile.ravel(order='F')
    return spatial


def _activation_traces(k: int, frames: int, rng: np.random.Generator, event_rate: float,
                       decay_frames: float) -> np.ndarray:
    if k == 0:
        return np.zeros((0, frames))
    events = (rng.random((k, frames)) < event_rate) * rng.uniform(1.0, 2.0, size=(k, frames))
    return signal.lfilter([1.0], [1.0, -math.exp(-1.0 / decay_frames)], events, axis=1)


def gen_video(n_pixels: int = 4096, frames: int = 500, k_blobs: int = 8, rank1_bg: bool = True, seed=0,
              event_rate: float = 0.01, decay_frames: float = 5.0,
              background_level: float = 1.0) -> Tuple[np.ndarray, BlobVideoTruth]:
    """
    Non-negative video (pixels x frames) of k Gaussian blobs over a rank-1 background

    Pixels form a square grid (n_pixels must be a perfect square). Blobs sit
    in distinct cells of a lattice, so their supports are disjoint. Each blob
    fires at random frames with an exponentially decaying transient. Raises
    ParameterError when the blobs do not fit the grid.
    """
    side = math.isqrt(n_pixels)
    if side * side != n_pixels:
        raise ParameterError(f"n_pixels must be a perfect square, got {n_pixels}")
    if frames < 1 or k_blobs < 0:
        raise ParameterError(f"Need frames >= 1 and k_blobs >= 0, got {frames}, {k_blobs}")

    rng = np.random.default_rng(seed)
    spatial = _blob_profiles(side, k_blobs, rng)
    activations = _activation_traces(k_blobs, frames, rng, event_rate, decay_frames)

    if rank1_bg:
        yy, xx = np.mgrid[0:side, 0:side]
        centre = (side - 1) / 2.0
        spatial_bg = 1.0 + 0.5 * np.exp(-((yy - centre) ** 2 + (xx - centre) ** 2) / (2 * (side / 3.0) ** 2))
        temporal_bg = 1.0 + 0.2 * np.sin(2 * math.pi * np.arange(frames) / max(frames, 2))
        background = background_level * np.outer(spatial_bg.ravel(order='F'), temporal_bg)
    else:
        background = np.zeros((n_pixels, frames))

    truth = BlobVideoTruth(
        background=np.asfortranarray(background, dtype=MATRIX_DTYPE),
        spatial_truth=np.asfortranarray(spatial, dtype=MATRIX_DTYPE),
        activation_truth=np.asfortranarray(activations, dtype=MATRIX_DTYPE),
        side=side,
    )
    return truth.video(), truth


# ── Footprint scoring ──────────────────────────────────────────────────────

@dataclass
class FootprintScore:
    matches: List[Tuple[int, int]]          # (estimated component, true blob)
    confinement: List[float]                # share of l1 mass inside the matched blob support
    correlation: List[float] = field(default_factory=list)   # Pearson of matched traces

    @property
    def min_confinement(self) -> float:
        return min(self.confinement) if self.confinement else 0.0

    @property
    def mean_confinement(self) -> float:
        return float(np.mean(self.confinement)) if self.confinement else 0.0

    @property
    def min_correlation(self) -> float:
        return min(self.correlation) if self.correlation else 0.0


def overlap_matrix(spatial: np.ndarray, supports: np.ndarray) -> np.ndarray:
    """O[i, j] = share of |spatial[:, i]| mass inside support j"""
    mass = np.abs(np.asarray(spatial, dtype=np.float64))
    totals = mass.sum(axis=0)
    inside = mass.T @ supports.astype(np.float64)
    return np.divide(inside, totals[:, None], out=np.zeros_like(inside), where=totals[:, None] > 0)


def match_components(spatial: np.ndarray, supports: np.ndarray) -> List[Tuple[int, int, float]]:
    """Greedy maximal-overlap one-to-one assignment of estimated components to true blobs"""
    O = overlap_matrix(spatial, supports)
    matches = []
    for _ in range(min(O.shape)):
        i, j = np.unravel_index(np.argmax(O), O.shape)
        matches.append((int(i), int(j), float(O[i, j])))
        O[i, :] = -1.0
        O[:, j] = -1.0
    return matches


def pearson(a: np.ndarray, b: np.ndarray) -> float:
    """Pearson correlation; 0 when either trace is constant"""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.std() == 0 or b.std() == 0:
        return 0.0
    return float(np.corrcoef(a, b)[0, 1])


def score_footprints(spatial: np.ndarray, truth_spatial: np.ndarray, temporal: Optional[np.ndarray] = None,
                     truth_temporal: Optional[np.ndarray] = None) -> FootprintScore:
    """Match components to blobs and score spatial confinement and, given traces, temporal correlation"""
    matches = match_components(spatial, truth_spatial > 0)
    score = FootprintScore(matches=[(i, j) for i, j, _ in matches],
                           confinement=[overlap for _, _, overlap in matches])
    if temporal is not None and truth_temporal is not None:
        score.correlation = [pearson(temporal[i], truth_temporal[j]) for i, j, _ in matches]
    return score


# ── Phase diagram ──────────────────────────────────────────────────────────

@dataclass
class PhaseCellResult:
    n: int
    r: int
    rho: float
    lam: float
    trials: int
    rel_err_mean: float
    time_mean_seconds: float
    chosen_ranks: List[int] = field(default_factory=list)
    rel_errs: List[float] = field(default_factory=list)
    oracle_rel_err_mean: Optional[float] = None
    bear_vs_oracle_mean: Optional[float] = None

    @property
    def chosen_rank_mode(self) -> int:
        """Most frequent chosen rank, the smallest one on ties"""
        counts = Counter(self.chosen_ranks)
        top = max(counts.values())
        return min(rank for rank, count in counts.items() if count == top)

    def to_record(self, oracle: bool = False) -> Dict:
        record = {
            "n": self.n,
            "r": self.r,
            "rho": self.rho,
            "lambda": self.lam,
            "trials": self.trials,
            "rel_err_mean": self.rel_err_mean,
            "time_mean_seconds": self.time_mean_seconds,
            "chosen_rank_mode": self.chosen_rank_mode,
        }
        if oracle:
            record["oracle_rel_err_mean"] = self.oracle_rel_err_mean
            record["bear_vs_oracle_mean"] = self.bear_vs_oracle_mean
        return record


def cell_seed(master_seed: int, r: int, rho: float, trial: int) -> np.random.SeedSequence:
    """Seed of one trial, independent of the order cells are scheduled in"""
    return np.random.SeedSequence([master_seed, r, int(round(rho * 1_000_000)), trial])


def phase_cell(n: int, r: int, rho: float, lam: Optional[float] = None, cfg: Optional[TrainConfig] = None,
               trials: int = 5, seed: int = 0, rank_schedule: Optional[Sequence[int]] = None,
               oracle: bool = False) -> PhaseCellResult:
    """
    Run Greedy BEAR on `trials` generated L + S instances and average

    Each trial reports relative_error(L, L_hat) and the wall time of greedy
    training plus inference. With oracle set (and n under the SVD cap), IALM
    runs on the same data for comparison.
    """
    if trials < 1:
        raise ParameterError(f"trials must be >= 1, got {trials}")
    cfg = cfg or TrainConfig()
    lam = default_lambda(n, n) if lam is None else lam
    use_oracle = oracle and n <= settings.SVD_CAP
    if oracle and not use_oracle:
        logger.warning(f"n = {n} exceeds the SVD cap {settings.SVD_CAP}; skipping the IALM oracle")

    rel_errs, times, ranks, oracle_errs, agreement = [], [], [], [], []
    for trial in range(trials):
        try:
            Y, L, _ = gen_composite(n, r, rho, cell_seed(seed, r, rho, trial))
            src = open_batch_source(Y, cfg.batch_size, seed=cfg.seed, shuffle=cfg.shuffle)

            start = time.perf_counter()
            result = greedy_train(src, lam, cfg, rank_schedule)
            L_hat = infer_stream(result.model, src).L
            times.append(time.perf_counter() - start)

            rel_errs.append(relative_error(L, L_hat))
            ranks.append(result.chosen_rank)

            if use_oracle:
                reference = ialm_rpca(Y, IalmConfig(lam=lam)).L
                oracle_errs.append(relative_error(L, reference))
                agreement.append(relative_error(reference, L_hat))
        except BearError as e:
            raise type(e)(f"Phase cell r={r}, rho={rho}, trial {trial}: {e}") from e

    cell = PhaseCellResult(
        n=n, r=r, rho=rho, lam=lam, trials=trials,
        rel_err_mean=float(np.mean(rel_errs)),
        time_mean_seconds=float(np.mean(times)),
        chosen_ranks=ranks,
        rel_errs=rel_errs,
        oracle_rel_err_mean=float(np.mean(oracle_errs)) if use_oracle else None,
        bear_vs_oracle_mean=float(np.mean(agreement)) if use_oracle else None,
    )
    logger.info(f"Cell r={r}, rho={rho}: rel_err_mean {cell.rel_err_mean:.4g}, "
                f"chosen ranks {ranks}, {cell.time_mean_seconds:.2f}s per trial")
    return cell


def phase_diagram(n: int, r_list: Sequence[int], rho_list: Sequence[float], lam: Optional[float] = None,
                  cfg: Optional[TrainConfig] = None, trials: int = 5, out_csv=None, seed: int = 0,
                  jobs: int = 1, oracle: bool = False,
                  rank_schedule: Optional[Sequence[int]] = None) -> List[PhaseCellResult]:
    """Run phase_cell over the (r, rho) grid, optionally in parallel, and write the CSV"""
    if not r_list or not rho_list:
        raise ParameterError("phase_diagram needs non-empty rank and rho lists")
    cfg = cfg or TrainConfig()
    lam = default_lambda(n, n) if lam is None else lam
    grid = [(r, rho) for r in r_list for rho in rho_list]

    logger.info("=" * 60)
    logger.info(f"Phase diagram: n={n}, {len(r_list)} ranks x {len(rho_list)} rhos, {trials} trials, "
                f"lambda {lam:.6g}, {jobs} job(s)")
    logger.info("=" * 60)

    cells = Parallel(n_jobs=jobs)(
        delayed(phase_cell)(n, r, rho, lam, cfg, trials, seed, rank_schedule, oracle) for r, rho in grid
    )

    if out_csv is not None:
        columns = PHASE_COLUMNS + (ORACLE_COLUMNS if oracle else [])
        write_metrics_csv([cell.to_record(oracle) for cell in cells], out_csv, fieldnames=columns)
        logger.info(f"Wrote {len(cells)} cells to {out_csv}")
    return cells
