"""
Acceptance-scale runs; deselected by default, run with `pytest -m slow`
"""

import os
import time
import tracemalloc

import numpy as np
import pytest
from scipy import stats

from baselines import nmf_mu
from bear_solver import TrainConfig, forward, greedy_train, infer_stream, train
from bmat_store import BmatSink, open_batch_source
from matrix_core import relative_error
from nmf_cascade import cascade_train, extract_footprints, nmf_train
from synth_bench import gen_composite, gen_video, phase_diagram, score_footprints

pytestmark = pytest.mark.slow

OUT_OF_CORE_BYTES = int(os.getenv('BEAR_ACCEPTANCE_BYTES', str(4 * 1024 ** 3)))
OUT_OF_CORE_ROWS = 4096
MEMORY_CAP_BYTES = 512 * 1024 * 1024


def test_exact_rank_is_attainable():
    Y, _, _ = gen_composite(60, 3, 0.0, seed=11)
    cfg = TrainConfig(learning_rate=0.003, epochs=200, batch_size=60)
    model, _ = train(open_batch_source(Y, cfg.batch_size), 3, cfg)
    assert relative_error(Y, forward(model.W, Y)) <= 1e-2


def test_phase_diagram_low_error_cells(tmp_path):
    n = 200
    cells = phase_diagram(n, [2, 10, 20], [0.05, 0.2], trials=5, out_csv=tmp_path / "phase.csv", oracle=True,
                          jobs=2)
    by_cell = {(cell.r, cell.rho): cell for cell in cells}

    for r in (2, 10):
        cell = by_cell[(r, 0.05)]
        assert cell.rel_err_mean <= 0.05
        assert cell.bear_vs_oracle_mean <= 0.05

    for r in (2, 10, 20):
        low, high = by_cell[(r, 0.05)], by_cell[(r, 0.2)]
        assert high.rel_err_mean >= 0.8 * low.rel_err_mean


def test_greedy_finds_true_rank():
    n = 200
    chosen = []
    for seed in range(5):
        Y, _, _ = gen_composite(n, 5, 0.1, seed=seed)
        result = greedy_train(open_batch_source(Y, 1000), cfg=TrainConfig(), rank_schedule=range(1, 11))
        chosen.append(result.chosen_rank)
    assert sum(r in (4, 5, 6) for r in chosen) >= 4, chosen


def test_greedy_stops_at_pure_rank_two():
    Y, _, _ = gen_composite(60, 2, 0.0, seed=3)
    cfg = TrainConfig(learning_rate=0.003, epochs=200, batch_size=60)
    result = greedy_train(open_batch_source(Y, 60), lam=1.0, cfg=cfg, rank_schedule=[1, 2, 3, 4])
    assert result.chosen_rank == 2


class TestOutOfCore:
    @pytest.fixture(scope="class")
    def large_file(self, tmp_path_factory):
        path = str(tmp_path_factory.mktemp("ooc") / "Y.bmat")
        cols = OUT_OF_CORE_BYTES // (4 * OUT_OF_CORE_ROWS)
        rng = np.random.default_rng(0)
        basis = rng.standard_normal((OUT_OF_CORE_ROWS, 8)).astype(np.float32)
        with BmatSink(path, OUT_OF_CORE_ROWS, cols) as sink:
            for start in range(0, cols, 4096):
                columns = np.arange(start, min(start + 4096, cols))
                block = basis @ rng.standard_normal((8, len(columns))).astype(np.float32)
                sink.write(columns, block)
        return path

    def test_stays_under_memory_cap(self, large_file, tmp_path):
        cfg = TrainConfig(epochs=1, batch_size=1000)
        src = open_batch_source(large_file, cfg.batch_size)

        tracemalloc.start()
        try:
            model, _ = train(src, 8, cfg)
            n, m = src.shape
            with BmatSink(tmp_path / "L.bmat", n, m) as l_sink, BmatSink(tmp_path / "S.bmat", n, m) as s_sink:
                infer_stream(model, src, l_sink, s_sink, s_dtype=np.float32)
            _, peak = tracemalloc.get_traced_memory()
        finally:
            tracemalloc.stop()
        assert peak < MEMORY_CAP_BYTES

    def test_epoch_time_linear_in_rank(self, large_file):
        src = open_batch_source(large_file, 1000).head(20_000)
        cfg = TrainConfig(epochs=1, batch_size=1000, threads=1)
        ranks = [4, 8, 16, 32]

        seconds = []
        for r in ranks:
            runs = []
            for _ in range(3):
                start = time.perf_counter()
                train(src, r, cfg)
                runs.append(time.perf_counter() - start)
            seconds.append(min(runs))

        fit = stats.linregress(ranks, seconds)
        assert fit.slope > 0
        assert fit.rvalue ** 2 >= 0.95, seconds

    def test_partial_training_is_faster(self, large_file):
        src = open_batch_source(large_file, 1000).head(6_000)
        cfg = TrainConfig(epochs=3, batch_size=1000, threads=1)

        def timed(train_src):
            start = time.perf_counter()
            model, _ = train(train_src, 8, cfg)
            infer_stream(model, src, s_dtype=np.float32)
            return time.perf_counter() - start

        assert timed(src.head(2_000)) < timed(src)


def test_cascade_footprints_on_blob_video():
    video, truth = gen_video(seed=0)
    cfg = TrainConfig(learning_rate=0.003, epochs=300, batch_size=100)
    src = open_batch_source(video, cfg.batch_size)

    model, _ = cascade_train(src, 1, 8, mu=1.0, cfg=cfg)
    background = forward(model.W1, video.astype(np.float32))
    assert relative_error(truth.background, background) <= 0.05

    footprints = extract_footprints(model, src)
    score = score_footprints(footprints.spatial, truth.spatial_truth, footprints.temporal, truth.activation_truth)
    assert score.min_confinement >= 0.8
    assert score.min_correlation >= 0.8

    conventional = nmf_mu(video, 8, iters=200, seed=0)
    assert score.mean_confinement > score_footprints(conventional.W, truth.spatial_truth).mean_confinement


def test_training_loss_trend_is_monotone():
    Y, _, _ = gen_composite(200, 5, 0.1, seed=0)
    cfg = TrainConfig()
    _, history = train(open_batch_source(Y, cfg.batch_size), 5, cfg)
    warmup = max(1, len(history) // 10)
    for epoch in range(warmup, len(history) - 1):
        assert history[epoch + 1] <= 1.05 * history[epoch], (epoch, history)


@pytest.mark.parametrize("seed", range(5))
def test_cascade_loss_decreases_on_blob_video(seed):
    video, _ = gen_video(seed=seed)
    cfg = TrainConfig(learning_rate=0.003, epochs=50, batch_size=100)
    _, history = cascade_train(open_batch_source(video, cfg.batch_size), 1, 8, mu=1.0, cfg=cfg)
    assert history[-1] < history[0]


def test_nmf_footprints_without_background():
    video, truth = gen_video(seed=0, rank1_bg=False)
    cfg = TrainConfig(learning_rate=0.003, epochs=300, batch_size=100)
    model, _ = nmf_train(open_batch_source(video, cfg.batch_size), 8, cfg)
    assert model.W.min() >= 0
    assert score_footprints(model.W, truth.spatial_truth).min_confinement >= 0.8
