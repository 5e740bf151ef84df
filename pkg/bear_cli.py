"""
Command-line interface for the BEAR toolkit

    python bear_cli.py decompose --input Y.bmat --rank 5 --out-l L.bmat --out-s S.bmat
    python bear_cli.py greedy    --input Y.bmat --out-l L.bmat --out-s S.bmat
    python bear_cli.py nmf       --input Y.bmat --rank 8 --out-w W.bmat --out-h H.bmat
    python bear_cli.py cascade   --input V.bmat --rank1 1 --rank2 8 --out-spatial A.bmat --out-temporal C.bmat
    python bear_cli.py bench     --n 200 --ranks 2 10 20 --rhos 0.05 0.2 --out phase.csv
    python bear_cli.py gen       --kind composite --n 200 --rank 5 --rho 0.1 --out Y.bmat
    python bear_cli.py info      --input Y.bmat
    python bear_cli.py replay    --manifest L.bmat.manifest

Progress goes to standard error (and the log file); results go to files only.
Every command except info and replay writes a run manifest next to its first
output. Exit codes: 0 ok, 2 usage/parameter, 3 format, 4 numerical, 5 I/O,
6 domain.
"""

import os
import sys
import json
import math
import time
import logging
import argparse
import tempfile
from typing import Dict, List, Optional

import numpy as np

from baselines import nmf_mu
from bear_solver import (BearModel, TrainConfig, default_lambda, default_rank_schedule, estimate_working_bytes,
                         forward, greedy_train, infer_stream, train)
from bmat_store import BmatSink, open_batch_source, read_bmat, read_header, write_bmat, write_metrics_csv
from errors import BearError, CapacityError, ParameterError
from matrix_core import fro_norm
from nmf_cascade import cascade_train, extract_footprints, nmf_coefficients, nmf_train
from synth_bench import (PHASE_COLUMNS, ORACLE_COLUMNS, gen_composite, gen_low_rank, gen_sparse, gen_video,
                         phase_diagram, score_footprints)
import settings

logger = logging.getLogger(__name__)

MANIFEST_SUFFIX = ".manifest"
INFER_ONLY_TRAIN_FRACTION = 1.0 / 3.0
INFO_BATCH_COLUMNS = 256


# ── Run manifests ──────────────────────────────────────────────────────────

def write_manifest(path: str, fields: Dict):
    """Write a flat key=value manifest (JSON-encoded values), atomically."""
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp_path = tempfile.mkstemp(prefix=".manifest-", dir=directory)
    try:
        with os.fdopen(fd, 'w') as f:
            for key, value in fields.items():
                f.write(f"{key}={json.dumps(value, sort_keys=True)}\n")
        os.replace(tmp_path, path)
    except BaseException:
        if os.path.exists(tmp_path):
            os.remove(tmp_path)
        raise
    logger.info(f"Wrote manifest {path}")


def read_manifest(path: str) -> Dict:
    fields = {}
    with open(path, 'r') as f:
        for lineno, line in enumerate(f, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise ParameterError(f"{path}:{lineno}: expected key=value")
            fields[key] = json.loads(value)
    return fields


# ── Config resolution ──────────────────────────────────────────────────────

def resolve_train_config(args) -> TrainConfig:
    """Defaults <- --preset <- explicit flags"""
    overrides = {}
    if getattr(args, "preset", None):
        overrides.update(settings.PUBLISHED_PRESETS[args.preset])
    overrides.update({
        "learning_rate": args.lr,
        "epochs": args.epochs,
        "batch_size": args.batch,
        "seed": args.seed,
        "dtype": args.dtype,
        "early_stop_rel_tol": args.early_stop,
        "threads": args.threads,
    })
    if args.no_shuffle:
        overrides["shuffle"] = False
    return TrainConfig.from_dict(overrides)


def resolved_argv(argv: List[str], cfg: TrainConfig) -> List[str]:
    """argv with every training setting pinned, so a replay ignores later default changes"""
    pinned = ["--threads", str(cfg.threads)] + list(argv) + [
        "--lr", repr(cfg.learning_rate),
        "--epochs", str(cfg.epochs),
        "--batch", str(cfg.batch_size),
        "--seed", str(cfg.seed),
        "--dtype", cfg.dtype,
    ]
    if cfg.early_stop_rel_tol is not None:
        pinned += ["--early-stop", repr(cfg.early_stop_rel_tol)]
    if not cfg.shuffle and "--no-shuffle" not in pinned:
        pinned.append("--no-shuffle")
    return pinned


def bench_argv(argv: List[str], bench: Dict) -> List[str]:
    """bench argv with the resolved grid pinned in place of --config-file"""
    pinned, skip = [], False
    for token in argv:
        if skip:
            skip = False
        elif token == "--config-file":
            skip = True
        elif not token.startswith("--config-file="):
            pinned.append(token)

    pinned += ["--n", str(bench["n"]),
               "--ranks", *[str(r) for r in bench["ranks"]],
               "--rhos", *[repr(float(rho)) for rho in bench["rhos"]],
               "--trials", str(bench["trials"]),
               "--bench-seed", str(bench["seed"]),
               "--jobs", str(bench["jobs"])]
    if bench["lam"] is not None:
        pinned += ["--lambda", repr(float(bench["lam"]))]
    if bench["oracle"] and "--oracle" not in pinned:
        pinned.append("--oracle")
    return pinned


def check_memory_budget(n: int, cfg: TrainConfig, r: int, cap_mb: int):
    need = estimate_working_bytes(n, cfg.batch_size, r, np.dtype(cfg.np_dtype).itemsize)
    cap = cap_mb * 1024 * 1024
    if need > cap:
        raise CapacityError(f"A batch of {cfg.batch_size} columns needs about {need} bytes, over the "
                            f"{cap_mb} MB memory cap; lower --batch")


def manifest_path(args, first_output: str) -> str:
    return args.manifest or first_output + MANIFEST_SUFFIX


def _base_manifest(args, argv: List[str], cfg: Optional[TrainConfig], start: float) -> Dict:
    return {
        "command": args.command,
        "argv": resolved_argv(argv, cfg) if cfg is not None else list(argv),
        "config": cfg.to_dict() if cfg is not None else {},
        "seed": cfg.seed if cfg is not None else getattr(args, "seed", None),
        "version": settings.VERSION,
        "wall_time_seconds": time.perf_counter() - start,
    }


def _open_input(args, cfg: TrainConfig):
    return open_batch_source(args.input, cfg.batch_size, seed=cfg.seed, shuffle=cfg.shuffle)


# ── Commands ───────────────────────────────────────────────────────────────

def cmd_decompose(args, argv: List[str]) -> Dict:
    start = time.perf_counter()
    cfg = resolve_train_config(args)
    src = _open_input(args, cfg)
    n, m = src.shape

    history: List[float] = []
    train_cols = m
    if args.model:
        model = BearModel.load(args.model)
        logger.info(f"Loaded rank-{model.r} model from {args.model}; inference only")
    else:
        if args.rank is None:
            raise ParameterError("decompose needs --rank (or --model for inference only)")
        train_frac = args.train_frac
        if train_frac is None and args.infer_only_after_train:
            train_frac = INFER_ONLY_TRAIN_FRACTION
        if train_frac is not None:
            if not 0 < train_frac <= 1:
                raise ParameterError(f"--train-frac must lie in (0, 1], got {train_frac}")
            train_cols = max(1, math.ceil(train_frac * m))
        check_memory_budget(n, cfg, args.rank, args.memory_cap)
        train_src = src.head(train_cols) if train_cols < m else src
        model, history = train(train_src, args.rank, cfg)

    s_dtype = np.dtype(args.s_dtype).type
    with BmatSink(args.out_l, n, m, np.float32) as l_sink, BmatSink(args.out_s, n, m, s_dtype) as s_sink:
        infer_stream(model, src, l_sink, s_sink, s_dtype=s_dtype)
    if args.out_w:
        model.save(args.out_w)

    manifest = _base_manifest(args, argv, cfg, start)
    manifest.update({
        "input": args.input,
        "outputs": [p for p in (args.out_l, args.out_s, args.out_w) if p],
        "rank": model.r,
        "train_columns": train_cols,
        "loss_history": history,
    })
    write_manifest(manifest_path(args, args.out_l), manifest)
    return manifest


def cmd_greedy(args, argv: List[str]) -> Dict:
    start = time.perf_counter()
    cfg = resolve_train_config(args)
    src = _open_input(args, cfg)
    n, m = src.shape

    lam = default_lambda(n, m) if args.lam is None else args.lam
    rank_max = args.rank_max if args.rank_max is not None else min(n, m)
    schedule = default_rank_schedule(rank_max, args.rank_start, args.rank_step)
    if schedule:
        check_memory_budget(n, cfg, schedule[-1], args.memory_cap)

    result = greedy_train(src, lam, cfg, schedule, warm_start=args.warm_start)
    with BmatSink(args.out_l, n, m, np.float32) as l_sink, BmatSink(args.out_s, n, m, np.float64) as s_sink:
        infer_stream(result.model, src, l_sink, s_sink)
    if args.out_w:
        result.model.save(args.out_w)

    logger.info(f"Greedy BEAR chose rank {result.chosen_rank} (lambda {lam:.6g})")
    manifest = _base_manifest(args, argv, cfg, start)
    manifest.update({
        "input": args.input,
        "outputs": [p for p in (args.out_l, args.out_s, args.out_w) if p],
        "lambda": lam,
        "chosen_rank": result.chosen_rank,
        "exhausted": result.exhausted,
        "objective_trace": [[r, obj] for r, obj in result.objective_trace],
        "loss_history": result.loss_histories,
    })
    write_manifest(manifest_path(args, args.out_l), manifest)
    return manifest


def cmd_nmf(args, argv: List[str]) -> Dict:
    start = time.perf_counter()
    cfg = resolve_train_config(args)

    if args.method == "mu":
        Y = read_bmat(args.input, memory_cap_bytes=args.memory_cap * 1024 * 1024)
        result = nmf_mu(Y, args.rank, iters=args.iters, seed=cfg.seed)
        W, H, history = result.W, result.H, result.objective_history
    else:
        src = _open_input(args, cfg)
        check_memory_budget(src.rows, cfg, args.rank, args.memory_cap)
        model, history = nmf_train(src, args.rank, cfg)
        W = model.W
        H = nmf_coefficients(model, src) if args.out_h else None

    write_bmat(W, args.out_w)
    if args.out_h:
        write_bmat(H, args.out_h)

    manifest = _base_manifest(args, argv, cfg, start)
    manifest.update({
        "input": args.input,
        "outputs": [p for p in (args.out_w, args.out_h) if p],
        "method": args.method,
        "rank": args.rank,
        "loss_history": history,
    })
    write_manifest(manifest_path(args, args.out_w), manifest)
    return manifest


def _traces_path(args) -> str:
    return args.out_traces or os.path.splitext(args.out_temporal)[0] + "_traces.csv"


def cmd_cascade(args, argv: List[str]) -> Dict:
    start = time.perf_counter()
    cfg = resolve_train_config(args)
    preset = settings.PUBLISHED_PRESETS.get(args.preset, {}) if args.preset else {}
    r1 = args.rank1 if args.rank1 is not None else preset.get("rank1")
    r2 = args.rank2 if args.rank2 is not None else preset.get("rank2")
    if r1 is None or r2 is None:
        raise ParameterError("cascade needs --rank1 and --rank2 (or a cascade --preset)")

    src = _open_input(args, cfg)
    n, m = src.shape
    check_memory_budget(n, cfg, r1 + r2, args.memory_cap)

    model, history = cascade_train(src, r1, r2, args.mu, cfg, sequential=args.sequential)
    footprints = extract_footprints(model, src, normalize=args.normalize)
    write_bmat(footprints.spatial, args.out_spatial)
    write_bmat(footprints.temporal, args.out_temporal)

    traces = _traces_path(args)
    fieldnames = ["frame"] + [f"component_{k}" for k in range(model.r2)]
    write_metrics_csv([dict(zip(fieldnames, [j] + [float(v) for v in footprints.temporal[:, j]]))
                       for j in range(m)], traces, fieldnames=fieldnames)

    outputs = [args.out_spatial, args.out_temporal, traces]
    if args.out_background:
        with BmatSink(args.out_background, n, m, np.float32) as sink:
            for columns, Yb in src.sequential():
                sink.write(columns, forward(model.W1, Yb.astype(model.W1.dtype, copy=False)))
        outputs.append(args.out_background)
    if args.out_w1:
        write_bmat(model.W1, args.out_w1)
        outputs.append(args.out_w1)

    manifest = _base_manifest(args, argv, cfg, start)
    manifest.update({
        "input": args.input,
        "outputs": outputs,
        "rank1": r1,
        "rank2": r2,
        "mu": args.mu,
        "sequential": args.sequential,
        "normalize": args.normalize,
        "loss_history": history,
    })

    if args.truth_spatial:
        truth_spatial = read_bmat(args.truth_spatial)
        truth_temporal = read_bmat(args.truth_temporal) if args.truth_temporal else None
        score = score_footprints(footprints.spatial, truth_spatial, footprints.temporal, truth_temporal)
        logger.info(f"Footprint overlap: min confinement {score.min_confinement:.3f}, "
                    f"mean {score.mean_confinement:.3f}"
                    + (f", min trace correlation {score.min_correlation:.3f}" if score.correlation else ""))
        manifest["footprint_confinement"] = score.confinement
        manifest["footprint_correlation"] = score.correlation

    write_manifest(manifest_path(args, args.out_spatial), manifest)
    return manifest


def cmd_bench(args, argv: List[str]) -> Dict:
    start = time.perf_counter()

    file_config = {}
    if args.config_file:
        with open(args.config_file, "r") as f:
            file_config = json.load(f)
        logger.info(f"Loaded bench config from {args.config_file}")

    bench = {**settings.DEFAULT_BENCH_CONFIG,
             **{k: v for k, v in file_config.items() if k in settings.DEFAULT_BENCH_CONFIG}}
    flags = {"n": args.n, "ranks": args.ranks, "rhos": args.rhos, "trials": args.trials, "lam": args.lam,
             "seed": args.bench_seed, "jobs": args.jobs, "oracle": True if args.oracle else None}
    bench.update({k: v for k, v in flags.items() if v is not None})

    # training keys in the config file sit under explicit flags and the preset
    for key, flag in (("learning_rate", "lr"), ("epochs", "epochs"), ("batch_size", "batch")):
        if key in file_config and getattr(args, flag) is None and not args.preset:
            setattr(args, flag, file_config[key])
    cfg = resolve_train_config(args)

    cells = phase_diagram(bench["n"], bench["ranks"], bench["rhos"], bench["lam"], cfg, bench["trials"],
                          out_csv=args.out, seed=bench["seed"], jobs=bench["jobs"], oracle=bench["oracle"])

    manifest = _base_manifest(args, bench_argv(argv, bench), cfg, start)
    manifest.update({
        "outputs": [args.out],
        "bench": bench,
        "columns": PHASE_COLUMNS + (ORACLE_COLUMNS if bench["oracle"] else []),
        "rel_err_means": [cell.rel_err_mean for cell in cells],
    })
    write_manifest(manifest_path(args, args.out), manifest)
    return manifest


def cmd_gen(args, argv: List[str]) -> Dict:
    start = time.perf_counter()
    outputs = [args.out]

    if args.kind == "lowrank":
        write_bmat(gen_low_rank(args.n, args.rank, args.seed), args.out)
    elif args.kind == "sparse":
        write_bmat(gen_sparse(args.n, args.rho, args.seed), args.out)
    elif args.kind == "composite":
        Y, L, S = gen_composite(args.n, args.rank, args.rho, args.seed)
        write_bmat(Y, args.out)
        for matrix, path in ((L, args.out_l), (S, args.out_s)):
            if path:
                write_bmat(matrix, path)
                outputs.append(path)
    else:
        video, truth = gen_video(args.pixels, args.frames, args.blobs, rank1_bg=not args.no_background,
                                 seed=args.seed)
        write_bmat(video, args.out)
        for matrix, path in ((truth.spatial_truth, args.out_truth_spatial),
                             (truth.activation_truth, args.out_truth_temporal),
                             (truth.background, args.out_background)):
            if path and matrix.size:
                write_bmat(matrix, path)
                outputs.append(path)

    manifest = _base_manifest(args, argv, None, start)
    manifest.update({"kind": args.kind, "outputs": outputs})
    write_manifest(manifest_path(args, args.out), manifest)
    return manifest


def cmd_info(args, argv: List[str]) -> Dict:
    header = read_header(args.input)
    src = open_batch_source(args.input, INFO_BATCH_COLUMNS, shuffle=False, dtype=None)

    l1, sum_sq = 0.0, 0.0
    lo, hi = math.inf, -math.inf
    for _, Yb in src.sequential():
        block = Yb.astype(np.float64)
        l1 += float(np.abs(block).sum())
        sum_sq += fro_norm(block) ** 2
        lo, hi = min(lo, float(block.min())), max(hi, float(block.max()))

    info = {
        "path": args.input,
        "rows": header.rows,
        "cols": header.cols,
        "dtype": str(header.dtype),
        "file_bytes": header.file_bytes,
        "payload_bytes": header.payload_bytes,
        "l1_norm": l1,
        "fro_norm": math.sqrt(sum_sq),
        "min": lo,
        "max": hi,
    }
    for key, value in info.items():
        print(f"{key}: {value}")
    return info


def cmd_replay(args, argv: List[str]) -> Dict:
    manifest = read_manifest(args.manifest)
    replay_argv = manifest.get("argv")
    if not replay_argv:
        raise ParameterError(f"{args.manifest} has no argv entry")

    replay_args = build_arg_parser().parse_args(replay_argv)
    if replay_args.command == "replay":
        raise ParameterError("A replay manifest cannot point at another replay")
    if manifest.get("version") != settings.VERSION:
        logger.warning(f"Manifest written by version {manifest.get('version')}, running {settings.VERSION}")

    logger.info(f"Replaying '{replay_args.command}' from {args.manifest}")
    return replay_args.handler(replay_args, replay_argv)


# ── Parser ─────────────────────────────────────────────────────────────────

def _add_train_arguments(p: argparse.ArgumentParser):
    d = settings.DEFAULT_TRAIN_CONFIG
    p.add_argument("--lr", type=float, default=None, help=f"Adam learning rate (default: {d['learning_rate']})")
    p.add_argument("--epochs", type=int, default=None, help=f"Training epochs (default: {d['epochs']})")
    p.add_argument("--batch", type=int, default=None, help=f"Columns per mini-batch (default: {d['batch_size']})")
    p.add_argument("--seed", type=int, default=None, help=f"Seed for init and batch order (default: {d['seed']})")
    p.add_argument("--dtype", choices=["float32", "float64"], default=None,
                   help=f"Training precision (default: {d['dtype']})")
    p.add_argument("--early-stop", type=float, default=None,
                   help="Stop when the relative epoch-loss change drops below this (default: off)")
    p.add_argument("--no-shuffle", action="store_true", help="Visit columns in natural order every epoch")
    p.add_argument("--preset", choices=sorted(settings.PUBLISHED_PRESETS), default=None,
                   help="Published hyperparameter set; explicit flags override it")
    p.add_argument("--memory-cap", type=int, default=settings.MEMORY_CAP_MB,
                   help=f"Working-memory budget in MB (default: {settings.MEMORY_CAP_MB})")
    p.add_argument("--manifest", type=str, default=None,
                   help="Manifest path (default: first output + .manifest)")


def build_arg_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        description="Streaming low-rank + sparse decomposition (BEAR), projective NMF and cascaded footprints"
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {settings.VERSION}")
    parser.add_argument("--threads", type=int, default=settings.DEFAULT_THREADS,
                        help=f"BLAS threads; 1 gives bit-stable results (default: {settings.DEFAULT_THREADS})")
    parser.add_argument("--log-file", type=str, default=None,
                        help=f"Log file (default: {settings.LOG_FILE})")
    parser.add_argument("--log-level", type=str, default=None,
                        help=f"Log level (default: {settings.LOG_LEVEL})")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("decompose", help="Train BEAR at a fixed rank and write L and S")
    p.add_argument("--input", required=True, help="Input BMAT (n x m)")
    p.add_argument("--rank", type=int, default=None, help="Target rank r")
    p.add_argument("--model", type=str, default=None, help="Skip training and infer with this saved W (BMAT)")
    p.add_argument("--out-l", required=True, help="Low-rank output BMAT")
    p.add_argument("--out-s", required=True, help="Sparse output BMAT")
    p.add_argument("--out-w", type=str, default=None, help="Save the trained W as BMAT")
    p.add_argument("--train-frac", type=float, default=None,
                   help="Train on the first ceil(f*m) columns, then infer over all columns")
    p.add_argument("--infer-only-after-train", action="store_true",
                   help="Shorthand for --train-frac 1/3 unless --train-frac is given")
    p.add_argument("--s-dtype", choices=["float64", "float32"], default="float64",
                   help="Precision of S; float64 keeps L + S = Y exact (default: float64)")
    _add_train_arguments(p)
    p.set_defaults(handler=cmd_decompose)

    p = sub.add_parser("greedy", help="Greedy BEAR: grow the rank until r + lambda*||S||_1 increases")
    p.add_argument("--input", required=True, help="Input BMAT (n x m)")
    p.add_argument("--lambda", dest="lam", type=float, default=None,
                   help="Sparsity weight (default: 1/sqrt(max(n, m)))")
    p.add_argument("--rank-start", type=int, default=1, help="First rank tried (default: 1)")
    p.add_argument("--rank-step", type=int, default=1, help="Rank increment (default: 1)")
    p.add_argument("--rank-max", type=int, default=None, help="Last rank tried (default: min(n, m))")
    p.add_argument("--warm-start", action="store_true", help="Keep the previous rank's columns of W")
    p.add_argument("--out-l", required=True, help="Low-rank output BMAT")
    p.add_argument("--out-s", required=True, help="Sparse output BMAT")
    p.add_argument("--out-w", type=str, default=None, help="Save the chosen W as BMAT")
    _add_train_arguments(p)
    p.set_defaults(handler=cmd_greedy)

    p = sub.add_parser("nmf", help="Non-negative factorization of a non-negative BMAT")
    p.add_argument("--input", required=True, help="Input BMAT, all entries >= 0")
    p.add_argument("--rank", type=int, required=True, help="Number of components")
    p.add_argument("--method", choices=["projective", "mu"], default="projective",
                   help="projective: W W^T Y by Adam; mu: multiplicative-update W H (default: projective)")
    p.add_argument("--iters", type=int, default=200, help="Iterations for --method mu (default: 200)")
    p.add_argument("--out-w", required=True, help="Factor W output BMAT (n x r)")
    p.add_argument("--out-h", type=str, default=None, help="Coefficients H output BMAT (r x m)")
    _add_train_arguments(p)
    p.set_defaults(handler=cmd_nmf)

    p = sub.add_parser("cascade", help="Cascaded BEAR: RPCA then NMF on ReLU(S), trained jointly")
    p.add_argument("--input", required=True, help="Input video BMAT (pixels x frames)")
    p.add_argument("--rank1", type=int, default=None, help="Rank of the background network")
    p.add_argument("--rank2", type=int, default=None, help="Number of footprints")
    p.add_argument("--mu", type=float, default=settings.DEFAULT_CASCADE_MU,
                   help=f"Weight of the NMF loss (default: {settings.DEFAULT_CASCADE_MU})")
    p.add_argument("--sequential", action="store_true", help="Train the two networks one after the other")
    p.add_argument("--normalize", action="store_true",
                   help="Unit l2 spatial footprints, scale moved into the temporal traces")
    p.add_argument("--out-spatial", required=True, help="Spatial footprints BMAT (n x r2)")
    p.add_argument("--out-temporal", required=True, help="Temporal footprints BMAT (r2 x m)")
    p.add_argument("--out-traces", type=str, default=None,
                   help="Temporal traces CSV (default: <out-temporal>_traces.csv)")
    p.add_argument("--out-background", type=str, default=None, help="Background W1 W1^T Y output BMAT")
    p.add_argument("--out-w1", type=str, default=None, help="Save W1 as BMAT")
    p.add_argument("--truth-spatial", type=str, default=None, help="Ground-truth blob profiles BMAT for scoring")
    p.add_argument("--truth-temporal", type=str, default=None, help="Ground-truth activations BMAT for scoring")
    _add_train_arguments(p)
    p.set_defaults(handler=cmd_cascade)

    b = settings.DEFAULT_BENCH_CONFIG
    p = sub.add_parser("bench", help="Phase diagram of Greedy BEAR over (rank, sparsity)")
    p.add_argument("--n", type=int, default=None, help=f"Matrix size (default: {b['n']})")
    p.add_argument("--ranks", type=int, nargs="+", default=None, help=f"True ranks (default: {b['ranks']})")
    p.add_argument("--rhos", type=float, nargs="+", default=None, help=f"Sparsity levels (default: {b['rhos']})")
    p.add_argument("--trials", type=int, default=None, help=f"Trials per cell (default: {b['trials']})")
    p.add_argument("--lambda", dest="lam", type=float, default=None, help="Greedy lambda (default: 1/sqrt(n))")
    p.add_argument("--bench-seed", type=int, default=None, help=f"Master data seed (default: {b['seed']})")
    p.add_argument("--jobs", type=int, default=None, help=f"Cells run in parallel (default: {b['jobs']})")
    p.add_argument("--oracle", action="store_true", help="Add IALM oracle columns")
    p.add_argument("--config-file", type=str, default=None, help="JSON grid config; flags override it")
    p.add_argument("--out", required=True, help="Output CSV")
    _add_train_arguments(p)
    p.set_defaults(handler=cmd_bench)

    p = sub.add_parser("gen", help="Write a synthetic matrix as BMAT")
    p.add_argument("--kind", choices=["lowrank", "sparse", "composite", "video"], required=True)
    p.add_argument("--n", type=int, default=200, help="Matrix size for lowrank/sparse/composite (default: 200)")
    p.add_argument("--rank", type=int, default=5, help="Rank for lowrank/composite (default: 5)")
    p.add_argument("--rho", type=float, default=0.1, help="Sparsity for sparse/composite (default: 0.1)")
    p.add_argument("--pixels", type=int, default=4096, help="Video pixels, a perfect square (default: 4096)")
    p.add_argument("--frames", type=int, default=500, help="Video frames (default: 500)")
    p.add_argument("--blobs", type=int, default=8, help="Video blobs (default: 8)")
    p.add_argument("--no-background", action="store_true", help="Video without the rank-1 background")
    p.add_argument("--seed", type=int, default=0, help="Generator seed (default: 0)")
    p.add_argument("--out", required=True, help="Output BMAT")
    p.add_argument("--out-l", type=str, default=None, help="composite: ground-truth L")
    p.add_argument("--out-s", type=str, default=None, help="composite: ground-truth S")
    p.add_argument("--out-truth-spatial", type=str, default=None, help="video: blob profiles (n x k)")
    p.add_argument("--out-truth-temporal", type=str, default=None, help="video: activations (k x m)")
    p.add_argument("--out-background", type=str, default=None, help="video: background (n x m)")
    p.add_argument("--manifest", type=str, default=None, help="Manifest path (default: --out + .manifest)")
    p.set_defaults(handler=cmd_gen)

    p = sub.add_parser("info", help="Print header, byte accounting and streamed norms of a BMAT")
    p.add_argument("--input", required=True)
    p.set_defaults(handler=cmd_info)

    p = sub.add_parser("replay", help="Re-run a command from its manifest")
    p.add_argument("--manifest", required=True)
    p.set_defaults(handler=cmd_replay)

    return parser


def main(argv: Optional[List[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_arg_parser()
    args = parser.parse_args(argv)
    settings.configure_logging(args.log_file, args.log_level)

    try:
        with settings.thread_limit(args.threads):
            args.handler(args, argv)
    except BearError as e:
        logger.error(f"{type(e).__name__}: {e}")
        return e.exit_code
    except OSError as e:
        logger.error(f"I/O error: {e}")
        return 5
    return 0


if __name__ == "__main__":
    sys.exit(main())
