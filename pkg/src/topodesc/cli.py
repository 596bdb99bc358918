"""Command-line interface: generate, train, eval, inspect, gradcheck.

Exit codes: 0 success, 1 check failure, 2 usage or invalid argument,
3 I/O or file-format error, 4 numerical divergence during training.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys

import numpy as np

from . import data as datamod
from . import knn, metrics
from . import loss as lossmod
from . import net as netmod
from . import topology
from .config import (
    SEED_ENV_VAR,
    PRESETS,
    format_config,
    parse_config_file,
    resolve_config,
)
from .errors import (
    DatasetFormatError,
    DegenerateDescriptorError,
    DegenerateFitError,
    InvalidArgumentError,
    InvalidBatchError,
    InvalidInputError,
    SingularSystemError,
)
from .gradcheck import grad_check
from .train import TrainingDivergenceError, run_training, write_log

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_USAGE = 2
EXIT_IO = 3
EXIT_DIVERGED = 4


def _env_seed(value: int | None, fallback: int = 0) -> int:
    """Flag seed if given, else TCDESC_SEED, else the fallback."""
    if value is not None:
        return value
    raw = os.environ.get(SEED_ENV_VAR)
    if raw is None:
        return fallback
    try:
        return int(raw)
    except ValueError:
        raise InvalidArgumentError(f"{SEED_ENV_VAR}={raw!r} is not an integer") from None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="topodesc",
        description="Topology-consistent descriptor training toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("generate", help="write a synthetic matched-pair dataset")
    gen.add_argument("--seed", type=int, default=None)
    gen.add_argument("--scenes", type=int, default=512)
    gen.add_argument("--dim", type=int, default=16)
    gen.add_argument("--noise", type=float, default=0.05)
    gen.add_argument("--distortion", type=float, default=0.3)
    gen.add_argument("--out", required=True)
    gen.set_defaults(func=cmd_generate)

    tr = sub.add_parser("train", help="train a descriptor net on a dataset")
    tr.add_argument("--preset", choices=sorted(PRESETS), default="desk")
    tr.add_argument("--config", default=None, help="flat key = value config file")
    tr.add_argument("--dataset", default=None)
    tr.add_argument("--out-dir", default=None)
    tr.add_argument("--seed", type=int, default=None)
    tr.add_argument("--batch-size", type=int, default=None)
    tr.add_argument("--iterations", type=int, default=None)
    tr.add_argument("--k", type=int, default=None)
    tr.add_argument("--margin", type=float, default=None)
    tr.add_argument("--lr-start", type=float, default=None)
    tr.add_argument("--lr-end", type=float, default=None)
    tr.add_argument("--net-widths", default=None, help="comma-separated layer widths")
    tr.add_argument("--lambda-n0", type=int, default=None)
    tr.add_argument("--lambda-N", type=int, default=None)
    tr.add_argument("--lambda-r", type=float, default=None)
    tr.add_argument("--lambda-floor", type=float, default=None)
    tr.add_argument("--precision", choices=("double", "single"), default=None)
    tr.add_argument(
        "--topology", choices=lossmod.GRADIENT_MODES, default=None, dest="topology_mode"
    )
    tr.add_argument(
        "--lambda-mode", default="dynamic", help="dynamic or fixed:<value in [0,1]>"
    )
    tr.add_argument("--workers", type=int, default=1)
    tr.set_defaults(func=cmd_train)

    ev = sub.add_parser("eval", help="evaluate a checkpoint on a dataset split")
    ev.add_argument("--checkpoint", required=True)
    ev.add_argument("--dataset", required=True)
    ev.add_argument("--split", choices=("heldout", "train", "all"), default="heldout")
    ev.add_argument("--seed", type=int, default=None)
    ev.add_argument("--negatives-per-positive", type=int, default=10)
    ev.add_argument("--out", default=None, help="optional CSV to write the report to")
    ev.set_defaults(func=cmd_eval)

    ins = sub.add_parser("inspect", help="dump topology vectors for one batch")
    ins.add_argument("--checkpoint", required=True)
    ins.add_argument("--dataset", required=True)
    ins.add_argument("--seed", type=int, default=None)
    ins.add_argument("--batch-size", type=int, default=64)
    ins.add_argument("--k", type=int, default=8)
    ins.add_argument("--out", default=None, help="optional CSV of per-pair distances")
    ins.set_defaults(func=cmd_inspect)

    gc = sub.add_parser("gradcheck", help="finite-difference check of the loss gradient")
    gc.add_argument("--seed", type=int, default=None)
    gc.add_argument("--tol", type=float, default=1e-4)
    gc.add_argument("--mode", choices=lossmod.GRADIENT_MODES[:2], default="through-weights")
    gc.add_argument("--lam", type=float, default=0.5)
    gc.add_argument("--step", type=float, default=1e-5)
    gc.set_defaults(func=cmd_gradcheck)

    return parser


def cmd_generate(args) -> int:
    seed = _env_seed(args.seed)
    ds = datamod.generate(seed, args.scenes, args.dim, args.noise, args.distortion)
    try:
        datamod.write_dataset(ds, args.out)
    except OSError as exc:
        print(f"error: cannot write {args.out}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    print(
        f"wrote {args.out}: scenes={ds.scene_count} dim={ds.dim} seed={ds.seed} "
        f"noise_sigma={ds.noise_sigma} distortion={ds.distortion}"
    )
    return EXIT_OK


def cmd_train(args) -> int:
    file_values = parse_config_file(args.config) if args.config else {}
    flag_values = {
        "dataset": args.dataset,
        "out_dir": args.out_dir,
        "seed": args.seed,
        "batch_size": args.batch_size,
        "iterations": args.iterations,
        "k": args.k,
        "margin": args.margin,
        "lr_start": args.lr_start,
        "lr_end": args.lr_end,
        "lambda_n0": args.lambda_n0,
        "lambda_N": args.lambda_N,
        "lambda_r": args.lambda_r,
        "lambda_floor": args.lambda_floor,
        "precision": args.precision,
        "topology_gradient_mode": args.topology_mode,
    }
    if args.net_widths is not None:
        flag_values["net_widths"] = tuple(int(w) for w in args.net_widths.split(","))
    cfg = resolve_config(args.preset, file_values, flag_values)
    if not cfg.dataset:
        print("error: a dataset path is required (--dataset or config file)", file=sys.stderr)
        return EXIT_USAGE
    if not cfg.out_dir:
        print("error: an output directory is required (--out-dir or config file)", file=sys.stderr)
        return EXIT_USAGE
    try:
        dataset = datamod.read_dataset(cfg.dataset)
    except (OSError, DatasetFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    os.makedirs(cfg.out_dir, exist_ok=True)
    with open(os.path.join(cfg.out_dir, "config.txt"), "w") as fh:
        fh.write(format_config(cfg))
    try:
        result = run_training(cfg, dataset, lambda_mode=args.lambda_mode, workers=args.workers)
    except TrainingDivergenceError as exc:
        print(
            f"error: training diverged: {exc}; last good iteration "
            f"{exc.last_good_iteration}",
            file=sys.stderr,
        )
        return EXIT_DIVERGED
    checkpoint_path = os.path.join(cfg.out_dir, "model.tcd1")
    log_path = os.path.join(cfg.out_dir, "train_log.csv")
    netmod.save_checkpoint(result.net, checkpoint_path)
    write_log(result.rows, log_path)
    print(
        f"trained {cfg.iterations} iterations: loss {result.rows[0].loss:.6f} -> "
        f"{result.rows[-1].loss:.6f}; checkpoint {checkpoint_path}; log {log_path}"
    )
    return EXIT_OK


def _load_net_and_data(checkpoint: str, dataset: str):
    net = netmod.load_checkpoint(checkpoint)
    ds = datamod.read_dataset(dataset)
    if net.input_dim != ds.dim:
        raise DatasetFormatError(
            f"checkpoint input width {net.input_dim} does not match dataset dim {ds.dim}"
        )
    return net, ds


def cmd_eval(args) -> int:
    try:
        net, ds = _load_net_and_data(args.checkpoint, args.dataset)
    except (OSError, DatasetFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    if args.split != "all":
        train_ds, heldout_ds = datamod.split_train_heldout(ds)
        ds = heldout_ds if args.split == "heldout" else train_ds
    desc_a = netmod.embed(net, ds.views_a)
    desc_p = netmod.embed(net, ds.views_p)
    rng = np.random.default_rng(_env_seed(args.seed))
    report = metrics.evaluate_descriptors(
        desc_a, desc_p, args.negatives_per_positive, rng
    )
    print(f"split = {args.split} ({ds.scene_count} scenes)")
    print(f"fpr95 = {report.fpr95!r}")
    print(f"mAP = {report.mAP!r}")
    print(f"n_pos = {report.n_pos}")
    print(f"n_neg = {report.n_neg}")
    if args.out:
        with open(args.out, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["fpr95", "mAP", "n_pos", "n_neg"])
            writer.writerow([repr(report.fpr95), repr(report.mAP), report.n_pos, report.n_neg])
    return EXIT_OK


def cmd_inspect(args) -> int:
    try:
        net, ds = _load_net_and_data(args.checkpoint, args.dataset)
    except (OSError, DatasetFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    batch_size = min(args.batch_size, ds.scene_count)
    rng = np.random.default_rng(_env_seed(args.seed))
    _, batch_a, batch_p = datamod.sample_batch(ds, batch_size, rng)
    desc_a = netmod.embed(net, batch_a)
    desc_p = netmod.embed(net, batch_p)
    n = batch_size
    vectors_a = topology.batch_topology_vectors(desc_a, args.k)
    vectors_p = topology.batch_topology_vectors(desc_p, args.k)
    d_pos = np.array([knn.pairwise_distances(desc_a[i : i + 1], desc_p[i : i + 1])[0, 0] for i in range(n)])
    rows = []
    for i in range(n):
        ta, tp = vectors_a[i], vectors_p[i]
        d_t = topology.topology_distance(ta, tp)
        print(f"A {i}: " + " ".join(f"({j}:{float(w)!r})" for j, w in zip(ta.support, ta.values)))
        print(f"P {i}: " + " ".join(f"({j}:{float(w)!r})" for j, w in zip(tp.support, tp.values)))
        flag = "  [d_T > 1]" if d_t > 1.0 else ""
        print(f"pair {i}: d_E={float(d_pos[i])!r} d_T={d_t!r}{flag}")
        rows.append((i, d_pos[i], d_t, int(d_t > 1.0)))
    if args.out:
        with open(args.out, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["index", "d_pos_euclid", "d_pos_topo", "d_topo_above_1"])
            for i, de, dt, flag in rows:
                writer.writerow([i, repr(float(de)), repr(float(dt)), flag])
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    seed = _env_seed(args.seed)
    if not 0.0 <= args.lam <= 1.0:
        raise InvalidArgumentError(f"--lam must be in [0, 1], got {args.lam}")
    rng = np.random.default_rng(seed)
    net = netmod.init_net((8, 8, 4), rng, dtype=np.float64)
    patches_a = rng.standard_normal((6, 8))
    patches_p = rng.standard_normal((6, 8))
    cfg = lossmod.LossConfig(k=2, topology_gradient_mode=args.mode)
    report = grad_check(net, patches_a, patches_p, cfg, args.lam, step=args.step)
    print(f"max_relative_error = {report.max_relative_error!r}")
    print(f"worst_parameter = {report.worst_parameter}")
    print(f"step_size = {report.step_size!r}")
    if report.max_relative_error < args.tol:
        print(f"gradcheck passed (tol {args.tol!r})")
        return EXIT_OK
    print(
        f"error: gradcheck failed: {report.worst_parameter} off by "
        f"{report.max_relative_error!r} (tol {args.tol!r})",
        file=sys.stderr,
    )
    return EXIT_CHECK_FAILED


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    try:
        return args.func(args)
    except (InvalidArgumentError, InvalidBatchError, InvalidInputError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DegenerateDescriptorError, DegenerateFitError, SingularSystemError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CHECK_FAILED


if __name__ == "__main__":
    sys.exit(main())
