"""Command-line entry point: train / eval / invert / gradcheck / synth-data.

Exit codes: 0 success, 1 divergence or runtime failure, 2 configuration
error (the offending key is named on stderr), 3 checkpoint problems.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys

import numpy as np

from .config import load_run_config, network_fingerprint
from .data import Dataset, load_idx, save_idx, synthetic_digits
from .evaluation import (
    evaluate,
    gradcheck,
    invert_from_layer,
    make_gradcheck_case,
)
from .exceptions import CheckpointError, ConfigError, DivergenceError, SwwaeError
from .network import (
    build_network,
    init_from_checkpoint,
    restore_checkpoint,
    save_checkpoint,
)
from .training import PHASE_RUNNERS, MetricsLog

logger = logging.getLogger("swwae")

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIG = 2
EXIT_CHECKPOINT = 3


def _load_split(run, split: str, dtype) -> Dataset:
    keys = (f"{split}_images", f"{split}_labels")
    if not all(k in run.data_paths for k in keys):
        raise ConfigError(f"config [data] section is missing {keys[0]}/{keys[1]}")
    return load_idx(run.data_paths[keys[0]], run.data_paths[keys[1]], dtype=dtype)


def _phase_list(arg: str) -> list[int]:
    if arg == "all":
        return [2, 3, 4]
    return [int(arg)]


def cmd_train(args) -> int:
    run = load_run_config(args.config)
    fingerprint = run.fingerprint()
    if not run.out_dir:
        raise ConfigError("[run] out_dir is required for training")
    os.makedirs(run.out_dir, exist_ok=True)

    store = build_network(run.network, run.seed)
    global_iter, start_phase, start_phase_iter = 0, 0, 0
    resume_gammas = None
    if args.resume:
        meta = restore_checkpoint(store, args.resume, expected_hash=fingerprint)
        global_iter = int(meta.get("iteration", 0))
        start_phase = int(meta.get("phase", 0))
        start_phase_iter = int(meta.get("phase_iteration", 0))
        if "gammas" in meta:
            resume_gammas = tuple(float(v) for v in meta["gammas"].split(",") if v)
        logger.info("resumed %s at phase %d iteration %d", args.resume, start_phase, global_iter)
    elif args.init_from:
        loaded = init_from_checkpoint(store, args.init_from)
        logger.info("initialized %d tensors from %s", len(loaded), args.init_from)

    train_data = _load_split(run, "train", run.network.dtype)
    eval_data = None
    if "test_images" in run.data_paths and "test_labels" in run.data_paths:
        eval_data = _load_split(run, "test", run.network.dtype)

    phases = _phase_list(args.phase)
    for phase in phases:
        if phase < start_phase:
            continue
        phase_iter = start_phase_iter if phase == start_phase else 0
        sgd = getattr(run.plan, f"step{phase}")
        csv_path = os.path.join(run.out_dir, f"metrics_phase{phase}.csv")
        log = MetricsLog(csv_path, run.network.depth, append=phase == start_phase and phase_iter > 0)
        def on_checkpoint(git, pit, gammas, phase=phase):
            path = os.path.join(run.out_dir, f"ckpt_iter{git}")
            save_checkpoint(store, path, fingerprint, git, phase, pit)
            _append_gammas(path, gammas)

        runner = PHASE_RUNNERS[phase]
        kwargs = dict(
            global_iter=global_iter, phase_iter=phase_iter,
            augment_spec=run.augment, on_checkpoint=on_checkpoint,
            gammas_override=resume_gammas if phase == start_phase else None,
        )
        if phase == 4:
            kwargs["eval_data"] = eval_data
        result = runner(store, run.network, train_data, run.plan, log, **kwargs)
        global_iter = result.global_iter
        log.close()
        ckpt = os.path.join(run.out_dir, f"ckpt_phase{phase}")
        save_checkpoint(store, ckpt, fingerprint, global_iter, phase, max(sgd.iterations, phase_iter))
        _append_gammas(ckpt, result.gammas)
        logger.info("phase %d complete at iteration %d; checkpoint %s", phase, global_iter, ckpt)
    return EXIT_OK


def _append_gammas(ckpt_path: str, gammas) -> None:
    if not gammas:
        return
    with open(os.path.join(ckpt_path, "manifest.txt"), "a") as fh:
        fh.write("gammas = " + ",".join(repr(float(g)) for g in gammas) + "\n")


def cmd_eval(args) -> int:
    run = load_run_config(args.config)
    store = build_network(run.network, run.seed)
    restore_checkpoint(store, args.checkpoint, expected_hash=run.fingerprint())
    dataset = _load_split(run, args.split, run.network.dtype)
    report = evaluate(store, run.network, dataset)
    sys.stdout.write(report.to_text())
    if run.out_dir:
        os.makedirs(run.out_dir, exist_ok=True)
        report.save(os.path.join(run.out_dir, f"eval_{args.split}.txt"))
    return EXIT_OK


def cmd_invert(args) -> int:
    run = load_run_config(args.config)
    if run.network.variant == "baseline":
        raise ConfigError("invert needs an autoencoder variant with a trained decoder")
    store = build_network(run.network, run.seed)
    restore_checkpoint(store, args.checkpoint, expected_hash=run.fingerprint())
    dataset = _load_split(run, args.split, run.network.dtype)
    report, dumped = invert_from_layer(
        store, run.network, args.layer, dataset, args.switches, out_dir=args.out,
    )
    sys.stdout.write(f"layer = {args.layer}\nswitches = {args.switches}\n")
    sys.stdout.write(f"mean_recon_l2 = {report.mean_recon_l2!r}\n")
    if args.out:
        report.save(os.path.join(args.out, f"invert_layer{args.layer}_{args.switches}.txt"))
        for path in dumped:
            logger.info("wrote %s", path)
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    run = load_run_config(args.config) if args.config else None
    seed = run.seed if run else 0
    failures = 0
    for variant in ("sae-first", "sae-all", "sae-layerwise"):
        for mode in ("fixed", "known"):
            store, config, x, labels = make_gradcheck_case(variant, mode, seed=seed)
            report = gradcheck(store, config, x, labels, tolerance=args.tolerance)
            status = "PASS" if report.passed else "FAIL"
            print(f"[{variant}/{mode}] {status}")
            for line in report.worst_lines():
                print(f"  {line}")
            failures += 0 if report.passed else 1
    return EXIT_OK if failures == 0 else EXIT_FAILURE


def cmd_synth_data(args) -> int:
    os.makedirs(args.out, exist_ok=True)
    for split, n, seed in (("train", args.train, args.seed), ("t10k", args.test, args.seed + 1)):
        ds = synthetic_digits(n, seed)
        images = os.path.join(args.out, f"{split}-images-idx3-ubyte")
        labels = os.path.join(args.out, f"{split}-labels-idx1-ubyte")
        save_idx(ds, images, labels)
        logger.info("wrote %s (%d samples)", images, n)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="swwae",
        description="Train and probe classification networks augmented with "
                    "mirrored reconstructive decoding pathways.",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="log at INFO level")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="run training phases 2/3/4")
    p.add_argument("config")
    p.add_argument("--phase", choices=["2", "3", "4", "all"], default="all")
    p.add_argument("--resume", help="checkpoint directory to continue from (config must match)")
    p.add_argument("--init-from", dest="init_from",
                   help="seed matching tensors from a foreign checkpoint (e.g. a pretrained classifier)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset split")
    p.add_argument("config")
    p.add_argument("checkpoint")
    p.add_argument("--split", choices=["train", "test"], default="test")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("invert", help="reconstruct images from an intermediate layer")
    p.add_argument("config")
    p.add_argument("checkpoint")
    p.add_argument("--layer", type=int, required=True)
    p.add_argument("--switches", choices=["known", "fixed"], default="known")
    p.add_argument("--out", help="directory for PNG grids and the L2 summary")
    p.add_argument("--split", choices=["train", "test"], default="test")
    p.set_defaults(func=cmd_invert)

    p = sub.add_parser("gradcheck", help="finite-difference checks on the built-in tiny network")
    p.add_argument("config", nargs="?")
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("synth-data", help="generate an IDX-format digit dataset")
    p.add_argument("out")
    p.add_argument("--train", type=int, default=8000)
    p.add_argument("--test", type=int, default=2000)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth_data)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CheckpointError as exc:
        print(f"checkpoint error: {exc}", file=sys.stderr)
        return EXIT_CHECKPOINT
    except DivergenceError as exc:
        print(f"training aborted: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    except SwwaeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
