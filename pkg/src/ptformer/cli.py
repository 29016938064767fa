"""Command-line entry point.

Commands: generate, train, ablate, depth, baseline-gt. Exit codes:
0 success, 1 runtime/divergence, 2 config/parse. The PTFORMER_LOG env var
(quiet/info/debug) controls verbosity.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .bundle import GraphBundle, edge_homophily, make_splits, save_bundle, sbm_generate
from .config import ExperimentConfig, load_experiment_config
from .errors import ConfigError, PtformerError, ValidationError
from .model import save_checkpoint
from .reporting import write_curves_csv, write_results_csv, write_summary_md
from .training import ablation_suite, baseline_comparison, depth_sweep, run_multi_seed

log = logging.getLogger("ptformer")


def _setup_logging() -> None:
    level = {"quiet": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}.get(
        os.environ.get("PTFORMER_LOG", "info"), logging.INFO
    )
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


def _csv_ints(text: str) -> tuple[int, ...]:
    try:
        values = tuple(int(s) for s in text.split(",") if s.strip() != "")
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")
    if not values:
        raise argparse.ArgumentTypeError("empty integer list")
    return values


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ptformer", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("generate", help="generate a synthetic SBM bundle on disk")
    gen.add_argument("--out", required=True, help="bundle directory to write")
    gen.add_argument("--n", type=int, required=True)
    gen.add_argument("--classes", type=int, required=True)
    gen.add_argument("--p-in", type=float, required=True)
    gen.add_argument("--p-out", type=float, required=True)
    gen.add_argument("--feat-dim", type=int, required=True)
    gen.add_argument("--feat-noise", type=float, default=0.0)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--split-seeds", type=_csv_ints, default=tuple(range(10)))

    for name, helptext in (
        ("train", "train the configured model over all seeds"),
        ("ablate", "run the six-variant ablation table"),
        ("depth", "depth sweep with an over-smoothing control stack"),
        ("baseline-gt", "three-way vanilla GT / variant GT / GNNFormer comparison"),
    ):
        cmd = sub.add_parser(name, help=helptext)
        cmd.add_argument("--config", required=True, help="experiment config file")
        cmd.add_argument("--out", default="ptformer_out", help="output directory")
        cmd.add_argument("--jobs", type=int, default=1, help="concurrent seeds")
        cmd.add_argument("--seeds", type=_csv_ints, default=None, help="override train.seeds")
        if name == "depth":
            cmd.add_argument("--depths", type=_csv_ints, default=(2, 4, 8))
    return parser


def _load(args) -> tuple[ExperimentConfig, GraphBundle]:
    config = load_experiment_config(args.config)
    if args.seeds is not None:
        config = replace(config, train=replace(config.train, seeds=args.seeds))
    if args.jobs < 1:
        raise ConfigError(f"--jobs must be positive, got {args.jobs}")
    bundle = config.load_data()
    return config, bundle


def _emit(out_dir: str, title: str, rows) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_results_csv(out / "results.csv", rows)
    write_curves_csv(out / "curves.csv", rows)
    write_summary_md(out / "summary.md", title, rows)
    log.info("wrote %s", out / "results.csv")


def cmd_generate(args) -> int:
    bundle = sbm_generate(
        args.n, args.classes, args.p_in, args.p_out, args.feat_dim, args.feat_noise,
        np.random.default_rng(args.seed),
    )
    make_splits(bundle, list(args.split_seeds))
    save_bundle(bundle, args.out)
    edges = bundle.graph.nnz // 2
    homophily = edge_homophily(bundle) if edges else float("nan")
    print(f"n={bundle.n} edges={edges} homophily={homophily:.2f}")
    return 0


def cmd_train(args) -> int:
    config, bundle = _load(args)
    result = run_multi_seed(bundle, config.model, config.train, jobs=args.jobs)
    rows = [("gnnformer", result)]
    _emit(args.out, "training run", rows)
    ckpt_root = Path(args.out) / "checkpoints"
    for r in result.per_seed:
        seed_dir = ckpt_root / f"seed_{r.seed}"
        save_checkpoint(seed_dir, config.model, r.best_params)
    print(f"gnnformer: mean={result.mean:.4f} std={result.std:.4f} over {len(result.per_seed)} seeds")
    return 0


def cmd_ablate(args) -> int:
    config, bundle = _load(args)
    rows = ablation_suite(bundle, config.model, config.train, jobs=args.jobs)
    _emit(args.out, "ablation analysis", rows)
    for name, result in rows:
        print(f"{name}: mean={result.mean:.4f} std={result.std:.4f}")
    return 0


def cmd_depth(args) -> int:
    config, bundle = _load(args)
    rows3 = depth_sweep(bundle, config.model, list(args.depths), config.train, jobs=args.jobs)
    rows = [(f"{series}_d{depth}", result) for series, depth, result in rows3]
    _emit(args.out, "depth sweep", rows)
    for name, result in rows:
        print(f"{name}: mean={result.mean:.4f} std={result.std:.4f}")
    return 0


def cmd_baseline_gt(args) -> int:
    config, bundle = _load(args)
    rows = baseline_comparison(bundle, config.model, config.train, config.gt_layers, jobs=args.jobs)
    _emit(args.out, "baseline comparison", rows)
    for name, result in rows:
        if isinstance(result, Exception):
            print(f"{name}: capacity error ({result})")
        else:
            print(f"{name}: mean={result.mean:.4f} std={result.std:.4f}")
    return 0


_COMMANDS = {
    "generate": cmd_generate,
    "train": cmd_train,
    "ablate": cmd_ablate,
    "depth": cmd_depth,
    "baseline-gt": cmd_baseline_gt,
}


def main(argv=None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (ConfigError, ValidationError) as e:
        log.error("%s", e)
        print(f"error: {e}", file=sys.stderr)
        return 2
    except PtformerError as e:
        log.error("%s", e)
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
