"""laneattn.cli

Command line: gen, train, eval, predict, attn, version.
"""
import argparse
import json
import logging
import os
import sys
from typing import List, Optional

from laneattn import __version__
from laneattn.config import DEFAULT_CONFIG_FILE, load_config
from laneattn.errors import LaneAttnError
from laneattn.graph import DT
from laneattn.harness import compare, export_attention, predict_record
from laneattn.log import configure_logging, verbose_log_path
from laneattn.model import Checkpoint
from laneattn.scenarios import generate_dataset, load_split, parse_mix, split_counts, write_splits
from laneattn.training import fit

logger = logging.getLogger(__name__)

AGGREGATOR_CHOICES = {"attention": "attention", "pooling": "pooling", "single-lane": "single_lane", "none": "none"}
BUILD_INFO_FILE = os.path.join(os.path.dirname(os.path.abspath(__file__)), "build_info.json")


def _counts(text: str):
    parts = [p.strip() for p in text.split(",")]
    try:
        counts = tuple(int(p) for p in parts)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected train,val,test integers, got '{text}'") from None
    if len(counts) != 3 or min(counts) < 0:
        raise argparse.ArgumentTypeError(f"expected three non-negative integers, got '{text}'")
    return counts


def _horizon_steps(seconds: Optional[float]) -> Optional[int]:
    return None if seconds is None else int(round(seconds / DT))


def cmd_gen(args) -> int:
    model_cfg, _, scen = load_config(args.config)
    counts = args.counts or (split_counts(args.total) if args.total is not None else scen.counts)
    mix = parse_mix(args.mix) if args.mix else scen.mix
    seed = scen.seed if args.seed is None else args.seed
    noise = scen.noise_std if args.noise_std is None else args.noise_std
    steps = _horizon_steps(args.horizon) or model_cfg.T_pred_steps
    datasets = generate_dataset(counts, mix, seed=seed, noise_std=noise, T_pred_steps=steps,
                                lane_width=scen.lane_width)
    paths = write_splits(datasets, args.out)
    for split, path in paths.items():
        print(f"{split}: {len(datasets[split])} samples -> {path}")
    return 0


def cmd_train(args) -> int:
    model_cfg, train_cfg, _ = load_config(args.config)
    changes = {}
    if args.aggregator:
        changes["aggregator"] = AGGREGATOR_CHOICES[args.aggregator]
    if args.horizon is not None:
        changes["T_pred_steps"] = _horizon_steps(args.horizon)
    model_cfg = model_cfg.replace(**changes)
    tchanges = {k: v for k, v in (("seed", args.seed), ("max_epochs", args.epochs), ("workers", args.workers))
                if v is not None}
    if args.teacher_forcing:
        tchanges["teacher_forcing"] = True
    train_cfg = train_cfg.replace(**tchanges)
    train = load_split(args.data, "train")
    val = load_split(args.data, "val")
    result = fit(train.samples, val.samples, model_cfg, train_cfg, out_dir=args.out)
    meta = result.checkpoint.meta
    print(f"best epoch {meta['epoch']} val_nll {meta['val_nll']:.4f} -> {os.path.join(args.out, 'checkpoint.json.gz')}")
    return 0


def cmd_eval(args) -> int:
    test = load_split(args.data, args.split)
    models = [Checkpoint.load(path) for path in args.checkpoints]
    report = compare(models, test.samples, horizons=args.horizons, include_cv=not args.no_cv, workers=args.workers)
    if args.report:
        report.write(args.report)
    sys.stdout.write(report.table())
    return 0


def cmd_predict(args) -> int:
    ckpt = Checkpoint.load(args.checkpoint)
    try:
        sample = load_split(args.data, args.split).by_id(args.sample_id)
    except KeyError:
        raise LaneAttnError(f"no sample '{args.sample_id}' in {args.data}") from None
    record = predict_record(ckpt, sample)
    if args.json:
        print(json.dumps(record))
        return 0
    print(f"{record['id']} ({record['kind']}, {record['aggregator']})")
    for k, ((x, y), (sx, sy), rho) in enumerate(zip(record["positions"], record["sigma"], record["rho"]), start=1):
        print(f"  t+{k * sample.dt:4.1f}s  x {x:10.3f}  y {y:10.3f}  sigma ({sx:.3f}, {sy:.3f})  rho {rho:+.3f}")
    if record["final_attention"] is not None:
        weights = ", ".join(f"lane {i}: {w:.3f}" for i, w in record["final_attention"].items())
        print(f"  final weights: {weights}")
    if "ade" in record:
        print(f"  ADE {record['ade']:.4f} m  FDE {record['fde']:.4f} m")
    return 0


def cmd_attn(args) -> int:
    ckpt = Checkpoint.load(args.checkpoint)
    samples = load_split(args.data, args.split).samples
    if args.kinds:
        kinds = set(args.kinds.split(","))
        samples = [s for s in samples if s.kind in kinds]
    if args.limit is not None:
        samples = samples[:args.limit]
    traces = export_attention(ckpt, samples, args.out_dir, sheet=not args.no_sheet)
    print(f"exported {len(traces)} traces to {args.out_dir}")
    return 0


def build_info(path: Optional[str] = None) -> dict:
    path = path or BUILD_INFO_FILE
    if os.path.exists(path):
        try:
            with open(path, "r", encoding="utf-8") as f:
                return json.load(f)
        except (OSError, ValueError):
            logger.debug("unreadable build info at %s", path)
    return {}


def cmd_version(args) -> int:
    info = build_info()
    stamped = info.get("version")
    if stamped and stamped != __version__:
        logger.warning("build stamp was written for laneattn %s; rerun tools/write_build_info.py", stamped)
    print(f"laneattn {__version__} (built {info.get('build_time', 'unknown')})")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="laneattn", description="Lane-attention trajectory prediction")
    parser.add_argument("--config", default=DEFAULT_CONFIG_FILE, help="JSON config file")
    parser.add_argument("-v", "--verbose", action="store_true", help="also write a rolling debug log file")
    # accepted after the subcommand too; SUPPRESS keeps a top-level value when the flag is absent there
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=argparse.SUPPRESS, help="JSON config file")
    common.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS,
                        help="also write a rolling debug log file")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", parents=[common], help="generate synthetic train/val/test datasets")
    p.add_argument("--out", required=True, help="output directory")
    group = p.add_mutually_exclusive_group()
    group.add_argument("--counts", type=_counts, help="train,val,test sample counts")
    group.add_argument("--total", type=int, help="total samples split 6:2:2.5")
    p.add_argument("--mix", help="kind=weight,... scenario proportions")
    p.add_argument("--noise-std", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--horizon", type=float, choices=(1.0, 3.0), help="prediction horizon in seconds")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("train", parents=[common], help="train one model")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--out", required=True, help="output directory for the checkpoint and training log")
    p.add_argument("--aggregator", choices=sorted(AGGREGATOR_CHOICES))
    p.add_argument("--horizon", type=float, choices=(1.0, 3.0))
    p.add_argument("--seed", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--teacher-forcing", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", parents=[common], help="compare checkpoints against the constant-velocity baseline")
    p.add_argument("--checkpoints", nargs="+", default=[], help="checkpoint files")
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--report", help="line-delimited JSON report path")
    p.add_argument("--horizons", type=float, nargs="+", default=[1.0, 3.0])
    p.add_argument("--no-cv", action="store_true", help="leave out the constant-velocity baseline")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", parents=[common], help="print one sample's prediction")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--sample-id", required=True)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("attn", parents=[common], help="export attention traces and plots")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--kinds", help="comma-separated scenario kinds to keep")
    p.add_argument("--limit", type=int)
    p.add_argument("--no-sheet", action="store_true", help="skip the contact sheet")
    p.set_defaults(func=cmd_attn)

    p = sub.add_parser("version", parents=[common], help="print version and build stamp")
    p.set_defaults(func=cmd_version)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    configure_logging(verbose=args.verbose)
    if args.verbose:
        logger.info("debug log: %s", verbose_log_path())
    try:
        return args.func(args)
    except (LaneAttnError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
