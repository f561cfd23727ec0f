"""Command-line entry point.

Subcommands: synth-data, train, eval, relight, bench.  Every run writes
a reproducibility header (tool version, seed, config hash, argv,
timestamp) into its output directory; given identical flags and seeds
all other outputs are byte-identical across runs.

Exit codes: 0 success, 1 usage error, 2 data/file error, 3
runtime/numeric error.  RELIGHT_KERNELS selects the compute backend
(see relightkit.backend).
"""

import argparse
import hashlib
import json
import sys
import time
from pathlib import Path

from . import __version__, bench, data, imaging, losses, metrics, network, synth, training
from .errors import (
    CheckpointError,
    ConfigError,
    DataError,
    DimensionError,
    FormatError,
    RelightError,
    UsageError,
)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _config_hash(*objs):
    blob = json.dumps(objs, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def _write_header(out_dir, command, seed, config_obj, argv):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    header = {
        "tool": "relightkit",
        "version": __version__,
        "command": command,
        "argv": list(argv),
        "seed": seed,
        "config_hash": _config_hash(config_obj),
        "timestamp_utc": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
    }
    (out_dir / "run_header.json").write_text(json.dumps(header, indent=2) + "\n")


def _csv_list(text):
    return tuple(tok.strip() for tok in text.split(",") if tok.strip())


def _load_index(args):
    manifest = getattr(args, "manifest", None)
    pattern = getattr(args, "pattern", None) or data.DEFAULT_PATTERN
    return data.index_dataset(args.data, pattern=pattern, manifest=manifest)


def _task_from_flags(task, source_dir, source_temp):
    if task == "single":
        return data.SingleTask(source_dir, source_temp)
    return data.MultiTask(source_dir, data.opposite(source_dir), source_temp)


def _task_meta(task, target):
    meta = {
        "task": "multi" if isinstance(task, data.MultiTask) else "single",
        "source_direction": task.direction,
        "source_temp": task.temperature_k,
        "target_direction": target.direction,
        "target_temp": target.temperature_k,
    }
    if isinstance(task, data.MultiTask):
        meta["source_direction2"] = task.direction2
    return meta


def _cmd_synth_data(args, argv):
    directions = _csv_list(args.directions) if args.directions else data.DIRECTIONS
    temps = tuple(int(t) for t in _csv_list(args.temps)) if args.temps else data.TEMPERATURES_K
    index = synth.generate_corpus(
        args.scenes, directions=directions, temperatures=temps, size=args.size, seed=args.seed,
        out_dir=args.out,
    )
    _write_header(args.out, "synth-data", args.seed,
                  {"scenes": args.scenes, "size": args.size, "directions": directions, "temps": temps},
                  argv)
    print(f"wrote {index.total_images} images for {index.n_scenes} scenes to {args.out}")
    return 0


def _train_config(args):
    if args.config:
        try:
            doc = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise DataError(f"cannot read config {args.config}: {exc}") from exc
    else:
        doc = {}
    for field, value in (
        ("steps_stage1", args.steps_stage1),
        ("steps_stage2", args.steps_stage2),
        ("batch_size", args.batch_size),
        ("seed", args.seed),
    ):
        if value is not None:
            doc[field] = value
    return training.TrainConfig.from_dict(doc)


def _cmd_train(args, argv):
    cfg = _train_config(args)
    arch = network.ArchConfig(base_channels=args.base_channels, stacks=args.stacks)
    index = _load_index(args)
    task = _task_from_flags(args.task, args.source_dir, args.source_temp)
    target = data.IlluminationSetting(args.target_dir, args.target_temp)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    val_pairs = None
    if args.val_scenes:
        train_index, val_index = data.split_custom(index, n_test=args.val_scenes, seed=cfg.seed)
        data.save_split(out_dir / "split.json", train_index, val_index)
        val_pairs = data.make_pairs(val_index, task, target)
    else:
        train_index = index
    pairs = data.make_pairs(train_index, task, target)

    ckpt = training.train_two_stage(pairs, cfg, arch=arch, val_pairs=val_pairs,
                                    log_path=out_dir / "train_log.jsonl")
    ckpt.meta.update(_task_meta(task, target))
    training.save_checkpoint(ckpt, out_dir / "checkpoint.ckpt")
    _write_header(out_dir, "train", cfg.seed, {"cfg": cfg.to_dict(), "arch": arch.to_dict()}, argv)
    psnr = "n/a" if ckpt.best_val_psnr is None else f"{ckpt.best_val_psnr:.2f} dB"
    print(f"checkpoint saved to {out_dir / 'checkpoint.ckpt'} (best val PSNR {psnr})")
    return 0


def _pairs_from_checkpoint(ckpt, index):
    meta = ckpt.meta
    try:
        if meta["task"] == "multi":
            task = data.MultiTask(meta["source_direction"], meta["source_direction2"], meta["source_temp"])
        else:
            task = data.SingleTask(meta["source_direction"], meta["source_temp"])
        target = data.IlluminationSetting(meta["target_direction"], meta["target_temp"])
    except KeyError as exc:
        raise DataError(f"checkpoint carries no task metadata ({exc}); cannot build pairs") from exc
    return data.make_pairs(index, task, target), task, target


def _cmd_eval(args, argv):
    ckpt = training.load_checkpoint(args.checkpoint)
    index = _load_index(args)
    if args.split:
        _, index = data.load_split(args.split, index)
    pairs, task, target = _pairs_from_checkpoint(ckpt, index)
    model = training.checkpoint_model(ckpt)
    report = metrics.evaluate_dataset(model, pairs, extractor=losses.default_extractor())
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "metrics.json").write_text(
        metrics.report_to_json(report, task=_task_meta(task, target)) + "\n"
    )
    (out_dir / "metrics.csv").write_text(metrics.report_csv(args.method, report))
    _write_header(out_dir, "eval", ckpt.config.seed if ckpt.config else None,
                  {"checkpoint": str(args.checkpoint), "split": str(args.split)}, argv)
    print(f"{args.method}: psnr={report.psnr_db:.2f} dB ssim={report.ssim:.4f} n={report.n_images}")
    return 0


def _cmd_relight(args, argv):
    ckpt = training.load_checkpoint(args.checkpoint)
    task = ckpt.meta.get("task", "single")
    if task == "multi" and not args.input2:
        raise UsageError("checkpoint was trained on fused opposite-direction inputs; pass --input2")
    if task == "single" and args.input2:
        raise UsageError("checkpoint was trained on single inputs; --input2 is not applicable")
    img = imaging.load_image(args.input)
    if args.input2:
        img = data.fuse_opposite(img, imaging.load_image(args.input2))
    out = network.dsrn_forward(img, ckpt.params, clamp=True)
    out_path = Path(args.out)
    imaging.save_image(out, out_path)
    _write_header(out_path.parent, "relight", None, {"checkpoint": str(args.checkpoint)}, argv)
    print(f"wrote {out_path}")
    return 0


def _cmd_bench(args, argv):
    if args.checkpoint:
        params = training.load_checkpoint(args.checkpoint).params
    else:
        params = network.init_params(
            network.ArchConfig(base_channels=args.base_channels, stacks=args.stacks), seed=0
        )
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    if args.compare_backends:
        reports = bench.compare_backends(params, args.resolution, args.warmup, args.iters)
        doc = {name: rep.to_dict() for name, rep in reports.items()}
        (out_dir / "bench.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
        for name, rep in sorted(reports.items()):
            print(f"{name}: mean {rep.mean_s * 1e3:.1f} ms (p50 {rep.p50_s * 1e3:.1f}, p95 {rep.p95_s * 1e3:.1f})")
    else:
        rep = bench.time_inference(params, args.resolution, args.warmup, args.iters)
        (out_dir / "bench.json").write_text(bench.report_to_json(rep) + "\n")
        (out_dir / "bench.csv").write_text(bench.report_csv("relightkit", rep))
        print(
            f"{rep.resolution}px x{rep.timed_iters}: mean {rep.mean_s:.4f} s "
            f"(p50 {rep.p50_s:.4f}, p95 {rep.p95_s:.4f}, cv {rep.cv:.3f}) on {rep.backend}"
        )
    _write_header(out_dir, "bench", None,
                  {"resolution": args.resolution, "iters": args.iters, "warmup": args.warmup}, argv)
    return 0


def build_parser():
    parser = _Parser(prog="relightkit", description="image relighting toolkit")
    parser.add_argument("--version", action="version", version=f"relightkit {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth-data", help="render a synthetic training corpus")
    p.add_argument("--scenes", type=int, required=True)
    p.add_argument("--size", type=int, default=128)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--directions", help="comma-separated subset of N,NE,...,NW (default all)")
    p.add_argument("--temps", help="comma-separated Kelvin subset (default all)")
    p.set_defaults(func=_cmd_synth_data)

    p = sub.add_parser("train", help="two-stage training for one setting pair")
    p.add_argument("--data", required=True)
    p.add_argument("--manifest")
    p.add_argument("--pattern")
    p.add_argument("--task", choices=("single", "multi"), required=True)
    p.add_argument("--source-dir", required=True, help="input light direction (multi fuses its opposite)")
    p.add_argument("--source-temp", type=int, required=True)
    p.add_argument("--target-dir", required=True)
    p.add_argument("--target-temp", type=int, required=True)
    p.add_argument("--config", help="TrainConfig JSON file")
    p.add_argument("--steps-stage1", type=int)
    p.add_argument("--steps-stage2", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--val-scenes", type=int, default=0)
    p.add_argument("--base-channels", type=int, default=32)
    p.add_argument("--stacks", type=int, default=2)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="metric report for a checkpoint over a dataset")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--manifest")
    p.add_argument("--pattern")
    p.add_argument("--split", help="split JSON; evaluates its test partition")
    p.add_argument("--method", default="relightkit")
    p.add_argument("--out", default=".")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("relight", help="relight one image with a trained checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--input2", help="opposite-direction capture (multi-illumination checkpoints)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_relight)

    p = sub.add_parser("bench", help="inference latency benchmark")
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--checkpoint")
    group.add_argument("--random-weights", action="store_true")
    p.add_argument("--resolution", type=int, default=1024)
    p.add_argument("--warmup", type=int, default=10)
    p.add_argument("--iters", type=int, default=50)
    p.add_argument("--base-channels", type=int, default=32)
    p.add_argument("--stacks", type=int, default=2)
    p.add_argument("--compare-backends", action="store_true")
    p.add_argument("--out", default=".")
    p.set_defaults(func=_cmd_bench)

    return parser


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args, argv)
    except SystemExit as exc:  # --help / --version
        return 0 if exc.code in (0, None) else 1
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except (DataError, FormatError, DimensionError, CheckpointError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except (RelightError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
