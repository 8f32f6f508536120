"""Command-line entry point: ``htcan <subcommand> ...``.

Exit codes: 0 success, 1 validation or usage error, 2 file/IO error.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from importlib import resources
from pathlib import Path

import numpy as np

from . import gradcheck, metrics, selftest
from .config import PipelineConfig, read_json
from .ensemble import model_ensemble, parse_weight
from .errors import HtcanError, LoadError, UsageError
from .imageio import find_pairs, read_pair, read_pairs, read_png, write_png
from .pipeline import init_pipeline_weights, run_pipeline, save_weights
from .stage1 import Tiling

EXIT_OK, EXIT_INVALID, EXIT_IO = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INVALID, f"{self.prog}: error: {message}\n")


def preset_path(name: str) -> Path:
    ref = resources.files("htcan").joinpath(f"presets/{name}.json")
    if not ref.is_file():
        raise UsageError(f"unknown preset {name!r}")
    return Path(str(ref))


def _config_arg(args, kind: str) -> Path:
    if getattr(args, "preset", None):
        return preset_path(f"{args.preset}_{kind}")
    return Path(args.config)


def cmd_sr(args) -> int:
    cfg = PipelineConfig.load(args.config).with_stages(args.stages)
    if args.no_self_ensemble:
        cfg = cfg.without_self_ensemble()
    if args.workers is not None:
        cfg = cfg.with_tiling(Tiling(cfg.tiling.batch, args.workers))
    cfg.check_files()
    pair = read_pair(args.left, args.right, cfg.dtype)
    t0 = time.perf_counter()
    result = run_pipeline(pair, cfg)
    write_png(args.out_left, result.output.left)
    write_png(args.out_right, result.output.right)
    if args.trace:
        print(result.dataflow_table())
    print(f"wrote {args.out_left} and {args.out_right} "
          f"({result.output.left.shape[-2]}x{result.output.left.shape[-1]}, {time.perf_counter() - t0:.2f}s)")
    return EXIT_OK


def cmd_degrade(args) -> int:
    src, dst = Path(args.in_dir), Path(args.out_dir)
    if not src.is_dir():
        raise LoadError(f"{src}: not a directory")
    files = sorted(p for p in src.iterdir() if p.suffix.lower() == ".png")
    if not files:
        raise UsageError(f"{src}: no PNG files")
    for f in files:
        img = read_png(f, np.float64)
        h, w = img.shape[2:]
        s = args.scale
        # crop to a multiple of the scale so the downsample is exact
        img = img[:, :, : h - h % s, : w - w % s]
        write_png(dst / f.name, metrics.bicubic_downsample(img, s))
    print(f"degraded {len(files)} image(s) by x{args.scale} into {dst}")
    return EXIT_OK


def cmd_eval(args) -> int:
    sr_names, gt_names = set(find_pairs(args.sr_dir)), set(find_pairs(args.gt_dir))
    if sr_names != gt_names:
        raise UsageError(f"SR and GT pairs differ: only SR {sorted(sr_names - gt_names)}, "
                         f"only GT {sorted(gt_names - sr_names)}")
    report = metrics.evaluate_protocol(read_pairs(args.sr_dir), read_pairs(args.gt_dir),
                                       psnr_mode=args.psnr_mode, ssim_mode=args.ssim_mode)
    if args.report:
        report.write_csv(args.report)
    print(report.table())
    return EXIT_OK


def cmd_init_weights(args) -> int:
    path = _config_arg(args, "pipeline")
    raw = read_json(path)
    out = Path(args.out)
    cfg = PipelineConfig.from_dict(raw, out, str(path))
    out.mkdir(parents=True, exist_ok=True)
    written = save_weights(cfg, init_pipeline_weights(cfg, args.seed, args.noise))
    cfg_out = out / "pipeline.json"
    cfg_out.write_text(json.dumps(raw, indent=2) + "\n", encoding="utf-8")
    for w in written:
        print(w)
    print(cfg_out)
    return EXIT_OK


def cmd_train_toy(args) -> int:
    from .training import ToyTrainConfig, train_toy

    path = _config_arg(args, "train")
    cfg = ToyTrainConfig.from_dict(read_json(path))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    res = train_toy(args.stage, cfg, iters=args.iters, seed=args.seed)
    res.write_csv(out / f"stage{args.stage}_trace.csv")
    res.weights.save(out / f"stage{args.stage}.htw")
    for k, W in sorted(res.upstream.items()):
        W.save(out / f"stage{k}.htw")
    kinds = sorted({r.loss_kind for r in res.trace})
    print(f"stage {args.stage}: {len(res.trace)} iterations in {time.perf_counter() - t0:.1f}s, phases {kinds}")
    try:
        print(f"charbonnier descent ratio (window {cfg.smoothing}): {res.descent_ratio(cfg.smoothing):.4f}")
    except UsageError as exc:
        print(f"descent ratio unavailable: {exc}")
    print(f"wrote {out}")
    return EXIT_OK


def cmd_ensemble(args) -> int:
    if len(args.inputs) != len(args.weights):
        raise UsageError(f"{len(args.inputs)} inputs but {len(args.weights)} weights")
    weights = [parse_weight(w) for w in args.weights]
    preds = [read_png(p, np.float64) for p in args.inputs]
    write_png(args.out, model_ensemble(preds, weights))
    print(f"wrote {args.out}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    results = gradcheck.run_all(args.seed)
    print(gradcheck.format_table(results))
    return EXIT_OK if all(r.ok for r in results) else EXIT_INVALID


def cmd_selftest(args) -> int:
    results = selftest.run_all(args.seed)
    print(selftest.format_table(results))
    return EXIT_OK if all(r.ok for r in results) else EXIT_INVALID


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="htcan", description="Stereo super-resolution pipeline tools.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("sr", help="super-resolve a stereo pair")
    s.add_argument("--left", required=True)
    s.add_argument("--right", required=True)
    s.add_argument("--out-left", required=True)
    s.add_argument("--out-right", required=True)
    s.add_argument("--config", required=True)
    s.add_argument("--no-self-ensemble", action="store_true")
    s.add_argument("--stages", choices=["1", "12", "123"], default="123")
    s.add_argument("--workers", type=int, default=None, help="override tiling worker threads")
    s.add_argument("--trace", action="store_true", help="print the dataflow table")
    s.set_defaults(func=cmd_sr)

    s = sub.add_parser("degrade", help="bicubically downsample every PNG in a directory")
    s.add_argument("--in-dir", required=True)
    s.add_argument("--out-dir", required=True)
    s.add_argument("--scale", type=int, default=4)
    s.set_defaults(func=cmd_degrade)

    s = sub.add_parser("eval", help="score SR pairs against ground truth")
    s.add_argument("--sr-dir", required=True)
    s.add_argument("--gt-dir", required=True)
    s.add_argument("--report")
    s.add_argument("--psnr-mode", choices=["joint", "per_channel"], default="joint")
    s.add_argument("--ssim-mode", choices=["luma", "rgb_mean"], default="luma")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("init-weights", help="write deterministic initial weights for a pipeline config")
    g = s.add_mutually_exclusive_group(required=True)
    g.add_argument("--config")
    g.add_argument("--preset", choices=["toy", "full"])
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True, help="directory for the weights and a copy of the config")
    s.add_argument("--noise", type=float, default=0.0, help="Gaussian perturbation added to every parameter")
    s.set_defaults(func=cmd_init_weights)

    s = sub.add_parser("train-toy", help="train one stage on synthetic pairs")
    s.add_argument("--stage", type=int, choices=[1, 2, 3], required=True)
    g = s.add_mutually_exclusive_group()
    g.add_argument("--config")
    g.add_argument("--preset", choices=["toy", "full"], default="toy")
    s.add_argument("--iters", type=int, default=None)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_train_toy)

    s = sub.add_parser("ensemble", help="weighted average of PNG predictions")
    s.add_argument("--inputs", nargs="+", required=True)
    s.add_argument("--weights", nargs="+", required=True, help="decimals or fractions such as 1/7")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_ensemble)

    s = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    s.add_argument("--seed", type=int, default=7)
    s.set_defaults(func=cmd_gradcheck)

    s = sub.add_parser("selftest", help="compare kernels against scalar oracles")
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_selftest)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except LoadError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except HtcanError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
