"""Command-line entry point: ``xmpose <command> [options]``.

Commands: gen-data, train, eval, experiment, gradcheck, mmdcheck, plot.
Exit codes: 0 success, 1 contract or validation failure (including bad
usage), 2 I/O failure. ``XMP_OUT`` overrides the output directory.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from .config import ExperimentConfig
from .errors import DatasetError, XmposeError

log = logging.getLogger("xmpose")

EXIT_OK, EXIT_CONTRACT, EXIT_IO = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONTRACT, f"{self.prog}: error: {message}\n")


def _load_config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.threads is not None:
        overrides["threads"] = args.threads
    out = os.environ.get("XMP_OUT") or args.out
    if out:
        overrides["out_dir"] = out
    return cfg.replace(**overrides) if overrides else cfg


def _ablation(args) -> str:
    if args.no_fm and args.no_mmd:
        raise XmposeError("--no-fm and --no-mmd together leave only the depth stream; not an ablation")
    return "no_fm" if args.no_fm else "no_mmd" if args.no_mmd else "full"


def cmd_gen_data(args) -> int:
    from .datasets import build_datasets

    cfg = _load_config(args)
    paths = build_datasets(cfg, cfg.out_dir, cfg.threads)
    cfg.save(Path(cfg.out_dir) / "config.txt")
    for name, path in paths.items():
        print(f"{name}: {path}")
    return EXIT_OK


def cmd_train(args) -> int:
    from .networks import load_checkpoint, save_checkpoint
    from .pipeline import TrainData, pretrain, train, with_ablation, TrainLog

    cfg = with_ablation(_load_config(args), _ablation(args))
    out = Path(cfg.out_dir)
    data = TrainData.load(out)
    pre_path = out / "pretrained.xmpw"
    if args.pretrained:
        params, state, _ = load_checkpoint(args.pretrained)
        pre = (params, state)
    else:
        pre_log = TrainLog(cfg.seed)
        pre = pretrain(cfg, data, pre_log)
        save_checkpoint(pre_path, pre[0], pre[1], {"config": cfg.to_text()})
        (out / "trainlog_pretrain.csv").write_text(pre_log.to_csv())
    train(cfg, data, pretrained=pre, out_dir=out)
    print(f"checkpoint: {out / f'model_{cfg.ablation}.xmpw'}")
    return EXIT_OK


def cmd_eval(args) -> int:
    from .datasets import dataset_paths, read_dataset
    from .networks import load_checkpoint
    from .pipeline import evaluate, with_ablation, write_metrics

    cfg = with_ablation(_load_config(args), _ablation(args))
    out = Path(cfg.out_dir)
    ckpt = Path(args.checkpoint) if args.checkpoint else out / f"model_{cfg.ablation}.xmpw"
    params, _, _ = load_checkpoint(ckpt)
    test = read_dataset(dataset_paths(out)["test"])
    rows = evaluate(cfg, params, test)
    path = out / f"metrics_{cfg.ablation}.csv"
    write_metrics(path, cfg, rows)
    for r in rows:
        print(f"{r['split']:18s} {r['metric']:34s} {r['threshold']:6g} {r['value']:.4f}")
    print(f"metrics: {path}")
    return EXIT_OK


def cmd_experiment(args) -> int:
    from .pipeline import metric_value, run_experiment

    base = _load_config(args)
    seeds = [int(s) for s in args.seeds.split(",")]
    for seed in seeds:
        cfg = base.replace(seed=seed, out_dir=str(Path(base.out_dir) / f"seed{seed}"))
        results = run_experiment(cfg, out_dir=cfg.out_dir)
        if cfg.mode == "object":
            summary = {tag: {split: metric_value(rows, "proj2d", split)
                             for split in ("test_color", "test_depth_upper")}
                       for tag, rows in results.items()}
        else:
            summary = {tag: metric_value(rows, "mean_joint_error_mm", "test_color")
                       for tag, rows in results.items()}
        print(json.dumps({"seed": seed, "out_dir": cfg.out_dir, "results": summary}))
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from .checks import GRAD_TOL, run_gradcheck

    res = run_gradcheck(range(args.seeds))
    for r in res["per_seed"]:
        print(f"seed {r['seed']}: max relative error {r['max_rel_error']:.3e} "
              f"({r['checked']} coordinates, {r['skipped']} skipped at relu kinks)")
    verdict = "PASS" if res["passed"] else "FAIL"
    print(f"{verdict}: max relative error {res['max_rel_error']:.3e} (tolerance {GRAD_TOL:g}), "
          f"{res['seconds']:.1f} s")
    return EXIT_OK if res["passed"] else EXIT_CONTRACT


def cmd_mmdcheck(args) -> int:
    from .checks import run_mmdcheck

    res = run_mmdcheck()
    print(f"identical sets: {res['identical']!r}")
    print(f"smallest value over random sets: {res['min_value']:.3e}")
    print(f"max deviation from the double-loop oracle: {res['oracle_error']:.3e}")
    print(f"closed-form n=m=1 error: {res['closed_form_error']:.3e}")
    print("mean-shift curve: " + ", ".join(f"{v:.5f}" for v in res["shift_curve"]))
    print(f"{'PASS' if res['passed'] else 'FAIL'} ({res['seconds']:.1f} s)")
    return EXIT_OK if res["passed"] else EXIT_CONTRACT


def cmd_plot(args) -> int:
    from .plotting import plot_csv

    out = plot_csv(args.csv, args.output)
    print(f"data: {args.csv}")
    print(f"figure: {out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="xmpose", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p, ablation=False):
        p.add_argument("--config", help="key = value experiment config file")
        p.add_argument("--out", help="output directory (XMP_OUT takes precedence)")
        p.add_argument("--seed", type=int, help="override the master seed")
        p.add_argument("--threads", type=int, help="worker threads for data generation")
        if ablation:
            p.add_argument("--no-fm", action="store_true", help="drop the feature-mapping term")
            p.add_argument("--no-mmd", action="store_true", help="drop the MMD term")

    p = sub.add_parser("gen-data", help="render the synthetic, paired and test datasets")
    common(p)
    p.set_defaults(func=cmd_gen_data)
    p = sub.add_parser("train", help="pretrain and jointly train one ablation")
    common(p, ablation=True)
    p.add_argument("--pretrained", help="reuse a pretrained checkpoint instead of pretraining")
    p.set_defaults(func=cmd_train)
    p = sub.add_parser("eval", help="evaluate a checkpoint on the labeled color test split")
    common(p, ablation=True)
    p.add_argument("--checkpoint", help="checkpoint path (default: model_<ablation>.xmpw)")
    p.set_defaults(func=cmd_eval)
    p = sub.add_parser("experiment", help="data, pretraining and every ablation for several seeds")
    common(p)
    p.add_argument("--seeds", default="0,1,2", help="comma-separated master seeds")
    p.set_defaults(func=cmd_experiment)
    p = sub.add_parser("gradcheck", help="backward() against finite differences on the objective")
    p.add_argument("--seeds", type=int, default=10)
    p.set_defaults(func=cmd_gradcheck)
    p = sub.add_parser("mmdcheck", help="MMD estimator property suite")
    p.set_defaults(func=cmd_mmdcheck)
    p = sub.add_parser("plot", help="PCK or loss curves from a CSV to an SVG file")
    p.add_argument("csv", help="metrics CSV (PCK rows) or training log CSV")
    p.add_argument("-o", "--output", help="figure path (default: CSV path with .svg)")
    p.set_defaults(func=cmd_plot)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (DatasetError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (XmposeError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONTRACT


if __name__ == "__main__":
    sys.exit(main())
