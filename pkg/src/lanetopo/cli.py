"""Command-line entry point: generate / train / eval / gradcheck / ablate / report.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical
abort, 5 failed checks. Scene generation and evaluation parallelize across
scenes with the thread count from LANETOPO_THREADS (default 1).
"""

from __future__ import annotations

import argparse
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace

import numpy as np

from . import gradcheck as gc
from .config import RunConfig, config_from_dict, echo_config, load_config
from .errors import ConfigError, DataError, LaneTopoError, NumericalError
from .evaluation import MetricsReport, evaluate_frames, extract_predictions, lane_pr_curves
from .model import LaneTopoModel
from .params import load_checkpoint, save_checkpoint
from .scenes import generate_scene, load_dataset, rasterize, save_dataset
from .training import train

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERICAL = 4
EXIT_CHECKS = 5


def _thread_count() -> int:
    try:
        return max(1, int(os.environ.get("LANETOPO_THREADS", "1")))
    except ValueError:
        return 1


def _parallel_map(fn, items):
    workers = _thread_count()
    if workers == 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def _load_run_config(path, seed_override=None) -> RunConfig:
    cfg = load_config(path) if path else config_from_dict({})
    if seed_override is not None:
        cfg = replace(cfg, seed=seed_override)
    return cfg


def _prepare_out(cfg: RunConfig, out_dir: str) -> None:
    os.makedirs(out_dir, exist_ok=True)
    echo_config(cfg, os.path.join(out_dir, "config.json"))


def _apply_flag_overrides(cfg: RunConfig, args) -> RunConfig:
    updates = {}
    for flag in ("plain_sa", "no_curve_ca", "baseline_l2l", "baseline_l2t", "no_contrastive"):
        if getattr(args, flag, False):
            updates[flag] = True
    return replace(cfg, **updates) if updates else cfg


# ----------------------------------------------------------------------
# commands
# ----------------------------------------------------------------------


def cmd_generate(args) -> int:
    cfg = _apply_flag_overrides(_load_run_config(args.config, args.seed), args)
    _prepare_out(cfg, args.out)
    seeds = [cfg.seed * 1_000_003 + i for i in range(args.count)]
    scenes = _parallel_map(lambda s: generate_scene(cfg.scene, s), seeds)
    save_dataset(args.out, scenes)
    print(f"wrote {len(scenes)} scenes to {args.out}")
    return EXIT_OK


def _train_once(cfg: RunConfig, scenes, out_dir: str | None, progress: bool = False):
    model = LaneTopoModel(cfg.resolved_model(), seed=cfg.seed)
    tcfg = cfg.resolved_train()
    log_path = os.path.join(out_dir, "train_log.txt") if out_dir else None
    history = train(model, scenes, tcfg, cfg.weights, cfg.scene,
                    log_path=log_path, progress=progress)
    return model, history


def cmd_train(args) -> int:
    cfg = _apply_flag_overrides(_load_run_config(args.config, args.seed), args)
    if args.steps is not None:
        cfg = replace(cfg, train=replace(cfg.train, steps=args.steps))
    _prepare_out(cfg, args.out)
    scenes = load_dataset(args.dataset)
    model, _ = _train_once(cfg, scenes, args.out, progress=True)
    save_checkpoint(os.path.join(args.out, "checkpoint.bin"), model.params)
    report = _evaluate(cfg, model, scenes)
    _write_report(report, args.out)
    print(f"final OLS {report.ols:.4f} (DET_l {report.det_l:.4f}, DET_t {report.det_t:.4f}, "
          f"TOP_ll {report.top_ll:.4f}, TOP_lt {report.top_lt:.4f})")
    return EXIT_OK


def _evaluate(cfg: RunConfig, model: LaneTopoModel, scenes) -> MetricsReport:
    def predict(scene):
        bev, fv = rasterize(scene, cfg.scene)
        out = model.full_forward(bev, fv, scene.camera)
        return extract_predictions(out, scene.camera.image_size)

    preds = _parallel_map(predict, scenes)
    return evaluate_frames(preds, scenes)


def _write_report(report: MetricsReport, out_dir: str) -> None:
    with open(os.path.join(out_dir, "metrics.txt"), "w", encoding="utf-8") as f:
        f.write(report.to_text())
    with open(os.path.join(out_dir, "metrics.csv"), "w", encoding="utf-8") as f:
        f.write("DET_l,DET_t,TOP_ll,TOP_lt,OLS\n")
        f.write(report.csv_row() + "\n")


def cmd_eval(args) -> int:
    run_dir = args.run
    config_path = args.config or os.path.join(run_dir, "config.json")
    checkpoint_path = args.checkpoint or os.path.join(run_dir, "checkpoint.bin")
    cfg = _load_run_config(config_path)
    os.makedirs(args.out, exist_ok=True)
    echo_config(cfg, os.path.join(args.out, "config.json"))
    scenes = load_dataset(args.dataset)
    model = LaneTopoModel(cfg.resolved_model(), seed=cfg.seed)
    model.params.load_state_dict(load_checkpoint(checkpoint_path))
    report = _evaluate(cfg, model, scenes)
    _write_report(report, args.out)
    if args.plots:
        _emit_plots(cfg, model, scenes, args.out)
    print(report.to_text(), end="")
    return EXIT_OK


def _emit_plots(cfg: RunConfig, model: LaneTopoModel, scenes, out_dir: str) -> None:
    import matplotlib
    matplotlib.use("Agg")
    matplotlib.rcParams["svg.hashsalt"] = "lanetopo"
    import matplotlib.pyplot as plt

    def predict(scene):
        bev, fv = rasterize(scene, cfg.scene)
        out = model.full_forward(bev, fv, scene.camera)
        return extract_predictions(out, scene.camera.image_size)

    preds = [predict(s) for s in scenes]
    curves = lane_pr_curves([p.lanes for p in preds], [s.lanes for s in scenes])
    fig, ax = plt.subplots(figsize=(5, 4))
    for thr, (recall, precision) in sorted(curves.items()):
        ax.plot(recall, precision, label=f"Frechet < {thr:g} m")
    ax.set_xlabel("recall")
    ax.set_ylabel("precision")
    ax.set_xlim(0, 1.02)
    ax.set_ylim(0, 1.02)
    ax.legend()
    ax.set_title("lane detection precision-recall")
    fig.savefig(os.path.join(out_dir, "pr_lanes.svg"), metadata={"Date": None})
    plt.close(fig)

    fig, ax = plt.subplots(figsize=(5, 4))
    confs = np.concatenate([[l.confidence for l in p.lanes] for p in preds])
    adj = np.concatenate([p.lane_adjacency.reshape(-1) for p in preds])
    ax.hist(confs, bins=30, alpha=0.6, label="lane confidence")
    ax.hist(adj, bins=30, alpha=0.6, label="L2L scores")
    ax.set_xlabel("score")
    ax.set_ylabel("count")
    ax.legend()
    ax.set_title("score distributions")
    fig.savefig(os.path.join(out_dir, "score_distributions.svg"), metadata={"Date": None})
    plt.close(fig)


def cmd_gradcheck(args) -> int:
    results = gc.run_all(corrupt_name=args.corrupt or None)
    table = gc.format_table(results)
    print(table)
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, "gradcheck.txt"), "w", encoding="utf-8") as f:
            f.write(table + "\n")
    failed = [r.name for r in results if not r.passed]
    if failed:
        print(f"FAILED: {', '.join(failed)}")
        return EXIT_CHECKS
    return EXIT_OK


ABLATION_VARIANTS = (
    ("baseline", {"plain_sa": True, "no_curve_ca": True, "baseline_l2l": True,
                  "baseline_l2t": True, "no_contrastive": True}),
    ("sa", {"no_curve_ca": True, "baseline_l2l": True, "baseline_l2t": True,
            "no_contrastive": True}),
    ("sa_ca", {"baseline_l2l": True, "baseline_l2t": True, "no_contrastive": True}),
    ("full", {}),
)


def run_ablation(cfg: RunConfig, scenes, seeds, variants=ABLATION_VARIANTS,
                 progress: bool = False) -> dict:
    """Train the variant matrix with shared data and seeds; returns
    {variant: {metric: [per-seed values]}}."""
    results = {}
    for name, flags in variants:
        per_metric = {"DET_l": [], "DET_t": [], "TOP_ll": [], "TOP_lt": [], "OLS": []}
        for seed in seeds:
            vcfg = replace(cfg, seed=seed, **flags)
            model, _ = _train_once(vcfg, scenes, None, progress=False)
            report = _evaluate(vcfg, model, scenes)
            per_metric["DET_l"].append(report.det_l)
            per_metric["DET_t"].append(report.det_t)
            per_metric["TOP_ll"].append(report.top_ll)
            per_metric["TOP_lt"].append(report.top_lt)
            per_metric["OLS"].append(report.ols)
            if progress:
                print(f"variant {name} seed {seed}: OLS {report.ols:.4f} "
                      f"TOP_ll {report.top_ll:.4f}")
        results[name] = per_metric
    return results


def format_ablation_table(results: dict, seeds) -> str:
    cols = ["DET_l", "DET_t", "TOP_ll", "TOP_lt", "OLS"]
    lines = ["variant     " + "".join(f"{c:>10}" for c in cols)]
    for name, metrics in results.items():
        row = f"{name:<12}"
        for c in cols:
            row += f"{100 * float(np.mean(metrics[c])):>10.1f}"
        lines.append(row)
    lines.append(f"# shared data, training seeds: {','.join(str(s) for s in seeds)}")
    return "\n".join(lines)


def cmd_ablate(args) -> int:
    cfg = _load_run_config(args.config, args.seed)
    if args.steps is not None:
        cfg = replace(cfg, train=replace(cfg.train, steps=args.steps))
    _prepare_out(cfg, args.out)
    scenes = load_dataset(args.dataset)
    seeds = [int(s) for s in args.seeds.split(",")]
    results = run_ablation(cfg, scenes, seeds, progress=True)
    table = format_ablation_table(results, seeds)
    print(table)
    with open(os.path.join(args.out, "ablation.txt"), "w", encoding="utf-8") as f:
        f.write(table + "\n")
    return EXIT_OK


def cmd_report(args) -> int:
    rows = []
    for path in args.inputs:
        values = {}
        with open(path, "r", encoding="utf-8") as f:
            for line in f:
                if "=" in line:
                    key, _, val = line.partition("=")
                    values[key.strip()] = val.strip()
        rows.append((path, values))
    cols = ["DET_l", "DET_t", "TOP_ll", "TOP_lt", "OLS"]
    print("run" + " " * 37 + "".join(f"{c:>10}" for c in cols))
    for path, values in rows:
        label = path if len(path) <= 38 else "..." + path[-35:]
        line = f"{label:<40}"
        for c in cols:
            v = values.get(c)
            line += f"{100 * float(v):>10.1f}" if v is not None else f"{'-':>10}"
        print(line)
    return EXIT_OK


# ----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lanetopo",
                                description="desk-scale lane topology stack on synthetic scenes")
    sub = p.add_subparsers(dest="command", required=True)

    def add_common(sp, config=True):
        if config:
            sp.add_argument("--config", default=None, help="run config JSON")
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--out", required=True)

    g = sub.add_parser("generate", help="write a synthetic scene dataset")
    add_common(g)
    g.add_argument("--count", type=int, default=200)
    g.set_defaults(fn=cmd_generate)

    t = sub.add_parser("train", help="train a model on a dataset")
    add_common(t)
    t.add_argument("--dataset", required=True)
    t.add_argument("--steps", type=int, default=None)
    for flag in ("plain-sa", "no-curve-ca", "baseline-l2l", "baseline-l2t", "no-contrastive"):
        t.add_argument(f"--{flag}", dest=flag.replace("-", "_"), action="store_true")
    t.set_defaults(fn=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    e.add_argument("--run", default=".", help="directory with checkpoint.bin and config.json")
    e.add_argument("--checkpoint", default=None)
    e.add_argument("--config", default=None)
    e.add_argument("--dataset", required=True)
    e.add_argument("--out", required=True)
    e.add_argument("--plots", action="store_true", help="emit SVG plots")
    e.set_defaults(fn=cmd_eval)

    c = sub.add_parser("gradcheck", help="finite-difference gradient verification")
    c.add_argument("--out", default=None)
    c.add_argument("--corrupt", default=None, help=argparse.SUPPRESS)  # negative-control hook
    c.set_defaults(fn=cmd_gradcheck)

    a = sub.add_parser("ablate", help="train and compare the ablation variant matrix")
    add_common(a)
    a.add_argument("--dataset", required=True)
    a.add_argument("--steps", type=int, default=None)
    a.add_argument("--seeds", default="0,1,2")
    a.set_defaults(fn=cmd_ablate)

    r = sub.add_parser("report", help="tabulate metric report files")
    r.add_argument("inputs", nargs="+")
    r.set_defaults(fn=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except LaneTopoError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
