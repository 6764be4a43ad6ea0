"""Operator command line: train, eval, ablate, serve, export.

Thin shell over the library; every behavior here is reachable through
library calls with identical results given identical configuration.
Exit codes: 0 success, 1 configuration error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import os
import sys

import numpy as np

from .config import (ConfigError, TrainConfig, apply_overrides,
                     config_from_dict, grid_config, line_config, load_config)
from .nets import checkpoint_load
from .training import METRIC_COLUMNS, TrainHooks, build_env, evaluate, train

ABLATION_VARIANTS = {
    "full": {},
    "no_pi": {"no_pi": True},
    "no_pg": {"no_pg": True},
    "ppo": {"no_pg": True, "annotation.mode": "none"},
}


class CliError(ConfigError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse usage problems are config errors
        raise CliError(message)


def parse_seeds(text: str) -> list[int]:
    """'0..9' (inclusive), '0,3,7', or '5'."""
    if ".." in text:
        lo, hi = text.split("..", 1)
        return list(range(int(lo), int(hi) + 1))
    return [int(p) for p in text.split(",") if p != ""]


def _base_config(args) -> TrainConfig:
    if args.config:
        cfg = load_config(args.config)
    elif args.preset == "grid":
        cfg = grid_config()
    elif args.preset == "line":
        cfg = line_config()
    else:
        raise CliError("either --config or --preset is required")
    if getattr(args, "overrides", None):
        cfg = apply_overrides(cfg, args.overrides)
    return cfg


def _progress_hooks(tag: str, every: int, quiet: bool) -> TrainHooks:
    if quiet:
        return TrainHooks()
    def report(m):
        if m.iteration % every == 0 or m.iteration == 0:
            print(f"[{tag}] iter={m.iteration} success={m.success_rate:.2f} "
                  f"return={m.avg_return:.1f} mmd={m.mmd_metric:.4f} "
                  f"|P|={m.p_size}", flush=True)
    return TrainHooks(on_metrics=report)


def _run_one(cfg: TrainConfig, seed: int, out_dir: str, tag: str, quiet: bool):
    cfg = config_from_dict({**cfg.to_dict(), "seed": seed})
    return train(cfg, out_dir=out_dir,
                 hooks=_progress_hooks(tag, every=50, quiet=quiet))


def cmd_train(args) -> int:
    cfg = _base_config(args)
    if args.print_config:
        print(cfg.to_json())
        return 0
    seeds = parse_seeds(args.seeds)
    out_root = args.out or "runs"
    for seed in seeds:
        out_dir = os.path.join(out_root, f"seed{seed}")
        res = _run_one(cfg, seed, out_dir, tag=f"seed{seed}", quiet=args.quiet)
        print(f"seed {seed}: final success (last 10%) = "
              f"{res.final_success():.3f} -> {out_dir}")
    return 0


def cmd_eval(args) -> int:
    cfg = load_config(os.path.join(args.run, "config.json"))
    ck_dir = os.path.join(args.run, "checkpoints")
    candidates = [f for f in os.listdir(ck_dir) if f.endswith(".json")]
    if not candidates:
        raise CliError(f"no checkpoints in {ck_dir}")
    latest = max(candidates, key=lambda f: int(f.split("_")[1].split(".")[0]))
    with open(os.path.join(ck_dir, latest), encoding="utf-8") as fh:
        record = json.load(fh)
    pspec, policy, _ = checkpoint_load(record["policy"])
    env = build_env(cfg)
    rng = np.random.default_rng(args.seed)
    success, avg_return = evaluate(policy, pspec, env, episodes=args.episodes,
                                   rng=rng)
    print(json.dumps({"checkpoint": latest, "episodes": args.episodes,
                      "success_rate": success, "avg_return": avg_return}))
    return 0


def _resolve_grid_key(cfg: TrainConfig, key: str) -> str:
    """Accept either a dotted path or a bare leaf name unique in the config."""
    d = cfg.to_dict()
    node = d
    parts = key.split(".")
    ok = True
    for p in parts:
        if isinstance(node, dict) and p in node:
            node = node[p]
        else:
            ok = False
            break
    if ok:
        return key
    hits = [f"{section}.{key}" for section in ("annotation", "kernel", "line")
            if key in d[section]]
    if len(hits) == 1:
        return hits[0]
    raise CliError(f"unknown config key {key!r}" if not hits
                   else f"ambiguous config key {key!r}: {hits}")


def cmd_ablate(args) -> int:
    cfg = _base_config(args)
    seeds = parse_seeds(args.seeds)
    out_root = args.out or "ablation"
    if args.grid:
        key, _, values = args.grid.partition("=")
        if not values:
            raise CliError("--grid expects key=v1,v2,...")
        path = _resolve_grid_key(cfg, key)
        variants = {f"{key}={v}": {path: v} for v in values.split(",")}
    else:
        variants = {name: dict(over) for name, over in ABLATION_VARIANTS.items()}
    rows = []
    for name, overrides in variants.items():
        var_cfg = apply_overrides(cfg, [f"{k}={v}" for k, v in overrides.items()]) \
            if overrides else cfg
        for seed in seeds:
            out_dir = os.path.join(out_root, name.replace("=", "_"), f"seed{seed}")
            res = _run_one(var_cfg, seed, out_dir, tag=f"{name}/s{seed}",
                           quiet=args.quiet)
            succ = [m.success_rate for m in res.metrics]
            rows.append({
                "variant": name,
                "seed": seed,
                "final_success_rate": res.final_success(),
                "auc_success_rate": float(np.mean(succ)) if succ else 0.0,
            })
            print(f"{name} seed {seed}: final={rows[-1]['final_success_rate']:.3f} "
                  f"auc={rows[-1]['auc_success_rate']:.3f}")
    os.makedirs(out_root, exist_ok=True)
    table = os.path.join(out_root, "ablation.csv")
    with open(table, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
        writer.writeheader()
        writer.writerows(rows)
    print(f"wrote {table}")
    return 0


def _load_metrics(run_dir: str):
    path = os.path.join(run_dir, "metrics.csv")
    if not os.path.exists(path):
        return None
    with open(path, encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        return list(reader)


def cmd_export(args) -> int:
    runs = []
    skipped = []
    for run_dir in args.runs:
        rows = _load_metrics(run_dir)
        if rows is None:
            skipped.append(run_dir)
        else:
            runs.append(rows)
    for s in skipped:
        print(f"skipping {s}: no metrics.csv", file=sys.stderr)
    if not runs:
        raise CliError("no run directories with metrics.csv")
    n_iter = min(len(r) for r in runs)
    series = {col: np.array([[float(r[i][col]) for i in range(n_iter)]
                             for r in runs])
              for col in ("success_rate", "avg_return", "mmd_metric")}
    os.makedirs(args.out, exist_ok=True)
    merged = os.path.join(args.out, "curves.csv")
    with open(merged, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        header = ["iteration"]
        for col in series:
            header += [f"{col}_mean", f"{col}_stderr"]
        writer.writerow(header)
        n_seeds = len(runs)
        for i in range(n_iter):
            row = [i]
            for col, mat in series.items():
                vals = mat[:, i]
                mean = float(np.nanmean(vals)) if not np.all(np.isnan(vals)) else float("nan")
                if n_seeds > 1 and not np.all(np.isnan(vals)):
                    stderr = float(np.nanstd(vals, ddof=1) / np.sqrt(n_seeds))
                else:
                    stderr = 0.0
                row += [mean, stderr]
            writer.writerow(row)
    svg = os.path.join(args.out, "curves.svg")
    _plot_curves(series, svg)
    print(f"wrote {merged} and {svg} ({len(runs)} runs, {n_iter} iterations)")
    return 0


def _plot_curves(series: dict, path: str) -> None:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, axes = plt.subplots(1, len(series), figsize=(4 * len(series), 3.2))
    for ax, (col, mat) in zip(np.atleast_1d(axes), series.items()):
        x = np.arange(mat.shape[1])
        with np.errstate(all="ignore"):
            mean = np.nanmean(mat, axis=0)
            n = mat.shape[0]
            stderr = (np.nanstd(mat, axis=0, ddof=1) / np.sqrt(n)) if n > 1 \
                else np.zeros_like(mean)
        ax.plot(x, mean, lw=1.2)
        ax.fill_between(x, mean - stderr, mean + stderr, alpha=0.3)
        ax.set_xlabel("iteration")
        ax.set_title(col.replace("_", " "))
        ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app
    app = create_app(runs_root=args.runs_root)
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="prefguide",
                     description="Preference-guided sparse-reward RL laboratory")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, with_seeds=True):
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--preset", choices=["grid", "line"],
                       help="start from a built-in preset instead of a file")
        if with_seeds:
            p.add_argument("--seeds", default="0",
                           help="seed list: '0..9', '0,2,5', or '3'")
        p.add_argument("--out", help="output directory")
        p.add_argument("--quiet", action="store_true")
        p.add_argument("overrides", nargs="*", metavar="key=value",
                       help="dotted config overrides")

    p_train = sub.add_parser("train", help="run training, one run per seed")
    common(p_train)
    p_train.add_argument("--print-config", action="store_true",
                         help="print the resolved config and exit")
    p_train.set_defaults(fn=cmd_train)

    p_eval = sub.add_parser("eval", help="evaluate a finished run's checkpoint")
    p_eval.add_argument("--run", required=True, help="run directory")
    p_eval.add_argument("--episodes", type=int, default=20)
    p_eval.add_argument("--seed", type=int, default=0)
    p_eval.set_defaults(fn=cmd_eval)

    p_abl = sub.add_parser("ablate",
                           help="run {full, no_pi, no_pg, ppo} x seeds, or a "
                                "--grid parameter sweep")
    common(p_abl)
    p_abl.add_argument("--grid", help="sweep instead of ablation: key=v1,v2,...")
    p_abl.set_defaults(fn=cmd_ablate)

    p_exp = sub.add_parser("export", help="merge runs into curves.csv + curves.svg")
    p_exp.add_argument("runs", nargs="+", help="run directories")
    p_exp.add_argument("--out", required=True)
    p_exp.set_defaults(fn=cmd_export)

    p_srv = sub.add_parser("serve", help="start the annotation/metrics service")
    p_srv.add_argument("--host", default="127.0.0.1")
    p_srv.add_argument("--port", type=int, default=8000)
    p_srv.add_argument("--runs-root", default="runs")
    p_srv.set_defaults(fn=cmd_serve)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - boundary of the CLI
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
