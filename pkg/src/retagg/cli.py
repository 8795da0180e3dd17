"""Command-line entry point.

Subcommands: gen-data, train, eval, explain. Configuration precedence
is flags > config file > defaults; every run writes a config echo that
reloads to an identical configuration. All outputs are plain files and
carry no timestamps, so a fixed seed reproduces them byte for byte.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from retagg.aggregation import AggregationConfig, WEIGHTINGS, aggregate
from retagg.backbone import forward_batch, init_params, load_checkpoint, save_checkpoint
from retagg.dataset import (
    VALID_SPLITS,
    Channel,
    WindowConfig,
    balance_classes,
    extract_windows,
    load_dataset,
    split_dataset,
    zscore_normalize,
)
from retagg.explain import build_report, heatmap_series, verify_monotonicity, write_heatmap_csv
from retagg.metrics import EvalResult, evaluate
from retagg.retrieval import METRICS, neighbor_sets
from retagg.synthetic import SyntheticSpec, generate_dataset
from retagg.training import TrainConfig, fit, predict_series, write_history


class CliError(Exception):
    """A pipeline failure the command reports as a message plus nonzero exit."""


@dataclass(frozen=True)
class RunConfig:
    """Everything a run needs; serializes to/from the JSON config format."""

    data: str = ""
    out: str = "out"
    seed: int = 0
    seeds: tuple[int, ...] = ()
    threshold: float = 0.5
    fractions: tuple[float, float, float] = (0.7, 0.1, 0.2)
    window: WindowConfig = field(default_factory=WindowConfig)
    aggregation: AggregationConfig = field(default_factory=AggregationConfig)
    patch_size: int = 24
    hidden_width: int = 16
    epochs: int = 50
    batch_size: int = 8192
    warmup_steps: int = 100
    max_lr: float = 3e-4
    final_lr: float = 1e-6
    start_lr: float = 0.0
    t_max: int = 700
    weight_decay: float = 1e-6
    patience: int = 5

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            epochs=self.epochs,
            batch_size=self.batch_size,
            warmup_steps=self.warmup_steps,
            max_lr=self.max_lr,
            final_lr=self.final_lr,
            start_lr=self.start_lr,
            t_max=self.t_max,
            weight_decay=self.weight_decay,
            patience=self.patience,
            seed=self.seed,
            aggregation=self.aggregation,
            window=self.window,
        )

    def to_dict(self) -> dict:
        return {
            "data": self.data,
            "out": self.out,
            "seed": self.seed,
            "seeds": list(self.seeds),
            "threshold": self.threshold,
            "fractions": list(self.fractions),
            "window": {"window_length": self.window.window_length, "stride": self.window.stride},
            "aggregation": {
                "temperature": self.aggregation.temperature,
                "m": self.aggregation.m,
                "metric": self.aggregation.metric,
                "weighting": self.aggregation.weighting,
            },
            "backbone": {"patch_size": self.patch_size, "hidden_width": self.hidden_width},
            "train": {
                "epochs": self.epochs,
                "batch_size": self.batch_size,
                "warmup_steps": self.warmup_steps,
                "max_lr": self.max_lr,
                "final_lr": self.final_lr,
                "start_lr": self.start_lr,
                "t_max": self.t_max,
                "weight_decay": self.weight_decay,
                "patience": self.patience,
            },
        }

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        window = data.get("window", {})
        agg = data.get("aggregation", {})
        backbone = data.get("backbone", {})
        train = data.get("train", {})
        base = cls()
        return cls(
            data=data.get("data", base.data),
            out=data.get("out", base.out),
            seed=int(data.get("seed", base.seed)),
            seeds=tuple(int(s) for s in data.get("seeds", [])),
            threshold=float(data.get("threshold", base.threshold)),
            fractions=tuple(float(f) for f in data.get("fractions", base.fractions)),
            window=WindowConfig(
                window_length=int(window.get("window_length", base.window.window_length)),
                stride=int(window.get("stride", base.window.stride)),
            ),
            aggregation=AggregationConfig(
                temperature=float(agg.get("temperature", base.aggregation.temperature)),
                m=int(agg.get("m", base.aggregation.m)),
                metric=str(agg.get("metric", base.aggregation.metric)),
                weighting=str(agg.get("weighting", base.aggregation.weighting)),
            ),
            patch_size=int(backbone.get("patch_size", base.patch_size)),
            hidden_width=int(backbone.get("hidden_width", base.hidden_width)),
            epochs=int(train.get("epochs", base.epochs)),
            batch_size=int(train.get("batch_size", base.batch_size)),
            warmup_steps=int(train.get("warmup_steps", base.warmup_steps)),
            max_lr=float(train.get("max_lr", base.max_lr)),
            final_lr=float(train.get("final_lr", base.final_lr)),
            start_lr=float(train.get("start_lr", base.start_lr)),
            t_max=int(train.get("t_max", base.t_max)),
            weight_decay=float(train.get("weight_decay", base.weight_decay)),
            patience=int(train.get("patience", base.patience)),
        )


def _load_config_file(path: str | None) -> dict:
    if path is None:
        return {}
    return json.loads(Path(path).read_text())


def _resolve_run_config(args: argparse.Namespace) -> RunConfig:
    """defaults <- config file <- command-line flags."""
    cfg = RunConfig.from_dict(_load_config_file(args.config))
    updates: dict = {}
    for name in ("data", "out", "seed", "threshold", "epochs", "batch_size", "warmup_steps",
                 "max_lr", "final_lr", "start_lr", "t_max", "weight_decay", "patience",
                 "patch_size", "hidden_width"):
        value = getattr(args, name, None)
        if value is not None:
            updates[name] = value
    window_updates = {
        k: v
        for k, v in (("window_length", getattr(args, "window_length", None)), ("stride", getattr(args, "stride", None)))
        if v is not None
    }
    if window_updates:
        updates["window"] = replace(cfg.window, **window_updates)
    agg_updates = {
        k: v
        for k, v in (
            ("temperature", getattr(args, "temperature", None)),
            ("m", getattr(args, "m", None)),
            ("metric", getattr(args, "metric", None)),
            ("weighting", getattr(args, "aggregation", None)),
        )
        if v is not None
    }
    if agg_updates:
        updates["aggregation"] = replace(cfg.aggregation, **agg_updates)
    if getattr(args, "seeds", None):
        updates["seeds"] = tuple(int(s) for s in args.seeds.split(","))
    return replace(cfg, **updates) if updates else cfg


def prepare_splits(
    channels: list[Channel], seed: int, fractions: tuple[float, float, float]
) -> dict[str, list[Channel]]:
    """Balance, split, and normalize: the preprocessing protocol in one call.

    Manifests where every channel carries an explicit split are honored
    verbatim (no balancing, no random assignment); otherwise the classes
    are balanced first and whole channels are then assigned to splits.
    """
    if not all(ch.split is not None for ch in channels):
        channels = balance_classes(channels, seed)
    split = split_dataset(channels, fractions, seed)
    return {name: [zscore_normalize(ch) for ch in split.select(channels, name)] for name in VALID_SPLITS}


def cmd_gen_data(args: argparse.Namespace) -> int:
    file_cfg = _load_config_file(args.config).get("synthetic", {})
    spec = SyntheticSpec(
        n_series=args.n_series if args.n_series is not None else int(file_cfg.get("n_series", 40)),
        length_range=(
            args.length_min if args.length_min is not None else int(file_cfg.get("length_range", [2000, 6000])[0]),
            args.length_max if args.length_max is not None else int(file_cfg.get("length_range", [2000, 6000])[1]),
        ),
        rare_pattern_rate=(
            args.rare_pattern_rate
            if args.rare_pattern_rate is not None
            else float(file_cfg.get("rare_pattern_rate", 0.02))
        ),
        noise_sigma=args.noise_sigma if args.noise_sigma is not None else float(file_cfg.get("noise_sigma", 1.0)),
        pattern_length=(
            args.pattern_length if args.pattern_length is not None else int(file_cfg.get("pattern_length", 320))
        ),
        seed=args.seed if args.seed is not None else int(file_cfg.get("seed", 0)),
    )
    out = args.out or "data"
    records = generate_dataset(spec, out)
    n_pos = sum(r["label"] for r in records)
    print(f"wrote {len(records)} channels ({n_pos} positive, {len(records) - n_pos} negative) to {out}")
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    cfg = _resolve_run_config(args)
    if not cfg.data:
        raise CliError("train: --data (or config 'data') is required")
    cfg = replace(cfg, data=str(Path(cfg.data).resolve()))  # checkpoints stay usable from any cwd
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)

    channels = load_dataset(cfg.data)
    splits = prepare_splits(channels, cfg.seed, cfg.fractions)
    if not splits["train"] or not splits["val"]:
        raise CliError("train: need non-empty train and val splits")

    model = init_params(
        input_length=cfg.window.window_length,
        hidden_width=cfg.hidden_width,
        seed=cfg.seed,
        patch_size=cfg.patch_size,
    )
    best, history = fit(model, splits["train"], splits["val"], cfg.train_config())

    save_checkpoint(best, out / "checkpoint.json", extra_config={"run": cfg.to_dict()})
    write_history(history, out / "history.jsonl")
    (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")
    from retagg.plotting import render_history_figure

    render_history_figure(history, out / "history.png")

    last = history[-1]
    print(
        f"trained {len(history)} epochs; best val_f1={max(h['val_f1'] for h in history):.4f}; "
        f"last train_loss={last['train_loss_mean']:.4f}; outputs in {out}"
    )
    return 0


def _pipeline_eval(params, run: RunConfig, channels: list[Channel], split: str, seed: int, threshold: float) -> EvalResult:
    splits = prepare_splits(channels, seed, run.fractions)
    subset = splits[split]
    if not subset:
        raise CliError(f"eval: split {split!r} is empty")
    p1 = []
    labels = []
    for ch in subset:
        pred = predict_series(params, ch, run.window, run.aggregation)
        p1.append(float(pred.probs[1]))
        labels.append(ch.label)
    return evaluate(p1, labels, threshold)


def cmd_eval(args: argparse.Namespace) -> int:
    params, stored = load_checkpoint(args.checkpoint)
    run = RunConfig.from_dict(stored.get("run", {}))
    if args.data is not None:
        run = replace(run, data=str(Path(args.data).resolve()))
    threshold = args.threshold if args.threshold is not None else run.threshold
    if args.seeds:
        seeds = [int(s) for s in args.seeds.split(",")]
    elif run.seeds:
        seeds = list(run.seeds)
    else:
        seeds = [args.seed if args.seed is not None else run.seed]
    out = Path(args.out if args.out is not None else run.out)
    out.mkdir(parents=True, exist_ok=True)

    channels = load_dataset(run.data)
    results = [(seed, _pipeline_eval(params, run, channels, args.split, seed, threshold)) for seed in seeds]

    if len(results) == 1:
        payload = results[0][1].to_dict()
    else:
        per_seed = [{"seed": seed, **res.to_dict()} for seed, res in results]
        payload = {
            "split": args.split,
            "per_seed": per_seed,
            "summary": {
                f"{metric}_{stat}": value
                for metric in ("f1", "auc", "accuracy")
                for stat, value in (
                    ("mean", float(np.mean([getattr(r, metric) for _, r in results]))),
                    ("std", float(np.std([getattr(r, metric) for _, r in results]))),
                )
            },
        }
    path = out / f"eval_{args.split}.json"
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    print(json.dumps(payload, indent=2, sort_keys=True))
    return 0


def cmd_explain(args: argparse.Namespace) -> int:
    params, stored = load_checkpoint(args.checkpoint)
    run = RunConfig.from_dict(stored.get("run", {}))
    if args.data is not None:
        run = replace(run, data=str(Path(args.data).resolve()))
    agg = run.aggregation
    overrides = {
        k: v
        for k, v in (
            ("metric", args.metric),
            ("m", args.m),
            ("temperature", args.temperature),
            ("weighting", args.aggregation),
        )
        if v is not None
    }
    if overrides:
        agg = replace(agg, **overrides)
    out = Path(args.out if args.out is not None else run.out)
    out.mkdir(parents=True, exist_ok=True)

    channels = load_dataset(run.data)
    by_id = {ch.id: ch for ch in channels}
    if args.channel_id not in by_id:
        available = ", ".join(sorted(by_id))
        raise CliError(f"explain: unknown channel id {args.channel_id!r}; available: {available}")
    channel = zscore_normalize(by_id[args.channel_id])

    windows = extract_windows(channel, run.window)
    if not windows:
        raise CliError(
            f"explain: channel {channel.id!r} yields no windows "
            f"(length {channel.length} < window_length {run.window.window_length})"
        )
    sets = neighbor_sets(windows, agg.metric, agg.m)
    supports = np.asarray([ns.mean_support for ns in sets])
    probs, _ = forward_batch(params, np.stack([w.values for w in windows]))
    prediction = aggregate(probs, supports, agg, series_id=channel.id)

    report = build_report(prediction, sets, channel, agg, run.window, top_k_windows=args.top_k)
    mono = verify_monotonicity(report, windows, agg)

    report.save(out / f"report_{channel.id}.json")
    rows = heatmap_series(prediction, run.window)
    write_heatmap_csv(rows, out / f"heatmap_{channel.id}.csv")
    if not args.no_figure:
        from retagg.plotting import render_explanation_figure

        render_explanation_figure(report, channel, rows, out / f"heatmap_{channel.id}.png")

    status = "ok" if mono.all_passed else "FAILED"
    print(
        f"{channel.id}: predicted class {report.predicted_class} "
        f"(probs {[round(float(p), 4) for p in report.series_probs]}); "
        f"monotonicity {status} on {len(mono.checks)} leaderboard windows; outputs in {out}"
    )
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file; flags override its values")
    common.add_argument("--seed", type=int, default=None, help="RNG seed")
    common.add_argument("--out", default=None, help="output directory")

    parser = argparse.ArgumentParser(prog="retagg", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", parents=[common], help="generate a synthetic dataset")
    p.add_argument("--n-series", type=int, default=None)
    p.add_argument("--length-min", type=int, default=None)
    p.add_argument("--length-max", type=int, default=None)
    p.add_argument("--rare-pattern-rate", type=float, default=None)
    p.add_argument("--noise-sigma", type=float, default=None)
    p.add_argument("--pattern-length", type=int, default=None)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", parents=[common], help="train a model")
    p.add_argument("--data", default=None, help="dataset directory")
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--window-length", type=int, default=None)
    p.add_argument("--stride", type=int, default=None)
    p.add_argument("--metric", choices=METRICS, default=None)
    p.add_argument("--m", type=int, default=None)
    p.add_argument("--temperature", type=float, default=None)
    p.add_argument("--aggregation", choices=WEIGHTINGS, default=None, help="retrieval weighting or plain uniform averaging")
    p.add_argument("--patch-size", type=int, default=None)
    p.add_argument("--hidden-width", type=int, default=None)
    p.add_argument("--max-lr", type=float, default=None)
    p.add_argument("--final-lr", type=float, default=None)
    p.add_argument("--start-lr", type=float, default=None)
    p.add_argument("--warmup-steps", type=int, default=None)
    p.add_argument("--t-max", type=int, default=None)
    p.add_argument("--weight-decay", type=float, default=None)
    p.add_argument("--patience", type=int, default=None)
    p.add_argument("--threshold", type=float, default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint on a split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", default=None, help="dataset directory (defaults to the checkpoint's)")
    p.add_argument("--split", choices=VALID_SPLITS, default="test")
    p.add_argument("--seeds", default=None, help="comma-separated seeds for a multi-seed summary")
    p.add_argument("--threshold", type=float, default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("explain", parents=[common], help="explain one channel's prediction")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", default=None, help="dataset directory (defaults to the checkpoint's)")
    p.add_argument("--channel-id", required=True)
    p.add_argument("--top-k", type=int, default=5, help="leaderboards for this many top windows")
    p.add_argument("--metric", choices=METRICS, default=None)
    p.add_argument("--m", type=int, default=None)
    p.add_argument("--temperature", type=float, default=None)
    p.add_argument("--aggregation", choices=WEIGHTINGS, default=None)
    p.add_argument("--no-figure", action="store_true", help="skip the rendered heatmap figure")
    p.set_defaults(func=cmd_explain)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:  # pipeline errors become a message + nonzero exit
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
