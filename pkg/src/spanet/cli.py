"""Command-line entry point.

Subcommands: gen-data (synthetic dataset + manifest), train (checkpoint +
run log), eval (metrics + confusion matrix), profile (params/FLOPs tables).
Every command takes a config file; a handful of flags override config
values where that is convenient for scripting.

Exit codes: 0 ok, 1 config error, 2 data/format error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path

from .checkpoint import load_into_network, save_network
from .costmodel import cost_report, ratio_sweep
from .dataset import GeneratorSpec, dataset_from_records, generate_dataset, load_manifest
from .errors import ConfigError, DataError, FormatError, NumericError
from .network import build_network
from .runconfig import RunConfig, load_config
from .training import (
    confusion_text,
    evaluate,
    metrics_csv,
    run_log_csv,
    train,
)

SWEEP_RATIOS = (0.06, 0.13, 0.25, 0.50, 0.63, 0.83)


# ---------------------------------------------------------------------------
# svg charts
# ---------------------------------------------------------------------------

_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd")


def line_chart_svg(series, title, width=640, height=360):
    """A minimal multi-line chart; `series` is [(label, [values]), ...]."""
    ml, mr, mt, mb = 60, 20, 30, 40
    pw, ph = width - ml - mr, height - mt - mb
    values = [v for _, vs in series for v in vs if v is not None]
    lo, hi = (min(values), max(values)) if values else (0.0, 1.0)
    if hi == lo:
        hi = lo + 1.0
    pad = 0.05 * (hi - lo)
    lo, hi = lo - pad, hi + pad
    n = max(len(vs) for _, vs in series) if series else 1

    def px(i):
        return ml + pw * (i / max(n - 1, 1))

    def py(v):
        return mt + ph * (1.0 - (v - lo) / (hi - lo))

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width / 2}" y="18" text-anchor="middle" font-size="14">{title}</text>',
        f'<line x1="{ml}" y1="{mt}" x2="{ml}" y2="{mt + ph}" stroke="black"/>',
        f'<line x1="{ml}" y1="{mt + ph}" x2="{ml + pw}" y2="{mt + ph}" stroke="black"/>',
        f'<text x="{ml - 6}" y="{py(hi - pad) + 4}" text-anchor="end" font-size="11">{hi - pad:.4g}</text>',
        f'<text x="{ml - 6}" y="{py(lo + pad) + 4}" text-anchor="end" font-size="11">{lo + pad:.4g}</text>',
        f'<text x="{ml}" y="{height - 8}" font-size="11">0</text>',
        f'<text x="{ml + pw}" y="{height - 8}" text-anchor="end" font-size="11">{n - 1}</text>',
    ]
    for si, (label, vs) in enumerate(series):
        color = _PALETTE[si % len(_PALETTE)]
        pts = " ".join(
            f"{px(i):.1f},{py(v):.1f}" for i, v in enumerate(vs) if v is not None
        )
        parts.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.5"/>')
        parts.append(
            f'<text x="{ml + pw - 4}" y="{mt + 14 + 14 * si}" text-anchor="end" '
            f'font-size="11" fill="{color}">{label}</text>'
        )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def _run_dir(cfg: RunConfig) -> Path:
    out = Path(cfg.run_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_gen_data(args) -> int:
    cfg = load_config(args.config)
    if not cfg.gen_out_dir:
        raise ConfigError("[generate] out_dir is required for gen-data")
    spec = GeneratorSpec(
        out_dir=Path(cfg.gen_out_dir),
        classes=cfg.generator_classes(),
        per_class=cfg.gen_per_class,
        size=(cfg.gen_size, cfg.gen_size),
        seed=cfg.gen_seed,
        train_fraction=cfg.gen_train_fraction,
        val_fraction=cfg.gen_val_fraction,
    )
    counts = generate_dataset(spec)
    total = sum(counts.values())
    per_class = ", ".join(f"{k}={v}" for k, v in counts.items())
    print(f"generated {total} images in {cfg.gen_out_dir} ({per_class})")
    return 0


def _load_split(cfg: RunConfig, manifest, split, augment):
    names = cfg.class_names()
    records = load_manifest(manifest, class_names=names)
    chosen = split if split != "all" else None
    net_cfg = cfg.network_config()
    ds = dataset_from_records(
        records,
        chosen,
        (net_cfg.input_size[1], net_cfg.input_size[2]),
        channels=net_cfg.input_size[0],
        mean=cfg.mean,
        std=cfg.std,
        augment=augment,
        class_names=names,
    )
    return ds


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    if not cfg.manifest:
        raise ConfigError("[data] manifest is required for train")
    names = cfg.class_names()
    net_cfg = cfg.network_config()
    if len(names) != net_cfg.num_classes:
        raise ConfigError(
            f"[data] classes lists {len(names)} classes but the network has "
            f"{net_cfg.num_classes} outputs"
        )
    train_ds = _load_split(cfg, cfg.manifest, "train", augment=True)
    val_ds = _load_split(cfg, cfg.manifest, "val", augment=False)
    if len(train_ds) == 0:
        raise DataError(f"manifest {cfg.manifest} has no train split rows")

    network = build_network(net_cfg, seed=cfg.seed)
    started = time.time()
    records = train(
        network,
        train_ds,
        epochs=cfg.epochs,
        batch_size=min(cfg.batch_size, len(train_ds)),
        schedule=cfg.schedule(),
        loss=cfg.loss,
        circle=cfg.circle(),
        momentum=cfg.momentum,
        seed=cfg.seed,
        val_data=val_ds if len(val_ds) else None,
    )
    out = _run_dir(cfg)
    (out / "config.echo").write_text(cfg.render(), encoding="utf-8")
    (out / "run.csv").write_text(run_log_csv(records), encoding="utf-8")
    save_network(out / "model.spa1", network)
    if args.plot:
        series = [("train_loss", [r.train_loss for r in records])]
        if records and records[0].val_loss is not None:
            series.append(("val_loss", [r.val_loss for r in records]))
        (out / "loss.svg").write_text(line_chart_svg(series, "loss"), encoding="utf-8")
        acc = [("train_acc", [r.train_acc for r in records])]
        if records and records[0].val_acc is not None:
            acc.append(("val_acc", [r.val_acc for r in records]))
        (out / "accuracy.svg").write_text(line_chart_svg(acc, "accuracy"), encoding="utf-8")
    last = records[-1]
    # wall-clock stays out of the CSVs so reruns stay byte-identical
    print(f"[{time.time() - started:.1f}s] trained {len(records)} epochs")
    print(
        f"final epoch {last.epoch}: train_loss={last.train_loss:.6f} "
        f"train_acc={last.train_acc:.4f}"
    )
    print(f"run artifacts in {out}")
    return 0


def cmd_eval(args) -> int:
    cfg = load_config(args.config)
    manifest = args.manifest or cfg.manifest
    if not manifest:
        raise ConfigError("[data] manifest (or --manifest) is required for eval")
    checkpoint = args.checkpoint or str(Path(cfg.run_dir) / "model.spa1")
    network = build_network(cfg.network_config(), seed=cfg.seed)
    load_into_network(checkpoint, network)
    ds = _load_split(cfg, manifest, args.split, augment=False)
    if len(ds) == 0:
        raise DataError(f"manifest {manifest} has no rows for split {args.split!r}")
    report = evaluate(
        network, ds, decision="cosine" if cfg.loss == "circle" else "logits"
    )
    names = list(cfg.class_names())
    out = _run_dir(cfg)
    (out / "metrics.csv").write_text(metrics_csv(report, names), encoding="utf-8")
    (out / "confusion.txt").write_text(confusion_text(report, names), encoding="utf-8")
    if args.plot:
        f1s = [f for _, _, _, f, _ in report.per_class]
        (out / "per_class_f1.svg").write_text(
            line_chart_svg([("f1", f1s)], "per-class F1"), encoding="utf-8"
        )
    print(
        f"split={args.split} n={int(report.confusion.sum())} "
        f"accuracy={report.accuracy:.4f} macro_f1={report.macro_f1:.4f}"
    )
    print(f"metrics in {out}")
    return 0


def cmd_profile(args) -> int:
    cfg = load_config(args.config)
    net_cfg = cfg.network_config()
    report = cost_report(net_cfg)
    out = _run_dir(cfg)
    (out / "profile.csv").write_text(report.to_csv(), encoding="utf-8")
    (out / "profile.txt").write_text(report.to_text(), encoding="utf-8")
    print(report.to_text(), end="")
    if args.sweep:
        rows = ratio_sweep(net_cfg, SWEEP_RATIOS)
        lines = ["ratio,total_params,total_flops"]
        lines += [f"{r},{p},{f}" for r, p, f in rows]
        (out / "sweep.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
        print("ratio sweep (params):")
        for r, p, f in rows:
            print(f"  r={r:<5} params={p:>12,}  flops={f:>16,}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="spanet",
        description="Self-proliferation-and-attention network: data, training, "
        "evaluation, and cost profiling.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic defect dataset")
    p.add_argument("config")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train a network and write a checkpoint")
    p.add_argument("config")
    p.add_argument("--plot", action="store_true", help="emit SVG loss/accuracy charts")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a manifest split")
    p.add_argument("config")
    p.add_argument("--checkpoint", help="checkpoint path (default: run_dir/model.spa1)")
    p.add_argument("--manifest", help="manifest path (default: [data] manifest)")
    p.add_argument("--split", default="test", choices=["train", "val", "test", "all"])
    p.add_argument("--plot", action="store_true", help="emit an SVG per-class F1 chart")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("profile", help="analytic parameter/FLOPs report")
    p.add_argument("config")
    p.add_argument("--sweep", action="store_true", help="sweep the composition ratio")
    p.set_defaults(func=cmd_profile)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except (DataError, FormatError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
