"""Command-line entry points.

Subcommands: make-synthetic, ingest, pretrain-mae, train, eval, fewshot,
ablate, plot, export-embeddings.  A run is configured by a flat key=value
file (see config.py for every key and default) plus repeatable
``--set key=value`` overrides.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

# Pin BLAS to one thread before numpy loads: reproducibility beats speed here.
for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(_var, "1")

from pathlib import Path


def _load_cfg(args):
    from .config import TrainConfig, apply_overrides, load_config

    cfg = load_config(args.config) if args.config else TrainConfig()
    overrides = {}
    for item in args.set or []:
        if "=" not in item:
            raise SystemExit(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        overrides[key.strip()] = value.strip()
    return apply_overrides(cfg, overrides)


def _add_cfg_args(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--config", type=Path, default=None, help="key=value config file")
    sub.add_argument(
        "--set",
        action="append",
        metavar="KEY=VALUE",
        help="override one config key (repeatable)",
    )


def cmd_make_synthetic(args) -> int:
    from . import synthetic

    if args.micro:
        paths = synthetic.generate_micro(
            args.root, args.dataset, n_train=args.engines, n_test=args.engines, seed=args.seed
        )
        print(f"wrote micro fleet: {paths['train'].parent}")
    else:
        synthetic.generate_standard(args.root, seed=args.seed)
        print(f"wrote FD001..FD004 fleets under {args.root}")
    return 0


def cmd_ingest(args) -> int:
    from . import cmapss, pipeline

    cfg = _load_cfg(args)
    prepared = pipeline.prepare_data(cfg)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cmapss.write_manifest(
        out / "manifest.json",
        cfg.dataset,
        len(prepared.plan.selected_units),
        len(prepared.test),
        len(prepared.train),
        prepared.n_skipped,
        prepared.selection,
        prepared.stats,
        cfg.window_len,
        cfg.rul_cap,
        cfg.seed,
    )
    print(
        f"ingested {cfg.dataset}: {len(prepared.train)} train windows, "
        f"{len(prepared.val)} val windows, {len(prepared.test)} test windows, "
        f"{len(prepared.cache)} cached images"
    )
    return 0


def cmd_pretrain_mae(args) -> int:
    import numpy as np

    from . import model, pipeline, vision_language
    from .numkit import SeededRng, save_params

    cfg = _load_cfg(args)
    if cfg.encoder_variant != "vit_mae":
        raise SystemExit("pretrain-mae needs encoder_variant = vit_mae")
    prepared = pipeline.prepare_data(cfg)
    spec = model.ModelSpec.from_config(cfg, prepared.selection.kept_count)
    params = model.init_model_params(spec, prepared.vocab.vocab_size, cfg.seed)
    pool = prepared.train if prepared.train else prepared.val
    chosen = pool[: cfg.mae_images]
    images = np.stack([prepared.image_for(w) for w in chosen])
    curve = vision_language.mae_pretrain(
        images,
        params,
        spec.vision,
        spec.mae,
        steps=cfg.mae_steps,
        batch_size=min(cfg.mae_batch, len(images)),
        rng=SeededRng(cfg.seed).derive("mae"),
        lr=cfg.lr,
    )
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "pretrain_curve.csv").write_text(
        "step,loss\n" + "\n".join(f"{i},{v!r}" for i, v in enumerate(curve)) + "\n"
    )
    save_params(params, out / "pretrained.bin")
    print(f"pretrained {cfg.mae_steps} steps: loss {curve[0]:.5f} -> {curve[-1]:.5f}")
    return 0


def cmd_train(args) -> int:
    from . import pipeline, plots

    cfg = _load_cfg(args)
    report, artifacts = pipeline.train_and_evaluate(cfg)
    plots.render_prediction_panels(
        report.per_engine,
        artifacts.run_dir / "predictions.svg",
        title=f"{cfg.dataset} RUL predictions",
    )
    print(f"run dir: {artifacts.run_dir}")
    print(report.to_json())
    return 0


def cmd_eval(args) -> int:
    from . import pipeline

    cfg = _load_cfg(args)
    report, _ = pipeline.evaluate(cfg, args.checkpoint)
    print(report.to_json())
    return 0


def cmd_fewshot(args) -> int:
    from . import pipeline, plots

    cfg = _load_cfg(args)
    ratios = [float(r) for r in args.ratios.split(",")] if args.ratios else None
    rows = pipeline.fewshot_sweep(cfg, ratios or pipeline.FEWSHOT_RATIOS)
    plots.render_fewshot_grid(rows, Path(cfg.out_dir) / "fewshot.svg")
    print(json.dumps(rows))
    return 0


def cmd_ablate(args) -> int:
    from . import pipeline, plots

    cfg = _load_cfg(args)
    variants = args.variants.split(",") if args.variants else None
    rows = pipeline.ablate_encoder(cfg, variants or pipeline.ENCODER_VARIANTS)
    plots.render_ablation_bars(rows, Path(cfg.out_dir) / "ablation.svg")
    print(json.dumps(rows))
    return 0


def cmd_plot(args) -> int:
    from . import plots

    run_dir = Path(args.run_dir)
    predictions = run_dir / "predictions.csv"
    if not predictions.exists():
        raise SystemExit(f"no predictions.csv in {run_dir}")
    rows = []
    for line in predictions.read_text().splitlines()[1:]:
        unit, true_rul, pred_rul, abs_err = line.split(",")
        rows.append(
            {
                "unit_id": int(unit),
                "true_rul": float(true_rul),
                "pred_rul": float(pred_rul),
                "abs_err": float(abs_err),
            }
        )
    plots.render_prediction_panels(rows, run_dir / "predictions.svg")
    print(f"wrote {run_dir / 'predictions.svg'}")
    return 0


def cmd_export_embeddings(args) -> int:
    from . import pipeline

    cfg = _load_cfg(args)
    prepared = pipeline.prepare_data(cfg)
    ts_path, llm_path = pipeline.export_embeddings(
        cfg, args.checkpoint, Path(cfg.out_dir), split=args.split, prepared=prepared
    )
    printed = [str(ts_path), str(llm_path)]
    if args.with_attention:
        printed += [
            str(p)
            for p in pipeline.export_attention(
                cfg, args.checkpoint, Path(cfg.out_dir), prepared=prepared
            )
        ]
    print("\n".join(printed))
    return 0


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = argparse.ArgumentParser(
        prog="rulfusion",
        description="Multi-modal remaining-useful-life regression on turbofan data",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("make-synthetic", help="generate C-MAPSS-format fleets")
    p.add_argument("--root", type=Path, default=Path("data"))
    p.add_argument("--dataset", default="FD001")
    p.add_argument("--seed", type=int, default=2024)
    p.add_argument("--micro", action="store_true", help="small fleet for smoke tests")
    p.add_argument("--engines", type=int, default=10, help="engines per split (micro only)")
    p.set_defaults(func=cmd_make_synthetic)

    for name, func, extra in (
        ("ingest", cmd_ingest, ()),
        ("pretrain-mae", cmd_pretrain_mae, ()),
        ("train", cmd_train, ()),
        ("eval", cmd_eval, ("checkpoint",)),
        ("fewshot", cmd_fewshot, ("ratios",)),
        ("ablate", cmd_ablate, ("variants",)),
        ("export-embeddings", cmd_export_embeddings, ("checkpoint", "split", "attention")),
    ):
        p = sub.add_parser(name)
        _add_cfg_args(p)
        if "checkpoint" in extra:
            p.add_argument("--checkpoint", type=Path, required=True)
        if "ratios" in extra:
            p.add_argument("--ratios", default=None, help="comma-separated, e.g. 0.05,0.1")
        if "variants" in extra:
            p.add_argument("--variants", default=None, help="comma-separated encoder names")
        if "split" in extra:
            p.add_argument("--split", choices=("train", "val", "test"), default="test")
        if "attention" in extra:
            p.add_argument("--with-attention", action="store_true")
        p.set_defaults(func=func)

    p = sub.add_parser("plot", help="re-render prediction panels for a run dir")
    p.add_argument("--run-dir", type=Path, required=True)
    p.set_defaults(func=cmd_plot)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
