"""Two-stage training, evaluation, few-shot sweeps, and encoder ablations.

Stage 1 trains the temporal branch against a temporary scalar head so it
extracts degradation dynamics on its own; stage 2 trains the full fusion
pipeline (minus whatever the freeze list holds back).  All randomness flows
from the config seed through tagged substreams, so a (config, seed) pair
reproduces its metrics and checkpoints byte for byte in single-threaded
mode.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import cmapss, metrics, model, spectral, text, vision_language
from .config import TrainConfig, save_config
from .errors import ConfigError, NumericError, ParseError
from .fusion import to_cycles
from .numkit import (
    AdamState,
    SeededRng,
    Tape,
    Tensor,
    adam_step,
    load_params,
    mul,
    sadd,
    save_params,
    smul,
)

logger = logging.getLogger(__name__)

VAL_MAX_WINDOWS = 200
SPLIT_TRAIN_FILE = 0
SPLIT_TEST_FILE = 1


@dataclass(eq=False)
class PreparedWindow:
    split: int
    unit_id: int
    end_cycle: int
    values: np.ndarray
    label: float
    seq: Optional[text.TokenSequence] = None

    @property
    def key(self) -> tuple[int, int, int]:
        return (self.split, self.unit_id, self.end_cycle)


@dataclass
class PreparedData:
    cfg: TrainConfig
    meta: cmapss.DatasetMeta
    selection: cmapss.SensorSelection
    stats: cmapss.NormStats
    plan: cmapss.FewShotPlan
    train: list[PreparedWindow]
    val: list[PreparedWindow]
    test: list[PreparedWindow]
    vocab: text.BpeVocab
    cache: spectral.SpectralCache
    n_skipped: int

    def image_for(self, window: PreparedWindow) -> np.ndarray:
        img = self.cache.get(window.split, window.unit_id, window.end_cycle)
        if img is None:
            raise ConfigError(
                f"no cached image for unit {window.unit_id} cycle {window.end_cycle}"
            )
        return img.astype(np.float64)


def _data_paths(cfg: TrainConfig) -> tuple[Path, Path, Path]:
    root = Path(cfg.data_dir)
    return (
        root / f"train_{cfg.dataset}.txt",
        root / f"test_{cfg.dataset}.txt",
        root / f"RUL_{cfg.dataset}.txt",
    )


def _thin(windows: list, limit: int) -> list:
    if len(windows) <= limit:
        return windows
    stride = int(np.ceil(len(windows) / limit))
    return windows[::stride]


def prepare_data(cfg: TrainConfig, build_cache: bool = True) -> PreparedData:
    """Parse, prune, normalize, window, prompt, tokenize, and render images."""
    train_path, test_path, rul_path = _data_paths(cfg)
    meta = cmapss.DATASET_META[cfg.dataset]
    selection = cmapss.SensorSelection()

    raw_train = cmapss.parse_cmapss(train_path, "train")
    raw_test = cmapss.parse_cmapss(test_path, "test")
    rul_values = cmapss.parse_cmapss(rul_path, "rul")
    if len(rul_values) != len(raw_test):
        raise ParseError(
            f"{rul_path}: {len(rul_values)} RUL rows for {len(raw_test)} test engines"
        )

    train_trajs = [cmapss.select_sensors(t, selection) for t in raw_train]
    test_trajs = [cmapss.select_sensors(t, selection) for t in raw_test]

    plan = cmapss.fewshot_subsample(
        [t.unit_id for t in train_trajs], cfg.fewshot_ratio, cfg.seed
    )
    kept = [t for t in train_trajs if t.unit_id in set(plan.selected_units)]

    # Engine-level validation holdout from the kept training engines.
    if len(kept) >= 2:
        n_val = max(1, int(np.floor(cfg.val_fraction * len(kept) + 0.5)))
        order = list(range(len(kept)))
        SeededRng(cfg.seed).derive("valsplit").shuffle(order)
        val_pos = set(order[:n_val])
    else:
        val_pos = set()
    stats = cmapss.fit_minmax(kept)

    def finish(traj: cmapss.EngineTrajectory) -> cmapss.EngineTrajectory:
        return cmapss.apply_minmax(traj, stats, clip=True)

    train_windows: list[PreparedWindow] = []
    val_windows: list[PreparedWindow] = []
    n_skipped = 0
    for pos, traj in enumerate(kept):
        normalized = finish(traj)
        samples = cmapss.make_windows(normalized, cfg.window_len, cfg.rul_cap)
        if not samples:
            n_skipped += 1
            continue
        sink = val_windows if pos in val_pos else train_windows
        for s in samples:
            sink.append(
                PreparedWindow(
                    SPLIT_TRAIN_FILE, s.unit_id, s.end_cycle, s.values, s.rul_label
                )
            )
    val_windows = _thin(val_windows, VAL_MAX_WINDOWS)
    if not val_windows:
        logger.warning("no validation engines available; tracking on train windows")
        val_windows = train_windows

    test_windows: list[PreparedWindow] = []
    for traj, rul in zip(test_trajs, rul_values):
        sample = cmapss.make_test_window(
            finish(traj), cfg.window_len, rul, cfg.rul_cap
        )
        if sample is None:
            n_skipped += 1
            continue
        test_windows.append(
            PreparedWindow(
                SPLIT_TEST_FILE,
                sample.unit_id,
                sample.end_cycle,
                sample.values,
                sample.rul_label,
            )
        )

    # Prompts and tokenizer (vocabulary trained on the training-split corpus).
    corpus_windows: dict[tuple[int, int, int], PreparedWindow] = {}
    for w in train_windows + val_windows:
        corpus_windows.setdefault(w.key, w)
    corpus = []
    for w in corpus_windows.values():
        sample = cmapss.WindowSample(w.unit_id, w.end_cycle, w.values, w.label)
        corpus.append(text.build_prompt(meta, sample, cfg.window_len))
    vocab = text.train_bpe(corpus, cfg.bpe_merges)
    for w in train_windows + val_windows + test_windows:
        sample = cmapss.WindowSample(w.unit_id, w.end_cycle, w.values, w.label)
        prompt = text.build_prompt(meta, sample, cfg.window_len)
        w.seq = text.tokenize(prompt, vocab, cfg.max_token_len)

    cache = _load_or_build_cache(
        cfg, train_windows + val_windows, test_windows, build=build_cache
    )
    return PreparedData(
        cfg=cfg,
        meta=meta,
        selection=selection,
        stats=stats,
        plan=plan,
        train=train_windows,
        val=val_windows,
        test=test_windows,
        vocab=vocab,
        cache=cache,
        n_skipped=n_skipped,
    )


def _load_or_build_cache(
    cfg: TrainConfig,
    train_like: list[PreparedWindow],
    test_like: list[PreparedWindow],
    build: bool = True,
) -> spectral.SpectralCache:
    cache_dir = Path(cfg.data_dir) / "spectral_cache"
    cache_hash = cfg.preprocess_hash()
    cache_path = cache_dir / f"{cfg.dataset}_{cache_hash}.bin"
    if cache_path.exists():
        try:
            return spectral.SpectralCache.load(cache_path, cache_hash)
        except ParseError as exc:
            logger.warning("rebuilding spectral cache: %s", exc)
    cache = spectral.SpectralCache(cache_hash, size=cfg.image_size)
    if not build:
        return cache
    rp_cfg, stft_cfg, cwt_cfg = cfg.rp_config(), cfg.stft_config(), cfg.cwt_config()
    seen = set()
    for w in train_like + test_like:
        key = (w.split, w.unit_id, w.end_cycle)
        if key in seen:
            continue
        seen.add(key)
        image = spectral.window_image(
            w.values, rp_cfg, stft_cfg, cwt_cfg, size=cfg.image_size
        )
        cache.put(w.split, w.unit_id, w.end_cycle, image)
    cache_dir.mkdir(parents=True, exist_ok=True)
    cache.save(cache_path)
    return cache


# ---------------------------------------------------------------------------
# Prediction and evaluation
# ---------------------------------------------------------------------------


def predict_cycles(
    window: PreparedWindow,
    prepared: PreparedData,
    params: dict[str, Tensor],
    spec: model.ModelSpec,
    stage: int = 2,
    extras: Optional[model.ForwardExtras] = None,
) -> float:
    if stage == 1:
        raw = model.stage1_forward(window.values, params, spec)
    else:
        raw = model.full_forward(
            window.values,
            prepared.image_for(window),
            window.seq,
            params,
            spec,
            training=False,
            extras=extras,
        )
    return to_cycles(raw.item(), prepared.cfg.rul_cap)


def _windows_rmse(
    windows: Sequence[PreparedWindow],
    prepared: PreparedData,
    params: dict[str, Tensor],
    spec: model.ModelSpec,
    stage: int,
) -> float:
    preds = [predict_cycles(w, prepared, params, spec, stage) for w in windows]
    return metrics.rmse(preds, [w.label for w in windows])


def evaluate_params(
    prepared: PreparedData,
    params: dict[str, Tensor],
    spec: model.ModelSpec,
    windows: Optional[Sequence[PreparedWindow]] = None,
) -> metrics.MetricsReport:
    windows = prepared.test if windows is None else windows
    preds = [predict_cycles(w, prepared, params, spec) for w in windows]
    return metrics.compute_report(
        [w.unit_id for w in windows], preds, [w.label for w in windows]
    )


def write_predictions_csv(report: metrics.MetricsReport, path: Path) -> None:
    lines = ["unit_id,true_rul,pred_rul,abs_err"]
    lines += [
        f"{r['unit_id']},{r['true_rul']!r},{r['pred_rul']!r},{r['abs_err']!r}"
        for r in report.per_engine
    ]
    path.write_text("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------


@dataclass
class RunArtifacts:
    run_dir: Path
    config_path: Path
    manifest_path: Path
    vocab_path: Path
    checkpoint_path: Path
    curve_path: Path
    pretrain_curve_path: Optional[Path] = None
    metrics_path: Optional[Path] = None
    predictions_path: Optional[Path] = None


def _init_run_dir(cfg: TrainConfig) -> Path:
    run_dir = Path(cfg.out_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    save_config(cfg, run_dir / "config.txt")
    return run_dir


def _maybe_mae_pretrain(
    cfg: TrainConfig,
    prepared: PreparedData,
    params: dict[str, Tensor],
    spec: model.ModelSpec,
    run_dir: Path,
) -> Optional[Path]:
    if spec.vision.variant != "vit_mae" or cfg.mae_steps <= 0:
        return None
    pool = prepared.train if prepared.train else prepared.val
    chosen = _thin(pool, cfg.mae_images)[: cfg.mae_images]
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
    path = run_dir / "pretrain_curve.csv"
    path.write_text(
        "step,loss\n" + "\n".join(f"{i},{v!r}" for i, v in enumerate(curve)) + "\n"
    )
    return path


def train(cfg: TrainConfig, prepared: Optional[PreparedData] = None) -> RunArtifacts:
    run_dir = _init_run_dir(cfg)
    if prepared is None:
        prepared = prepare_data(cfg)

    manifest_path = run_dir / "manifest.json"
    cmapss.write_manifest(
        manifest_path,
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
    vocab_path = run_dir / "vocab.txt"
    text.save_vocab(prepared.vocab, vocab_path)

    spec = model.ModelSpec.from_config(cfg, prepared.selection.kept_count)
    params = model.init_model_params(spec, prepared.vocab.vocab_size, cfg.seed)
    pretrain_curve_path = _maybe_mae_pretrain(cfg, prepared, params, spec, run_dir)

    state = AdamState(lr=cfg.lr)
    dropout_rng = SeededRng(cfg.seed).derive("dropout")
    checkpoint_path = run_dir / "checkpoint.bin"
    best_val = float("inf")
    saved_best = False
    curve_rows = ["epoch,stage,train_loss,val_rmse"]

    for epoch in range(cfg.epochs):
        stage = 1 if epoch < cfg.stage1_epochs else 2
        names = model.trainable_names(params, stage, cfg.freeze_prefixes())
        trainable = {n: params[n] for n in names}
        order = list(range(len(prepared.train)))
        SeededRng(cfg.seed).derive(f"shuffle{epoch}").shuffle(order)

        sq_sum = 0.0
        for start in range(0, len(order), cfg.batch_size):
            batch = order[start : start + cfg.batch_size]
            for p in trainable.values():
                p.zero_grad()
            for idx in batch:
                w = prepared.train[idx]
                target = w.label / cfg.rul_cap
                with Tape() as tape:
                    if stage == 1:
                        raw = model.stage1_forward(w.values, params, spec)
                    else:
                        raw = model.full_forward(
                            w.values,
                            prepared.image_for(w),
                            w.seq,
                            params,
                            spec,
                            rng=dropout_rng,
                            training=True,
                        )
                    diff = sadd(raw, -target)
                    loss = smul(mul(diff, diff), 1.0 / len(batch))
                if not np.isfinite(loss.item()):
                    raise NumericError(
                        f"non-finite loss at epoch {epoch}, window index {idx}"
                    )
                tape.backward(loss)
                sq_sum += (raw.item() - target) ** 2
            adam_step(trainable, {n: p.grad for n, p in trainable.items()}, state)

        train_loss = sq_sum / max(1, len(order))
        val_rmse = _windows_rmse(prepared.val, prepared, params, spec, stage)
        curve_rows.append(f"{epoch},{stage},{train_loss!r},{val_rmse!r}")
        logger.info(
            "epoch %d stage %d: train_loss %.6f val_rmse %.3f",
            epoch,
            stage,
            train_loss,
            val_rmse,
        )
        if stage == 2 and val_rmse < best_val:
            best_val = val_rmse
            save_params(params, checkpoint_path)
            saved_best = True

    if not saved_best:
        save_params(params, checkpoint_path)
    curve_path = run_dir / "curve.csv"
    curve_path.write_text("\n".join(curve_rows) + "\n")
    return RunArtifacts(
        run_dir=run_dir,
        config_path=run_dir / "config.txt",
        manifest_path=manifest_path,
        vocab_path=vocab_path,
        checkpoint_path=checkpoint_path,
        curve_path=curve_path,
        pretrain_curve_path=pretrain_curve_path,
    )


def load_checkpoint_into(
    params: dict[str, Tensor], checkpoint_path: Path
) -> None:
    """Strict load: every parameter present with the exact shape."""
    loaded = load_params(checkpoint_path)
    for name, p in params.items():
        if name not in loaded:
            raise ParseError(f"checkpoint missing parameter {name!r}")
        if loaded[name].shape != p.data.shape:
            raise ParseError(
                f"checkpoint parameter {name!r} has shape {loaded[name].shape}, "
                f"model expects {p.data.shape}"
            )
        p.data = loaded[name]
    extra = sorted(set(loaded) - set(params))
    if extra:
        raise ParseError(f"checkpoint has unknown parameter {extra[0]!r}")


def evaluate(
    cfg: TrainConfig,
    checkpoint_path: Path,
    prepared: Optional[PreparedData] = None,
    out_dir: Optional[Path] = None,
) -> tuple[metrics.MetricsReport, RunArtifacts]:
    if prepared is None:
        prepared = prepare_data(cfg)
    out_dir = Path(out_dir) if out_dir else Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    spec = model.ModelSpec.from_config(cfg, prepared.selection.kept_count)
    params = model.init_model_params(spec, prepared.vocab.vocab_size, cfg.seed)
    load_checkpoint_into(params, checkpoint_path)
    report = evaluate_params(prepared, params, spec)
    metrics_path = out_dir / "metrics.json"
    report.save(metrics_path)
    predictions_path = out_dir / "predictions.csv"
    write_predictions_csv(report, predictions_path)
    artifacts = RunArtifacts(
        run_dir=out_dir,
        config_path=out_dir / "config.txt",
        manifest_path=out_dir / "manifest.json",
        vocab_path=out_dir / "vocab.txt",
        checkpoint_path=checkpoint_path,
        curve_path=out_dir / "curve.csv",
        metrics_path=metrics_path,
        predictions_path=predictions_path,
    )
    return report, artifacts


def train_and_evaluate(cfg: TrainConfig) -> tuple[metrics.MetricsReport, RunArtifacts]:
    prepared = prepare_data(cfg)
    artifacts = train(cfg, prepared)
    report, eval_artifacts = evaluate(
        cfg, artifacts.checkpoint_path, prepared, Path(cfg.out_dir)
    )
    artifacts.metrics_path = eval_artifacts.metrics_path
    artifacts.predictions_path = eval_artifacts.predictions_path
    return report, artifacts


# ---------------------------------------------------------------------------
# Sweeps
# ---------------------------------------------------------------------------

FEWSHOT_RATIOS = (0.05, 0.10, 0.20, 0.50, 1.0)
ENCODER_VARIANTS = ("cnn", "vit", "vit_mae")


def fewshot_sweep(
    cfg: TrainConfig, ratios: Sequence[float] = FEWSHOT_RATIOS
) -> list[dict]:
    """One full train+evaluate per training ratio, shared seed."""
    rows = []
    for ratio in ratios:
        sub = replace(
            cfg,
            fewshot_ratio=ratio,
            out_dir=str(Path(cfg.out_dir) / f"ratio_{int(round(ratio * 100)):03d}"),
        )
        report, _ = train_and_evaluate(sub)
        rows.append(
            {
                "ratio": ratio,
                "rmse": report.rmse,
                "score": report.score,
                "mae": report.mae,
                "mape": report.mape,
            }
        )
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    lines = ["ratio,score,mae,mape,rmse"]
    lines += [
        f"{r['ratio']!r},{r['score']!r},{r['mae']!r},{r['mape']!r},{r['rmse']!r}"
        for r in rows
    ]
    (out / "fewshot.csv").write_text("\n".join(lines) + "\n")
    return rows


def ablate_encoder(
    cfg: TrainConfig, variants: Sequence[str] = ENCODER_VARIANTS
) -> list[dict]:
    """Same seed and data for every visual-encoder variant."""
    rows = []
    for variant in variants:
        sub = replace(
            cfg,
            encoder_variant=variant,
            out_dir=str(Path(cfg.out_dir) / f"ablate_{variant}"),
        )
        report, artifacts = train_and_evaluate(sub)
        rows.append(
            {
                "variant": variant,
                "rmse": report.rmse,
                "score": report.score,
                "pretrained": artifacts.pretrain_curve_path is not None,
            }
        )
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    lines = ["variant,rmse,score"]
    lines += [f"{r['variant']},{r['rmse']!r},{r['score']!r}" for r in rows]
    (out / "ablation.csv").write_text("\n".join(lines) + "\n")
    return rows


# ---------------------------------------------------------------------------
# Embedding / attention export
# ---------------------------------------------------------------------------


def export_embeddings(
    cfg: TrainConfig,
    checkpoint_path: Path,
    out_dir: Path,
    split: str = "test",
    prepared: Optional[PreparedData] = None,
) -> tuple[Path, Path]:
    """Per-window pooled temporal features and LM context vectors as CSV."""
    if prepared is None:
        prepared = prepare_data(cfg)
    spec = model.ModelSpec.from_config(cfg, prepared.selection.kept_count)
    params = model.init_model_params(spec, prepared.vocab.vocab_size, cfg.seed)
    load_checkpoint_into(params, checkpoint_path)
    windows = {"train": prepared.train, "val": prepared.val, "test": prepared.test}[split]
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ts_lines = ["unit_id,end_cycle," + ",".join(f"f{i}" for i in range(spec.patch.d_model))]
    llm_lines = ["unit_id,end_cycle," + ",".join(f"f{i}" for i in range(spec.text_dim))]
    for w in windows:
        extras = model.ForwardExtras()
        model.full_forward(
            w.values, prepared.image_for(w), w.seq, params, spec, extras=extras
        )
        ts_lines.append(
            f"{w.unit_id},{w.end_cycle}," + ",".join(repr(v) for v in extras.f_ts_pooled)
        )
        llm_lines.append(
            f"{w.unit_id},{w.end_cycle}," + ",".join(repr(v) for v in extras.llm_pooled)
        )
    ts_path = out_dir / f"embeddings_temporal_{split}.csv"
    llm_path = out_dir / f"embeddings_context_{split}.csv"
    ts_path.write_text("\n".join(ts_lines) + "\n")
    llm_path.write_text("\n".join(llm_lines) + "\n")
    return ts_path, llm_path


def export_attention(
    cfg: TrainConfig,
    checkpoint_path: Path,
    out_dir: Path,
    limit: int = 8,
    prepared: Optional[PreparedData] = None,
) -> list[Path]:
    """Fusion attention matrices for the first test windows, one CSV each."""
    if prepared is None:
        prepared = prepare_data(cfg)
    spec = model.ModelSpec.from_config(cfg, prepared.selection.kept_count)
    params = model.init_model_params(spec, prepared.vocab.vocab_size, cfg.seed)
    load_checkpoint_into(params, checkpoint_path)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for w in prepared.test[:limit]:
        extras = model.ForwardExtras()
        model.full_forward(
            w.values, prepared.image_for(w), w.seq, params, spec, extras=extras
        )
        path = out_dir / f"attention_u{w.unit_id}_c{w.end_cycle}.csv"
        path.write_text(
            "\n".join(",".join(repr(v) for v in row) for row in extras.attention) + "\n"
        )
        paths.append(path)
    return paths
