"""Full-model parameter construction and per-window forward passes.

Parameter names are prefixed by group (temporal., s1head., vision.,
projector., lm., textemb., tmaf., head., maedec.) so checkpoints, freeze
lists, and the stage-1/stage-2 schedule can address groups by name.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import blocks, fusion, temporal, text, vision_language
from .config import TrainConfig
from .numkit import SeededRng, Tensor, mean_rows, reshape

STAGE1_PREFIXES = ("temporal.", "s1head.")
PRETRAIN_ONLY_PREFIXES = ("s1head.", "maedec.")


@dataclass
class ModelSpec:
    """The sub-configs one run derives from its TrainConfig."""

    patch: temporal.PatchConfig
    vision: vision_language.VisionConfig
    mae: vision_language.MAEConfig
    lm: vision_language.MiniLMConfig
    fusion: fusion.FusionConfig
    text_dim: int
    max_token_len: int

    @classmethod
    def from_config(cls, cfg: TrainConfig, n_channels: int = 14) -> "ModelSpec":
        return cls(
            patch=cfg.patch_config(n_channels),
            vision=cfg.vision_config(),
            mae=cfg.mae_config(),
            lm=cfg.lm_config(),
            fusion=cfg.fusion_config(),
            text_dim=cfg.text_dim,
            max_token_len=cfg.max_token_len,
        )


def init_model_params(spec: ModelSpec, vocab_size: int, seed: int) -> dict[str, Tensor]:
    """All learnable groups, initialised from one derived stream in fixed order."""
    rng = SeededRng(seed).derive("init")
    params: dict[str, Tensor] = {}
    params.update(temporal.init_params(spec.patch, rng))
    blocks.init_linear(params, "s1head", spec.patch.d_model, 1, rng)
    params.update(vision_language.init_vision_params(spec.vision, rng))
    params.update(
        vision_language.init_projector(spec.vision.d_vis, spec.text_dim, rng)
    )
    params.update(vision_language.init_lm_params(spec.lm, rng))
    params.update(
        text.init_text_embedding(
            vocab_size, rng, d=spec.text_dim, max_len=spec.max_token_len
        )
    )
    params.update(fusion.init_fusion_params(spec.fusion, rng))
    if spec.vision.variant == "vit_mae":
        params.update(vision_language.init_mae_params(spec.vision, spec.mae, rng))
    return params


def stage1_forward(
    window: np.ndarray, params: dict[str, Tensor], spec: ModelSpec
) -> Tensor:
    """Temporal branch plus the temporary scalar head (normalized target scale)."""
    f_ts = temporal.forward(window, params, spec.patch)
    pooled = reshape(mean_rows(f_ts), (1, spec.patch.d_model))
    return reshape(blocks.linear(pooled, params, "s1head"), ())


@dataclass
class ForwardExtras:
    f_ts_pooled: Optional[np.ndarray] = None
    llm_pooled: Optional[np.ndarray] = None
    attention: Optional[np.ndarray] = None
    lm_attention: list[np.ndarray] = field(default_factory=list)


def full_forward(
    window: np.ndarray,
    image: np.ndarray,
    seq: text.TokenSequence,
    params: dict[str, Tensor],
    spec: ModelSpec,
    rng: Optional[SeededRng] = None,
    training: bool = False,
    extras: Optional[ForwardExtras] = None,
) -> Tensor:
    """Whole pipeline for one window; returns the raw normalized prediction."""
    f_ts = temporal.forward(window, params, spec.patch)
    h_vis = vision_language.encode_image(image, params, spec.vision)
    e_vis = vision_language.project(h_vis, params)
    f_text, mask = text.embed_tokens(seq, params)
    sink = extras.lm_attention if extras is not None else None
    fused = vision_language.fuse_llm(e_vis, f_text, mask, params, spec.lm, attn_sink=sink)
    if spec.fusion.mode == "broadcast_global":
        context = fused.pooled
    else:
        context = fused.tokens
    q, k, v = fusion.project_qkv(f_ts, context, params, spec.fusion)
    f_attn, weights = fusion.attention(q, k, v)
    raw = fusion.fuse_and_predict(
        f_ts, f_attn, params, spec.fusion, rng=rng, training=training
    )
    if extras is not None:
        extras.f_ts_pooled = f_ts.data.mean(axis=0).copy()
        extras.llm_pooled = fused.pooled.data.copy()
        extras.attention = weights.data.copy()
    return raw


def trainable_names(
    params: dict[str, Tensor], stage: int, freeze_prefixes: tuple[str, ...]
) -> list[str]:
    """Which parameters receive optimizer updates in a given stage."""
    names = []
    for name in params:
        if stage == 1:
            if name.startswith(STAGE1_PREFIXES):
                names.append(name)
            continue
        if name.startswith(PRETRAIN_ONLY_PREFIXES):
            continue
        if any(name.startswith(p) for p in freeze_prefixes):
            continue
        names.append(name)
    return names
