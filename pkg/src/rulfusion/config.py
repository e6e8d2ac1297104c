"""Flat key=value run configuration.

Every key has a documented default; files contain ``key = value`` lines with
``#`` comments.  Snapshots are re-parseable and byte-stable (sorted keys), so
a run directory always records exactly what produced it.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from pathlib import Path
from typing import Union

from .errors import ConfigError
from .fusion import FusionConfig
from .spectral import CWTConfig, RPConfig, STFTConfig, config_hash_for
from .temporal import PatchConfig
from .vision_language import MAEConfig, MiniLMConfig, VisionConfig


@dataclass
class TrainConfig:
    # data
    dataset: str = "FD001"
    data_dir: str = "data"
    out_dir: str = "runs/default"
    window_len: int = 40
    rul_cap: float = 125.0
    fewshot_ratio: float = 1.0
    val_fraction: float = 0.10
    # optimization
    batch_size: int = 128
    lr: float = 0.002
    epochs: int = 30
    stage1_epochs: int = 10
    seed: int = 42
    freeze: str = ""  # comma-separated parameter-name prefixes
    single_thread: bool = True
    # temporal branch
    patch_len: int = 4
    patch_stride: int = 1
    d_model: int = 64
    temporal_heads: int = 1
    temporal_blocks: int = 2
    # spectral views
    rp_embed_dim: int = 2
    rp_delay: int = 1
    rp_quantile: float = 0.10
    stft_win: int = 16
    stft_hop: int = 2
    cwt_scales: int = 32
    cwt_omega0: float = 6.0
    image_size: int = 114
    # vision encoder
    encoder_variant: str = "vit_mae"
    image_patch: int = 6
    d_vis: int = 128
    vision_depth: int = 2
    vision_heads: int = 4
    mae_mask_ratio: float = 0.75
    mae_steps: int = 200
    mae_batch: int = 8
    mae_images: int = 32
    # text branch
    text_dim: int = 96
    max_token_len: int = 512
    bpe_merges: int = 512
    prompt_template_version: int = 1
    # language model
    lm_depth: int = 2
    lm_heads: int = 2
    lm_causal: bool = False
    # fusion
    fusion_mode: str = "broadcast_global"
    fusion_key_dim: int = 64
    fusion_value_dim: int = 32
    fusion_fused_dim: int = 64
    fusion_mlp_hidden: int = 512
    fusion_dropout: float = 0.5
    fusion_residual: bool = False

    def __post_init__(self):
        if self.stage1_epochs >= self.epochs:
            raise ConfigError(
                f"stage1_epochs {self.stage1_epochs} must be < epochs {self.epochs}"
            )
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.dataset not in ("FD001", "FD002", "FD003", "FD004"):
            raise ConfigError(f"unknown dataset {self.dataset!r}")

    # Sub-config builders -----------------------------------------------

    def patch_config(self, n_channels: int = 14) -> PatchConfig:
        return PatchConfig(
            window_len=self.window_len,
            n_channels=n_channels,
            patch_len=self.patch_len,
            stride=self.patch_stride,
            d_model=self.d_model,
            n_heads=self.temporal_heads,
            n_blocks=self.temporal_blocks,
        )

    def rp_config(self) -> RPConfig:
        return RPConfig(
            embed_dim=self.rp_embed_dim,
            delay=self.rp_delay,
            epsilon_quantile=self.rp_quantile,
        )

    def stft_config(self) -> STFTConfig:
        return STFTConfig(win_len=self.stft_win, hop=self.stft_hop)

    def cwt_config(self) -> CWTConfig:
        return CWTConfig(
            omega0=self.cwt_omega0,
            n_scales=self.cwt_scales,
            min_period=2.0,
            max_period=float(self.window_len),
        )

    def vision_config(self) -> VisionConfig:
        return VisionConfig(
            variant=self.encoder_variant,
            image_size=self.image_size,
            image_patch=self.image_patch,
            d_vis=self.d_vis,
            depth=self.vision_depth,
            n_heads=self.vision_heads,
        )

    def mae_config(self) -> MAEConfig:
        return MAEConfig(mask_ratio=self.mae_mask_ratio)

    def lm_config(self) -> MiniLMConfig:
        return MiniLMConfig(
            width=self.text_dim,
            depth=self.lm_depth,
            n_heads=self.lm_heads,
            causal=self.lm_causal,
            max_seq=1 + self.max_token_len,
        )

    def fusion_config(self) -> FusionConfig:
        return FusionConfig(
            d_temporal=self.d_model,
            d_context=self.text_dim,
            d_key=self.fusion_key_dim,
            d_value=self.fusion_value_dim,
            d_fused=self.fusion_fused_dim,
            mlp_hidden=self.fusion_mlp_hidden,
            dropout_rate=self.fusion_dropout,
            mode=self.fusion_mode,
            residual=self.fusion_residual,
            rul_cap=self.rul_cap,
        )

    def freeze_prefixes(self) -> tuple[str, ...]:
        return tuple(p.strip() for p in self.freeze.split(",") if p.strip())

    def preprocess_hash(self) -> str:
        """Hash over every knob that shapes model inputs (cache key)."""
        keys = (
            self.dataset,
            self.window_len,
            self.rul_cap,
            self.rp_embed_dim,
            self.rp_delay,
            self.rp_quantile,
            self.stft_win,
            self.stft_hop,
            self.cwt_scales,
            self.cwt_omega0,
            self.image_size,
            self.fewshot_ratio,
            self.seed,
        )
        return config_hash_for(*[str(k) for k in keys])


_BOOL_TRUE = {"1", "true", "yes", "on"}
_BOOL_FALSE = {"0", "false", "no", "off"}


def _coerce(raw: str, target_type: type):
    if target_type is bool:
        low = raw.lower()
        if low in _BOOL_TRUE:
            return True
        if low in _BOOL_FALSE:
            return False
        raise ConfigError(f"expected a boolean, got {raw!r}")
    return target_type(raw)


def apply_overrides(cfg: TrainConfig, overrides: dict[str, str]) -> TrainConfig:
    by_name = {f.name: f for f in fields(TrainConfig)}
    values = {f.name: getattr(cfg, f.name) for f in fields(TrainConfig)}
    for key, raw in overrides.items():
        f = by_name.get(key)
        if f is None:
            raise ConfigError(f"unknown config key {key!r}")
        try:
            values[key] = _coerce(raw, f.type if isinstance(f.type, type) else type(values[key]))
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad value for {key}: {raw!r} ({exc})") from None
    return TrainConfig(**values)


def load_config(path: Union[str, Path]) -> TrainConfig:
    overrides: dict[str, str] = {}
    for line_no, line in enumerate(Path(path).read_text().splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"{path}:{line_no}: expected key = value")
        key, raw = stripped.split("=", 1)
        overrides[key.strip()] = raw.strip()
    return apply_overrides(TrainConfig(), overrides)


def save_config(cfg: TrainConfig, path: Union[str, Path]) -> None:
    lines = [
        f"{f.name} = {getattr(cfg, f.name)}"
        for f in sorted(fields(TrainConfig), key=lambda f: f.name)
    ]
    Path(path).write_text("\n".join(lines) + "\n")
