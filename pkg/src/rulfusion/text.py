"""Domain prompts, byte-pair tokenizer, and text embeddings.

Prompts are rendered from a versioned template filling {dataset_id},
{n_conditions}, {n_fault_modes}, {window_len}, and {sensor_summary} (window
min/mean/max at 3 decimals), so identical windows always produce identical
bytes.

The tokenizer is byte-level BPE trained on the generated prompt corpus.
Pair statistics are collected within whitespace-delimited chunks (runs of
spaces form their own chunks); merges never span a chunk boundary.  Ties in
pair frequency break to the lexicographically smallest (left, right) byte
pair.  Encoding applies merges in learned order, which reproduces the
training-time segmentation exactly; byte fallback means every string is
tokenizable.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Union

import numpy as np

from .cmapss import DatasetMeta, WindowSample
from .errors import ConfigError, ContractError
from .numkit import SeededRng, Tensor, add, take_rows

PAD_ID = 0
UNK_ID = 1
BOS_ID = 2
N_SPECIAL = 3
MAX_TOKEN_LEN = 512
TEXT_DIM = 96

PROMPT_TEMPLATE_V1 = (
    "Turbofan fleet record from dataset {dataset_id}. "
    "The fleet operates under {n_conditions} operating condition(s) "
    "and degrades through {n_fault_modes} fault mode(s). "
    "This window covers {window_len} consecutive cycles of the selected sensors. "
    "Normalized sensor summary: {sensor_summary}."
)

_CHUNK_RE = re.compile(rb"\s+|\S+")


def build_prompt(
    meta: DatasetMeta,
    window: WindowSample,
    window_len: int,
    template: str = PROMPT_TEMPLATE_V1,
) -> str:
    """Deterministic knowledge prompt for one window."""
    values = window.values
    summary = (
        f"min {values.min():.3f}, mean {values.mean():.3f}, max {values.max():.3f}"
    )
    try:
        text = template.format(
            dataset_id=meta.dataset_id,
            n_conditions=meta.n_conditions,
            n_fault_modes=meta.n_fault_modes,
            window_len=window_len,
            sensor_summary=summary,
        )
    except (KeyError, IndexError) as exc:
        raise ConfigError(f"prompt template references unknown slot: {exc}") from None
    if not text:
        raise ConfigError("prompt template rendered empty text")
    return text


# ---------------------------------------------------------------------------
# Byte-pair encoding
# ---------------------------------------------------------------------------


@dataclass
class BpeVocab:
    """Byte-level vocabulary: 3 specials, 256 byte symbols, learned merges."""

    merges: list[tuple[bytes, bytes]] = field(default_factory=list)

    @property
    def vocab_size(self) -> int:
        return N_SPECIAL + 256 + len(self.merges)

    def id_of(self, symbol: bytes) -> int:
        if len(symbol) == 1:
            return N_SPECIAL + symbol[0]
        return N_SPECIAL + 256 + self._merge_index[symbol]

    def bytes_of(self, token_id: int) -> bytes:
        if token_id < N_SPECIAL:
            raise ContractError(f"token id {token_id} is a special token")
        if token_id < N_SPECIAL + 256:
            return bytes([token_id - N_SPECIAL])
        return self._merged_symbols[token_id - N_SPECIAL - 256]

    def __post_init__(self):
        self._merged_symbols = [left + right for left, right in self.merges]
        self._merge_index = {sym: i for i, sym in enumerate(self._merged_symbols)}


def _chunk(text: bytes) -> list[bytes]:
    return _CHUNK_RE.findall(text)


def _pair_counts(chunk_freqs: dict[tuple[bytes, ...], int]) -> dict[tuple[bytes, bytes], int]:
    counts: dict[tuple[bytes, bytes], int] = {}
    for symbols, freq in chunk_freqs.items():
        for pair in zip(symbols, symbols[1:]):
            counts[pair] = counts.get(pair, 0) + freq
    return counts


def _merge_symbols(
    symbols: tuple[bytes, ...], pair: tuple[bytes, bytes]
) -> tuple[bytes, ...]:
    merged: list[bytes] = []
    i = 0
    while i < len(symbols):
        if i + 1 < len(symbols) and (symbols[i], symbols[i + 1]) == pair:
            merged.append(symbols[i] + symbols[i + 1])
            i += 2
        else:
            merged.append(symbols[i])
            i += 1
    return tuple(merged)


def train_bpe(corpus: list[str], target_merges: int) -> BpeVocab:
    """Greedy highest-frequency pair merging with lexicographic tie-break.

    Stops early once no pair occurs at least twice (a count-1 merge never
    compresses anything), so the learned merge count is <= target_merges.
    """
    if not corpus:
        raise ConfigError("train_bpe needs a non-empty corpus")
    if target_merges < 0:
        raise ConfigError(f"target_merges must be >= 0, got {target_merges}")
    chunk_freqs: dict[tuple[bytes, ...], int] = {}
    for text in corpus:
        for chunk in _chunk(text.encode("utf-8")):
            key = tuple(bytes([b]) for b in chunk)
            chunk_freqs[key] = chunk_freqs.get(key, 0) + 1

    merges: list[tuple[bytes, bytes]] = []
    for _ in range(target_merges):
        counts = _pair_counts(chunk_freqs)
        if not counts:
            break
        best_count = max(counts.values())
        if best_count < 2:
            break
        best_pair = min(p for p, c in counts.items() if c == best_count)
        merges.append(best_pair)
        chunk_freqs = {
            _merge_symbols(symbols, best_pair): freq
            for symbols, freq in chunk_freqs.items()
        }
    return BpeVocab(merges=merges)


def encode_text(text: str, vocab: BpeVocab) -> list[int]:
    """Apply merges in learned order within each chunk; byte fallback covers all."""
    ids: list[int] = []
    cache: dict[bytes, list[int]] = {}
    for chunk in _chunk(text.encode("utf-8")):
        cached = cache.get(chunk)
        if cached is None:
            symbols: tuple[bytes, ...] = tuple(bytes([b]) for b in chunk)
            for pair in vocab.merges:
                if len(symbols) < 2:
                    break
                symbols = _merge_symbols(symbols, pair)
            cached = [vocab.id_of(s) for s in symbols]
            cache[chunk] = cached
        ids.extend(cached)
    return ids


@dataclass(frozen=True)
class TokenSequence:
    ids: tuple[int, ...]  # exactly max_len entries
    length: int  # real token count (incl. bos) before truncation
    max_len: int

    @property
    def n_valid(self) -> int:
        return min(self.length, self.max_len)

    def mask(self) -> np.ndarray:
        m = np.zeros(self.max_len, dtype=bool)
        m[: self.n_valid] = True
        return m


def tokenize(text: str, vocab: BpeVocab, max_len: int = MAX_TOKEN_LEN) -> TokenSequence:
    """bos + content ids, right-padded or truncated to max_len.

    Empty text is the degenerate all-pad sequence with recorded length 0.
    """
    if max_len < 1:
        raise ConfigError(f"max_len must be >= 1, got {max_len}")
    if not text:
        return TokenSequence(ids=(PAD_ID,) * max_len, length=0, max_len=max_len)
    real = [BOS_ID] + encode_text(text, vocab)
    clipped = real[:max_len]
    padded = clipped + [PAD_ID] * (max_len - len(clipped))
    return TokenSequence(ids=tuple(padded), length=len(real), max_len=max_len)


def detokenize(ids, vocab: BpeVocab) -> str:
    chunks = []
    for token_id in ids:
        if token_id in (PAD_ID, BOS_ID):
            continue
        if token_id == UNK_ID:
            raise ContractError("unk token cannot be detokenized")
        chunks.append(vocab.bytes_of(int(token_id)))
    return b"".join(chunks).decode("utf-8", errors="replace")


def save_vocab(vocab: BpeVocab, path: Union[str, Path]) -> None:
    """Merge list, one hex-encoded pair per line, after a special-token header."""
    lines = [f"#special pad={PAD_ID} unk={UNK_ID} bos={BOS_ID}"]
    lines += [f"{left.hex()} {right.hex()}" for left, right in vocab.merges]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_vocab(path: Union[str, Path]) -> BpeVocab:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines or not lines[0].startswith("#special"):
        raise ConfigError(f"{path}: missing special-token header")
    merges = []
    for line in lines[1:]:
        if not line.strip():
            continue
        left_hex, right_hex = line.split()
        merges.append((bytes.fromhex(left_hex), bytes.fromhex(right_hex)))
    return BpeVocab(merges=merges)


# ---------------------------------------------------------------------------
# Embedding
# ---------------------------------------------------------------------------


def init_text_embedding(
    vocab_size: int,
    rng: SeededRng,
    d: int = TEXT_DIM,
    max_len: int = MAX_TOKEN_LEN,
    prefix: str = "textemb",
) -> dict[str, Tensor]:
    return {
        f"{prefix}.w_c": Tensor(
            rng.normal_array((vocab_size, d), std=0.02),
            requires_grad=True,
            name=f"{prefix}.w_c",
        ),
        f"{prefix}.w_pos": Tensor(
            rng.normal_array((max_len, d), std=0.02),
            requires_grad=True,
            name=f"{prefix}.w_pos",
        ),
    }


def embed_tokens(
    seq: TokenSequence, params: dict[str, Tensor], prefix: str = "textemb"
) -> tuple[Tensor, np.ndarray]:
    """Lookup plus positional table; returns (L_text x d features, pad mask)."""
    w_c = params[f"{prefix}.w_c"]
    w_pos = params[f"{prefix}.w_pos"]
    if seq.max_len != w_pos.shape[0]:
        raise ContractError(
            f"sequence length {seq.max_len} != positional table {w_pos.shape[0]}"
        )
    ids = np.asarray(seq.ids, dtype=np.int64)
    features = add(take_rows(w_c, ids), w_pos)
    return features, seq.mask()
