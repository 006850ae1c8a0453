"""Caption generator on top of frozen stage-1 features.

Per-frame cause/effect feature sequences pass through two independent
two-layer transformer encoders; their outputs are concatenated cause-first
and a two-layer decoder (causal self-attention + cross-attention over the
concatenation) emits the combined caption token by token.

Single-stream wirings (decoder attending to one stream only) exist for the
ablation variants; the dual-stream path is the default.
"""
from __future__ import annotations

import warnings
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import NamedTuple, Sequence

import torch
from torch import nn

from .stage1 import RoleEncoderPair
from .text import Vocabulary
from .video import MAX_FRAMES, FrameSequence

LOG_EPS = 1e-9


class EmptyStreamError(ValueError):
    pass


@dataclass
class StageTwoConfig:
    vocab_size: int
    feature_dim: int  # stage-1 embedding dim
    d_model: int = 512
    n_heads: int = 8
    max_len: int = 40  # caption tokens including BOS/EOS
    streams: str = "both"  # both | cause | effect

    def __post_init__(self) -> None:
        if self.streams not in ("both", "cause", "effect"):
            raise ValueError(f"unknown streams setting {self.streams!r}")


def toy_stage2_config(vocab_size: int, feature_dim: int = 16, **overrides) -> StageTwoConfig:
    defaults = dict(d_model=32, n_heads=4, max_len=24)
    defaults.update(overrides)
    return StageTwoConfig(vocab_size=vocab_size, feature_dim=feature_dim, **defaults)


@dataclass
class StageTwoState:
    F_cause: torch.Tensor | None
    F_effect: torch.Tensor | None
    h_cause: torch.Tensor | None
    h_effect: torch.Tensor | None
    h_concat: torch.Tensor


def extract_features(
    frames: FrameSequence,
    cause_enc: RoleEncoderPair,
    effect_enc: RoleEncoderPair,
    strict_roles: bool = True,
) -> tuple[torch.Tensor, torch.Tensor]:
    """Per-frame features from both frozen encoders on the same frame sequence.

    strict_roles=False admits the ablation wirings that feed one encoder into
    both slots.
    """
    from .stage1 import RoleMismatchError

    if strict_roles:
        if cause_enc.role != "cause":
            raise RoleMismatchError(f"{cause_enc.role!r} checkpoint in cause slot")
        if effect_enc.role != "effect":
            raise RoleMismatchError(f"{effect_enc.role!r} checkpoint in effect slot")
    with torch.no_grad():
        f_cause = cause_enc.frame_features(frames)
        f_effect = effect_enc.frame_features(frames)
    return f_cause, f_effect


class StreamEncoder(nn.Module):
    """Input projection + positional embedding + 2 transformer layers."""

    def __init__(self, cfg: StageTwoConfig):
        super().__init__()
        self.proj = nn.Linear(cfg.feature_dim, cfg.d_model)
        self.pos_embed = nn.Parameter(torch.empty(1, MAX_FRAMES, cfg.d_model))
        nn.init.normal_(self.pos_embed, std=0.02)
        layer = nn.TransformerEncoderLayer(
            d_model=cfg.d_model,
            nhead=cfg.n_heads,
            dim_feedforward=cfg.d_model * 4,
            dropout=0.0,
            activation="gelu",
            batch_first=True,
            norm_first=True,
        )
        self.blocks = nn.TransformerEncoder(layer, num_layers=2, enable_nested_tensor=False)

    def forward(self, features: torch.Tensor) -> torch.Tensor:
        """(n_frames, feature_dim) -> (n_frames, d_model)."""
        if features.ndim != 2 or features.shape[0] == 0:
            raise EmptyStreamError("stream features must be a non-empty 2-D sequence")
        x = self.proj(features).unsqueeze(0)
        x = x + self.pos_embed[:, : x.shape[1]]
        return self.blocks(x).squeeze(0)


class CaptionModel(nn.Module):
    def __init__(self, cfg: StageTwoConfig, vocab: Vocabulary):
        super().__init__()
        if cfg.vocab_size != len(vocab):
            raise ValueError("config vocab_size disagrees with vocabulary")
        self.cfg = cfg
        self.vocab = vocab
        self.enc_cause = StreamEncoder(cfg) if cfg.streams in ("both", "cause") else None
        self.enc_effect = StreamEncoder(cfg) if cfg.streams in ("both", "effect") else None
        self.token_embed = nn.Embedding(cfg.vocab_size, cfg.d_model)
        self.tok_pos_embed = nn.Parameter(torch.empty(1, cfg.max_len, cfg.d_model))
        nn.init.normal_(self.tok_pos_embed, std=0.02)
        layer = nn.TransformerDecoderLayer(
            d_model=cfg.d_model,
            nhead=cfg.n_heads,
            dim_feedforward=cfg.d_model * 4,
            dropout=0.0,
            activation="gelu",
            batch_first=True,
            norm_first=True,
        )
        self.decoder = nn.TransformerDecoder(layer, num_layers=2)
        self.lm_head = nn.Linear(cfg.d_model, cfg.vocab_size)

    def encode_streams(
        self, F_cause: torch.Tensor | None, F_effect: torch.Tensor | None
    ) -> StageTwoState:
        """Run the per-role encoders and concatenate cause-first."""
        h_cause = h_effect = None
        if self.enc_cause is not None:
            if F_cause is None or F_cause.shape[0] == 0:
                raise EmptyStreamError("cause stream is empty")
            h_cause = self.enc_cause(F_cause)
        if self.enc_effect is not None:
            if F_effect is None or F_effect.shape[0] == 0:
                raise EmptyStreamError("effect stream is empty")
            h_effect = self.enc_effect(F_effect)
        parts = [h for h in (h_cause, h_effect) if h is not None]
        h_concat = torch.cat(parts, dim=0)
        return StageTwoState(F_cause, F_effect, h_cause, h_effect, h_concat)

    def _decode(self, h_concat: torch.Tensor, ids: torch.Tensor) -> torch.Tensor:
        """Teacher-forced logits for every prefix position: (len(ids), |V|)."""
        if ids.numel() == 0:
            raise ValueError("empty prefix")
        if int(ids.max()) >= self.cfg.vocab_size or int(ids.min()) < 0:
            raise ValueError("prefix contains tokens outside vocabulary")
        seq_len = ids.shape[0]
        if seq_len > self.cfg.max_len:
            raise ValueError(f"prefix length {seq_len} exceeds max_len {self.cfg.max_len}")
        x = self.token_embed(ids).unsqueeze(0) + self.tok_pos_embed[:, :seq_len]
        mask = nn.Transformer.generate_square_subsequent_mask(seq_len, device=ids.device)
        out = self.decoder(x, h_concat.unsqueeze(0), tgt_mask=mask)
        return self.lm_head(out.squeeze(0))

    def decode_step(self, h_concat: torch.Tensor, prefix: Sequence[int]) -> torch.Tensor:
        """Next-token distribution given a BOS-led prefix."""
        if not prefix or prefix[0] != self.vocab.bos_id:
            raise ValueError("prefix must begin with BOS")
        if len(prefix) >= self.cfg.max_len:
            raise ValueError("prefix has reached max_len")
        ids = torch.tensor(list(prefix), dtype=torch.long)
        logits = self._decode(h_concat, ids)
        return torch.softmax(logits[-1], dim=-1)


def caption_loss(logits: torch.Tensor, y: torch.Tensor) -> torch.Tensor:
    """Mean over steps of cross-entropy against one-hot targets.

    Callers exclude PAD rows before calling; T is the number of rows given.
    """
    if logits.shape != y.shape:
        raise ValueError(f"shape mismatch: logits {tuple(logits.shape)} vs y {tuple(y.shape)}")
    if logits.shape[0] == 0:
        raise ValueError("no target steps")
    probs = torch.softmax(logits, dim=-1)
    target_probs = (probs * y).sum(dim=-1)
    if bool((target_probs < LOG_EPS).any()):
        warnings.warn("target probability underflow, log clamped", RuntimeWarning)
    return -(y * torch.log(probs + LOG_EPS)).sum() / logits.shape[0]


def sequence_loss(model: CaptionModel, h_concat: torch.Tensor, target_ids: torch.Tensor) -> torch.Tensor:
    """Teacher-forced caption loss for one [BOS, ..., EOS]-framed id sequence."""
    if target_ids.shape[0] < 2:
        raise ValueError("target must hold BOS and at least EOS")
    logits = model._decode(h_concat, target_ids[:-1])
    y = torch.nn.functional.one_hot(target_ids[1:], num_classes=model.cfg.vocab_size).to(logits.dtype)
    return caption_loss(logits, y)


def total_loss(
    l_cause: float | torch.Tensor,
    l_effect: float | torch.Tensor,
    l_caption: float | torch.Tensor,
) -> torch.Tensor:
    """Sum of the three recorded terms; the contrastive two stay constants here."""
    parts = [torch.as_tensor(p, dtype=torch.float64) for p in (l_cause, l_effect, l_caption)]
    for p in parts:
        if not torch.isfinite(p).all():
            raise ValueError("non-finite loss term")
    return parts[0] + parts[1] + parts[2]


class GeneratedCaption(NamedTuple):
    token_ids: list[int]
    tokens: list[str]
    truncated: bool


def generate(
    model: CaptionModel,
    h_concat: torch.Tensor,
    max_len: int | None = None,
    strategy: str = "greedy",
    beam_width: int = 3,
) -> GeneratedCaption:
    """Decode from BOS until EOS or max_len; BOS/EOS excluded from the output."""
    max_len = model.cfg.max_len if max_len is None else max_len
    if max_len < 2:
        raise ValueError("max_len must be >= 2")
    if strategy == "greedy":
        ids = _greedy(model, h_concat, max_len)
    elif strategy == "beam":
        ids = _beam(model, h_concat, max_len, beam_width)
    else:
        raise ValueError(f"unknown strategy {strategy!r}")
    truncated = ids[-1] != model.vocab.eos_id
    content = [i for i in ids[1:] if i != model.vocab.eos_id]
    return GeneratedCaption(content, [model.vocab.tokens[i] for i in content], truncated)


@torch.no_grad()
def _greedy(model: CaptionModel, h_concat: torch.Tensor, max_len: int) -> list[int]:
    ids = [model.vocab.bos_id]
    while len(ids) < max_len:
        dist = model.decode_step(h_concat, ids)
        ids.append(int(dist.argmax()))
        if ids[-1] == model.vocab.eos_id:
            break
    return ids


@torch.no_grad()
def _beam(model: CaptionModel, h_concat: torch.Tensor, max_len: int, width: int) -> list[int]:
    if width < 1:
        raise ValueError("beam width must be >= 1")
    beams: list[tuple[list[int], float]] = [([model.vocab.bos_id], 0.0)]
    finished: list[tuple[list[int], float]] = []
    while beams and len(beams[0][0]) < max_len:
        candidates: list[tuple[list[int], float]] = []
        for ids, score in beams:
            log_dist = torch.log(model.decode_step(h_concat, ids) + LOG_EPS)
            top = torch.topk(log_dist, min(width, log_dist.shape[0]))
            for tok, lp in zip(top.indices.tolist(), top.values.tolist()):
                candidates.append((ids + [tok], score + lp))
        candidates.sort(key=lambda c: c[1], reverse=True)
        beams = []
        for ids, score in candidates[: width * 2]:
            if ids[-1] == model.vocab.eos_id:
                finished.append((ids, score))
            else:
                beams.append((ids, score))
            if len(beams) == width:
                break
        if len(finished) >= width:
            break
    pool = finished or [max(beams, key=lambda c: c[1])]
    return max(pool, key=lambda c: c[1])[0]


@dataclass
class PredictionRecord:
    video_id: str
    caption: str


def write_predictions(records: Sequence[PredictionRecord], path: str | Path) -> None:
    import json

    with Path(path).open("w", encoding="utf-8") as fh:
        for r in records:
            fh.write(json.dumps({"video_id": r.video_id, "caption": r.caption}) + "\n")


def save_caption_model(model: CaptionModel, path: str | Path, step: int = 0) -> None:
    payload = {
        "state_dict": model.state_dict(),
        "config": asdict(model.cfg),
        "vocab_tokens": list(model.vocab.tokens),
        "meta": {"step": step},
    }
    torch.save(payload, str(path))


def load_caption_model(path: str | Path) -> CaptionModel:
    payload = torch.load(str(path), map_location="cpu", weights_only=False)
    cfg = StageTwoConfig(**payload["config"])
    vocab = Vocabulary(payload["vocab_tokens"])
    model = CaptionModel(cfg, vocab)
    model.load_state_dict(payload["state_dict"])
    return model
