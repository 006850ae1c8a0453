"""Dual role-specific video/text encoders with symmetric contrastive alignment.

One RoleEncoderPair holds a per-frame vision transformer and a text
transformer whose end-of-sequence state is the sentence representation.
Video embeddings are mean-pooled over frames; both sides are compared by
cosine similarity and trained with the symmetric cross-entropy pair
(video-to-text and text-to-video).

Paper-scale settings (12-layer/512-wide/8-head text tower) are the
constructor defaults; tests use toy_config() so the suite runs in seconds.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np
import torch
from torch import nn

from .text import Vocabulary
from .video import FrameSequence

ROLES = ("cause", "effect", "combined")

# standard contrastive-pretraining init: exp(log(1/0.07)) ~= 14.3
LOGIT_SCALE_INIT = math.log(1 / 0.07)
LOGIT_SCALE_MAX = 100.0


class RoleMismatchError(ValueError):
    pass


class DegenerateEmbeddingError(ValueError):
    """Zero-norm vector where a direction is required."""


class ResolutionMismatchError(ValueError):
    pass


@dataclass
class EncoderConfig:
    role: str
    vocab_size: int
    embed_dim: int = 512
    image_size: int = 224
    patch_size: int = 32
    vision_width: int = 768
    vision_layers: int = 12
    vision_heads: int = 12
    text_width: int = 512
    text_layers: int = 12
    text_heads: int = 8
    context_length: int = 77

    def __post_init__(self) -> None:
        if self.role not in ROLES:
            raise RoleMismatchError(f"unknown role {self.role!r}")
        if self.image_size % self.patch_size != 0:
            raise ValueError("image_size must be a multiple of patch_size")


def toy_config(role: str, vocab_size: int, embed_dim: int = 16) -> EncoderConfig:
    """Small random-init encoder pair for desk-scale runs and tests."""
    return EncoderConfig(
        role=role,
        vocab_size=vocab_size,
        embed_dim=embed_dim,
        image_size=32,
        patch_size=16,
        vision_width=32,
        vision_layers=2,
        vision_heads=4,
        text_width=32,
        text_layers=2,
        text_heads=4,
        context_length=32,
    )


def _encoder_stack(width: int, layers: int, heads: int) -> nn.TransformerEncoder:
    layer = nn.TransformerEncoderLayer(
        d_model=width,
        nhead=heads,
        dim_feedforward=width * 4,
        dropout=0.0,
        activation="gelu",
        batch_first=True,
        norm_first=True,
    )
    return nn.TransformerEncoder(layer, num_layers=layers, enable_nested_tensor=False)


class VisionTower(nn.Module):
    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        self.image_size = cfg.image_size
        n_patches = (cfg.image_size // cfg.patch_size) ** 2
        self.patch_embed = nn.Conv2d(3, cfg.vision_width, cfg.patch_size, stride=cfg.patch_size)
        self.cls_token = nn.Parameter(torch.zeros(1, 1, cfg.vision_width))
        self.pos_embed = nn.Parameter(torch.empty(1, n_patches + 1, cfg.vision_width))
        nn.init.normal_(self.pos_embed, std=0.02)
        self.blocks = _encoder_stack(cfg.vision_width, cfg.vision_layers, cfg.vision_heads)
        self.ln = nn.LayerNorm(cfg.vision_width)
        self.proj = nn.Linear(cfg.vision_width, cfg.embed_dim, bias=False)

    def forward(self, images: torch.Tensor) -> torch.Tensor:
        """(n, 3, H, W) -> per-image embeddings (n, embed_dim)."""
        x = self.patch_embed(images).flatten(2).transpose(1, 2)
        cls = self.cls_token.expand(x.shape[0], -1, -1)
        x = torch.cat([cls, x], dim=1) + self.pos_embed
        x = self.blocks(x)
        return self.proj(self.ln(x[:, 0]))


class TextTower(nn.Module):
    """Causal transformer; the end-of-sequence state represents the text."""

    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        self.context_length = cfg.context_length
        self.token_embed = nn.Embedding(cfg.vocab_size, cfg.text_width)
        self.pos_embed = nn.Parameter(torch.empty(1, cfg.context_length, cfg.text_width))
        nn.init.normal_(self.pos_embed, std=0.01)
        self.blocks = _encoder_stack(cfg.text_width, cfg.text_layers, cfg.text_heads)
        self.ln = nn.LayerNorm(cfg.text_width)
        self.proj = nn.Linear(cfg.text_width, cfg.embed_dim, bias=False)

    def forward(self, ids: torch.Tensor, eos_index: torch.Tensor) -> torch.Tensor:
        """(n, L) token ids plus the EOS position per row -> (n, embed_dim)."""
        seq_len = ids.shape[1]
        x = self.token_embed(ids) + self.pos_embed[:, :seq_len]
        mask = nn.Transformer.generate_square_subsequent_mask(seq_len, device=ids.device)
        x = self.blocks(x, mask=mask)
        x = self.ln(x)
        picked = x[torch.arange(ids.shape[0], device=ids.device), eos_index]
        return self.proj(picked)


class RoleEncoderPair(nn.Module):
    def __init__(self, cfg: EncoderConfig, vocab: Vocabulary):
        super().__init__()
        if cfg.vocab_size != len(vocab):
            raise ValueError("config vocab_size disagrees with vocabulary")
        self.cfg = cfg
        self.vocab = vocab
        self.role = cfg.role
        self.visual = VisionTower(cfg)
        self.textual = TextTower(cfg)
        self.logit_scale = nn.Parameter(torch.ones([]) * LOGIT_SCALE_INIT)

    @property
    def scale(self) -> torch.Tensor:
        return self.logit_scale.exp().clamp(max=LOGIT_SCALE_MAX)

    def frame_features(self, frames: FrameSequence) -> torch.Tensor:
        """Per-frame (not pooled) embeddings, (n_frames, embed_dim)."""
        return self.visual(frames_to_tensor(frames, self.cfg.image_size))

    def text_ids(self, part: str) -> tuple[torch.Tensor, int, bool]:
        """Token ids with BOS/EOS, the EOS index, and a truncation flag."""
        ids = self.vocab.encode(part)
        if not ids:
            raise ValueError("text tokenizes to zero tokens")
        limit = self.cfg.context_length - 2
        truncated = len(ids) > limit
        ids = [self.vocab.bos_id, *ids[:limit], self.vocab.eos_id]
        return torch.tensor(ids, dtype=torch.long), len(ids) - 1, truncated

    def text_features(self, parts: Sequence[str]) -> tuple[torch.Tensor, bool]:
        """Batched text embeddings (n, embed_dim); flag set if any part was truncated."""
        encoded = [self.text_ids(p) for p in parts]
        max_len = max(len(ids) for ids, _, _ in encoded)
        batch = torch.full((len(encoded), max_len), self.vocab.pad_id, dtype=torch.long)
        eos_idx = torch.zeros(len(encoded), dtype=torch.long)
        any_truncated = False
        for i, (ids, eos, truncated) in enumerate(encoded):
            batch[i, : len(ids)] = ids
            eos_idx[i] = eos
            any_truncated = any_truncated or truncated
        return self.textual(batch, eos_idx), any_truncated


def frames_to_tensor(frames: FrameSequence, image_size: int) -> torch.Tensor:
    arrays = []
    for frame in frames.frames:
        if frame.shape[:2] != (image_size, image_size) or frame.shape[2] != 3:
            raise ResolutionMismatchError(
                f"{frames.video_id}: frame shape {frame.shape}, expected ({image_size}, {image_size}, 3)"
            )
        arrays.append(frame.astype(np.float32) / 255.0)
    stacked = torch.from_numpy(np.stack(arrays))
    return stacked.permute(0, 3, 1, 2)


def resize_frames(frames: FrameSequence, image_size: int) -> FrameSequence:
    import cv2

    resized = [
        cv2.resize(f, (image_size, image_size), interpolation=cv2.INTER_AREA)
        for f in frames.frames
    ]
    return FrameSequence(frames.video_id, resized, list(frames.timestamps_s))


def embed_video(pair: RoleEncoderPair, frames: FrameSequence) -> torch.Tensor:
    """Mean-pool per-frame embeddings, then L2-normalize."""
    pooled = pair.frame_features(frames).mean(dim=0)
    norm = pooled.norm()
    if norm.item() < 1e-12:
        raise DegenerateEmbeddingError(f"{frames.video_id}: pooled embedding has zero norm")
    return pooled / norm


class TextEmbedding(NamedTuple):
    vector: torch.Tensor
    truncated: bool


def embed_text(pair: RoleEncoderPair, part: str) -> TextEmbedding:
    """End-of-sequence representation, L2-normalized; flags over-length input."""
    features, truncated = pair.text_features([part])
    vec = features[0]
    norm = vec.norm()
    if norm.item() < 1e-12:
        raise DegenerateEmbeddingError("text embedding has zero norm")
    return TextEmbedding(vec / norm, truncated)


@dataclass
class EmbeddingBatch:
    video_embeds: torch.Tensor  # (N, d)
    text_embeds: torch.Tensor  # (N, d)

    def __post_init__(self) -> None:
        if self.video_embeds.ndim != 2 or self.text_embeds.ndim != 2:
            raise ValueError("embedding batches must be 2-D")
        if self.video_embeds.shape != self.text_embeds.shape:
            raise ValueError("video/text batches must share shape")
        if self.video_embeds.shape[0] < 1:
            raise ValueError("batch is empty")


def similarity(batch: EmbeddingBatch) -> torch.Tensor:
    """S[i][j] = cosine(video_i, text_j)."""
    v_norm = batch.video_embeds.norm(dim=1, keepdim=True)
    t_norm = batch.text_embeds.norm(dim=1, keepdim=True)
    if (v_norm == 0).any() or (t_norm == 0).any():
        raise DegenerateEmbeddingError("zero-norm row in embedding batch")
    return (batch.video_embeds / v_norm) @ (batch.text_embeds / t_norm).T


class ContrastiveLoss(NamedTuple):
    v2t: torch.Tensor
    t2v: torch.Tensor
    total: torch.Tensor


def contrastive_loss(S: torch.Tensor, scale: float | torch.Tensor = 1.0) -> ContrastiveLoss:
    """Symmetric cross-entropy over a similarity matrix.

    v2t treats row i's diagonal as the positive among all texts; t2v is the
    same computation on the transpose, so transpose duality holds exactly.
    scale=1 reproduces the un-tempered textbook form.
    """
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise ValueError(f"similarity matrix must be square, got {tuple(S.shape)}")
    if isinstance(scale, torch.Tensor):
        if (scale <= 0).any():
            raise ValueError("scale must be > 0")
    elif scale <= 0:
        raise ValueError("scale must be > 0")
    v2t = _directional_loss(S, scale)
    t2v = _directional_loss(S.T, scale)
    return ContrastiveLoss(v2t, t2v, v2t + t2v)


def _directional_loss(S: torch.Tensor, scale: float | torch.Tensor) -> torch.Tensor:
    logits = scale * S
    log_probs = torch.log_softmax(logits, dim=1)
    return -log_probs.diagonal().mean()


def save_pair(pair: RoleEncoderPair, path: str | Path, step: int = 0) -> None:
    payload = {
        "state_dict": pair.state_dict(),
        "config": asdict(pair.cfg),
        "vocab_tokens": list(pair.vocab.tokens),
        "meta": {"role": pair.role, "d": pair.cfg.embed_dim, "step": step},
    }
    torch.save(payload, str(path))


def load_pair(path: str | Path, expected_role: str | None = None) -> RoleEncoderPair:
    payload = torch.load(str(path), map_location="cpu", weights_only=False)
    meta = payload["meta"]
    if expected_role is not None and meta["role"] != expected_role:
        raise RoleMismatchError(
            f"checkpoint role {meta['role']!r} loaded into {expected_role!r} slot"
        )
    cfg = EncoderConfig(**payload["config"])
    vocab = Vocabulary(payload["vocab_tokens"])
    pair = RoleEncoderPair(cfg, vocab)
    pair.load_state_dict(payload["state_dict"])
    return pair
