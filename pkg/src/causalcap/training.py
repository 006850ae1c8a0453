"""Optimization schedules, stage freezing, run artifacts, and ablation wiring.

Run directory layout:
    config.json    resolved TrainConfig plus model dimensions
    metrics.csv    epoch, L_cause, L_effect, L_caption, L_total, val_CIDEr
    checkpoints/   stage 1: cause.pt / effect.pt / combined.pt
                   stage 2: last.pt (every epoch) and best.pt (best val CIDEr)

Caption targets are lowercased by the shared tokenizer before training; the
source text leaves casing unspecified and lowercase keeps model and metric
vocabularies aligned.
"""
from __future__ import annotations

import csv
import hashlib
import json
import random
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import torch

from .data import CtnCaption, DatasetManifest, VideoRecord, combine_caption
from .metrics import EvalPair, cider
from .stage1 import (
    EncoderConfig,
    EmbeddingBatch,
    RoleEncoderPair,
    contrastive_loss,
    embed_video,
    load_pair,
    save_pair,
    similarity,
)
from .stage2 import (
    CaptionModel,
    GeneratedCaption,
    StageTwoConfig,
    StageTwoState,
    generate,
    load_caption_model,
    save_caption_model,
    sequence_loss,
    total_loss,
)
from .text import Vocabulary, build_vocabulary
from .video import FrameDecoder, FrameSequence, sample_frames

STAGE_DEFAULTS = {
    "stage1": (1e-4, 10),
    "stage2": (1e-6, 50),
    "finetune_x": (5e-7, 50),
}

ABLATION_VARIANTS = (
    "full_cen",
    "e_combined",
    "no_ft_single_clip",
    "no_ft_two_clip",
    "only_cause",
    "only_effect",
    "zero_shot_x",
    "finetune_x",
)


class MissingCaptionError(ValueError):
    pass


@dataclass
class TrainConfig:
    stage: str
    learning_rate: float | None = None
    batch_size: int = 64
    epochs: int | None = None
    optimizer: str = "adam"
    seed: int = 0
    dataset: str | None = None

    def __post_init__(self) -> None:
        if self.stage not in STAGE_DEFAULTS:
            raise ValueError(f"unknown stage {self.stage!r}")
        default_lr, default_epochs = STAGE_DEFAULTS[self.stage]
        if self.learning_rate is None:
            self.learning_rate = default_lr
        if self.epochs is None:
            self.epochs = default_epochs
        if self.optimizer != "adam":
            raise ValueError("only adam is supported")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("batch_size must be >= 1 and epochs >= 0")


def set_determinism(seed: int) -> None:
    random.seed(seed)
    np.random.seed(seed % 2**32)
    torch.manual_seed(seed)


def sha256_file(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


@dataclass
class TrainingExample:
    record: VideoRecord
    frames: FrameSequence
    ctn: CtnCaption


@dataclass
class TrainingSet:
    examples: list[TrainingExample]
    vocab: Vocabulary


def build_training_set(
    manifest: DatasetManifest,
    decoder: FrameDecoder,
    split: str = "train",
    resize_to: int | None = None,
    vocab: Vocabulary | None = None,
) -> TrainingSet:
    """Sample frames and pair them with CTN captions for one split.

    The vocabulary is built over the split's combined captions unless a
    previously built one is supplied (evaluation splits must reuse the
    training vocabulary).
    """
    from .stage1 import resize_frames

    examples = []
    for record in manifest.by_split(split):
        if record.video_id not in manifest.ctn_index:
            raise MissingCaptionError(f"{record.video_id}: no CTN caption for {split} video")
        frames = sample_frames(record, decoder)
        if resize_to is not None:
            frames = resize_frames(frames, resize_to)
        examples.append(TrainingExample(record, frames, manifest.ctn_index[record.video_id]))
    if not examples:
        raise ValueError(f"split {split!r} is empty")
    if vocab is None:
        vocab = build_vocabulary([combine_caption(e.ctn) for e in examples])
    return TrainingSet(examples, vocab)


def _write_config(run_dir: Path, cfg: TrainConfig, extra: dict) -> None:
    run_dir.mkdir(parents=True, exist_ok=True)
    payload = {**asdict(cfg), **extra}
    (run_dir / "config.json").write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")


class MetricsLog:
    HEADER = ["epoch", "L_cause", "L_effect", "L_caption", "L_total", "val_CIDEr"]

    def __init__(self, run_dir: Path):
        self.path = run_dir / "metrics.csv"
        with self.path.open("w", encoding="utf-8", newline="") as fh:
            csv.writer(fh).writerow(self.HEADER)

    def append(
        self,
        epoch: int,
        l_cause: float | None,
        l_effect: float | None,
        l_caption: float | None,
        val_cider: float | None,
    ) -> None:
        parts = [l_cause or 0.0, l_effect or 0.0, l_caption or 0.0]
        row = [
            epoch,
            "" if l_cause is None else f"{l_cause:.6f}",
            "" if l_effect is None else f"{l_effect:.6f}",
            "" if l_caption is None else f"{l_caption:.6f}",
            f"{float(total_loss(*parts)):.6f}",
            "" if val_cider is None else f"{val_cider:.6f}",
        ]
        with self.path.open("a", encoding="utf-8", newline="") as fh:
            csv.writer(fh).writerow(row)


def _epoch_batches(n: int, batch_size: int, rng: np.random.Generator) -> list[list[int]]:
    order = rng.permutation(n).tolist()
    return [order[i : i + batch_size] for i in range(0, n, batch_size)]


def _text_part(ctn: CtnCaption, role: str) -> str:
    if role == "cause":
        return ctn.cause
    if role == "effect":
        return ctn.effect
    return combine_caption(ctn)


def _stage1_epoch_loss(
    pair: RoleEncoderPair,
    examples: Sequence[TrainingExample],
    batches: Sequence[Sequence[int]],
    optimizer: torch.optim.Optimizer | None,
) -> float:
    role_losses = []
    for batch in batches:
        video_embeds = torch.stack([embed_video(pair, examples[i].frames) for i in batch])
        text_features, _ = pair.text_features([_text_part(examples[i].ctn, pair.role) for i in batch])
        text_embeds = text_features / text_features.norm(dim=1, keepdim=True)
        S = similarity(EmbeddingBatch(video_embeds, text_embeds))
        loss = contrastive_loss(S, pair.scale).total
        if optimizer is not None:
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
        role_losses.append(float(loss.detach()))
    return float(np.mean(role_losses))


def train_stage1(
    cfg: TrainConfig,
    data: TrainingSet,
    run_dir: str | Path,
    encoder_sizes: dict | None = None,
    roles: Sequence[str] = ("cause", "effect"),
) -> dict[str, Path]:
    """Train one contrastive encoder pair per role; returns checkpoint paths."""
    if cfg.stage != "stage1":
        raise ValueError("config stage must be stage1")
    run_dir = Path(run_dir)
    _write_config(run_dir, cfg, {"roles": list(roles), "encoder_sizes": encoder_sizes or {}})
    log = MetricsLog(run_dir)
    ckpt_dir = run_dir / "checkpoints"
    ckpt_dir.mkdir(exist_ok=True)

    set_determinism(cfg.seed)
    pairs = {
        role: RoleEncoderPair(
            EncoderConfig(role=role, vocab_size=len(data.vocab), **(encoder_sizes or {})),
            data.vocab,
        )
        for role in roles
    }
    optimizers = {
        role: torch.optim.Adam(pair.parameters(), lr=cfg.learning_rate)
        for role, pair in pairs.items()
    }

    rng = np.random.default_rng(cfg.seed)
    steps = 0
    for epoch in range(1, cfg.epochs + 1):
        batches = _epoch_batches(len(data.examples), cfg.batch_size, rng)
        epoch_losses = {}
        for role, pair in pairs.items():
            pair.train()
            epoch_losses[role] = _stage1_epoch_loss(pair, data.examples, batches, optimizers[role])
            steps += len(batches)
        log.append(
            epoch,
            epoch_losses.get("cause", epoch_losses.get("combined")),
            epoch_losses.get("effect", epoch_losses.get("combined")),
            None,
            None,
        )

    paths = {}
    for role, pair in pairs.items():
        pair.eval()
        path = ckpt_dir / f"{role}.pt"
        save_pair(pair, path, step=steps)
        paths[role] = path
    return paths


def stage1_eval_loss(pair: RoleEncoderPair, data: TrainingSet, batch_size: int) -> float:
    """Mean contrastive loss of a frozen pair over the set, fixed batch order."""
    batches = [
        list(range(i, min(i + batch_size, len(data.examples))))
        for i in range(0, len(data.examples), batch_size)
    ]
    batches = [b for b in batches if len(b) >= 1]
    with torch.no_grad():
        return _stage1_epoch_loss(pair, data.examples, batches, None)


@dataclass
class AblationAssets:
    """Everything build_ablation may need; variants use different subsets."""

    vocab: Vocabulary
    cause_ckpt: Path | None = None
    effect_ckpt: Path | None = None
    combined_ckpt: Path | None = None
    caption_ckpt: Path | None = None
    encoder_sizes: dict = field(default_factory=dict)
    stage2_sizes: dict = field(default_factory=dict)
    feature_dim: int | None = None
    seed: int = 0


class AblationModel:
    """A wired (encoders, caption model) combination plus an update counter.

    The counter increments on every optimizer step; zero-shot evaluation must
    leave it at exactly 0.
    """

    def __init__(
        self,
        variant: str,
        caption_model: CaptionModel,
        cause_encoder: RoleEncoderPair | None,
        effect_encoder: RoleEncoderPair | None,
    ):
        self.variant = variant
        self.caption_model = caption_model
        self.cause_encoder = cause_encoder
        self.effect_encoder = effect_encoder
        self.update_count = 0

    def features(self, frames: FrameSequence) -> tuple[torch.Tensor | None, torch.Tensor | None]:
        """Per-variant stage-1 feature wiring for one video."""
        with torch.no_grad():
            if self.variant in ("e_combined", "no_ft_single_clip"):
                shared = self.cause_encoder.frame_features(frames)
                return shared, shared  # one encoder feeds both streams
            f_cause = (
                self.cause_encoder.frame_features(frames)
                if self.cause_encoder is not None
                else None
            )
            f_effect = (
                self.effect_encoder.frame_features(frames)
                if self.effect_encoder is not None
                else None
            )
            return f_cause, f_effect

    def state(self, frames: FrameSequence) -> StageTwoState:
        f_cause, f_effect = self.features(frames)
        return self.caption_model.encode_streams(f_cause, f_effect)

    def caption(self, frames: FrameSequence, strategy: str = "greedy") -> GeneratedCaption:
        self.caption_model.eval()
        return generate(self.caption_model, self.state(frames).h_concat, strategy=strategy)


def _fresh_pair(role: str, vocab: Vocabulary, sizes: dict, seed: int) -> RoleEncoderPair:
    set_determinism(seed)
    return RoleEncoderPair(EncoderConfig(role=role, vocab_size=len(vocab), **sizes), vocab)


def build_ablation(variant: str, assets: AblationAssets) -> AblationModel:
    """Assemble a runnable model for one ablation variant (wiring only).

    full_cen / only_cause / only_effect load tuned stage-1 checkpoints;
    e_combined loads the combined-caption encoder into both streams;
    no_ft_* use untuned encoders; zero_shot_x and finetune_x load a complete
    cross-dataset model and differ only in whether training continues.
    """
    if variant not in ABLATION_VARIANTS:
        raise ValueError(f"unknown ablation variant {variant!r}")

    def need(path: Path | None, what: str) -> Path:
        if path is None:
            raise ValueError(f"{variant}: missing asset {what}")
        return path

    cause = effect = None
    if variant in ("full_cen", "zero_shot_x", "finetune_x"):
        cause = load_pair(need(assets.cause_ckpt, "cause_ckpt"), expected_role="cause")
        effect = load_pair(need(assets.effect_ckpt, "effect_ckpt"), expected_role="effect")
        streams = "both"
    elif variant == "e_combined":
        combined = load_pair(need(assets.combined_ckpt, "combined_ckpt"), expected_role="combined")
        cause = effect = combined
        streams = "both"
    elif variant == "no_ft_single_clip":
        cause = effect = _fresh_pair("combined", assets.vocab, assets.encoder_sizes, assets.seed)
        streams = "both"
    elif variant == "no_ft_two_clip":
        cause = _fresh_pair("cause", assets.vocab, assets.encoder_sizes, assets.seed)
        effect = _fresh_pair("effect", assets.vocab, assets.encoder_sizes, assets.seed + 1)
        streams = "both"
    elif variant == "only_cause":
        cause = load_pair(need(assets.cause_ckpt, "cause_ckpt"), expected_role="cause")
        streams = "cause"
    else:  # only_effect
        effect = load_pair(need(assets.effect_ckpt, "effect_ckpt"), expected_role="effect")
        streams = "effect"

    for pair in {id(p): p for p in (cause, effect) if p is not None}.values():
        pair.eval()
        for param in pair.parameters():
            param.requires_grad_(False)

    if assets.caption_ckpt is not None:
        caption_model = load_caption_model(assets.caption_ckpt)
        if caption_model.cfg.streams != streams:
            raise ValueError(
                f"{variant}: caption checkpoint wired for {caption_model.cfg.streams!r}, need {streams!r}"
            )
    else:
        feature_dim = assets.feature_dim
        if feature_dim is None:
            probe = cause if cause is not None else effect
            feature_dim = probe.cfg.embed_dim
        set_determinism(assets.seed)
        caption_model = CaptionModel(
            StageTwoConfig(
                vocab_size=len(assets.vocab),
                feature_dim=feature_dim,
                streams=streams,
                **assets.stage2_sizes,
            ),
            assets.vocab,
        )
    return AblationModel(variant, caption_model, cause, effect)


def train_caption_model(
    cfg: TrainConfig,
    model: AblationModel,
    data: TrainingSet,
    run_dir: str | Path,
    val_data: TrainingSet | None = None,
    early_stop_loss: float | None = None,
) -> Path:
    """Teacher-forced caption training; stage-1 encoders stay frozen.

    The two contrastive terms are constants of the frozen encoders, so they
    are measured once and copied into every epoch row of metrics.csv; only
    the caption loss is backpropagated.
    """
    if cfg.stage not in ("stage2", "finetune_x"):
        raise ValueError("config stage must be stage2 or finetune_x")
    run_dir = Path(run_dir)
    _write_config(run_dir, cfg, {"variant": model.variant})
    log = MetricsLog(run_dir)
    ckpt_dir = run_dir / "checkpoints"
    ckpt_dir.mkdir(parents=True, exist_ok=True)

    set_determinism(cfg.seed)
    vocab = model.caption_model.vocab
    features = [model.features(ex.frames) for ex in data.examples]
    targets = [
        torch.tensor(vocab.encode(combine_caption(ex.ctn), add_bos_eos=True), dtype=torch.long)
        for ex in data.examples
    ]
    for t in targets:
        if len(t) > model.caption_model.cfg.max_len:
            raise ValueError(f"caption longer than max_len {model.caption_model.cfg.max_len}")

    l_cause, l_effect = _frozen_contrastive_terms(model, data, cfg.batch_size)
    optimizer = torch.optim.Adam(
        (p for p in model.caption_model.parameters() if p.requires_grad),
        lr=cfg.learning_rate,
    )

    rng = np.random.default_rng(cfg.seed)
    best_val = -float("inf")
    best_path = ckpt_dir / "best.pt"
    last_path = ckpt_dir / "last.pt"
    for epoch in range(1, cfg.epochs + 1):
        model.caption_model.train()
        batch_losses = []
        for batch in _epoch_batches(len(data.examples), cfg.batch_size, rng):
            losses = []
            for i in batch:
                state = model.caption_model.encode_streams(*features[i])
                losses.append(sequence_loss(model.caption_model, state.h_concat, targets[i]))
            loss = torch.stack(losses).mean()
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            model.update_count += 1
            batch_losses.append(float(loss.detach()))
        epoch_loss = float(np.mean(batch_losses))

        val_cider = None
        if val_data is not None:
            val_cider = evaluate_cider(model, val_data)
        log.append(epoch, l_cause, l_effect, epoch_loss, val_cider)

        save_caption_model(model.caption_model, last_path, step=model.update_count)
        score = val_cider if val_cider is not None else -epoch_loss
        if score > best_val:
            best_val = score
            save_caption_model(model.caption_model, best_path, step=model.update_count)

        if early_stop_loss is not None and epoch_loss < early_stop_loss:
            break
    return last_path


def _frozen_contrastive_terms(
    model: AblationModel, data: TrainingSet, batch_size: int
) -> tuple[float | None, float | None]:
    l_cause = l_effect = None
    if model.cause_encoder is not None:
        l_cause = stage1_eval_loss(model.cause_encoder, data, batch_size)
    if model.effect_encoder is not None:
        l_effect = stage1_eval_loss(model.effect_encoder, data, batch_size)
    return l_cause, l_effect


def train_stage2(
    cfg: TrainConfig,
    cause_ckpt: str | Path,
    effect_ckpt: str | Path,
    data: TrainingSet,
    run_dir: str | Path,
    stage2_sizes: dict | None = None,
    val_data: TrainingSet | None = None,
    early_stop_loss: float | None = None,
) -> AblationModel:
    """The standard dual-stream wiring trained on combined captions."""
    assets = AblationAssets(
        vocab=data.vocab,
        cause_ckpt=Path(cause_ckpt),
        effect_ckpt=Path(effect_ckpt),
        stage2_sizes=stage2_sizes or {},
        seed=cfg.seed,
    )
    model = build_ablation("full_cen", assets)
    train_caption_model(cfg, model, data, run_dir, val_data, early_stop_loss)
    return model


def evaluate_cider(model: AblationModel, data: TrainingSet) -> float | None:
    """Corpus CIDEr (table convention, x100) of greedy captions; None if the
    corpus is too small for document frequencies."""
    pairs = []
    for ex in data.examples:
        result = model.caption(ex.frames)
        pairs.append(
            EvalPair(ex.record.video_id, " ".join(result.tokens), [combine_caption(ex.ctn)])
        )
    if len(pairs) < 2:
        return None
    return cider(pairs).reported


def predict_captions(model: AblationModel, data: TrainingSet) -> dict[str, str]:
    return {
        ex.record.video_id: " ".join(model.caption(ex.frames).tokens) for ex in data.examples
    }


def export_embeddings(
    pairs: dict[str, RoleEncoderPair],
    items: Sequence[tuple[str, FrameSequence]],
    path: str | Path,
) -> int:
    """Dump role-tagged pooled video embeddings as JSONL for external projection."""
    count = 0
    with Path(path).open("w", encoding="utf-8") as fh:
        for role, pair in pairs.items():
            pair.eval()
            for video_id, frames in items:
                with torch.no_grad():
                    emb = embed_video(pair, frames)
                fh.write(
                    json.dumps(
                        {
                            "video_id": video_id,
                            "role": role,
                            "embedding": [round(float(x), 6) for x in emb],
                        }
                    )
                    + "\n"
                )
                count += 1
    return count
