"""Caption-video relevance scoring and the accept/regenerate loop.

The score combines a coarse term (pooled-frame vs pooled-sentence cosine)
and a fine term (F1 over the token-by-frame cosine matrix) with equal
weight. Captions scoring at or above the threshold are kept; everything
else triggers a regeneration attempt, up to a hard cap.
"""
from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Protocol

import numpy as np

from .data import CtnCaption, DescriptiveCaptionSet, VideoRecord, combine_caption
from .llm import GenerationRequest, LlmClient
from .prompts import parse_response, render
from .text import tokenize
from .video import FrameSequence


class DimensionMismatchError(ValueError):
    pass


class VisionTextBackend(Protocol):
    """Embedding provider for relevance scoring.

    embed_frames returns one row per frame (n_frames x d); embed_text returns
    per-token rows (n_tokens x d) plus a pooled sentence vector (d,). Rows are
    expected L2-normalized; scoring normalizes defensively anyway.
    """

    name: str

    def embed_frames(self, frames: FrameSequence) -> np.ndarray: ...

    def embed_text(self, caption: str) -> tuple[np.ndarray, np.ndarray]: ...


def _normalize_rows(m: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(m, axis=1, keepdims=True)
    return np.divide(m, norms, out=np.zeros_like(m, dtype=float), where=norms > 0)


def _cosine(u: np.ndarray, v: np.ndarray) -> float:
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0 or nv == 0:
        return 0.0
    return float(np.dot(u, v) / (nu * nv))


def emscore(caption: str, frames: FrameSequence, backend: VisionTextBackend) -> float:
    """Relevance of caption to frames: 0.5 * (coarse + fine), in [-1, 1]."""
    if not caption.strip():
        raise ValueError("caption is empty")
    frame_embeds = np.asarray(backend.embed_frames(frames), dtype=float)
    token_embeds, sent_embed = backend.embed_text(caption)
    token_embeds = np.asarray(token_embeds, dtype=float)
    sent_embed = np.asarray(sent_embed, dtype=float)
    if frame_embeds.ndim != 2 or token_embeds.ndim != 2:
        raise DimensionMismatchError("embedding matrices must be 2-D")
    if frame_embeds.shape[1] != token_embeds.shape[1] or sent_embed.shape != (frame_embeds.shape[1],):
        raise DimensionMismatchError(
            f"dims disagree: frames {frame_embeds.shape}, tokens {token_embeds.shape}, "
            f"sentence {sent_embed.shape}"
        )

    coarse = _cosine(frame_embeds.mean(axis=0), sent_embed)

    cos_matrix = _normalize_rows(token_embeds) @ _normalize_rows(frame_embeds).T
    precision = float(cos_matrix.max(axis=1).mean())  # per token, best frame
    recall = float(cos_matrix.max(axis=0).mean())  # per frame, best token
    if precision + recall == 0:
        fine = 0.0
    else:
        # clamp: p+r can cross zero while p*r does not, blowing up the ratio
        fine = float(np.clip(2 * precision * recall / (precision + recall), -1.0, 1.0))
    return 0.5 * (coarse + fine)


class HashingBackend:
    """Deterministic pseudo-embeddings derived from content bytes.

    Stands in for a pretrained vision-text model so the whole pipeline runs at
    desk scale; scores are stable across processes.
    """

    def __init__(self, dim: int = 64):
        self.name = f"hashing-{dim}"
        self.dim = dim

    def _unit(self, key: str) -> np.ndarray:
        digest = hashlib.sha256(key.encode()).digest()
        rng = np.random.default_rng(int.from_bytes(digest[:8], "little"))
        v = rng.standard_normal(self.dim)
        return v / np.linalg.norm(v)

    def embed_frames(self, frames: FrameSequence) -> np.ndarray:
        rows = []
        for frame in frames.frames:
            key = hashlib.sha256(np.ascontiguousarray(frame).tobytes()).hexdigest()
            rows.append(self._unit("frame:" + key))
        return np.stack(rows)

    def embed_text(self, caption: str) -> tuple[np.ndarray, np.ndarray]:
        tokens = tokenize(caption) or ["<empty>"]
        rows = np.stack([self._unit("token:" + t) for t in tokens])
        pooled = rows.mean(axis=0)
        norm = np.linalg.norm(pooled)
        if norm > 0:
            pooled = pooled / norm
        return rows, pooled


@dataclass
class AttemptRecord:
    caption: str | None
    score: float | None
    outcome: str  # "pass", "below_threshold", or a parse failure code


@dataclass
class FilterOutcome:
    video_id: str
    accepted: CtnCaption | None
    attempts: list[AttemptRecord]
    exhausted: bool

    def __post_init__(self) -> None:
        if self.exhausted and self.accepted is not None:
            raise ValueError(f"{self.video_id}: exhausted outcome cannot carry a caption")


@dataclass
class FilterDeps:
    """Collaborators for filter_loop; swap in stubs for tests.

    score maps (video, combined caption text) to a relevance score; production
    wiring closes over frames and an embedding backend.
    """

    client: LlmClient
    score: Callable[[VideoRecord, str], float]
    template_id: str = "fewshot_v1"
    max_tokens: int = 256
    temperature: float = 0.7
    seed: int | None = None


def filter_loop(
    video: VideoRecord,
    caps: DescriptiveCaptionSet,
    theta: float,
    max_attempts: int,
    deps: FilterDeps,
) -> FilterOutcome:
    """Generate, parse, score, repeat until score >= theta or attempts run out.

    Parse/validation failures consume an attempt without scoring, so a
    misbehaving backend cannot stall the loop.
    """
    if not -1 < theta < 1:
        raise ValueError(f"theta must be in (-1, 1), got {theta}")
    if max_attempts < 1:
        raise ValueError("max_attempts must be >= 1")
    prompt = render(deps.template_id, caps)
    attempts: list[AttemptRecord] = []
    for i in range(1, max_attempts + 1):
        seed = None if deps.seed is None else deps.seed + i
        result = deps.client.generate(
            GenerationRequest(
                prompt,
                max_tokens=deps.max_tokens,
                temperature=deps.temperature,
                seed=seed,
                backend_id=deps.client.backend_id,
            )
        )
        parsed = parse_response(result.text, video.video_id)
        if parsed.failure is not None:
            attempts.append(AttemptRecord(None, None, parsed.failure))
            continue
        assert parsed.ctn is not None
        combined = combine_caption(parsed.ctn)
        score = deps.score(video, combined)
        if score >= theta:
            attempts.append(AttemptRecord(combined, score, "pass"))
            accepted = replace(parsed.ctn, emscore=score, attempts=i)
            return FilterOutcome(video.video_id, accepted, attempts, exhausted=False)
        attempts.append(AttemptRecord(combined, score, "below_threshold"))
    return FilterOutcome(video.video_id, None, attempts, exhausted=True)


@dataclass
class Histogram:
    bin_width: float
    bins: list[tuple[float, float, int]] = field(default_factory=list)
    fraction_above: float = 0.0
    theta: float = 0.2


def score_histogram(scores: list[float], bin_width: float, theta: float = 0.2) -> Histogram:
    """Bin scores over [-1, 1]; the top bin includes its upper edge."""
    if bin_width <= 0:
        raise ValueError("bin_width must be > 0")
    if not scores:
        raise ValueError("no scores to bin")
    n_bins = math.ceil(2.0 / bin_width)
    counts = [0] * n_bins
    for s in scores:
        idx = min(n_bins - 1, int((s - (-1.0)) / bin_width))
        counts[max(0, idx)] += 1
    bins = [(-1.0 + i * bin_width, min(1.0, -1.0 + (i + 1) * bin_width), c) for i, c in enumerate(counts)]
    fraction = sum(1 for s in scores if s >= theta) / len(scores)
    return Histogram(bin_width=bin_width, bins=bins, fraction_above=fraction, theta=theta)


def write_audit_log(outcomes: list[FilterOutcome], path: str | Path, append: bool = False) -> None:
    with Path(path).open("a" if append else "w", encoding="utf-8") as fh:
        for o in outcomes:
            obj = {
                "video_id": o.video_id,
                "accepted": None
                if o.accepted is None
                else {
                    "Cause": o.accepted.cause,
                    "Effect": o.accepted.effect,
                    "emscore": o.accepted.emscore,
                    "attempts": o.accepted.attempts,
                },
                "exhausted": o.exhausted,
                "attempts": [
                    {"caption": a.caption, "score": a.score, "outcome": a.outcome}
                    for a in o.attempts
                ],
            }
            fh.write(json.dumps(obj) + "\n")


def write_histogram_csv(hist: Histogram, path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["bin_lo", "bin_hi", "count"])
        for lo, hi, count in hist.bins:
            writer.writerow([f"{lo:.6g}", f"{hi:.6g}", count])
