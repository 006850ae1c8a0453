"""Frame decoding and the two frame-sampling rules.

Training rule (sample_frames): one frame per second starting at t=0, at most
20 frames; videos longer than 20 s are covered by 20 equally spaced frames.

Labeling rule (sample_equally_spaced): k bin-midpoint timestamps, so frames
never collapse onto t=0 or the final instant.
"""
from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass
from typing import Protocol

import numpy as np

from .data import VideoRecord

MAX_FRAMES = 20


class DecodeError(RuntimeError):
    pass


@dataclass
class FrameSequence:
    video_id: str
    frames: list[np.ndarray]
    timestamps_s: list[float]

    def __post_init__(self) -> None:
        if not 1 <= len(self.frames) <= MAX_FRAMES:
            raise ValueError(f"{self.video_id}: frame count {len(self.frames)} outside 1..{MAX_FRAMES}")
        if len(self.frames) != len(self.timestamps_s):
            raise ValueError(f"{self.video_id}: frames/timestamps length mismatch")
        for a, b in zip(self.timestamps_s, self.timestamps_s[1:]):
            if not b > a:
                raise ValueError(f"{self.video_id}: timestamps not strictly increasing")

    def __len__(self) -> int:
        return len(self.frames)


class FrameDecoder(Protocol):
    """Maps timestamps to decoded frames plus the underlying frame indices.

    Indices let callers detect when distinct timestamps hit the same stored
    frame (low-fps media), which sampling treats as duplicates.
    """

    def decode(self, record: VideoRecord, timestamps_s: list[float]) -> tuple[list[np.ndarray], list[int]]: ...


class OpenCvDecoder:
    """Decodes real media files via cv2.VideoCapture."""

    def decode(self, record: VideoRecord, timestamps_s: list[float]) -> tuple[list[np.ndarray], list[int]]:
        import cv2

        cap = cv2.VideoCapture(record.media_path)
        if not cap.isOpened():
            raise DecodeError(f"{record.video_id}: cannot open {record.media_path}")
        try:
            fps = cap.get(cv2.CAP_PROP_FPS)
            n_frames = int(cap.get(cv2.CAP_PROP_FRAME_COUNT))
            if fps <= 0 or n_frames <= 0:
                raise DecodeError(f"{record.video_id}: no decodable frames")
            frames: list[np.ndarray] = []
            indices: list[int] = []
            for t in timestamps_s:
                idx = min(n_frames - 1, max(0, int(t * fps)))
                cap.set(cv2.CAP_PROP_POS_FRAMES, idx)
                ok, frame = cap.read()
                if not ok:
                    raise DecodeError(f"{record.video_id}: read failed at frame {idx}")
                frames.append(frame)
                indices.append(idx)
            return frames, indices
        finally:
            cap.release()


class SyntheticDecoder:
    """Deterministic pseudo-video frames, keyed by (video_id, frame index).

    Lets the full pipeline run without media files; a manifest entry only
    needs a positive duration.
    """

    def __init__(self, fps: float = 4.0, height: int = 32, width: int = 32):
        self.fps = fps
        self.height = height
        self.width = width

    def decode(self, record: VideoRecord, timestamps_s: list[float]) -> tuple[list[np.ndarray], list[int]]:
        n_frames = max(1, int(round(record.duration_s * self.fps)))
        frames: list[np.ndarray] = []
        indices: list[int] = []
        for t in timestamps_s:
            idx = min(n_frames - 1, max(0, int(t * self.fps)))
            # stable across processes, unlike builtin hash()
            digest = hashlib.sha256(f"{record.video_id}:{idx}".encode()).digest()
            rng = np.random.default_rng(int.from_bytes(digest[:8], "little"))
            frames.append(rng.integers(0, 256, size=(self.height, self.width, 3), dtype=np.uint8))
            indices.append(idx)
        return frames, indices


def training_timestamps(duration_s: float) -> list[float]:
    if duration_s > MAX_FRAMES:
        return [duration_s * i / MAX_FRAMES for i in range(MAX_FRAMES)]
    n = max(1, math.floor(duration_s))
    return [float(i) for i in range(n)]


def sample_frames(record: VideoRecord, decoder: FrameDecoder) -> FrameSequence:
    """Training sampling: 1 fps from t=0, capped at 20 frames spanning the video."""
    ts = training_timestamps(record.duration_s)
    frames, _ = decoder.decode(record, ts)
    return FrameSequence(record.video_id, frames, ts)


def sample_equally_spaced(
    record: VideoRecord, k: int, decoder: FrameDecoder
) -> tuple[FrameSequence, bool]:
    """Labeling sampling: k midpoint-spaced frames at duration*(i+0.5)/k.

    Returns the sequence and a flag that is True when the media holds fewer
    than k distinct frames (all distinct frames are returned in that case).
    """
    if not 1 <= k <= MAX_FRAMES:
        raise ValueError(f"k must be in 1..{MAX_FRAMES}, got {k}")
    ts = [record.duration_s * (i + 0.5) / k for i in range(k)]
    frames, indices = decoder.decode(record, ts)
    kept_frames: list[np.ndarray] = []
    kept_ts: list[float] = []
    seen: set[int] = set()
    for frame, t, idx in zip(frames, ts, indices):
        if idx in seen:
            continue
        seen.add(idx)
        kept_frames.append(frame)
        kept_ts.append(t)
    flagged = len(kept_frames) < k
    return FrameSequence(record.video_id, kept_frames, kept_ts), flagged
