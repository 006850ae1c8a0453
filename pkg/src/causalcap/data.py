"""Dataset manifests, caption stores, and the combined-caption convention.

File formats (all UTF-8):
  manifest.jsonl  one record per line:
                  {"video_id", "media_path", "duration_s", "dataset_tag", "split"}
  captions.json   {"<video_id>": ["caption", ...]}
  ctn.json        {"<video_id>": {"Cause": ..., "Effect": ..., "emscore": ..., "attempts": ...}}

Manifests are immutable after load and safe to share across threads.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .text import word_count

DATASET_TAGS = ("MSVD", "MSRVTT", "custom")
SPLITS = ("train", "val", "test")

MAX_PART_WORDS = 15


class ManifestError(ValueError):
    """Malformed manifest or caption file; message carries line number or video_id."""


@dataclass(frozen=True)
class VideoRecord:
    video_id: str
    media_path: str
    duration_s: float
    dataset_tag: str
    split: str

    def __post_init__(self) -> None:
        if not self.video_id:
            raise ManifestError("video_id must be non-empty")
        if self.duration_s <= 0:
            raise ManifestError(f"{self.video_id}: duration_s must be > 0")
        if self.dataset_tag not in DATASET_TAGS:
            raise ManifestError(f"{self.video_id}: unknown dataset_tag {self.dataset_tag!r}")
        if self.split not in SPLITS:
            raise ManifestError(f"{self.video_id}: unknown split {self.split!r}")


@dataclass(frozen=True)
class DescriptiveCaptionSet:
    """Original human (or frame-level) captions for one video, order preserved."""

    video_id: str
    captions: tuple[str, ...]

    def __post_init__(self) -> None:
        if not self.captions:
            raise ManifestError(f"{self.video_id}: caption set is empty")
        for cap in self.captions:
            if not cap.strip():
                raise ManifestError(f"{self.video_id}: blank caption in set")


@dataclass(frozen=True)
class CtnCaption:
    """A cause/effect caption pair; each part is 1-15 whitespace words."""

    video_id: str
    cause: str
    effect: str
    emscore: float | None = None
    attempts: int | None = None

    def __post_init__(self) -> None:
        for name, part in (("cause", self.cause), ("effect", self.effect)):
            n = word_count(part)
            if n == 0:
                raise ManifestError(f"{self.video_id}: {name} part is empty")
            if n > MAX_PART_WORDS:
                raise ManifestError(
                    f"{self.video_id}: {name} part has {n} words (limit {MAX_PART_WORDS})"
                )


def combine_caption(c: CtnCaption) -> str:
    """Join cause and effect with a single space, no case change."""
    if not c.cause.strip() or not c.effect.strip():
        raise ManifestError(f"{c.video_id}: cannot combine with an empty part")
    return c.cause + " " + c.effect


@dataclass
class DatasetManifest:
    records: list[VideoRecord]
    caption_index: dict[str, DescriptiveCaptionSet] = field(default_factory=dict)
    ctn_index: dict[str, CtnCaption] = field(default_factory=dict)

    def __post_init__(self) -> None:
        ids = [r.video_id for r in self.records]
        if len(set(ids)) != len(ids):
            dupe = next(v for v in ids if ids.count(v) > 1)
            raise ManifestError(f"{dupe}: duplicate video_id in manifest")
        known = set(ids)
        for vid in self.ctn_index:
            if vid not in known:
                raise ManifestError(f"{vid}: CTN caption for unknown video")
        counts = self.split_counts()
        if sum(counts.values()) != len(self.records):
            raise ManifestError("split counts do not sum to record count")

    def split_counts(self) -> dict[str, int]:
        counts = {s: 0 for s in SPLITS}
        for r in self.records:
            counts[r.split] += 1
        return counts

    def by_split(self, split: str) -> list[VideoRecord]:
        return [r for r in self.records if r.split == split]

    def record(self, video_id: str) -> VideoRecord:
        for r in self.records:
            if r.video_id == video_id:
                return r
        raise KeyError(video_id)


_RECORD_KEYS = ("video_id", "media_path", "duration_s", "dataset_tag", "split")


def load_manifest(
    path: str | Path,
    captions_path: str | Path | None = None,
    ctn_path: str | Path | None = None,
) -> DatasetManifest:
    """Read a JSON-lines manifest plus optional caption sidecar files.

    Raises:
        ManifestError: with the 1-based line number for parse errors, or the
            offending video_id for invariant violations.
    """
    path = Path(path)
    lines = path.read_text(encoding="utf-8").splitlines()
    records: list[VideoRecord] = []
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ManifestError(f"{path}:{lineno}: invalid JSON: {exc.msg}") from exc
        if not isinstance(obj, dict) or set(obj) != set(_RECORD_KEYS):
            raise ManifestError(f"{path}:{lineno}: expected keys {_RECORD_KEYS}")
        records.append(
            VideoRecord(
                video_id=str(obj["video_id"]),
                media_path=str(obj["media_path"]),
                duration_s=float(obj["duration_s"]),
                dataset_tag=str(obj["dataset_tag"]),
                split=str(obj["split"]),
            )
        )
    if not records:
        raise ManifestError(f"{path}:1: manifest is empty")

    caption_index: dict[str, DescriptiveCaptionSet] = {}
    if captions_path is not None:
        caption_index = load_captions(captions_path)
    ctn_index: dict[str, CtnCaption] = {}
    if ctn_path is not None:
        ctn_index = load_ctn(ctn_path)
    return DatasetManifest(records, caption_index, ctn_index)


def save_manifest(manifest: DatasetManifest, path: str | Path) -> None:
    """Write records as canonical JSON lines (fixed key order, compact separators)."""
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        for r in manifest.records:
            obj = {k: getattr(r, k) for k in _RECORD_KEYS}
            fh.write(json.dumps(obj, separators=(", ", ": ")) + "\n")


def load_captions(path: str | Path) -> dict[str, DescriptiveCaptionSet]:
    raw = json.loads(Path(path).read_text(encoding="utf-8"))
    return {
        vid: DescriptiveCaptionSet(vid, tuple(caps)) for vid, caps in raw.items()
    }


def save_captions(index: dict[str, DescriptiveCaptionSet], path: str | Path) -> None:
    raw = {vid: list(cs.captions) for vid, cs in sorted(index.items())}
    Path(path).write_text(json.dumps(raw, indent=2) + "\n", encoding="utf-8")


def load_ctn(path: str | Path) -> dict[str, CtnCaption]:
    raw = json.loads(Path(path).read_text(encoding="utf-8"))
    out: dict[str, CtnCaption] = {}
    for vid, obj in raw.items():
        out[vid] = CtnCaption(
            video_id=vid,
            cause=obj["Cause"],
            effect=obj["Effect"],
            emscore=obj.get("emscore"),
            attempts=obj.get("attempts"),
        )
    return out


def save_ctn(index: dict[str, CtnCaption], path: str | Path) -> None:
    # key names Cause/Effect match the generation prompt's JSON contract
    raw: dict[str, dict] = {}
    for vid, c in sorted(index.items()):
        obj: dict = {"Cause": c.cause, "Effect": c.effect}
        if c.emscore is not None:
            obj["emscore"] = c.emscore
        if c.attempts is not None:
            obj["attempts"] = c.attempts
        raw[vid] = obj
    Path(path).write_text(json.dumps(raw, indent=2) + "\n", encoding="utf-8")
