"""Prompt rendering and response parsing for cause/effect caption generation.

Templates live under templates/ as plain text assets so the exact bytes sent
to a backend stay auditable. Each generation template carries a single
<descriptive_captions> placeholder; everything around it is frozen.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from typing import Sequence

from .data import MAX_PART_WORDS, CtnCaption, DescriptiveCaptionSet, ManifestError
from .text import word_count

PLACEHOLDER = "<descriptive_captions>"

TEMPLATE_IDS = (
    "fewshot_v1",
    "zeroshot_minimal",
    "zeroshot_concise",
    "zeroshot_clear",
    "zeroshot_norules",
    "abl_no_grounding",
    "abl_no_temporal",
    "abl_no_limit",
    "abl_no_plain",
    "abl_no_conclusions",
    "abl_no_relevance",
)

FAILURE_CODES = (
    "not_json",
    "multiple_objects",
    "missing_keys",
    "extra_text",
    "word_limit",
    "empty_part",
)


class UnknownTemplateError(KeyError):
    pass


@lru_cache(maxsize=None)
def load_template(template_id: str) -> str:
    if template_id not in TEMPLATE_IDS:
        raise UnknownTemplateError(template_id)
    body = (resources.files("causalcap") / "templates" / f"{template_id}.txt").read_text(
        encoding="utf-8"
    )
    if body.count(PLACEHOLDER) != 1:
        raise ValueError(f"{template_id}: template must contain {PLACEHOLDER} exactly once")
    return body


def render(template_id: str, captions: DescriptiveCaptionSet | Sequence[str]) -> str:
    """Substitute the placeholder with one caption per line, order preserved."""
    caps = captions.captions if isinstance(captions, DescriptiveCaptionSet) else tuple(captions)
    if not caps:
        raise ValueError("caption list is empty")
    return load_template(template_id).replace(PLACEHOLDER, "\n".join(caps))


def captions_from_frame_texts(
    frame_captions: Sequence[str], video_id: str = "unlabeled"
) -> DescriptiveCaptionSet:
    """Wrap per-frame image captions so they can feed render() like any caption set."""
    if not frame_captions:
        raise ManifestError(f"{video_id}: no frame captions")
    return DescriptiveCaptionSet(video_id, tuple(frame_captions))


@lru_cache(maxsize=None)
def _judge_template(kind: str) -> str:
    if kind not in ("temporal", "causal"):
        raise UnknownTemplateError(kind)
    return (resources.files("causalcap") / "templates" / f"judge_{kind}.txt").read_text(
        encoding="utf-8"
    )


def render_judge(kind: str, ground_truth: str, generated: str) -> str:
    body = _judge_template(kind)
    return body.replace("<ground_truth>", ground_truth).replace("<generated>", generated)


@dataclass
class ParsedResponse:
    raw: str
    ctn: CtnCaption | None = None
    failure: str | None = None

    def __post_init__(self) -> None:
        if (self.ctn is None) == (self.failure is None):
            raise ValueError("exactly one of ctn/failure must be set")


def _strip_fences(text: str) -> str:
    text = text.strip()
    if text.startswith("```") and text.endswith("```"):
        inner = text[3:-3]
        # drop a language tag on the opening fence
        first_nl = inner.find("\n")
        if first_nl != -1 and " " not in inner[:first_nl].strip():
            inner = inner[first_nl + 1 :]
        return inner.strip()
    return text


def _object_spans(text: str) -> list[tuple[int, int]]:
    """Balanced top-level {...} spans, string-aware."""
    spans = []
    depth = 0
    start = -1
    in_string = False
    escaped = False
    for i, ch in enumerate(text):
        if in_string:
            if escaped:
                escaped = False
            elif ch == "\\":
                escaped = True
            elif ch == '"':
                in_string = False
            continue
        if ch == '"':
            in_string = True
        elif ch == "{":
            if depth == 0:
                start = i
            depth += 1
        elif ch == "}":
            if depth > 0:
                depth -= 1
                if depth == 0:
                    spans.append((start, i + 1))
    return spans


def _count_valid_objects(text: str) -> int:
    count = 0
    for lo, hi in _object_spans(text):
        try:
            json.loads(text[lo:hi])
            count += 1
        except json.JSONDecodeError:
            count += _count_valid_objects(text[lo + 1 : hi - 1])
    return count


def parse_response(raw: str, video_id: str = "candidate") -> ParsedResponse:
    """Classify a backend completion: one strict {"Cause", "Effect"} object, or why not.

    Failures are data, not exceptions; the filter loop logs them and retries.
    """
    text = _strip_fences(raw)
    try:
        obj = json.loads(text)
    except json.JSONDecodeError:
        spans = _object_spans(text)
        n_valid = _count_valid_objects(text)
        if n_valid >= 2:
            return ParsedResponse(raw, failure="multiple_objects")
        if n_valid == 1 and len(spans) >= 1:
            lo, hi = spans[0]
            outside = text[:lo] + text[hi:]
            if outside.strip():
                return ParsedResponse(raw, failure="extra_text")
        return ParsedResponse(raw, failure="not_json")

    if isinstance(obj, list):
        return ParsedResponse(raw, failure="multiple_objects")
    if not isinstance(obj, dict):
        return ParsedResponse(raw, failure="not_json")
    if any(isinstance(v, (dict, list)) for v in obj.values()):
        # nested structures mean the model emitted several captions at once
        return ParsedResponse(raw, failure="multiple_objects")
    if set(obj) == {"Cause", "Effect"}:
        cause, effect = obj["Cause"], obj["Effect"]
        if not isinstance(cause, str) or not isinstance(effect, str):
            return ParsedResponse(raw, failure="missing_keys")
        if word_count(cause) == 0 or word_count(effect) == 0:
            return ParsedResponse(raw, failure="empty_part")
        if word_count(cause) > MAX_PART_WORDS or word_count(effect) > MAX_PART_WORDS:
            return ParsedResponse(raw, failure="word_limit")
        return ParsedResponse(raw, ctn=CtnCaption(video_id, cause, effect))
    if {"Cause", "Effect"} <= set(obj):
        return ParsedResponse(raw, failure="extra_text")
    return ParsedResponse(raw, failure="missing_keys")
