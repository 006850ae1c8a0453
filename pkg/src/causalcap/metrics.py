"""Reference-based caption metrics and the LLM-judged binary scores.

ROUGE-L and CIDEr are computed in-process over the shared tokenizer so the
metric vocabulary matches the caption model's. SPICE needs a scene-graph
parser and is delegated to an external tool behind a thin adapter; a missing
tool yields an explicit "skipped" marker, never a silent zero.
"""
from __future__ import annotations

import csv
import json
import math
import subprocess
import tempfile
import warnings
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from .data import CtnCaption, combine_caption
from .llm import GenerationRequest, LlmClient
from .prompts import render_judge
from .text import tokenize

ROUGE_BETA = 1.2
CIDER_MAX_N = 4


class InsufficientCorpusError(ValueError):
    pass


class MetricToolError(RuntimeError):
    pass


@dataclass
class EvalPair:
    video_id: str
    candidate: str
    references: list[str]

    def __post_init__(self) -> None:
        if not self.references:
            raise ValueError(f"{self.video_id}: at least one reference required")


def _lcs_len(a: list[str], b: list[str]) -> int:
    """Classic O(len(a)*len(b)) longest-common-subsequence table."""
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0] * (len(b) + 1)
        for j, y in enumerate(b, start=1):
            cur[j] = prev[j - 1] + 1 if x == y else max(prev[j], cur[j - 1])
        prev = cur
    return prev[-1]


def rouge_l(candidate: str, references: Sequence[str]) -> float:
    """LCS F-measure with beta=1.2, taking the best precision/recall over references."""
    cand_tokens = tokenize(candidate)
    if not cand_tokens:
        warnings.warn("empty candidate scored as 0", RuntimeWarning)
        return 0.0
    if not references:
        raise ValueError("at least one reference required")
    prec, rec = [], []
    for ref in references:
        ref_tokens = tokenize(ref)
        if not ref_tokens:
            continue
        lcs = _lcs_len(cand_tokens, ref_tokens)
        prec.append(lcs / len(cand_tokens))
        rec.append(lcs / len(ref_tokens))
    if not prec:
        raise ValueError("all references empty after tokenization")
    p, r = max(prec), max(rec)
    if p == 0 or r == 0:
        return 0.0
    beta_sq = ROUGE_BETA**2
    return (1 + beta_sq) * p * r / (r + beta_sq * p)


def _ngram_counts(tokens: list[str], max_n: int = CIDER_MAX_N) -> dict[tuple, int]:
    counts: dict[tuple, int] = defaultdict(int)
    for n in range(1, max_n + 1):
        for i in range(len(tokens) - n + 1):
            counts[tuple(tokens[i : i + n])] += 1
    return counts


@dataclass
class CiderReport:
    per_pair: dict[str, float]  # video_id -> score in [0, 10]
    corpus_mean: float
    reported: float  # corpus_mean * 100, the table convention


def cider(pairs: Sequence[EvalPair]) -> CiderReport:
    """TF-IDF n-gram cosine consensus over a corpus.

    Per pair: cosine between candidate and reference TF-IDF vectors for each
    n in 1..4, averaged then scaled by 10 (so a self-match scores 10).
    Document frequencies come from the reference side of the corpus.
    """
    if len(pairs) < 2:
        raise InsufficientCorpusError(
            "document frequencies need a corpus of >= 2 pairs"
        )
    ref_token_lists = [[tokenize(r) for r in p.references] for p in pairs]
    doc_freq: dict[tuple, int] = defaultdict(int)
    for ref_list in ref_token_lists:
        seen: set[tuple] = set()
        for ref_tokens in ref_list:
            seen.update(_ngram_counts(ref_tokens))
        for ng in seen:
            doc_freq[ng] += 1
    log_corpus = math.log(len(pairs))

    def tfidf(counts: dict[tuple, int]) -> tuple[list[dict[tuple, float]], list[float]]:
        vecs: list[dict[tuple, float]] = [dict() for _ in range(CIDER_MAX_N)]
        norms = [0.0] * CIDER_MAX_N
        for ng, tf in counts.items():
            idf = log_corpus - math.log(max(1.0, doc_freq[ng]))
            w = tf * idf
            vecs[len(ng) - 1][ng] = w
            norms[len(ng) - 1] += w * w
        return vecs, [math.sqrt(x) for x in norms]

    per_pair: dict[str, float] = {}
    for pair, ref_list in zip(pairs, ref_token_lists):
        cand_vecs, cand_norms = tfidf(_ngram_counts(tokenize(pair.candidate)))
        score_n = [0.0] * CIDER_MAX_N
        for ref_tokens in ref_list:
            ref_vecs, ref_norms = tfidf(_ngram_counts(ref_tokens))
            for n in range(CIDER_MAX_N):
                dot = sum(
                    w * ref_vecs[n].get(ng, 0.0) for ng, w in cand_vecs[n].items()
                )
                if cand_norms[n] > 0 and ref_norms[n] > 0:
                    score_n[n] += dot / (cand_norms[n] * ref_norms[n])
        n_refs = len(ref_list)
        per_pair[pair.video_id] = 10.0 * sum(score_n) / (CIDER_MAX_N * n_refs)
    corpus_mean = sum(per_pair.values()) / len(per_pair)
    return CiderReport(per_pair, corpus_mean, corpus_mean * 100.0)


@dataclass
class SpiceResult:
    skipped: bool
    scores: dict[str, float] | None = None
    reason: str | None = None


def spice_adapter(pairs: Sequence[EvalPair], tool_path: str | Path | None) -> SpiceResult:
    """Shell out to an external scorer; absent tool means an explicit skip."""
    if tool_path is None or not Path(tool_path).exists():
        return SpiceResult(skipped=True, reason=f"tool not found: {tool_path}")
    payload = [
        {"video_id": p.video_id, "candidate": p.candidate, "references": p.references}
        for p in pairs
    ]
    with tempfile.NamedTemporaryFile("w", suffix=".json", delete=False) as fh:
        json.dump(payload, fh)
        input_path = fh.name
    proc = subprocess.run(
        [str(tool_path), input_path], capture_output=True, text=True
    )
    if proc.returncode != 0:
        raise MetricToolError(f"tool exited {proc.returncode}: {proc.stderr[:500]}")
    try:
        scores = json.loads(proc.stdout)
        if not isinstance(scores, dict):
            raise ValueError("expected a video_id -> score object")
        scores = {str(k): float(v) for k, v in scores.items()}
    except (ValueError, TypeError) as exc:
        raise MetricToolError(
            f"malformed tool output: {exc}; payload starts {proc.stdout[:200]!r}"
        ) from exc
    return SpiceResult(skipped=False, scores=scores)


@dataclass
class JudgeResult:
    temporal_order: int
    causal_chain: int
    rationale: str
    flags: list[str] = field(default_factory=list)


def _parse_binary(text: str) -> tuple[int, bool]:
    """First token must be 0 or 1 (a trailing period is tolerated)."""
    stripped = text.strip()
    head = stripped.split()[0].rstrip(".") if stripped.split() else ""
    if head in ("0", "1"):
        return int(head), True
    return 0, False


def judge_pair(gt: CtnCaption, gen: str, client: LlmClient) -> JudgeResult:
    """Two deterministic judge calls: temporal order and causal chain, each binary.

    Unparseable judge output scores 0 and is flagged, erring conservative.
    """
    reference = combine_caption(gt)
    scores: dict[str, int] = {}
    raws: list[str] = []
    flags: list[str] = []
    for kind in ("temporal", "causal"):
        prompt = render_judge(kind, reference, gen)
        result = client.generate(
            GenerationRequest(prompt, temperature=0.0, backend_id=client.backend_id)
        )
        raws.append(result.text)
        value, ok = _parse_binary(result.text)
        scores[kind] = value
        if not ok:
            flags.append(f"{kind}_unparseable")
    return JudgeResult(
        temporal_order=scores["temporal"],
        causal_chain=scores["causal"],
        rationale=" | ".join(raws),
        flags=flags,
    )


def aggregate_judge(results: Sequence[JudgeResult]) -> dict[str, float]:
    """Corpus means on the 0-100 scale used in the comparison tables."""
    if not results:
        raise ValueError("no judge results")
    n = len(results)
    return {
        "temporal_order": 100.0 * sum(r.temporal_order for r in results) / n,
        "causal_chain": 100.0 * sum(r.causal_chain for r in results) / n,
    }


@dataclass
class ReportRow:
    video_id: str
    rouge_l: float
    cider: float
    spice: float | None = None
    temporal: int | None = None
    causal: int | None = None


def write_report_csv(rows: Sequence[ReportRow], path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["video_id", "ROUGE_L", "CIDEr", "SPICE", "temporal", "causal"])
        for r in rows:
            writer.writerow(
                [
                    r.video_id,
                    f"{r.rouge_l:.6f}",
                    f"{r.cider:.6f}",
                    "skipped" if r.spice is None else f"{r.spice:.6f}",
                    "" if r.temporal is None else r.temporal,
                    "" if r.causal is None else r.causal,
                ]
            )


def write_summary_json(
    rows: Sequence[ReportRow],
    cider_report: CiderReport,
    path: str | Path,
    judge_summary: dict[str, float] | None = None,
) -> dict:
    """Corpus summary in the shape of one comparison-table row."""
    summary = {
        "n_pairs": len(rows),
        "ROUGE_L": 100.0 * sum(r.rouge_l for r in rows) / len(rows),
        "CIDEr": cider_report.reported,
        "SPICE": None
        if any(r.spice is None for r in rows)
        else 100.0 * sum(r.spice for r in rows) / len(rows),
    }
    if judge_summary:
        summary.update(judge_summary)
    Path(path).write_text(json.dumps(summary, indent=2) + "\n", encoding="utf-8")
    return summary
