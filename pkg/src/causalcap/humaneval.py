"""Human-evaluation protocol: sampling, margin of error, inter-rater agreement.

Ratings use an integer 0-5 scale. The source protocol calls it a 5-point
Likert scale while also stating the 0-5 range, which is six values; this
implementation accepts 0-5 and leaves the naming discrepancy documented
rather than resolved.
"""
from __future__ import annotations

import json
import math
import threading
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.stats import f as f_dist
from scipy.stats import norm

CRITERIA = ("causal_accuracy", "temporal_coherence", "relevance")


class RatingError(ValueError):
    pass


@dataclass
class StratifiedSample:
    quotas: dict[str, int]
    sampled: dict[str, list[str]]


def stratified_sample(
    strata: Sequence[tuple[str, int | Sequence[str]]],
    n: int,
    seed: int = 0,
) -> StratifiedSample:
    """Proportional quotas via largest remainder, then uniform draws per stratum.

    A stratum's population may be a bare size (quotas only) or a sequence of
    ids (quotas plus the actual sample).
    """
    if n < 0:
        raise ValueError("n must be >= 0")
    sizes = {name: (pop if isinstance(pop, int) else len(pop)) for name, pop in strata}
    total = sum(sizes.values())
    if n > total:
        raise ValueError(f"n={n} exceeds total population {total}")

    exact = {name: n * size / total for name, size in sizes.items()}
    quotas = {name: math.floor(x) for name, x in exact.items()}
    leftover = n - sum(quotas.values())
    by_remainder = sorted(
        sizes, key=lambda name: exact[name] - quotas[name], reverse=True
    )
    for name in by_remainder[:leftover]:
        quotas[name] += 1

    for name, size in sizes.items():
        if quotas[name] > size:
            raise ValueError(f"stratum {name!r} smaller than its quota {quotas[name]}")

    rng = np.random.default_rng(seed)
    sampled: dict[str, list[str]] = {}
    for name, pop in strata:
        if isinstance(pop, int):
            sampled[name] = []
        else:
            picked = rng.choice(len(pop), size=quotas[name], replace=False)
            sampled[name] = [pop[i] for i in sorted(picked)]
    return StratifiedSample(quotas=quotas, sampled=sampled)


def margin_of_error(n: int, N: int, confidence: float) -> float:
    """Worst-case (p=0.5) margin with finite-population correction."""
    if not 0 < n <= N:
        raise ValueError(f"need 0 < n <= N, got n={n}, N={N}")
    if not 0 < confidence < 1:
        raise ValueError("confidence must be in (0, 1)")
    if N == 1:
        return 0.0
    z = norm.ppf(1 - (1 - confidence) / 2)
    return float(z * math.sqrt(0.25 / n) * math.sqrt((N - n) / (N - 1)))


@dataclass
class IccResult:
    icc: float
    ci: tuple[float, float]
    confidence: float
    flagged: bool = False


def icc_absolute(ratings: np.ndarray, confidence: float = 0.95) -> IccResult:
    """Two-way random effects, single rater, absolute agreement: ICC(2,1).

    ratings is a complete subjects x raters matrix. The confidence interval
    uses the Satterthwaite degrees of freedom with two-sided F quantiles.
    All ratings identical leaves the coefficient undefined; that limit is
    reported as 1.0 and flagged.
    """
    m = np.asarray(ratings, dtype=float)
    if m.ndim != 2:
        raise RatingError("ratings must be a 2-D matrix")
    n, k = m.shape
    if n < 2 or k < 2:
        raise RatingError("need at least 2 subjects and 2 raters")
    if np.isnan(m).any():
        raise RatingError("ratings matrix has missing cells")

    ss_total = np.var(m, ddof=1) * (n * k - 1)
    ms_r = np.var(m.mean(axis=1), ddof=1) * k
    ms_c = np.var(m.mean(axis=0), ddof=1) * n
    ms_e = (ss_total - ms_r * (n - 1) - ms_c * (k - 1)) / ((n - 1) * (k - 1))

    denom = ms_r + (k - 1) * ms_e + (k / n) * (ms_c - ms_e)
    if math.isclose(denom, 0.0, abs_tol=1e-12):
        return IccResult(icc=1.0, ci=(1.0, 1.0), confidence=confidence, flagged=True)
    coeff = (ms_r - ms_e) / denom

    alpha = 1 - confidence
    if ms_e <= 0:
        # no residual variance: the F machinery degenerates
        return IccResult(icc=coeff, ci=(coeff, coeff), confidence=confidence, flagged=True)
    fj = ms_c / ms_e
    vn = (k - 1) * (n - 1) * (k * coeff * fj + n * (1 + (k - 1) * coeff) - k * coeff) ** 2
    vd = (n - 1) * k**2 * coeff**2 * fj**2 + (n * (1 + (k - 1) * coeff) - k * coeff) ** 2
    v = vn / vd
    fl = f_dist.ppf(1 - alpha / 2, n - 1, v)
    fu = f_dist.ppf(1 - alpha / 2, v, n - 1)
    lbound = n * (ms_r - fl * ms_e) / (fl * (k * ms_c + (k * n - k - n) * ms_e) + n * ms_r)
    ubound = n * (fu * ms_r - ms_e) / (k * ms_c + (k * n - k - n) * ms_e + n * fu * ms_r)
    if not (math.isfinite(lbound) and math.isfinite(ubound)):
        return IccResult(icc=coeff, ci=(coeff, coeff), confidence=confidence, flagged=True)
    return IccResult(icc=float(coeff), ci=(float(lbound), float(ubound)), confidence=confidence)


@dataclass
class RatingRecord:
    rater_id: str
    video_id: str
    causal_accuracy: int
    temporal_coherence: int
    relevance: int
    timestamp: str = ""

    def __post_init__(self) -> None:
        for crit in CRITERIA:
            value = getattr(self, crit)
            if not isinstance(value, int) or not 0 <= value <= 5:
                raise RatingError(f"{crit} must be an integer in 0..5, got {value!r}")
        if not self.timestamp:
            self.timestamp = datetime.now(timezone.utc).isoformat()


@dataclass
class Assignment:
    rater_id: str
    video_id: str
    cause: str
    effect: str
    media_url: str
    status: str = "pending"  # pending | done


@dataclass
class EvalBatch:
    """Every sampled video is assigned to every rater (full crossing)."""

    assignments: list[Assignment]

    @property
    def raters(self) -> set[str]:
        return {a.rater_id for a in self.assignments}

    def pending_for(self, rater_id: str) -> list[Assignment]:
        return [a for a in self.assignments if a.rater_id == rater_id and a.status == "pending"]

    def mark_done(self, rater_id: str, video_id: str) -> None:
        for a in self.assignments:
            if a.rater_id == rater_id and a.video_id == video_id:
                a.status = "done"
                return
        raise KeyError((rater_id, video_id))


def build_eval_batch(
    videos: Sequence[tuple[str, str, str]],  # (video_id, cause, effect)
    raters: Sequence[str],
    media_url_prefix: str = "/media/",
) -> EvalBatch:
    assignments = [
        Assignment(
            rater_id=r,
            video_id=vid,
            cause=cause,
            effect=effect,
            media_url=f"{media_url_prefix}{vid}",
        )
        for r in raters
        for vid, cause, effect in videos
    ]
    return EvalBatch(assignments)


class RatingStore:
    """Append-only JSONL log with a derived latest-rating snapshot.

    Resubmission by the same (rater, video) overwrites the snapshot entry
    while the log keeps every accepted submission for audit.
    """

    def __init__(self, log_path: str | Path):
        self.log_path = Path(log_path)
        self._lock = threading.Lock()
        self._latest: dict[tuple[str, str], RatingRecord] = {}
        if self.log_path.exists():
            for line in self.log_path.read_text(encoding="utf-8").splitlines():
                if line.strip():
                    rec = RatingRecord(**json.loads(line))
                    self._latest[(rec.rater_id, rec.video_id)] = rec

    def add(self, record: RatingRecord) -> None:
        with self._lock:
            with self.log_path.open("a", encoding="utf-8") as fh:
                fh.write(json.dumps(asdict(record)) + "\n")
            self._latest[(record.rater_id, record.video_id)] = record

    def records(self) -> list[RatingRecord]:
        with self._lock:
            return list(self._latest.values())

    def get(self, rater_id: str, video_id: str) -> RatingRecord | None:
        return self._latest.get((rater_id, video_id))

    def __len__(self) -> int:
        return len(self._latest)


@dataclass
class CriterionStats:
    mean: float
    sd: float
    pct_ge_4: float
    pct_perfect: float
    icc: float | None = None
    icc_ci: tuple[float, float] | None = None
    icc_flagged: bool = False


def compute_stats(store: RatingStore, confidence: float = 0.95) -> dict:
    """Aggregate snapshot ratings per criterion; ICC appears once a complete
    >= 2 raters x >= 2 videos crossing exists."""
    records = store.records()
    out: dict = {"n_ratings": len(records), "criteria": {}}
    if not records:
        return out

    raters = sorted({r.rater_id for r in records})
    by_key = {(r.rater_id, r.video_id): r for r in records}
    videos_all = sorted({r.video_id for r in records})
    complete_videos = [
        v for v in videos_all if all((rater, v) in by_key for rater in raters)
    ]

    for crit in CRITERIA:
        values = [getattr(r, crit) for r in records]
        arr = np.asarray(values, dtype=float)
        stats = CriterionStats(
            mean=float(arr.mean()),
            sd=float(arr.std(ddof=0)),
            pct_ge_4=100.0 * float((arr >= 4).mean()),
            pct_perfect=100.0 * float((arr == 5).mean()),
        )
        if len(raters) >= 2 and len(complete_videos) >= 2:
            matrix = np.array(
                [
                    [getattr(by_key[(rater, v)], crit) for rater in raters]
                    for v in complete_videos
                ],
                dtype=float,
            )
            result = icc_absolute(matrix, confidence=confidence)
            stats.icc = result.icc
            stats.icc_ci = result.ci
            stats.icc_flagged = result.flagged
        out["criteria"][crit] = asdict(stats)

    all_values = np.asarray(
        [getattr(r, crit) for r in records for crit in CRITERIA], dtype=float
    )
    out["overall"] = {
        "mean": float(all_values.mean()),
        "sd": float(all_values.std(ddof=0)),
        "pct_ge_4": 100.0 * float((all_values >= 4).mean()),
        "pct_perfect": 100.0 * float((all_values == 5).mean()),
    }
    return out
