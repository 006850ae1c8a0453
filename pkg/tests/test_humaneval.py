import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from causalcap.humaneval import (
    CRITERIA,
    EvalBatch,
    RatingError,
    RatingRecord,
    RatingStore,
    build_eval_batch,
    compute_stats,
    icc_absolute,
    margin_of_error,
    stratified_sample,
)

import oracles


def test_quota_example_large_remainder_wins():
    # 100 * 10000/11970 = 83.54 -> rounds up; 100 * 1970/11970 = 16.46 -> down
    sample = stratified_sample([("big", 10000), ("small", 1970)], n=100)
    assert sample.quotas == {"big": 84, "small": 16}


def test_single_stratum_and_zero_n():
    assert stratified_sample([("only", 50)], 7).quotas == {"only": 7}
    sample = stratified_sample([("a", 5), ("b", 5)], 0)
    assert sample.quotas == {"a": 0, "b": 0}
    assert all(not ids for ids in sample.sampled.values())


def test_sampling_uses_ids_without_replacement():
    ids = [f"x{i}" for i in range(10)]
    sample = stratified_sample([("a", ids), ("b", 10)], n=10, seed=3)
    assert len(sample.sampled["a"]) == sample.quotas["a"]
    assert len(set(sample.sampled["a"])) == len(sample.sampled["a"])
    assert set(sample.sampled["a"]) <= set(ids)
    # seeded determinism
    again = stratified_sample([("a", ids), ("b", 10)], n=10, seed=3)
    assert again.sampled == sample.sampled


def test_n_above_population_rejected():
    with pytest.raises(ValueError):
        stratified_sample([("a", 3)], 4)
    with pytest.raises(ValueError):
        stratified_sample([("a", 3)], -1)


@settings(max_examples=100, deadline=None)
@given(
    st.lists(st.integers(min_value=1, max_value=500), min_size=1, max_size=6),
    st.integers(min_value=0, max_value=100),
)
def test_quotas_always_sum_to_n(sizes, n):
    total = sum(sizes)
    n = min(n, total)
    strata = [(f"s{i}", size) for i, size in enumerate(sizes)]
    sample = stratified_sample(strata, n)
    assert sum(sample.quotas.values()) == n
    assert all(sample.quotas[name] <= size for name, size in strata)


def test_margin_of_error_paper_point():
    assert margin_of_error(100, 11970, 0.90) == pytest.approx(0.082, abs=5e-4)


def test_margin_of_error_limits():
    assert margin_of_error(100, 100, 0.90) == 0.0
    # without the finite-population correction: 1.645 * 0.05
    big = margin_of_error(100, 10**9, 0.90)
    assert big == pytest.approx(1.6449 * 0.05, abs=1e-4)


def test_margin_of_error_validation():
    with pytest.raises(ValueError):
        margin_of_error(0, 10, 0.9)
    with pytest.raises(ValueError):
        margin_of_error(11, 10, 0.9)


@given(st.integers(min_value=2, max_value=500))
def test_margin_strictly_decreasing_in_n(n):
    N = 1000
    assert margin_of_error(n, N, 0.9) < margin_of_error(n - 1, N, 0.9)


# classic six-subject, four-rater inter-rater matrix
SIX_BY_FOUR = [
    [9, 2, 5, 8],
    [6, 1, 3, 2],
    [8, 4, 6, 8],
    [7, 1, 2, 6],
    [10, 5, 6, 9],
    [6, 2, 4, 7],
]


def test_icc_matches_spreadsheet_oracle():
    matrix = np.array(SIX_BY_FOUR, dtype=float)
    result = icc_absolute(matrix)
    assert result.icc == pytest.approx(oracles.anova_icc_oracle(SIX_BY_FOUR), abs=1e-4)
    assert result.icc == pytest.approx(0.29, abs=5e-3)
    assert not result.flagged
    lo, hi = result.ci
    assert lo < result.icc < hi


def test_icc_six_by_three_worked_case():
    matrix = np.array([row[:3] for row in SIX_BY_FOUR], dtype=float)
    assert icc_absolute(matrix).icc == pytest.approx(
        oracles.anova_icc_oracle([row[:3] for row in SIX_BY_FOUR]), abs=1e-4
    )


def test_icc_identical_ratings_limit():
    matrix = np.full((4, 3), 3.0)
    result = icc_absolute(matrix)
    assert result.icc == 1.0 and result.flagged


def test_icc_perfect_agreement_with_subject_variance():
    matrix = np.array([[1, 1], [2, 2], [3, 3], [4, 4]], dtype=float)
    result = icc_absolute(matrix)
    assert result.icc == pytest.approx(1.0)


def test_icc_validation():
    with pytest.raises(RatingError):
        icc_absolute(np.zeros((1, 3)))
    with pytest.raises(RatingError):
        icc_absolute(np.zeros(4))
    bad = np.full((3, 3), 1.0)
    bad[0, 0] = np.nan
    with pytest.raises(RatingError):
        icc_absolute(bad)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10**6), st.integers(-5, 5))
def test_icc_invariant_to_shift_and_rater_relabeling(seed, shift):
    rng = np.random.default_rng(seed)
    matrix = rng.integers(0, 6, size=(5, 4)).astype(float)
    base = icc_absolute(matrix)
    if base.flagged:
        return
    shifted = icc_absolute(matrix + shift)
    assert shifted.icc == pytest.approx(base.icc, abs=1e-9)
    permuted = icc_absolute(matrix[:, rng.permutation(4)])
    assert permuted.icc == pytest.approx(base.icc, abs=1e-9)


def test_rating_record_validation():
    RatingRecord("r1", "v1", 0, 5, 3)
    with pytest.raises(ValueError):
        RatingRecord("r1", "v1", 6, 0, 0)
    with pytest.raises(ValueError):
        RatingRecord("r1", "v1", -1, 0, 0)
    with pytest.raises(ValueError):
        RatingRecord("r1", "v1", 2.5, 0, 0)


def test_eval_batch_full_crossing():
    batch = build_eval_batch(
        [("v1", "causeA", "effectA"), ("v2", "causeB", "effectB")], ["r1", "r2", "r3"]
    )
    assert len(batch.assignments) == 6
    assert batch.raters == {"r1", "r2", "r3"}
    assert len(batch.pending_for("r1")) == 2
    batch.mark_done("r1", "v1")
    assert len(batch.pending_for("r1")) == 1
    with pytest.raises(KeyError):
        batch.mark_done("r1", "ghost")


def test_store_replays_and_overwrites(tmp_path):
    log = tmp_path / "ratings.jsonl"
    store = RatingStore(log)
    store.add(RatingRecord("r1", "v1", 1, 1, 1))
    store.add(RatingRecord("r1", "v1", 4, 4, 4))  # resubmission overwrites
    assert len(store) == 1
    assert store.get("r1", "v1").causal_accuracy == 4
    assert len(log.read_text().splitlines()) == 2  # audit keeps both

    reloaded = RatingStore(log)
    assert len(reloaded) == 1
    assert reloaded.get("r1", "v1").relevance == 4


def test_compute_stats_shapes_and_icc_gate(tmp_path):
    store = RatingStore(tmp_path / "r.jsonl")
    stats = compute_stats(store)
    assert stats["n_ratings"] == 0

    store.add(RatingRecord("r1", "v1", 5, 4, 5))
    stats = compute_stats(store)
    assert stats["criteria"]["causal_accuracy"]["icc"] is None  # one rater: no ICC

    store.add(RatingRecord("r2", "v1", 4, 4, 4))
    store.add(RatingRecord("r1", "v2", 2, 3, 1))
    stats = compute_stats(store)
    assert stats["criteria"]["relevance"]["icc"] is None  # v2 not fully crossed yet

    store.add(RatingRecord("r2", "v2", 1, 2, 2))
    stats = compute_stats(store)
    assert stats["n_ratings"] == 4
    for crit in CRITERIA:
        block = stats["criteria"][crit]
        assert set(block) >= {"mean", "sd", "pct_ge_4", "pct_perfect", "icc", "icc_ci"}
        assert block["icc"] is not None
    causal = stats["criteria"]["causal_accuracy"]
    assert causal["mean"] == pytest.approx((5 + 4 + 2 + 1) / 4)
    assert causal["pct_ge_4"] == pytest.approx(50.0)
    assert causal["pct_perfect"] == pytest.approx(25.0)
    assert "overall" in stats
