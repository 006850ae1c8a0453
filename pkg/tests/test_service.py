from fastapi.testclient import TestClient

from causalcap.humaneval import RatingRecord, RatingStore, build_eval_batch
from causalcap.service import create_app

VIDEOS = [
    ("v1", "a glass tips over", "water spills on the table"),
    ("v2", "a ball rolls off the shelf", "the ball bounces on the floor"),
]


def make_client(tmp_path, media_paths=None, store=None):
    batch = build_eval_batch(VIDEOS, ["r1", "r2"])
    store = store or RatingStore(tmp_path / "ratings.jsonl")
    app = create_app(batch, store, media_paths=media_paths)
    return TestClient(app), store


def rate(client, rater, video, scores=(4, 4, 4)):
    return client.post(
        "/api/eval/rating",
        json={
            "rater_id": rater,
            "video_id": video,
            "causal_accuracy": scores[0],
            "temporal_coherence": scores[1],
            "relevance": scores[2],
        },
    )


def test_next_assignment_flow(tmp_path):
    client, _ = make_client(tmp_path)
    r = client.get("/api/eval/next", params={"rater": "r1"})
    assert r.status_code == 200
    body = r.json()
    assert body == {
        "done": False,
        "video_id": "v1",
        "media_url": "/media/v1",
        "cause": "a glass tips over",
        "effect": "water spills on the table",
    }

    assert rate(client, "r1", "v1").status_code == 201
    assert client.get("/api/eval/next", params={"rater": "r1"}).json()["video_id"] == "v2"
    assert rate(client, "r1", "v2").status_code == 201
    assert client.get("/api/eval/next", params={"rater": "r1"}).json() == {
        "done": True,
        "video_id": None,
        "media_url": None,
        "cause": None,
        "effect": None,
    }
    # r2's queue is untouched by r1's progress
    assert client.get("/api/eval/next", params={"rater": "r2"}).json()["video_id"] == "v1"


def test_unknown_rater_and_missing_param(tmp_path):
    client, _ = make_client(tmp_path)
    assert client.get("/api/eval/next", params={"rater": "ghost"}).status_code == 404
    assert client.get("/api/eval/next").status_code == 422


def test_rating_validation_and_unknown_assignment(tmp_path):
    client, store = make_client(tmp_path)
    assert rate(client, "r1", "nope").status_code == 404
    assert rate(client, "ghost", "v1").status_code == 404
    assert rate(client, "r1", "v1", scores=(7, 0, 0)).status_code == 422
    assert rate(client, "r1", "v1", scores=(0, -1, 0)).status_code == 422
    bad = client.post("/api/eval/rating", json={"rater_id": "r1"})
    assert bad.status_code == 422
    assert len(store) == 0  # nothing invalid was persisted


def test_resubmission_overwrites_snapshot(tmp_path):
    client, store = make_client(tmp_path)
    first = rate(client, "r1", "v1", scores=(1, 1, 1))
    assert first.status_code == 201 and first.json() == {"accepted": True, "n_ratings": 1}
    second = rate(client, "r1", "v1", scores=(5, 5, 5))
    assert second.status_code == 201 and second.json()["n_ratings"] == 1
    assert store.get("r1", "v1").causal_accuracy == 5


def test_stats_endpoint(tmp_path):
    client, _ = make_client(tmp_path)
    assert client.get("/api/eval/stats").json()["n_ratings"] == 0
    rate(client, "r1", "v1", scores=(5, 4, 3))
    rate(client, "r1", "v2", scores=(3, 4, 5))
    body = client.get("/api/eval/stats").json()
    assert body["n_ratings"] == 2
    assert body["criteria"]["causal_accuracy"]["mean"] == 4.0
    assert body["criteria"]["causal_accuracy"]["icc"] is None  # single rater


def test_media_serving(tmp_path):
    clip = tmp_path / "v1.avi"
    clip.write_bytes(b"fake-bytes")
    client, _ = make_client(tmp_path, media_paths={"v1": clip})
    ok = client.get("/media/v1")
    assert ok.status_code == 200
    assert ok.content == b"fake-bytes"
    assert client.get("/media/v2").status_code == 404


def test_resumed_store_marks_assignments_done(tmp_path):
    store = RatingStore(tmp_path / "ratings.jsonl")
    store.add(RatingRecord("r1", "v1", 4, 4, 4))
    store.add(RatingRecord("stranger", "v9", 1, 1, 1))  # foreign row, ignored
    client, _ = make_client(tmp_path, store=store)
    assert client.get("/api/eval/next", params={"rater": "r1"}).json()["video_id"] == "v2"
