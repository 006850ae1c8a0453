"""HTTP service for collecting human ratings of generated captions.

Endpoints:
    GET  /api/eval/next?rater=R   next pending assignment for rater R
    POST /api/eval/rating         submit one 0..5 rating triple (201 on accept)
    GET  /api/eval/stats          per-criterion stats plus agreement
    GET  /media/{video_id}        the underlying clip for playback
"""
from __future__ import annotations

from pathlib import Path

from fastapi import FastAPI, HTTPException, Query
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import FileResponse
from pydantic import BaseModel, Field

from .humaneval import EvalBatch, RatingRecord, RatingStore, compute_stats


class NextAssignment(BaseModel):
    done: bool
    video_id: str | None = None
    media_url: str | None = None
    cause: str | None = None
    effect: str | None = None


class RatingIn(BaseModel):
    rater_id: str = Field(min_length=1)
    video_id: str = Field(min_length=1)
    causal_accuracy: int = Field(ge=0, le=5)
    temporal_coherence: int = Field(ge=0, le=5)
    relevance: int = Field(ge=0, le=5)


class RatingAck(BaseModel):
    accepted: bool
    n_ratings: int


def create_app(
    batch: EvalBatch,
    store: RatingStore,
    media_paths: dict[str, Path] | None = None,
) -> FastAPI:
    """Wire one evaluation batch and its persistent store into an app.

    Ratings already in the store (a resumed session) are replayed so their
    assignments start out done.
    """
    app = FastAPI(title="caption rating service")
    app.add_middleware(
        CORSMiddleware,
        allow_origins=["*"],
        allow_methods=["*"],
        allow_headers=["*"],
    )
    media_paths = media_paths or {}

    for record in store.records():
        try:
            batch.mark_done(record.rater_id, record.video_id)
        except KeyError:
            pass  # store may span batches; foreign rows are ignored

    @app.get("/api/eval/next", response_model=NextAssignment)
    def next_assignment(rater: str = Query(min_length=1)) -> NextAssignment:
        if rater not in batch.raters:
            raise HTTPException(status_code=404, detail=f"unknown rater {rater!r}")
        pending = batch.pending_for(rater)
        if not pending:
            return NextAssignment(done=True)
        a = pending[0]
        return NextAssignment(
            done=False,
            video_id=a.video_id,
            media_url=a.media_url,
            cause=a.cause,
            effect=a.effect,
        )

    @app.post("/api/eval/rating", response_model=RatingAck, status_code=201)
    def submit_rating(rating: RatingIn) -> RatingAck:
        try:
            batch.mark_done(rating.rater_id, rating.video_id)
        except KeyError:
            raise HTTPException(
                status_code=404,
                detail=f"no assignment for rater {rating.rater_id!r} and video {rating.video_id!r}",
            )
        store.add(
            RatingRecord(
                rater_id=rating.rater_id,
                video_id=rating.video_id,
                causal_accuracy=rating.causal_accuracy,
                temporal_coherence=rating.temporal_coherence,
                relevance=rating.relevance,
            )
        )
        return RatingAck(accepted=True, n_ratings=len(store))

    @app.get("/api/eval/stats")
    def stats() -> dict:
        return compute_stats(store)

    @app.get("/media/{video_id}")
    def media(video_id: str) -> FileResponse:
        path = media_paths.get(video_id)
        if path is None or not Path(path).exists():
            raise HTTPException(status_code=404, detail=f"no media for {video_id!r}")
        return FileResponse(path)

    return app
