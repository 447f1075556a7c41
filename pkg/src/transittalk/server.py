"""HTTP API over the hub, plus static hosting for the web console.

All bodies are JSON. Staff endpoints require `Authorization: Bearer
<staff token>`; the same bearer on /v1/chat marks the session as staff so
the router may reach the tweet writer.
"""

from __future__ import annotations

import logging
from typing import Literal

from fastapi import Depends, FastAPI, Header, HTTPException
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel

from .config import AppConfig
from .gateway import GatewayError
from .hub import Hub, PersistenceError, UnknownAlert
from .policy import EmptyQuery, answer_policy_query
from .tweets import (
    AlreadyDecided,
    FormatMode,
    OverLength,
    TweetDraft,
    UnknownDraft,
    ViolationsPresent,
    draft_to_dict,
)
from .vectorstore import EmptyStore

logger = logging.getLogger(__name__)


class ChatRequest(BaseModel):
    session_id: str | None = None
    message: str


class DraftRequest(BaseModel):
    alert_id: str
    format_mode: Literal["preset", "open"]


class ReviewRequest(BaseModel):
    decision: Literal["approve", "reject"]
    note: str | None = None


class AskRequest(BaseModel):
    query: str
    include_sources: bool = False


def _draft_payload(draft: TweetDraft) -> dict:
    return draft_to_dict(draft)


def create_app(hub: Hub, config: AppConfig) -> FastAPI:
    app = FastAPI(title="transittalk", version="0.1.0")

    def _is_staff(authorization: str | None) -> bool:
        if not config.staff_token or not authorization:
            return False
        scheme, _, token = authorization.partition(" ")
        return scheme.lower() == "bearer" and token == config.staff_token

    def require_staff(authorization: str | None = Header(default=None)) -> None:
        if not config.staff_token:
            raise HTTPException(status_code=403, detail="staff token not configured")
        if not _is_staff(authorization):
            raise HTTPException(status_code=401, detail="staff bearer token required")

    @app.get("/v1/health")
    def health() -> dict:
        return {
            "status": "ok",
            "backend": type(hub.gateway).__name__,
            "stops": len(hub.feed.stops),
            "alerts": len(hub.alerts),
            "policy_chunks": len(hub.vector_store),
        }

    @app.post("/v1/chat")
    def chat(body: ChatRequest, authorization: str | None = Header(default=None)) -> dict:
        try:
            result = hub.handle_message(
                body.session_id, body.message, staff=_is_staff(authorization)
            )
        except PersistenceError as exc:
            raise HTTPException(status_code=503, detail=str(exc)) from exc
        except GatewayError as exc:
            raise HTTPException(status_code=502, detail=str(exc)) from exc
        payload: dict = {
            "session_id": result.session_id,
            "reply": result.reply,
            "app": result.app.value,
        }
        if result.facts is not None:
            payload["facts"] = result.facts
        if result.citations is not None:
            payload["citations"] = result.citations
        return payload

    @app.get("/v1/tweets/drafts", dependencies=[Depends(require_staff)])
    def list_drafts() -> dict:
        return {"drafts": [_draft_payload(d) for d in hub.queue.list_drafts()]}

    @app.post("/v1/tweets/draft", dependencies=[Depends(require_staff)])
    def create_draft(body: DraftRequest) -> dict:
        try:
            draft = hub.compose_draft(body.alert_id, FormatMode(body.format_mode))
        except UnknownAlert as exc:
            raise HTTPException(status_code=404, detail=str(exc)) from exc
        except OverLength as exc:
            raise HTTPException(status_code=422, detail=str(exc)) from exc
        except PersistenceError as exc:
            raise HTTPException(status_code=503, detail=str(exc)) from exc
        except GatewayError as exc:
            raise HTTPException(status_code=502, detail=str(exc)) from exc
        return _draft_payload(draft)

    @app.post("/v1/tweets/{draft_id}/review", dependencies=[Depends(require_staff)])
    def review_draft(draft_id: str, body: ReviewRequest) -> dict:
        try:
            draft = hub.queue.review(draft_id, body.decision == "approve", body.note)
        except UnknownDraft as exc:
            raise HTTPException(status_code=404, detail=str(exc)) from exc
        except AlreadyDecided as exc:
            raise HTTPException(
                status_code=409, detail={"error": "already_decided", "message": str(exc)}
            ) from exc
        except ViolationsPresent as exc:
            raise HTTPException(
                status_code=409, detail={"error": "preset_violations", "message": str(exc)}
            ) from exc
        except PersistenceError as exc:
            raise HTTPException(status_code=503, detail=str(exc)) from exc
        return _draft_payload(draft)

    @app.post("/v1/policy/ask")
    def ask(body: AskRequest) -> dict:
        try:
            answer = answer_policy_query(
                body.query,
                store=hub.vector_store,
                gateway=hub.gateway,
                k=hub.retrieval_k,
                include_sources=body.include_sources,
                threshold=hub.confidence_threshold,
            )
        except (EmptyQuery, EmptyStore) as exc:
            raise HTTPException(status_code=422, detail=str(exc)) from exc
        except GatewayError as exc:
            raise HTTPException(status_code=502, detail=str(exc)) from exc
        payload: dict = {
            "answer": answer.answer_text,
            "citations": [
                {
                    "doc_id": c.doc_id,
                    "chunk_id": c.chunk_id,
                    "score": c.score,
                    "title": c.title,
                    "span": [c.start, c.end],
                }
                for c in answer.citations
            ],
        }
        if answer.raw_segments is not None:
            payload["raw_segments"] = answer.raw_segments
        if answer.confidence_note is not None:
            payload["confidence_note"] = answer.confidence_note
        return payload

    if config.ui_dir:
        app.mount("/", StaticFiles(directory=config.ui_dir, html=True), name="console")

    return app
