"""HTTP API contract tests with the scripted backend."""

import pytest
from fastapi.testclient import TestClient

from transittalk import policy
from transittalk.config import AppConfig
from transittalk.gateway import ScriptedGateway, load_transcript
from transittalk.hub import Hub, StateStore
from transittalk.server import create_app
from transittalk.vectorstore import VectorStore

from conftest import SCRIPTS, TESTDATA

STAFF = {"Authorization": "Bearer sekrit"}


def make_client(feed, fixture_alerts, tmp_path, script_names, staff_token="sekrit"):
    entries = []
    for name in script_names:
        entries.extend(load_transcript(SCRIPTS / f"{name}.txt"))
    store = VectorStore()
    policy.ingest_policies(TESTDATA / "policies", store)
    hub = Hub(
        feed,
        list(fixture_alerts),
        ScriptedGateway(entries),
        store,
        StateStore(tmp_path / "state.json"),
        clock=lambda: 1700000000.0,
    )
    config = AppConfig(script_path="unused", staff_token=staff_token)
    return TestClient(create_app(hub, config))


def test_health(feed, fixture_alerts, tmp_path):
    client = make_client(feed, fixture_alerts, tmp_path, [])
    body = client.get("/v1/health").json()
    assert body["status"] == "ok"
    assert body["stops"] == 4
    assert body["policy_chunks"] >= 3


def test_chat_two_turns(feed, fixture_alerts, tmp_path):
    client = make_client(feed, fixture_alerts, tmp_path, ["hub_two_turn"])
    first = client.post(
        "/v1/chat", json={"message": "can I take my bike on the GO train?"}
    ).json()
    assert first["app"] == "policy_navigator"
    assert first["citations"][0]["doc_id"] == "bikes.md"

    second = client.post(
        "/v1/chat",
        json={
            "session_id": first["session_id"],
            "message": "ok plan me a trip from Union to Oshawa around 8am with my bike",
        },
    ).json()
    assert second["app"] == "trip_advisor"
    assert "facts" in second
    assert "LE-105" in second["reply"]


def test_policy_ask_endpoint(feed, fixture_alerts, tmp_path):
    client = make_client(feed, fixture_alerts, tmp_path, ["policy_bike"])
    body = client.post(
        "/v1/policy/ask",
        json={"query": "can I bring my bike on the train?", "include_sources": True},
    ).json()
    assert body["citations"][0]["doc_id"] == "bikes.md"
    assert body["raw_segments"]
    assert "confidence_note" not in body


def test_draft_lifecycle(feed, fixture_alerts, tmp_path):
    client = make_client(
        feed, fixture_alerts, tmp_path, ["tweet_canceled_preset", "tweet_onhold_nocot"]
    )
    created = client.post(
        "/v1/tweets/draft", json={"alert_id": "A3", "format_mode": "preset"}, headers=STAFF
    )
    assert created.status_code == 200
    clean = created.json()
    assert clean["violations"] == []

    bad = client.post(
        "/v1/tweets/draft", json={"alert_id": "A1", "format_mode": "preset"}, headers=STAFF
    ).json()
    assert len(bad["violations"]) >= 2

    listing = client.get("/v1/tweets/drafts", headers=STAFF).json()["drafts"]
    assert [d["draft_id"] for d in listing] == [clean["draft_id"], bad["draft_id"]]
    assert listing[0]["trace_lines"]

    # approving the violating preset draft is refused
    refused = client.post(
        f"/v1/tweets/{bad['draft_id']}/review",
        json={"decision": "approve"},
        headers=STAFF,
    )
    assert refused.status_code == 409
    assert refused.json()["detail"]["error"] == "preset_violations"

    # the clean one approves exactly once
    first = client.post(
        f"/v1/tweets/{clean['draft_id']}/review",
        json={"decision": "approve", "note": "ok"},
        headers=STAFF,
    )
    assert first.status_code == 200
    assert first.json()["review_status"] == "approved"

    second = client.post(
        f"/v1/tweets/{clean['draft_id']}/review",
        json={"decision": "reject"},
        headers=STAFF,
    )
    assert second.status_code == 409
    assert second.json()["detail"]["error"] == "already_decided"


def test_draft_unknown_alert_404(feed, fixture_alerts, tmp_path):
    client = make_client(feed, fixture_alerts, tmp_path, [])
    response = client.post(
        "/v1/tweets/draft", json={"alert_id": "A9", "format_mode": "open"}, headers=STAFF
    )
    assert response.status_code == 404


def test_staff_endpoints_require_token(feed, fixture_alerts, tmp_path):
    client = make_client(feed, fixture_alerts, tmp_path, [])
    assert client.get("/v1/tweets/drafts").status_code == 401
    assert (
        client.get("/v1/tweets/drafts", headers={"Authorization": "Bearer wrong"}).status_code
        == 401
    )


def test_staff_endpoints_disabled_without_configured_token(feed, fixture_alerts, tmp_path):
    client = make_client(feed, fixture_alerts, tmp_path, [], staff_token=None)
    assert client.get("/v1/tweets/drafts", headers=STAFF).status_code == 403


def test_invalid_review_decision_422(feed, fixture_alerts, tmp_path):
    client = make_client(feed, fixture_alerts, tmp_path, [])
    response = client.post(
        "/v1/tweets/d-0001/review", json={"decision": "maybe"}, headers=STAFF
    )
    assert response.status_code == 422
