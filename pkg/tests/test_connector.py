import socket
from datetime import datetime, timedelta, timezone
from email.utils import format_datetime

import httpx
import pytest

from authshim.connector import (
    ConnectorError,
    ErrorKind,
    HttpAdminConnector,
    SessionGrant,
    classify_response,
    create_app_session,
    find_or_create_user,
)
from authshim.saml.assertion import UserInfo

TOKEN = "admin-token-for-connector-tests"


def scripted(responses, seen=None):
    """Connector over a transport that replays ``responses`` in order."""
    queue = list(responses)
    sleeps = []

    def handler(request):
        if seen is not None:
            seen.append(request)
        item = queue.pop(0)
        if isinstance(item, Exception):
            raise item
        return item

    client = httpx.Client(transport=httpx.MockTransport(handler))
    connector = HttpAdminConnector("http://app.test", TOKEN, client=client, sleep=sleeps.append)
    return connector, sleeps


@pytest.mark.parametrize("status,kind", [
    (401, ErrorKind.UNAUTHORIZED),
    (403, ErrorKind.UNAUTHORIZED),
    (404, ErrorKind.NOT_FOUND),
    (409, ErrorKind.CONFLICT),
    (429, ErrorKind.RATE_LIMITED),
    (500, ErrorKind.PROTOCOL_ERROR),
    (418, ErrorKind.PROTOCOL_ERROR),
    (503, ErrorKind.UNAVAILABLE),
])
def test_status_classification(status, kind):
    error = classify_response(httpx.Response(status), "op")
    assert error.kind is kind and error.http_status == status
    assert classify_response(httpx.Response(204), "op") is None


def test_retry_after_seconds_and_date():
    error = classify_response(httpx.Response(429, headers={"Retry-After": "2"}), "create_session")
    assert error.retry_after == 2.0
    later = datetime.now(timezone.utc) + timedelta(seconds=30)
    error = classify_response(httpx.Response(429, headers={"Retry-After": format_datetime(later, usegmt=True)}), "x")
    assert 25 <= error.retry_after <= 31


def test_error_detail_only_copies_short_codes():
    assert classify_response(httpx.Response(409, json={"error": "duplicate_email"}), "x").detail == "duplicate_email"
    noisy = classify_response(httpx.Response(500, json={"error": "stack trace: secret=abc"}), "x")
    assert noisy.detail == ""


def test_bearer_token_sent():
    seen = []
    connector, _ = scripted([httpx.Response(200, json={"users": []})], seen)
    assert connector.find_user_by_email("a@example.com") is None
    assert seen[0].headers["authorization"] == "Bearer " + TOKEN
    assert seen[0].url.params["email"] == "a@example.com"


def test_transport_failures_retried_with_backoff():
    connector, sleeps = scripted([
        httpx.ConnectError("refused"), httpx.ReadTimeout("slow"),
        httpx.Response(200, json={"roles": ["a"]}),
    ])
    assert connector.list_user_roles("1") == {"a"}
    assert sleeps == [0.1, 0.4]


def test_gives_up_after_two_retries():
    connector, sleeps = scripted([httpx.ConnectError("x")] * 3)
    with pytest.raises(ConnectorError) as caught:
        connector.list_user_roles("1")
    assert caught.value.kind is ErrorKind.UNAVAILABLE and len(sleeps) == 2


def test_timeout_classified():
    connector, _ = scripted([httpx.ReadTimeout("slow")] * 3)
    with pytest.raises(ConnectorError) as caught:
        connector.add_role("1", "admin")
    assert caught.value.kind is ErrorKind.TIMEOUT


def test_session_creation_is_not_retried():
    connector, sleeps = scripted([httpx.ReadTimeout("slow")])
    with pytest.raises(ConnectorError) as caught:
        connector.create_session("a@example.com")
    assert caught.value.kind is ErrorKind.TIMEOUT and sleeps == []


def test_rate_limit_not_retried():
    connector, sleeps = scripted([httpx.Response(429, headers={"Retry-After": "1"})])
    with pytest.raises(ConnectorError) as caught:
        connector.find_user_by_email("a@example.com")
    assert caught.value.kind is ErrorKind.RATE_LIMITED and caught.value.retry_after == 1.0 and sleeps == []


def test_malformed_bodies_are_protocol_errors():
    connector, _ = scripted([httpx.Response(200, text="<html>"), httpx.Response(200, json={"users": [{"id": 1}]})])
    for _ in range(2):
        with pytest.raises(ConnectorError) as caught:
            connector.find_user_by_email("a@example.com")
        assert caught.value.kind is ErrorKind.PROTOCOL_ERROR


def test_connection_refused_is_unavailable():
    with socket.socket() as sock:
        sock.bind(("127.0.0.1", 0))
        port = sock.getsockname()[1]
    connector = HttpAdminConnector("http://127.0.0.1:%d" % port, TOKEN, retry_delays=(0.0, 0.0))
    try:
        with pytest.raises(ConnectorError) as caught:
            connector.find_user_by_email("a@example.com")
        assert caught.value.kind is ErrorKind.UNAVAILABLE
        assert connector.health() is False
    finally:
        connector.close()


def test_admin_token_never_in_errors():
    connector, _ = scripted([httpx.Response(401, json={"error": "unauthorized"})])
    with pytest.raises(ConnectorError) as caught:
        connector.find_user_by_email("a@example.com")
    assert TOKEN not in str(caught.value) and TOKEN not in repr(connector)


def test_session_grant_repr_is_redacted():
    grant = SessionGrant("abcdefghijklmnopqrstuvwxyz")
    assert "abcdefgh" in repr(grant) and "ijklmnop" not in repr(grant)


# --- against the mock application -----------------------------------------

def alice(**kw):
    return UserInfo(kw.get("email", "alice@example.com"), ("g",), kw.get("display_name", "Alice"))


def test_absent_user_created_once(federation):
    user = find_or_create_user(alice(), federation.connector)
    assert user.newly_created
    snapshot = federation.app_state.snapshot()
    assert [(e.method, e.path) for e in snapshot.writes] == [("POST", "/api/users")]
    assert snapshot.user_by_email("alice@example.com").display_name == "Alice"


def test_existing_active_user_needs_no_writes(federation):
    federation.app_state.add_user("alice@example.com", "Alice")
    user = find_or_create_user(alice(), federation.connector)
    assert not user.newly_created and user.active
    assert federation.app_state.snapshot().writes == ()


def test_inactive_user_reactivated(federation):
    federation.app_state.add_user("alice@example.com", "Alice", active=False)
    user = find_or_create_user(alice(), federation.connector)
    assert user.active and not user.newly_created
    snapshot = federation.app_state.snapshot()
    assert snapshot.user_by_email("alice@example.com").active
    assert [e.method for e in snapshot.writes] == ["PUT"]


def test_creation_race_resolved_by_refind(federation):
    connector = federation.connector
    original = connector.create_user

    def racing_create(email, display_name=None):
        federation.app_state.add_user(email, "Winner")
        return original(email, display_name)

    connector.create_user = racing_create
    user = find_or_create_user(alice(), connector)
    assert user.email == "alice@example.com" and not user.newly_created
    assert len(federation.app_state.snapshot().users) == 1


def test_session_round_trip(federation):
    federation.app_state.add_user("alice@example.com")
    grant = create_app_session("alice@example.com", federation.connector)
    assert grant.token and grant.expires_at is not None
    assert federation.connector.check_session(grant.token) is True
    assert federation.connector.check_session("not-a-token") is False


def test_session_for_unknown_user_is_not_found(federation):
    with pytest.raises(ConnectorError) as caught:
        create_app_session("ghost@example.com", federation.connector)
    assert caught.value.kind is ErrorKind.NOT_FOUND


def test_throttled_session_surfaces_retry_after(federation):
    federation.app_state.add_user("alice@example.com")
    federation.app_state.set_faults(login_rate_cap=1)
    create_app_session("alice@example.com", federation.connector)
    with pytest.raises(ConnectorError) as caught:
        create_app_session("alice@example.com", federation.connector)
    assert caught.value.kind is ErrorKind.RATE_LIMITED and caught.value.retry_after == 1.0


def test_unavailable_app(federation):
    federation.app_state.set_faults(unavailable=True)
    with pytest.raises(ConnectorError) as caught:
        find_or_create_user(alice(), federation.connector)
    assert caught.value.kind is ErrorKind.UNAVAILABLE
    assert federation.connector.health() is False
    assert federation.app_state.snapshot().users == {}


def test_wrong_admin_token_is_unauthorized(federation):
    bad = HttpAdminConnector(federation.app_base, "wrong", client=federation.connector._client)
    with pytest.raises(ConnectorError) as caught:
        bad.find_user_by_email("alice@example.com")
    assert caught.value.kind is ErrorKind.UNAUTHORIZED
