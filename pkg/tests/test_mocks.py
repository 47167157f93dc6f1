import warnings

import pytest

from authshim.connector import HttpAdminConnector
from authshim.harness import _test_client
from authshim.mock_app import AppState, create_mock_app
from authshim.mock_idp import FaultDirective, load_directory
from authshim.saml import SamlError, extract_user_info, parse_response, validate_conditions, verify_signature
from authshim.saml.signature import load_certificate

from support import T0, issue, make_config, make_idp


def _category(config, idp, fault):
    xml, tracker = issue(config, idp, fault=fault)
    try:
        identity = validate_conditions(verify_signature(parse_response(xml), config.idp_certificate), config, tracker, T0)
        extract_user_info(identity)
    except SamlError as exc:
        return exc.category
    return "accepted"


def test_faults_map_to_distinct_rejections(idp_identity):
    config = make_config(idp_identity[1])
    idp = make_idp(idp_identity)
    categories = {fault: _category(config, idp, fault) for fault in FaultDirective}
    assert categories.pop(FaultDirective.NONE) == "accepted"
    assert "accepted" not in categories.values()
    assert len(set(categories.values())) == len(categories), categories


def test_fault_names_parse():
    assert FaultDirective.parse(None) is FaultDirective.NONE
    assert FaultDirective.parse("omitgroups") is FaultDirective.OMIT_GROUPS
    assert FaultDirective.parse("BAD_SIGNATURE") is FaultDirective.BAD_SIGNATURE
    with pytest.raises(ValueError):
        FaultDirective.parse("nonsense")


def test_directory_loading():
    users = load_directory("users:\n  - {email: a@x, display_name: A, groups: [g1, g2]}\n")
    assert users[0].groups == ("g1", "g2")


def test_idp_endpoints(federation):
    client = federation.browser().clients("http://idp.test")
    meta = client.get("http://idp.test/metadata").json()
    assert meta["entity_id"] == "urn:mock-idp" and meta["sso_url"] == "http://idp.test/sso"
    assert load_certificate(meta["certificate_pem"].encode()) == federation.idp_certificate
    listing = client.get("http://idp.test/directory").json()
    assert {entry["email"] for entry in listing} == {u.email for u in federation.directory}
    assert client.get("http://idp.test/sso?SAMLRequest=garbage").status_code == 400


def test_unknown_user_and_fault(federation):
    assert federation.login("nobody@example.com").status_code == 404
    assert federation.login("admin@example.com", fault="Wobbly").status_code == 400
    assert federation.app_state.snapshot().users == {}


# --- mock application -------------------------------------------------------

TOKEN = "mock-app-admin-token-5b1e0c"

@pytest.fixture
def app():
    state = AppState(TOKEN)
    client = _test_client(create_mock_app(state), "http://app.test")
    yield state, client
    client.close()


AUTH = {"Authorization": "Bearer " + TOKEN}


def test_wrong_or_missing_token_is_401_and_logged(app):
    state, client = app
    assert client.get("/api/users").status_code == 401
    assert client.get("/api/users", headers={"Authorization": "Bearer nope"}).status_code == 401
    assert client.post("/api/users", json={"email": "a@x"}, headers={"Authorization": TOKEN}).status_code == 401
    snapshot = state.snapshot()
    assert snapshot.users == {}
    assert [e.outcome for e in snapshot.ledger] == ["401"] * 3


def test_every_request_is_in_the_ledger(app):
    state, client = app
    calls = [
        ("POST", "/api/users", {"email": "a@x"}),
        ("POST", "/api/users", {"email": "a@x"}),
        ("GET", "/api/users?email=a@x", None),
        ("POST", "/api/users/1/roles", {"role": "r"}),
        ("DELETE", "/api/users/1/roles/r", None),
        ("PUT", "/api/users/1/active", {"active": False}),
        ("POST", "/api/session", {"email": "a@x"}),
        ("PUT", "/api/users/9/active", {"active": True}),
    ]
    statuses = [client.request(m, p, json=b, headers=AUTH).status_code for m, p, b in calls]
    assert statuses == [201, 409, 200, 201, 204, 200, 404, 404]
    ledger = state.snapshot().ledger
    assert [(e.method, e.outcome) for e in ledger] == [(m, str(s)) for (m, _, _), s in zip(calls, statuses)]


def test_session_validity(app):
    state, client = app
    state.add_user("a@x")
    token = client.post("/api/session", json={"email": "a@x"}, headers=AUTH).json()["token"]
    check = lambda t: client.get("/api/session/validate", headers={**AUTH, "X-App-Session": t}).status_code
    assert check(token) == 200 and check("x") == 401
    state.users["1"].active = False
    assert check(token) == 401


def test_health_follows_fault(app):
    state, client = app
    assert client.get("/api/health").status_code == 200
    state.set_faults(unavailable=True)
    assert client.get("/api/health").status_code == 503
    assert client.get("/api/users", headers=AUTH).status_code == 503


def test_login_rate_cap(app):
    state, client = app
    state.add_user("a@x")
    state.set_faults(login_rate_cap=3)
    codes = [client.post("/api/session", json={"email": "a@x"}, headers=AUTH).status_code for _ in range(5)]
    assert codes == [201, 201, 201, 429, 429]


def test_role_write_budget(app):
    state, client = app
    state.add_user("a@x")
    state.set_faults(role_write_budget=1)
    assert client.post("/api/users/1/roles", json={"role": "a"}, headers=AUTH).status_code == 201
    assert client.post("/api/users/1/roles", json={"role": "b"}, headers=AUTH).status_code == 503


def test_control_surface(app):
    state, client = app
    faults = client.post("/control/faults", json={"added_latency_ms": 5, "login_rate_cap": 7}).json()
    assert faults["login_rate_cap"] == 7 and faults["added_latency_ms"] == 5.0
    state.add_user("a@x", roles={"r"})
    snap = client.get("/control/snapshot").json()
    assert snap["users"][0]["roles"] == ["r"]
    client.post("/control/reset")
    assert state.snapshot().users == {} and state.faults.login_rate_cap is None


def test_control_refuses_remote_clients():
    state = AppState(TOKEN)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        from starlette.testclient import TestClient
    with TestClient(create_mock_app(state), client=("203.0.113.9", 5000)) as client:
        assert client.post("/control/reset").status_code == 403
        assert client.post("/control/faults", json={"unavailable": True}).status_code == 403
        assert client.get("/control/snapshot").status_code == 403
    assert state.faults.unavailable is False


def test_ledger_file(tmp_path):
    path = tmp_path / "ledger.jsonl"
    state = AppState(TOKEN, ledger_path=path)
    state.record("GET", "/api/users", 200)
    assert '"method": "GET"' in path.read_text()


def test_restart_on_same_port_simulates_outage(loopback):
    connector = HttpAdminConnector(loopback.app_base, loopback.admin_token, retry_delays=(0.0, 0.0))
    try:
        assert connector.health()
        loopback.app_server.stop()
        assert not connector.health()
        loopback.app_server.start()
        assert connector.health()
    finally:
        connector.close()
