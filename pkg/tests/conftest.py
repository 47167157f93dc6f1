import logging
from pathlib import Path

import pytest
from cryptography.hazmat.primitives.serialization import load_pem_private_key

from authshim import mock_app
from authshim.service import login as shim_login
from authshim.harness import Federation
from authshim.saml.signature import load_certificate

ROOT = Path(__file__).resolve().parent.parent
CONFIG_DIR = ROOT / "config"


# --- secret hygiene bookkeeping -------------------------------------------
# Every admin token and every session token issued anywhere in the run is
# remembered, along with every log line; the hygiene check scans one against
# the other once all other tests have run.

class SecretLedger:
    def __init__(self):
        self.secrets: set[str] = set()
        self.log_lines: list[str] = []
        self.files: list[Path] = []
        self.outputs: list[str] = []

    def add_secret(self, value):
        if value:
            self.secrets.add(value)


LEDGER = SecretLedger()


class _Collector(logging.Handler):
    def emit(self, record):
        try:
            text = record.getMessage()
        except Exception:
            text = str(record.msg)
        if record.exc_info:
            text += "\n" + logging.Formatter().formatException(record.exc_info)
        LEDGER.log_lines.append(text)


_original_token = mock_app._new_session_token
_original_state_init = mock_app.AppState.__init__
_original_mint = shim_login.mint_shim_cookie


def _recording_token():
    token = _original_token()
    LEDGER.add_secret(token)
    return token


def _recording_state_init(self, admin_token, *args, **kwargs):
    LEDGER.add_secret(admin_token)
    _original_state_init(self, admin_token, *args, **kwargs)


def _recording_mint(*args, **kwargs):
    value = _original_mint(*args, **kwargs)
    LEDGER.add_secret(value)
    return value


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")
    config.addinivalue_line("markers", "runs_last: needs every other test to have run first")
    mock_app._new_session_token = _recording_token
    mock_app.AppState.__init__ = _recording_state_init
    shim_login.mint_shim_cookie = _recording_mint
    handler = _Collector(level=logging.DEBUG)
    logging.getLogger().addHandler(handler)
    logging.getLogger().setLevel(logging.INFO)
    logging.getLogger("authshim").setLevel(logging.DEBUG)


def pytest_collection_modifyitems(session, config, items):
    # the hygiene scan must see the logs of every other test
    last = [item for item in items if item.get_closest_marker("runs_last")]
    items[:] = [item for item in items if not item.get_closest_marker("runs_last")] + last


# --- acceptance reporting -------------------------------------------------

CRITERIA: dict[int, dict] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    number, title = marker.args
    entry = CRITERIA.setdefault(number, {"title": title, "passed": True, "ran": False, "details": []})
    if report.when == "call":
        entry["ran"] = True
    if report.failed:
        entry["passed"] = False
    if report.skipped:
        entry["passed"] = False
        entry["details"].append("skipped")
    entry["details"].extend(getattr(item, "criterion_details", []))
    item.criterion_details = []


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(CRITERIA):
        entry = CRITERIA[number]
        verdict = "PASS" if entry["passed"] and entry["ran"] else "FAIL"
        details = "; ".join(entry["details"])
        terminalreporter.write_line(
            "criterion %2d %s  %s%s" % (number, verdict, entry["title"], "  [%s]" % details if details else "")
        )


@pytest.fixture
def measure(request):
    """Attach a measured value to the acceptance summary line."""
    request.node.criterion_details = []

    def note(text):
        request.node.criterion_details.append(text)

    return note


# --- shared fixtures ------------------------------------------------------

@pytest.fixture(scope="session")
def secret_ledger():
    return LEDGER


@pytest.fixture(scope="session")
def idp_identity():
    key = load_pem_private_key((CONFIG_DIR / "mock-idp.key").read_bytes(), password=None)
    cert = load_certificate((CONFIG_DIR / "mock-idp.crt").read_bytes())
    return key, cert


@pytest.fixture
def federation(idp_identity):
    key, cert = idp_identity
    fed = Federation.in_process(idp_key=key, idp_certificate=cert, retry_delays=(0.0, 0.0))
    yield fed
    fed.close()


@pytest.fixture
def loopback(idp_identity):
    key, cert = idp_identity
    fed = Federation.loopback_federation(idp_key=key, idp_certificate=cert, retry_delays=(0.0, 0.0))
    yield fed
    fed.close()


@pytest.fixture
def login_reasons(caplog):
    """Failure categories of logins handled during the test, in order."""
    caplog.set_level(logging.INFO, logger="authshim.login")

    def reasons():
        found = []
        for record in caplog.records:
            message = record.getMessage()
            if record.name == "authshim.login" and message.startswith("login outcome="):
                fields = dict(part.split("=", 1) for part in message.split(" ")[1:] if "=" in part)
                found.append(fields["reason"])
        return found

    return reasons
