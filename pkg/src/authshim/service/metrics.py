from prometheus_client import CollectorRegistry, Counter, Histogram, generate_latest
from prometheus_client.exposition import CONTENT_TYPE_LATEST

LOGIN_BUCKETS_MS = (5, 10, 25, 50, 100, 250, 500, 1000, 2500, 5000, 10000)


class ShimMetrics:
    """Per-app registry, so several shim instances can live in one process."""

    content_type = CONTENT_TYPE_LATEST

    def __init__(self):
        self.registry = CollectorRegistry()
        self.logins = Counter("logins", "Completed login attempts", ["outcome"], registry=self.registry)
        self.validations = Counter("validate", "Session validations", ["verdict"], registry=self.registry)
        self.login_duration = Histogram(
            "login_duration_ms", "Login handling time in milliseconds",
            buckets=LOGIN_BUCKETS_MS, registry=self.registry,
        )

    def observe_login(self, outcome: str, elapsed_ms: float) -> None:
        self.logins.labels(outcome=outcome).inc()
        self.login_duration.observe(elapsed_ms)

    def observe_validation(self, verdict: str) -> None:
        self.validations.labels(verdict=verdict).inc()

    def render(self) -> bytes:
        return generate_latest(self.registry)
