from __future__ import annotations

import socket
import threading
import time

import uvicorn


class ServerThread:
    """Run an ASGI app under uvicorn on a background thread.

    The port is reserved at construction time, so URLs are known before the
    server starts; ``stop()`` followed by ``start()`` rebinds the same port,
    which is how tests simulate a restart of the target application.
    """

    def __init__(self, app, host: str = "127.0.0.1", port: int = 0, log_level: str = "warning"):
        self.app = app
        self.host = host
        self.log_level = log_level
        self._socket = self._bind(port)
        self.port = self._socket.getsockname()[1]
        self._server: uvicorn.Server | None = None
        self._thread: threading.Thread | None = None

    def _bind(self, port: int) -> socket.socket:
        # an explicit IPPROTO_TCP makes asyncio set TCP_NODELAY on accepted
        # connections; with proto 0 every response waits out a delayed ACK
        sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM, socket.IPPROTO_TCP)
        sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        sock.bind((self.host, port))
        return sock

    @property
    def url(self) -> str:
        return "http://%s:%d" % (self.host, self.port)

    @property
    def running(self) -> bool:
        return self._thread is not None and self._thread.is_alive()

    def start(self, timeout: float = 10.0) -> "ServerThread":
        if self.running:
            return self
        if self._socket is None:
            self._socket = self._bind(self.port)
        config = uvicorn.Config(
            self.app, log_level=self.log_level, access_log=False, lifespan="off", timeout_keep_alive=30
        )
        self._server = uvicorn.Server(config)
        sock, self._socket = self._socket, None
        self._thread = threading.Thread(target=self._server.run, kwargs={"sockets": [sock]}, daemon=True)
        self._thread.start()
        deadline = time.monotonic() + timeout
        while not self._server.started:
            if not self._thread.is_alive() or time.monotonic() > deadline:
                raise RuntimeError("server on port %d failed to start" % self.port)
            time.sleep(0.005)
        return self

    def stop(self, timeout: float = 10.0) -> None:
        if self._server is not None:
            self._server.should_exit = True
        if self._thread is not None:
            self._thread.join(timeout)
        self._server = None
        self._thread = None

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.stop()
