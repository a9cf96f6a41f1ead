"""Thin HTTP/1.1 adapter over the service's JSON dispatch."""

from __future__ import annotations

import json
import logging
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

from .service import Service, dispatch

log = logging.getLogger(__name__)


def _make_handler(service: Service):
    class Handler(BaseHTTPRequestHandler):
        protocol_version = "HTTP/1.1"

        def _respond(self):
            length = int(self.headers.get("Content-Length") or 0)
            body = None
            if length:
                try:
                    body = json.loads(self.rfile.read(length).decode("utf-8"))
                except (UnicodeDecodeError, json.JSONDecodeError):
                    self._write(400, {"error": {"code": "BadRequest",
                                                "message": "body is not valid JSON"}}, {})
                    return
            status, payload, headers = dispatch(service, self.command,
                                                self.path, body)
            self._write(status, payload, headers)

        def _write(self, status: int, payload: dict, headers: dict):
            blob = json.dumps(payload).encode("utf-8")
            self.send_response(status)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(blob)))
            for k, v in headers.items():
                self.send_header(k, v)
            self.end_headers()
            self.wfile.write(blob)

        do_GET = do_POST = do_DELETE = _respond

        def log_message(self, fmt, *args):
            log.debug("http: " + fmt, *args)

    return Handler


class RestServer:
    """Owns the TCP listener; the service keeps owning workers and state."""

    def __init__(self, service: Service, host: str = "localhost", port: int = 6006):
        self.service = service
        self._httpd = ThreadingHTTPServer((host, port), _make_handler(service))
        self._httpd.daemon_threads = True
        self._thread: threading.Thread | None = None

    @property
    def address(self) -> str:
        host, port = self._httpd.server_address[:2]
        return f"http://{host}:{port}"

    @property
    def port(self) -> int:
        return self._httpd.server_address[1]

    def start(self) -> "RestServer":
        self._thread = threading.Thread(target=self._httpd.serve_forever,
                                        name="rest-server", daemon=True)
        self._thread.start()
        return self

    def shutdown(self) -> None:
        self._httpd.shutdown()
        self._httpd.server_close()
        if self._thread:
            self._thread.join(timeout=5.0)


def parse_listen(listen: str) -> tuple[str, int]:
    host, _, port = listen.rpartition(":")
    return host or "localhost", int(port)
