"""Tiny JSON-over-HTTP server helper shared by the service components.

Wraps ``ThreadingHTTPServer`` with regex routing and uniform error bodies so
each service only declares handler functions. Errors raised as
:class:`~barrierops.errors.BarrierOpsError` are translated to
``{"error": <code>, "detail": <detail>}`` with the mapped status code.
"""

from __future__ import annotations

import json
import logging
import re
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Any, Callable
from urllib.parse import unquote, urlparse

from .errors import BarrierOpsError, http_status_for

log = logging.getLogger(__name__)

Handler = Callable[..., Any]


class JsonHttpServer:
    """HTTP server with (method, path-regex) routing and JSON bodies."""

    def __init__(self, host: str = "127.0.0.1", port: int = 0, name: str = "http"):
        self._routes: list[tuple[str, re.Pattern[str], Handler]] = []
        self.name = name
        outer = self

        class _RequestHandler(BaseHTTPRequestHandler):
            protocol_version = "HTTP/1.1"

            def log_message(self, fmt, *args):  # route access logs to logging
                log.debug("%s %s", outer.name, fmt % args)

            def _dispatch(self, method: str):
                path = unquote(urlparse(self.path).path)
                body = None
                length = int(self.headers.get("Content-Length") or 0)
                if length:
                    raw = self.rfile.read(length)
                    try:
                        body = json.loads(raw)
                    except json.JSONDecodeError:
                        self._reply(400, {"error": "ValidationError", "detail": "body is not JSON"})
                        return
                for m, pattern, fn in outer._routes:
                    if m != method:
                        continue
                    match = pattern.fullmatch(path)
                    if not match:
                        continue
                    try:
                        result = fn(*match.groups(), body=body)
                    except BarrierOpsError as exc:
                        self._reply(http_status_for(exc.code), {"error": exc.code, "detail": exc.detail})
                    except Exception:  # pragma: no cover - defensive
                        log.exception("unhandled error in %s %s", method, path)
                        self._reply(500, {"error": "InternalError", "detail": "unhandled server error"})
                    else:
                        status, payload = result if isinstance(result, tuple) else (200, result)
                        self._reply(status, payload)
                    return
                self._reply(404, {"error": "NotFound", "detail": f"no route for {method} {path}"})

            def _reply(self, status: int, payload: Any):
                data = json.dumps(payload).encode()
                self.send_response(status)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(data)))
                self.end_headers()
                self.wfile.write(data)

            def do_GET(self):
                self._dispatch("GET")

            def do_POST(self):
                self._dispatch("POST")

            def do_PATCH(self):
                self._dispatch("PATCH")

            def do_DELETE(self):
                self._dispatch("DELETE")

        self._httpd = ThreadingHTTPServer((host, port), _RequestHandler)
        self._httpd.daemon_threads = True
        self._thread: threading.Thread | None = None

    def add_route(self, method: str, pattern: str, fn: Handler) -> None:
        self._routes.append((method.upper(), re.compile(pattern), fn))

    @property
    def port(self) -> int:
        return self._httpd.server_address[1]

    @property
    def url(self) -> str:
        host, port = self._httpd.server_address[:2]
        return f"http://{host}:{port}"

    def start(self) -> None:
        self._thread = threading.Thread(target=self._httpd.serve_forever, name=f"{self.name}-http", daemon=True)
        self._thread.start()

    def stop(self) -> None:
        self._httpd.shutdown()
        self._httpd.server_close()
        if self._thread:
            self._thread.join(timeout=5)
