"""HTTP front end: a threaded stdlib server wrapping Service.handle.

The client IP comes from the socket peer address by default, which is what
the session-cookie binding trusts; an off-by-default trusted-proxy mode reads
X-Forwarded-For instead for deployments behind a TLS terminator. TLS itself
is deployment configuration (front this with a TLS proxy in production);
protocol code never branches on scheme.

Also serves the static browser bundle under /app.
"""

from __future__ import annotations

import mimetypes
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from urllib.parse import parse_qs, urlparse

from .service import MAX_BODY_BYTES, ApiRequest, Service

WEBAPP_DIR = Path(__file__).parent / "webapp"
SWEEP_INTERVAL_S = 30.0


class _Handler(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"
    server_version = "pp2pp"

    def log_message(self, fmt, *args):  # quiet; the audit log is the record
        pass

    @property
    def service(self) -> Service:
        return self.server.service  # type: ignore[attr-defined]

    def _client_ip(self) -> str:
        if self.service.config.trusted_proxy:
            forwarded = self.headers.get("X-Forwarded-For")
            if forwarded:
                return forwarded.split(",")[0].strip()
        return self.client_address[0]

    def _respond(self, status: int, body: bytes, content_type: str, cookies=()):
        self.send_response(status)
        self.send_header("Content-Type", content_type)
        self.send_header("Content-Length", str(len(body)))
        for cookie in cookies:
            self.send_header("Set-Cookie", cookie)
        self.end_headers()
        self.wfile.write(body)

    def _dispatch(self, method: str):
        parsed = urlparse(self.path)
        if method == "GET" and (parsed.path == "/app" or parsed.path.startswith("/app/")):
            return self._serve_static(parsed.path)

        length = int(self.headers.get("Content-Length") or 0)
        if length > MAX_BODY_BYTES:
            # drain enough to keep the connection sane, then reject
            self.rfile.read(min(length, MAX_BODY_BYTES + 1))
            return self._respond(
                400,
                b'{"error": "body too large", "code": "payload_too_large"}',
                "application/json",
            )
        body = self.rfile.read(length) if length else b""
        query = {k: v[0] for k, v in parse_qs(parsed.query).items()}
        request = ApiRequest(
            method=method,
            path=parsed.path,
            client_ip=self._client_ip(),
            headers={k.lower(): v for k, v in self.headers.items()},
            query=query,
            body=body,
        )
        response = self.service.handle(request)
        self._respond(response.status, response.to_json(), "application/json", response.cookies)

    def _serve_static(self, path: str):
        rel = path.removeprefix("/app").lstrip("/") or "index.html"
        target = (WEBAPP_DIR / rel).resolve()
        if not target.is_file() or WEBAPP_DIR.resolve() not in target.parents:
            return self._respond(404, b"not found", "text/plain")
        content_type = mimetypes.guess_type(target.name)[0] or "application/octet-stream"
        self._respond(200, target.read_bytes(), content_type)

    def do_GET(self):
        self._dispatch("GET")

    def do_POST(self):
        self._dispatch("POST")


class ApiServer:
    """Owns the listening socket, worker threads, and the TTL sweeper."""

    def __init__(self, service: Service, host: str = "127.0.0.1", port: int = 0):
        self.service = service
        self._httpd = ThreadingHTTPServer((host, port), _Handler)
        self._httpd.daemon_threads = True
        self._httpd.service = service  # type: ignore[attr-defined]
        self._thread: threading.Thread | None = None
        self._stop_sweeper: threading.Event | None = None

    @property
    def address(self) -> tuple[str, int]:
        return self._httpd.server_address[:2]

    @property
    def url(self) -> str:
        host, port = self.address
        return f"http://{host}:{port}"

    def start(self) -> None:
        self._thread = threading.Thread(target=self._httpd.serve_forever, daemon=True)
        self._thread.start()
        self._stop_sweeper = threading.Event()
        threading.Thread(target=self._sweep_loop, daemon=True).start()

    def _sweep_loop(self) -> None:
        while not self._stop_sweeper.wait(SWEEP_INTERVAL_S):
            try:
                self.service.data.records.sweep()
            except Exception:
                pass

    def serve_forever(self) -> None:
        self._stop_sweeper = threading.Event()
        threading.Thread(target=self._sweep_loop, daemon=True).start()
        self._httpd.serve_forever()

    def shutdown(self) -> None:
        if self._stop_sweeper is not None:
            self._stop_sweeper.set()
        self._httpd.shutdown()
        self._httpd.server_close()
        self.service.close()
