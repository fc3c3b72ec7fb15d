"""Small HTTP client for the CLI, bench mode, and tests.

Plain http.client so the source address is controllable: the cookie-hijack
scenario needs to present a captured cookie from a second loopback IP
(127.0.0.2), which the stdlib exposes directly via ``source_address``.
"""

from __future__ import annotations

import json
import socket
from dataclasses import dataclass, field
from http.client import HTTPConnection
from urllib.parse import urlencode, urlparse


@dataclass
class ApiResult:
    status: int
    body: dict
    headers: list[tuple[str, str]] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return 200 <= self.status < 300

    def set_cookies(self) -> list[str]:
        return [v for k, v in self.headers if k.lower() == "set-cookie"]


class ApiClient:
    def __init__(self, base_url: str, source_ip: str | None = None, timeout: float = 10.0):
        parsed = urlparse(base_url)
        if parsed.scheme != "http":
            raise ValueError("only plain http is supported on loopback; front TLS separately")
        self.host = parsed.hostname or "127.0.0.1"
        self.port = parsed.port or 80
        self.source_ip = source_ip
        self.timeout = timeout
        self.cookies: dict[str, str] = {}

    def call(
        self,
        method: str,
        path: str,
        body: dict | None = None,
        query: dict | None = None,
    ) -> ApiResult:
        conn = HTTPConnection(
            self.host,
            self.port,
            timeout=self.timeout,
            source_address=(self.source_ip, 0) if self.source_ip else None,
        )
        try:
            target = path + (f"?{urlencode(query)}" if query else "")
            headers = {"Content-Type": "application/json"}
            if self.cookies:
                headers["Cookie"] = "; ".join(f"{k}={v}" for k, v in self.cookies.items())
            payload = json.dumps(body).encode() if body is not None else None
            conn.request(method, target, body=payload, headers=headers)
            response = conn.getresponse()
            raw = response.read()
            try:
                parsed_body = json.loads(raw) if raw else {}
            except json.JSONDecodeError:
                parsed_body = {"raw": raw.decode("utf-8", "replace")}
            result = ApiResult(response.status, parsed_body, list(response.getheaders()))
            self._absorb_cookies(result)
            return result
        except (ConnectionError, socket.timeout, OSError) as exc:
            raise ServerUnreachable(f"{self.host}:{self.port}: {exc}") from exc
        finally:
            conn.close()

    def _absorb_cookies(self, result: ApiResult) -> None:
        for raw in result.set_cookies():
            name, rest = raw.split("=", 1)
            value = rest.split(";", 1)[0]
            if "Max-Age=0" in raw:
                self.cookies.pop(name.strip(), None)
            else:
                self.cookies[name.strip()] = value


class ServerUnreachable(Exception):
    pass
