"""Token-bucket rate limiting per (client IP, endpoint class).

Auth ceremonies get the tightest budget, payments a looser one, everything
else the default. Buckets are independent per IP, so one flooding address is
rejected while other clients keep working.
"""

from __future__ import annotations

import threading

from .clockwork import SYSTEM_CLOCK, Clock

PER_MINUTE = {"auth": 10, "payment": 60, "default": 120}


def endpoint_class(path: str) -> str:
    if path.startswith("/auth") or path.startswith("/register"):
        return "auth"
    if path.startswith("/pay") or path.startswith("/dispute"):
        return "payment"
    return "default"


class RateLimiter:
    def __init__(self, clock: Clock = SYSTEM_CLOCK, scale: float = 1.0, enabled: bool = True):
        self.clock = clock
        self.enabled = enabled
        self._limits = {k: v * scale for k, v in PER_MINUTE.items()}
        self._buckets: dict[tuple[str, str], tuple[float, int]] = {}  # (tokens, last_ms)
        self._lock = threading.Lock()

    def allow(self, client_ip: str, path: str) -> bool:
        if not self.enabled:
            return True
        cls = endpoint_class(path)
        limit = self._limits[cls]
        now = self.clock.now_ms()
        with self._lock:
            tokens, last = self._buckets.get((client_ip, cls), (limit, now))
            tokens = min(limit, tokens + (now - last) * limit / 60_000.0)
            if tokens >= 1.0:
                self._buckets[(client_ip, cls)] = (tokens - 1.0, now)
                return True
            self._buckets[(client_ip, cls)] = (tokens, now)
            return False
