"""Bounded LRU session cache mapping tokens to encoded attributes.

The only server-side state: capacity 256 entries, 10 minute TTL. Tokens
are content hashes, so re-encoding the same image under the same model
yields the same token and the cache stays idempotent.
"""

from __future__ import annotations

import threading
import time
from collections import OrderedDict
from typing import Generic, Optional, TypeVar

T = TypeVar("T")

DEFAULT_CAPACITY = 256
DEFAULT_TTL_SECONDS = 600.0


class SessionCache(Generic[T]):
    def __init__(
        self,
        capacity: int = DEFAULT_CAPACITY,
        ttl_seconds: float = DEFAULT_TTL_SECONDS,
        clock=time.monotonic,
    ):
        self._capacity = capacity
        self._ttl = ttl_seconds
        self._clock = clock
        self._lock = threading.Lock()
        self._entries: OrderedDict[str, tuple[float, T]] = OrderedDict()

    def put(self, token: str, value: T) -> None:
        with self._lock:
            now = self._clock()
            self._entries.pop(token, None)
            self._entries[token] = (now + self._ttl, value)
            while len(self._entries) > self._capacity:
                self._entries.popitem(last=False)

    def get(self, token: str) -> Optional[T]:
        with self._lock:
            entry = self._entries.get(token)
            if entry is None:
                return None
            expires, value = entry
            if self._clock() > expires:
                del self._entries[token]
                return None
            self._entries.move_to_end(token)
            return value

    def clear(self) -> None:
        with self._lock:
            self._entries.clear()

    def __len__(self) -> int:
        with self._lock:
            return len(self._entries)
