"""Retry policy shared by the agent gateway and the data-capture client."""

from __future__ import annotations

import logging
import time
from typing import Callable, TypeVar

import httpx

log = logging.getLogger(__name__)
T = TypeVar("T")

BACKOFF_S = (1.0, 2.0, 4.0)


class ServiceError(RuntimeError):
    """A remote service rejected a request or could not be reached."""


class AuthError(ServiceError):
    pass


class NotFound(ServiceError):
    pass


class TransportFailure(ServiceError):
    pass


def send_with_retries(
    send: Callable[[], httpx.Response],
    sleep: Callable[[float], None] = time.sleep,
    backoff: tuple[float, ...] = BACKOFF_S,
) -> httpx.Response:
    """Call ``send`` with one retry per backoff step.

    Only transport errors and 5xx responses are retried; 4xx responses are
    returned to the caller untouched.
    """
    last: Exception | None = None
    for attempt in range(len(backoff) + 1):
        if attempt:
            sleep(backoff[attempt - 1])
        try:
            resp = send()
        except httpx.TransportError as exc:
            last = exc
            log.warning("transport error (attempt %d): %s", attempt + 1, exc)
            continue
        if resp.status_code >= 500:
            last = ServiceError(f"HTTP {resp.status_code}: {resp.text}")
            log.warning("server error (attempt %d): %s", attempt + 1, resp.status_code)
            continue
        return resp
    raise TransportFailure(f"giving up after {len(backoff) + 1} attempts: {last}")


def raise_for_client_error(resp: httpx.Response) -> None:
    if resp.status_code in (401, 403):
        raise AuthError(f"HTTP {resp.status_code}: {resp.text}")
    if resp.status_code == 404:
        raise NotFound(resp.text or "not found")
    if resp.status_code >= 400:
        raise ServiceError(f"HTTP {resp.status_code}: {resp.text}")
