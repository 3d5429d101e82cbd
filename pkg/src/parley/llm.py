"""Chat-completion client used for persona rendering and answer extraction."""

from __future__ import annotations

import os
import time
from dataclasses import dataclass
from typing import Any, Callable, Mapping, Protocol

import httpx

from ._http import ServiceError, raise_for_client_error, send_with_retries


class LLMClient(Protocol):
    def complete(self, system: str, user: str, schema: Mapping[str, Any] | None = None) -> str:
        ...


@dataclass
class LLMConfig:
    base_url: str = "https://api.openai.com/v1"
    model: str = "gpt-4o"
    temperature: float = 1.0
    api_key_env: str = "OPENAI_API_KEY"
    timeout_s: float = 120.0

    @classmethod
    def from_json(cls, doc: Mapping[str, Any] | None) -> "LLMConfig":
        doc = doc or {}
        known = {k: doc[k] for k in cls.__dataclass_fields__ if k in doc}
        return cls(**known)


class ChatClient:
    """OpenAI-compatible ``/chat/completions`` client.

    When a schema is given it is passed as a strict JSON-schema response
    format so the service constrains the reply to the document shape.
    """

    def __init__(
        self,
        config: LLMConfig,
        api_key: str | None = None,
        transport: httpx.BaseTransport | None = None,
        sleep: Callable[[float], None] = time.sleep,
    ):
        key = api_key or os.environ.get(config.api_key_env)
        if not key:
            raise ValueError(f"language model credential missing (set ${config.api_key_env})")
        self.config = config
        self._sleep = sleep
        self._client = httpx.Client(
            transport=transport,
            timeout=config.timeout_s,
            headers={"Authorization": f"Bearer {key}"},
        )

    def complete(self, system: str, user: str, schema: Mapping[str, Any] | None = None) -> str:
        body: dict[str, Any] = {
            "model": self.config.model,
            "temperature": self.config.temperature,
            "messages": [
                {"role": "system", "content": system},
                {"role": "user", "content": user},
            ],
        }
        if schema is not None:
            body["response_format"] = {
                "type": "json_schema",
                "json_schema": {"name": "survey_answers", "schema": dict(schema)},
            }
        url = self.config.base_url.rstrip("/") + "/chat/completions"
        resp = send_with_retries(lambda: self._client.post(url, json=body), sleep=self._sleep)
        raise_for_client_error(resp)
        try:
            return resp.json()["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError, ValueError) as exc:
            raise ServiceError(f"malformed completion response: {exc}") from None

    def close(self) -> None:
        self._client.close()
