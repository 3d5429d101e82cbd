import json

import httpx
import pytest

from parley._http import AuthError, ServiceError
from parley.llm import ChatClient, LLMConfig


def test_request_shape_and_reply():
    seen = []

    def handler(request):
        seen.append(request)
        return httpx.Response(200, json={"choices": [{"message": {"content": "{\"answers\": []}"}}]})

    client = ChatClient(LLMConfig(base_url="https://llm.example/v1/"), api_key="k",
                        transport=httpx.MockTransport(handler))
    assert client.complete("sys", "usr", {"type": "object"}) == '{"answers": []}'
    body = json.loads(seen[0].content)
    assert seen[0].url == "https://llm.example/v1/chat/completions"
    assert seen[0].headers["Authorization"] == "Bearer k"
    assert body["model"] == "gpt-4o" and body["temperature"] == 1.0
    assert [m["role"] for m in body["messages"]] == ["system", "user"]
    assert body["response_format"]["json_schema"]["schema"] == {"type": "object"}


def test_plain_completion_has_no_response_format():
    seen = []
    transport = httpx.MockTransport(
        lambda r: seen.append(json.loads(r.content)) or httpx.Response(200, json={"choices": [{"message": {"content": "hi"}}]}))
    ChatClient(LLMConfig(), api_key="k", transport=transport).complete("s", "u")
    assert "response_format" not in seen[0]


def test_errors():
    bad = httpx.MockTransport(lambda r: httpx.Response(200, json={"unexpected": True}))
    with pytest.raises(ServiceError, match="malformed"):
        ChatClient(LLMConfig(), api_key="k", transport=bad).complete("s", "u")
    denied = httpx.MockTransport(lambda r: httpx.Response(401, text="no"))
    with pytest.raises(AuthError):
        ChatClient(LLMConfig(), api_key="k", transport=denied).complete("s", "u")
    with pytest.raises(ValueError, match="PARLEY_TEST_NO_KEY"):
        ChatClient(LLMConfig(api_key_env="PARLEY_TEST_NO_KEY"))


def test_config_from_json_ignores_nothing_unknown():
    cfg = LLMConfig.from_json({"model": "m", "temperature": 0.2})
    assert (cfg.model, cfg.temperature, cfg.base_url) == ("m", 0.2, LLMConfig().base_url)
