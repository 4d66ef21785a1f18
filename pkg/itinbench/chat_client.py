"""Chat-completion clients: an OpenAI-compatible HTTP client and a scripted replay."""

import json
import logging
from pathlib import Path
from typing import Optional, Protocol

import httpx

from .errors import ItinBenchError
from .settings import ClientConfig

logger = logging.getLogger(__name__)
audit_logger = logging.getLogger("itinbench.audit")


class ChatClientError(ItinBenchError):
    """Base exception for chat endpoint errors."""

    pass


class ChatTransportError(ChatClientError):
    """Network, timeout or HTTP status failure talking to the endpoint."""

    pass


class ChatClient(Protocol):
    def complete(self, system: str, user: str) -> str:
        ...


class HttpChatClient:
    """Synchronous client for a /chat/completions endpoint."""

    def __init__(self, client_config: ClientConfig, transport: Optional[httpx.BaseTransport] = None):
        self.config = client_config
        self._transport = transport

    def _post(self, payload: dict) -> dict:
        headers = {"Content-Type": "application/json"}
        if self.config.api_key:
            headers["Authorization"] = f"Bearer {self.config.api_key}"
        url = self.config.base_url.rstrip("/") + "/chat/completions"
        try:
            with httpx.Client(timeout=self.config.timeout, transport=self._transport) as client:
                response = client.post(url, json=payload, headers=headers)
                response.raise_for_status()
                return response.json()
        except httpx.TimeoutException:
            raise ChatTransportError("Request timed out")
        except httpx.NetworkError as e:
            raise ChatTransportError(f"Network error: {e}")
        except httpx.HTTPStatusError as e:
            raise ChatTransportError(f"HTTP error: {e.response.status_code}")
        except json.JSONDecodeError as e:
            raise ChatClientError(f"Endpoint returned invalid JSON: {e}")

    def complete(self, system: str, user: str) -> str:
        payload = {
            "model": self.config.model,
            "temperature": self.config.temperature,
            "messages": [
                {"role": "system", "content": system},
                {"role": "user", "content": user},
            ],
        }
        audit_logger.info(f"request {json.dumps(payload)}")

        attempts = self.config.max_retries + 1
        for attempt in range(1, attempts + 1):
            try:
                data = self._post(payload)
                break
            except ChatTransportError as e:
                if attempt == attempts:
                    raise
                logger.warning(f"Chat request failed ({e}), retrying ({attempt}/{attempts - 1})")

        audit_logger.info(f"response {json.dumps(data)}")
        try:
            return data["choices"][0]["message"]["content"] or ""
        except (KeyError, IndexError, TypeError):
            raise ChatClientError(f"Unexpected response shape: {str(data)[:200]}")


class MockChatClient:
    """Replays fixed model turns in order; every call consumes one turn."""

    def __init__(self, turns: list[str]):
        self.turns = list(turns)
        self.index = 0
        self.requests: list[tuple[str, str]] = []

    def complete(self, system: str, user: str) -> str:
        self.requests.append((system, user))
        if self.index >= len(self.turns):
            raise ChatClientError(f"Scripted transcript exhausted after {len(self.turns)} turns")
        turn = self.turns[self.index]
        self.index += 1
        return turn

    @classmethod
    def from_transcript(cls, path: Path) -> "MockChatClient":
        """Load a list of turns, or an object whose "turns" field holds them."""
        try:
            with open(path, "r") as f:
                data = json.load(f)
        except FileNotFoundError:
            raise ChatClientError(f"Transcript not found: {path}")
        except json.JSONDecodeError as e:
            raise ChatClientError(f"Invalid JSON in transcript {path}: {e}")
        turns = data.get("turns") if isinstance(data, dict) else data
        if not isinstance(turns, list) or not all(isinstance(t, str) for t in turns):
            raise ChatClientError(f"Transcript {path} holds no list of turns")
        return cls(turns)


def make_client(client_config: ClientConfig) -> ChatClient:
    if client_config.mock_transcript is not None:
        logger.info(f"Using scripted client from {client_config.mock_transcript}")
        return MockChatClient.from_transcript(client_config.mock_transcript)
    return HttpChatClient(client_config)
