"""
Optional chat-completion provider.

When configured, response synthesis, query judging and context generation
can ask an external model through a plain HTTP chat-completion endpoint.
Every caller treats ``ProviderError`` as a signal to fall back to the
deterministic rule-based path.

The auth token is read from an environment variable named in the config;
it never appears in config files, manifests or logs.
"""

from __future__ import annotations

import logging
import os
import time
from dataclasses import asdict, dataclass

import requests

from src.errors import ConfigurationError, ProviderError

logger = logging.getLogger(__name__)

DEFAULT_TOKEN_ENV = "CSIT_LLM_TOKEN"


@dataclass
class LlmProviderConfig:
    """Where and how to reach the provider. An empty endpoint disables it."""

    endpoint: str = ""
    model: str = "gpt-3.5-turbo"
    token_env: str = DEFAULT_TOKEN_ENV
    timeout: float = 30.0
    max_retries: int = 2
    temperature: float = 0.0

    @property
    def enabled(self) -> bool:
        return bool(self.endpoint)

    def validate(self) -> list[str]:
        problems = []
        if self.endpoint and not self.endpoint.startswith(("http://", "https://")):
            problems.append(f"endpoint must be an http(s) URL, got {self.endpoint!r}")
        if self.timeout <= 0:
            problems.append("timeout must be positive")
        if self.max_retries < 0:
            problems.append("max_retries must be non-negative")
        return problems

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "LlmProviderConfig":
        from src.utils.config_file import section_from_dict

        config, problems = section_from_dict(cls, data, "llm")
        if problems:
            raise ConfigurationError(problems)
        return config


class ChatProvider:
    """
    Minimal client for an OpenAI-style ``/chat/completions`` endpoint.

    Args:
        config: Endpoint settings.
        session: Optional ``requests.Session`` (tests pass a fake).
    """

    def __init__(self, config: LlmProviderConfig, session: requests.Session | None = None):
        if not config.enabled:
            raise ConfigurationError("LLM provider endpoint is not configured")
        self.config = config
        self.session = session or requests.Session()

    def _headers(self) -> dict[str, str]:
        headers = {"Content-Type": "application/json"}
        token = os.environ.get(self.config.token_env)
        if token:
            headers["Authorization"] = f"Bearer {token}"
        return headers

    def complete(self, prompt: str) -> str:
        """
        Send a single user message and return the reply text.

        Raises:
            ProviderError: After ``max_retries + 1`` failed attempts, or on a
                reply without message content.
        """
        body = {
            "model": self.config.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": self.config.temperature,
        }
        last_error: Exception | None = None
        for attempt in range(self.config.max_retries + 1):
            try:
                resp = self.session.post(
                    self.config.endpoint,
                    json=body,
                    headers=self._headers(),
                    timeout=self.config.timeout,
                )
                resp.raise_for_status()
                data = resp.json()
                return str(data["choices"][0]["message"]["content"]).strip()
            except (requests.RequestException, ValueError) as exc:
                last_error = exc
                logger.warning("Provider attempt %d/%d failed: %s", attempt + 1, self.config.max_retries + 1, exc)
            except (KeyError, IndexError, TypeError) as exc:
                raise ProviderError(f"provider reply has no message content: {exc}") from exc
            if attempt < self.config.max_retries:
                time.sleep(min(2.0 ** attempt, 8.0))
        raise ProviderError(f"provider unreachable at {self.config.endpoint}: {last_error}")
