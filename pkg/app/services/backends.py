"""
Generative model backends for the agent and the judge.

A backend turns a request (prompt text, optional image, iteration context)
into raw reply text. Three implementations share one interface:

- ``LiveBackend``: OpenAI-compatible chat-completions endpoint over httpx,
  retried with exponential backoff on transient failures
- ``ReplayBackend``: answers from a recorded transcript, keyed by iteration
- mock backends (``app.services.mock_agent`` / ``app.services.judge``):
  deterministic, seeded stand-ins for offline runs
"""

import base64
import json
import logging
import os
from abc import ABC, abstractmethod
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Literal, Optional

import httpx

from app.core.exceptions import (
    AuthMissingError,
    BackendTimeoutError,
    BackendUnavailableError,
    ConfigError,
    MalformedResponseError,
    MirrorBotException,
    NetworkError,
    ReplayExhaustedError,
    classify_http_status,
)
from app.core.retry import RetryConfig, RetryManager
from app.models.agent import BackendConfig, MemoryState, PredictionRecord, TranscriptEntry
from app.models.packets import FusedPacket


logger = logging.getLogger(__name__)


def _retry_after(response: httpx.Response) -> Optional[float]:
    """Seconds from a numeric Retry-After header, if any."""
    value = response.headers.get("Retry-After")
    try:
        return float(value) if value is not None else None
    except ValueError:
        return None


@dataclass
class BackendRequest:
    """Everything a backend may need to answer one call."""

    role: Literal["agent", "judge"]
    prompt: str
    iteration: int
    packet: Optional[FusedPacket] = None
    memory: Optional[MemoryState] = None
    memory_ablated: bool = False
    prediction: Optional[PredictionRecord] = None
    dimension: Optional[str] = None

    @property
    def image_png(self) -> Optional[bytes]:
        """PNG of the packet's camera frame; rendered only when asked for."""
        if self.packet is None or not self.packet.has_image or self.packet.frame is None:
            return None
        return self.packet.frame.to_png()


class GenerativeBackend(ABC):
    """Common interface of all backends."""

    name: str = "backend"

    @abstractmethod
    async def generate(self, request: BackendRequest) -> str:
        """Return the raw reply text for a request."""

    async def aclose(self) -> None:
        return None

    def retry_snapshot(self) -> Dict[str, Dict[str, int]]:
        return {}


class LiveBackend(GenerativeBackend):
    """
    Chat-completions client for a hosted generative model.

    The prompt goes as a text part; the camera frame, when present, as an
    inline base64 PNG image part. The API key is read from the environment
    variable named in the config at call time.
    """

    def __init__(self, config: BackendConfig, client: Optional[httpx.AsyncClient] = None):
        self.config = config
        self.name = f"live:{config.model}"
        self._client = client
        self._owns_client = client is None
        self.retry_manager = RetryManager(RetryConfig.from_settings(config.retries))

    @property
    def client(self) -> httpx.AsyncClient:
        if self._client is None:
            self._client = httpx.AsyncClient(timeout=self.config.timeout)
        return self._client

    def _api_key(self) -> str:
        key = os.getenv(self.config.api_key_env)
        if not key:
            raise AuthMissingError(self.config.api_key_env)
        return key

    def build_payload(self, request: BackendRequest) -> Dict:
        content = [{"type": "text", "text": request.prompt}]
        image = request.image_png
        if image is not None:
            encoded = base64.b64encode(image).decode("ascii")
            content.append({"type": "image_url", "image_url": {"url": f"data:image/png;base64,{encoded}"}})
        return {
            "model": self.config.model,
            "messages": [{"role": "user", "content": content}],
            "temperature": self.config.temperature,
        }

    async def generate(self, request: BackendRequest) -> str:
        key = self._api_key()
        payload = self.build_payload(request)
        try:
            return await self.retry_manager.retry_async(self._post, payload, key, operation=self.name)
        except MirrorBotException as e:
            if e.retryable:
                raise BackendUnavailableError(self.name, reason=e.message)
            raise

    async def _post(self, payload: Dict, key: str) -> str:
        url = f"{self.config.endpoint}/chat/completions"
        try:
            response = await self.client.post(
                url, json=payload, headers={"Authorization": f"Bearer {key}"}
            )
        except httpx.TimeoutException:
            raise BackendTimeoutError(timeout_seconds=self.config.timeout)
        except httpx.TransportError as e:
            raise NetworkError(reason=str(e))

        if response.status_code >= 400:
            raise classify_http_status(
                response.status_code, response.text, self.config.api_key_env,
                retry_after=_retry_after(response),
            )

        try:
            content = response.json()["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError):
            raise MalformedResponseError("unexpected response envelope", raw=response.text)
        if isinstance(content, list):
            content = "".join(part.get("text", "") for part in content if isinstance(part, dict))
        if not isinstance(content, str):
            raise MalformedResponseError("reply content is not text", raw=str(content))
        return content

    def retry_snapshot(self) -> Dict[str, Dict[str, int]]:
        return self.retry_manager.snapshot()

    async def aclose(self) -> None:
        if self._owns_client and self._client is not None:
            await self._client.aclose()
            self._client = None


class ReplayBackend(GenerativeBackend):
    """Answers from a recorded agent transcript (one TranscriptEntry per JSONL line)."""

    def __init__(self, transcript_path: str):
        self.name = f"replay:{Path(transcript_path).name}"
        self.path = Path(transcript_path)
        if not self.path.exists():
            raise ConfigError(f"Transcript not found: {self.path}", details={"path": str(self.path)})
        self._entries: Dict[int, TranscriptEntry] = {}
        with open(self.path, "r", encoding="utf-8") as handle:
            for line in handle:
                if line.strip():
                    entry = TranscriptEntry.model_validate(json.loads(line))
                    self._entries[entry.iteration] = entry
        self.prompt_mismatches = 0
        logger.info(f"Loaded {len(self._entries)} transcript entries from {self.path}")

    async def generate(self, request: BackendRequest) -> str:
        entry = self._entries.get(request.iteration)
        if entry is None or entry.response is None:
            raise ReplayExhaustedError(request.iteration)
        if entry.prompt != request.prompt:
            self.prompt_mismatches += 1
            logger.warning(
                f"Replayed prompt differs from recorded prompt at iteration {request.iteration}",
                extra={"iteration": request.iteration},
            )
        return entry.response


def create_backend(config: BackendConfig, role: Literal["agent", "judge"] = "agent") -> GenerativeBackend:
    """Build the backend described by a config."""
    if config.kind == "live":
        return LiveBackend(config)
    if config.kind == "replay":
        if role != "agent":
            raise ConfigError("Replay is only available for the agent backend")
        return ReplayBackend(config.transcript_path)
    if role == "agent":
        from app.services.mock_agent import MockAgentBackend
        return MockAgentBackend(config)
    from app.services.judge import MockJudgeBackend
    return MockJudgeBackend(config)
