"""
Tests for the generative backends: live client over a mocked transport,
transcript replay and backend selection.
"""
import json

import httpx
import pytest

from app.core.exceptions import (
    AuthMissingError,
    BackendUnavailableError,
    ConfigError,
    MalformedResponseError,
    ReplayExhaustedError,
)
from app.core.retry import RetryConfig
from app.models.agent import BackendConfig, TranscriptEntry
from app.services.agentloop import run_session
from app.services.backends import BackendRequest, LiveBackend, ReplayBackend, create_backend
from app.services.fusion import PacketStream
from app.services.judge import MockJudgeBackend
from app.services.mock_agent import MockAgentBackend
from app.services.simworld import Simulator


def _reply(content):
    return httpx.Response(200, json={"choices": [{"message": {"role": "assistant", "content": content}}]})


class TestLiveBackend:
    """Chat-completions client."""

    @pytest.fixture
    def live_config(self):
        return BackendConfig(kind="live", endpoint="http://model.test/v1/", model="vision-1", retries=2)

    @pytest.fixture
    def api_key(self, monkeypatch):
        monkeypatch.setenv("MODEL_API_KEY", "secret-key")

    def _backend(self, config, handler):
        client = httpx.AsyncClient(transport=httpx.MockTransport(handler))
        backend = LiveBackend(config, client=client)
        backend.retry_manager.config = RetryConfig(max_attempts=config.retries + 1, base_delay=0.0, jitter=False)
        return backend

    @pytest.mark.asyncio
    async def test_text_request(self, live_config, api_key, sample_packet):
        seen = []

        def handler(request):
            seen.append(request)
            return _reply("hello")

        backend = self._backend(live_config, handler)
        request = BackendRequest(role="agent", prompt="Who are you?", iteration=1, packet=sample_packet)
        assert await backend.generate(request) == "hello"

        assert str(seen[0].url) == "http://model.test/v1/chat/completions"
        assert seen[0].headers["Authorization"] == "Bearer secret-key"
        payload = json.loads(seen[0].content)
        assert payload["model"] == "vision-1"
        assert payload["messages"][0]["content"] == [{"type": "text", "text": "Who are you?"}]

    @pytest.mark.asyncio
    async def test_image_part(self, live_config, api_key, warehouse_world):
        packet = PacketStream(Simulator(warehouse_world, seed=1)).take(1)[0]
        backend = self._backend(live_config, lambda request: _reply("ok"))
        payload = backend.build_payload(BackendRequest(role="agent", prompt="p", iteration=1, packet=packet))
        parts = payload["messages"][0]["content"]
        assert parts[1]["type"] == "image_url"
        assert parts[1]["image_url"]["url"].startswith("data:image/png;base64,")

    @pytest.mark.asyncio
    async def test_content_parts_are_joined(self, live_config, api_key):
        backend = self._backend(live_config, lambda request: _reply([{"type": "text", "text": "a"},
                                                                     {"type": "text", "text": "b"}]))
        assert await backend.generate(BackendRequest(role="agent", prompt="p", iteration=1)) == "ab"

    @pytest.mark.asyncio
    async def test_missing_key(self, live_config, monkeypatch):
        monkeypatch.delenv("MODEL_API_KEY", raising=False)
        calls = []
        backend = self._backend(live_config, lambda request: calls.append(1) or _reply("x"))
        with pytest.raises(AuthMissingError):
            await backend.generate(BackendRequest(role="agent", prompt="p", iteration=1))
        assert calls == []

    @pytest.mark.asyncio
    async def test_rejected_key(self, live_config, api_key):
        calls = []

        def handler(request):
            calls.append(1)
            return httpx.Response(401, text="unauthorized")

        backend = self._backend(live_config, handler)
        with pytest.raises(AuthMissingError):
            await backend.generate(BackendRequest(role="agent", prompt="p", iteration=1))
        assert len(calls) == 1

    @pytest.mark.asyncio
    async def test_server_errors_exhaust_retries(self, live_config, api_key):
        calls = []

        def handler(request):
            calls.append(1)
            return httpx.Response(503, text="overloaded")

        backend = self._backend(live_config, handler)
        with pytest.raises(BackendUnavailableError):
            await backend.generate(BackendRequest(role="agent", prompt="p", iteration=1))
        assert len(calls) == 3
        assert backend.retry_snapshot()["live:vision-1"] == {"calls": 1, "retries": 2, "failures": 1}

    @pytest.mark.asyncio
    async def test_transient_failure_recovers(self, live_config, api_key):
        calls = []

        def handler(request):
            calls.append(1)
            if len(calls) == 1:
                raise httpx.ConnectError("connection refused", request=request)
            return _reply("back")

        backend = self._backend(live_config, handler)
        assert await backend.generate(BackendRequest(role="agent", prompt="p", iteration=1)) == "back"
        assert len(calls) == 2
        assert backend.retry_snapshot() == {"live:vision-1": {"calls": 1, "retries": 1, "failures": 0}}

    @pytest.mark.asyncio
    async def test_unexpected_envelope(self, live_config, api_key):
        backend = self._backend(live_config, lambda request: httpx.Response(200, json={"result": "?"}))
        with pytest.raises(MalformedResponseError):
            await backend.generate(BackendRequest(role="agent", prompt="p", iteration=1))

    def test_no_image_without_frame(self, sample_packet):
        request = BackendRequest(role="agent", prompt="p", iteration=1, packet=sample_packet)
        assert request.image_png is None


class TestReplayBackend:
    """Recorded transcripts."""

    def _write(self, path, entries):
        path.write_text("".join(e.model_dump_json() + "\n" for e in entries))

    @pytest.mark.asyncio
    async def test_replays_by_iteration(self, temp_directory):
        path = temp_directory / "transcript.jsonl"
        self._write(path, [
            TranscriptEntry(iteration=1, prompt="first", response="one"),
            TranscriptEntry(iteration=2, prompt="second", response="two"),
        ])
        backend = ReplayBackend(str(path))
        assert await backend.generate(BackendRequest(role="agent", prompt="second", iteration=2)) == "two"
        assert await backend.generate(BackendRequest(role="agent", prompt="changed", iteration=1)) == "one"
        assert backend.prompt_mismatches == 1

    @pytest.mark.asyncio
    async def test_exhausted(self, temp_directory):
        path = temp_directory / "transcript.jsonl"
        self._write(path, [TranscriptEntry(iteration=1, prompt="first", response="one")])
        with pytest.raises(ReplayExhaustedError):
            await ReplayBackend(str(path)).generate(BackendRequest(role="agent", prompt="x", iteration=2))

    def test_missing_transcript(self, temp_directory):
        with pytest.raises(ConfigError):
            ReplayBackend(str(temp_directory / "absent.jsonl"))

    @pytest.mark.asyncio
    async def test_replay_reproduces_session(self, temp_directory, warehouse_world):
        recorded = await run_session(6, (), MockAgentBackend(BackendConfig(seed=6)), seed=6, world=warehouse_world)
        path = temp_directory / "transcript.jsonl"
        self._write(path, recorded.transcript)

        backend = ReplayBackend(str(path))
        replayed = await run_session(6, (), backend, seed=6, world=warehouse_world)
        assert backend.prompt_mismatches == 0
        assert [r.prediction for r in replayed.records] == [r.prediction for r in recorded.records]


class TestCreateBackend:
    """Backend selection from config."""

    def test_mock_roles(self):
        assert isinstance(create_backend(BackendConfig(), role="agent"), MockAgentBackend)
        assert isinstance(create_backend(BackendConfig(), role="judge"), MockJudgeBackend)

    def test_live(self):
        backend = create_backend(BackendConfig(kind="live", endpoint="https://api.example.org/v1"))
        assert isinstance(backend, LiveBackend)

    def test_replay_only_for_agent(self, temp_directory):
        path = temp_directory / "t.jsonl"
        path.write_text("")
        config = BackendConfig(kind="replay", transcript_path=str(path))
        with pytest.raises(ConfigError):
            create_backend(config, role="judge")
