"""
Tests for configuration loading, the exception hierarchy, retry logic and
the command-line error boundary.
"""
import io
import json

import pytest
from pydantic import BaseModel

from app.core.config import interpolate_env, load_experiment_config, settings
from app.core.exceptions import (
    EXIT_CONFIG,
    EXIT_SOFTWARE,
    EXIT_UNAVAILABLE,
    EXIT_USAGE,
    AuthMissingError,
    BackendHTTPError,
    BackendUnavailableError,
    ConfigError,
    ErrorCode,
    MirrorBotException,
    MissingScoresError,
    NetworkError,
    ValidationError,
    classify_http_status,
)
from app.core.retry import RetryConfig, RetryManager
from app.middleware.error_handler import ErrorBoundary, error_code_of


class TestConfigLoading:
    """Experiment config files and environment interpolation."""

    def test_interpolates_variables_and_defaults(self):
        text = '{"model": "${MODEL}", "endpoint": "${URL:-http://localhost:8000}"}'
        result = interpolate_env(text, {"MODEL": "vision-1"})
        assert json.loads(result) == {"model": "vision-1", "endpoint": "http://localhost:8000"}

    def test_missing_variable_raises_config_error(self):
        with pytest.raises(ConfigError) as exc_info:
            interpolate_env('{"model": "${NOT_SET_ANYWHERE}"}', {})
        assert exc_info.value.details["variable"] == "NOT_SET_ANYWHERE"
        assert exc_info.value.exit_code == EXIT_CONFIG

    def test_load_from_file(self, temp_directory):
        path = temp_directory / "experiment.json"
        path.write_text(json.dumps({
            "seed": "${SEED}",
            "n_iterations": 30,
            "ablation": ["Camera"],
            "agent_backend": {"kind": "mock", "fault_rate": 0.05},
        }))
        config = load_experiment_config(path, {"SEED": "11"})
        assert config.seed == 11
        assert config.n_iterations == 30
        assert config.ablation == ["camera"]
        assert config.condition == "no-camera"
        assert config.resolved_run_id() == "no-camera-s11"

    def test_load_from_mapping_uses_defaults(self):
        config = load_experiment_config({})
        assert config.n_iterations == 657
        assert config.packet_rate_hz == 1
        assert config.condition == "full"
        assert config.agent_backend.kind == "mock"

    def test_defaults_follow_settings(self, monkeypatch):
        overrides = {
            "api_key_env": "VISION_KEY", "backend_timeout": 12.5, "backend_retries": 1,
            "default_iterations": 40, "default_seed": 3, "image_encoding": "base64",
            "packet_rate_hz": 2, "fusion_window": 0.1, "judge_concurrency": 2,
        }
        for name, value in overrides.items():
            monkeypatch.setattr(settings, name, value)

        config = load_experiment_config({})
        assert (config.n_iterations, config.seed) == (40, 3)
        assert config.image_encoding == "base64"
        assert (config.packet_rate_hz, config.fusion_window, config.judge_concurrency) == (2, 0.1, 2)
        backend = config.agent_backend
        assert (backend.api_key_env, backend.timeout, backend.retries) == ("VISION_KEY", 12.5, 1)
        assert config.resolved_run_id() == "full-s3"

    def test_explicit_values_beat_settings(self, monkeypatch):
        monkeypatch.setattr(settings, "default_seed", 3)
        assert load_experiment_config({"seed": 9}).seed == 9

    def test_missing_file(self, temp_directory):
        with pytest.raises(ConfigError):
            load_experiment_config(temp_directory / "absent.json")

    def test_invalid_json(self, temp_directory):
        path = temp_directory / "broken.json"
        path.write_text("{not json")
        with pytest.raises(ConfigError):
            load_experiment_config(path)

    def test_unknown_modality_rejected(self):
        with pytest.raises(ConfigError) as exc_info:
            load_experiment_config({"ablation": ["sonar"]})
        assert any("sonar" in msg for msg in exc_info.value.details["errors"])

    def test_live_backend_needs_endpoint(self):
        with pytest.raises(ConfigError):
            load_experiment_config({"agent_backend": {"kind": "live"}})


class TestExceptions:
    """Structured error payloads."""

    def test_to_dict_shape(self):
        error = ValidationError("bad value", field="seed")
        payload = error.to_dict()
        assert payload["success"] is False
        assert payload["error"] == "validation_error"
        assert payload["message"] == "bad value"
        assert payload["details"] == {"field": "seed"}
        assert payload["retryable"] is False
        assert error.exit_code == EXIT_USAGE

    def test_default_suggestion(self):
        error = MissingScoresError("runs/full-s7")
        assert "judge" in error.suggestion

    @pytest.mark.parametrize("status, expected, retryable", [
        (401, AuthMissingError, False),
        (403, AuthMissingError, False),
        (429, BackendHTTPError, True),
        (503, BackendHTTPError, True),
        (400, BackendHTTPError, False),
    ])
    def test_classify_http_status(self, status, expected, retryable):
        error = classify_http_status(status, "body", "MODEL_API_KEY")
        assert isinstance(error, expected)
        assert error.retryable is retryable

    def test_unavailable_exit_code(self):
        assert BackendUnavailableError("live:x").exit_code == EXIT_UNAVAILABLE


class TestRetryManager:
    """Exponential backoff on transient failures."""

    @pytest.fixture
    def fast_config(self):
        return RetryConfig(max_attempts=3, base_delay=0.0, jitter=False)

    def test_config_rejects_zero_attempts(self):
        with pytest.raises(ValueError):
            RetryConfig(max_attempts=0)

    def test_delay_grows_and_caps(self):
        config = RetryConfig(base_delay=1.0, max_delay=5.0, jitter=False)
        assert config.calculate_delay(0) == 1.0
        assert config.calculate_delay(2) == 4.0
        assert config.calculate_delay(5) == 5.0

    def test_retry_after_hint(self):
        config = RetryConfig(base_delay=1.0, max_delay=5.0, jitter=False)
        assert config.calculate_delay(0, retry_after=3.0) == 3.0
        assert config.calculate_delay(0, retry_after=60.0) == 5.0
        assert config.calculate_delay(2, retry_after=0.5) == 4.0

    def test_from_settings(self):
        assert RetryConfig.from_settings(retries=4).max_attempts == 5

    def test_http_status_keeps_retry_after(self):
        error = classify_http_status(429, "slow down", retry_after=2.0)
        assert error.retryable
        assert error.details["retry_after"] == 2.0

    @pytest.mark.asyncio
    async def test_retries_until_success(self, fast_config):
        calls = []

        async def flaky():
            calls.append(1)
            if len(calls) < 3:
                raise NetworkError("connection reset")
            return "ok"

        result = await RetryManager(fast_config).retry_async(flaky)
        assert result == "ok"
        assert len(calls) == 3

    @pytest.mark.asyncio
    async def test_non_retryable_fails_immediately(self, fast_config):
        calls = []

        async def rejected():
            calls.append(1)
            raise BackendHTTPError(400)

        with pytest.raises(BackendHTTPError):
            await RetryManager(fast_config).retry_async(rejected)
        assert len(calls) == 1

    @pytest.mark.asyncio
    async def test_gives_up_after_max_attempts(self, fast_config):
        calls = []

        async def down():
            calls.append(1)
            raise BackendHTTPError(503)

        manager = RetryManager(fast_config)
        with pytest.raises(BackendHTTPError):
            await manager.retry_async(down, operation="live:test")
        assert len(calls) == 3
        assert manager.snapshot() == {"live:test": {"calls": 1, "retries": 2, "failures": 1}}


class TestErrorBoundary:
    """One JSON object on the error stream and the mapped exit code."""

    def test_success_returns_zero(self):
        stream = io.StringIO()
        assert ErrorBoundary("run", stream).run(lambda: None) == 0
        assert stream.getvalue() == ""

    def test_domain_error(self):
        stream = io.StringIO()

        def fail():
            raise AuthMissingError("MODEL_API_KEY")

        status = ErrorBoundary("run", stream).run(fail)
        payload = json.loads(stream.getvalue())
        assert status == EXIT_CONFIG
        assert payload["error"] == "auth_missing"
        assert payload["command"] == "run"
        assert "elapsed_ms" in payload
        assert error_code_of(stream.getvalue()) == ErrorCode.AUTH_MISSING

    def test_pydantic_error_becomes_validation_error(self):
        class Probe(BaseModel):
            seed: int

        stream = io.StringIO()
        status = ErrorBoundary("simulate", stream).run(lambda: Probe(seed="many"))
        payload = json.loads(stream.getvalue())
        assert status == EXIT_USAGE
        assert payload["error"] == "validation_error"
        assert payload["details"]["field"] == "seed"

    def test_unexpected_error_is_internal(self):
        stream = io.StringIO()

        def crash():
            raise RuntimeError("boom")

        status = ErrorBoundary("sem", stream).run(crash)
        payload = json.loads(stream.getvalue())
        assert status == EXIT_SOFTWARE
        assert payload["error"] == "internal_error"
        assert "RuntimeError" in payload["details"]["reason"]

    def test_all_domain_errors_share_base(self):
        assert issubclass(ConfigError, MirrorBotException)
        assert issubclass(MissingScoresError, MirrorBotException)
