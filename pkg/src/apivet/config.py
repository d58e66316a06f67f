"""Pipeline configuration with JSON round-trip and strict validation."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields

from .errors import ConfigError
from .proposer import DEFAULT_SYNONYMS, ProviderConfig


@dataclass
class PipelineConfig:
    flatten_depth: int = 3
    min_value_overlap: float = 0.9
    min_sequence_score: float = 0.05
    min_env_coverage: float = 0.99
    delta_ms: int = 60000
    window_size: int = 20
    max_refine_rounds: int = 3
    violation_samples: int = 5
    sequence_model: str = "markov"  # markov | hmm
    markov_alpha: float = 1.0
    hmm_states: int | None = None
    hmm_seed: int = 0
    jobs: int = 1
    mode: str = "lenient"  # lenient | strict
    proposer: str = "stub"  # stub | remote
    synonyms: list = field(default_factory=lambda: [list(p) for p in DEFAULT_SYNONYMS])
    provider: ProviderConfig | None = None

    def __post_init__(self):
        if self.flatten_depth < 1:
            raise ConfigError("flatten_depth must be >= 1")
        for name in ("min_value_overlap", "min_sequence_score", "min_env_coverage"):
            value = getattr(self, name)
            if not isinstance(value, (int, float)) or not 0.0 <= value <= 1.0:
                raise ConfigError(f"{name} must be in [0, 1], got {value!r}")
        if self.delta_ms <= 0:
            raise ConfigError("delta_ms must be positive")
        if self.window_size < 1:
            raise ConfigError("window_size must be >= 1")
        if self.max_refine_rounds < 0:
            raise ConfigError("max_refine_rounds must be >= 0")
        if self.violation_samples < 1:
            raise ConfigError("violation_samples must be >= 1")
        if self.sequence_model not in ("markov", "hmm"):
            raise ConfigError(f"unknown sequence_model {self.sequence_model!r}")
        if self.markov_alpha < 0:
            raise ConfigError("markov_alpha must be >= 0")
        if self.jobs < 1:
            raise ConfigError("jobs must be >= 1")
        if self.mode not in ("lenient", "strict"):
            raise ConfigError(f"unknown mode {self.mode!r}")
        if self.proposer not in ("stub", "remote"):
            raise ConfigError(f"unknown proposer {self.proposer!r}")
        if self.proposer == "remote" and self.provider is None:
            raise ConfigError("remote proposer requires a provider section")
        for pair in self.synonyms:
            if (
                not isinstance(pair, (list, tuple))
                or len(pair) != 2
                or not all(isinstance(x, str) and x for x in pair)
            ):
                raise ConfigError(f"synonym entries are string pairs, got {pair!r}")

    def synonym_pairs(self) -> tuple[tuple[str, str], ...]:
        return tuple((a, b) for a, b in self.synonyms)


_CONFIG_FIELDS = {f.name for f in fields(PipelineConfig)}
_PROVIDER_FIELDS = {f.name for f in fields(ProviderConfig)}


def config_from_dict(data: dict) -> PipelineConfig:
    if not isinstance(data, dict):
        raise ConfigError("configuration must be a JSON document")
    unknown = set(data) - _CONFIG_FIELDS
    if unknown:
        raise ConfigError(f"unknown configuration keys: {sorted(unknown)}")
    kwargs = dict(data)
    provider = kwargs.pop("provider", None)
    if provider is not None:
        if not isinstance(provider, dict):
            raise ConfigError("provider must be a document")
        bad = set(provider) - _PROVIDER_FIELDS
        if bad:
            raise ConfigError(f"unknown provider keys: {sorted(bad)}")
        missing = {"endpoint_url", "model_name"} - set(provider)
        if missing:
            raise ConfigError(f"provider requires keys: {sorted(missing)}")
        provider = ProviderConfig(**provider)
    try:
        return PipelineConfig(provider=provider, **kwargs)
    except TypeError as exc:
        raise ConfigError(f"bad configuration: {exc}")


def config_to_dict(config: PipelineConfig) -> dict:
    data = asdict(config)
    if config.provider is None:
        data.pop("provider")
    return data


def load_config(path: str) -> PipelineConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read configuration: {exc}")
    except json.JSONDecodeError as exc:
        raise ConfigError(f"configuration is not valid JSON: {exc.msg}")
    return config_from_dict(data)


def save_config(config: PipelineConfig, path: str) -> None:
    from .fileio import write_json

    write_json(config_to_dict(config), path)
