"""Pipeline configuration: one TOML file drives every CLI stage.

Environment variables BEACON_REWARDS_ENDPOINT and
BEACON_REWARDS_AUTH_TOKEN override the endpoint and auth token so secrets
never need to live in config files.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field, replace

try:
    import tomllib  # Python >= 3.11
except ModuleNotFoundError:  # pragma: no cover - depends on interpreter
    import tomli as tomllib

from .chain_time import ChainSpec, DEFAULT_SPEC
from .client import STREAMS
from .metrics import CLAMP_MODES

ENDPOINT_ENV = "BEACON_REWARDS_ENDPOINT"
AUTH_TOKEN_ENV = "BEACON_REWARDS_AUTH_TOKEN"


class ConfigError(ValueError):
    """Invalid or unparseable pipeline configuration."""


@dataclass(frozen=True)
class PipelineConfig:
    spec: ChainSpec = DEFAULT_SPEC
    endpoint: str = "fixtures"
    auth_token: str | None = None
    ranges: dict = field(default_factory=dict)  # stream -> (start, end)
    raw_dir: str = "out/raw"
    tables_dir: str = "out/tables"
    indices_dir: str = "out/indices"
    fixtures_dir: str = "fixtures"
    reports_dir: str = "out/reports"
    max_parallel: int = 1
    clamp: str = "uniform"
    simulator_config: str | None = None

    def __post_init__(self) -> None:
        dirs = [self.raw_dir, self.tables_dir, self.indices_dir, self.fixtures_dir, self.reports_dir]
        if len(set(map(os.path.normpath, dirs))) != len(dirs):
            raise ConfigError(f"pipeline directories must be distinct, got {dirs}")
        if self.max_parallel < 1:
            raise ConfigError("max_parallel must be >= 1")
        if self.clamp not in CLAMP_MODES:
            raise ConfigError(f"metrics.clamp must be one of {CLAMP_MODES}, got {self.clamp!r}")
        for stream, bounds in self.ranges.items():
            if stream not in STREAMS:
                raise ConfigError(f"collection.ranges: unknown stream {stream!r}")
            if (
                not isinstance(bounds, (list, tuple))
                or len(bounds) != 2
                or not all(isinstance(b, int) for b in bounds)
                or bounds[0] < 0
                or bounds[1] < bounds[0]
            ):
                raise ConfigError(
                    f"collection.ranges.{stream}: expected [start, end] with "
                    f"0 <= start <= end, got {bounds!r}"
                )


def parse_range(text: str, field_name: str) -> tuple[int, int]:
    """Parse an inclusive 'A..B' unit range."""
    parts = text.split("..")
    try:
        if len(parts) != 2:
            raise ValueError
        start, end = int(parts[0]), int(parts[1])
    except ValueError:
        raise ConfigError(f"{field_name}: expected a range like 0..99, got {text!r}")
    if start < 0 or end < start:
        raise ConfigError(f"{field_name}: bad range {start}..{end} (need 0 <= start <= end)")
    return start, end


def load_pipeline_config(path: str | None) -> PipelineConfig:
    """Load the pipeline TOML; defaults apply when path is None.

    Environment overrides for endpoint/auth are applied last.
    """
    data: dict = {}
    if path is not None:
        try:
            with open(path, "rb") as f:
                data = tomllib.load(f)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}")
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}")

    chain = data.get("chain", {})
    try:
        spec = replace(DEFAULT_SPEC, **chain) if chain else DEFAULT_SPEC
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: [chain]: {exc}")

    collection = data.get("collection", {})
    paths = data.get("paths", {})
    metrics_opts = data.get("metrics", {})
    simulator = data.get("simulator", {})

    ranges = {
        stream: tuple(bounds) for stream, bounds in collection.get("ranges", {}).items()
    }
    config = PipelineConfig(
        spec=spec,
        endpoint=collection.get("endpoint", "fixtures"),
        auth_token=collection.get("auth_token") or None,
        ranges=ranges,
        raw_dir=paths.get("raw", "out/raw"),
        tables_dir=paths.get("tables", "out/tables"),
        indices_dir=paths.get("indices", "out/indices"),
        fixtures_dir=paths.get("fixtures", "fixtures"),
        reports_dir=paths.get("reports", "out/reports"),
        max_parallel=collection.get("max_parallel", 1),
        clamp=metrics_opts.get("clamp", "uniform"),
        simulator_config=simulator.get("config"),
    )

    endpoint_env = os.environ.get(ENDPOINT_ENV)
    token_env = os.environ.get(AUTH_TOKEN_ENV)
    if endpoint_env or token_env:
        config = replace(
            config,
            endpoint=endpoint_env or config.endpoint,
            auth_token=token_env or config.auth_token,
        )
    return config
