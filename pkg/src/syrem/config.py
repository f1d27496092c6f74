"""YAML experiment configs: a ``stream`` section and a ``strategy`` section under a schema version.

Example::

    schema_version: 1
    stream:
      batch_size: 8
      seed: 0
      suite: {n_train: 2000, n_test: 400, n_surrounding: 2, background_fraction: 0.05}
    strategy:
      strategy: syrem
      buffer_capacity: 100
      seeds: {data: 0, init: 0, buffer: 0, selection: 0}

``stream.tasks`` may replace ``stream.suite`` with an explicit task list.
"""

from __future__ import annotations

import dataclasses
from pathlib import Path

import yaml

from .harness import CONFIG_VERSION, ConfigError, StrategyConfig
from .stream import StreamConfig, TaskSpec, default_tasks

SUITE_KEYS = {"n_train", "n_test", "n_surrounding", "background_fraction"}
DEFAULT_BUFFER = 100


def default_experiment() -> tuple[StreamConfig, StrategyConfig]:
    """Five-task synthetic suite, buffer of 100 (5% of the 10,000 training cases)."""
    return StreamConfig(default_tasks()), StrategyConfig(buffer_capacity=DEFAULT_BUFFER)


def _fields(cls):
    return {f.name for f in dataclasses.fields(cls)}


def _check_keys(section: str, given: dict, allowed: set):
    extra = set(given) - allowed
    if extra:
        raise ConfigError(f"unknown key(s) in {section}: {sorted(extra)}")


def parse_config(doc) -> tuple[StreamConfig, StrategyConfig]:
    if not isinstance(doc, dict):
        raise ConfigError("config must be a mapping")
    version = doc.get("schema_version")
    if version != CONFIG_VERSION:
        raise ConfigError(f"config schema_version {version!r} not supported (expected {CONFIG_VERSION})")
    _check_keys("config", doc, {"schema_version", "stream", "strategy"})
    stream_doc = dict(doc.get("stream") or {})
    strat_doc = dict(doc.get("strategy") or {})
    try:
        suite = stream_doc.pop("suite", None)
        tasks = stream_doc.pop("tasks", None)
        if suite is not None and tasks is not None:
            raise ConfigError("stream: give either 'suite' or 'tasks', not both")
        _check_keys("stream", stream_doc, _fields(StreamConfig) - {"tasks"})
        if tasks is None:
            suite = dict(suite or {})
            _check_keys("stream.suite", suite, SUITE_KEYS)
            tasks = default_tasks(seed=stream_doc.get("seed", 0), **suite)
        else:
            for t in tasks:
                _check_keys("stream.tasks[]", t, _fields(TaskSpec))
        stream = StreamConfig(tasks=tasks, **stream_doc)
        _check_keys("strategy", strat_doc, _fields(StrategyConfig))
        strat_doc.setdefault("buffer_capacity", DEFAULT_BUFFER)
        strategy = StrategyConfig(**strat_doc)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    return stream, strategy


def load_config(path) -> tuple[StreamConfig, StrategyConfig]:
    """Parse a YAML config file. Syntax and content problems raise :class:`ConfigError`."""
    text = Path(path).read_text()
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return parse_config(doc)


def config_document(stream: StreamConfig, strategy: StrategyConfig) -> dict:
    s = stream.to_dict()
    return {"schema_version": CONFIG_VERSION, "stream": s, "strategy": strategy.to_dict()}


def dump_config(path, stream: StreamConfig, strategy: StrategyConfig) -> None:
    Path(path).write_text(yaml.safe_dump(config_document(stream, strategy), sort_keys=False))
