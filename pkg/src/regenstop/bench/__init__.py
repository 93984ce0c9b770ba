"""Synthetic multi-city benchmark and the ``regenstop`` command line."""

from .config import BenchmarkConfig, ConfigError, default_config, load_config

__all__ = ["BenchmarkConfig", "ConfigError", "default_config", "load_config"]
