"""Batch front end: ``lvr-lab run`` and ``lvr-lab decompose``."""

from .config import ScenarioConfig, load_config, parse_config
from .ingest import ingest_price_csv
from .main import main
from .runner import build_pool, parse_pool_string, run

__all__ = ["ScenarioConfig", "load_config", "parse_config", "ingest_price_csv", "main",
           "build_pool", "parse_pool_string", "run"]
