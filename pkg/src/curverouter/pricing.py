"""Bundled per-token price list for a reference pool of open models.

Prices are dollars per 1M tokens as published on public routing
marketplaces; override per pool by supplying your own ``pool.json``.
"""

from __future__ import annotations

from importlib import resources

from .core import ModelSpec
from .dataset_io import load_pool


def bundled_pool() -> tuple[ModelSpec, ...]:
    """The packaged reference pool with marketplace pricing."""
    path = resources.files("curverouter").joinpath("data/pricing.json")
    with resources.as_file(path) as p:
        return load_pool(p)
