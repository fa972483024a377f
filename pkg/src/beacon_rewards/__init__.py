"""Beacon chain validator reward pipeline and decentralization analytics."""

from .chain_time import ChainSpec, DEFAULT_SPEC

__version__ = "0.1.0"

__all__ = ["ChainSpec", "DEFAULT_SPEC", "__version__"]
