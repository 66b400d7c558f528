"""Analogy-to-animation generation pipeline with offline-replayable evaluation tooling."""

__version__ = "0.1.0"
