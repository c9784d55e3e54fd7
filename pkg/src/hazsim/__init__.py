"""Seed-deterministic traffic microsimulator with injected hazardous driving behaviors."""

__version__ = "0.1.0"
