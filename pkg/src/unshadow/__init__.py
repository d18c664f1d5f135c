"""Unpaired shadow removal with mask-guided shadow synthesis."""

__version__ = "0.1.0"
