"""Floquet-Bloch band structures of high-contrast periodic elliptic operators."""
from __future__ import annotations

__version__ = "0.1.0"
