"""Data cooperative node: member-controlled stores, safe aggregate
analytics, progressive-binding consent, signed assertions."""

__version__ = "0.1.0"
