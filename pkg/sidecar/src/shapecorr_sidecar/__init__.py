"""HTTP sidecar serving the caption/chat/detect/segment model capabilities."""

__version__ = "0.1.0"
