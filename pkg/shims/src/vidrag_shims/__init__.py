"""HTTP shims exposing extraction models behind the vidrag wire protocol."""

__version__ = "0.1.0"
