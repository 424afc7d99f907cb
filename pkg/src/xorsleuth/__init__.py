"""Symbolic secrecy analysis for protocols that combine encryption with XOR."""

__version__ = "0.1.0"
