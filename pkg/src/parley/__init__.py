"""Offline-testable engine for phone surveys run by a conversational AI agent."""

__version__ = "0.1.0"
