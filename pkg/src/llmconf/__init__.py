"""Configuration optimizer for LLM serving: latency modeling, search, launch plans."""

__version__ = "0.1.0"
