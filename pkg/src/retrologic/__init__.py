"""Template-based single-step retrosynthesis with a conditional graph logic network."""

__version__ = "0.1.0"
